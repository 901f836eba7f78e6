#include "pnmcts/geometry.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace pnmcts {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

const char* to_string(Approach a) {
  switch (a) {
    case Approach::North: return "N";
    case Approach::East: return "E";
    case Approach::South: return "S";
    case Approach::West: return "W";
  }
  return "?";
}

const char* to_string(Turn t) {
  switch (t) {
    case Turn::Left: return "left";
    case Turn::Straight: return "straight";
    case Turn::Right: return "right";
  }
  return "?";
}

Approach approach_from_string(std::string_view s) {
  if (s == "N" || s == "north") return Approach::North;
  if (s == "E" || s == "east") return Approach::East;
  if (s == "S" || s == "south") return Approach::South;
  if (s == "W" || s == "west") return Approach::West;
  fail("unknown approach '" + std::string(s) + "' (expected N/E/S/W)");
}

Turn turn_from_string(std::string_view s) {
  if (s == "left") return Turn::Left;
  if (s == "straight") return Turn::Straight;
  if (s == "right") return Turn::Right;
  fail("unknown turn '" + std::string(s) + "' (expected left/straight/right)");
}

int IntersectionLayout::area_index(std::string_view area_id) const {
  for (std::size_t i = 0; i < areas.size(); ++i) {
    if (areas[i].id == area_id) return static_cast<int>(i);
  }
  return -1;
}

const Movement* IntersectionLayout::find_movement(Approach a, Turn t) const {
  for (const Movement& m : movements) {
    if (m.approach == a && m.turn == t) return &m;
  }
  return nullptr;
}

void validate_layout(const IntersectionLayout& layout) {
  std::set<std::string> seen_areas;
  for (const CollisionArea& area : layout.areas) {
    if (area.id.empty()) fail("layout '" + layout.id + "': area with empty id");
    if (!seen_areas.insert(area.id).second)
      fail("layout '" + layout.id + "': duplicate area id '" + area.id + "'");
    if (!(area.extent_m > 0.0))
      fail("area '" + area.id + "': extent_m must be > 0, got " + std::to_string(area.extent_m));
  }
  if (layout.max_areas_per_movement <= 0) fail("max_areas_per_movement must be positive");

  std::set<std::pair<Approach, Turn>> seen_moves;
  for (const Movement& m : layout.movements) {
    const std::string name = std::string(to_string(m.approach)) + "-" + to_string(m.turn);
    if (!seen_moves.insert({m.approach, m.turn}).second)
      fail("duplicate movement " + name);
    if (static_cast<int>(m.sequence.size()) > layout.max_areas_per_movement)
      fail("movement " + name + ": sequence longer than max_areas_per_movement");
    std::set<std::string> seen_refs;
    double prev_arc = -1.0;
    for (const AreaVisit& v : m.sequence) {
      if (layout.area_index(v.area) < 0)
        fail("movement " + name + ": unknown area '" + v.area + "'");
      if (!seen_refs.insert(v.area).second)
        fail("movement " + name + ": area '" + v.area + "' listed twice");
      if (v.arc_m < 0.0) fail("movement " + name + ": negative arc_m for area '" + v.area + "'");
      if (v.arc_m <= prev_arc)
        fail("movement " + name + ": arc distances not strictly increasing at area '" + v.area +
             "'");
      prev_arc = v.arc_m;
    }
  }
}

IntersectionLayout load_layout(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open layout file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail("layout parse failure in " + path.string() + ": " + e.what());
  }

  IntersectionLayout layout;
  try {
    layout.id = j.value("id", "unnamed");
    layout.max_areas_per_movement = j.value("max_areas_per_movement", 3);
    for (const auto& ja : j.at("areas")) {
      layout.areas.push_back({ja.at("id").get<std::string>(), ja.at("extent_m").get<double>()});
    }
    for (const auto& jm : j.at("movements")) {
      Movement m;
      m.approach = approach_from_string(jm.at("approach").get<std::string>());
      m.turn = turn_from_string(jm.at("turn").get<std::string>());
      for (const auto& jv : jm.at("sequence")) {
        m.sequence.push_back({jv.at("area").get<std::string>(), jv.at("arc_m").get<double>()});
      }
      layout.movements.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    fail("layout schema error in " + path.string() + ": " + e.what());
  }
  validate_layout(layout);
  return layout;
}

IntersectionLayout default_fourway3lane() {
  // Synthetic conflict map for a four-way, three-lane intersection box.
  // Through paths cross at the four inner points, each left turn crosses
  // the two through streams it cuts. Arc distances follow a 24 m box with
  // stop lines at its edge.
  IntersectionLayout layout;
  layout.id = "fourway3lane";
  layout.max_areas_per_movement = 3;
  for (const char* id : {"A", "B", "C", "D", "E", "F", "G", "H"}) {
    layout.areas.push_back({id, 3.5});
  }
  auto add = [&layout](Approach a, Turn t, std::vector<AreaVisit> seq) {
    layout.movements.push_back({a, t, std::move(seq)});
  };
  add(Approach::South, Turn::Straight, {{"C", 9.0}, {"B", 12.0}, {"A", 15.0}});
  add(Approach::East, Turn::Straight, {{"A", 9.0}, {"E", 12.0}, {"D", 15.0}});
  add(Approach::North, Turn::Straight, {{"D", 9.0}, {"H", 12.0}, {"G", 15.0}});
  add(Approach::West, Turn::Straight, {{"G", 9.0}, {"F", 12.0}, {"C", 15.0}});
  add(Approach::South, Turn::Left, {{"C", 9.0}, {"H", 17.0}});
  add(Approach::East, Turn::Left, {{"A", 9.0}, {"F", 17.0}});
  add(Approach::North, Turn::Left, {{"D", 9.0}, {"B", 17.0}});
  add(Approach::West, Turn::Left, {{"G", 9.0}, {"E", 16.0}});
  add(Approach::South, Turn::Right, {});
  add(Approach::East, Turn::Right, {});
  add(Approach::North, Turn::Right, {});
  add(Approach::West, Turn::Right, {});
  validate_layout(layout);
  return layout;
}

std::vector<AreaOccupancy> project_occupancy(const Platoon& p, const IntersectionLayout& layout) {
  const Movement* m = layout.find_movement(p.approach, p.turn);
  if (m == nullptr) {
    fail(std::string("platoon movement ") + to_string(p.approach) + "-" + to_string(p.turn) +
         " not present in layout '" + layout.id + "'");
  }
  if (!(p.speed_mps > 0.0)) fail("platoon speed must be positive");
  std::vector<AreaOccupancy> out;
  out.reserve(m->sequence.size());
  for (const AreaVisit& v : m->sequence) {
    const CollisionArea& area = layout.areas[layout.area_index(v.area)];
    const double entry = (p.distance_m + v.arc_m) / p.speed_mps;
    const double exit = (p.distance_m + v.arc_m + p.length_m() + area.extent_m) / p.speed_mps;
    out.push_back({v.area, entry, exit});
  }
  return out;
}

}  // namespace pnmcts
