#include "pnmcts/scenario.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace pnmcts {

namespace {

using nlohmann::json;

json platoon_to_json(const Platoon& p) {
  return json{{"approach", to_string(p.approach)},
              {"turn", to_string(p.turn)},
              {"speed_mps", p.speed_mps},
              {"distance_m", p.distance_m},
              {"vehicle_count", p.vehicle_count}};
}

Platoon platoon_from_json(const json& j, int id) {
  Platoon p;
  p.id = id;
  p.approach = approach_from_string(j.at("approach").get<std::string>());
  p.turn = turn_from_string(j.at("turn").get<std::string>());
  p.speed_mps = j.at("speed_mps").get<double>();
  p.distance_m = j.at("distance_m").get<double>();
  p.vehicle_count = j.at("vehicle_count").get<int>();
  if (p.vehicle_count < 1) throw std::invalid_argument("platoon vehicle_count must be >= 1");
  return p;
}

json board_to_json_obj(const Board& b) {
  json rows = json::array();
  for (int r = 0; r < Board::kMaxRows; ++r) {
    if (!b.row_occupied(r)) continue;
    json cells = json::array();
    for (int a = 0; a < b.area_count(); ++a) {
      if (const auto& c = b.cell(r, a)) {
        cells.push_back(json::array({c->entry, c->exit}));
      } else {
        cells.push_back(nullptr);
      }
    }
    json row{{"kind", b.kind(r) == RowKind::Residual ? "residual" : "new"},
             {"cells", std::move(cells)},
             {"delay_s", b.row_delay(r)}};
    if (const auto& p = b.row_platoon(r)) row["platoon"] = platoon_to_json(*p);
    rows.push_back(std::move(row));
  }
  json area_ids = json::array();
  for (const auto& a : b.layout().areas) area_ids.push_back(a.id);
  return json{{"area_ids", std::move(area_ids)},
              {"step_count", b.step_count()},
              {"rows", std::move(rows)}};
}

Board board_from_json_obj(const json& j, std::shared_ptr<const IntersectionLayout> layout) {
  Board b(std::move(layout));
  const auto& area_ids = j.at("area_ids");
  if (static_cast<int>(area_ids.size()) != b.area_count()) {
    throw std::invalid_argument("board dump has " + std::to_string(area_ids.size()) +
                                " areas, layout has " + std::to_string(b.area_count()));
  }
  for (int a = 0; a < b.area_count(); ++a) {
    if (area_ids[a].get<std::string>() != b.layout().areas[a].id) {
      throw std::invalid_argument("board dump area order does not match layout");
    }
  }
  b.set_step_count(j.value("step_count", 0));
  int r = 0;
  for (const auto& jr : j.at("rows")) {
    if (r >= Board::kMaxRows) throw std::invalid_argument("board dump has too many rows");
    const std::string kind = jr.at("kind").get<std::string>();
    b.set_kind(r, kind == "residual" ? RowKind::Residual : RowKind::New);
    b.set_row_delay(r, jr.value("delay_s", 0.0));
    const auto& cells = jr.at("cells");
    for (int a = 0; a < b.area_count() && a < static_cast<int>(cells.size()); ++a) {
      if (!cells[a].is_null()) {
        b.set_cell(r, a, Interval{cells[a][0].get<double>(), cells[a][1].get<double>()});
      }
    }
    if (jr.contains("platoon")) b.set_row_platoon(r, platoon_from_json(jr["platoon"], r));
    ++r;
  }
  return b;
}

json scenario_to_json(const Scenario& s) {
  json platoons = json::array();
  for (const Platoon& p : s.platoons) platoons.push_back(platoon_to_json(p));
  json out{{"platoons", std::move(platoons)}};
  if (s.residual) out["residual"] = board_to_json_obj(*s.residual);
  return out;
}

Scenario scenario_from_json(const json& j, std::shared_ptr<const IntersectionLayout> layout) {
  Scenario s;
  int id = 0;
  for (const auto& jp : j.at("platoons")) s.platoons.push_back(platoon_from_json(jp, id++));
  if (j.contains("residual") && !j["residual"].is_null()) {
    s.residual = board_from_json_obj(j["residual"], std::move(layout));
  }
  return s;
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("parse failure in " + path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace

Board scenario_board(const Scenario& s, std::shared_ptr<const IntersectionLayout> layout) {
  Board fresh = from_scenario(s.platoons, layout);
  if (!s.residual) return fresh;
  return overlay(*s.residual, fresh);
}

std::string board_to_json(const Board& b) { return board_to_json_obj(b).dump(2); }

Board board_from_json(const std::string& text, std::shared_ptr<const IntersectionLayout> layout) {
  return board_from_json_obj(json::parse(text), std::move(layout));
}

void write_scenarios(const std::filesystem::path& path, const std::vector<Scenario>& scenarios,
                     const IntersectionLayout& layout) {
  json arr = json::array();
  for (const Scenario& s : scenarios) arr.push_back(scenario_to_json(s));
  json out{{"layout", layout.id}, {"scenarios", std::move(arr)}};
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << out.dump(2) << '\n';
}

std::vector<Scenario> read_scenarios(const std::filesystem::path& path,
                                     std::shared_ptr<const IntersectionLayout> layout) {
  const json j = load_json(path);
  std::vector<Scenario> out;
  for (const auto& js : j.at("scenarios")) out.push_back(scenario_from_json(js, layout));
  return out;
}

Scenario read_scenario(const std::filesystem::path& path,
                       std::shared_ptr<const IntersectionLayout> layout) {
  const json j = load_json(path);
  if (j.contains("scenarios")) {
    const auto& arr = j.at("scenarios");
    if (arr.empty()) throw std::runtime_error(path.string() + ": empty scenario set");
    return scenario_from_json(arr[0], std::move(layout));
  }
  return scenario_from_json(j, std::move(layout));
}

}  // namespace pnmcts
