#include "pnmcts/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace pnmcts {

namespace {

constexpr double kTick = 0.1;
constexpr double kStoppedFootprintM = 7.0;  // stopped vehicle + standstill gap
constexpr double kEps = 1e-9;

int approach_index(Approach a) { return static_cast<int>(a); }
Approach approach_of(int i) { return static_cast<Approach>(i); }
int turn_index(Turn t) { return static_cast<int>(t); }

// Compass N=0,E=1,S=2,W=3. A vehicle approaching from side `a` heads toward
// the opposite side; turns pivot the heading.
int exit_side(Approach a, Turn t) {
  const int heading = (approach_index(a) + 2) % 4;
  switch (t) {
    case Turn::Straight: return heading;
    case Turn::Left: return (heading + 3) % 4;
    case Turn::Right: return (heading + 1) % 4;
  }
  return heading;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t x = base + 0x9e3779b97f4a7c15ull * (salt + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::FixedTime: return "fixed_time";
    case ControllerKind::Fifo: return "fifo";
    case ControllerKind::Agent: return "pnmcts_agent";
  }
  return "?";
}

ControllerKind controller_from_string(const std::string& s) {
  if (s == "fixed_time") return ControllerKind::FixedTime;
  if (s == "fifo") return ControllerKind::Fifo;
  if (s == "pnmcts_agent") return ControllerKind::Agent;
  throw std::invalid_argument("unknown controller '" + s +
                              "' (expected fixed_time/fifo/pnmcts_agent)");
}

double FixedTimePlan::offset_for(int node_index) const {
  return std::fmod(offset_step_s * node_index, cycle_s());
}

double FixedTimePlan::cycle_s() const {
  double c = 0.0;
  for (double d : phase_durations_s) c += d;
  return c;
}

bool FixedTimePlan::green(double t, Approach approach, Turn turn) const {
  const double cycle = cycle_s();
  double tc = std::fmod(t, cycle);
  int phase = 0;
  for (double d : phase_durations_s) {
    if (tc < d) break;
    tc -= d;
    ++phase;
  }
  if (tc < lost_time_s) return false;
  const bool ns = approach == Approach::North || approach == Approach::South;
  switch (phase) {
    case 0: return ns && turn != Turn::Left;
    case 1: return ns && turn == Turn::Left;
    case 2: return !ns && turn != Turn::Left;
    case 3: return !ns && turn == Turn::Left;
    default: return false;
  }
}

std::vector<ControllerKind> sweep_controllers(int grid, int scenario) {
  if (scenario < 1 || scenario > 6) throw std::invalid_argument("sweep scenario must be in 1..6");
  std::vector<ControllerKind> out(grid * grid, ControllerKind::FixedTime);
  if (grid == 1) {
    if (scenario >= 2) out[0] = ControllerKind::Agent;
    return out;
  }
  if (grid != 3) throw std::invalid_argument("sweep_controllers supports grid 1 or 3");
  // center, then the edge cross, then the corners
  static const int order[9] = {4, 1, 7, 3, 5, 0, 2, 6, 8};
  static const int counts[6] = {0, 1, 3, 5, 7, 9};
  for (int i = 0; i < counts[scenario - 1]; ++i) out[order[i]] = ControllerKind::Agent;
  return out;
}

std::vector<ExperimentSpec> load_experiments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open experiment spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("experiment spec parse failure: " + std::string(e.what()));
  }

  auto parse_one = [](const nlohmann::json& js) {
    ExperimentSpec spec;
    spec.id = js.value("id", std::string("exp"));
    spec.grid = js.value("grid", 3);
    if (spec.grid != 1 && spec.grid != 3) {
      throw std::invalid_argument("experiment grid must be 1 or 3");
    }
    spec.demand_vph = js.value("demand_vph", 600.0);
    spec.horizon_s = js.value("horizon_s", 600.0);
    spec.warmup_s = js.value("warmup_s", 60.0);
    spec.seed = js.value("seed", 1ull);
    spec.decision_interval_s = js.value("decision_interval_s", 2.0);
    spec.link_length_m = js.value("link_length_m", 70.0);
    spec.link_speed_mps = js.value("link_speed_mps", 10.0);
    spec.crossing_speed_mps = js.value("crossing_speed_mps", 5.0);
    spec.box_length_m = js.value("box_length_m", 24.0);
    spec.plan.saturation_headway_s = js.value("saturation_headway_s", spec.plan.saturation_headway_s);
    spec.plan.offset_step_s = js.value("offset_step_s", spec.plan.offset_step_s);
    if (spec.horizon_s <= spec.warmup_s) {
      throw std::invalid_argument("experiment horizon must exceed the warmup");
    }

    const int n = spec.grid * spec.grid;
    if (js.contains("scenario")) {
      spec.controllers = sweep_controllers(spec.grid, js.at("scenario").get<int>());
    } else if (js.contains("controllers")) {
      const auto& jc = js.at("controllers");
      if (jc.is_string()) {
        spec.controllers.assign(n, controller_from_string(jc.get<std::string>()));
      } else {
        for (const auto& c : jc) {
          spec.controllers.push_back(controller_from_string(c.get<std::string>()));
        }
        if (static_cast<int>(spec.controllers.size()) != n) {
          throw std::invalid_argument("controllers list must have grid*grid entries");
        }
      }
    } else {
      spec.controllers.assign(n, ControllerKind::FixedTime);
    }
    return spec;
  };

  std::vector<ExperimentSpec> out;
  if (j.contains("experiments")) {
    for (const auto& js : j.at("experiments")) out.push_back(parse_one(js));
  } else {
    out.push_back(parse_one(j));
  }
  return out;
}

std::vector<FormedPlatoon> form_platoons(std::span<const QueuedVehicle> queue, int max_size,
                                         double max_headway_s) {
  std::vector<FormedPlatoon> out;
  for (const QueuedVehicle& v : queue) {
    const bool extend = !out.empty() &&
                        out.back().platoon.approach == v.approach &&
                        out.back().platoon.turn == v.turn &&
                        static_cast<int>(out.back().vehicle_ids.size()) < max_size &&
                        v.gap_to_prev_s <= max_headway_s + kEps &&
                        &v != &queue.front();
    if (extend) {
      out.back().vehicle_ids.push_back(v.id);
      out.back().platoon.vehicle_count += 1;
    } else {
      FormedPlatoon p;
      p.platoon = Platoon{v.id, v.approach, v.turn, v.speed_mps, v.distance_m, 1};
      p.vehicle_ids.push_back(v.id);
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct NetworkWorld::Impl {
  struct Link {
    int id = 0;
    int from_node = -1;  // -1: boundary portal
    int to_node = -1;    // -1: boundary exit
    Approach approach_at_to = Approach::North;
    double length_m = 0.0;
    double speed_mps = 1.0;
    int capacity = std::numeric_limits<int>::max();
    int occupants = 0;  // traveling + queued + reserved commitments

    struct Traveling {
      int vehicle;
      double arrive_s;
    };
    std::deque<Traveling> traveling;
    std::deque<int> backlog;  // entry links: injected, waiting for room

    double total_time_s = 0.0;
    int completed = 0;
  };

  struct Vehicle {
    int id = 0;
    std::vector<int> links;
    std::vector<Turn> turns;  // one per intersection visited
    int leg = 0;
    double link_enter_s = 0.0;
    bool reserved_next = false;  // downstream room already reserved at commit
  };

  struct Lane {
    std::deque<int> queue;
    double next_release_s = 0.0;
    int committed_pending = 0;
  };

  struct CommittedInterval {
    std::uint64_t uid;
    int area;
    double t_in, t_out;
  };

  struct Departure {
    double dep_s;
    int vehicle;
    int approach;
    int turn;
  };

  struct Crossing {
    double done_s;
    int vehicle;
  };

  struct Node {
    ControllerKind controller = ControllerKind::FixedTime;
    std::array<std::array<Lane, 3>, 4> lanes;  // [approach][turn]
    std::array<int, 4> in_link{-1, -1, -1, -1};   // by approach side
    std::array<int, 4> out_link{-1, -1, -1, -1};  // by exit side
    std::vector<CommittedInterval> committed;
    std::vector<Departure> departures;  // ascending dep_s
    double last_solve_s = -1e18;
    bool dirty = true;
    std::uint64_t solve_count = 0;
    std::uint64_t next_platoon_uid = 1;
    long fallbacks = 0;
  };

  ExperimentSpec spec;
  std::shared_ptr<const IntersectionLayout> layout;
  const NetParams* net = nullptr;
  SearchConfig search_cfg;
  RewardParams params;

  std::vector<Link> links;
  std::vector<Node> nodes;
  std::vector<int> entry_links;
  std::vector<Vehicle> vehicles;
  std::vector<VehicleRecord> records;
  std::vector<Crossing> crossings;

  std::mt19937_64 rng;
  double clock = 0.0;
  int injected_count = 0;
  int exited_count = 0;
  long violations = 0;

  double crossing_time() const {
    return (spec.box_length_m + kVehicleLengthM) / spec.crossing_speed_mps;
  }

  Impl(const ExperimentSpec& s, std::shared_ptr<const IntersectionLayout> l, const NetParams* n,
       const SearchConfig& sc, const RewardParams& p)
      : spec(s), layout(std::move(l)), net(n), search_cfg(sc), params(p), rng(s.seed) {
    const int g = spec.grid;
    if (static_cast<int>(spec.controllers.size()) != g * g) {
      throw std::invalid_argument("controller assignment must have grid*grid entries");
    }
    bool wants_agent = false;
    for (ControllerKind k : spec.controllers) wants_agent |= k == ControllerKind::Agent;
    if (wants_agent && net == nullptr) {
      throw std::invalid_argument("experiment uses pnmcts_agent intersections but no checkpoint");
    }
    build_network();
  }

  int node_id(int r, int c) const { return r * spec.grid + c; }

  void build_network() {
    const int g = spec.grid;
    nodes.resize(g * g);
    for (int i = 0; i < g * g; ++i) nodes[i].controller = spec.controllers[i];

    auto add_link = [this](int from, int to, Approach at) {
      Link link;
      link.id = static_cast<int>(links.size());
      link.from_node = from;
      link.to_node = to;
      link.approach_at_to = at;
      link.length_m = spec.link_length_m;
      link.speed_mps = spec.link_speed_mps;
      link.capacity = to >= 0 ? std::max(2, int(spec.link_length_m / kStoppedFootprintM))
                              : std::numeric_limits<int>::max();
      links.push_back(link);
      return link.id;
    };

    // sides: N=0,E=1,S=2,W=3; neighbor offsets in (row, col)
    const int dr[4] = {-1, 0, 1, 0};
    const int dc[4] = {0, 1, 0, -1};
    for (int r = 0; r < g; ++r) {
      for (int c = 0; c < g; ++c) {
        const int id = node_id(r, c);
        for (int s = 0; s < 4; ++s) {
          const int nr = r + dr[s], nc = c + dc[s];
          const bool off_grid = nr < 0 || nr >= g || nc < 0 || nc >= g;
          if (off_grid) {
            const int entry = add_link(-1, id, approach_of(s));
            nodes[id].in_link[s] = entry;
            entry_links.push_back(entry);
            nodes[id].out_link[s] = add_link(id, -1, approach_of(s));
          } else {
            // incoming from the neighbor across side s
            nodes[id].in_link[s] = add_link(node_id(nr, nc), id, approach_of(s));
          }
        }
      }
    }
    // internal out-links: the neighbor's in-link on the opposite side
    for (int r = 0; r < g; ++r) {
      for (int c = 0; c < g; ++c) {
        const int id = node_id(r, c);
        for (int s = 0; s < 4; ++s) {
          if (nodes[id].out_link[s] >= 0) continue;
          const int nr = r + dr[s], nc = c + dc[s];
          nodes[id].out_link[s] = nodes[node_id(nr, nc)].in_link[(s + 2) % 4];
        }
      }
    }
  }

  bool has_room(const Link& link, int size) const {
    return link.capacity - link.occupants >= size;
  }

  int spawn_vehicle(int entry_link, const std::vector<Turn>* fixed_turns) {
    Vehicle v;
    v.id = static_cast<int>(vehicles.size());
    int link_id = entry_link;
    std::uniform_int_distribution<int> turn_dist(0, 2);
    int hops = 0;
    for (;;) {
      v.links.push_back(link_id);
      const Link& link = links[link_id];
      if (link.to_node < 0) break;  // boundary exit
      Turn turn;
      if (fixed_turns && v.turns.size() < fixed_turns->size()) {
        turn = (*fixed_turns)[v.turns.size()];
      } else {
        turn = static_cast<Turn>(turn_dist(rng));
      }
      v.turns.push_back(turn);
      link_id = nodes[link.to_node].out_link[exit_side(link.approach_at_to, turn)];
      if (++hops > 256) throw std::logic_error("route generation runaway");
    }
    vehicles.push_back(std::move(v));
    VehicleRecord rec;
    rec.id = static_cast<int>(records.size());
    rec.entry_time_s = clock;
    rec.route_links = vehicles.back().links;
    records.push_back(std::move(rec));
    injected_count += 1;
    links[entry_link].backlog.push_back(vehicles.back().id);
    return vehicles.back().id;
  }

  void inject_demand() {
    if (spec.demand_vph <= 0.0) return;
    const double mean = spec.demand_vph / 3600.0 * kTick;
    std::poisson_distribution<int> arrivals(mean);
    for (int entry : entry_links) {
      const int n = arrivals(rng);
      for (int k = 0; k < n; ++k) spawn_vehicle(entry, nullptr);
    }
  }

  void drain_backlogs() {
    for (int entry : entry_links) {
      Link& link = links[entry];
      while (!link.backlog.empty() && has_room(link, 1)) {
        const int vid = link.backlog.front();
        link.backlog.pop_front();
        link.occupants += 1;
        vehicles[vid].link_enter_s = clock;
        link.traveling.push_back({vid, clock + link.length_m / link.speed_mps});
      }
    }
  }

  void process_arrivals() {
    for (Link& link : links) {
      while (!link.traveling.empty() && link.traveling.front().arrive_s <= clock + kEps) {
        const int vid = link.traveling.front().vehicle;
        const double arrive = link.traveling.front().arrive_s;
        link.traveling.pop_front();
        Vehicle& v = vehicles[vid];
        if (link.to_node < 0) {
          // left the network through a boundary exit link
          link.occupants = std::max(0, link.occupants - 1);
          link.total_time_s += arrive - v.link_enter_s;
          link.completed += 1;
          records[vid].exit_time_s = arrive;
          exited_count += 1;
        } else {
          const Turn turn = v.turns[std::min<std::size_t>(v.leg, v.turns.size() - 1)];
          Node& node = nodes[link.to_node];
          node.lanes[approach_index(link.approach_at_to)][turn_index(turn)].queue.push_back(vid);
          node.dirty = true;
        }
      }
    }
  }

  // Departure through the stop line: leave the current link, cross the box,
  // then enter the next link (room was reserved beforehand).
  void depart(int vid) {
    Vehicle& v = vehicles[vid];
    Link& from = links[v.links[v.leg]];
    from.occupants = std::max(0, from.occupants - 1);
    from.total_time_s += clock - v.link_enter_s;
    from.completed += 1;
    crossings.push_back({clock + crossing_time(), vid});
  }

  void process_crossings() {
    for (std::size_t i = 0; i < crossings.size();) {
      if (crossings[i].done_s <= clock + kEps) {
        const int vid = crossings[i].vehicle;
        crossings[i] = crossings.back();
        crossings.pop_back();
        Vehicle& v = vehicles[vid];
        v.leg += 1;
        v.reserved_next = false;
        Link& link = links[v.links[v.leg]];
        v.link_enter_s = clock;
        link.traveling.push_back({vid, clock + link.length_m / link.speed_mps});
      } else {
        ++i;
      }
    }
  }

  void fixed_time_control(Node& node, int node_index) {
    const double local_t = clock + spec.plan.offset_for(node_index);
    for (int a = 0; a < 4; ++a) {
      for (int t = 0; t < 3; ++t) {
        Lane& lane = node.lanes[a][t];
        if (lane.queue.empty()) continue;
        if (!spec.plan.green(local_t, approach_of(a), static_cast<Turn>(t))) continue;
        if (clock + kEps < lane.next_release_s) continue;
        const int vid = lane.queue.front();
        Vehicle& v = vehicles[vid];
        Link& next = links[v.links[v.leg + 1]];
        if (!has_room(next, 1)) continue;  // spillback holds the lane
        lane.queue.pop_front();
        next.occupants += 1;
        depart(vid);
        lane.next_release_s = clock + spec.plan.saturation_headway_s;
      }
    }
  }

  void serve_right_turns(Node& node) {
    for (int a = 0; a < 4; ++a) {
      Lane& lane = node.lanes[a][turn_index(Turn::Right)];
      while (!lane.queue.empty() && clock + kEps >= lane.next_release_s) {
        const int vid = lane.queue.front();
        Vehicle& v = vehicles[vid];
        Link& next = links[v.links[v.leg + 1]];
        if (!has_room(next, 1)) break;
        lane.queue.pop_front();
        next.occupants += 1;
        depart(vid);
        lane.next_release_s =
            clock + (kVehicleLengthM + kIntraPlatoonGapM) / spec.crossing_speed_mps;
      }
    }
  }

  // Committed future occupancy rebased to now; intervals already in the past
  // are dropped, partially elapsed ones truncate at the clock. nullopt when
  // the residual alone cannot be represented (nothing may be committed then).
  std::optional<Board> residual_board(const Node& node) const {
    Board residual(layout);
    std::map<std::uint64_t, int> row_of;
    int rows = 0;
    for (const CommittedInterval& c : node.committed) {
      if (c.t_out <= clock + kEps) continue;
      auto [it, inserted] = row_of.try_emplace(c.uid, rows);
      if (inserted) {
        if (rows >= Board::kMaxRows) return std::nullopt;
        residual.set_kind(rows, RowKind::Residual);
        ++rows;
      }
      residual.set_cell(it->second, c.area,
                        Interval{std::max(0.0, c.t_in - clock), c.t_out - clock});
    }
    return residual;
  }

  void control_cycle(Node& node, int node_index) {
    node.last_solve_s = clock;
    node.dirty = false;

    // one head platoon per idle left/straight lane
    std::vector<FormedPlatoon> formed;
    std::vector<std::pair<int, int>> lane_of;  // (approach, turn) per platoon
    for (int a = 0; a < 4; ++a) {
      for (Turn turn : {Turn::Left, Turn::Straight}) {
        Lane& lane = node.lanes[a][turn_index(turn)];
        if (lane.committed_pending > 0 || lane.queue.empty()) continue;
        std::vector<QueuedVehicle> queued;
        for (int vid : lane.queue) {
          queued.push_back({vid, approach_of(a), turn, spec.crossing_speed_mps,
                            double(queued.size()) * kStoppedFootprintM, 0.0});
          if (queued.size() == 4) break;
        }
        auto groups = form_platoons(queued, 4);
        if (groups.empty()) continue;
        FormedPlatoon head = std::move(groups.front());
        head.platoon.distance_m = 0.0;  // head vehicle waits at the stop line
        // the whole platoon must fit on its target link
        const Vehicle& lead = vehicles[head.vehicle_ids.front()];
        const Link& next = links[lead.links[lead.leg + 1]];
        if (!has_room(next, static_cast<int>(head.vehicle_ids.size()))) continue;
        lane_of.emplace_back(a, turn_index(turn));
        formed.push_back(std::move(head));
      }
    }
    if (formed.empty()) return;

    const auto maybe_residual = residual_board(node);
    if (!maybe_residual) return;  // residual saturated; retry on a later cycle
    const Board& residual = *maybe_residual;
    const int residual_rows = residual.occupied_rows();
    while (residual_rows + static_cast<int>(formed.size()) > Board::kMaxRows) {
      formed.pop_back();
      lane_of.pop_back();
    }
    if (formed.empty()) return;

    std::vector<Platoon> platoons;
    platoons.reserve(formed.size());
    for (std::size_t i = 0; i < formed.size(); ++i) {
      Platoon p = formed[i].platoon;
      p.id = static_cast<int>(i);
      platoons.push_back(p);
    }

    Board initial = overlay(residual, from_scenario(platoons, layout));

    Board schedule(layout);
    bool use_fifo = node.controller == ControllerKind::Fifo;
    if (node.controller == ControllerKind::Agent) {
      const Trajectory t = play_episode(initial, *net, search_cfg, params,
                                        mix_seed(spec.seed, node.solve_count * 97 + node_index));
      if (t.outcome.status == Status::Solved) {
        schedule = t.final_board;
      } else {
        use_fifo = true;  // safety fallback
        node.fallbacks += 1;
      }
    }
    if (use_fifo) schedule = fifo_solve(initial);
    node.solve_count += 1;

    // commit: fresh rows follow the residual block in formation order
    for (std::size_t k = 0; k < formed.size(); ++k) {
      const int row = residual_rows + static_cast<int>(k);
      const double delay = schedule.row_delay(row);
      const auto [a, t] = lane_of[k];
      Lane& lane = node.lanes[a][t];
      const std::uint64_t uid = (std::uint64_t(node_index) << 40) | node.next_platoon_uid++;

      for (int area = 0; area < schedule.area_count(); ++area) {
        if (const auto& cell = schedule.cell(row, area)) {
          node.committed.push_back({uid, area, clock + cell->entry, clock + cell->exit});
        }
      }

      const double headway =
          (kVehicleLengthM + kIntraPlatoonGapM) / spec.crossing_speed_mps;
      for (std::size_t j = 0; j < formed[k].vehicle_ids.size(); ++j) {
        const int vid = formed[k].vehicle_ids[j];
        Vehicle& v = vehicles[vid];
        Link& next = links[v.links[v.leg + 1]];
        next.occupants += 1;  // reserve now; entered after the crossing
        v.reserved_next = true;
        node.departures.push_back({clock + delay + headway * double(j), vid, a, t});
        lane.committed_pending += 1;
      }
    }
    std::sort(node.departures.begin(), node.departures.end(),
              [](const Departure& x, const Departure& y) { return x.dep_s < y.dep_s; });
  }

  void schedule_control(Node& node, int node_index) {
    serve_right_turns(node);

    bool pending = false;
    for (int a = 0; a < 4 && !pending; ++a) {
      for (Turn turn : {Turn::Left, Turn::Straight}) {
        const Lane& lane = node.lanes[a][turn_index(turn)];
        if (lane.committed_pending == 0 && !lane.queue.empty()) {
          pending = true;
          break;
        }
      }
    }
    if (!pending) return;

    const bool periodic = clock - node.last_solve_s + kEps >= spec.decision_interval_s;
    const bool on_arrival = node.dirty && clock - node.last_solve_s + kEps >= 0.5;
    if (periodic || on_arrival) control_cycle(node, node_index);
  }

  void execute_departures(Node& node) {
    std::size_t done = 0;
    for (; done < node.departures.size(); ++done) {
      const Departure& d = node.departures[done];
      if (d.dep_s > clock + kEps) break;
      Lane& lane = node.lanes[d.approach][d.turn];
      if (lane.queue.empty() || lane.queue.front() != d.vehicle) {
        throw std::logic_error("committed departure is not at the head of its lane");
      }
      lane.queue.pop_front();
      lane.committed_pending -= 1;
      depart(d.vehicle);
    }
    node.departures.erase(node.departures.begin(), node.departures.begin() + done);
  }

  void safety_check(Node& node) {
    // executed occupancy: at most one committed platoon strictly inside any
    // collision area at any tick
    std::erase_if(node.committed,
                  [this](const CommittedInterval& c) { return c.t_out < clock - 1.0; });
    for (int area = 0; area < static_cast<int>(layout->areas.size()); ++area) {
      std::uint64_t first_uid = 0;
      int occupants_here = 0;
      for (const CommittedInterval& c : node.committed) {
        if (c.area != area) continue;
        if (c.t_in + kEps < clock && clock < c.t_out - kEps) {
          if (occupants_here == 0) {
            first_uid = c.uid;
            occupants_here = 1;
          } else if (c.uid != first_uid) {
            occupants_here += 1;
          }
        }
      }
      if (occupants_here > 1) violations += 1;
    }
  }

  void step() {
    inject_demand();
    drain_backlogs();
    process_arrivals();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      Node& node = nodes[i];
      if (node.controller == ControllerKind::FixedTime) {
        fixed_time_control(node, static_cast<int>(i));
      } else {
        schedule_control(node, static_cast<int>(i));
      }
    }
    for (Node& node : nodes) execute_departures(node);
    process_crossings();
    for (Node& node : nodes) {
      if (node.controller != ControllerKind::FixedTime) safety_check(node);
    }
    clock += kTick;
  }

  int in_network() const {
    int n = 0;
    for (const Link& link : links) {
      n += static_cast<int>(link.traveling.size() + link.backlog.size());
    }
    for (const Node& node : nodes) {
      for (const auto& per_approach : node.lanes) {
        for (const auto& lane : per_approach) n += static_cast<int>(lane.queue.size());
      }
    }
    n += static_cast<int>(crossings.size());
    return n;
  }

  ExperimentResult result() const {
    ExperimentResult res;
    res.spec_id = spec.id;
    res.seed = spec.seed;
    res.safety_violations = violations;
    res.injected = injected_count;
    res.exited = exited_count;
    for (const Node& node : nodes) {
      res.solver_calls += static_cast<long>(node.solve_count);
      res.solver_fallbacks += node.fallbacks;
    }

    // throughput and travel time over vehicles leaving the network after the
    // warmup; their entries may predate it
    double total = 0.0;
    int counted = 0;
    for (const VehicleRecord& r : records) {
      if (!r.exit_time_s) continue;
      if (*r.exit_time_s <= spec.warmup_s || *r.exit_time_s > spec.horizon_s + kEps) continue;
      total += *r.exit_time_s - r.entry_time_s;
      counted += 1;
    }
    res.tt_veh = counted;
    if (counted > 0) res.att_s = total / counted;

    for (const Link& link : links) {
      if (link.completed == 0) continue;
      LinkTime lt;
      lt.from_node = link.from_node;
      lt.to_node = link.to_node;
      lt.link = (link.from_node < 0 ? "in" : std::to_string(link.from_node)) + "->" +
                (link.to_node < 0 ? "out" : std::to_string(link.to_node));
      lt.mean_travel_s = link.total_time_s / link.completed;
      lt.count = link.completed;
      res.per_link.push_back(lt);
    }
    return res;
  }
};

NetworkWorld::NetworkWorld(const ExperimentSpec& spec,
                           std::shared_ptr<const IntersectionLayout> layout, const NetParams* net,
                           const SearchConfig& search_cfg, const RewardParams& params)
    : impl_(std::make_unique<Impl>(spec, std::move(layout), net, search_cfg, params)) {}

NetworkWorld::~NetworkWorld() = default;

void NetworkWorld::step() { impl_->step(); }

void NetworkWorld::run_until(double t_s) {
  while (impl_->clock + kEps < t_s) impl_->step();
}

double NetworkWorld::clock_s() const { return impl_->clock; }
int NetworkWorld::injected() const { return impl_->injected_count; }
int NetworkWorld::exited() const { return impl_->exited_count; }
int NetworkWorld::in_network() const { return impl_->in_network(); }
long NetworkWorld::safety_violations() const { return impl_->violations; }
const std::vector<VehicleRecord>& NetworkWorld::records() const { return impl_->records; }

int NetworkWorld::inject_vehicle(Approach side, int index, const std::vector<Turn>& turns) {
  const int g = impl_->spec.grid;
  int node = -1;
  switch (side) {
    case Approach::North: node = impl_->node_id(0, index); break;
    case Approach::South: node = impl_->node_id(g - 1, index); break;
    case Approach::West: node = impl_->node_id(index, 0); break;
    case Approach::East: node = impl_->node_id(index, g - 1); break;
  }
  const int entry = impl_->nodes[node].in_link[approach_index(side)];
  if (impl_->links[entry].from_node != -1) {
    throw std::invalid_argument("inject_vehicle: not a boundary entrance");
  }
  return impl_->spawn_vehicle(entry, &turns);
}

ExperimentResult NetworkWorld::result() const { return impl_->result(); }

ExperimentResult run_experiment(const ExperimentSpec& spec,
                                std::shared_ptr<const IntersectionLayout> layout,
                                const NetParams* net, const SearchConfig& search_cfg,
                                const RewardParams& params) {
  NetworkWorld world(spec, std::move(layout), net, search_cfg, params);
  world.run_until(spec.horizon_s);
  return world.result();
}

}  // namespace pnmcts
