#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pnmcts/simulator.hpp"

using namespace pnmcts;

namespace {

std::shared_ptr<const IntersectionLayout> shared_default() {
  static auto layout = std::make_shared<const IntersectionLayout>(default_fourway3lane());
  return layout;
}

NetParams tiny_net() {
  NetConfig cfg;
  cfg.input_dim = encoded_size(default_fourway3lane());
  cfg.hidden_layers = 2;
  cfg.hidden_width = 32;
  cfg.action_dim = Board::kActionCount;
  return init_random(cfg, 11);
}

SearchConfig sim_search() {
  SearchConfig cfg;
  cfg.simulations = 24;
  cfg.rollout_depth = 1;
  cfg.dirichlet_fraction = 0.0;
  cfg.temperature_moves = 0;
  return cfg;
}

ExperimentSpec base_spec(int grid, ControllerKind controller) {
  ExperimentSpec spec;
  spec.grid = grid;
  spec.controllers.assign(grid * grid, controller);
  spec.demand_vph = 0.0;
  spec.horizon_s = 120.0;
  spec.warmup_s = 10.0;
  spec.seed = 5;
  spec.link_length_m = 100.0;
  return spec;
}

}  // namespace

TEST_CASE("empty world only advances the clock") {
  auto spec = base_spec(1, ControllerKind::FixedTime);
  NetworkWorld world(spec, shared_default(), nullptr, sim_search(), RewardParams{});
  for (int i = 0; i < 50; ++i) world.step();
  CHECK(world.clock_s() == doctest::Approx(5.0));
  CHECK(world.injected() == 0);
  CHECK(world.exited() == 0);
  CHECK(world.in_network() == 0);
}

TEST_CASE("single vehicle crosses a permissive intersection on schedule") {
  auto spec = base_spec(1, ControllerKind::Fifo);
  NetworkWorld world(spec, shared_default(), nullptr, sim_search(), RewardParams{});
  world.inject_vehicle(Approach::West, 0, {Turn::Straight});
  world.run_until(60.0);

  REQUIRE(world.records().size() == 1);
  const auto& rec = world.records()[0];
  REQUIRE(rec.exit_time_s.has_value());
  // two 100 m links at 10 m/s plus the box crossing at 5 m/s
  const double expected = 10.0 + (spec.box_length_m + kVehicleLengthM) / 5.0 + 10.0;
  CHECK(*rec.exit_time_s == doctest::Approx(expected).epsilon(0.01));
  CHECK(world.safety_violations() == 0);
  CHECK(world.in_network() == 0);
}

TEST_CASE("a vehicle arriving on red waits for its phase") {
  auto spec = base_spec(1, ControllerKind::FixedTime);
  NetworkWorld world(spec, shared_default(), nullptr, sim_search(), RewardParams{});
  world.inject_vehicle(Approach::West, 0, {Turn::Straight});
  world.run_until(80.0);

  const auto& rec = world.records()[0];
  REQUIRE(rec.exit_time_s.has_value());
  // arrives at the stop line at 10 s; E/W straight is green from 33 s
  const double expected = 33.0 + (spec.box_length_m + kVehicleLengthM) / 5.0 + 10.0;
  CHECK(*rec.exit_time_s == doctest::Approx(expected).epsilon(0.01));
}

TEST_CASE("form_platoons groups by movement, headway and size cap") {
  std::vector<QueuedVehicle> queue;

  SUBCASE("five bumper-to-bumper same-movement vehicles split 4+1") {
    for (int i = 0; i < 5; ++i) {
      queue.push_back({i, Approach::North, Turn::Straight, 5.0, i * 7.0, 0.0});
    }
    const auto platoons = form_platoons(queue);
    REQUIRE(platoons.size() == 2);
    CHECK(platoons[0].vehicle_ids.size() == 4);
    CHECK(platoons[1].vehicle_ids.size() == 1);
    CHECK(platoons[0].platoon.vehicle_count == 4);
    CHECK(platoons[0].platoon.distance_m == doctest::Approx(0.0));
    CHECK(platoons[1].platoon.distance_m == doctest::Approx(28.0));  // head of the second group
  }
  SUBCASE("alternating movements give singletons") {
    for (int i = 0; i < 4; ++i) {
      queue.push_back({i, Approach::North, i % 2 == 0 ? Turn::Straight : Turn::Left, 5.0,
                       i * 7.0, 0.0});
    }
    const auto platoons = form_platoons(queue);
    REQUIRE(platoons.size() == 4);
    for (const auto& p : platoons) CHECK(p.vehicle_ids.size() == 1);
  }
  SUBCASE("a long headway starts a new platoon") {
    queue.push_back({0, Approach::North, Turn::Straight, 5.0, 0.0, 0.0});
    queue.push_back({1, Approach::North, Turn::Straight, 4.5, 12.0, 2.5});
    const auto platoons = form_platoons(queue);
    REQUIRE(platoons.size() == 2);
    CHECK(platoons[1].platoon.speed_mps == doctest::Approx(4.5));
  }
  SUBCASE("empty queue") { CHECK(form_platoons(queue).empty()); }
}

TEST_CASE("any conflict-free commitment delays the clashing platoon enough") {
  // residual occupies area A over (0,5); a platoon needing A at (3,6) must
  // shift by at least 2.0 s in any valid schedule
  auto layout = shared_default();
  const RewardParams params;
  Board residual(layout);
  residual.set_kind(0, RowKind::Residual);
  residual.set_cell(0, 0, Interval{0.0, 5.0});
  Board fresh(layout);
  fresh.set_kind(0, RowKind::New);
  fresh.set_cell(0, 0, Interval{3.0, 6.0});
  const Board initial = overlay(residual, fresh);

  const Board fifo = fifo_solve(initial);
  CHECK(fifo.row_delay(1) >= 2.0 - 1e-9);
  CHECK(conflicts(fifo).empty());

  const NetParams net = tiny_net();
  const Trajectory t = play_episode(initial, net, sim_search(), params, 3);
  if (t.outcome.status == Status::Solved) {
    CHECK(t.final_board.row_delay(1) >= 2.0 - 1e-9);
  }
}

TEST_CASE("vehicles are conserved at every tick") {
  auto spec = base_spec(3, ControllerKind::FixedTime);
  spec.demand_vph = 700.0;
  spec.seed = 21;
  NetworkWorld world(spec, shared_default(), nullptr, sim_search(), RewardParams{});
  for (int tick = 0; tick < 1200; ++tick) {
    world.step();
    REQUIRE(world.injected() == world.in_network() + world.exited());
  }
  CHECK(world.injected() > 100);
  CHECK(world.exited() > 0);
}

TEST_CASE("identical spec and seed reproduce ATT and TT exactly") {
  auto spec = base_spec(3, ControllerKind::FixedTime);
  spec.demand_vph = 500.0;
  spec.horizon_s = 200.0;
  spec.warmup_s = 30.0;
  spec.seed = 33;
  const auto a = run_experiment(spec, shared_default(), nullptr, sim_search(), RewardParams{});
  const auto b = run_experiment(spec, shared_default(), nullptr, sim_search(), RewardParams{});
  REQUIRE(a.att_s.has_value());
  CHECK(*a.att_s == *b.att_s);
  CHECK(a.tt_veh == b.tt_veh);
  CHECK(a.injected == b.injected);
}

TEST_CASE("agent worlds are deterministic and safe with an untrained net") {
  auto spec = base_spec(1, ControllerKind::Agent);
  spec.demand_vph = 900.0;
  spec.horizon_s = 150.0;
  spec.warmup_s = 20.0;
  spec.seed = 44;
  const NetParams net = tiny_net();
  const auto a = run_experiment(spec, shared_default(), &net, sim_search(), RewardParams{});
  const auto b = run_experiment(spec, shared_default(), &net, sim_search(), RewardParams{});
  CHECK(a.safety_violations == 0);
  CHECK(a.exited > 0);
  REQUIRE(a.att_s.has_value());
  CHECK(*a.att_s == *b.att_s);
  CHECK(a.tt_veh == b.tt_veh);
}

TEST_CASE("fifo controller also executes conflict-free schedules") {
  auto spec = base_spec(1, ControllerKind::Fifo);
  spec.demand_vph = 700.0;
  spec.horizon_s = 150.0;
  spec.warmup_s = 20.0;
  spec.seed = 55;
  const auto res = run_experiment(spec, shared_default(), nullptr, sim_search(), RewardParams{});
  CHECK(res.safety_violations == 0);
  CHECK(res.exited > 0);
}

TEST_CASE("agent intersections need a checkpoint") {
  auto spec = base_spec(1, ControllerKind::Agent);
  CHECK_THROWS_AS(NetworkWorld(spec, shared_default(), nullptr, sim_search(), RewardParams{}),
                  std::invalid_argument);
}

TEST_CASE("zero demand reports absent ATT and zero TT") {
  auto spec = base_spec(3, ControllerKind::FixedTime);
  spec.horizon_s = 30.0;
  spec.warmup_s = 5.0;
  const auto res = run_experiment(spec, shared_default(), nullptr, sim_search(), RewardParams{});
  CHECK_FALSE(res.att_s.has_value());
  CHECK(res.tt_veh == 0);
  CHECK(res.injected == 0);
}

TEST_CASE("throughput saturates as demand rises past capacity") {
  auto run_with_demand = [](double vph) {
    auto spec = base_spec(1, ControllerKind::FixedTime);
    spec.demand_vph = vph;
    spec.horizon_s = 300.0;
    spec.warmup_s = 60.0;
    spec.seed = 66;
    return run_experiment(spec, shared_default(), nullptr, sim_search(), RewardParams{}).tt_veh;
  };
  const int low = run_with_demand(100.0);
  const int mid = run_with_demand(400.0);
  const int high = run_with_demand(1500.0);
  const int extreme = run_with_demand(3000.0);
  INFO("tt: ", low, " ", mid, " ", high, " ", extreme);
  CHECK(low < mid);
  CHECK(mid <= high + 2);
  // past capacity the count plateaus instead of growing with demand
  CHECK(std::abs(extreme - high) <= std::max(8, high / 5));
}

TEST_CASE("sweep controller deployments grow center-outward") {
  CHECK(sweep_controllers(3, 1) ==
        std::vector<ControllerKind>(9, ControllerKind::FixedTime));
  const auto s2 = sweep_controllers(3, 2);
  CHECK(s2[4] == ControllerKind::Agent);
  CHECK(std::count(s2.begin(), s2.end(), ControllerKind::Agent) == 1);
  const auto s4 = sweep_controllers(3, 4);
  CHECK(std::count(s4.begin(), s4.end(), ControllerKind::Agent) == 5);
  CHECK(sweep_controllers(3, 6) == std::vector<ControllerKind>(9, ControllerKind::Agent));
  CHECK_THROWS_AS(sweep_controllers(3, 7), std::invalid_argument);
}

TEST_CASE("experiment spec files parse controllers and sweeps") {
  const auto path = std::filesystem::temp_directory_path() / "pnmcts_exp.json";
  std::ofstream(path) << R"({
    "experiments": [
      {"id": "a", "grid": 1, "controllers": "fifo", "demand_vph": 300, "horizon_s": 60, "warmup_s": 10},
      {"id": "b", "grid": 3, "scenario": 2, "seed": 9},
      {"id": "c", "grid": 3, "controllers": ["fixed_time","fixed_time","fixed_time",
        "fixed_time","pnmcts_agent","fixed_time","fixed_time","fixed_time","fixed_time"]}
    ]})";
  const auto specs = load_experiments(path);
  REQUIRE(specs.size() == 3);
  CHECK(specs[0].controllers == std::vector<ControllerKind>{ControllerKind::Fifo});
  CHECK(specs[1].controllers[4] == ControllerKind::Agent);
  CHECK(specs[1].seed == 9);
  CHECK(specs[2].controllers[4] == ControllerKind::Agent);
  std::filesystem::remove(path);

  std::ofstream(path) << R"({"grid": 2})";
  CHECK_THROWS(load_experiments(path));
  std::filesystem::remove(path);
}
