#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "pnmcts/csv.hpp"
#include "pnmcts/training.hpp"

using namespace pnmcts;

namespace {

std::shared_ptr<const IntersectionLayout> shared_default() {
  static auto layout = std::make_shared<const IntersectionLayout>(default_fourway3lane());
  return layout;
}

NetParams small_net() {
  NetConfig cfg;
  cfg.input_dim = encoded_size(default_fourway3lane());
  cfg.hidden_layers = 2;
  cfg.hidden_width = 32;
  cfg.action_dim = Board::kActionCount;
  return init_random(cfg, 7);
}

SearchConfig tiny_search() {
  SearchConfig cfg;
  cfg.simulations = 24;
  cfg.rollout_depth = 2;
  return cfg;
}

Trajectory solved_trajectory(std::uint64_t fp, double reward) {
  Trajectory t;
  t.initial_fingerprint = fp;
  t.outcome = {Status::Solved, 10.0, 2, reward};
  t.steps.resize(1);
  t.steps[0].features = VecX::Zero(4);
  t.steps[0].mask = MaskX::Constant(Board::kActionCount, false);
  t.steps[0].mask[3] = true;
  t.steps[0].pi = VecX::Zero(Board::kActionCount);
  t.steps[0].pi[3] = 1.0;
  t.steps[0].action = 3;
  return t;
}

}  // namespace

TEST_CASE("generated scenarios are unique, conflicted and reproducible") {
  auto layout = shared_default();
  ScenarioConfig cfg = ScenarioConfig::desk_scale(42);
  const auto a = generate_scenarios(cfg, 40, layout);
  REQUIRE(a.size() == 40);

  std::set<std::uint64_t> fps;
  for (const Scenario& s : a) {
    CHECK(s.platoons.size() >= 2);
    CHECK(s.platoons.size() <= 4);
    const Board b = scenario_board(s, layout);
    CHECK_FALSE(conflicts(b).empty());
    CHECK(fps.insert(fingerprint(b)).second);
    for (const Platoon& p : s.platoons) {
      CHECK(p.speed_mps >= 4.0);
      CHECK(p.speed_mps <= 5.0);
      CHECK(p.distance_m >= 0.0);
      CHECK(p.distance_m <= 15.0);
      CHECK(p.vehicle_count >= 1);
      CHECK(p.vehicle_count <= 4);
      CHECK(p.turn != Turn::Right);
    }
  }

  const auto b = generate_scenarios(cfg, 40, layout);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(fingerprint(scenario_board(a[i], layout)) == fingerprint(scenario_board(b[i], layout)));
  }
}

TEST_CASE("single-platoon generation cannot produce conflicts and fails") {
  ScenarioConfig cfg;
  cfg.min_platoons = 1;
  cfg.max_platoons = 1;
  cfg.rejection_budget_per_scenario = 200;
  CHECK_THROWS_AS(generate_scenarios(cfg, 1, shared_default()), std::runtime_error);
}

TEST_CASE("fifo leaves temporally disjoint platoons untouched") {
  const RewardParams params;
  Board b(shared_default());
  b.set_kind(0, RowKind::New);
  b.set_cell(0, 0, Interval{0.0, 3.0});
  b.set_kind(1, RowKind::New);
  b.set_cell(1, 1, Interval{3.0, 6.0});  // starts as the first one finishes
  const auto outcome = fifo_schedule(b, params);
  CHECK(outcome.status == Status::Solved);
  CHECK(outcome.steps == 0);
  CHECK(outcome.t_cross_s == doctest::Approx(6.0));
}

TEST_CASE("fifo queues concurrent platoons even on disjoint paths") {
  // access is granted strictly in arrival order: the second platoon waits for
  // the first to clear the intersection entirely
  Board b(shared_default());
  b.set_kind(0, RowKind::New);
  b.set_cell(0, 0, Interval{0.0, 3.0});
  b.set_kind(1, RowKind::New);
  b.set_cell(1, 1, Interval{1.0, 4.0});
  const Board scheduled = fifo_solve(b);
  CHECK(scheduled.row_delay(1) == doctest::Approx(2.0));
  CHECK(scheduled.cell(1, 1)->entry == doctest::Approx(3.0));
}

TEST_CASE("fifo delays the later arrival by the minimal step multiple") {
  const RewardParams params;
  Board b(shared_default());
  b.set_kind(0, RowKind::New);
  b.set_cell(0, 0, Interval{0.0, 4.0});
  b.set_kind(1, RowKind::New);
  b.set_cell(1, 0, Interval{1.0, 5.0});
  const Board scheduled = fifo_solve(b);
  CHECK(scheduled.row_delay(0) == doctest::Approx(0.0));
  CHECK(scheduled.row_delay(1) == doctest::Approx(3.0));
  CHECK(scheduled.cell(1, 0)->exit == doctest::Approx(8.0));
  CHECK(conflicts(scheduled).empty());
  const auto outcome = fifo_schedule(b, params);
  CHECK(outcome.status == Status::Solved);
  CHECK(outcome.steps == 1);
  CHECK(outcome.t_cross_s == doctest::Approx(8.0));
}

TEST_CASE("fifo waits out the whole committed schedule, not just the clash") {
  const RewardParams params;
  Board b(shared_default());
  b.set_kind(0, RowKind::New);
  b.set_cell(0, 0, Interval{0.0, 2.0});
  b.set_cell(0, 1, Interval{8.0, 10.0});
  b.set_kind(1, RowKind::New);
  b.set_cell(1, 0, Interval{1.0, 3.0});
  const Board scheduled = fifo_solve(b);
  CHECK(scheduled.row_delay(1) == doctest::Approx(9.0));
  CHECK(scheduled.cell(1, 0)->entry == doctest::Approx(10.0));
  CHECK(conflicts(scheduled).empty());
  CHECK(fifo_schedule(b, params).t_cross_s == doctest::Approx(12.0));
}

TEST_CASE("fifo holds new platoons behind a residual schedule") {
  const RewardParams params;
  auto layout = shared_default();
  Board b(layout);
  b.set_kind(0, RowKind::Residual);
  b.set_cell(0, 0, Interval{0.0, 5.0});
  b.set_cell(0, 1, Interval{2.0, 7.0});
  b.set_kind(1, RowKind::New);
  b.set_cell(1, 3, Interval{1.0, 3.5});  // no shared area, still must wait
  const Board scheduled = fifo_solve(b);
  CHECK(scheduled.row_min_entry(1).value() >= 7.0 - 1e-9);
  CHECK(scheduled.row_delay(1) == doctest::Approx(6.0));
  CHECK(fifo_schedule(b, params).status == Status::Solved);
}

TEST_CASE("fifo schedules random boards conflict-free, flagging overruns") {
  const RewardParams params;
  auto layout = shared_default();
  ScenarioConfig cfg = ScenarioConfig::desk_scale(5);
  cfg.max_platoons = 8;
  cfg.min_platoons = 4;
  const auto scenarios = generate_scenarios(cfg, 60, layout);
  for (const Scenario& s : scenarios) {
    const Board b = scenario_board(s, layout);
    const Board scheduled = fifo_solve(b);
    CHECK(conflicts(scheduled).empty());
    const auto outcome = fifo_schedule(b, params);
    if (scheduled.max_exit() > params.t_max_s + 1e-9) {
      CHECK(outcome.status == Status::FailTime);
    } else {
      CHECK(outcome.status == Status::Solved);
    }
  }
}

TEST_CASE("fifo against the exhaustive optimum is never better") {
  const RewardParams params;
  const auto boards = oracles::two_platoon_oracle_boards(shared_default(), params, 20, 321);
  for (const Board& b : boards) {
    const auto best = oracles::brute_force_best(b, params, 20, 3);
    const auto fifo = fifo_schedule(b, params);
    if (best.solvable && fifo.status == Status::Solved) {
      CHECK(fifo.t_cross_s >= best.best.t_cross_s - 1e-9);
    }
  }
}

TEST_CASE("archive keeps only strictly better solved trajectories") {
  BestSoFarArchive archive;
  CHECK(archive.update(solved_trajectory(1, 0.5)));
  CHECK_FALSE(archive.update(solved_trajectory(1, 0.5)));  // not strictly better
  CHECK_FALSE(archive.update(solved_trajectory(1, 0.4)));
  CHECK(archive.update(solved_trajectory(1, 0.7)));
  CHECK(archive.find(1)->outcome.reward == doctest::Approx(0.7));

  Trajectory failed = solved_trajectory(2, 0.9);
  failed.outcome.status = Status::FailSteps;
  CHECK_FALSE(archive.update(failed));
  CHECK(archive.find(2) == nullptr);
  CHECK(archive.size() == 1);
}

TEST_CASE("clear-phase curriculum emits metrics and fills the resolved pool") {
  auto layout = shared_default();
  const auto scenarios = generate_scenarios(ScenarioConfig::desk_scale(9), 12, layout);

  TrainingState state;
  state.net = small_net();
  CurriculumConfig ccfg;
  ccfg.phase = Phase::Clear;
  ccfg.iterations = 3;
  ccfg.boards_per_round = 6;
  ccfg.workers = 2;
  ccfg.seed = 13;
  const auto metrics =
      run_curriculum(state, scenarios, layout, ccfg, tiny_search(), TrainConfig{}, RewardParams{});

  REQUIRE(metrics.size() == 3);
  CHECK(metrics[0].iteration == 0);
  CHECK(metrics[2].iteration == 2);
  for (const auto& m : metrics) {
    CHECK(m.success_rate >= 0.0);
    CHECK(m.success_rate <= 1.0);
  }
  CHECK(state.iteration == 3);
  CHECK(!state.resolved_pool.empty());
  for (const Board& b : state.resolved_pool) CHECK(conflicts(b).empty());
}

TEST_CASE("busy-phase curriculum trains on overlaid boards") {
  auto layout = shared_default();
  const auto scenarios = generate_scenarios(ScenarioConfig::desk_scale(10), 10, layout);

  TrainingState state;
  state.net = small_net();
  CurriculumConfig ccfg;
  ccfg.phase = Phase::Busy;
  ccfg.iterations = 2;
  ccfg.boards_per_round = 4;
  ccfg.seed = 14;
  ccfg.resample_probability = 1.0;
  const auto metrics =
      run_curriculum(state, scenarios, layout, ccfg, tiny_search(), TrainConfig{}, RewardParams{});
  CHECK(metrics.size() == 2);
  CHECK(!state.resolved_pool.empty());  // bootstrapped from the baseline
}

TEST_CASE("curriculum metrics are deterministic across worker counts") {
  auto layout = shared_default();
  const auto scenarios = generate_scenarios(ScenarioConfig::desk_scale(21), 8, layout);

  auto run = [&](int workers) {
    TrainingState state;
    state.net = small_net();
    CurriculumConfig ccfg;
    ccfg.phase = Phase::Clear;
    ccfg.iterations = 2;
    ccfg.boards_per_round = 5;
    ccfg.workers = workers;
    ccfg.seed = 77;
    return run_curriculum(state, scenarios, layout, ccfg, tiny_search(), TrainConfig{},
                          RewardParams{});
  };
  const auto a = run(1);
  const auto b = run(4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].success_rate == b[i].success_rate);
    CHECK(a[i].mean_reward == b[i].mean_reward);  // wall time excluded: not deterministic
  }
}

TEST_CASE("evaluate_policy reports per-board rows and aggregates") {
  auto layout = shared_default();
  const RewardParams params;
  const auto scenarios = generate_scenarios(ScenarioConfig::desk_scale(31), 6, layout);
  std::vector<Board> boards;
  for (const auto& s : scenarios) boards.push_back(scenario_board(s, layout));

  const NetParams net = small_net();
  const auto net_only = evaluate_policy(net, boards, EvalMode::NetOnly, tiny_search(), params, 1, 3);
  REQUIRE(net_only.boards.size() == boards.size());
  const auto mcts =
      evaluate_policy(net, boards, EvalMode::ShortPathMcts, tiny_search(), params, 2, 3);
  REQUIRE(mcts.boards.size() == boards.size());
  for (const auto& b : mcts.boards) {
    if (b.solved) {
      CHECK(b.reward > 0.0);
      CHECK(b.reward < 1.0);
    }
  }
  CHECK(mcts.success_rate >= net_only.success_rate - 0.51);  // search should not collapse
  CHECK(mcts.mean_solve_time_s >= 0.0);
}

TEST_CASE("metrics csv writes the spec header and appends on resume") {
  const auto path = std::filesystem::temp_directory_path() / "pnmcts_metrics.csv";
  write_metrics_csv(path, {{0, 0.5, 0.25, 0.01}});
  write_metrics_csv(path, {{1, 0.75, 0.5, 0.02}}, true);
  const CsvTable t = read_csv(path);
  REQUIRE(t.header ==
          std::vector<std::string>{"iteration", "success_rate", "mean_reward",
                                   "mean_solve_time_s"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][0] == "1");
  CHECK(t.column("mean_reward") == 2);
  std::filesystem::remove(path);
}
