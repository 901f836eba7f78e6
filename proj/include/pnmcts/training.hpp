#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <unordered_map>
#include <vector>

#include "pnmcts/board.hpp"
#include "pnmcts/scenario.hpp"
#include "pnmcts/search.hpp"

namespace pnmcts {

/// Scenario sampling ranges (defaults follow the experiment setup: up to 8
/// platoons at 4-5 m/s, 0-15 m out, 1-4 vehicles each).
struct ScenarioConfig {
  int min_platoons = 1;
  int max_platoons = 8;
  double min_speed = 4.0;
  double max_speed = 5.0;
  double min_distance = 0.0;
  double max_distance = 15.0;
  int min_vehicles = 1;
  int max_vehicles = 4;
  std::uint64_t seed = 0;
  int rejection_budget_per_scenario = 1000;

  /// Shrunk ranges so the full pipeline runs in minutes.
  static ScenarioConfig desk_scale(std::uint64_t seed);
};

/// Uniform samples over the configured ranges on random non-right movements
/// (distinct within a scenario), rejection-sampled until the initial board
/// has at least one conflict, deduplicated by board fingerprint.
std::vector<Scenario> generate_scenarios(const ScenarioConfig& cfg, int count,
                                         std::shared_ptr<const IntersectionLayout> layout);

/// First-in-first-out baseline: new rows are scheduled in arrival order
/// (first entry time), each delayed by the minimal multiple of 0.1 s that
/// avoids all previously fixed rows; behind a residual schedule, new platoons
/// additionally wait for it to complete. Returns the scheduled board with
/// step_count set to the number of delayed platoons.
Board fifo_solve(const Board& b);

/// Outcome of the FIFO baseline schedule; conflict-free by construction,
/// flagged fail_time when it runs past t_max.
EpisodeOutcome fifo_schedule(const Board& b, const RewardParams& params);

/// Highest-reward solved trajectory per initial-board fingerprint.
class BestSoFarArchive {
 public:
  /// Stores the trajectory if solved and strictly better than the current
  /// entry; returns whether it was stored.
  bool update(const Trajectory& t);
  const Trajectory* find(std::uint64_t fp) const;
  std::size_t size() const { return best_.size(); }
  std::vector<const Trajectory*> entries() const;

 private:
  std::unordered_map<std::uint64_t, Trajectory> best_;
};

enum class Phase { Clear, Busy };

struct CurriculumConfig {
  Phase phase = Phase::Clear;
  double resample_probability = 0.25;  // chance a failed board replays its archived solution
  int boards_per_round = 16;
  int iterations = 200;
  int workers = 1;
  std::uint64_t seed = 0;
  int resolved_pool_cap = 64;
  int beta_anneal_every = 300;  // halve the entropy weight this often (busy phase)
};

struct MetricsRow {
  std::uint64_t iteration = 0;
  double success_rate = 0.0;
  double mean_reward = 0.0;
  double mean_solve_time_s = 0.0;
};

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows,
                       bool append = false);

/// Everything the curriculum mutates; persisted via checkpoints plus the
/// resolved-pool file so phases can resume.
struct TrainingState {
  NetParams net;
  AdamState adam;
  BestSoFarArchive archive;
  std::vector<Board> resolved_pool;
  std::uint64_t iteration = 0;
};

/// One curriculum phase. Clear: rounds of parallel episodes on fresh
/// conflicted boards, one accumulated optimizer step per round, solved boards
/// deposited into the resolved pool. Busy: initial boards are overlays of a
/// random resolved board and a fresh one; entropy regularization is active
/// and failed boards replay their archived best-so-far solution with the
/// configured probability.
std::vector<MetricsRow> run_curriculum(TrainingState& state,
                                       const std::vector<Scenario>& scenarios,
                                       std::shared_ptr<const IntersectionLayout> layout,
                                       const CurriculumConfig& ccfg, const SearchConfig& scfg,
                                       const TrainConfig& tcfg, const RewardParams& params);

enum class EvalMode { NetOnly, ShortPathMcts };

struct BoardEval {
  std::uint64_t fingerprint = 0;
  bool solved = false;
  double t_cross_s = 0.0;
  int steps = 0;
  double reward = 0.0;
  double wall_s = 0.0;
};

struct EvalReport {
  std::vector<BoardEval> boards;
  double success_rate = 0.0;
  double mean_reward = 0.0;
  double mean_solve_time_s = 0.0;
  double median_solve_time_s = 0.0;
  double mean_quality = 0.0;    // reward over solved schedules; NaN when none
  double median_quality = 0.0;
};

/// NetOnly follows the policy head greedily with no search; ShortPathMcts
/// plays greedy episodes with the given search budget. With attempts > 1 each
/// board is searched that many times under distinct seeds and the
/// best-reward solved trajectory is kept (the per-board best-so-far rule);
/// reported wall time covers all attempts.
EvalReport evaluate_policy(const NetParams& net, const std::vector<Board>& boards, EvalMode mode,
                           const SearchConfig& scfg, const RewardParams& params, int workers,
                           std::uint64_t seed, int attempts = 1);

}  // namespace pnmcts
