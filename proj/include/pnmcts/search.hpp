#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "pnmcts/board.hpp"
#include "pnmcts/policynet.hpp"

namespace pnmcts {

struct SearchConfig {
  int simulations = 400;
  double c_puct = 1.5;
  int max_depth = 64;
  double move_time_budget_s = 0.0;  // 0 disables the per-move wall-clock cap
  int rollout_depth = 5;            // 0 falls back to plain leaf evaluation
  double dirichlet_alpha = 0.3;
  double dirichlet_fraction = 0.25;  // 0 disables root noise (evaluation mode)
  // floor on expansion priors: P' = (1-mix)*net + mix*uniform-over-legal.
  // Keeps every subtree explorable when the net is confidently wrong.
  double prior_uniform_mix = 0.0;
  int temperature_moves = 4;         // sample by visits for this many moves, then greedy
  int move_limit = 0;  // restrict delay actions to moves <= move_limit (0: all 20)
};

/// One search-tree node. Per-action statistics are stored compactly over the
/// node's legal actions; children are created lazily.
struct Node {
  Board board;
  std::optional<EpisodeOutcome> outcome;  // set for terminal and dead-end states
  bool expanded = false;
  double net_value = 0.0;  // value-head estimate recorded at expansion

  std::vector<int> actions;  // legal action ids, ascending
  VecX priors;               // aligned with actions, sums to 1
  std::vector<int> visits;
  std::vector<double> value_sum;
  std::vector<std::unique_ptr<Node>> children;
  int total_visits = 0;

  Node(Board b, const RewardParams& params);
  double q(int i) const { return visits[i] > 0 ? value_sum[i] / visits[i] : 0.0; }
};

/// PUCT selection: argmax over legal actions of
///   Q(a) + c_puct * P(a) * sqrt(max(1, sum N)) / (1 + N(a)),
/// ties broken by the lowest action id. Returns an index into node.actions.
int select_index(const Node& node, const SearchConfig& cfg);
Action select(const Node& node, const SearchConfig& cfg);

/// Expands a leaf with net priors (mixing root Dirichlet noise when
/// requested); marks dead ends with their failure outcome instead.
void expand(Node& node, const NetParams& net, const SearchConfig& cfg, const RewardParams& params,
            bool root_noise, std::mt19937_64& rng);

/// One selection/expansion/backup pass. Leaf values come from terminal
/// rewards, a short greedy rollout under the net policy (rollout_depth > 0),
/// or the value head.
double simulate_once(Node& root, const NetParams& net, const SearchConfig& cfg,
                     const RewardParams& params, std::mt19937_64& rng);

struct TrajectoryStep {
  VecX features;
  MaskX mask;
  VecX pi;  // root visit distribution over the full action grid
  int action = 0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  EpisodeOutcome outcome;
  std::uint64_t initial_fingerprint = 0;
  Board initial_board;
  Board final_board;
  double wall_time_s = 0.0;
  bool aborted = false;  // worker failure slot
};

/// Self-contained episode: repeated search rounds from the current root,
/// temperature-based action choice, subtree reuse, until terminal.
Trajectory play_episode(const Board& initial, const NetParams& net, const SearchConfig& cfg,
                        const RewardParams& params, std::uint64_t seed);

/// Runs play_episode over the boards with share-nothing trees and a shared
/// read-only net snapshot. Episode seeds are derived from (seed, board index)
/// so results are identical for any worker count. A worker failure marks its
/// slot aborted and the round continues.
std::vector<Trajectory> parallel_round(const std::vector<Board>& boards, const NetParams& net,
                                       const SearchConfig& cfg, const RewardParams& params,
                                       int workers, std::uint64_t seed);

std::string trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const std::string& text,
                                std::shared_ptr<const IntersectionLayout> layout,
                                const RewardParams& params);

}  // namespace pnmcts
