#include "pnmcts/search.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "pnmcts/scenario.hpp"

namespace pnmcts {

namespace {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t x = base + 0x9e3779b97f4a7c15ull * (index + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

MaskX effective_mask(const Board& b, const RewardParams& params, const SearchConfig& cfg) {
  MaskX mask = legal_actions(b, params);
  if (cfg.move_limit > 0 && cfg.move_limit < Board::kMaxMoves) {
    for (int i = 0; i < Board::kActionCount; ++i) {
      if (mask[i] && action_from_id(i).moves > cfg.move_limit) mask[i] = false;
    }
  }
  return mask;
}

// Greedy short-path rollout from a freshly expanded leaf.
double rollout_value(Board b, const NetParams& net, const SearchConfig& cfg,
                     const RewardParams& params) {
  for (int step = 0; step < cfg.rollout_depth; ++step) {
    if (const auto o = evaluate(b, params)) return o->reward;
    const MaskX mask = effective_mask(b, params, cfg);
    if (!mask.any()) return dead_end_outcome(b, params).reward;
    const auto fw = forward(net, encode(b, params), mask);
    int best = 0;
    fw->policy.maxCoeff(&best);
    b = apply(b, action_from_id(best), params);
  }
  if (const auto o = evaluate(b, params)) return o->reward;
  const MaskX mask = effective_mask(b, params, cfg);
  if (!mask.any()) return dead_end_outcome(b, params).reward;
  return forward(net, encode(b, params), mask)->value;
}

void mix_root_noise(Node& node, const SearchConfig& cfg, std::mt19937_64& rng) {
  if (cfg.dirichlet_fraction <= 0.0 || node.actions.empty()) return;
  std::gamma_distribution<double> gamma(cfg.dirichlet_alpha, 1.0);
  VecX noise(node.priors.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < noise.size(); ++i) {
    noise[i] = gamma(rng);
    sum += noise[i];
  }
  if (sum <= 0.0) return;
  node.priors = (1.0 - cfg.dirichlet_fraction) * node.priors +
                (cfg.dirichlet_fraction / sum) * noise;
}

}  // namespace

Node::Node(Board b, const RewardParams& params) : board(std::move(b)) {
  outcome = evaluate(board, params);
}

int select_index(const Node& node, const SearchConfig& cfg) {
  const double sqrt_total = std::sqrt(double(std::max(1, node.total_visits)));
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < node.actions.size(); ++i) {
    const double u = cfg.c_puct * node.priors[Eigen::Index(i)] * sqrt_total / (1.0 + node.visits[i]);
    const double score = node.q(int(i)) + u;
    if (score > best_score) {
      best_score = score;
      best = int(i);
    }
  }
  return best;
}

Action select(const Node& node, const SearchConfig& cfg) {
  if (!node.expanded || node.actions.empty()) {
    throw std::logic_error("select: node not expanded or has no legal action");
  }
  return action_from_id(node.actions[select_index(node, cfg)]);
}

void expand(Node& node, const NetParams& net, const SearchConfig& cfg, const RewardParams& params,
            bool root_noise, std::mt19937_64& rng) {
  if (node.expanded || node.outcome) return;
  const MaskX mask = effective_mask(node.board, params, cfg);
  if (!mask.any()) {
    node.outcome = dead_end_outcome(node.board, params);
    return;
  }
  const auto fw = forward(net, encode(node.board, params), mask);
  node.net_value = fw->value;
  for (int i = 0; i < Board::kActionCount; ++i) {
    if (mask[i]) node.actions.push_back(i);
  }
  node.priors = VecX(node.actions.size());
  for (std::size_t i = 0; i < node.actions.size(); ++i) {
    node.priors[Eigen::Index(i)] = fw->policy[node.actions[i]];
  }
  node.priors /= node.priors.sum();
  if (cfg.prior_uniform_mix > 0.0) {
    const double mix = std::min(cfg.prior_uniform_mix, 1.0);
    node.priors = (1.0 - mix) * node.priors +
                  VecX::Constant(node.priors.size(), mix / double(node.priors.size()));
  }
  node.visits.assign(node.actions.size(), 0);
  node.value_sum.assign(node.actions.size(), 0.0);
  node.children.resize(node.actions.size());
  node.expanded = true;
  if (root_noise) mix_root_noise(node, cfg, rng);
}

double simulate_once(Node& root, const NetParams& net, const SearchConfig& cfg,
                     const RewardParams& params, std::mt19937_64& rng) {
  Node* node = &root;
  std::vector<std::pair<Node*, int>> path;
  double value = 0.0;
  int depth = 0;

  for (;;) {
    if (node->outcome) {
      value = node->outcome->reward;
      break;
    }
    if (!node->expanded) {
      expand(*node, net, cfg, params, node == &root, rng);
      if (node->outcome) {
        value = node->outcome->reward;
        break;
      }
      value = cfg.rollout_depth > 0 ? rollout_value(node->board, net, cfg, params)
                                    : node->net_value;
      break;
    }
    if (depth >= cfg.max_depth) {
      value = node->net_value;
      break;
    }
    const int i = select_index(*node, cfg);
    path.emplace_back(node, i);
    if (!node->children[i]) {
      node->children[i] = std::make_unique<Node>(
          apply(node->board, action_from_id(node->actions[i]), params), params);
    }
    node = node->children[i].get();
    ++depth;
  }

  for (auto [n, i] : path) {
    n->visits[i] += 1;
    n->value_sum[i] += value;
    n->total_visits += 1;
  }
  return value;
}

Trajectory play_episode(const Board& initial, const NetParams& net, const SearchConfig& cfg,
                        const RewardParams& params, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);

  Trajectory traj;
  traj.initial_board = initial;
  traj.initial_fingerprint = fingerprint(initial);

  auto root = std::make_unique<Node>(initial, params);
  int move_index = 0;

  for (;;) {
    if (root->outcome) {
      traj.outcome = *root->outcome;
      break;
    }
    const auto move_start = std::chrono::steady_clock::now();
    for (int s = 0; s < cfg.simulations; ++s) {
      simulate_once(*root, net, cfg, params, rng);
      if (root->outcome) break;  // dead end discovered at root expansion
      if (cfg.move_time_budget_s > 0.0 && s + 1 < cfg.simulations) {
        const std::chrono::duration<double> spent = std::chrono::steady_clock::now() - move_start;
        if (spent.count() >= cfg.move_time_budget_s) break;  // move from visits so far
      }
    }
    if (root->outcome) {
      traj.outcome = *root->outcome;
      break;
    }

    // visit distribution over the full action grid
    VecX pi = VecX::Zero(Board::kActionCount);
    for (std::size_t i = 0; i < root->actions.size(); ++i) {
      pi[root->actions[i]] = double(root->visits[i]);
    }
    const double total = pi.sum();

    int chosen = 0;
    if (total <= 0.0) {
      root->priors.maxCoeff(&chosen);  // untouched root (zero-simulation edge)
    } else if (move_index < cfg.temperature_moves) {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      double ticket = unit(rng) * total;
      for (std::size_t i = 0; i < root->actions.size(); ++i) {
        ticket -= double(root->visits[i]);
        if (ticket <= 0.0) {
          chosen = int(i);
          break;
        }
        if (i + 1 == root->actions.size()) chosen = int(i);
      }
    } else {
      int best_visits = -1;
      for (std::size_t i = 0; i < root->actions.size(); ++i) {
        if (root->visits[i] > best_visits) {
          best_visits = root->visits[i];
          chosen = int(i);
        }
      }
    }

    TrajectoryStep step;
    step.features = encode(root->board, params);
    step.mask = effective_mask(root->board, params, cfg);
    step.pi = total > 0.0 ? VecX(pi / total) : std::move(pi);
    step.action = root->actions[chosen];
    traj.steps.push_back(std::move(step));

    // advance the root, reusing the chosen subtree
    std::unique_ptr<Node> child = std::move(root->children[chosen]);
    if (!child) {
      child = std::make_unique<Node>(
          apply(root->board, action_from_id(root->actions[chosen]), params), params);
    }
    root = std::move(child);
    if (root->expanded) mix_root_noise(*root, cfg, rng);
    ++move_index;
  }

  traj.final_board = root->board;
  traj.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return traj;
}

std::vector<Trajectory> parallel_round(const std::vector<Board>& boards, const NetParams& net,
                                       const SearchConfig& cfg, const RewardParams& params,
                                       int workers, std::uint64_t seed) {
  if (workers < 1) throw std::invalid_argument("parallel_round: workers must be >= 1");
  std::vector<Trajectory> out(boards.size());
  std::atomic<std::size_t> next{0};

  auto run = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= boards.size()) return;
      try {
        out[i] = play_episode(boards[i], net, cfg, params, mix_seed(seed, i));
      } catch (const std::exception& e) {
        std::cerr << "[search] worker failure on board " << i << ": " << e.what() << '\n';
        out[i] = Trajectory{};
        out[i].aborted = true;
        out[i].initial_board = boards[i];
        out[i].final_board = boards[i];
        out[i].initial_fingerprint = fingerprint(boards[i]);
        out[i].outcome = dead_end_outcome(boards[i], params);
      }
    }
  };

  const int n = std::min<int>(workers, std::max<std::size_t>(boards.size(), 1));
  if (n <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (int w = 0; w < n; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  return out;
}

std::string trajectory_to_json(const Trajectory& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) {
    nlohmann::json pi = nlohmann::json::object();
    for (Eigen::Index a = 0; a < s.pi.size(); ++a) {
      if (s.pi[a] > 0.0) pi[std::to_string(a)] = s.pi[a];
    }
    steps.push_back({{"action", s.action}, {"pi", std::move(pi)}});
  }
  nlohmann::json j{
      {"initial_board", nlohmann::json::parse(board_to_json(t.initial_board))},
      {"steps", std::move(steps)},
      {"outcome",
       {{"status", to_string(t.outcome.status)},
        {"t_cross_s", t.outcome.t_cross_s},
        {"steps", t.outcome.steps},
        {"reward", t.outcome.reward}}},
      {"aborted", t.aborted},
  };
  return j.dump(2);
}

Trajectory trajectory_from_json(const std::string& text,
                                std::shared_ptr<const IntersectionLayout> layout,
                                const RewardParams& params) {
  const auto j = nlohmann::json::parse(text);
  Trajectory t;
  t.initial_board = board_from_json(j.at("initial_board").dump(), std::move(layout));
  t.initial_fingerprint = fingerprint(t.initial_board);
  t.aborted = j.value("aborted", false);

  Board b = t.initial_board;
  for (const auto& js : j.at("steps")) {
    TrajectoryStep step;
    step.action = js.at("action").get<int>();
    step.features = encode(b, params);
    step.mask = legal_actions(b, params);
    step.pi = VecX::Zero(Board::kActionCount);
    for (const auto& [key, val] : js.at("pi").items()) {
      step.pi[std::stoi(key)] = val.get<double>();
    }
    b = apply(b, action_from_id(step.action), params);
    t.steps.push_back(std::move(step));
  }
  t.final_board = b;

  const auto& jo = j.at("outcome");
  const std::string status = jo.at("status").get<std::string>();
  t.outcome.status = status == "solved" ? Status::Solved
                     : status == "fail_steps" ? Status::FailSteps
                                              : Status::FailTime;
  t.outcome.t_cross_s = jo.at("t_cross_s").get<double>();
  t.outcome.steps = jo.at("steps").get<int>();
  t.outcome.reward = jo.at("reward").get<double>();
  return t;
}

}  // namespace pnmcts
