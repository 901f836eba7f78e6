#include "pnmcts/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "pnmcts/csv.hpp"

namespace pnmcts {

namespace {

constexpr double kTimeEps = 1e-9;

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t x = base + 0x9e3779b97f4a7c15ull * (salt + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ScenarioConfig ScenarioConfig::desk_scale(std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.min_platoons = 2;
  cfg.max_platoons = 4;
  cfg.seed = seed;
  return cfg;
}

std::vector<Scenario> generate_scenarios(const ScenarioConfig& cfg, int count,
                                         std::shared_ptr<const IntersectionLayout> layout) {
  if (count < 1) throw std::invalid_argument("generate_scenarios: count must be >= 1");
  if (cfg.min_platoons < 1 || cfg.max_platoons < cfg.min_platoons) {
    throw std::invalid_argument("generate_scenarios: bad platoon range");
  }

  std::vector<const Movement*> schedulable;
  for (const Movement& m : layout->movements) {
    if (m.turn != Turn::Right && !m.sequence.empty()) schedulable.push_back(&m);
  }
  if (static_cast<int>(schedulable.size()) < cfg.max_platoons) {
    throw std::invalid_argument("generate_scenarios: layout has fewer schedulable movements (" +
                                std::to_string(schedulable.size()) + ") than max_platoons");
  }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> n_platoons(cfg.min_platoons, cfg.max_platoons);
  std::uniform_real_distribution<double> speed(cfg.min_speed, cfg.max_speed);
  std::uniform_real_distribution<double> dist(cfg.min_distance, cfg.max_distance);
  std::uniform_int_distribution<int> veh(cfg.min_vehicles, cfg.max_vehicles);

  std::vector<Scenario> out;
  std::set<std::uint64_t> fingerprints;
  long long budget = static_cast<long long>(cfg.rejection_budget_per_scenario) * count;

  while (static_cast<int>(out.size()) < count) {
    if (--budget < 0) {
      throw std::runtime_error(
          "generate_scenarios: rejection budget exhausted after producing " +
          std::to_string(out.size()) + " of " + std::to_string(count) + " scenarios");
    }
    const int n = n_platoons(rng);
    std::vector<const Movement*> picks = schedulable;
    std::shuffle(picks.begin(), picks.end(), rng);

    Scenario s;
    for (int i = 0; i < n; ++i) {
      s.platoons.push_back({i, picks[i]->approach, picks[i]->turn, speed(rng), dist(rng),
                            veh(rng)});
    }
    const Board b = from_scenario(s.platoons, layout);
    if (conflicts(b).empty()) continue;
    if (!fingerprints.insert(fingerprint(b)).second) continue;
    out.push_back(std::move(s));
  }
  return out;
}

Board fifo_solve(const Board& b) {
  Board out = b;

  // The intersection is treated as one queue: platoons gain access strictly
  // in arrival order and each may enter only after every earlier-scheduled
  // platoon (and any residual schedule) has fully completed. Delays are the
  // minimal multiples of one move (0.1 s); a platoon already starting after
  // the current completion time keeps its projection untouched.
  double committed_end = 0.0;
  std::vector<std::pair<double, int>> pending;  // (first entry, row)
  for (int r = 0; r < Board::kMaxRows; ++r) {
    if (!out.row_occupied(r)) continue;
    if (out.kind(r) == RowKind::Residual) {
      if (const auto e = out.row_max_exit(r)) committed_end = std::max(committed_end, *e);
    } else if (const auto entry = out.row_min_entry(r)) {
      pending.emplace_back(*entry, r);
    }
  }
  std::sort(pending.begin(), pending.end());

  int delayed = 0;
  for (const auto& [first_entry, row] : pending) {
    if (first_entry < committed_end - kTimeEps) {
      const long long k = std::max(
          0ll, std::llround(
                   std::ceil((committed_end - first_entry) / Board::kMoveSeconds - kTimeEps)));
      if (k > 0) {
        out.shift_row(row, Board::kMoveSeconds * double(k));
        ++delayed;
      }
    }
    if (const auto e = out.row_max_exit(row)) committed_end = std::max(committed_end, *e);
  }
  out.set_step_count(delayed);
  return out;
}

EpisodeOutcome fifo_schedule(const Board& b, const RewardParams& params) {
  const Board scheduled = fifo_solve(b);
  const auto outcome = evaluate(scheduled, params);
  if (!outcome) throw std::logic_error("fifo_schedule: scheduled board not terminal");
  return *outcome;
}

bool BestSoFarArchive::update(const Trajectory& t) {
  if (t.aborted || t.outcome.status != Status::Solved) return false;
  auto it = best_.find(t.initial_fingerprint);
  if (it != best_.end() && it->second.outcome.reward >= t.outcome.reward) return false;
  best_[t.initial_fingerprint] = t;
  return true;
}

const Trajectory* BestSoFarArchive::find(std::uint64_t fp) const {
  const auto it = best_.find(fp);
  return it == best_.end() ? nullptr : &it->second;
}

std::vector<const Trajectory*> BestSoFarArchive::entries() const {
  std::vector<const Trajectory*> out;
  out.reserve(best_.size());
  for (const auto& [fp, t] : best_) out.push_back(&t);
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows,
                       bool append) {
  const std::vector<std::string> header{"iteration", "success_rate", "mean_reward",
                                        "mean_solve_time_s"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({std::to_string(r.iteration), format_double(r.success_rate),
                     format_double(r.mean_reward), format_double(r.mean_solve_time_s)});
  }
  if (append && std::filesystem::exists(path)) {
    CsvTable existing = read_csv(path);
    for (auto& row : cells) existing.rows.push_back(std::move(row));
    write_csv(path, existing.header, existing.rows);
  } else {
    write_csv(path, header, cells);
  }
}

namespace {

struct Sample {
  const TrajectoryStep* step;
  double z;
};

void append_trajectory_samples(const Trajectory& t, std::vector<Sample>& out) {
  for (const auto& step : t.steps) out.push_back({&step, t.outcome.reward});
}

std::vector<Batch> build_batches(std::vector<Sample> samples, const NetConfig& cfg,
                                 const TrainConfig& tcfg, std::mt19937_64& rng) {
  std::shuffle(samples.begin(), samples.end(), rng);
  const int batch_size = std::max(1, tcfg.batch_size);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const int n = static_cast<int>(std::min<std::size_t>(batch_size, samples.size() - start));
    Batch batch;
    batch.features = MatX(cfg.input_dim, n);
    batch.target_policy = MatX::Zero(cfg.action_dim, n);
    batch.target_value = VecX(n);
    for (int j = 0; j < n; ++j) {
      const Sample& s = samples[start + j];
      batch.features.col(j) = s.step->features;
      batch.target_policy.col(j) = s.step->pi;
      batch.target_value[j] = s.z;
      batch.masks.push_back(s.step->mask);
    }
    batches.push_back(std::move(batch));
    if (static_cast<int>(batches.size()) >= std::max(1, tcfg.accumulation_steps) &&
        start + batch_size < samples.size()) {
      // keep the round's update bounded: fold the remaining samples into the
      // last batch rather than growing the accumulation window
      Batch& last = batches.back();
      const std::size_t rest = samples.size() - (start + batch_size);
      const int old = last.size();
      const int total = old + static_cast<int>(rest);
      MatX f(cfg.input_dim, total);
      MatX p = MatX::Zero(cfg.action_dim, total);
      VecX z(total);
      f.leftCols(old) = last.features;
      p.leftCols(old) = last.target_policy;
      z.head(old) = last.target_value;
      for (std::size_t j = 0; j < rest; ++j) {
        const Sample& s = samples[start + batch_size + j];
        f.col(old + Eigen::Index(j)) = s.step->features;
        p.col(old + Eigen::Index(j)) = s.step->pi;
        z[old + Eigen::Index(j)] = s.z;
        last.masks.push_back(s.step->mask);
      }
      last.features = std::move(f);
      last.target_policy = std::move(p);
      last.target_value = std::move(z);
      break;
    }
  }
  return batches;
}

}  // namespace

std::vector<MetricsRow> run_curriculum(TrainingState& state,
                                       const std::vector<Scenario>& scenarios,
                                       std::shared_ptr<const IntersectionLayout> layout,
                                       const CurriculumConfig& ccfg, const SearchConfig& scfg,
                                       const TrainConfig& tcfg, const RewardParams& params) {
  if (scenarios.empty()) throw std::invalid_argument("run_curriculum: no training scenarios");

  std::vector<Board> fresh_boards;
  fresh_boards.reserve(scenarios.size());
  for (const Scenario& s : scenarios) fresh_boards.push_back(scenario_board(s, layout));

  // clear rounds shuffle platoon order: boards are row-permutation equivalent
  // but the encoding is not, and the extra variety curbs memorization of the
  // small training pool
  auto permuted_clear_board = [&](const Scenario& s, std::mt19937_64& rng) {
    if (s.residual) return scenario_board(s, layout);
    std::vector<Platoon> platoons = s.platoons;
    std::shuffle(platoons.begin(), platoons.end(), rng);
    return from_scenario(platoons, layout);
  };

  // A busy phase started without a resolved pool bootstraps one from the
  // FIFO baseline so overlays are always available.
  if (ccfg.phase == Phase::Busy && state.resolved_pool.empty()) {
    for (const Board& b : fresh_boards) {
      if (static_cast<int>(state.resolved_pool.size()) >= ccfg.resolved_pool_cap) break;
      Board solved = fifo_solve(b);
      if (solved.max_exit() <= params.t_max_s) state.resolved_pool.push_back(std::move(solved));
    }
  }

  std::vector<MetricsRow> metrics;
  for (int iter = 0; iter < ccfg.iterations; ++iter) {
    std::mt19937_64 round_rng(mix_seed(ccfg.seed, state.iteration));

    std::vector<Board> round_boards;
    round_boards.reserve(ccfg.boards_per_round);
    for (int i = 0; i < ccfg.boards_per_round; ++i) {
      const std::size_t pick = round_rng() % scenarios.size();
      if (ccfg.phase == Phase::Busy && !state.resolved_pool.empty()) {
        // new platoons arrive at an arbitrary point of the residual
        // schedule's execution; only its remaining tail constrains them
        const Board& fresh = fresh_boards[pick];
        const Board& resolved = state.resolved_pool[round_rng() % state.resolved_pool.size()];
        const double span = resolved.max_exit();
        const double elapsed =
            Board::kMoveSeconds * double(round_rng() % (std::llround(span * 10.0) + 1));
        const Board residual = clip_to_future(resolved, elapsed);
        if (residual.occupied_rows() + fresh.occupied_rows() <= Board::kMaxRows) {
          round_boards.push_back(overlay(residual, fresh));
          continue;
        }
        round_boards.push_back(fresh);
        continue;
      }
      round_boards.push_back(permuted_clear_board(scenarios[pick], round_rng));
    }

    const auto trajectories = parallel_round(round_boards, state.net, scfg, params, ccfg.workers,
                                             mix_seed(ccfg.seed ^ 0x5bd1e995, state.iteration));

    int solved = 0;
    double reward_sum = 0.0;
    double time_sum = 0.0;
    std::vector<Sample> samples;
    std::bernoulli_distribution resample(std::clamp(ccfg.resample_probability, 0.0, 1.0));

    for (const Trajectory& t : trajectories) {
      reward_sum += t.outcome.reward;
      time_sum += t.wall_time_s;
      if (t.aborted) continue;
      append_trajectory_samples(t, samples);

      if (t.outcome.status == Status::Solved) {
        ++solved;
        state.archive.update(t);
        if (ccfg.phase == Phase::Clear &&
            static_cast<int>(state.resolved_pool.size()) < ccfg.resolved_pool_cap &&
            t.final_board.occupied_rows() > 0) {
          state.resolved_pool.push_back(t.final_board);
        }
      } else if (ccfg.phase == Phase::Busy) {
        // priority replay: a failed board re-injects its archived solution
        if (const Trajectory* best = state.archive.find(t.initial_fingerprint)) {
          if (resample(round_rng)) append_trajectory_samples(*best, samples);
        }
      }
    }

    if (!samples.empty()) {
      TrainConfig effective = tcfg;
      effective.entropy_beta =
          ccfg.phase == Phase::Busy
              ? tcfg.entropy_beta *
                    std::pow(0.5, double(state.iteration / std::max(1, ccfg.beta_anneal_every)))
              : 0.0;
      const auto batches = build_batches(std::move(samples), state.net.config, effective,
                                         round_rng);
      std::vector<NetGradients> grads;
      grads.reserve(batches.size());
      for (const Batch& b : batches) grads.push_back(loss(state.net, b, effective).grads);
      accumulate_and_step(state.net, state.adam, grads, effective);
    }

    MetricsRow row;
    row.iteration = state.iteration;
    row.success_rate = trajectories.empty() ? 0.0 : double(solved) / double(trajectories.size());
    row.mean_reward = trajectories.empty() ? 0.0 : reward_sum / double(trajectories.size());
    row.mean_solve_time_s =
        trajectories.empty() ? 0.0 : time_sum / double(trajectories.size());
    metrics.push_back(row);
    state.iteration += 1;
  }
  return metrics;
}

EvalReport evaluate_policy(const NetParams& net, const std::vector<Board>& boards, EvalMode mode,
                           const SearchConfig& scfg, const RewardParams& params, int workers,
                           std::uint64_t seed, int attempts) {
  if (attempts < 1) throw std::invalid_argument("evaluate_policy: attempts must be >= 1");
  EvalReport report;
  report.boards.reserve(boards.size());

  if (mode == EvalMode::ShortPathMcts) {
    // greedy play; root noise stays as configured (it guards the search
    // against confidently wrong priors and is seeded, hence reproducible).
    // Attempts form a portfolio: the prior floor ramps from the configured
    // value up to a fully uniform search on the last attempt, so a net that
    // is confidently wrong on a board cannot sink every try.
    SearchConfig eval_cfg = scfg;
    eval_cfg.temperature_moves = 0;
    std::vector<Trajectory> trajectories;
    trajectories.reserve(boards.size() * attempts);
    for (int a = 0; a < attempts; ++a) {
      SearchConfig attempt_cfg = eval_cfg;
      if (attempts > 1) {
        const double ramp = double(a) / double(attempts - 1);
        attempt_cfg.prior_uniform_mix =
            eval_cfg.prior_uniform_mix + (1.0 - eval_cfg.prior_uniform_mix) * ramp;
      }
      auto round = parallel_round(boards, net, attempt_cfg, params, workers,
                                  seed + 0x9e3779b9ull * std::uint64_t(a));
      for (auto& t : round) trajectories.push_back(std::move(t));
    }
    for (std::size_t i = 0; i < boards.size(); ++i) {
      const Trajectory* best = &trajectories[i];
      double wall = trajectories[i].wall_time_s;
      for (int a = 1; a < attempts; ++a) {
        const Trajectory& cand = trajectories[a * boards.size() + i];
        wall += cand.wall_time_s;
        const bool cand_solved = cand.outcome.status == Status::Solved;
        const bool best_solved = best->outcome.status == Status::Solved;
        if ((cand_solved && !best_solved) ||
            (cand_solved == best_solved && cand.outcome.reward > best->outcome.reward)) {
          best = &cand;
        }
      }
      report.boards.push_back({best->initial_fingerprint,
                               best->outcome.status == Status::Solved, best->outcome.t_cross_s,
                               best->outcome.steps, best->outcome.reward, wall});
    }
  } else {
    for (const Board& initial : boards) {
      const auto t0 = std::chrono::steady_clock::now();
      Board b = initial;
      EpisodeOutcome outcome;
      for (;;) {
        if (const auto o = evaluate(b, params)) {
          outcome = *o;
          break;
        }
        const MaskX mask = legal_actions(b, params);
        if (!mask.any()) {
          outcome = dead_end_outcome(b, params);
          break;
        }
        const auto fw = forward(net, encode(b, params), mask);
        int best = 0;
        fw->policy.maxCoeff(&best);
        b = apply(b, action_from_id(best), params);
      }
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      report.boards.push_back({fingerprint(initial), outcome.status == Status::Solved,
                               outcome.t_cross_s, outcome.steps, outcome.reward, wall});
    }
  }

  double reward_sum = 0.0, time_sum = 0.0;
  std::vector<double> times, qualities;
  int solved = 0;
  for (const auto& b : report.boards) {
    reward_sum += b.reward;
    time_sum += b.wall_s;
    times.push_back(b.wall_s);
    if (b.solved) {
      ++solved;
      qualities.push_back(b.reward);
    }
  }
  const double n = std::max<std::size_t>(report.boards.size(), 1);
  report.success_rate = double(solved) / n;
  report.mean_reward = reward_sum / n;
  report.mean_solve_time_s = time_sum / n;
  report.median_solve_time_s = median(times);
  report.mean_quality =
      qualities.empty() ? std::numeric_limits<double>::quiet_NaN()
                        : std::accumulate(qualities.begin(), qualities.end(), 0.0) /
                              double(qualities.size());
  report.median_quality = median(qualities);
  return report;
}

}  // namespace pnmcts
