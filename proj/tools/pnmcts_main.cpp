// Command-line front end: generate / train / solve / evaluate / simulate /
// report, each writing a replayable run manifest next to its outputs.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "pnmcts/csv.hpp"
#include "pnmcts/scenario.hpp"
#include "pnmcts/simulator.hpp"
#include "pnmcts/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pnmcts;

namespace {

std::uint64_t fnv64_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash missing input: " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;  // path -> content hash
  std::vector<std::string> outputs;
  std::string layout_id;
};

void write_manifest(const fs::path& out_dir, const RunManifest& m) {
  json inputs = json::object();
  for (const auto& [path, hash] : m.inputs) inputs[path] = hash;
  const json j{{"command", m.command}, {"argv", m.argv},       {"seed", m.seed},
               {"inputs", inputs},     {"outputs", m.outputs}, {"layout", m.layout_id}};
  std::ofstream f(out_dir / "manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  f << j.dump(2) << '\n';
}

fs::path default_out_root() {
  if (const char* env = std::getenv("PNMCTS_OUT")) return fs::path(env);
  return fs::path("out");
}

std::shared_ptr<const IntersectionLayout> load_layout_arg(const std::string& layout_path,
                                                          RunManifest& manifest) {
  if (layout_path.empty()) {
    auto layout = std::make_shared<const IntersectionLayout>(default_fourway3lane());
    manifest.layout_id = layout->id + " (built-in)";
    return layout;
  }
  manifest.inputs.emplace_back(layout_path, hex64(fnv64_file(layout_path)));
  auto layout = std::make_shared<const IntersectionLayout>(load_layout(layout_path));
  manifest.layout_id = layout->id;
  return layout;
}

void check_net_compat(const NetParams& net, const IntersectionLayout& layout) {
  if (net.config.input_dim != encoded_size(layout) ||
      net.config.action_dim != Board::kActionCount) {
    throw std::runtime_error(
        "checkpoint dimensions (input " + std::to_string(net.config.input_dim) + ", actions " +
        std::to_string(net.config.action_dim) + ") do not match the layout (input " +
        std::to_string(encoded_size(layout)) + ", actions " +
        std::to_string(Board::kActionCount) + ")");
  }
}

// ---- shared option bundles -------------------------------------------------

struct CommonOpts {
  std::string layout_path;
  std::string out_dir;
  std::uint64_t seed = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts, const std::string& default_sub) {
  cmd->add_option("--layout", opts.layout_path, "intersection layout file (default: built-in)");
  cmd->add_option("--out", opts.out_dir, "output directory")
      ->default_val((default_out_root() / default_sub).string());
  cmd->add_option("--seed", opts.seed, "random seed")->default_val("1");
}

struct SearchOpts {
  int simulations = 128;
  int rollout_depth = 5;
  double move_budget_s = 0.0;
  int workers = 2;
  double prior_mix = 0.25;
  int attempts = 2;
};

void add_search(CLI::App* cmd, SearchOpts& opts) {
  cmd->add_option("--simulations", opts.simulations, "search simulations per move")
      ->default_val("128");
  cmd->add_option("--rollout-depth", opts.rollout_depth, "short-path rollout length")
      ->default_val("5");
  cmd->add_option("--move-budget", opts.move_budget_s,
                  "wall-clock budget per move in seconds (0 = off; breaks determinism)")
      ->default_val("0");
  cmd->add_option("--workers", opts.workers, "parallel search workers")->default_val("2");
  cmd->add_option("--prior-mix", opts.prior_mix, "uniform floor mixed into expansion priors")
      ->default_val("0.25");
  cmd->add_option("--attempts", opts.attempts,
                  "seeded search attempts per board, best kept (evaluate/solve)")
      ->default_val("2");
}

SearchConfig eval_search_config(const SearchOpts& opts) {
  SearchConfig cfg;
  cfg.simulations = opts.simulations;
  cfg.rollout_depth = opts.rollout_depth;
  cfg.move_time_budget_s = opts.move_budget_s;
  cfg.dirichlet_fraction = 0.25;
  cfg.temperature_moves = 0;
  cfg.prior_uniform_mix = opts.prior_mix;
  return cfg;
}

std::vector<Board> boards_of(const std::vector<Scenario>& scenarios,
                             const std::shared_ptr<const IntersectionLayout>& layout) {
  std::vector<Board> out;
  out.reserve(scenarios.size());
  for (const Scenario& s : scenarios) out.push_back(scenario_board(s, layout));
  return out;
}

// ---- generate ---------------------------------------------------------------

int cmd_generate(const CommonOpts& common, int count, const std::string& split, bool desk,
                 const std::vector<std::string>& argv) {
  RunManifest manifest{"generate", argv, common.seed, {}, {}, {}};
  auto layout = load_layout_arg(common.layout_path, manifest);

  ScenarioConfig cfg = desk ? ScenarioConfig::desk_scale(common.seed) : ScenarioConfig{};
  cfg.seed = common.seed;
  const auto scenarios = generate_scenarios(cfg, count, layout);

  fs::create_directories(common.out_dir);
  const fs::path out(common.out_dir);
  if (split.empty()) {
    write_scenarios(out / "scenarios.json", scenarios, *layout);
    manifest.outputs.push_back("scenarios.json");
  } else {
    const auto colon = split.find(':');
    if (colon == std::string::npos) throw std::runtime_error("--split expects TRAIN:TEST");
    const int train_n = std::stoi(split.substr(0, colon));
    const int test_n = std::stoi(split.substr(colon + 1));
    if (train_n + test_n != count || train_n < 1 || test_n < 1) {
      throw std::runtime_error("--split parts must be positive and sum to --count");
    }
    const std::vector<Scenario> train(scenarios.begin(), scenarios.begin() + train_n);
    const std::vector<Scenario> test(scenarios.begin() + train_n, scenarios.end());
    write_scenarios(out / "scenarios_train.json", train, *layout);
    write_scenarios(out / "scenarios_test.json", test, *layout);
    manifest.outputs.push_back("scenarios_train.json");
    manifest.outputs.push_back("scenarios_test.json");
  }
  write_manifest(out, manifest);
  std::cout << "generated " << scenarios.size() << " conflicted scenarios -> " << common.out_dir
            << '\n';
  return 0;
}

// ---- train ------------------------------------------------------------------

void save_pool(const fs::path& path, const std::vector<Board>& pool) {
  json arr = json::array();
  for (const Board& b : pool) arr.push_back(json::parse(board_to_json(b)));
  std::ofstream f(path);
  f << arr.dump() << '\n';
}

std::vector<Board> load_pool(const fs::path& path,
                             const std::shared_ptr<const IntersectionLayout>& layout) {
  std::vector<Board> pool;
  if (!fs::exists(path)) return pool;
  std::ifstream f(path);
  json arr;
  f >> arr;
  for (const auto& jb : arr) pool.push_back(board_from_json(jb.dump(), layout));
  return pool;
}

void save_archive(const fs::path& path, const BestSoFarArchive& archive) {
  json arr = json::array();
  for (const Trajectory* t : archive.entries()) arr.push_back(json::parse(trajectory_to_json(*t)));
  std::ofstream f(path);
  f << arr.dump() << '\n';
}

void load_archive(const fs::path& path, const std::shared_ptr<const IntersectionLayout>& layout,
                  const RewardParams& params, BestSoFarArchive& archive) {
  if (!fs::exists(path)) return;
  std::ifstream f(path);
  json arr;
  f >> arr;
  for (const auto& jt : arr) archive.update(trajectory_from_json(jt.dump(), layout, params));
}

int cmd_train(const CommonOpts& common, const SearchOpts& search, const std::string& scenarios_path,
              const std::string& phase_name, int iters, const std::string& resume, bool desk,
              int hidden_layers, int hidden_width, int boards_per_round, double upsilon,
              double learning_rate, double entropy_beta, int pool_cap,
              const std::vector<std::string>& argv) {
  RunManifest manifest{"train", argv, common.seed, {}, {}, {}};
  auto layout = load_layout_arg(common.layout_path, manifest);
  const RewardParams params;

  manifest.inputs.emplace_back(scenarios_path, hex64(fnv64_file(scenarios_path)));
  const auto scenarios = read_scenarios(scenarios_path, layout);
  if (scenarios.empty()) throw std::runtime_error("scenario file is empty: " + scenarios_path);

  fs::create_directories(common.out_dir);
  const fs::path out(common.out_dir);

  TrainingState state;
  bool resumed = false;
  if (!resume.empty()) {
    manifest.inputs.emplace_back(resume, hex64(fnv64_file(resume)));
    Checkpoint ckpt = load_checkpoint(resume);
    check_net_compat(ckpt.params, *layout);
    state.net = std::move(ckpt.params);
    if (ckpt.adam) state.adam = std::move(*ckpt.adam);
    state.iteration = ckpt.iteration;
    state.resolved_pool = load_pool(out / "resolved_pool.json", layout);
    load_archive(out / "archive.json", layout, params, state.archive);
    resumed = true;
  } else {
    NetConfig cfg;
    cfg.input_dim = encoded_size(*layout);
    cfg.action_dim = Board::kActionCount;
    cfg.hidden_layers = desk ? 3 : hidden_layers;
    cfg.hidden_width = desk ? 64 : hidden_width;
    state.net = init_random(cfg, common.seed);
  }

  SearchConfig scfg;
  scfg.simulations = search.simulations;
  scfg.rollout_depth = desk ? std::min(search.rollout_depth, 2) : search.rollout_depth;
  scfg.move_time_budget_s = search.move_budget_s;
  scfg.prior_uniform_mix = search.prior_mix;

  TrainConfig tcfg;
  tcfg.learning_rate = learning_rate;
  tcfg.entropy_beta = entropy_beta;

  CurriculumConfig ccfg;
  ccfg.boards_per_round = boards_per_round;
  ccfg.iterations = iters;
  ccfg.workers = search.workers;
  ccfg.seed = common.seed;
  ccfg.resample_probability = upsilon;
  ccfg.resolved_pool_cap = pool_cap;

  std::vector<Phase> phases;
  if (phase_name == "clear") phases = {Phase::Clear};
  else if (phase_name == "busy") phases = {Phase::Busy};
  else if (phase_name == "full") phases = {Phase::Clear, Phase::Busy};
  else throw std::runtime_error("--phase must be clear, busy or full");

  const fs::path ckpt_path = out / "checkpoint.bin";
  const fs::path metrics_path = out / "metrics.csv";
  auto save_state = [&](const std::vector<MetricsRow>& rows, bool append) {
    save_checkpoint(ckpt_path, {state.net, state.adam, state.iteration});
    save_pool(out / "resolved_pool.json", state.resolved_pool);
    save_archive(out / "archive.json", state.archive);
    write_metrics_csv(metrics_path, rows, append);
  };

  if (iters == 0) {
    // untrained snapshot: the random-parameter control policy
    save_state({}, resumed && fs::exists(metrics_path));
  } else {
    bool append = resumed && fs::exists(metrics_path);
    for (Phase phase : phases) {
      ccfg.phase = phase;
      const int checkpoint_every = std::max(1, iters / 5);
      int done = 0;
      while (done < iters) {
        CurriculumConfig chunk = ccfg;
        chunk.iterations = std::min(checkpoint_every, iters - done);
        const auto rows =
            run_curriculum(state, scenarios, layout, chunk, scfg, tcfg, params);
        save_state(rows, append);
        append = true;
        done += chunk.iterations;
        std::cout << "phase " << (phase == Phase::Clear ? "clear" : "busy") << " iteration "
                  << state.iteration << ": success " << rows.back().success_rate << ", reward "
                  << rows.back().mean_reward << '\n';
      }
    }
  }

  manifest.outputs = {"checkpoint.bin", "metrics.csv", "resolved_pool.json", "archive.json"};
  write_manifest(out, manifest);
  std::cout << "checkpoint -> " << ckpt_path.string() << '\n';
  return 0;
}

// ---- solve ------------------------------------------------------------------

int cmd_solve(const CommonOpts& common, const SearchOpts& search, const std::string& scenario_path,
              const std::string& checkpoint, const std::string& mode,
              const std::vector<std::string>& argv) {
  RunManifest manifest{"solve", argv, common.seed, {}, {}, {}};
  auto layout = load_layout_arg(common.layout_path, manifest);
  const RewardParams params;

  manifest.inputs.emplace_back(scenario_path, hex64(fnv64_file(scenario_path)));
  const Scenario scenario = read_scenario(scenario_path, layout);
  const Board initial = scenario_board(scenario, layout);

  manifest.inputs.emplace_back(checkpoint, hex64(fnv64_file(checkpoint)));
  Checkpoint ckpt = load_checkpoint(checkpoint);
  check_net_compat(ckpt.params, *layout);

  std::cout << "initial board:\n" << to_grid_string(initial) << '\n';

  fs::create_directories(common.out_dir);
  const fs::path out(common.out_dir);

  EpisodeOutcome outcome;
  Board final_board(layout);
  if (mode == "net") {
    const auto report = evaluate_policy(ckpt.params, {initial}, EvalMode::NetOnly,
                                        eval_search_config(search), params, 1, common.seed);
    outcome = {report.boards[0].solved ? Status::Solved : Status::FailSteps,
               report.boards[0].t_cross_s, report.boards[0].steps, report.boards[0].reward};
    // re-derive the final board for the dump
    Board b = initial;
    for (int guard = 0; guard < 64; ++guard) {
      if (evaluate(b, params)) break;
      const MaskX mask = legal_actions(b, params);
      if (!mask.any()) break;
      const auto fw = forward(ckpt.params, encode(b, params), mask);
      int best = 0;
      fw->policy.maxCoeff(&best);
      b = apply(b, action_from_id(best), params);
    }
    final_board = b;
  } else if (mode == "mcts") {
    const Trajectory t =
        play_episode(initial, ckpt.params, eval_search_config(search), params, common.seed);
    outcome = t.outcome;
    final_board = t.final_board;
    std::ofstream(out / "trajectory.json") << trajectory_to_json(t) << '\n';
    manifest.outputs.push_back("trajectory.json");
  } else {
    throw std::runtime_error("--mode must be net or mcts");
  }

  std::cout << "\nschedule:\n" << to_grid_string(final_board) << '\n';
  std::cout << "\noutcome: " << to_string(outcome.status) << " t_cross=" << outcome.t_cross_s
            << "s steps=" << outcome.steps << " reward=" << outcome.reward << '\n';

  std::ofstream(out / "schedule.json") << board_to_json(final_board) << '\n';
  manifest.outputs.push_back("schedule.json");
  write_manifest(out, manifest);
  return 0;
}

// ---- evaluate ---------------------------------------------------------------

int cmd_evaluate(const CommonOpts& common, const SearchOpts& search, const std::string& boards_path,
                 const std::string& checkpoint, const std::string& mode,
                 const std::vector<std::string>& argv) {
  RunManifest manifest{"evaluate", argv, common.seed, {}, {}, {}};
  auto layout = load_layout_arg(common.layout_path, manifest);
  const RewardParams params;

  manifest.inputs.emplace_back(boards_path, hex64(fnv64_file(boards_path)));
  const auto scenarios = read_scenarios(boards_path, layout);
  const auto boards = boards_of(scenarios, layout);
  if (boards.empty()) throw std::runtime_error("no boards in " + boards_path);

  std::optional<EvalReport> policy_report;
  if (!checkpoint.empty()) {
    manifest.inputs.emplace_back(checkpoint, hex64(fnv64_file(checkpoint)));
    Checkpoint ckpt = load_checkpoint(checkpoint);
    check_net_compat(ckpt.params, *layout);
    const EvalMode eval_mode = mode == "net" ? EvalMode::NetOnly : EvalMode::ShortPathMcts;
    policy_report = evaluate_policy(ckpt.params, boards, eval_mode, eval_search_config(search),
                                    params, search.workers, common.seed,
                                    eval_mode == EvalMode::ShortPathMcts ? search.attempts : 1);
  }

  std::vector<EpisodeOutcome> fifo;
  fifo.reserve(boards.size());
  for (const Board& b : boards) fifo.push_back(fifo_schedule(b, params));

  fs::create_directories(common.out_dir);
  const fs::path out(common.out_dir);

  const std::vector<std::string> header{
      "board",         "fingerprint",     "pnmcts_solved", "pnmcts_t_cross_s",
      "pnmcts_steps",  "pnmcts_reward",   "pnmcts_wall_s", "fifo_solved",
      "fifo_t_cross_s", "reduction_pct"};
  std::vector<std::vector<std::string>> rows;
  double reduction_sum = 0.0;
  int reduction_n = 0;
  for (std::size_t i = 0; i < boards.size(); ++i) {
    std::vector<std::string> row;
    row.push_back(std::to_string(i));
    row.push_back(hex64(fingerprint(boards[i])));
    double reduction = std::numeric_limits<double>::quiet_NaN();
    if (policy_report) {
      const BoardEval& e = policy_report->boards[i];
      row.push_back(e.solved ? "1" : "0");
      row.push_back(format_double(e.t_cross_s));
      row.push_back(std::to_string(e.steps));
      row.push_back(format_double(e.reward));
      row.push_back(format_double(e.wall_s));
      if (e.solved && fifo[i].solved() && fifo[i].t_cross_s > 0.0) {
        reduction = 100.0 * (fifo[i].t_cross_s - e.t_cross_s) / fifo[i].t_cross_s;
        reduction_sum += reduction;
        reduction_n += 1;
      }
    } else {
      for (int k = 0; k < 5; ++k) row.push_back("");
    }
    row.push_back(fifo[i].solved() ? "1" : "0");
    row.push_back(format_double(fifo[i].t_cross_s));
    row.push_back(format_double(reduction));
    rows.push_back(std::move(row));
  }
  write_csv(out / "comparison.csv", header, rows);
  manifest.outputs.push_back("comparison.csv");
  write_manifest(out, manifest);

  const int fifo_solved =
      static_cast<int>(std::count_if(fifo.begin(), fifo.end(),
                                     [](const EpisodeOutcome& o) { return o.solved(); }));
  std::cout << "boards: " << boards.size() << "\nfifo solved: " << fifo_solved << '\n';
  if (policy_report) {
    std::cout << "pnmcts solved: "
              << static_cast<int>(policy_report->success_rate * double(boards.size()) + 0.5)
              << " (success rate " << policy_report->success_rate << ")\n";
    if (reduction_n > 0) {
      std::cout << "mean crossing-time reduction vs fifo: " << reduction_sum / reduction_n
                << "% over " << reduction_n << " boards solved by both\n";
    }
  }
  std::cout << "comparison -> " << (out / "comparison.csv").string() << '\n';
  return 0;
}

// ---- simulate ---------------------------------------------------------------

int cmd_simulate(const CommonOpts& common, const SearchOpts& search, const std::string& spec_path,
                 const std::string& checkpoint, const std::vector<std::string>& argv) {
  RunManifest manifest{"simulate", argv, common.seed, {}, {}, {}};
  auto layout = load_layout_arg(common.layout_path, manifest);
  const RewardParams params;

  manifest.inputs.emplace_back(spec_path, hex64(fnv64_file(spec_path)));
  const auto specs = load_experiments(spec_path);

  std::optional<Checkpoint> ckpt;
  if (!checkpoint.empty()) {
    manifest.inputs.emplace_back(checkpoint, hex64(fnv64_file(checkpoint)));
    ckpt = load_checkpoint(checkpoint);
    check_net_compat(ckpt->params, *layout);
  }

  SearchConfig scfg = eval_search_config(search);
  scfg.simulations = std::min(scfg.simulations, 64);  // keep per-cycle solves on budget
  scfg.rollout_depth = std::min(scfg.rollout_depth, 2);

  fs::create_directories(common.out_dir);
  const fs::path out(common.out_dir);

  const std::vector<std::string> header{"spec_id", "seed",     "att_s",  "tt_veh",
                                        "violations", "injected", "exited"};
  std::vector<std::vector<std::string>> rows;
  for (const ExperimentSpec& spec : specs) {
    const bool needs_net = std::any_of(spec.controllers.begin(), spec.controllers.end(),
                                       [](ControllerKind k) { return k == ControllerKind::Agent; });
    if (needs_net && !ckpt) {
      throw std::runtime_error("experiment '" + spec.id +
                               "' has pnmcts_agent intersections but no --checkpoint was given");
    }
    const auto res = run_experiment(spec, layout, ckpt ? &ckpt->params : nullptr, scfg, params);
    rows.push_back({res.spec_id, std::to_string(res.seed),
                    res.att_s ? format_double(*res.att_s) : "",
                    std::to_string(res.tt_veh), std::to_string(res.safety_violations),
                    std::to_string(res.injected), std::to_string(res.exited)});

    std::vector<std::vector<std::string>> link_rows;
    for (const LinkTime& lt : res.per_link) {
      link_rows.push_back({lt.link, std::to_string(lt.from_node), std::to_string(lt.to_node),
                           format_double(lt.mean_travel_s), std::to_string(lt.count)});
    }
    const std::string link_file = "links_" + res.spec_id + ".csv";
    write_csv(out / link_file,
              {"link", "from_node", "to_node", "mean_travel_time_s", "vehicles"}, link_rows);
    manifest.outputs.push_back(link_file);
    std::cout << res.spec_id << ": ATT " << (res.att_s ? format_double(*res.att_s) : "n/a")
              << " s, TT " << res.tt_veh << " veh, violations " << res.safety_violations
              << ", solves " << res.solver_calls << " (fifo fallbacks " << res.solver_fallbacks
              << ")" << '\n';
  }
  write_csv(out / "results.csv", header, rows);
  manifest.outputs.push_back("results.csv");
  write_manifest(out, manifest);
  std::cout << "results -> " << (out / "results.csv").string() << '\n';
  return 0;
}

// ---- report -----------------------------------------------------------------

double to_double(const std::string& s) { return s.empty() ? 0.0 : std::stod(s); }

void report_metrics(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const int c_sr = t.column("success_rate");
  const int c_mr = t.column("mean_reward");
  if (c_sr < 0 || c_mr < 0) throw std::runtime_error("not a metrics csv: " + path.string());
  if (t.rows.empty()) {
    std::cout << "metrics: empty\n";
    return;
  }
  const std::size_t tail = std::min<std::size_t>(10, t.rows.size());
  double sr = 0, mr = 0;
  for (std::size_t i = t.rows.size() - tail; i < t.rows.size(); ++i) {
    sr += to_double(t.rows[i][c_sr]);
    mr += to_double(t.rows[i][c_mr]);
  }
  std::cout << "metrics " << path.string() << ": " << t.rows.size() << " iterations, last-"
            << tail << " success rate " << sr / double(tail) << ", mean reward "
            << mr / double(tail) << '\n';
}

void report_results(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const int c_id = t.column("spec_id"), c_att = t.column("att_s"), c_tt = t.column("tt_veh");
  if (c_id < 0 || c_att < 0 || c_tt < 0) {
    throw std::runtime_error("not a results csv: " + path.string());
  }
  std::cout << "results " << path.string() << ":\n";
  for (const auto& row : t.rows) {
    std::cout << "  " << row[c_id] << ": ATT "
              << (row[c_att].empty() ? "n/a" : row[c_att] + " s") << ", TT " << row[c_tt]
              << " veh\n";
  }
}

void report_comparison(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const int c_ps = t.column("pnmcts_solved"), c_fs = t.column("fifo_solved"),
            c_red = t.column("reduction_pct");
  if (c_ps < 0 || c_fs < 0 || c_red < 0) {
    throw std::runtime_error("not a comparison csv: " + path.string());
  }
  int pn = 0, fifo = 0, n_red = 0;
  double red = 0;
  for (const auto& row : t.rows) {
    pn += row[c_ps] == "1";
    fifo += row[c_fs] == "1";
    if (!row[c_red].empty()) {
      red += to_double(row[c_red]);
      n_red += 1;
    }
  }
  std::cout << "comparison " << path.string() << ": " << t.rows.size() << " boards, pnmcts solved "
            << pn << ", fifo solved " << fifo;
  if (n_red > 0) std::cout << ", mean reduction " << red / n_red << "%";
  std::cout << '\n';
}

int cmd_report(const std::string& metrics, const std::string& results,
               const std::string& comparison) {
  if (metrics.empty() && results.empty() && comparison.empty()) {
    throw std::runtime_error("report: pass --metrics, --results and/or --comparison");
  }
  if (!metrics.empty()) report_metrics(metrics);
  if (!results.empty()) report_results(results);
  if (!comparison.empty()) report_comparison(comparison);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"platoon intersection scheduling: occupancy boards, neural tree search, traffic "
               "simulation"};
  app.require_subcommand(1);
  std::vector<std::string> raw_args(argv, argv + argc);

  // generate
  CommonOpts gen_common;
  int gen_count = 500;
  std::string gen_split;
  bool gen_desk = false;
  auto* gen = app.add_subcommand("generate", "sample unique conflicted scenarios");
  add_common(gen, gen_common, "generate");
  gen->add_option("--count", gen_count, "number of scenarios")
      ->check(CLI::PositiveNumber)
      ->default_val("500");
  gen->add_option("--split", gen_split, "TRAIN:TEST split, e.g. 400:100");
  gen->add_flag("--desk", gen_desk, "desk-scale ranges (2-4 platoons)");

  // train
  CommonOpts train_common;
  SearchOpts train_search;
  std::string train_scenarios, train_phase = "full", train_resume;
  int train_iters = 200;
  bool train_desk = false;
  int train_layers = 10, train_width = 512, train_bpr = 16;
  double train_upsilon = 0.25, train_lr = 1e-3, train_beta = 0.01;
  int train_pool_cap = 64;
  auto* train = app.add_subcommand("train", "curriculum self-play training");
  add_common(train, train_common, "train");
  add_search(train, train_search);
  train->add_option("--scenarios", train_scenarios, "training scenario file")->required();
  train->add_option("--phase", train_phase, "clear | busy | full")->default_val("full");
  train->add_option("--iters", train_iters, "iterations per phase")->default_val("200");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_flag("--desk", train_desk, "desk-scale network and search budget");
  train->add_option("--hidden-layers", train_layers)->default_val("10");
  train->add_option("--hidden-width", train_width)->default_val("512");
  train->add_option("--boards-per-round", train_bpr)->default_val("16");
  train->add_option("--upsilon", train_upsilon, "best-so-far resample probability")
      ->default_val("0.25");
  train->add_option("--lr", train_lr)->default_val("0.001");
  train->add_option("--beta", train_beta, "entropy weight (busy phase)")->default_val("0.01");
  train->add_option("--pool-cap", train_pool_cap, "resolved-board pool size")->default_val("64");

  // solve
  CommonOpts solve_common;
  SearchOpts solve_search;
  std::string solve_scenario, solve_ckpt, solve_mode = "mcts";
  auto* solve = app.add_subcommand("solve", "schedule one scenario");
  add_common(solve, solve_common, "solve");
  add_search(solve, solve_search);
  solve->add_option("--scenario", solve_scenario, "scenario file")->required();
  solve->add_option("--checkpoint", solve_ckpt, "network checkpoint")->required();
  solve->add_option("--mode", solve_mode, "net | mcts")->default_val("mcts");

  // evaluate
  CommonOpts eval_common;
  SearchOpts eval_search;
  std::string eval_boards, eval_ckpt, eval_mode = "mcts";
  bool eval_fifo = true;
  auto* evaluate = app.add_subcommand("evaluate", "compare against the FIFO baseline");
  add_common(evaluate, eval_common, "evaluate");
  add_search(evaluate, eval_search);
  evaluate->add_option("--boards", eval_boards, "scenario file to evaluate")->required();
  evaluate->add_option("--checkpoint", eval_ckpt, "network checkpoint (omit for FIFO only)");
  evaluate->add_option("--mode", eval_mode, "net | mcts")->default_val("mcts");
  evaluate->add_flag("--baseline-fifo,!--no-baseline-fifo", eval_fifo,
                     "include the FIFO baseline (always on)");

  // simulate
  CommonOpts sim_common;
  SearchOpts sim_search;
  std::string sim_spec, sim_ckpt;
  auto* simulate = app.add_subcommand("simulate", "run network experiments");
  add_common(simulate, sim_common, "simulate");
  add_search(simulate, sim_search);
  simulate->add_option("--spec", sim_spec, "experiment spec file")->required();
  simulate->add_option("--checkpoint", sim_ckpt, "network checkpoint for agent intersections");

  // report
  std::string rep_metrics, rep_results, rep_comparison;
  auto* report = app.add_subcommand("report", "summarize emitted csv files");
  report->add_option("--metrics", rep_metrics, "metrics csv from train");
  report->add_option("--results", rep_results, "results csv from simulate");
  report->add_option("--comparison", rep_comparison, "comparison csv from evaluate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(gen_common, gen_count, gen_split, gen_desk, raw_args);
    if (train->parsed()) {
      return cmd_train(train_common, train_search, train_scenarios, train_phase, train_iters,
                       train_resume, train_desk, train_layers, train_width, train_bpr,
                       train_upsilon, train_lr, train_beta, train_pool_cap, raw_args);
    }
    if (solve->parsed()) {
      return cmd_solve(solve_common, solve_search, solve_scenario, solve_ckpt, solve_mode,
                       raw_args);
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(eval_common, eval_search, eval_boards, eval_ckpt, eval_mode, raw_args);
    }
    if (simulate->parsed()) {
      return cmd_simulate(sim_common, sim_search, sim_spec, sim_ckpt, raw_args);
    }
    if (report->parsed()) return cmd_report(rep_metrics, rep_results, rep_comparison);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
