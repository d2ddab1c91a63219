// scrl: state-constrained offline RL laboratory CLI.
//
// Subcommands: gen-data, build-reach, train, eval, render, reach-report.
// Exit codes: 0 success, 2 input/config error, 3 numeric failure.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "scrl/common.hpp"
#include "scrl/dataset.hpp"
#include "scrl/kern.hpp"
#include "scrl/manifest.hpp"
#include "scrl/mdp.hpp"
#include "scrl/nn.hpp"
#include "scrl/pointmass.hpp"
#include "scrl/reachability.hpp"
#include "scrl/render.hpp"
#include "scrl/stacq.hpp"
#include "scrl/tabular.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scrl;

namespace {

uint64_t env_seed_fallback(uint64_t cli_seed, bool seed_given) {
  if (seed_given) return cli_seed;
  if (const char* env = std::getenv("SCRL_SEED")) {
    try {
      return std::stoull(env);
    } catch (...) {
      throw ConfigError(std::string("SCRL_SEED is not an integer: ") + env);
    }
  }
  return cli_seed;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

RunManifest make_manifest(const std::string& command, int argc, char** argv,
                          uint64_t seed) {
  RunManifest m;
  m.command = command;
  for (int i = 0; i < argc; ++i) m.args.push_back(argv[i]);
  m.seed = seed;
  m.simd_mode = kern::mode_name();
  return m;
}

// --- stacq flat key=value config files ---

StacqConfig parse_stacq_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  StacqConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    line.erase(0, line.find_first_not_of(" \t"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " is not key=value");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "iterations") cfg.iterations = std::stoi(val);
      else if (key == "batch_size") cfg.batch_size = std::stoi(val);
      else if (key == "tau") cfg.tau = std::stod(val);
      else if (key == "gamma") cfg.gamma = std::stod(val);
      else if (key == "actor_lr") cfg.actor_lr = std::stod(val);
      else if (key == "critic_lr") cfg.critic_lr = std::stod(val);
      else if (key == "alpha_reg") cfg.alpha_reg = std::stod(val);
      else if (key == "lambda_floor") cfg.lambda_floor = std::stod(val);
      else if (key == "noise") cfg.noise = std::stod(val);
      else if (key == "noise_as_variance") cfg.noise_as_variance = (val == "true" || val == "1");
      else if (key == "cosine_actor") cfg.cosine_actor = (val == "true" || val == "1");
      else if (key == "critic_count") cfg.critic_count = std::stoi(val);
      else if (key == "independent_targets") cfg.independent_targets = (val == "true" || val == "1");
      else if (key == "eval_interval") cfg.eval_interval = std::stoi(val);
      else if (key == "eval_episodes") cfg.eval_episodes = std::stoi(val);
      else if (key == "hidden") cfg.hidden = std::stoi(val);
      else if (key == "hidden_layers") cfg.hidden_layers = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else throw ConfigError("unknown config key '" + key + "' at line " + std::to_string(line_no));
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad value for '" + key + "' at line " + std::to_string(line_no));
    }
  }
  return cfg;
}

std::string stacq_config_echo(const StacqConfig& c) {
  std::ostringstream os;
  os << "iterations=" << c.iterations << "\n";
  os << "batch_size=" << c.batch_size << "\n";
  os << "tau=" << c.tau << "\n";
  os << "gamma=" << c.gamma << "\n";
  os << "actor_lr=" << c.actor_lr << "\n";
  os << "critic_lr=" << c.critic_lr << "\n";
  os << "alpha_reg=" << c.alpha_reg << "\n";
  os << "lambda_floor=" << c.lambda_floor << "\n";
  os << "noise=" << c.noise << "\n";
  os << "noise_as_variance=" << (c.noise_as_variance ? "true" : "false") << "\n";
  os << "cosine_actor=" << (c.cosine_actor ? "true" : "false") << "\n";
  os << "critic_count=" << c.critic_count << "\n";
  os << "independent_targets=" << (c.independent_targets ? "true" : "false") << "\n";
  os << "eval_interval=" << c.eval_interval << "\n";
  os << "eval_episodes=" << c.eval_episodes << "\n";
  os << "hidden=" << c.hidden << "\n";
  os << "hidden_layers=" << c.hidden_layers << "\n";
  os << "seed=" << c.seed << "\n";
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Maze policy artifact: per-cell next cell plus the primitive action path.
json maze_policy_json(const MazeMdp& maze, const std::vector<int>& next_policy) {
  json entries = json::array();
  for (int s = 0; s < maze.mdp.num_states(); ++s) {
    const int sp = next_policy[size_t(s)];
    if (sp < 0) continue;
    const auto [x, y] = maze.cell_of(s);
    const auto [nx, ny] = maze.cell_of(sp);
    const int a = inverse_dynamics_lookup(maze.mdp, s, sp);
    entries.push_back({{"cell", {x, y}}, {"next", {nx, ny}}, {"actions", {a}}});
  }
  return json{{"type", "maze_policy"}, {"entries", entries}};
}

json maze_policy_json_kstep(const MazeMdp& maze,
                            const std::vector<std::optional<KStepEdge>>& policy) {
  json entries = json::array();
  for (int s = 0; s < maze.mdp.num_states(); ++s) {
    if (!policy[size_t(s)]) continue;
    const auto& e = *policy[size_t(s)];
    const auto [x, y] = maze.cell_of(s);
    const auto [nx, ny] = maze.cell_of(e.dst);
    entries.push_back({{"cell", {x, y}}, {"next", {nx, ny}}, {"actions", e.actions}});
  }
  return json{{"type", "maze_policy"}, {"entries", entries}};
}

// Loads a maze policy artifact into a next-state map over maze.mdp ids, plus
// the action paths for execution.
struct LoadedMazePolicy {
  std::vector<int> next;                       // -1 = blank
  std::vector<std::vector<int>> action_paths;  // per state
};

LoadedMazePolicy load_maze_policy(const std::string& path, const MazeMdp& maze) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("policy parse error: ") + e.what());
  }
  if (j.value("type", "") != "maze_policy")
    throw ValidationError("artifact is not a maze policy: " + path);
  LoadedMazePolicy p;
  p.next.assign(size_t(maze.mdp.num_states()), -1);
  p.action_paths.assign(size_t(maze.mdp.num_states()), {});
  for (const auto& e : j.at("entries")) {
    const int s = maze.id_of(e.at("cell").at(0).get<int>(), e.at("cell").at(1).get<int>());
    p.next[size_t(s)] = maze.id_of(e.at("next").at(0).get<int>(), e.at("next").at(1).get<int>());
    p.action_paths[size_t(s)] = e.at("actions").get<std::vector<int>>();
  }
  return p;
}

PointMassEnv default_pointmass() { return PointMassEnv{}; }

EvalEnv pointmass_eval_env(const PointMassEnv& env) {
  EvalEnv e;
  e.reset = [env](Rng& rng) { return env.sample_start(rng); };
  e.step = [env](const Vec& s, const Vec& a) {
    Vec sp = env.step_state(s, a);
    const double r = env.reward(s, sp);
    const bool done = env.in_goal(sp);
    return std::make_tuple(std::move(sp), r, done);
  };
  e.max_steps = env.max_episode_len;
  return e;
}

// --- subcommand implementations ---

int cmd_gen_data(const std::string& scenario_path, const std::string& env_name,
                 int transitions, double noise, uint64_t seed, const std::string& out,
                 int argc, char** argv) {
  Timer timer;
  RunManifest manifest = make_manifest("gen-data", argc, argv, seed);
  Dataset d;
  if (!scenario_path.empty()) {
    const MazeScenario sc = MazeScenario::from_json_file(scenario_path);
    const MazeMdp maze = grid_maze_from_scenario(sc);
    d = dataset_from_maze(maze);
    manifest.add_input(scenario_path);
  } else if (env_name == "pointmass") {
    d = default_pointmass().generate_dataset(transitions, seed, noise);
  } else {
    throw ConfigError("gen-data needs --scenario or --env pointmass");
  }
  d.validate();
  save_dataset(d, out);
  manifest.outputs.push_back(out);
  manifest.wall_clock_sec = timer.seconds();
  manifest.write(out + ".manifest.json");
  std::cout << "wrote " << d.records.size() << " records to " << out << "\n";
  return 0;
}

struct ReachFlags {
  double eps = 0.1;
  std::string norm = "linf";
  bool scaled = true;
  int k = 1;
  int n_random = 64;
  bool bypass_index = false;
  int max_cands = 0;
};

int cmd_build_reach(const std::string& data_path, const std::string& out,
                    bool exact_grid, const std::string& scenario_path,
                    std::string models_dir, bool train_models, int ens_fwd, int ens_inv,
                    int model_hidden, int model_layers, double model_lr,
                    int model_epochs, bool normalize, const ReachFlags& rf,
                    uint64_t seed, int argc, char** argv) {
  Timer timer;
  RunManifest manifest = make_manifest("build-reach", argc, argv, seed);
  manifest.add_input(data_path);
  const Dataset raw = load_dataset(data_path);

  ReachabilityIndex index;
  if (exact_grid) {
    if (scenario_path.empty()) throw ConfigError("--exact-grid needs --scenario");
    manifest.add_input(scenario_path);
    const MazeMdp maze = grid_maze_from_scenario(MazeScenario::from_json_file(scenario_path));
    const StateIndex ds = unique_states(raw);
    index = exact_grid_reach_index_dataset(maze, ds, rf.k);
  } else {
    const Dataset pipeline = normalize ? normalize_states(raw) : raw;
    const StateIndex ds = unique_states(pipeline);

    MlpEnsemble fwd, inv;
    const std::string fwd_path = models_dir + "/forward.json";
    const std::string inv_path = models_dir + "/inverse.json";
    if (train_models) {
      if (models_dir.empty()) throw ConfigError("--train-models needs --models <dir>");
      fs::create_directories(models_dir);
      std::vector<int> fwd_sizes{pipeline.state_dim + pipeline.action_dim};
      std::vector<int> inv_sizes{2 * pipeline.state_dim};
      for (int l = 0; l < model_layers; ++l) {
        fwd_sizes.push_back(model_hidden);
        inv_sizes.push_back(model_hidden);
      }
      fwd_sizes.push_back(pipeline.state_dim);
      inv_sizes.push_back(pipeline.action_dim);
      fwd = MlpEnsemble::make(ens_fwd, fwd_sizes, mix_seed(seed, 0xF0));
      inv = MlpEnsemble::make(ens_inv, inv_sizes, mix_seed(seed, 0x10));
      TrainSpec spec;
      spec.lr = model_lr;
      spec.max_epochs = model_epochs;
      spec.shuffle_seed = seed;
      spec.target = TrainSpec::Target::next_state_delta;
      const auto fwd_reports = train_forward_model(fwd, pipeline, spec);
      fwd.save(fwd_path, &spec);
      spec.target = TrainSpec::Target::action;
      const auto inv_reports = train_inverse_model(inv, pipeline, spec);
      inv.save(inv_path, &spec);
      for (size_t m = 0; m < fwd_reports.size(); ++m)
        std::cout << "forward[" << m << "]: " << fwd_reports[m].epochs
                  << " epochs, holdout mse " << fwd_reports[m].holdout_mse << "\n";
      for (size_t m = 0; m < inv_reports.size(); ++m)
        std::cout << "inverse[" << m << "]: " << inv_reports[m].epochs
                  << " epochs, holdout mse " << inv_reports[m].holdout_mse << "\n";
      manifest.outputs.push_back(fwd_path);
      manifest.outputs.push_back(inv_path);
    } else {
      if (models_dir.empty() || !fs::exists(fwd_path) || !fs::exists(inv_path))
        throw ConfigError("models not found under '" + models_dir +
                          "' (expected forward.json and inverse.json); pass "
                          "--train-models or --exact-grid");
      manifest.add_input(fwd_path);
      manifest.add_input(inv_path);
      fwd = MlpEnsemble::load(fwd_path);
      inv = MlpEnsemble::load(inv_path);
    }

    // Action bounds from the dataset envelope.
    Vec alo(size_t(pipeline.action_dim), 0.0), ahi(size_t(pipeline.action_dim), 0.0);
    bool first = true;
    for (const auto& r : pipeline.records) {
      if (first) {
        alo = r.a;
        ahi = r.a;
        first = false;
      } else {
        kern::minmax_acc(r.a.data(), alo.data(), ahi.data(), r.a.size());
      }
    }

    ReachCriterion crit;
    crit.norm = norm_from_name(rf.norm);
    crit.epsilon = rf.eps;
    crit.scaled = rf.scaled;
    ReachBuildOptions opt;
    opt.n_random = rf.n_random;
    opt.action_lo = alo;
    opt.action_hi = ahi;
    opt.bypass_index = rf.bypass_index;
    opt.max_candidates = rf.max_cands;
    opt.k = rf.k;
    opt.seed = seed;
    index = build_reachability_index(ds.states, fwd, inv, crit, opt);
  }

  index.save(out);
  manifest.outputs.push_back(out);
  manifest.wall_clock_sec = timer.seconds();
  manifest.write(out + ".manifest.json");
  const ReachReport rep = reachability_report(index, nullptr);
  std::cout << rep.to_text();
  return 0;
}

int cmd_train_tabular(const std::string& algo, const std::string& data_path,
                      const std::string& scenario_path, double alpha, double gamma,
                      int sweeps, int reach_k, const std::string& out_table,
                      const std::string& out_policy, const std::string& metrics_path,
                      uint64_t seed, int argc, char** argv) {
  Timer timer;
  RunManifest manifest = make_manifest("train tabular", argc, argv, seed);
  manifest.add_input(data_path);
  manifest.add_input(scenario_path);
  const Dataset d = load_dataset(data_path);
  const MazeMdp maze = grid_maze_from_scenario(MazeScenario::from_json_file(scenario_path));
  const IndexedDataset idx = IndexedDataset::from(d, maze.mdp);

  LearnerConfig cfg;
  cfg.alpha = alpha;
  cfg.gamma = gamma;
  cfg.sweeps = sweeps;
  cfg.seed = seed;

  std::vector<MetricsRow> metrics;
  auto note_sweep = [&metrics](int sweep, double max_update) {
    MetricsRow row;
    row.iteration = sweep;
    row.critic_loss = max_update;  // for tabular runs this column is max |update|
    row.actor_loss = 0.0;
    row.mean_q = 0.0;
    row.eval_return_mean = std::numeric_limits<double>::quiet_NaN();
    row.eval_return_std = std::numeric_limits<double>::quiet_NaN();
    metrics.push_back(row);
  };

  json policy_json;
  std::string table_text;
  if (algo == "scql") {
    if (reach_k <= 1) {
      const ReachabilityIndex reach = exact_grid_reach_index(maze, idx, 1);
      std::vector<std::vector<int>> reach_sets(size_t(maze.mdp.num_states()));
      for (int s : idx.states) reach_sets[size_t(s)] = reach.id_set(s);
      auto reward_fn = [&maze](int s, int sp) {
        const auto r = maze.mdp.reward_of(s, sp);
        if (!r) throw ConfigError("no reward for reachable pair");
        return *r;
      };
      const QssTable table =
          scql_train(idx, reach_sets, reward_fn, maze.mdp.terminal, cfg,
                     [&note_sweep](int sweep, const QssTable&, double mu) {
                       note_sweep(sweep, mu);
                     });
      const auto policy = extract_policy_scql(table, maze.mdp.num_states(), idx,
                                              reach_sets, maze.mdp.terminal);
      policy_json = maze_policy_json(maze, policy);
      table_text = table.to_json_text(maze.mdp.states);
    } else {
      const auto edges = build_kstep_edges(maze.mdp, idx, reach_k, cfg.gamma);
      const QssTable table = scql_train_kstep(edges, idx, maze.mdp.terminal, cfg);
      const auto policy =
          extract_policy_kstep(table, edges, idx, maze.mdp.terminal, cfg.gamma);
      policy_json = maze_policy_json_kstep(maze, policy);
      table_text = table.to_json_text(maze.mdp.states);
    }
  } else if (algo == "bcql") {
    const QsaTable table = bcql_train(idx, maze.mdp.terminal, cfg);
    const auto policy = extract_policy_bcql(table, maze.mdp.num_states(), idx,
                                            maze.mdp.terminal);
    // Action policy rendered/evaluated through the successor it induces.
    std::vector<int> next_policy(size_t(maze.mdp.num_states()), -1);
    for (int s = 0; s < maze.mdp.num_states(); ++s)
      if (policy[size_t(s)] >= 0)
        next_policy[size_t(s)] = maze.mdp.next[size_t(s)][size_t(policy[size_t(s)])];
    policy_json = maze_policy_json(maze, next_policy);
    table_text = table.to_json_text(maze.mdp.states);
  } else {
    throw ConfigError("unknown tabular algorithm '" + algo + "' (scql|bcql)");
  }

  write_text(out_table, table_text + "\n");
  manifest.outputs.push_back(out_table);
  if (!out_policy.empty()) {
    write_text(out_policy, policy_json.dump(2) + "\n");
    manifest.outputs.push_back(out_policy);
  }
  if (!metrics_path.empty()) {
    write_metrics_csv(metrics_path, metrics);
    manifest.outputs.push_back(metrics_path);
  }
  manifest.wall_clock_sec = timer.seconds();
  manifest.write(out_table + ".manifest.json");
  std::cout << "trained " << algo << " on " << idx.states.size() << " dataset states\n";
  return 0;
}

int cmd_train_deep(const std::string& mode, const std::string& data_path,
                   const std::string& reach_path, const std::string& models_dir,
                   const std::string& config_path, const std::string& env_reward,
                   bool normalize, const std::string& out_dir, StacqConfig cfg,
                   bool config_from_file, uint64_t seed, int argc, char** argv) {
  Timer timer;
  RunManifest manifest = make_manifest("train " + mode, argc, argv, seed);
  manifest.add_input(data_path);
  manifest.add_input(reach_path);
  if (config_from_file) manifest.add_input(config_path);

  const Dataset raw = load_dataset(data_path);
  ReachabilityIndex reach = ReachabilityIndex::load(reach_path);

  const std::string fwd_path = models_dir + "/forward.json";
  if (models_dir.empty() || !fs::exists(fwd_path))
    throw ConfigError("forward model not found under '" + models_dir + "'");
  manifest.add_input(fwd_path);
  const MlpEnsemble fwd = MlpEnsemble::load(fwd_path);

  // Action bounds from the dataset envelope.
  Vec alo(size_t(raw.action_dim)), ahi(size_t(raw.action_dim));
  bool first = true;
  for (const auto& r : raw.records) {
    if (first) {
      alo = r.a;
      ahi = r.a;
      first = false;
    } else {
      kern::minmax_acc(r.a.data(), alo.data(), ahi.data(), r.a.size());
    }
  }

  const StacqProblem prob = StacqProblem::assemble(raw, normalize, std::move(reach), alo, ahi);

  RewardSpec reward;
  MlpEnsemble reward_model;
  std::optional<EvalEnv> eval_env;
  if (env_reward == "pointmass") {
    const PointMassEnv env = default_pointmass();
    reward.env = [env](const Vec& s, const Vec& sp) { return env.reward(s, sp); };
    eval_env = pointmass_eval_env(env);
  } else if (env_reward.empty() || env_reward == "none") {
    std::vector<int> sizes{2 * raw.state_dim};
    for (int l = 0; l < cfg.hidden_layers; ++l) sizes.push_back(cfg.hidden);
    sizes.push_back(1);
    reward_model = MlpEnsemble::make(1, sizes, mix_seed(cfg.seed, 0x3E));
    reward.model = &reward_model;
    reward.train_model = true;
  } else {
    throw ConfigError("unknown --env-reward '" + env_reward + "' (pointmass|none)");
  }

  const StacqResult res = (mode == "stacq")
                              ? train_stacq(prob, fwd, reward, eval_env, cfg)
                              : train_onestep(prob, fwd, reward, eval_env, cfg);

  fs::create_directories(out_dir);
  const std::string actor_path = out_dir + "/actor.json";
  write_text(actor_path, res.actor.net.to_json_text() + "\n");
  manifest.outputs.push_back(actor_path);
  json critics = json::array();
  for (const auto& c : res.critics.online) critics.push_back(json::parse(c.to_json_text()));
  const std::string critics_path = out_dir + "/critics.json";
  write_text(critics_path, critics.dump() + "\n");
  manifest.outputs.push_back(critics_path);

  json norm_j;
  if (prob.norm) {
    norm_j = {{"mean", prob.norm->mean}, {"std", prob.norm->stddev}, {"eps", prob.norm->eps}};
  } else {
    norm_j = nullptr;
  }
  const std::string norm_path = out_dir + "/normalization.json";
  write_text(norm_path, norm_j.dump() + "\n");
  manifest.outputs.push_back(norm_path);

  const std::string cfg_path = out_dir + "/config.txt";
  write_text(cfg_path, stacq_config_echo(cfg));
  manifest.outputs.push_back(cfg_path);

  const std::string metrics_path = out_dir + "/metrics.csv";
  write_metrics_csv(metrics_path, res.metrics);
  manifest.outputs.push_back(metrics_path);

  manifest.wall_clock_sec = timer.seconds();
  manifest.write(out_dir + "/manifest.json");
  if (!res.metrics.empty()) {
    const auto& last = res.metrics.back();
    std::cout << "final: iter " << last.iteration << " critic_loss " << last.critic_loss
              << " actor_loss " << last.actor_loss << " eval " << last.eval_return_mean
              << " +- " << last.eval_return_std << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& policy_path, const std::string& scenario_path,
             const std::string& env_name, const std::string& data_path, int episodes,
             int seeds, uint64_t seed, const std::string& out, int argc, char** argv) {
  Timer timer;
  std::ostringstream report;
  if (!scenario_path.empty()) {
    const MazeMdp maze = grid_maze_from_scenario(MazeScenario::from_json_file(scenario_path));
    const LoadedMazePolicy pol = load_maze_policy(policy_path, maze);
    std::vector<int> eval_states;
    if (!data_path.empty()) {
      const Dataset d = load_dataset(data_path);
      const IndexedDataset idx = IndexedDataset::from(d, maze.mdp);
      eval_states = idx.states;
    } else {
      for (int s = 0; s < maze.mdp.num_states(); ++s) eval_states.push_back(s);
    }
    const int goal = maze.goal_id();
    const int budget = 4 * maze.scenario.width * maze.scenario.height;
    int successes = 0;
    double return_acc = 0.0;
    for (int s0 : eval_states) {
      int s = s0;
      bool ok = (s == goal);
      double ret = 0.0;
      for (int t = 0; t < budget && !ok; ++t) {
        if (pol.next[size_t(s)] < 0) break;
        for (int a : pol.action_paths[size_t(s)]) {
          const auto [sp, r] = maze.mdp.step(s, a);
          ret += r;
          s = sp;
          if (s == goal) {
            ok = true;
            break;
          }
        }
      }
      successes += ok ? 1 : 0;
      return_acc += ret;
    }
    report << "success states: " << successes << " / " << eval_states.size() << "\n";
    if (!eval_states.empty())
      report << "mean undiscounted return from dataset states: "
             << return_acc / double(eval_states.size()) << "\n";
  } else if (env_name == "pointmass") {
    const PointMassEnv env = default_pointmass();
    const std::string actor_path = policy_path + "/actor.json";
    const Mlp actor = Mlp::from_json_text(read_text(actor_path));
    std::optional<NormalizationStats> norm;
    const std::string norm_path = policy_path + "/normalization.json";
    if (fs::exists(norm_path)) {
      const json j = json::parse(read_text(norm_path));
      if (!j.is_null()) {
        NormalizationStats st;
        st.mean = j.at("mean").get<Vec>();
        st.stddev = j.at("std").get<Vec>();
        st.eps = j.at("eps").get<double>();
        norm = st;
      }
    }
    if (int(actor.in_dim()) != env.state_dim())
      throw ValidationError("actor input dim " + std::to_string(actor.in_dim()) +
                            " does not match env state dim " +
                            std::to_string(env.state_dim()));
    auto act = [&](const Vec& raw_s) {
      const Vec s = norm ? norm->apply(raw_s) : raw_s;
      Vec a = actor.forward(s);
      for (auto& v : a) v = std::clamp(v, -env.action_limit, env.action_limit);
      return a;
    };
    double total_mean = 0.0;
    for (int sd = 0; sd < seeds; ++sd) {
      Rng rng(mix_seed(seed, 0x5EED + uint64_t(sd)));
      double acc = 0.0;
      for (int ep = 0; ep < episodes; ++ep) acc += env.rollout_return(act, rng);
      const double mean = episodes > 0 ? acc / double(episodes) : 0.0;
      total_mean += mean;
      report << "seed " << sd << ": mean return " << mean << " over " << episodes
             << " episodes\n";
    }
    if (seeds > 0 && episodes > 0)
      report << "overall mean: " << total_mean / double(seeds) << "\n";
  } else {
    throw ConfigError("eval needs --scenario (maze) or --env pointmass");
  }
  std::cout << report.str();
  if (!out.empty()) {
    write_text(out, report.str());
    RunManifest manifest = make_manifest("eval", argc, argv, seed);
    manifest.add_input(policy_path.empty() ? data_path : policy_path);
    manifest.outputs.push_back(out);
    manifest.wall_clock_sec = timer.seconds();
    manifest.write(out + ".manifest.json");
  }
  return 0;
}

int cmd_render(const std::string& policy_path, const std::string& table_path,
               const std::string& scenario_path, const std::string& format,
               const std::string& out) {
  const MazeMdp maze = grid_maze_from_scenario(MazeScenario::from_json_file(scenario_path));
  std::vector<int> next_policy(size_t(maze.mdp.num_states()), -1);
  if (!policy_path.empty()) {
    const LoadedMazePolicy pol = load_maze_policy(policy_path, maze);
    next_policy = pol.next;
  } else if (!table_path.empty()) {
    // Rendering a raw table: argmax over the entries present for each state;
    // states with no entries stay blank.
    json j;
    try {
      j = json::parse(read_text(table_path));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("table parse error: ") + e.what());
    }
    if (j.value("type", "") != "qss")
      throw ValidationError("render --table expects a QSS table artifact");
    const auto states = j.at("states").get<std::vector<Vec>>();
    for (const auto& entry : j.at("entries")) {
      const int si = entry.at(0).get<int>();
      const int di = entry.at(1).get<int>();
      const double q = entry.at(2).get<double>();
      const auto& sv = states.at(size_t(si));
      const auto& dv = states.at(size_t(di));
      const int s = maze.id_of(int(sv[0]), int(sv[1]));
      const int sp = maze.id_of(int(dv[0]), int(dv[1]));
      if (next_policy[size_t(s)] < 0) {
        next_policy[size_t(s)] = sp;
      } else {
        // keep the argmax; ties to the lower state index
        const auto& cur = maze.cell_of(next_policy[size_t(s)]);
        const int cur_id = maze.id_of(cur.first, cur.second);
        double cur_q = 0.0;
        for (const auto& e2 : j.at("entries"))
          if (e2.at(0).get<int>() == si) {
            const auto& v2 = states.at(size_t(e2.at(1).get<int>()));
            if (maze.id_of(int(v2[0]), int(v2[1])) == cur_id) cur_q = e2.at(2).get<double>();
          }
        if (q > cur_q || (q == cur_q && sp < cur_id)) next_policy[size_t(s)] = sp;
      }
    }
  } else {
    throw ConfigError("render needs --policy or --table");
  }

  std::string text;
  if (format == "ascii") text = render_maze_ascii(maze, next_policy);
  else if (format == "svg") text = render_maze_svg(maze, next_policy);
  else throw ConfigError("unknown format '" + format + "' (ascii|svg)");
  if (out.empty()) std::cout << text;
  else write_text(out, text);
  return 0;
}

int cmd_reach_report(const std::string& reach_path, const std::string& scenario_path,
                     const std::string& data_path) {
  const ReachabilityIndex index = ReachabilityIndex::load(reach_path);
  std::optional<std::vector<std::vector<int>>> truth;
  if (!scenario_path.empty()) {
    if (data_path.empty()) throw ConfigError("grid truth needs --data");
    const MazeMdp maze = grid_maze_from_scenario(MazeScenario::from_json_file(scenario_path));
    const Dataset d = load_dataset(data_path);
    const StateIndex ds = unique_states(d);
    const ReachabilityIndex exact = exact_grid_reach_index_dataset(maze, ds, index.k);
    std::vector<std::vector<int>> t;
    for (int s = 0; s < exact.size(); ++s) t.push_back(exact.id_set(s));
    truth = std::move(t);
  }
  const ReachReport rep = reachability_report(index, truth ? &*truth : nullptr);
  std::cout << rep.to_text();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scrl: state-constrained offline RL laboratory"};
  app.require_subcommand(1);

  std::string workdir;
  app.add_option("--workdir", workdir, "Run with this working directory");

  uint64_t seed = 0;
  bool seed_given = false;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate an offline dataset");
  std::string gd_scenario, gd_env, gd_out;
  int gd_transitions = 5000;
  double gd_noise = 0.12;
  gen->add_option("--scenario", gd_scenario, "Maze scenario JSON (trajectories become the dataset)");
  gen->add_option("--env", gd_env, "Environment name (pointmass)");
  gen->add_option("--transitions", gd_transitions, "Minimum transitions (pointmass)");
  gen->add_option("--noise", gd_noise, "Behavior policy noise std (pointmass)");
  gen->add_option("--out", gd_out, "Output dataset path")->required();
  gen->add_option("--seed", seed, "Seed")->each([&](const std::string&) { seed_given = true; });

  // build-reach
  auto* br = app.add_subcommand("build-reach", "Build a reachability index");
  std::string br_data, br_out, br_scenario, br_models;
  bool br_exact_grid = false, br_train_models = false, br_normalize = true;
  int br_ens_fwd = 7, br_ens_inv = 3, br_model_hidden = 256, br_model_layers = 3;
  int br_model_epochs = 60;
  double br_model_lr = 4e-3;
  ReachFlags rf;
  br->add_option("--data", br_data, "Dataset path")->required();
  br->add_option("--out", br_out, "Output index path")->required();
  br->add_flag("--exact-grid", br_exact_grid, "Exact grid reachability (mazes)");
  br->add_option("--scenario", br_scenario, "Maze scenario (with --exact-grid)");
  br->add_option("--models", br_models, "Model directory (forward.json, inverse.json)");
  br->add_flag("--train-models", br_train_models, "Fit the dynamics ensembles first");
  br->add_option("--ensemble-fwd", br_ens_fwd, "Forward ensemble size");
  br->add_option("--ensemble-inv", br_ens_inv, "Inverse ensemble size");
  br->add_option("--model-hidden", br_model_hidden, "Dynamics model width");
  br->add_option("--model-layers", br_model_layers, "Dynamics model depth");
  br->add_option("--model-lr", br_model_lr, "Dynamics model learning rate");
  br->add_option("--model-epochs", br_model_epochs, "Dynamics model epoch cap");
  br->add_flag("--normalize,!--no-normalize", br_normalize, "Normalize states first");
  br->add_option("--reach-eps", rf.eps, "Acceptance threshold epsilon");
  br->add_option("--reach-norm", rf.norm, "Residual norm (l1|l2|linf)");
  br->add_flag("--reach-scaled,!--reach-unscaled", rf.scaled, "Range-scaled residuals");
  br->add_option("--reach-k", rf.k, "Reachability steps k");
  br->add_option("--n-random", rf.n_random, "Random actions for the range box");
  br->add_flag("--bypass-index", rf.bypass_index, "Linear scan instead of the spatial index");
  br->add_option("--max-cands", rf.max_cands, "Cap candidates per state (0 = unlimited)");
  br->add_option("--seed", seed, "Seed")->each([&](const std::string&) { seed_given = true; });

  // train
  auto* tr = app.add_subcommand("train", "Train a learner");
  std::string tr_mode, tr_algo = "scql", tr_data, tr_scenario, tr_reach, tr_models;
  std::string tr_config, tr_env_reward, tr_out = "run", tr_table, tr_policy, tr_metrics;
  double tr_alpha = 0.25, tr_gamma = 0.99;
  int tr_sweeps = 100, tr_reach_k = 1;
  bool tr_normalize = true;
  StacqConfig tr_cfg;
  bool tr_have_iterations = false, tr_have_alpha_reg = false, tr_have_eval_interval = false;
  long tr_iterations = 0;
  double tr_alpha_reg = 0.0;
  int tr_eval_interval = 0, tr_hidden = 0;
  tr->add_option("mode", tr_mode, "tabular|stacq|onestep")->required();
  tr->add_option("--algo", tr_algo, "Tabular algorithm (scql|bcql)");
  tr->add_option("--data", tr_data, "Dataset path")->required();
  tr->add_option("--scenario", tr_scenario, "Maze scenario (tabular)");
  tr->add_option("--reach", tr_reach, "Reachability index (stacq/onestep)");
  tr->add_option("--models", tr_models, "Model directory (stacq/onestep)");
  tr->add_option("--config", tr_config, "Flat key=value config file (stacq/onestep)");
  tr->add_option("--env-reward", tr_env_reward, "Analytic reward source (pointmass|none)");
  tr->add_option("--alpha", tr_alpha, "Tabular learning rate");
  tr->add_option("--gamma", tr_gamma, "Discount factor");
  tr->add_option("--sweeps", tr_sweeps, "Tabular sweep budget");
  tr->add_option("--reach-k", tr_reach_k, "Reachability steps for tabular scql");
  tr->add_flag("--normalize,!--no-normalize", tr_normalize, "Normalize states (deep)");
  tr->add_option("--iterations", tr_iterations, "Gradient steps")
      ->each([&](const std::string&) { tr_have_iterations = true; });
  tr->add_option("--alpha-reg", tr_alpha_reg, "Policy regularization alpha")
      ->each([&](const std::string&) { tr_have_alpha_reg = true; });
  tr->add_option("--eval-interval", tr_eval_interval, "Metrics cadence")
      ->each([&](const std::string&) { tr_have_eval_interval = true; });
  tr->add_option("--hidden", tr_hidden, "Actor/critic width override");
  tr->add_option("--out", tr_out, "Output directory (deep) or table path (tabular)");
  tr->add_option("--table-out", tr_table, "Tabular table output path");
  tr->add_option("--policy-out", tr_policy, "Tabular policy output path");
  tr->add_option("--metrics", tr_metrics, "Tabular metrics CSV path");
  tr->add_option("--seed", seed, "Seed")->each([&](const std::string&) { seed_given = true; });

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a policy artifact");
  std::string ev_policy, ev_scenario, ev_env, ev_data, ev_out;
  int ev_episodes = 10, ev_seeds = 5;
  ev->add_option("--policy", ev_policy, "Policy artifact (maze JSON or run dir)")->required();
  ev->add_option("--scenario", ev_scenario, "Maze scenario");
  ev->add_option("--env", ev_env, "Environment name (pointmass)");
  ev->add_option("--data", ev_data, "Dataset (restrict maze eval to dataset states)");
  ev->add_option("--episodes", ev_episodes, "Episodes per seed");
  ev->add_option("--seeds", ev_seeds, "Number of seeds");
  ev->add_option("--out", ev_out, "Write the report here");
  ev->add_option("--seed", seed, "Seed")->each([&](const std::string&) { seed_given = true; });

  // render
  auto* rd = app.add_subcommand("render", "Render a maze policy");
  std::string rd_policy, rd_table, rd_scenario, rd_format = "ascii", rd_out;
  rd->add_option("--policy", rd_policy, "Maze policy artifact");
  rd->add_option("--table", rd_table, "QSS table artifact");
  rd->add_option("--scenario", rd_scenario, "Maze scenario")->required();
  rd->add_option("--format", rd_format, "ascii|svg");
  rd->add_option("--out", rd_out, "Output path (stdout when omitted)");

  // reach-report
  auto* rr = app.add_subcommand("reach-report", "Summarize a reachability index");
  std::string rr_reach, rr_scenario, rr_data;
  rr->add_option("--reach", rr_reach, "Reachability index path")->required();
  rr->add_option("--scenario", rr_scenario, "Maze scenario for exact-grid truth");
  rr->add_option("--data", rr_data, "Dataset (with --scenario)");

  try {
    app.parse(argc, argv);
    if (!workdir.empty()) fs::current_path(workdir);
    seed = env_seed_fallback(seed, seed_given);

    if (gen->parsed())
      return cmd_gen_data(gd_scenario, gd_env, gd_transitions, gd_noise, seed, gd_out,
                          argc, argv);
    if (br->parsed())
      return cmd_build_reach(br_data, br_out, br_exact_grid, br_scenario, br_models,
                             br_train_models, br_ens_fwd, br_ens_inv, br_model_hidden,
                             br_model_layers, br_model_lr, br_model_epochs,
                             br_normalize, rf, seed, argc, argv);
    if (tr->parsed()) {
      if (tr_mode == "tabular") {
        const std::string table_path = !tr_table.empty() ? tr_table : tr_out;
        if (tr_scenario.empty()) throw ConfigError("train tabular needs --scenario");
        return cmd_train_tabular(tr_algo, tr_data, tr_scenario, tr_alpha, tr_gamma,
                                 tr_sweeps, tr_reach_k, table_path, tr_policy,
                                 tr_metrics, seed, argc, argv);
      }
      if (tr_mode == "stacq" || tr_mode == "onestep") {
        if (tr_reach.empty()) throw ConfigError("train " + tr_mode + " needs --reach");
        StacqConfig cfg = tr_config.empty() ? tr_cfg : parse_stacq_config(tr_config);
        cfg.seed = seed;
        if (tr_have_iterations) cfg.iterations = int(tr_iterations);
        if (tr_have_alpha_reg) cfg.alpha_reg = tr_alpha_reg;
        if (tr_have_eval_interval) cfg.eval_interval = tr_eval_interval;
        if (tr_hidden > 0) cfg.hidden = tr_hidden;
        return cmd_train_deep(tr_mode, tr_data, tr_reach, tr_models, tr_config,
                              tr_env_reward, tr_normalize, tr_out, cfg,
                              !tr_config.empty(), seed, argc, argv);
      }
      throw ConfigError("unknown train mode '" + tr_mode + "' (tabular|stacq|onestep)");
    }
    if (ev->parsed())
      return cmd_eval(ev_policy, ev_scenario, ev_env, ev_data, ev_episodes, ev_seeds,
                      seed, ev_out, argc, argv);
    if (rd->parsed())
      return cmd_render(rd_policy, rd_table, rd_scenario, rd_format, rd_out);
    if (rr->parsed()) return cmd_reach_report(rr_reach, rr_scenario, rr_data);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
