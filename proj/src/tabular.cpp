#include "scrl/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

namespace scrl {

using nlohmann::json;

namespace {

json table_json(const std::unordered_map<uint64_t, double>& values, double init,
                const std::vector<Vec>& states, const char* kind) {
  json j;
  j["type"] = kind;
  j["init"] = init;
  j["states"] = states;
  std::vector<std::pair<uint64_t, double>> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  json entries = json::array();
  for (const auto& [k, v] : sorted)
    entries.push_back({pair_first(k), pair_second(k), v});
  j["entries"] = std::move(entries);
  return j;
}

}  // namespace

std::string QssTable::to_json_text(const std::vector<Vec>& states) const {
  return table_json(values, init_value, states, "qss").dump();
}

std::string QsaTable::to_json_text(const std::vector<Vec>& states) const {
  return table_json(values, init_value, states, "qsa").dump();
}

void LearnerConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ConfigError("learning rate must be in (0, 1], got " + std::to_string(alpha));
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw ConfigError("discount must be in [0, 1), got " + std::to_string(gamma));
  if (sweeps < 0) throw ConfigError("sweep budget must be non-negative");
}

void qsa_learning_step(QsaTable& table, int s, int a, double r, int sp,
                       bool sp_terminal, std::span<const int> feasible_actions,
                       const LearnerConfig& cfg) {
  double boot = 0.0;
  if (!sp_terminal) {
    if (feasible_actions.empty())
      throw ValidationError("empty feasible action set at non-terminal state " +
                            std::to_string(sp));
    boot = table.get(sp, feasible_actions[0]);
    for (int ap : feasible_actions.subspan(1)) boot = std::max(boot, table.get(sp, ap));
  }
  const double target = r + cfg.gamma * boot;
  table.set(s, a, (1.0 - cfg.alpha) * table.get(s, a) + cfg.alpha * target);
}

void qss_learning_step(QssTable& table, int s, double r, int sp,
                       bool sp_terminal, std::span<const int> feasible_next,
                       const LearnerConfig& cfg) {
  double boot = 0.0;
  if (!sp_terminal) {
    if (feasible_next.empty())
      throw ValidationError("empty feasible next-state set at non-terminal state " +
                            std::to_string(sp));
    boot = table.get(sp, feasible_next[0]);
    for (int spp : feasible_next.subspan(1)) boot = std::max(boot, table.get(sp, spp));
  }
  const double target = r + cfg.gamma * boot;
  table.set(s, sp, (1.0 - cfg.alpha) * table.get(s, sp) + cfg.alpha * target);
}

IndexedDataset IndexedDataset::from(const Dataset& d, const DeterministicMdp& mdp) {
  std::unordered_map<std::string, int> state_ids, action_ids;
  for (int i = 0; i < mdp.num_states(); ++i)
    state_ids[StateIndex::key_of(mdp.states[size_t(i)])] = i;
  for (int i = 0; i < mdp.num_actions(); ++i)
    action_ids[StateIndex::key_of(mdp.actions[size_t(i)])] = i;

  IndexedDataset out;
  out.in_dataset.assign(size_t(mdp.num_states()), 0);
  out.actions_at.assign(size_t(mdp.num_states()), {});
  out.next_at.assign(size_t(mdp.num_states()), {});

  auto resolve = [](const std::unordered_map<std::string, int>& ids, const Vec& v,
                    const char* what) {
    const auto it = ids.find(StateIndex::key_of(v));
    if (it == ids.end())
      throw ValidationError(std::string("dataset ") + what + " vector not found in the MDP");
    return it->second;
  };

  auto note_state = [&out](int id) {
    if (!out.in_dataset[size_t(id)]) {
      out.in_dataset[size_t(id)] = 1;
      out.states.push_back(id);
    }
  };

  for (const auto& r : d.records) {
    Rec rec;
    rec.s = resolve(state_ids, r.s, "state");
    rec.a = resolve(action_ids, r.a, "action");
    rec.sp = resolve(state_ids, r.s_next, "next-state");
    rec.r = r.r;
    rec.terminal = r.terminal;
    note_state(rec.s);
    note_state(rec.sp);
    out.actions_at[size_t(rec.s)].push_back(rec.a);
    out.next_at[size_t(rec.s)].push_back(rec.sp);
    out.records.push_back(rec);
  }
  for (auto& v : out.actions_at) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  for (auto& v : out.next_at) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return out;
}

std::vector<std::vector<int>> exact_reach_in_dataset(const DeterministicMdp& mdp,
                                                     const IndexedDataset& data) {
  std::vector<std::vector<int>> reach(size_t(mdp.num_states()));
  for (int s : data.states) {
    std::vector<int> in;
    for (int sp : mdp.reachable_from(s))
      if (data.in_dataset[size_t(sp)]) in.push_back(sp);
    reach[size_t(s)] = std::move(in);
  }
  return reach;
}

QsaTable bcql_train(const IndexedDataset& data, const std::vector<bool>& terminal,
                    const LearnerConfig& cfg) {
  cfg.validate();
  // Unique recorded transitions in deterministic sorted order.
  std::map<std::pair<int, int>, IndexedDataset::Rec> transitions;
  for (const auto& rec : data.records) transitions[{rec.s, rec.a}] = rec;

  QsaTable table;
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    double max_update = 0.0;
    for (const auto& [key, rec] : transitions) {
      const double before = table.get(rec.s, rec.a);
      const bool sp_term = terminal[size_t(rec.sp)];
      const auto& feasible = data.actions_at[size_t(rec.sp)];
      if (!sp_term && feasible.empty()) {
        // No recorded action at s': absorbing under the batch-constrained MDP.
        table.set(rec.s, rec.a,
                  (1.0 - cfg.alpha) * before + cfg.alpha * rec.r);
      } else {
        qsa_learning_step(table, rec.s, rec.a, rec.r, rec.sp, sp_term, feasible, cfg);
      }
      max_update = std::max(max_update, std::fabs(table.get(rec.s, rec.a) - before));
    }
    if (max_update < cfg.tol) break;
  }
  return table;
}

QssTable scql_train(const IndexedDataset& data,
                    const std::vector<std::vector<int>>& reach,
                    const std::function<double(int, int)>& reward_fn,
                    const std::vector<bool>& terminal, const LearnerConfig& cfg,
                    const std::function<void(int, const QssTable&, double)>& on_sweep) {
  cfg.validate();
  std::vector<int> states = data.states;
  std::sort(states.begin(), states.end());

  // Rewards are pinned up front; a missing reward for a reachable pair is a
  // configuration error, not a training-time surprise.
  std::unordered_map<uint64_t, double> rewards;
  for (int s : states) {
    if (terminal[size_t(s)]) continue;
    for (int sp : reach[size_t(s)]) rewards[pack_pair(s, sp)] = reward_fn(s, sp);
  }

  QssTable table;
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    double max_update = 0.0;
    for (int s : states) {
      if (terminal[size_t(s)]) continue;
      for (int sp : reach[size_t(s)]) {
        const double before = table.get(s, sp);
        const double r = rewards.at(pack_pair(s, sp));
        const bool sp_term = terminal[size_t(sp)];
        const auto& feasible = reach[size_t(sp)];
        if (!sp_term && feasible.empty()) {
          table.set(s, sp, (1.0 - cfg.alpha) * before + cfg.alpha * r);
        } else {
          qss_learning_step(table, s, r, sp, sp_term, feasible, cfg);
        }
        max_update = std::max(max_update, std::fabs(table.get(s, sp) - before));
      }
    }
    if (on_sweep) on_sweep(sweep, table, max_update);
    if (max_update < cfg.tol) break;
  }
  return table;
}

std::vector<int> extract_policy_scql(const QssTable& table, int num_states,
                                     const IndexedDataset& data,
                                     const std::vector<std::vector<int>>& reach,
                                     const std::vector<bool>& terminal) {
  std::vector<int> policy(size_t(num_states), -1);
  for (int s : data.states) {
    if (terminal[size_t(s)]) continue;
    int best = -1;
    double best_q = 0.0;
    for (int sp : reach[size_t(s)]) {
      const double q = table.get(s, sp);
      // Ties go to the lowest state index.
      if (best < 0 || q > best_q || (q == best_q && sp < best)) {
        best = sp;
        best_q = q;
      }
    }
    policy[size_t(s)] = best;
  }
  return policy;
}

std::vector<int> extract_policy_bcql(const QsaTable& table, int num_states,
                                     const IndexedDataset& data,
                                     const std::vector<bool>& terminal) {
  std::vector<int> policy(size_t(num_states), -1);
  for (int s : data.states) {
    if (terminal[size_t(s)]) continue;
    int best = -1;
    double best_q = 0.0;
    for (int a : data.actions_at[size_t(s)]) {
      const double q = table.get(s, a);
      if (best < 0 || q > best_q) {
        best = a;
        best_q = q;
      }
    }
    policy[size_t(s)] = best;
  }
  return policy;
}

QssProblem QssProblem::from_mdp(const DeterministicMdp& mdp) {
  QssProblem p;
  p.n = mdp.num_states();
  p.feasible.resize(size_t(p.n));
  for (int s = 0; s < p.n; ++s)
    if (!mdp.terminal[size_t(s)]) p.feasible[size_t(s)] = mdp.reachable_from(s);
  p.reward = [&mdp](int s, int sp) {
    const auto r = mdp.reward_of(s, sp);
    if (!r) throw ValidationError("reward undefined for pair in oracle");
    return *r;
  };
  p.terminal = mdp.terminal;
  p.gamma = mdp.discount;
  return p;
}

QssProblem QssProblem::from_scmdp(const StateConstrainedMdp& sc) {
  QssProblem p;
  p.n = sc.n;
  p.feasible = sc.edges;
  p.reward = [&sc](int s, int sp) { return sc.reward.at(pack_pair(s, sp)); };
  p.terminal = sc.terminal;
  p.gamma = sc.discount;
  return p;
}

QssTable value_iteration_oracle(const QssProblem& p, double tol) {
  QssTable q;
  // V(s) = max over feasible successors; 0 at terminal or dead-end states.
  Vec v(size_t(p.n), 0.0);
  for (int iter = 0; iter < 2'000'000; ++iter) {
    double max_delta = 0.0;
    QssTable next = q;
    for (int s = 0; s < p.n; ++s) {
      if (p.terminal[size_t(s)]) continue;
      for (int sp : p.feasible[size_t(s)]) {
        const double target = p.reward(s, sp) + p.gamma * v[size_t(sp)];
        max_delta = std::max(max_delta, std::fabs(target - q.get(s, sp)));
        next.set(s, sp, target);
      }
    }
    q = std::move(next);
    for (int s = 0; s < p.n; ++s) {
      // Terminal and dead-end states keep value 0.
      double best = 0.0;
      if (!p.terminal[size_t(s)] && !p.feasible[size_t(s)].empty()) {
        best = q.get(s, p.feasible[size_t(s)][0]);
        for (int sp : p.feasible[size_t(s)]) best = std::max(best, q.get(s, sp));
      }
      v[size_t(s)] = best;
    }
    if (max_delta < tol) break;
  }
  return q;
}

QssTable value_iteration_async(const QssProblem& p, double tol, bool reverse_order) {
  std::vector<std::pair<int, int>> pairs;
  for (int s = 0; s < p.n; ++s)
    if (!p.terminal[size_t(s)])
      for (int sp : p.feasible[size_t(s)]) pairs.emplace_back(s, sp);
  if (reverse_order) std::reverse(pairs.begin(), pairs.end());

  QssTable q;
  for (int iter = 0; iter < 2'000'000; ++iter) {
    double max_delta = 0.0;
    for (const auto& [s, sp] : pairs) {
      double boot = 0.0;
      if (!p.terminal[size_t(sp)] && !p.feasible[size_t(sp)].empty()) {
        boot = q.get(sp, p.feasible[size_t(sp)][0]);
        for (int spp : p.feasible[size_t(sp)]) boot = std::max(boot, q.get(sp, spp));
      }
      const double target = p.reward(s, sp) + p.gamma * boot;
      max_delta = std::max(max_delta, std::fabs(target - q.get(s, sp)));
      q.set(s, sp, target);
    }
    if (max_delta < tol) break;
  }
  return q;
}

QsaTable value_iteration_qsa(const DeterministicMdp& mdp, double tol) {
  QsaTable q;
  for (int iter = 0; iter < 2'000'000; ++iter) {
    double max_delta = 0.0;
    QsaTable next = q;
    for (int s = 0; s < mdp.num_states(); ++s) {
      if (mdp.terminal[size_t(s)]) continue;
      for (int a = 0; a < mdp.num_actions(); ++a) {
        const auto [sp, r] = mdp.step(s, a);
        double boot = 0.0;
        if (!mdp.terminal[size_t(sp)]) {
          boot = q.get(sp, 0);
          for (int ap = 1; ap < mdp.num_actions(); ++ap)
            boot = std::max(boot, q.get(sp, ap));
        }
        const double target = r + mdp.discount * boot;
        max_delta = std::max(max_delta, std::fabs(target - q.get(s, a)));
        next.set(s, a, target);
      }
    }
    q = std::move(next);
    if (max_delta < tol) break;
  }
  return q;
}

int inverse_dynamics_lookup(const DeterministicMdp& mdp, int s, int sp) {
  for (int a = 0; a < mdp.num_actions(); ++a)
    if (mdp.next[size_t(s)][size_t(a)] == sp) return a;
  throw ReachError("no action moves state " + std::to_string(s) + " to " +
                   std::to_string(sp));
}

std::vector<std::vector<KStepEdge>> build_kstep_edges(
    const DeterministicMdp& mdp, const IndexedDataset& data, int k, double gamma) {
  if (k <= 0) throw ValidationError("k must be >= 1, got " + std::to_string(k));
  std::vector<std::vector<KStepEdge>> edges(size_t(mdp.num_states()));

  struct Partial {
    int state;
    double reward;  // discounted along the path
    std::vector<int> actions;
  };

  for (int s : data.states) {
    if (mdp.terminal[size_t(s)]) continue;
    // Best path per (dst, len).
    std::map<std::pair<int, int>, KStepEdge> best;
    std::vector<Partial> frontier{{s, 0.0, {}}};
    double disc = 1.0;
    for (int depth = 1; depth <= k; ++depth) {
      std::vector<Partial> next_frontier;
      for (const auto& part : frontier) {
        for (int a = 0; a < mdp.num_actions(); ++a) {
          const auto [sp, r] = mdp.step(part.state, a);
          Partial ext{sp, part.reward + disc * r, part.actions};
          ext.actions.push_back(a);
          if (data.in_dataset[size_t(sp)]) {
            const auto key = std::make_pair(sp, depth);
            const auto it = best.find(key);
            if (it == best.end() || ext.reward > it->second.path_reward)
              best[key] = KStepEdge{sp, depth, ext.reward, ext.actions};
          }
          // Paths cannot continue past a terminal state.
          if (depth < k && !mdp.terminal[size_t(sp)]) next_frontier.push_back(std::move(ext));
        }
      }
      frontier = std::move(next_frontier);
      disc *= gamma;
    }
    auto& out = edges[size_t(s)];
    for (auto& [key, e] : best) out.push_back(std::move(e));
  }
  return edges;
}

namespace {

double kstep_boot(const QssTable& table, const std::vector<std::vector<KStepEdge>>& edges,
                  const std::vector<bool>& terminal, int state) {
  if (terminal[size_t(state)]) return 0.0;
  double boot = 0.0;
  bool any = false;
  for (const auto& e : edges[size_t(state)]) {
    const double q = table.get(state, e.dst);
    if (!any || q > boot) boot = q;
    any = true;
  }
  return any ? boot : 0.0;
}

}  // namespace

QssTable scql_train_kstep(const std::vector<std::vector<KStepEdge>>& edges,
                          const IndexedDataset& data,
                          const std::vector<bool>& terminal, const LearnerConfig& cfg) {
  cfg.validate();
  std::vector<int> states = data.states;
  std::sort(states.begin(), states.end());

  QssTable table;
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    double max_update = 0.0;
    for (int s : states) {
      if (terminal[size_t(s)]) continue;
      // Group edges by destination; the update takes the best path in the max.
      const auto& es = edges[size_t(s)];
      std::set<int> dsts;
      for (const auto& e : es) dsts.insert(e.dst);
      for (int dst : dsts) {
        double target = -std::numeric_limits<double>::infinity();
        const double boot = kstep_boot(table, edges, terminal, dst);
        for (const auto& e : es) {
          if (e.dst != dst) continue;
          target = std::max(target, e.path_reward + std::pow(cfg.gamma, e.len) * boot);
        }
        const double before = table.get(s, dst);
        const double after = (1.0 - cfg.alpha) * before + cfg.alpha * target;
        table.set(s, dst, after);
        max_update = std::max(max_update, std::fabs(after - before));
      }
    }
    if (max_update < cfg.tol) break;
  }
  return table;
}

std::vector<std::optional<KStepEdge>> extract_policy_kstep(
    const QssTable& table, const std::vector<std::vector<KStepEdge>>& edges,
    const IndexedDataset& data, const std::vector<bool>& terminal, double gamma) {
  std::vector<std::optional<KStepEdge>> policy(edges.size());
  for (int s : data.states) {
    if (terminal[size_t(s)]) continue;
    const KStepEdge* best = nullptr;
    double best_score = 0.0;
    for (const auto& e : edges[size_t(s)]) {
      const double score =
          e.path_reward + std::pow(gamma, e.len) * kstep_boot(table, edges, terminal, e.dst);
      const bool better =
          best == nullptr || score > best_score ||
          (score == best_score && (e.dst < best->dst ||
                                   (e.dst == best->dst && e.len < best->len)));
      if (better) {
        best = &e;
        best_score = score;
      }
    }
    if (best != nullptr) policy[size_t(s)] = *best;
  }
  return policy;
}

namespace {

int maze_budget(const MazeMdp& maze, int budget) {
  return budget > 0 ? budget : 4 * maze.scenario.width * maze.scenario.height;
}

}  // namespace

std::vector<bool> maze_success_qss(const MazeMdp& maze, const std::vector<int>& policy,
                                   std::span<const int> eval_states, int budget) {
  const int goal = maze.goal_id();
  const int limit = maze_budget(maze, budget);
  std::vector<bool> out;
  out.reserve(eval_states.size());
  for (int s0 : eval_states) {
    int s = s0;
    bool ok = (s == goal);
    for (int t = 0; t < limit && !ok; ++t) {
      const int sp = policy[size_t(s)];
      if (sp < 0) break;
      const int a = inverse_dynamics_lookup(maze.mdp, s, sp);
      s = maze.mdp.step(s, a).first;
      ok = (s == goal);
    }
    out.push_back(ok);
  }
  return out;
}

std::vector<bool> maze_success_qsa(const MazeMdp& maze, const std::vector<int>& policy,
                                   std::span<const int> eval_states, int budget) {
  const int goal = maze.goal_id();
  const int limit = maze_budget(maze, budget);
  std::vector<bool> out;
  out.reserve(eval_states.size());
  for (int s0 : eval_states) {
    int s = s0;
    bool ok = (s == goal);
    for (int t = 0; t < limit && !ok; ++t) {
      const int a = policy[size_t(s)];
      if (a < 0) break;
      s = maze.mdp.step(s, a).first;
      ok = (s == goal);
    }
    out.push_back(ok);
  }
  return out;
}

std::vector<bool> maze_success_kstep(const MazeMdp& maze,
                                     const std::vector<std::optional<KStepEdge>>& policy,
                                     std::span<const int> eval_states, int budget) {
  const int goal = maze.goal_id();
  const int limit = maze_budget(maze, budget);
  std::vector<bool> out;
  out.reserve(eval_states.size());
  for (int s0 : eval_states) {
    int s = s0;
    bool ok = (s == goal);
    for (int t = 0; t < limit && !ok; ++t) {
      const auto& e = policy[size_t(s)];
      if (!e) break;
      for (int a : e->actions) {
        s = maze.mdp.step(s, a).first;
        if (s == goal) {
          ok = true;
          break;
        }
      }
    }
    out.push_back(ok);
  }
  return out;
}

}  // namespace scrl
