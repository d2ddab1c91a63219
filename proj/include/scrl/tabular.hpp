#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scrl/common.hpp"
#include "scrl/dataset.hpp"
#include "scrl/mdp.hpp"

namespace scrl {

// Tabular value function over (state, next-state) pairs. Missing entries read
// as init_value.
struct QssTable {
  std::unordered_map<uint64_t, double> values;
  double init_value = 0.0;

  double get(int s, int sp) const {
    const auto it = values.find(pack_pair(s, sp));
    return it == values.end() ? init_value : it->second;
  }
  void set(int s, int sp, double v) { values[pack_pair(s, sp)] = v; }

  std::string to_json_text(const std::vector<Vec>& states) const;
};

// Tabular value function over (state, action) pairs.
struct QsaTable {
  std::unordered_map<uint64_t, double> values;
  double init_value = 0.0;

  double get(int s, int a) const {
    const auto it = values.find(pack_pair(s, a));
    return it == values.end() ? init_value : it->second;
  }
  void set(int s, int a, double v) { values[pack_pair(s, a)] = v; }

  std::string to_json_text(const std::vector<Vec>& states) const;
};

struct LearnerConfig {
  double alpha = 0.25;  // in (0, 1]; alpha = 1 gives the pure Bellman rule
  double gamma = 0.99;
  int sweeps = 100;
  double tol = 1e-10;  // converged when the max abs update in a sweep drops below
  uint64_t seed = 0;

  void validate() const;
};

// Single QSA update: Q(s,a) <- (1-a)Q + a[r + g max_{a' in feasible} Q(s',a')].
// Terminal s' bootstraps 0. Throws ValidationError on an empty feasible set at
// a non-terminal s'.
void qsa_learning_step(QsaTable& table, int s, int a, double r, int sp,
                       bool sp_terminal, std::span<const int> feasible_actions,
                       const LearnerConfig& cfg);

// Mirror update over next states.
void qss_learning_step(QssTable& table, int s, double r, int sp,
                       bool sp_terminal, std::span<const int> feasible_next,
                       const LearnerConfig& cfg);

// A Dataset resolved against an MDP: records as id tuples plus per-state
// recorded action/successor sets.
struct IndexedDataset {
  struct Rec {
    int s, a;
    double r;
    int sp;
    bool terminal;
  };
  std::vector<Rec> records;
  std::vector<int> states;  // unique dataset states (mdp ids), first appearance
  std::vector<char> in_dataset;               // indexed by mdp state id
  std::vector<std::vector<int>> actions_at;   // per mdp state id, sorted
  std::vector<std::vector<int>> next_at;      // per mdp state id, sorted

  static IndexedDataset from(const Dataset& d, const DeterministicMdp& mdp);
};

// Exact SR(s) intersected with the dataset states, per dataset state.
// Returned vector is indexed by mdp state id (empty for non-dataset states).
std::vector<std::vector<int>> exact_reach_in_dataset(const DeterministicMdp& mdp,
                                                     const IndexedDataset& data);

// Batch-constrained QSS-free learner: sweeps the recorded transitions with the
// max constrained to recorded (s',a') pairs. States without recorded actions
// bootstrap 0 (absorbing under the batch-constrained MDP).
QsaTable bcql_train(const IndexedDataset& data, const std::vector<bool>& terminal,
                    const LearnerConfig& cfg);

// State-constrained QSS learner: sweeps every pair (s, s') with s' in
// reach[s] (already intersected with the dataset), rewards from reward_fn.
// on_sweep, when set, observes the table after each full sweep.
QssTable scql_train(const IndexedDataset& data,
                    const std::vector<std::vector<int>>& reach,
                    const std::function<double(int, int)>& reward_fn,
                    const std::vector<bool>& terminal, const LearnerConfig& cfg,
                    const std::function<void(int, const QssTable&, double)>& on_sweep = {});

// Greedy next-state policy over reach(s); ties resolved to the lowest state
// index; empty feasible sets are left unmapped (-1).
std::vector<int> extract_policy_scql(const QssTable& table, int num_states,
                                     const IndexedDataset& data,
                                     const std::vector<std::vector<int>>& reach,
                                     const std::vector<bool>& terminal);

// Greedy action policy over recorded actions; same tie and blank rules.
std::vector<int> extract_policy_bcql(const QsaTable& table, int num_states,
                                     const IndexedDataset& data,
                                     const std::vector<bool>& terminal);

// Feasible-successor view shared by the VI oracle.
struct QssProblem {
  int n = 0;
  std::vector<std::vector<int>> feasible;
  std::function<double(int, int)> reward;
  std::vector<bool> terminal;
  double gamma = 0.99;

  static QssProblem from_mdp(const DeterministicMdp& mdp);
  static QssProblem from_scmdp(const StateConstrainedMdp& sc);
};

// Exact Q* via synchronous Bellman iteration to the fixed point (tolerance on
// the max update). Independent of the learner code paths above.
QssTable value_iteration_oracle(const QssProblem& p, double tol = 1e-12);

// In-place Gauss-Seidel variant used to cross-check the oracle; order flips
// the pair sweep direction.
QssTable value_iteration_async(const QssProblem& p, double tol = 1e-12,
                               bool reverse_order = false);

// Exact QSA fixed point for a full MDP.
QsaTable value_iteration_qsa(const DeterministicMdp& mdp, double tol = 1e-12);

// Lowest-indexed action with step(s, a) = s'. Throws ReachError when no
// action realizes the transition.
int inverse_dynamics_lookup(const DeterministicMdp& mdp, int s, int sp);

// --- k-step extension (gap-bridging maze demonstration) ---

// A realizable action path from a dataset state to a dataset state, with its
// discounted path reward sum_j gamma^j r_j.
struct KStepEdge {
  int dst = -1;
  int len = 0;
  double path_reward = 0.0;
  std::vector<int> actions;
};

// Enumerates all action sequences of length 1..k with true dynamics from each
// dataset state, keeping per (dst, len) the best-reward path into the dataset.
std::vector<std::vector<KStepEdge>> build_kstep_edges(
    const DeterministicMdp& mdp, const IndexedDataset& data, int k, double gamma);

// Semi-MDP analog of the state-constrained update: for each edge,
// Q(s,dst) <- (1-a)Q + a max_paths[path_reward + gamma^len boot(dst)].
// Reduces exactly to the one-step learner when k = 1.
QssTable scql_train_kstep(const std::vector<std::vector<KStepEdge>>& edges,
                          const IndexedDataset& data,
                          const std::vector<bool>& terminal, const LearnerConfig& cfg);

// Best edge per dataset state under the converged table (nullopt = blank).
std::vector<std::optional<KStepEdge>> extract_policy_kstep(
    const QssTable& table, const std::vector<std::vector<KStepEdge>>& edges,
    const IndexedDataset& data, const std::vector<bool>& terminal, double gamma);

// --- maze policy evaluation ---

// Success = the rollout reaches the goal within budget steps (default
// 4*width*height when budget <= 0). Next-state policies are executed through
// inverse_dynamics_lookup.
std::vector<bool> maze_success_qss(const MazeMdp& maze, const std::vector<int>& policy,
                                   std::span<const int> eval_states, int budget = 0);
std::vector<bool> maze_success_qsa(const MazeMdp& maze, const std::vector<int>& policy,
                                   std::span<const int> eval_states, int budget = 0);
std::vector<bool> maze_success_kstep(const MazeMdp& maze,
                                     const std::vector<std::optional<KStepEdge>>& policy,
                                     std::span<const int> eval_states, int budget = 0);

}  // namespace scrl
