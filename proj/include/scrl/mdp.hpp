#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "scrl/common.hpp"

namespace scrl {

// Finite deterministic MDP: every (state, action) has exactly one successor,
// rewards are keyed by (state, next state), 0 <= discount < 1, rewards bounded
// by reward_bound.
struct DeterministicMdp {
  std::vector<Vec> states;   // state vectors, indexed by id
  std::vector<Vec> actions;  // action vectors, indexed by id
  std::vector<std::vector<int>> next;  // [state][action] -> state
  std::unordered_map<uint64_t, double> reward;  // pack_pair(s, s') -> r
  std::vector<bool> terminal;
  double discount = 0.99;
  double reward_bound = 0.0;  // c in |r(s,s')| <= c

  int num_states() const { return int(states.size()); }
  int num_actions() const { return int(actions.size()); }

  // Unique successor and its reward. Terminal states self-loop with reward 0.
  std::pair<int, double> step(int s, int a) const;

  std::optional<double> reward_of(int s, int sp) const;

  // Exact one-step state reachability SR(s): deduplicated successor set.
  std::vector<int> reachable_from(int s) const;

  void validate() const;  // throws ValidationError
};

// Grid maze description: walls, goal cell, step penalty, goal reward, and the
// offline trajectories (cell sequences) that make up the dataset.
struct MazeScenario {
  int width = 0;
  int height = 0;
  std::vector<std::pair<int, int>> walls;
  std::pair<int, int> goal{0, 0};
  double r_pen = -0.1;
  double r_goal = 10.0;
  std::vector<std::vector<std::pair<int, int>>> trajectories;

  bool is_wall(int x, int y) const;
  bool in_bounds(int x, int y) const;
  void validate() const;  // throws ValidationError naming the offending cell

  static MazeScenario from_json_text(const std::string& text);
  static MazeScenario from_json_file(const std::string& path);
  std::string to_json_text() const;
};

// Maze MDP plus the cell <-> state-id mapping it was built with.
struct MazeMdp {
  DeterministicMdp mdp;
  MazeScenario scenario;
  std::unordered_map<uint64_t, int> cell_to_id;  // pack_pair(x, y) -> state id
  std::vector<std::pair<int, int>> id_to_cell;

  int id_of(int x, int y) const;  // throws ValidationError when not a free cell
  std::pair<int, int> cell_of(int id) const { return id_to_cell.at(size_t(id)); }
  int goal_id() const { return id_of(scenario.goal.first, scenario.goal.second); }
};

// Maze action ids, in declaration order.
enum MazeAction : int { kLeft = 0, kRight = 1, kUp = 2, kDown = 3 };

// States are the non-wall cells; moving into a wall or off-grid self-loops.
// Every step pays r_pen except entering the goal, which pays r_goal; the goal
// is terminal.
MazeMdp grid_maze_from_scenario(const MazeScenario& scenario);

// Def-3.2-style MDP over dataset states: edges between dataset states s -> s'
// with s' in reach(s); all other mass goes to an absorbing sink state (kept
// implicit; only its reward is represented). Dataset states with no reachable
// dataset successor have no outgoing edges and evaluate as value 0.
struct StateConstrainedMdp {
  int n = 0;  // dataset states; the sink is implicit
  std::vector<std::vector<int>> edges;          // per state, sorted successor ids
  std::unordered_map<uint64_t, double> reward;  // pack_pair(i, j) -> r
  std::vector<bool> terminal;
  double sink_reward = 0.0;
  double discount = 0.99;

  size_t edge_count() const;
};

// reach[i] lists dataset-state successor ids for state i (must cover every
// state: reach.size() == n). reward_fn(i, j) supplies r(s_i, s_j).
StateConstrainedMdp build_state_constrained_mdp(
    int n_states, const std::vector<std::vector<int>>& reach,
    const std::function<double(int, int)>& reward_fn,
    const std::vector<bool>& terminal, double discount, double sink_reward = 0.0);

// Discounted return of the deterministic rollout from s0 under a next-state
// policy (policy[s] = successor id, -1 where undefined). Truncates once
// gamma^t * reward_bound < 1e-12 or a terminal state is reached. Throws
// EvaluationError when the policy is undefined at a visited non-terminal
// state.
double policy_value_qss(const DeterministicMdp& mdp, const std::vector<int>& policy, int s0);

// Same, for an action policy (policy[s] = action id, -1 where undefined).
double policy_value_qsa(const DeterministicMdp& mdp, const std::vector<int>& policy, int s0);

}  // namespace scrl
