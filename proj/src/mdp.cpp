#include "scrl/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace scrl {

using nlohmann::json;

std::pair<int, double> DeterministicMdp::step(int s, int a) const {
  if (s < 0 || s >= num_states())
    throw ValidationError("step: state id " + std::to_string(s) + " out of range");
  if (a < 0 || a >= num_actions())
    throw ValidationError("step: action id " + std::to_string(a) + " out of range");
  if (terminal[size_t(s)]) return {s, 0.0};
  const int sp = next[size_t(s)][size_t(a)];
  const auto it = reward.find(pack_pair(s, sp));
  if (it == reward.end())
    throw ValidationError("step: reward undefined for transition " +
                          std::to_string(s) + " -> " + std::to_string(sp));
  return {sp, it->second};
}

std::optional<double> DeterministicMdp::reward_of(int s, int sp) const {
  const auto it = reward.find(pack_pair(s, sp));
  if (it == reward.end()) return std::nullopt;
  return it->second;
}

std::vector<int> DeterministicMdp::reachable_from(int s) const {
  std::set<int> out;
  for (int a = 0; a < num_actions(); ++a) out.insert(next[size_t(s)][size_t(a)]);
  return {out.begin(), out.end()};
}

void DeterministicMdp::validate() const {
  if (discount < 0.0 || discount >= 1.0)
    throw ValidationError("discount must be in [0, 1), got " + std::to_string(discount));
  if (next.size() != states.size())
    throw ValidationError("transition table does not cover every state");
  for (size_t s = 0; s < next.size(); ++s) {
    if (next[s].size() != actions.size())
      throw ValidationError("state " + std::to_string(s) + " is missing action entries");
    for (int sp : next[s]) {
      if (sp < 0 || sp >= num_states())
        throw ValidationError("transition from state " + std::to_string(s) +
                              " leads to invalid state " + std::to_string(sp));
      if (!terminal[s] && !reward.count(pack_pair(int(s), sp)))
        throw ValidationError("reward undefined for produced pair (" +
                              std::to_string(s) + ", " + std::to_string(sp) + ")");
    }
  }
  for (const auto& [k, r] : reward) {
    (void)k;
    if (std::fabs(r) > reward_bound + 1e-12)
      throw ValidationError("reward exceeds declared bound c=" + std::to_string(reward_bound));
  }
}

bool MazeScenario::is_wall(int x, int y) const {
  return std::find(walls.begin(), walls.end(), std::make_pair(x, y)) != walls.end();
}

bool MazeScenario::in_bounds(int x, int y) const {
  return x >= 0 && x < width && y >= 0 && y < height;
}

namespace {

std::string cell_str(int x, int y) {
  return "(" + std::to_string(x) + "," + std::to_string(y) + ")";
}

}  // namespace

void MazeScenario::validate() const {
  if (width <= 0 || height <= 0)
    throw ValidationError("maze dimensions must be positive");
  for (const auto& [x, y] : walls)
    if (!in_bounds(x, y))
      throw ValidationError("wall cell " + cell_str(x, y) + " outside the grid");
  if (!in_bounds(goal.first, goal.second))
    throw ValidationError("goal cell " + cell_str(goal.first, goal.second) +
                          " outside the grid");
  if (is_wall(goal.first, goal.second))
    throw ValidationError("goal cell " + cell_str(goal.first, goal.second) + " is a wall");
  for (size_t t = 0; t < trajectories.size(); ++t) {
    const auto& traj = trajectories[t];
    for (const auto& [x, y] : traj) {
      if (!in_bounds(x, y))
        throw ValidationError("trajectory " + std::to_string(t) + " cell " +
                              cell_str(x, y) + " outside the grid");
      if (is_wall(x, y))
        throw ValidationError("trajectory " + std::to_string(t) + " cell " +
                              cell_str(x, y) + " is a wall");
    }
    for (size_t i = 0; i + 1 < traj.size(); ++i) {
      const int dx = traj[i + 1].first - traj[i].first;
      const int dy = traj[i + 1].second - traj[i].second;
      if (std::abs(dx) + std::abs(dy) != 1)
        throw ValidationError("trajectory " + std::to_string(t) + " step " +
                              cell_str(traj[i].first, traj[i].second) + " -> " +
                              cell_str(traj[i + 1].first, traj[i + 1].second) +
                              " is not a single cardinal move");
    }
  }
}

MazeScenario MazeScenario::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario parse error: ") + e.what());
  }
  MazeScenario sc;
  try {
    sc.width = j.at("width").get<int>();
    sc.height = j.at("height").get<int>();
    sc.r_pen = j.value("r_pen", -0.1);
    sc.r_goal = j.value("r_goal", 10.0);
    if (j.contains("ascii")) {
      // Rows are listed top to bottom: row 0 is y = height-1.
      const auto rows = j.at("ascii").get<std::vector<std::string>>();
      if (int(rows.size()) != sc.height)
        throw ValidationError("ascii map has " + std::to_string(rows.size()) +
                              " rows, expected " + std::to_string(sc.height));
      bool has_goal = false;
      for (int r = 0; r < sc.height; ++r) {
        if (int(rows[size_t(r)].size()) != sc.width)
          throw ValidationError("ascii row " + std::to_string(r) + " has width " +
                                std::to_string(rows[size_t(r)].size()) + ", expected " +
                                std::to_string(sc.width));
        for (int x = 0; x < sc.width; ++x) {
          const char c = rows[size_t(r)][size_t(x)];
          const int y = sc.height - 1 - r;
          if (c == '#') sc.walls.emplace_back(x, y);
          else if (c == '*') { sc.goal = {x, y}; has_goal = true; }
          else if (c != '.')
            throw ValidationError(std::string("ascii map: unexpected character '") + c +
                                  "' at " + cell_str(x, y));
        }
      }
      if (!has_goal) throw ValidationError("ascii map has no goal cell '*'");
    } else {
      for (const auto& w : j.at("walls"))
        sc.walls.emplace_back(w.at(0).get<int>(), w.at(1).get<int>());
      sc.goal = {j.at("goal").at(0).get<int>(), j.at("goal").at(1).get<int>()};
    }
    for (const auto& traj : j.value("trajectories", json::array())) {
      std::vector<std::pair<int, int>> cells;
      for (const auto& c : traj) cells.emplace_back(c.at(0).get<int>(), c.at(1).get<int>());
      sc.trajectories.push_back(std::move(cells));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("scenario field error: ") + e.what());
  }
  sc.validate();
  return sc;
}

MazeScenario MazeScenario::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scenario file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string MazeScenario::to_json_text() const {
  json j;
  j["width"] = width;
  j["height"] = height;
  j["r_pen"] = r_pen;
  j["r_goal"] = r_goal;
  j["walls"] = json::array();
  for (const auto& [x, y] : walls) j["walls"].push_back({x, y});
  j["goal"] = {goal.first, goal.second};
  j["trajectories"] = json::array();
  for (const auto& traj : trajectories) {
    json t = json::array();
    for (const auto& [x, y] : traj) t.push_back({x, y});
    j["trajectories"].push_back(std::move(t));
  }
  return j.dump(2);
}

int MazeMdp::id_of(int x, int y) const {
  const auto it = cell_to_id.find(pack_pair(x, y));
  if (it == cell_to_id.end())
    throw ValidationError("cell " + cell_str(x, y) + " is not a free maze cell");
  return it->second;
}

MazeMdp grid_maze_from_scenario(const MazeScenario& scenario) {
  scenario.validate();
  MazeMdp m;
  m.scenario = scenario;

  for (int y = 0; y < scenario.height; ++y)
    for (int x = 0; x < scenario.width; ++x)
      if (!scenario.is_wall(x, y)) {
        m.cell_to_id[pack_pair(x, y)] = int(m.id_to_cell.size());
        m.id_to_cell.emplace_back(x, y);
        m.mdp.states.push_back(Vec{double(x), double(y)});
      }

  m.mdp.actions = {Vec{-1, 0}, Vec{1, 0}, Vec{0, 1}, Vec{0, -1}};  // left,right,up,down
  const int n = m.mdp.num_states();
  m.mdp.terminal.assign(size_t(n), false);
  m.mdp.terminal[size_t(m.id_of(scenario.goal.first, scenario.goal.second))] = true;
  m.mdp.next.assign(size_t(n), std::vector<int>(4, 0));
  m.mdp.discount = 0.99;
  m.mdp.reward_bound = std::max(std::fabs(scenario.r_pen), std::fabs(scenario.r_goal));

  const int goal = m.goal_id();
  for (int s = 0; s < n; ++s) {
    const auto [x, y] = m.id_to_cell[size_t(s)];
    for (int a = 0; a < 4; ++a) {
      const int nx = x + int(m.mdp.actions[size_t(a)][0]);
      const int ny = y + int(m.mdp.actions[size_t(a)][1]);
      // Blocked moves (wall or off-grid) self-loop, still paying the penalty.
      const int sp = (scenario.in_bounds(nx, ny) && !scenario.is_wall(nx, ny))
                         ? m.id_of(nx, ny)
                         : s;
      m.mdp.next[size_t(s)][size_t(a)] = sp;
      m.mdp.reward[pack_pair(s, sp)] = (sp == goal) ? scenario.r_goal : scenario.r_pen;
    }
  }
  return m;
}

size_t StateConstrainedMdp::edge_count() const {
  size_t c = 0;
  for (const auto& e : edges) c += e.size();
  return c;
}

StateConstrainedMdp build_state_constrained_mdp(
    int n_states, const std::vector<std::vector<int>>& reach,
    const std::function<double(int, int)>& reward_fn,
    const std::vector<bool>& terminal, double discount, double sink_reward) {
  if (int(reach.size()) != n_states) {
    std::string missing;
    for (int s = int(reach.size()); s < n_states; ++s)
      missing += (missing.empty() ? "" : ", ") + std::to_string(s);
    throw ValidationError("reachability does not cover every dataset state; missing: " + missing);
  }
  StateConstrainedMdp sc;
  sc.n = n_states;
  sc.discount = discount;
  sc.sink_reward = sink_reward;
  sc.terminal = terminal;
  sc.edges.assign(size_t(n_states), {});
  for (int s = 0; s < n_states; ++s) {
    if (terminal[size_t(s)]) continue;  // absorbing
    std::vector<int> succ = reach[size_t(s)];
    std::sort(succ.begin(), succ.end());
    succ.erase(std::unique(succ.begin(), succ.end()), succ.end());
    for (int sp : succ) {
      if (sp < 0 || sp >= n_states)
        throw ValidationError("reach set of state " + std::to_string(s) +
                              " refers to unknown state " + std::to_string(sp));
      sc.reward[pack_pair(s, sp)] = reward_fn(s, sp);
    }
    sc.edges[size_t(s)] = std::move(succ);
  }
  return sc;
}

namespace {

// Horizon at which gamma^t * c drops below 1e-12.
int truncation_horizon(double gamma, double c) {
  if (c <= 0.0) return 1;
  if (gamma <= 0.0) return 1;
  const double t = std::log(1e-12 / c) / std::log(gamma);
  return std::max(1, int(std::ceil(t)));
}

}  // namespace

double policy_value_qss(const DeterministicMdp& mdp, const std::vector<int>& policy, int s0) {
  const int horizon = truncation_horizon(mdp.discount, mdp.reward_bound);
  double value = 0.0, disc = 1.0;
  int s = s0;
  for (int t = 0; t < horizon; ++t) {
    if (mdp.terminal[size_t(s)]) break;
    const int sp = (s < int(policy.size())) ? policy[size_t(s)] : -1;
    if (sp < 0)
      throw EvaluationError("policy undefined at non-terminal state " + std::to_string(s));
    const auto r = mdp.reward_of(s, sp);
    if (!r)
      throw EvaluationError("policy selects unreachable successor " + std::to_string(sp) +
                            " from state " + std::to_string(s));
    value += disc * *r;
    disc *= mdp.discount;
    s = sp;
  }
  return value;
}

double policy_value_qsa(const DeterministicMdp& mdp, const std::vector<int>& policy, int s0) {
  const int horizon = truncation_horizon(mdp.discount, mdp.reward_bound);
  double value = 0.0, disc = 1.0;
  int s = s0;
  for (int t = 0; t < horizon; ++t) {
    if (mdp.terminal[size_t(s)]) break;
    const int a = (s < int(policy.size())) ? policy[size_t(s)] : -1;
    if (a < 0)
      throw EvaluationError("policy undefined at non-terminal state " + std::to_string(s));
    const auto [sp, r] = mdp.step(s, a);
    value += disc * r;
    disc *= mdp.discount;
    s = sp;
  }
  return value;
}

}  // namespace scrl
