#include <doctest.h>

#include <set>

#include "scrl/common.hpp"
#include "scrl/dataset.hpp"
#include "scrl/mdp.hpp"
#include "scrl/random_mdp.hpp"

using namespace scrl;

namespace {

MazeScenario tiny_scenario() {
  MazeScenario sc;
  sc.width = 3;
  sc.height = 3;
  sc.walls = {{1, 1}};
  sc.goal = {2, 2};
  sc.r_pen = -0.1;
  sc.r_goal = 10.0;
  return sc;
}

}  // namespace

TEST_CASE("maze: 3x3 with center wall has 8 states and blocked moves self-loop") {
  const MazeMdp maze = grid_maze_from_scenario(tiny_scenario());
  CHECK(maze.mdp.num_states() == 8);
  CHECK(maze.mdp.num_actions() == 4);

  // Hand-enumerated transitions for the 3x3 grid with a wall at (1,1):
  // from (0,1), right runs into the wall -> stays.
  const int s01 = maze.id_of(0, 1);
  auto [sp, r] = maze.mdp.step(s01, kRight);
  CHECK(sp == s01);
  CHECK(r == doctest::Approx(-0.1));
  // up moves to (0,2)
  CHECK(maze.mdp.step(s01, kUp).first == maze.id_of(0, 2));
  // off-grid left stays
  CHECK(maze.mdp.step(s01, kLeft).first == s01);
  // (1,0): left -> (0,0), right -> (2,0), up blocked by the wall
  const int s10 = maze.id_of(1, 0);
  CHECK(maze.mdp.step(s10, kLeft).first == maze.id_of(0, 0));
  CHECK(maze.mdp.step(s10, kRight).first == maze.id_of(2, 0));
  CHECK(maze.mdp.step(s10, kUp).first == s10);
  // entering the goal pays r_goal and the goal is terminal
  const int s21 = maze.id_of(2, 1);
  auto [g, rg] = maze.mdp.step(s21, kUp);
  CHECK(g == maze.goal_id());
  CHECK(rg == doctest::Approx(10.0));
  CHECK(maze.mdp.terminal[size_t(g)]);

  maze.mdp.validate();
}

TEST_CASE("maze: 1x1 grid is a single terminal state with self-loops") {
  MazeScenario sc;
  sc.width = 1;
  sc.height = 1;
  sc.goal = {0, 0};
  const MazeMdp maze = grid_maze_from_scenario(sc);
  CHECK(maze.mdp.num_states() == 1);
  CHECK(maze.mdp.terminal[0]);
  for (int a = 0; a < 4; ++a) CHECK(maze.mdp.step(0, a).first == 0);
}

TEST_CASE("maze: scenario validation names the offending cell") {
  MazeScenario sc = tiny_scenario();
  sc.trajectories = {{{0, 0}, {1, 1}}};  // wall cell
  CHECK_THROWS_WITH_AS(sc.validate(), doctest::Contains("(1,1)"), ValidationError);

  MazeScenario sc2 = tiny_scenario();
  sc2.walls.push_back({5, 5});
  CHECK_THROWS_WITH_AS(sc2.validate(), doctest::Contains("(5,5)"), ValidationError);

  MazeScenario sc3 = tiny_scenario();
  sc3.trajectories = {{{0, 0}, {0, 2}}};  // not a single cardinal step
  CHECK_THROWS_AS(sc3.validate(), ValidationError);
}

TEST_CASE("maze: determinism and wall safety over every state-action pair") {
  MazeScenario sc = tiny_scenario();
  sc.walls = {{1, 1}, {2, 0}};
  const MazeMdp maze = grid_maze_from_scenario(sc);
  for (int s = 0; s < maze.mdp.num_states(); ++s)
    for (int a = 0; a < 4; ++a) {
      const auto first = maze.mdp.step(s, a);
      const auto second = maze.mdp.step(s, a);
      CHECK(first == second);
      const auto [x, y] = maze.cell_of(first.first);
      CHECK(!sc.is_wall(x, y));
    }
}

TEST_CASE("maze: json and ascii scenario forms agree") {
  const std::string js = R"({
    "width": 3, "height": 3, "r_pen": -0.1, "r_goal": 10.0,
    "walls": [[1,1]], "goal": [2,2],
    "trajectories": [[[0,0],[0,1],[0,2],[1,2],[2,2]]]
  })";
  const std::string ascii = R"({
    "width": 3, "height": 3, "r_pen": -0.1, "r_goal": 10.0,
    "ascii": ["..*",
              ".#.",
              "..."],
    "trajectories": [[[0,0],[0,1],[0,2],[1,2],[2,2]]]
  })";
  const MazeScenario a = MazeScenario::from_json_text(js);
  const MazeScenario b = MazeScenario::from_json_text(ascii);
  CHECK(a.walls == b.walls);
  CHECK(a.goal == b.goal);
  // round trip through to_json_text
  const MazeScenario c = MazeScenario::from_json_text(a.to_json_text());
  CHECK(c.walls == a.walls);
  CHECK(c.trajectories == a.trajectories);
}

TEST_CASE("policy_value: two-step maze value is analytic") {
  MazeScenario sc;
  sc.width = 3;
  sc.height = 1;
  sc.goal = {2, 0};
  const MazeMdp maze = grid_maze_from_scenario(sc);
  // optimal policy: always move right
  std::vector<int> policy(size_t(maze.mdp.num_states()), -1);
  policy[size_t(maze.id_of(0, 0))] = maze.id_of(1, 0);
  policy[size_t(maze.id_of(1, 0))] = maze.id_of(2, 0);
  CHECK(policy_value_qss(maze.mdp, policy, maze.id_of(1, 0)) == doctest::Approx(10.0));
  CHECK(policy_value_qss(maze.mdp, policy, maze.id_of(0, 0)) ==
        doctest::Approx(-0.1 + 0.99 * 10.0));
}

TEST_CASE("policy_value: matches a brute-force rollout oracle on random MDPs") {
  Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    RandomMdpSpec spec;
    spec.min_states = 6;
    spec.max_states = 6;
    const DeterministicMdp mdp = random_mdp(rng, spec);
    std::vector<int> action_policy(size_t(mdp.num_states()));
    for (auto& a : action_policy) a = rng.below(mdp.num_actions());

    for (int s0 = 0; s0 < mdp.num_states(); ++s0) {
      // independent oracle: plain discounted rollout summation
      double expect = 0.0, disc = 1.0;
      int s = s0;
      for (int t = 0; t < 4000; ++t) {
        if (mdp.terminal[size_t(s)]) break;
        const auto [sp, r] = mdp.step(s, action_policy[size_t(s)]);
        expect += disc * r;
        disc *= mdp.discount;
        s = sp;
      }
      CHECK(policy_value_qsa(mdp, action_policy, s0) == doctest::Approx(expect).epsilon(1e-9));
    }
  }
}

TEST_CASE("policy_value: undefined policy at a visited state throws") {
  const MazeMdp maze = grid_maze_from_scenario(tiny_scenario());
  std::vector<int> policy(size_t(maze.mdp.num_states()), -1);
  CHECK_THROWS_AS(policy_value_qss(maze.mdp, policy, maze.id_of(0, 0)), EvaluationError);
}

TEST_CASE("state-constrained MDP: two mutually reachable states give two edges") {
  // 2-state MDP, actions swap the states
  DeterministicMdp mdp;
  mdp.states = {Vec{0.0}, Vec{1.0}};
  mdp.actions = {Vec{0.0}};
  mdp.next = {{1}, {0}};
  mdp.reward[pack_pair(0, 1)] = 1.0;
  mdp.reward[pack_pair(1, 0)] = -1.0;
  mdp.terminal = {false, false};
  mdp.discount = 0.9;
  mdp.reward_bound = 1.0;

  const std::vector<std::vector<int>> reach{{1}, {0}};
  const auto sc = build_state_constrained_mdp(
      2, reach, [&](int s, int sp) { return *mdp.reward_of(s, sp); }, mdp.terminal,
      mdp.discount);
  CHECK(sc.edge_count() == 2);
  CHECK(sc.reward.at(pack_pair(0, 1)) == doctest::Approx(1.0));
  CHECK(sc.sink_reward == 0.0);
}

TEST_CASE("state-constrained MDP: empty dataset leaves only the sink") {
  const auto sc = build_state_constrained_mdp(
      0, {}, [](int, int) { return 0.0; }, {}, 0.99);
  CHECK(sc.n == 0);
  CHECK(sc.edge_count() == 0);
}

TEST_CASE("state-constrained MDP: missing coverage is reported") {
  CHECK_THROWS_WITH_AS(build_state_constrained_mdp(
                           3, {{1}}, [](int, int) { return 0.0; },
                           {false, false, false}, 0.99),
                       doctest::Contains("missing"), ValidationError);
}

TEST_CASE("state-constrained MDP: edge count dominates recorded pair count") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const DeterministicMdp mdp = random_mdp(rng);
    const Dataset d = random_closed_dataset(mdp, rng, 3, 6);
    std::set<std::pair<int, int>> recorded;
    std::set<int> ds_states;
    for (const auto& rec : d.records) {
      recorded.insert({int(rec.s[0]), int(rec.s_next[0])});
      ds_states.insert(int(rec.s[0]));
      ds_states.insert(int(rec.s_next[0]));
    }
    // exact reach in local (dataset) indexing
    std::vector<int> states(ds_states.begin(), ds_states.end());
    std::vector<std::vector<int>> reach(states.size());
    std::vector<bool> terminal(states.size());
    auto local = [&states](int mdp_id) {
      return int(std::find(states.begin(), states.end(), mdp_id) - states.begin());
    };
    for (size_t i = 0; i < states.size(); ++i) {
      terminal[i] = mdp.terminal[size_t(states[i])];
      for (int sp : mdp.reachable_from(states[i]))
        if (ds_states.count(sp)) reach[i].push_back(local(sp));
    }
    const auto sc = build_state_constrained_mdp(
        int(states.size()), reach,
        [&](int i, int j) { return *mdp.reward_of(states[size_t(i)], states[size_t(j)]); },
        terminal, mdp.discount);

    size_t recorded_nonterminal = 0;
    for (const auto& [s, sp] : recorded)
      if (!mdp.terminal[size_t(s)]) ++recorded_nonterminal;
    CHECK(sc.edge_count() >= recorded_nonterminal);
  }
}
