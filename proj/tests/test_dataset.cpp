#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "scrl/common.hpp"
#include "scrl/dataset.hpp"
#include "scrl/mdp.hpp"
#include "scrl/random_mdp.hpp"

using namespace scrl;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

Dataset random_dataset(Rng& rng, int n_records, int state_dim = 3, int action_dim = 2) {
  Dataset d;
  d.state_dim = state_dim;
  d.action_dim = action_dim;
  for (int i = 0; i < n_records; ++i) {
    TransitionRecord r;
    for (int k = 0; k < state_dim; ++k) r.s.push_back(rng.uniform(-5, 5));
    for (int k = 0; k < action_dim; ++k) r.a.push_back(rng.uniform(-1, 1));
    for (int k = 0; k < state_dim; ++k) r.s_next.push_back(rng.uniform(-5, 5));
    r.r = rng.uniform(-1, 1);
    r.trajectory_id = i / 10;
    r.step_index = i % 10;
    r.terminal = (i % 10 == 9);
    d.records.push_back(std::move(r));
  }
  return d;
}

}  // namespace

TEST_CASE("rollout: scripted path ends at the goal with the goal reward") {
  MazeScenario sc;
  sc.width = 3;
  sc.height = 1;
  sc.goal = {2, 0};
  const MazeMdp maze = grid_maze_from_scenario(sc);
  std::vector<int> behavior(size_t(maze.mdp.num_states()), kRight);
  const auto traj = rollout(maze.mdp, behavior, maze.id_of(0, 0), 50, 0);
  REQUIRE(traj.size() == 2);
  CHECK(traj.back().terminal);
  CHECK(traj.back().r == doctest::Approx(10.0));
  CHECK(traj.front().step_index == 0);
  CHECK(traj.back().step_index == 1);
}

TEST_CASE("rollout: max_len 0 gives an empty trajectory") {
  MazeScenario sc;
  sc.width = 2;
  sc.height = 1;
  sc.goal = {1, 0};
  const MazeMdp maze = grid_maze_from_scenario(sc);
  std::vector<int> behavior(size_t(maze.mdp.num_states()), kRight);
  CHECK(rollout(maze.mdp, behavior, 0, 0, 0).empty());
}

TEST_CASE("unique_states: dedup, order stability, shared states appear once") {
  Dataset d;
  d.state_dim = 1;
  d.action_dim = 1;
  auto rec = [](double s, double sp, int traj, int step) {
    TransitionRecord r;
    r.s = {s};
    r.a = {0.0};
    r.s_next = {sp};
    r.trajectory_id = traj;
    r.step_index = step;
    return r;
  };
  // A -> B -> C and D -> B
  d.records = {rec(0, 1, 0, 0), rec(1, 2, 0, 1), rec(3, 1, 1, 0)};
  const StateIndex idx = unique_states(d);
  CHECK(idx.size() == 4);
  CHECK(idx.states[0] == Vec{0.0});
  CHECK(idx.states[1] == Vec{1.0});
  CHECK(idx.states[2] == Vec{2.0});
  CHECK(idx.states[3] == Vec{3.0});
  CHECK(idx.find(Vec{1.0}) == 1);
  CHECK(idx.find(Vec{9.0}) == -1);
  CHECK(idx.recorded_next[0] == std::vector<int>{1});
  CHECK(idx.recorded_next[1] == std::vector<int>{2});
  CHECK(idx.has_outgoing[3]);
  CHECK(!idx.has_outgoing[2]);

  // idempotent / order stable
  const StateIndex again = unique_states(d);
  CHECK(again.states == idx.states);
}

TEST_CASE("normalize_states: constant feature maps to zero") {
  Dataset d;
  d.state_dim = 2;
  d.action_dim = 1;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    TransitionRecord r;
    r.s = {5.0, rng.uniform(-1, 1)};
    r.a = {0.0};
    r.s_next = {5.0, rng.uniform(-1, 1)};
    r.trajectory_id = i;
    r.step_index = 0;
    d.records.push_back(r);
  }
  const Dataset n = normalize_states(d);
  for (const auto& r : n.records) {
    CHECK(r.s[0] == doctest::Approx(0.0));
    CHECK(r.s_next[0] == doctest::Approx(0.0));
  }
}

TEST_CASE("normalize_states: pooled mean vanishes and inversion round-trips") {
  Rng rng(17);
  const Dataset d = random_dataset(rng, 100);
  const Dataset n = normalize_states(d);
  REQUIRE(n.normalization.has_value());

  // recompute the pooled mean after normalization
  Vec mean(size_t(n.state_dim), 0.0);
  for (const auto& r : n.records)
    for (int k = 0; k < n.state_dim; ++k) mean[size_t(k)] += r.s[size_t(k)] + r.s_next[size_t(k)];
  for (auto& m : mean) m /= 2.0 * double(n.records.size());
  for (double m : mean) CHECK(std::fabs(m) < 1e-9);

  // invertibility within 1e-10
  for (size_t i = 0; i < d.records.size(); ++i) {
    const Vec back = n.normalization->invert(n.records[i].s);
    for (int k = 0; k < d.state_dim; ++k)
      CHECK(std::fabs(back[size_t(k)] - d.records[i].s[size_t(k)]) < 1e-10);
  }
}

TEST_CASE("normalize_states: already standardized data only shrinks by eps") {
  // unit-std zero-mean feature: output == input / (1 + 1e-3) approximately
  Dataset d;
  d.state_dim = 1;
  d.action_dim = 1;
  auto add = [&d](double s, double sp) {
    TransitionRecord r;
    r.s = {s};
    r.a = {0.0};
    r.s_next = {sp};
    r.trajectory_id = int(d.records.size());
    r.step_index = 0;
    d.records.push_back(r);
  };
  add(1.0, -1.0);
  add(-1.0, 1.0);
  const Dataset n = normalize_states(d);
  CHECK(n.records[0].s[0] == doctest::Approx(1.0 / 1.001));
}

TEST_CASE("dataset file: save/load round-trips exactly") {
  Rng rng(23);
  const Dataset d = random_dataset(rng, 57);
  const std::string path = temp_path("scrl_ds_roundtrip.jsonl");
  save_dataset(d, path);
  const Dataset back = load_dataset(path);
  CHECK(back == d);
  fs::remove(path);
}

TEST_CASE("dataset file: wrong state_dim is reported with its line number") {
  const std::string path = temp_path("scrl_ds_badline.jsonl");
  {
    std::ofstream out(path);
    out << R"({"state_dim":2,"action_dim":1})" << "\n";
    for (int i = 0; i < 5; ++i)
      out << R"({"t":0,"i":)" << i
          << R"(,"s":[0.0,0.0],"a":[0.0],"r":0.0,"sn":[0.0,0.0],"done":false})"
          << "\n";
    // line 7: state has dim 1
    out << R"({"t":0,"i":5,"s":[0.0],"a":[0.0],"r":0.0,"sn":[0.0,0.0],"done":false})"
        << "\n";
  }
  CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("line 7"), ValidationError);
  fs::remove(path);
}

TEST_CASE("dataset file: header-only file loads as an empty dataset") {
  const std::string path = temp_path("scrl_ds_empty.jsonl");
  {
    std::ofstream out(path);
    out << R"({"state_dim":4,"action_dim":2})" << "\n";
  }
  const Dataset d = load_dataset(path);
  CHECK(d.records.empty());
  CHECK(d.state_dim == 4);
  CHECK(d.action_dim == 2);
  fs::remove(path);
}

TEST_CASE("dataset file: zero-byte file is a parse error") {
  const std::string path = temp_path("scrl_ds_zero.jsonl");
  { std::ofstream out(path); }
  CHECK_THROWS_AS(load_dataset(path), ValidationError);
  fs::remove(path);
}

TEST_CASE("dataset validation: trajectory ids and step ordering") {
  Rng rng(29);
  Dataset d = random_dataset(rng, 20);
  d.records[5].trajectory_id = 7;  // breaks contiguity
  CHECK_THROWS_AS(d.validate(), ValidationError);
}
