#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "scrl/common.hpp"
#include "scrl/dataset.hpp"
#include "scrl/mdp.hpp"
#include "scrl/reachability.hpp"
#include "scrl/tabular.hpp"

using namespace scrl;

namespace {

// Exact linear models for s' = s + a built from single linear layers:
// the forward delta head returns a, the inverse returns s' - s.
MlpEnsemble exact_forward(int dim) {
  Mlp net = Mlp::make({2 * dim, dim}, 0);
  std::fill(net.layers[0].w.begin(), net.layers[0].w.end(), 0.0);
  std::fill(net.layers[0].b.begin(), net.layers[0].b.end(), 0.0);
  for (int i = 0; i < dim; ++i) net.layers[0].w[size_t(i * 2 * dim + dim + i)] = 1.0;
  MlpEnsemble ens;
  ens.members = {net};
  return ens;
}

MlpEnsemble exact_inverse(int dim) {
  Mlp net = Mlp::make({2 * dim, dim}, 0);
  std::fill(net.layers[0].w.begin(), net.layers[0].w.end(), 0.0);
  std::fill(net.layers[0].b.begin(), net.layers[0].b.end(), 0.0);
  for (int i = 0; i < dim; ++i) {
    net.layers[0].w[size_t(i * 2 * dim + i)] = -1.0;
    net.layers[0].w[size_t(i * 2 * dim + dim + i)] = 1.0;
  }
  MlpEnsemble ens;
  ens.members = {net};
  return ens;
}

std::vector<Vec> random_states(Rng& rng, int n, int dim, double lo, double hi) {
  std::vector<Vec> out;
  for (int i = 0; i < n; ++i) {
    Vec v(size_t(dim), 0.0);
    for (auto& x : v) x = rng.uniform(lo, hi);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

TEST_CASE("grid_reachable: four cardinal neighbours, unfiltered, symmetric") {
  const auto r = grid_reachable({3, 4});
  const std::set<std::pair<int, int>> got(r.begin(), r.end());
  CHECK(got == std::set<std::pair<int, int>>{{4, 4}, {2, 4}, {3, 5}, {3, 3}});

  // boundary cells keep their off-grid neighbours; filtering is downstream
  const auto r0 = grid_reachable({0, 0});
  const std::set<std::pair<int, int>> got0(r0.begin(), r0.end());
  CHECK(got0.count({-1, 0}) == 1);
  CHECK(got0.count({0, -1}) == 1);

  // symmetry: b in SR(a) iff a in SR(b)
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const std::pair<int, int> a{rng.below(10), rng.below(10)};
    for (const auto& b : grid_reachable(a)) {
      const auto back = grid_reachable(b);
      CHECK(std::find(back.begin(), back.end(), a) != back.end());
    }
  }
}

TEST_CASE("candidate_range: degenerate single sample and zero action space") {
  const MlpEnsemble fwd = exact_forward(2);
  const Vec s{0.3, -0.2};

  Rng rng1(77);
  const RangeBox one = candidate_range(s, fwd, 1, {-0.5, -0.5}, {0.5, 0.5}, rng1);
  CHECK(one.lo == one.hi);

  Rng rng2(78);
  const RangeBox zero = candidate_range(s, fwd, 16, {0.0, 0.0}, {0.0, 0.0}, rng2);
  CHECK(zero.lo == s);
  CHECK(zero.hi == s);
}

TEST_CASE("candidate_range: linear dynamics envelope approaches [s-1, s+1]") {
  const MlpEnsemble fwd = exact_forward(3);
  const Vec s{0.1, 0.2, 0.3};
  Rng rng(9);
  const RangeBox box = candidate_range(s, fwd, 4000, {-1, -1, -1}, {1, 1, 1}, rng);
  for (int d = 0; d < 3; ++d) {
    CHECK(box.lo[size_t(d)] == doctest::Approx(s[size_t(d)] - 1.0).epsilon(0.01));
    CHECK(box.hi[size_t(d)] == doctest::Approx(s[size_t(d)] + 1.0).epsilon(0.01));
  }
}

TEST_CASE("candidate_range: box contains every sampled prediction") {
  const MlpEnsemble fwd = exact_forward(2);
  const Vec s{0.0, 0.0};
  const uint64_t seed = 1234;
  Rng rng_a(seed);
  const RangeBox box = candidate_range(s, fwd, 64, {-0.2, -0.2}, {0.2, 0.2}, rng_a);
  // replay the identical draw stream
  Rng rng_b(seed);
  for (int i = 0; i < 64; ++i) {
    Vec a{rng_b.uniform(-0.2, 0.2), rng_b.uniform(-0.2, 0.2)};
    CHECK(box.contains(forward_predict(fwd, s, a)));
  }
}

TEST_CASE("spatial index: equals linear scan on 1000 random instances") {
  Rng rng(11);
  const auto states = random_states(rng, 1000, 2, -1.0, 1.0);
  const SpatialIndex index(states);
  for (int trial = 0; trial < 200; ++trial) {
    RangeBox box;
    const double cx = rng.uniform(-1, 1), cy = rng.uniform(-1, 1);
    const double wx = rng.uniform(0.0, 0.8), wy = rng.uniform(0.0, 0.8);
    box.lo = {cx - wx, cy - wy};
    box.hi = {cx + wx, cy + wy};
    std::vector<int> expect;
    for (int i = 0; i < int(states.size()); ++i)
      if (box.contains(states[size_t(i)])) expect.push_back(i);
    CHECK(index.query(box) == expect);
  }
}

TEST_CASE("spatial index: full-cover and empty boxes") {
  Rng rng(13);
  const auto states = random_states(rng, 257, 3, -2.0, 2.0);
  const SpatialIndex index(states);
  RangeBox all;
  all.lo = {-3, -3, -3};
  all.hi = {3, 3, 3};
  CHECK(index.query(all).size() == states.size());
  RangeBox none;
  none.lo = {10, 10, 10};
  none.hi = {10, 10, 10};
  CHECK(index.query(none).empty());
}

TEST_CASE("estimate_reachable: exact composition fixed point is accepted") {
  const int dim = 2;
  const MlpEnsemble fwd = exact_forward(dim);
  const MlpEnsemble inv = exact_inverse(dim);
  const Vec s{0.25, 0.5};
  const std::vector<Vec> states{{0.3, 0.45}, {0.5, 0.9}};
  const std::vector<int> ids{0, 1};
  ReachCriterion crit;
  crit.scaled = false;
  crit.epsilon = 1e-9;
  const auto out = estimate_reachable(s, ids, states, fwd, inv, crit, nullptr);
  REQUIRE(out.size() == 2);  // perfect models compose to near-zero residual
  CHECK(out[0].residual <= 1e-12);
}

TEST_CASE("estimate_reachable: scaled mode demands a range box") {
  const MlpEnsemble fwd = exact_forward(1);
  const MlpEnsemble inv = exact_inverse(1);
  ReachCriterion crit;
  crit.scaled = true;
  CHECK_THROWS_AS(
      estimate_reachable(Vec{0.0}, std::vector<int>{0}, {{0.1}}, fwd, inv, crit, nullptr),
      ConfigError);
}

TEST_CASE("estimate_reachable: zero-width scaled dimension falls back to eps_s") {
  const MlpEnsemble fwd = exact_forward(1);
  const MlpEnsemble inv = exact_inverse(1);
  RangeBox degenerate;
  degenerate.lo = {0.5};
  degenerate.hi = {0.5};
  ReachCriterion crit;
  crit.scaled = true;
  crit.epsilon = 1e9;  // accept anything; the point is that it stays finite
  const auto out = estimate_reachable(Vec{0.0}, std::vector<int>{0}, {{0.1}}, fwd, inv,
                                      crit, &degenerate);
  REQUIRE(out.size() == 1);
  CHECK(std::isfinite(out[0].residual));
}

TEST_CASE("pipeline: perfect models on the unclipped linear env hit the envelope") {
  // s' = s + a with ||a||_inf <= 0.2; ground truth is the 0.2 box
  const int dim = 2;
  Rng rng(21);
  const auto states = random_states(rng, 600, dim, 0.0, 1.0);
  const MlpEnsemble fwd = exact_forward(dim);
  const MlpEnsemble inv = exact_inverse(dim);

  ReachCriterion crit;  // defaults: scaled L-inf, eps 0.1
  ReachBuildOptions opt;
  opt.n_random = 256;
  opt.action_lo = {-0.2, -0.2};
  opt.action_hi = {0.2, 0.2};
  opt.seed = 7;
  const ReachabilityIndex index = build_reachability_index(states, fwd, inv, crit, opt);

  size_t tp = 0, accepted = 0, truth = 0;
  for (int s = 0; s < int(states.size()); ++s) {
    std::set<int> true_set;
    for (int j = 0; j < int(states.size()); ++j) {
      bool in = true;
      for (int d = 0; d < dim; ++d)
        in &= std::fabs(states[size_t(j)][size_t(d)] - states[size_t(s)][size_t(d)]) <= 0.2;
      if (in) true_set.insert(j);
    }
    truth += true_set.size();
    for (const auto& c : index.cands[size_t(s)]) {
      ++accepted;
      tp += true_set.count(c.id);
    }
  }
  const double precision = double(tp) / double(accepted);
  const double recall = double(tp) / double(truth);
  CHECK(precision >= 0.9);
  CHECK(recall >= 0.9);
}

TEST_CASE("pipeline: bypass-index path returns the identical candidate sets") {
  const int dim = 2;
  Rng rng(23);
  const auto states = random_states(rng, 200, dim, 0.0, 1.0);
  const MlpEnsemble fwd = exact_forward(dim);
  const MlpEnsemble inv = exact_inverse(dim);
  ReachCriterion crit;
  ReachBuildOptions opt;
  opt.n_random = 32;
  opt.action_lo = {-0.2, -0.2};
  opt.action_hi = {0.2, 0.2};
  opt.seed = 99;
  const ReachabilityIndex with_index = build_reachability_index(states, fwd, inv, crit, opt);
  opt.bypass_index = true;
  const ReachabilityIndex bypass = build_reachability_index(states, fwd, inv, crit, opt);
  REQUIRE(with_index.size() == bypass.size());
  for (int s = 0; s < with_index.size(); ++s)
    CHECK(with_index.id_set(s) == bypass.id_set(s));
}

TEST_CASE("criterion properties: epsilon monotonicity and norm nesting, exactly") {
  // noisy models so residuals are spread out
  const int dim = 3;
  MlpEnsemble fwd = exact_forward(dim);
  MlpEnsemble inv = exact_inverse(dim);
  Rng rng(31);
  for (auto& w : fwd.members[0].layers[0].w) w += rng.uniform(-0.05, 0.05);
  for (auto& w : inv.members[0].layers[0].w) w += rng.uniform(-0.05, 0.05);

  const auto states = random_states(rng, 120, dim, 0.0, 1.0);
  std::vector<int> ids(states.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = int(i);

  const Vec s = states[0];
  RangeBox box;
  box.lo = Vec(size_t(dim), -0.5);
  box.hi = Vec(size_t(dim), 1.5);

  auto accept_set = [&](Norm norm, double eps, bool scaled) {
    ReachCriterion crit;
    crit.norm = norm;
    crit.epsilon = eps;
    crit.scaled = scaled;
    const auto out = estimate_reachable(s, ids, states, fwd, inv, crit, &box);
    std::set<int> got;
    for (const auto& c : out) got.insert(c.id);
    return got;
  };

  for (bool scaled : {false, true}) {
    // monotone in epsilon
    std::set<int> prev;
    for (double eps : {0.01, 0.05, 0.1, 0.5, 1.0}) {
      const auto cur = accept_set(Norm::linf, eps, scaled);
      CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = cur;
    }
    // norm nesting at equal epsilon: L1 subset of L2 subset of Linf
    const auto a1 = accept_set(Norm::l1, 0.2, scaled);
    const auto a2 = accept_set(Norm::l2, 0.2, scaled);
    const auto ai = accept_set(Norm::linf, 0.2, scaled);
    CHECK(std::includes(a2.begin(), a2.end(), a1.begin(), a1.end()));
    CHECK(std::includes(ai.begin(), ai.end(), a2.begin(), a2.end()));
  }
}

TEST_CASE("k_step_reachable: k=1 delegates to estimate_reachable exactly") {
  const int dim = 2;
  const MlpEnsemble fwd = exact_forward(dim);
  const MlpEnsemble inv = exact_inverse(dim);
  Rng rng(37);
  const auto states = random_states(rng, 60, dim, 0.0, 1.0);
  std::vector<int> ids(states.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = int(i);
  ReachCriterion crit;
  crit.scaled = false;
  crit.epsilon = 0.1;
  KStepOptions opt;
  opt.action_lo = {-0.2, -0.2};
  opt.action_hi = {0.2, 0.2};
  const auto direct = estimate_reachable(states[0], ids, states, fwd, inv, crit, nullptr);
  const auto k1 = k_step_reachable(states[0], 1, ids, states, fwd, inv, crit, nullptr, opt);
  REQUIRE(direct.size() == k1.size());
  for (size_t i = 0; i < direct.size(); ++i) {
    CHECK(direct[i].id == k1[i].id);
    CHECK(direct[i].residual == k1[i].residual);
  }
  CHECK_THROWS_AS(
      k_step_reachable(states[0], 0, ids, states, fwd, inv, crit, nullptr, opt),
      ValidationError);
}

// Inverse model that saturates at the action bound c, the shape a regression
// on bounded-action data converges to: clamp(s'-s, -c, c) built exactly from
// two ReLU units.
MlpEnsemble saturating_inverse(double c) {
  Mlp net = Mlp::make({2, 2, 1}, 0);
  net.layers[0].w = {-1.0, 1.0, -1.0, 1.0};  // both units read s' - s
  net.layers[0].b = {c, -c};
  net.layers[1].w = {1.0, -1.0};
  net.layers[1].b = {-c};
  MlpEnsemble ens;
  ens.members = {net};
  return ens;
}

TEST_CASE("k_step_reachable: two model steps bridge a 0.3 gap") {
  const int dim = 1;
  const MlpEnsemble fwd = exact_forward(dim);
  const MlpEnsemble inv = saturating_inverse(0.2);
  const std::vector<Vec> states{{0.0}, {0.3}, {0.9}};
  const std::vector<int> ids{0, 1, 2};
  ReachCriterion crit;
  crit.scaled = false;
  crit.epsilon = 0.05;
  KStepOptions opt;
  opt.samples = 512;
  opt.action_lo = {-0.2};
  opt.action_hi = {0.2};
  opt.seed = 5;

  const auto k1 = k_step_reachable(states[0], 1, ids, states, fwd, inv, crit, nullptr, opt);
  std::set<int> k1_ids;
  for (const auto& c : k1) k1_ids.insert(c.id);
  CHECK(k1_ids.count(1) == 0);  // 0.3 away: not one-step reachable under eps 0.05

  const auto k2 = k_step_reachable(states[0], 2, ids, states, fwd, inv, crit, nullptr, opt);
  std::set<int> k2_ids;
  for (const auto& c : k2) k2_ids.insert(c.id);
  CHECK(k2_ids.count(1) == 1);  // reachable through an intermediate point
  CHECK(k2_ids.count(2) == 0);  // 0.9 is beyond two steps
}

TEST_CASE("k_step_reachable_exact: maze two-step set from enumeration") {
  MazeScenario sc;
  sc.width = 8;
  sc.height = 8;
  sc.goal = {7, 7};
  const MazeMdp maze = grid_maze_from_scenario(sc);
  std::vector<char> in_dataset(size_t(maze.mdp.num_states()), 1);
  auto step_fn = [&maze](int s, int a) { return maze.mdp.next[size_t(s)][size_t(a)]; };
  const int s = maze.id_of(3, 3);
  const auto two = k_step_reachable_exact(step_fn, 4, s, 2, in_dataset);
  const std::set<int> got(two.begin(), two.end());
  CHECK(got.count(maze.id_of(5, 3)) == 1);
  CHECK(got.count(maze.id_of(4, 4)) == 1);
  CHECK(got.count(maze.id_of(3, 3)) == 1);  // out-and-back
  CHECK(got.count(maze.id_of(4, 3)) == 0);  // distance 1 is not exactly-2 in open space
}

TEST_CASE("reachability index: save/load round trip") {
  ReachabilityIndex idx;
  idx.criterion.norm = Norm::l2;
  idx.criterion.epsilon = 0.05;
  idx.criterion.scaled = true;
  idx.k = 2;
  idx.cands = {{{1, 0.01}, {2, 0.04}}, {}, {{0, 0.001}}};
  const std::string path =
      (std::filesystem::temp_directory_path() / "scrl_reach_rt.jsonl").string();
  idx.save(path);
  const ReachabilityIndex back = ReachabilityIndex::load(path);
  CHECK(back.k == 2);
  CHECK(back.criterion.norm == Norm::l2);
  CHECK(back.criterion.epsilon == doctest::Approx(0.05));
  REQUIRE(back.cands.size() == 3);
  CHECK(back.cands[0].size() == 2);
  CHECK(back.cands[0][1].id == 2);
  CHECK(back.cands[0][1].residual == doctest::Approx(0.04));
  std::filesystem::remove(path);
}

TEST_CASE("reachability report: oracle as both estimate and truth") {
  MazeScenario sc;
  sc.width = 5;
  sc.height = 5;
  sc.goal = {4, 4};
  sc.trajectories = {{{0, 0}, {1, 0}, {2, 0}, {2, 1}, {2, 2}}};
  const MazeMdp maze = grid_maze_from_scenario(sc);
  const Dataset d = dataset_from_maze(maze);
  const StateIndex ds = unique_states(d);
  const ReachabilityIndex exact = exact_grid_reach_index_dataset(maze, ds, 1);
  std::vector<std::vector<int>> truth;
  for (int s = 0; s < exact.size(); ++s) truth.push_back(exact.id_set(s));
  const ReachReport rep = reachability_report(exact, &truth);
  REQUIRE(rep.precision.has_value());
  CHECK(*rep.precision == doctest::Approx(1.0));
  CHECK(*rep.recall == doctest::Approx(1.0));
  CHECK(rep.n_states == ds.size());
  CHECK(rep.to_text().find("precision") != std::string::npos);
}

TEST_CASE("reachability report: accepted-set size grows with epsilon") {
  const int dim = 2;
  MlpEnsemble fwd = exact_forward(dim);
  MlpEnsemble inv = exact_inverse(dim);
  Rng rng(41);
  for (auto& w : fwd.members[0].layers[0].w) w += rng.uniform(-0.03, 0.03);

  const auto states = random_states(rng, 150, dim, 0.0, 1.0);
  size_t prev_total = 0;
  for (double eps : {0.01, 0.05, 0.1, 0.5}) {
    ReachCriterion crit;
    crit.epsilon = eps;
    ReachBuildOptions opt;
    opt.n_random = 64;
    opt.action_lo = {-0.2, -0.2};
    opt.action_hi = {0.2, 0.2};
    opt.seed = 3;
    const ReachabilityIndex idx = build_reachability_index(states, fwd, inv, crit, opt);
    const ReachReport rep = reachability_report(idx, nullptr);
    CHECK(rep.total_candidates >= prev_total);
    prev_total = rep.total_candidates;
  }
}
