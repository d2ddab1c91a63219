#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "scrl/common.hpp"
#include "scrl/pointmass.hpp"
#include "scrl/stacq.hpp"
#include "scrl/tabular.hpp"

using namespace scrl;

namespace {

MlpEnsemble exact_forward(int dim) {
  Mlp net = Mlp::make({2 * dim, dim}, 0);
  std::fill(net.layers[0].w.begin(), net.layers[0].w.end(), 0.0);
  std::fill(net.layers[0].b.begin(), net.layers[0].b.end(), 0.0);
  for (int i = 0; i < dim; ++i) net.layers[0].w[size_t(i * 2 * dim + dim + i)] = 1.0;
  MlpEnsemble ens;
  ens.members = {net};
  return ens;
}

// Single-layer critic returning w . [s; sp] + b.
Mlp linear_critic(const Vec& w, double b) {
  Mlp net = Mlp::make({int(w.size()), 1}, 0);
  net.layers[0].w = w;
  net.layers[0].b = {b};
  return net;
}

// A tiny 1-D chain problem: states 0.0, 0.1, ..., recorded consecutively,
// -0.1 per hop and 1.0 into the terminal end.
StacqProblem chain_problem(int n) {
  Dataset d;
  d.state_dim = 1;
  d.action_dim = 1;
  for (int i = 0; i + 1 < n; ++i) {
    TransitionRecord r;
    r.s = {0.1 * i};
    r.a = {0.1};
    r.s_next = {0.1 * (i + 1)};
    r.r = (i + 2 == n) ? 1.0 : -0.1;
    r.terminal = (i + 2 == n);
    r.trajectory_id = 0;
    r.step_index = i;
    d.records.push_back(r);
  }
  ReachabilityIndex reach;
  reach.cands.assign(size_t(n), {});
  for (int i = 0; i + 1 < n; ++i) reach.cands[size_t(i)].push_back({i + 1, 0.0});
  return StacqProblem::assemble(d, false, std::move(reach), {-0.2}, {0.2});
}

Vec fd_actor_gradient(Mlp& actor, const std::function<double()>& loss, double h = 1e-5) {
  Vec p = actor.flat_params();
  Vec g(p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    actor.set_flat_params(p);
    const double up = loss();
    p[i] = saved - h;
    actor.set_flat_params(p);
    const double down = loss();
    p[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  actor.set_flat_params(p);
  return g;
}

double max_rel_err(const Vec& a, const Vec& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1e-6, std::fabs(a[i]), std::fabs(b[i])});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

Vec flat_grads(const Mlp::Grads& g) {
  Vec out;
  for (const auto& layer : g.layers) {
    out.insert(out.end(), layer.w.begin(), layer.w.end());
    out.insert(out.end(), layer.b.begin(), layer.b.end());
  }
  return out;
}

}  // namespace

TEST_CASE("lambda_scale: unit, floor, and negative-mean cases") {
  CHECK(lambda_scale(2.5, 2.5) == doctest::Approx(1.0));
  CHECK(lambda_scale(-2.5, 2.5) == doctest::Approx(1.0));  // |mean| in the denominator
  CHECK(lambda_scale(0.0, 1.0, 1e-6) == doctest::Approx(1e6));
  CHECK(lambda_scale(5.0, 1.0) == doctest::Approx(0.2));
}

TEST_CASE("actor clipping: actions clamp to the declared bounds") {
  ActorNet actor = ActorNet::make(2, 2, 8, 1, {-0.2, -0.2}, {0.2, 0.2}, 3);
  // inflate the last layer so raw outputs overflow the bounds
  for (auto& w : actor.net.layers.back().w) w *= 100.0;
  const Vec a = actor.act(Vec{0.9, -0.9});
  for (double v : a) {
    CHECK(v <= 0.2);
    CHECK(v >= -0.2);
  }
}

TEST_CASE("best_reachable_next: singleton, ordering, fallback") {
  StacqProblem prob = chain_problem(4);
  // critic scoring sp[0]: higher next-coordinate wins
  CriticBank bank;
  bank.online = {linear_critic({0.0, 1.0}, 0.0)};
  bank.target = bank.online;

  // singleton candidate set
  CHECK(best_reachable_next(prob, bank, 0) == 1);

  // two candidates with Q 1.0 and 2.0 (coordinates 0.1 vs 0.2 scaled)
  prob.reach.cands[0] = {{1, 0.0}, {2, 0.0}};
  CHECK(best_reachable_next(prob, bank, 0) == 2);

  // argmax is invariant under positive affine rescaling of the critic
  CriticBank scaled;
  scaled.online = {linear_critic({0.0, 7.0}, 3.0)};
  scaled.target = scaled.online;
  CHECK(best_reachable_next(prob, scaled, 0) == 2);

  // equal Q: smaller residual, then lower index
  CriticBank flat;
  flat.online = {linear_critic({0.0, 0.0}, 1.0)};
  flat.target = flat.online;
  prob.reach.cands[0] = {{1, 0.5}, {2, 0.1}};
  CHECK(best_reachable_next(prob, flat, 0) == 2);
  prob.reach.cands[0] = {{1, 0.1}, {2, 0.1}};
  CHECK(best_reachable_next(prob, flat, 0) == 1);

  // empty reach: recorded successor fallback
  prob.reach.cands[0].clear();
  CHECK(best_reachable_next(prob, bank, 0) == 1);
}

TEST_CASE("actor loss: lambda=0 is pure state cloning on the linear model") {
  const MlpEnsemble fwd = exact_forward(1);
  Mlp actor = Mlp::make({1, 8, 1}, 5);
  const Mlp critic = linear_critic({0.3, 0.7}, 0.1);
  const Vec s{0.2}, shat{0.4}, noise{0.0};

  const auto ev = actor_sample_loss(actor, fwd, std::span<const Mlp>(&critic, 1), s,
                                    shat, noise, 0.0);
  // loss = (s + pi(s) - shat)^2 on the exact linear forward model
  const double a = actor.forward(s)[0];
  CHECK(ev.loss == doctest::Approx((s[0] + a - shat[0]) * (s[0] + a - shat[0])));
  CHECK(ev.predicted_next[0] == doctest::Approx(s[0] + a));
}

TEST_CASE("actor loss: increasing Q strictly decreases the loss at lambda > 0") {
  const MlpEnsemble fwd = exact_forward(1);
  Mlp actor = Mlp::make({1, 8, 1}, 6);
  const Vec s{0.2}, shat{0.4}, noise{0.01};
  const Mlp low = linear_critic({0.0, 0.0}, 1.0);
  const Mlp high = linear_critic({0.0, 0.0}, 2.0);
  const auto ev_low =
      actor_sample_loss(actor, fwd, std::span<const Mlp>(&low, 1), s, shat, noise, 0.7);
  const auto ev_high =
      actor_sample_loss(actor, fwd, std::span<const Mlp>(&high, 1), s, shat, noise, 0.7);
  CHECK(ev_high.q > ev_low.q);
  CHECK(ev_high.loss < ev_low.loss);
}

TEST_CASE("actor loss gradient matches finite differences through the full chain") {
  Rng rng(9);
  const int dim = 2;
  // imperfect forward ensemble (3 members) so the chain is nontrivial
  MlpEnsemble fwd = MlpEnsemble::make(3, {2 * dim, 12, dim}, 11);
  std::vector<Mlp> critics{Mlp::make({2 * dim, 10, 1}, 21), Mlp::make({2 * dim, 10, 1}, 22)};
  Mlp actor = Mlp::make({dim, 10, dim}, 31);

  const Vec s{0.3, -0.2}, shat{0.5, 0.1};
  Vec noise{rng.normal(0, 0.1), rng.normal(0, 0.1)};
  const double lambda = 0.8;

  Mlp::Grads grads = actor.make_grads();
  actor_sample_grad(actor, fwd, critics, s, shat, noise, lambda, 1.0, grads);

  auto loss = [&] {
    return actor_sample_loss(actor, fwd, critics, s, shat, noise, lambda).loss;
  };
  const Vec numeric = fd_actor_gradient(actor, loss);
  CHECK(max_rel_err(flat_grads(grads), numeric) <= 1e-4);
}

TEST_CASE("train_stacq: zero iterations returns freshly initialized networks") {
  StacqProblem prob = chain_problem(4);
  const MlpEnsemble fwd = exact_forward(1);
  RewardSpec reward;
  reward.env = [](const Vec&, const Vec& sp) { return -sp[0]; };
  StacqConfig cfg;
  cfg.iterations = 0;
  cfg.hidden = 8;
  cfg.batch_size = 4;
  cfg.seed = 42;
  const StacqResult res = train_stacq(prob, fwd, reward, std::nullopt, cfg);
  CHECK(res.metrics.empty());
  const ActorNet fresh = ActorNet::make(1, 1, 8, 2, {-0.2}, {0.2}, mix_seed(42, 0xAC70));
  CHECK(res.actor.net.flat_params() == fresh.net.flat_params());
}

TEST_CASE("train_stacq: gamma=0 drives the critic toward plain rewards") {
  StacqProblem prob = chain_problem(5);
  const MlpEnsemble fwd = exact_forward(1);
  RewardSpec reward;
  reward.env = [](const Vec&, const Vec&) { return 0.5; };
  StacqConfig cfg;
  cfg.gamma = 0.0;
  cfg.iterations = 800;
  cfg.batch_size = 8;
  cfg.hidden = 16;
  cfg.critic_count = 2;
  cfg.critic_lr = 3e-3;
  cfg.eval_interval = 100;  // rows hold means since the previous row
  cfg.seed = 1;
  const StacqResult res = train_stacq(prob, fwd, reward, std::nullopt, cfg);
  // recorded rewards pin the recorded pairs; check the fit there
  double worst = 0.0;
  for (size_t r = 0; r < prob.rec_src.size(); ++r) {
    const double q = res.critics.min_q(prob.states[size_t(prob.rec_src[r])],
                                       prob.states[size_t(prob.rec_dst[r])]);
    worst = std::max(worst, std::fabs(q - prob.rec_reward[r]));
  }
  CHECK(worst < 0.2);
  CHECK(res.metrics.back().critic_loss < 0.05);
}

TEST_CASE("train_stacq: identical seeds give identical metrics") {
  StacqProblem prob = chain_problem(5);
  const MlpEnsemble fwd = exact_forward(1);
  RewardSpec reward;
  reward.env = [](const Vec&, const Vec& sp) { return -std::fabs(0.4 - sp[0]); };
  StacqConfig cfg;
  cfg.iterations = 60;
  cfg.batch_size = 8;
  cfg.hidden = 12;
  cfg.critic_count = 2;
  cfg.eval_interval = 20;
  cfg.seed = 7;

  const StacqResult a = train_stacq(prob, fwd, reward, std::nullopt, cfg);
  const StacqResult b = train_stacq(prob, fwd, reward, std::nullopt, cfg);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].critic_loss == b.metrics[i].critic_loss);
    CHECK(a.metrics[i].actor_loss == b.metrics[i].actor_loss);
    CHECK(a.metrics[i].mean_q == b.metrics[i].mean_q);
  }
  CHECK(a.actor.net.flat_params() == b.actor.net.flat_params());
}

TEST_CASE("one-step critic: converges to the on-policy evaluation oracle") {
  // chain with recorded-successor-only reachability: the composite target
  // telescopes to the behavior return
  const int n = 5;
  StacqProblem prob = chain_problem(n);
  const MlpEnsemble fwd = exact_forward(1);
  RewardSpec reward;
  reward.env = [&prob](const Vec& s, const Vec& sp) {
    // reconstruct the recorded reward structure for unrecorded queries
    (void)s;
    return sp[0] >= 0.1 * (double(prob.states.size()) - 1.0) - 1e-9 ? 1.0 : -0.1;
  };
  StacqConfig cfg;
  cfg.gamma = 0.9;
  cfg.iterations = 6000;
  cfg.batch_size = 8;
  cfg.hidden = 24;
  cfg.critic_lr = 2e-3;
  cfg.tau = 0.05;
  cfg.eval_interval = 6000;
  cfg.seed = 3;
  cfg.cosine_actor = false;
  const StacqResult res = train_onestep(prob, fwd, reward, std::nullopt, cfg);

  // oracle: discounted return along the single trajectory
  std::vector<double> oracle(prob.rec_src.size());
  for (size_t i = 0; i < prob.rec_src.size(); ++i) {
    double v = 0.0, disc = 1.0;
    for (size_t j = i; j < prob.rec_src.size(); ++j) {
      v += disc * prob.rec_reward[j];
      disc *= cfg.gamma;
    }
    oracle[i] = v;
  }
  for (size_t i = 0; i < prob.rec_src.size(); ++i) {
    const double q = res.critics.online[0].forward(
        Vec{prob.states[size_t(prob.rec_src[i])][0],
            prob.states[size_t(prob.rec_dst[i])][0]})[0];
    CHECK(std::fabs(q - oracle[i]) < 1e-4);
  }
  // single critic per the one-step variant
  CHECK(res.critics.online.size() == 1);
}

TEST_CASE("train_stacq: independent target mode runs and stays deterministic") {
  StacqProblem prob = chain_problem(5);
  const MlpEnsemble fwd = exact_forward(1);
  RewardSpec reward;
  reward.env = [](const Vec&, const Vec& sp) { return -sp[0]; };
  StacqConfig cfg;
  cfg.iterations = 80;
  cfg.batch_size = 8;
  cfg.hidden = 12;
  cfg.critic_count = 3;
  cfg.independent_targets = true;
  cfg.eval_interval = 40;
  cfg.seed = 4;
  const StacqResult a = train_stacq(prob, fwd, reward, std::nullopt, cfg);
  const StacqResult b = train_stacq(prob, fwd, reward, std::nullopt, cfg);
  REQUIRE(!a.metrics.empty());
  for (const auto& row : a.metrics) CHECK(std::isfinite(row.critic_loss));
  CHECK(a.actor.net.flat_params() == b.actor.net.flat_params());

  // shared-min mode regresses non-argmin members toward different targets, so
  // at least one critic ends up with different parameters
  cfg.independent_targets = false;
  const StacqResult c = train_stacq(prob, fwd, reward, std::nullopt, cfg);
  bool any_diff = false;
  for (int k = 0; k < cfg.critic_count; ++k)
    any_diff |= (a.critics.online[size_t(k)].flat_params() !=
                 c.critics.online[size_t(k)].flat_params());
  CHECK(any_diff);
}

TEST_CASE("noise constant: std reading vs variance reading") {
  StacqConfig cfg;
  cfg.noise = 0.1;
  CHECK(cfg.noise_sigma() == doctest::Approx(0.1));
  cfg.noise_as_variance = true;
  CHECK(cfg.noise_sigma() == doctest::Approx(std::sqrt(0.1)));
}

TEST_CASE("critic target: the oracle Q* is a fixed point under perfect models") {
  // Discretized twin: a small open grid. With Q* from the oracle, the exact
  // transition model, and the greedy policy, the regression target
  // r(s, sp) + gamma Q*(sp, step(sp, pi*(sp))) must reproduce Q*(s, sp).
  MazeScenario sc;
  sc.width = 5;
  sc.height = 5;
  sc.goal = {4, 4};
  const MazeMdp maze = grid_maze_from_scenario(sc);
  const QssTable oracle = value_iteration_oracle(QssProblem::from_mdp(maze.mdp));

  double worst = 0.0;
  for (int s = 0; s < maze.mdp.num_states(); ++s) {
    if (maze.mdp.terminal[size_t(s)]) continue;
    for (int sp : maze.mdp.reachable_from(s)) {
      double target = *maze.mdp.reward_of(s, sp);
      if (!maze.mdp.terminal[size_t(sp)]) {
        // greedy next hop from sp through the exact model
        int best = -1;
        double best_q = 0.0;
        for (int spp : maze.mdp.reachable_from(sp)) {
          const double q = oracle.get(sp, spp);
          if (best < 0 || q > best_q) {
            best = spp;
            best_q = q;
          }
        }
        target += maze.mdp.discount * oracle.get(sp, best);
      }
      worst = std::max(worst, std::fabs(target - oracle.get(s, sp)));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("metrics csv: header, formatting, and nan for missing evals") {
  std::vector<MetricsRow> rows(1);
  rows[0].iteration = 10;
  rows[0].critic_loss = 0.5;
  rows[0].actor_loss = -1.25;
  rows[0].mean_q = 3.0;
  rows[0].eval_return_mean = std::numeric_limits<double>::quiet_NaN();
  rows[0].eval_return_std = std::numeric_limits<double>::quiet_NaN();
  const std::string path =
      (std::filesystem::temp_directory_path() / "scrl_metrics.csv").string();
  write_metrics_csv(path, rows);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  std::getline(in, line);
  CHECK(header == "iteration,critic_loss,actor_loss,mean_q,eval_return_mean,eval_return_std");
  CHECK(line.find("10,0.5,-1.25,3,") == 0);
  CHECK(line.find("nan") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("pointmass: dynamics, rewards, and analytic reachability") {
  PointMassEnv env;
  const Vec s{0.5, 0.5};
  // action clipping
  const Vec sp = env.step_state(s, Vec{1.0, -1.0});
  CHECK(sp[0] == doctest::Approx(0.7));
  CHECK(sp[1] == doctest::Approx(0.3));
  // state clipping at the box edge
  const Vec corner = env.step_state(Vec{0.95, 0.05}, Vec{0.2, -0.2});
  CHECK(corner[0] == doctest::Approx(1.0));
  CHECK(corner[1] == doctest::Approx(0.0));
  // reachability envelope
  CHECK(env.true_reachable(s, Vec{0.69, 0.31}));
  CHECK(!env.true_reachable(s, Vec{0.71, 0.5}));
  // terminal bonus
  CHECK(env.reward(s, env.goal) == doctest::Approx(env.goal_reward));
  CHECK(env.reward(s, Vec{0.5, 0.6}) < 0.0);

  // dataset generation is deterministic per seed and covers trajectories
  const Dataset a = env.generate_dataset(500, 11, 0.1);
  const Dataset b = env.generate_dataset(500, 11, 0.1);
  CHECK(a == b);
  CHECK(int(a.records.size()) >= 500);
  a.validate();
  const double mean_ret = PointMassEnv::dataset_mean_return(a);
  CHECK(std::isfinite(mean_ret));
}
