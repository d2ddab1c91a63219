#include "scrl/stacq.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "scrl/kern.hpp"

namespace scrl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::atomic<bool> g_empty_reach_warned{false};

void warn_empty_reach(int s) {
  if (!g_empty_reach_warned.exchange(true))
    std::fprintf(stderr,
                 "warning: empty reachable set at state %d; falling back to the "
                 "recorded successor\n",
                 s);
}

}  // namespace

double StacqConfig::noise_sigma() const {
  return noise_as_variance ? std::sqrt(noise) : noise;
}

void StacqConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (critic_count < 1) throw ConfigError("need at least one critic");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (eval_interval < 1) throw ConfigError("eval interval must be >= 1");
  if (hidden < 1 || hidden_layers < 1) throw ConfigError("bad network width/depth");
  if (actor_lr <= 0 || critic_lr <= 0) throw ConfigError("learning rates must be positive");
  if (lambda_floor <= 0) throw ConfigError("lambda floor must be positive");
}

CriticBank CriticBank::make(int count, int state_dim, int hidden, int layers,
                            uint64_t seed) {
  CriticBank bank;
  std::vector<int> sizes{2 * state_dim};
  for (int l = 0; l < layers; ++l) sizes.push_back(hidden);
  sizes.push_back(1);
  for (int k = 0; k < count; ++k) {
    bank.online.push_back(Mlp::make(sizes, mix_seed(seed, 0xC0 + uint64_t(k))));
    bank.target.push_back(bank.online.back());
  }
  return bank;
}

namespace {

double net_q(const Mlp& net, std::span<const double> s, std::span<const double> sp) {
  return net.forward(concat(s, sp))[0];
}

}  // namespace

double CriticBank::min_q(std::span<const double> s, std::span<const double> sp) const {
  double q = net_q(online[0], s, sp);
  for (size_t k = 1; k < online.size(); ++k) q = std::min(q, net_q(online[k], s, sp));
  return q;
}

double CriticBank::min_q_target(std::span<const double> s,
                                std::span<const double> sp) const {
  double q = net_q(target[0], s, sp);
  for (size_t k = 1; k < target.size(); ++k) q = std::min(q, net_q(target[k], s, sp));
  return q;
}

double CriticBank::member_q_target(int k, std::span<const double> s,
                                   std::span<const double> sp) const {
  return net_q(target[size_t(k)], s, sp);
}

ActorNet ActorNet::make(int state_dim, int action_dim, int hidden, int layers,
                        Vec action_lo, Vec action_hi, uint64_t seed) {
  ActorNet actor;
  std::vector<int> sizes{state_dim};
  for (int l = 0; l < layers; ++l) sizes.push_back(hidden);
  sizes.push_back(action_dim);
  actor.net = Mlp::make(sizes, mix_seed(seed, 0xAC));
  actor.target = actor.net;
  actor.action_lo = std::move(action_lo);
  actor.action_hi = std::move(action_hi);
  return actor;
}

namespace {

Vec clip_to(const Vec& lo, const Vec& hi, Vec a) {
  for (size_t d = 0; d < a.size(); ++d) a[d] = std::clamp(a[d], lo[d], hi[d]);
  return a;
}

}  // namespace

Vec ActorNet::act(std::span<const double> s) const {
  return clip_to(action_lo, action_hi, net.forward(s));
}

Vec ActorNet::act_target(std::span<const double> s) const {
  return clip_to(action_lo, action_hi, target.forward(s));
}

StacqProblem StacqProblem::assemble(const Dataset& raw, bool normalize,
                                    ReachabilityIndex reach, Vec action_lo,
                                    Vec action_hi) {
  if (raw.records.empty()) throw ValidationError("cannot assemble from an empty dataset");
  StacqProblem prob;
  prob.state_dim = raw.state_dim;
  prob.action_dim = raw.action_dim;
  prob.action_lo = std::move(action_lo);
  prob.action_hi = std::move(action_hi);

  const Dataset pipeline = normalize ? normalize_states(raw) : raw;
  prob.norm = pipeline.normalization;

  const StateIndex pipe_idx = unique_states(pipeline);
  const StateIndex raw_idx = unique_states(raw);
  if (pipe_idx.size() != raw_idx.size())
    throw ValidationError("normalization collapsed distinct states");
  prob.states = pipe_idx.states;
  prob.raw_states = raw_idx.states;
  prob.terminal = pipe_idx.terminal;
  prob.recorded_next = pipe_idx.recorded_next;

  for (const auto& rec : pipeline.records) {
    const int i = pipe_idx.find(rec.s);
    const int j = pipe_idx.find(rec.s_next);
    prob.rec_src.push_back(i);
    prob.rec_dst.push_back(j);
    prob.rec_reward.push_back(rec.r);
    prob.recorded_reward.emplace(pack_pair(i, j), rec.r);
  }

  if (int(reach.cands.size()) != int(prob.states.size()))
    throw ValidationError("reachability index covers " +
                          std::to_string(reach.cands.size()) + " states, dataset has " +
                          std::to_string(prob.states.size()));
  prob.reach = std::move(reach);
  return prob;
}

Vec StacqProblem::to_pipeline(const Vec& raw) const {
  return norm ? norm->apply(raw) : raw;
}

double StacqProblem::reward_between(const RewardSpec& rs, int i, int j) const {
  const auto it = recorded_reward.find(pack_pair(i, j));
  if (it != recorded_reward.end()) return it->second;
  if (rs.env) return rs.env(raw_states[size_t(i)], raw_states[size_t(j)]);
  if (rs.model != nullptr)
    return rs.model->predict(concat(states[size_t(i)], states[size_t(j)]))[0];
  throw ConfigError("no reward source for unrecorded pair (" + std::to_string(i) +
                    ", " + std::to_string(j) + ")");
}

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << "iteration,critic_loss,actor_loss,mean_q,eval_return_mean,eval_return_std\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration,
                  r.critic_loss, r.actor_loss, r.mean_q, r.eval_return_mean,
                  r.eval_return_std);
    out << buf;
  }
}

double lambda_scale(double mean_q, double alpha_reg, double floor) {
  double denom = std::fabs(mean_q);
  if (denom < floor) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
      std::fprintf(stderr, "warning: batch mean Q below floor %g in lambda scaling\n",
                   floor);
    denom = floor;
  }
  return alpha_reg / denom;
}

int best_reachable_next(const StacqProblem& prob, const CriticBank& critics, int s) {
  const auto& cands = prob.reach.cands[size_t(s)];
  if (cands.empty()) {
    if (!prob.recorded_next[size_t(s)].empty()) {
      warn_empty_reach(s);
      return prob.recorded_next[size_t(s)].front();
    }
    return -1;
  }
  int best = -1;
  double best_q = 0.0, best_res = 0.0;
  for (const auto& c : cands) {
    const double q = critics.min_q(prob.states[size_t(s)], prob.states[size_t(c.id)]);
    const bool better = best < 0 || q > best_q ||
                        (q == best_q && (c.residual < best_res ||
                                         (c.residual == best_res && c.id < best)));
    if (better) {
      best = c.id;
      best_q = q;
      best_res = c.residual;
    }
  }
  return best;
}

ActorLossEval actor_sample_loss(const Mlp& actor, const MlpEnsemble& fwd,
                                std::span<const Mlp> critics, const Vec& s,
                                const Vec& shat, const Vec& noise, double lambda) {
  ActorLossEval ev;
  Vec a = actor.forward(s);
  for (size_t d = 0; d < a.size(); ++d) a[d] += noise[d];
  const Vec x = concat(s, a);
  Vec sp = s;
  const double inv_m = 1.0 / double(fwd.members.size());
  for (const auto& member : fwd.members) {
    const Vec delta = member.forward(x);
    kern::axpy(inv_m, delta.data(), sp.data(), sp.size());
  }
  const Vec x2 = concat(s, sp);
  ev.q = critics[0].forward(x2)[0];
  for (size_t k = 1; k < critics.size(); ++k)
    ev.q = std::min(ev.q, critics[k].forward(x2)[0]);
  const double mse = kern::sq_err(sp.data(), shat.data(), sp.size());
  ev.loss = -lambda * ev.q + mse;
  ev.predicted_next = std::move(sp);
  return ev;
}

ActorLossEval actor_sample_grad(const Mlp& actor, const MlpEnsemble& fwd,
                                std::span<const Mlp> critics, const Vec& s,
                                const Vec& shat, const Vec& noise, double lambda,
                                double weight, Mlp::Grads& grads) {
  ActorLossEval ev;
  const size_t state_dim = s.size();

  Mlp::Trace atr;
  actor.forward(s, atr);
  Vec a = atr.acts.back();
  for (size_t d = 0; d < a.size(); ++d) a[d] += noise[d];
  const size_t action_dim = a.size();

  const Vec x = concat(s, a);
  Vec sp = s;
  std::vector<Mlp::Trace> ftr(fwd.members.size());
  const double inv_m = 1.0 / double(fwd.members.size());
  for (size_t m = 0; m < fwd.members.size(); ++m) {
    fwd.members[m].forward(x, ftr[m]);
    kern::axpy(inv_m, ftr[m].acts.back().data(), sp.data(), sp.size());
  }

  const Vec x2 = concat(s, sp);
  Mlp::Trace ctr;
  size_t argmin = 0;
  critics[0].forward(x2, ctr);
  ev.q = ctr.acts.back()[0];
  for (size_t k = 1; k < critics.size(); ++k) {
    const double qk = critics[k].forward(x2)[0];
    if (qk < ev.q) {
      ev.q = qk;
      argmin = k;
    }
  }
  if (argmin != 0) critics[argmin].forward(x2, ctr);

  const double mse = kern::sq_err(sp.data(), shat.data(), sp.size());
  ev.loss = -lambda * ev.q + mse;

  // dL/dsp = -lambda dQ/dsp + 2 (sp - shat), scaled by the batch weight.
  Vec dx2;
  critics[argmin].backward(ctr, Vec{1.0}, nullptr, &dx2);
  Vec dsp(state_dim);
  for (size_t d = 0; d < state_dim; ++d)
    dsp[d] = weight * (-lambda * dx2[state_dim + d] + 2.0 * (sp[d] - shat[d]));

  // Through the ensemble mean: each member contributes dsp / M at its action
  // input slice.
  Vec da(action_dim, 0.0);
  Vec dxm;
  for (size_t m = 0; m < fwd.members.size(); ++m) {
    Vec dy = dsp;  // d(sp)/d(delta_m) = I / M
    for (auto& v : dy) v *= inv_m;
    fwd.members[m].backward(ftr[m], std::move(dy), nullptr, &dxm);
    for (size_t d = 0; d < action_dim; ++d) da[d] += dxm[state_dim + d];
  }

  actor.backward(atr, std::move(da), &grads, nullptr);
  ev.predicted_next = std::move(sp);
  return ev;
}

namespace {

std::pair<double, double> evaluate_actor(const StacqProblem& prob, const ActorNet& actor,
                                         const EvalEnv& env, int episodes,
                                         uint64_t seed) {
  Rng rng(seed);
  std::vector<double> returns;
  for (int ep = 0; ep < episodes; ++ep) {
    Vec s = env.reset(rng);
    double ret = 0.0;
    for (int t = 0; t < env.max_steps; ++t) {
      const Vec a = actor.act(prob.to_pipeline(s));
      auto [sp, r, done] = env.step(s, a);
      ret += r;
      s = std::move(sp);
      if (done) break;
    }
    returns.push_back(ret);
  }
  if (returns.empty()) return {kNaN, kNaN};
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= double(returns.size());
  double var = 0.0;
  for (double r : returns) var += (r - mean) * (r - mean);
  var /= double(returns.size());
  return {mean, std::sqrt(std::max(0.0, var))};
}

struct LossAccum {
  double critic = 0.0, actor = 0.0, q = 0.0;
  long n_critic = 0, n_actor = 0;
  void reset() { *this = LossAccum{}; }
};

void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss))
    throw NumericError(std::string(what) + " loss became non-finite (diverged)");
}

// One Adam step per reward-model member on a random minibatch (Algorithm 1's
// per-iteration reward optimization).
void reward_model_step(const StacqProblem& prob, MlpEnsemble& model,
                       std::vector<Adam>& opts, int batch_size, double lr, Rng& rng) {
  const int n = int(prob.rec_src.size());
  Mlp::Trace tr;
  for (size_t m = 0; m < model.members.size(); ++m) {
    Mlp& net = model.members[m];
    Mlp::Grads grads = net.make_grads();
    const double inv_n = 1.0 / double(batch_size);
    for (int b = 0; b < batch_size; ++b) {
      const int rec = rng.below(n);
      const Vec x = concat(prob.states[size_t(prob.rec_src[size_t(rec)])],
                           prob.states[size_t(prob.rec_dst[size_t(rec)])]);
      net.forward(x, tr);
      Vec dy{2.0 * (tr.acts.back()[0] - prob.rec_reward[size_t(rec)]) * inv_n};
      net.backward(tr, std::move(dy), &grads, nullptr);
    }
    opts[m].step(net, grads, lr);
  }
}

}  // namespace

StacqResult train_stacq(const StacqProblem& prob, const MlpEnsemble& fwd,
                        const RewardSpec& reward,
                        const std::optional<EvalEnv>& eval_env, const StacqConfig& cfg) {
  cfg.validate();
  if (reward.model == nullptr && !reward.env)
    throw ConfigError("train_stacq needs a reward source (env or model)");

  StacqResult res{
      ActorNet::make(prob.state_dim, prob.action_dim, cfg.hidden, cfg.hidden_layers,
                     prob.action_lo, prob.action_hi, mix_seed(cfg.seed, 0xAC70)),
      CriticBank::make(cfg.critic_count, prob.state_dim, cfg.hidden, cfg.hidden_layers,
                       mix_seed(cfg.seed, 0xC717)),
      {}};

  std::vector<Adam> critic_opts;
  for (auto& c : res.critics.online) critic_opts.emplace_back(c);
  Adam actor_opt(res.actor.net);
  std::vector<Adam> reward_opts;
  if (reward.model != nullptr && reward.train_model)
    for (auto& m : reward.model->members) reward_opts.emplace_back(m);

  Rng rng_batch(mix_seed(cfg.seed, 0xBA7C));
  Rng rng_noise(mix_seed(cfg.seed, 0x4015e));
  Rng rng_reward(mix_seed(cfg.seed, 0x4E4A));

  const int n_records = int(prob.rec_src.size());
  const double sigma = cfg.noise_sigma();

  LossAccum acc;
  long eval_rows = 0;

  Mlp::Trace tr;
  std::vector<int> batch_s(size_t(cfg.batch_size));
  std::vector<int> batch_sp(size_t(cfg.batch_size));

  for (long t = 1; t <= cfg.iterations; ++t) {
    if (!reward_opts.empty())
      reward_model_step(prob, *reward.model, reward_opts, cfg.batch_size,
                        cfg.critic_lr, rng_reward);

    // --- critic step: s ~ D, s-hat' uniform over reach(s) ---
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int rec = rng_batch.below(n_records);
      const int s = prob.rec_src[size_t(rec)];
      const auto& cands = prob.reach.cands[size_t(s)];
      int sp;
      if (cands.empty()) {
        warn_empty_reach(s);
        sp = prob.rec_dst[size_t(rec)];
      } else {
        sp = cands[size_t(rng_batch.below(int(cands.size())))].id;
      }
      batch_s[size_t(b)] = s;
      batch_sp[size_t(b)] = sp;
    }

    // Targets from the frozen nets; shared-min or per-critic.
    const int n_critics = int(res.critics.online.size());
    std::vector<double> targets(size_t(cfg.batch_size) * size_t(n_critics));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int s = batch_s[size_t(b)], sp = batch_sp[size_t(b)];
      const double r = prob.reward_between(reward, s, sp);
      if (prob.terminal[size_t(sp)]) {
        for (int k = 0; k < n_critics; ++k)
          targets[size_t(b) * size_t(n_critics) + size_t(k)] = r;
        continue;
      }
      const Vec ap = res.actor.act_target(prob.states[size_t(sp)]);
      const Vec sp2 = forward_predict(fwd, prob.states[size_t(sp)], ap);
      if (cfg.independent_targets) {
        for (int k = 0; k < n_critics; ++k)
          targets[size_t(b) * size_t(n_critics) + size_t(k)] =
              r + cfg.gamma * res.critics.member_q_target(k, prob.states[size_t(sp)], sp2);
      } else {
        const double q = res.critics.min_q_target(prob.states[size_t(sp)], sp2);
        for (int k = 0; k < n_critics; ++k)
          targets[size_t(b) * size_t(n_critics) + size_t(k)] = r + cfg.gamma * q;
      }
    }

    double critic_loss = 0.0;
    const double inv_n = 1.0 / double(cfg.batch_size);
    for (int k = 0; k < n_critics; ++k) {
      Mlp& net = res.critics.online[size_t(k)];
      Mlp::Grads grads = net.make_grads();
      double loss_k = 0.0;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Vec x = concat(prob.states[size_t(batch_s[size_t(b)])],
                             prob.states[size_t(batch_sp[size_t(b)])]);
        net.forward(x, tr);
        const double err =
            tr.acts.back()[0] - targets[size_t(b) * size_t(n_critics) + size_t(k)];
        loss_k += err * err;
        net.backward(tr, Vec{2.0 * err * inv_n}, &grads, nullptr);
      }
      critic_opts[size_t(k)].step(net, grads, cfg.critic_lr);
      critic_loss += loss_k * inv_n;
    }
    critic_loss /= double(n_critics);
    check_finite(critic_loss, "critic");

    // --- actor step ---
    std::vector<int> actor_states(size_t(cfg.batch_size));
    std::vector<int> shat(size_t(cfg.batch_size));
    std::vector<Vec> noises(size_t(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int rec = rng_batch.below(n_records);
      actor_states[size_t(b)] = prob.rec_src[size_t(rec)];
      Vec noise(size_t(prob.action_dim));
      for (auto& v : noise) v = rng_noise.normal(0.0, sigma);
      noises[size_t(b)] = std::move(noise);
    }
    double mean_q = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int s = actor_states[size_t(b)];
      int target = best_reachable_next(prob, res.critics, s);
      if (target < 0) target = s;  // degenerate: clone toward staying put
      shat[size_t(b)] = target;
      const auto ev = actor_sample_loss(res.actor.net, fwd, res.critics.online,
                                        prob.states[size_t(s)],
                                        prob.states[size_t(target)], noises[size_t(b)],
                                        0.0);
      mean_q += ev.q;
    }
    mean_q *= inv_n;
    const double lambda = lambda_scale(mean_q, cfg.alpha_reg, cfg.lambda_floor);

    Mlp::Grads actor_grads = res.actor.net.make_grads();
    double actor_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int s = actor_states[size_t(b)];
      const auto ev = actor_sample_grad(res.actor.net, fwd, res.critics.online,
                                        prob.states[size_t(s)],
                                        prob.states[size_t(shat[size_t(b)])],
                                        noises[size_t(b)], lambda, inv_n, actor_grads);
      actor_loss += ev.loss;
    }
    actor_loss *= inv_n;
    check_finite(actor_loss, "actor");
    const double lr =
        cfg.cosine_actor
            ? cfg.actor_lr * 0.5 * (1.0 + std::cos(M_PI * double(t) / double(cfg.iterations)))
            : cfg.actor_lr;
    actor_opt.step(res.actor.net, actor_grads, lr);

    // --- soft target updates ---
    for (int k = 0; k < n_critics; ++k)
      soft_update(res.critics.target[size_t(k)], res.critics.online[size_t(k)], cfg.tau);
    soft_update(res.actor.target, res.actor.net, cfg.tau);

    acc.critic += critic_loss;
    acc.actor += actor_loss;
    acc.q += mean_q;
    ++acc.n_critic;
    ++acc.n_actor;

    if (t % cfg.eval_interval == 0 || t == cfg.iterations) {
      MetricsRow row;
      row.iteration = t;
      row.critic_loss = acc.critic / double(acc.n_critic);
      row.actor_loss = acc.actor / double(acc.n_actor);
      row.mean_q = acc.q / double(acc.n_actor);
      if (eval_env) {
        const auto [mean, stddev] =
            evaluate_actor(prob, res.actor, *eval_env, cfg.eval_episodes,
                           mix_seed(cfg.seed, 0xE0A0 + uint64_t(eval_rows)));
        row.eval_return_mean = mean;
        row.eval_return_std = stddev;
      } else {
        row.eval_return_mean = kNaN;
        row.eval_return_std = kNaN;
      }
      res.metrics.push_back(row);
      acc.reset();
      ++eval_rows;
    }
  }
  return res;
}

namespace {

// Value of hopping to candidate state j and continuing along its recorded
// pairs (0 continuation at terminal states): r_hat(i, j) + gamma max Q(j, j').
// Returns nullopt when j has neither recorded successors nor a terminal flag.
std::optional<double> onestep_candidate_value(
    const StacqProblem& prob, const RewardSpec& reward, int i, int j,
    const std::function<double(int, int)>& q_of, double gamma) {
  const double r = prob.reward_between(reward, i, j);
  if (prob.terminal[size_t(j)]) return r;
  const auto& nexts = prob.recorded_next[size_t(j)];
  if (nexts.empty()) return std::nullopt;
  double best = q_of(j, nexts[0]);
  for (size_t m = 1; m < nexts.size(); ++m) best = std::max(best, q_of(j, nexts[m]));
  return r + gamma * best;
}

}  // namespace

StacqResult train_onestep(const StacqProblem& prob, const MlpEnsemble& fwd,
                          const RewardSpec& reward,
                          const std::optional<EvalEnv>& eval_env, const StacqConfig& cfg) {
  cfg.validate();
  if (reward.model == nullptr && !reward.env)
    throw ConfigError("train_onestep needs a reward source (env or model)");

  // Appendix-D variant uses a single critic.
  StacqResult res{
      ActorNet::make(prob.state_dim, prob.action_dim, cfg.hidden, cfg.hidden_layers,
                     prob.action_lo, prob.action_hi, mix_seed(cfg.seed, 0xAC71)),
      CriticBank::make(1, prob.state_dim, cfg.hidden, cfg.hidden_layers,
                       mix_seed(cfg.seed, 0xC718)),
      {}};

  Adam critic_opt(res.critics.online[0]);
  Adam actor_opt(res.actor.net);
  std::vector<Adam> reward_opts;
  if (reward.model != nullptr && reward.train_model)
    for (auto& m : reward.model->members) reward_opts.emplace_back(m);

  Rng rng_batch(mix_seed(cfg.seed, 0xBA7D));
  Rng rng_noise(mix_seed(cfg.seed, 0x4015f));
  Rng rng_reward(mix_seed(cfg.seed, 0x4E4B));

  const int n_records = int(prob.rec_src.size());
  const double inv_n = 1.0 / double(cfg.batch_size);
  const double sigma = cfg.noise_sigma();

  Mlp::Trace tr;
  LossAccum acc;
  long eval_rows = 0;
  static std::atomic<bool> dangling_warned{false};

  // Phase 1: on-policy state-constrained QSS evaluation on dataset pairs.
  for (long t = 1; t <= cfg.iterations; ++t) {
    if (!reward_opts.empty())
      reward_model_step(prob, *reward.model, reward_opts, cfg.batch_size,
                        cfg.critic_lr, rng_reward);

    Mlp& net = res.critics.online[0];
    Mlp::Grads grads = net.make_grads();
    double loss = 0.0, q_acc = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int rec = rng_batch.below(n_records);
      const int i = prob.rec_src[size_t(rec)];
      const int j = prob.rec_dst[size_t(rec)];
      const double r = prob.rec_reward[size_t(rec)];
      double target = r;
      if (!prob.terminal[size_t(j)]) {
        auto qt = [&](int a, int bb) {
          return res.critics.member_q_target(0, prob.states[size_t(a)],
                                             prob.states[size_t(bb)]);
        };
        double best = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (const auto& c : prob.reach.cands[size_t(j)]) {
          const auto v = onestep_candidate_value(prob, reward, j, c.id, qt, cfg.gamma);
          if (v) {
            best = any ? std::max(best, *v) : *v;
            any = true;
          }
        }
        if (any) {
          target = r + cfg.gamma * best;
        } else if (!prob.recorded_next[size_t(j)].empty()) {
          // No eligible reachable candidate: bootstrap with the dataset's own
          // successor pair.
          double qb = qt(j, prob.recorded_next[size_t(j)][0]);
          for (size_t m = 1; m < prob.recorded_next[size_t(j)].size(); ++m)
            qb = std::max(qb, qt(j, prob.recorded_next[size_t(j)][m]));
          target = r + cfg.gamma * qb;
        } else {
          if (!dangling_warned.exchange(true))
            std::fprintf(stderr,
                         "warning: dangling non-terminal state %d; treating as episode "
                         "end in the one-step target\n",
                         j);
        }
      }
      const Vec x = concat(prob.states[size_t(i)], prob.states[size_t(j)]);
      net.forward(x, tr);
      const double err = tr.acts.back()[0] - target;
      loss += err * err;
      q_acc += tr.acts.back()[0];
      net.backward(tr, Vec{2.0 * err * inv_n}, &grads, nullptr);
    }
    loss *= inv_n;
    check_finite(loss, "one-step critic");
    critic_opt.step(net, grads, cfg.critic_lr);
    soft_update(res.critics.target[0], net, cfg.tau);

    acc.critic += loss;
    acc.q += q_acc * inv_n;
    ++acc.n_critic;
    if (t % cfg.eval_interval == 0 || t == cfg.iterations) {
      MetricsRow row;
      row.iteration = t;
      row.critic_loss = acc.critic / double(acc.n_critic);
      row.actor_loss = 0.0;
      row.mean_q = acc.q / double(acc.n_critic);
      row.eval_return_mean = kNaN;
      row.eval_return_std = kNaN;
      res.metrics.push_back(row);
      acc.reset();
      ++eval_rows;
    }
  }

  // Phase 2: policy extraction against the frozen critic. The per-state
  // argmax target is fixed, so it is precomputed once.
  auto q_online = [&res, &prob](int a, int b) {
    return net_q(res.critics.online[0], prob.states[size_t(a)], prob.states[size_t(b)]);
  };
  std::vector<int> shat_of(prob.states.size(), -1);
  for (size_t s = 0; s < prob.states.size(); ++s) {
    if (prob.terminal[s]) continue;
    double best = -std::numeric_limits<double>::infinity();
    int best_id = -1;
    for (const auto& c : prob.reach.cands[s]) {
      const auto v =
          onestep_candidate_value(prob, reward, int(s), c.id, q_online, cfg.gamma);
      if (v && (*v > best || (*v == best && c.id < best_id))) {
        best = *v;
        best_id = c.id;
      }
    }
    if (best_id < 0 && !prob.recorded_next[s].empty())
      best_id = prob.recorded_next[s].front();
    shat_of[s] = best_id;
  }

  for (long t = 1; t <= cfg.iterations; ++t) {
    std::vector<int> actor_states(size_t(cfg.batch_size));
    std::vector<Vec> noises(size_t(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int rec = rng_batch.below(n_records);
      actor_states[size_t(b)] = prob.rec_src[size_t(rec)];
      Vec noise(size_t(prob.action_dim));
      for (auto& v : noise) v = rng_noise.normal(0.0, sigma);
      noises[size_t(b)] = std::move(noise);
    }
    double mean_q = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int s = actor_states[size_t(b)];
      const int target = shat_of[size_t(s)] >= 0 ? shat_of[size_t(s)] : s;
      const auto ev =
          actor_sample_loss(res.actor.net, fwd, res.critics.online,
                            prob.states[size_t(s)], prob.states[size_t(target)],
                            noises[size_t(b)], 0.0);
      mean_q += ev.q;
    }
    mean_q *= inv_n;
    const double lambda = lambda_scale(mean_q, cfg.alpha_reg, cfg.lambda_floor);

    Mlp::Grads actor_grads = res.actor.net.make_grads();
    double actor_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int s = actor_states[size_t(b)];
      const int target = shat_of[size_t(s)] >= 0 ? shat_of[size_t(s)] : s;
      const auto ev = actor_sample_grad(res.actor.net, fwd, res.critics.online,
                                        prob.states[size_t(s)],
                                        prob.states[size_t(target)], noises[size_t(b)],
                                        lambda, inv_n, actor_grads);
      actor_loss += ev.loss;
    }
    actor_loss *= inv_n;
    check_finite(actor_loss, "one-step actor");
    const double lr =
        cfg.cosine_actor
            ? cfg.actor_lr * 0.5 * (1.0 + std::cos(M_PI * double(t) / double(cfg.iterations)))
            : cfg.actor_lr;
    actor_opt.step(res.actor.net, actor_grads, lr);

    acc.actor += actor_loss;
    acc.q += mean_q;
    ++acc.n_actor;
    if (t % cfg.eval_interval == 0 || t == cfg.iterations) {
      MetricsRow row;
      row.iteration = cfg.iterations + t;
      row.critic_loss = 0.0;
      row.actor_loss = acc.actor / double(acc.n_actor);
      row.mean_q = acc.q / double(acc.n_actor);
      if (eval_env) {
        const auto [mean, stddev] =
            evaluate_actor(prob, res.actor, *eval_env, cfg.eval_episodes,
                           mix_seed(cfg.seed, 0xE0A0 + uint64_t(eval_rows)));
        row.eval_return_mean = mean;
        row.eval_return_std = stddev;
      } else {
        row.eval_return_mean = kNaN;
        row.eval_return_std = kNaN;
      }
      res.metrics.push_back(row);
      acc.reset();
      ++eval_rows;
    }
  }
  return res;
}

}  // namespace scrl
