#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "scrl/common.hpp"
#include "scrl/dataset.hpp"
#include "scrl/nn.hpp"
#include "scrl/reachability.hpp"

namespace scrl {

struct StacqConfig {
  int critic_count = 4;
  bool independent_targets = false;  // per-critic target regression (experimental)
  double tau = 0.005;
  double gamma = 0.99;
  int batch_size = 256;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  bool cosine_actor = true;
  double alpha_reg = 1.0;
  double lambda_floor = 1e-6;
  double noise = 0.1;
  bool noise_as_variance = false;  // alternative reading of the noise constant
  int iterations = 30000;
  int eval_interval = 5000;
  int eval_episodes = 10;
  int hidden = 256;
  int hidden_layers = 2;
  uint64_t seed = 0;

  double noise_sigma() const;
  void validate() const;
};

// Critic ensemble over (s, s') pairs with matching target networks. The value
// used in losses is the minimum over members (shared mode); independent mode
// regresses each member to its own target network.
struct CriticBank {
  std::vector<Mlp> online;
  std::vector<Mlp> target;

  static CriticBank make(int count, int state_dim, int hidden, int layers,
                         uint64_t seed);
  double min_q(std::span<const double> s, std::span<const double> sp) const;
  double min_q_target(std::span<const double> s, std::span<const double> sp) const;
  double member_q_target(int k, std::span<const double> s,
                         std::span<const double> sp) const;
};

// Deterministic actor with a target copy; act() clips to the action bounds.
struct ActorNet {
  Mlp net;
  Mlp target;
  Vec action_lo, action_hi;

  static ActorNet make(int state_dim, int action_dim, int hidden, int layers,
                       Vec action_lo, Vec action_hi, uint64_t seed);
  Vec act(std::span<const double> s) const;
  Vec act_target(std::span<const double> s) const;
};

// Reward lookup for (possibly unrecorded) state pairs: an analytic environment
// reward on raw states, or a learned model on pipeline states. Exactly one
// must be set.
struct RewardSpec {
  std::function<double(const Vec&, const Vec&)> env;  // raw-space
  MlpEnsemble* model = nullptr;                       // pipeline-space
  bool train_model = false;  // one Adam step per iteration on the dataset
};

// Everything the training loop needs, in pipeline space (normalized when the
// dataset was normalized), with raw states kept for environment interaction.
struct StacqProblem {
  std::vector<Vec> states;
  std::vector<Vec> raw_states;
  std::vector<bool> terminal;
  std::vector<std::vector<int>> recorded_next;  // per state id
  std::vector<int> rec_src, rec_dst;            // per record
  std::vector<double> rec_reward;
  std::unordered_map<uint64_t, double> recorded_reward;  // pack_pair(i,j) -> r
  ReachabilityIndex reach;
  std::optional<NormalizationStats> norm;
  int state_dim = 0;
  int action_dim = 0;
  Vec action_lo, action_hi;

  static StacqProblem assemble(const Dataset& raw, bool normalize,
                               ReachabilityIndex reach, Vec action_lo, Vec action_hi);

  Vec to_pipeline(const Vec& raw) const;  // applies normalization when present
  double reward_between(const RewardSpec& rs, int i, int j) const;
};

struct EvalEnv {
  std::function<Vec(Rng&)> reset;  // raw start state
  std::function<std::tuple<Vec, double, bool>(const Vec&, const Vec&)> step;
  int max_steps = 60;
};

struct MetricsRow {
  long iteration = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mean_q = 0.0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
};

void write_metrics_csv(const std::string& path, std::span<const MetricsRow> rows);

// lambda = alpha / max(|mean_q|, floor); |.| keeps the trade-off stable when
// the batch mean is negative, the floor when it is 0.
double lambda_scale(double mean_q, double alpha_reg, double floor = 1e-6);

// argmax over reach(s) of min-critic Q(s, .), ties by smaller stored residual
// then lower id; falls back to the first recorded successor (with a one-time
// warning) when reach(s) is empty. Returns -1 only if both are empty.
int best_reachable_next(const StacqProblem& prob, const CriticBank& critics, int s);

// Single-sample actor objective -lambda Q(s, f(s, pi(s)+noise)) + ||f - shat||^2
// with Q = min over the given critics; exposed for finite-difference checks.
struct ActorLossEval {
  double loss = 0.0;
  double q = 0.0;
  Vec predicted_next;
};
ActorLossEval actor_sample_loss(const Mlp& actor, const MlpEnsemble& fwd,
                                std::span<const Mlp> critics, const Vec& s,
                                const Vec& shat, const Vec& noise, double lambda);
// Accumulates weight * d(loss)/d(actor params) into grads.
ActorLossEval actor_sample_grad(const Mlp& actor, const MlpEnsemble& fwd,
                                std::span<const Mlp> critics, const Vec& s,
                                const Vec& shat, const Vec& noise, double lambda,
                                double weight, Mlp::Grads& grads);

struct StacqResult {
  ActorNet actor;
  CriticBank critics;
  std::vector<MetricsRow> metrics;
};

// Algorithm-1 loop: per iteration an optional reward-model step, a critic
// regression step on (s, s'-reachable) pairs, an actor step, soft target
// updates; metrics every eval_interval iterations and at the end.
StacqResult train_stacq(const StacqProblem& prob, const MlpEnsemble& fwd,
                        const RewardSpec& reward,
                        const std::optional<EvalEnv>& eval_env, const StacqConfig& cfg);

// One-step variant: T critic iterations of the composite on-policy target,
// then T policy-extraction iterations against the frozen critic (single
// critic).
StacqResult train_onestep(const StacqProblem& prob, const MlpEnsemble& fwd,
                          const RewardSpec& reward,
                          const std::optional<EvalEnv>& eval_env, const StacqConfig& cfg);

}  // namespace scrl
