#pragma once

#include <span>
#include <string>
#include <vector>

#include "scrl/common.hpp"
#include "scrl/dataset.hpp"

namespace scrl {

// Feed-forward regression network: ReLU hidden layers, identity output,
// fan-in-scaled uniform init from a recorded seed. Double precision
// throughout; the forward pass is deterministic given parameters and input.
struct Mlp {
  struct Layer {
    int rows = 0, cols = 0;
    Vec w;  // row-major rows x cols
    Vec b;
  };

  std::vector<int> sizes;  // [in, hidden..., out]
  std::vector<Layer> layers;
  uint64_t seed = 0;

  static Mlp make(std::vector<int> sizes, uint64_t seed);

  int in_dim() const { return sizes.front(); }
  int out_dim() const { return sizes.back(); }

  // acts[0] is the input; acts[i] the output of layer i-1 after its
  // activation. Reused across calls to avoid reallocation.
  struct Trace {
    std::vector<Vec> acts;
  };

  void forward(std::span<const double> x, Trace& tr) const;
  Vec forward(std::span<const double> x) const;

  struct Grads {
    std::vector<Layer> layers;
    void zero();
  };
  Grads make_grads() const;

  // Backpropagates dL/dy through a recorded trace. Accumulates parameter
  // gradients into g when non-null; writes dL/dx into dx when non-null.
  void backward(const Trace& tr, Vec dy, Grads* g, Vec* dx) const;

  Vec flat_params() const;
  void set_flat_params(std::span<const double> p);

  std::string to_json_text() const;
  static Mlp from_json_text(const std::string& text);
};

// Soft update: target <- tau * online + (1 - tau) * target. Shapes must match.
void soft_update(Mlp& target, const Mlp& online, double tau);

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::vector<Mlp::Layer> m, v;

  explicit Adam(const Mlp& net);
  void step(Mlp& net, const Mlp::Grads& g, double lr);
};

struct TrainSpec {
  enum class Target { next_state_delta, action, reward };

  double lr = 4e-3;
  int batch_size = 256;
  int max_epochs = 200;
  int patience = 10;  // plateau stop: evals without holdout improvement
  double holdout_frac = 0.1;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  uint64_t shuffle_seed = 0;
  Target target = Target::next_state_delta;

  void validate() const;
};

struct FitReport {
  int epochs = 0;
  double holdout_mse = 0.0;        // best holdout MSE (restored weights)
  std::vector<double> history;     // holdout MSE per epoch
};

// Minimizes mean over the batch of ||net(x) - y||^2 with Adam; holdout split
// and plateau stopping per spec; the best-holdout weights are restored.
FitReport fit_mse(Mlp& net, const std::vector<Vec>& inputs,
                  const std::vector<Vec>& targets, const TrainSpec& spec);

struct MlpEnsemble {
  std::vector<Mlp> members;

  static MlpEnsemble make(int count, const std::vector<int>& sizes, uint64_t seed);
  Vec predict(std::span<const double> x) const;  // arithmetic mean
  int out_dim() const { return members.front().out_dim(); }

  std::string to_json_text() const;
  static MlpEnsemble from_json_text(const std::string& text);
  // The checkpoint optionally echoes the TrainSpec it was fitted with.
  void save(const std::string& path, const TrainSpec* spec = nullptr) const;
  static MlpEnsemble load(const std::string& path);
};

// The three supervised models. The forward model regresses the state
// difference s' - s on [s; a]; predictions add s back.
std::vector<FitReport> train_forward_model(MlpEnsemble& ens, const Dataset& d,
                                           const TrainSpec& spec);
std::vector<FitReport> train_inverse_model(MlpEnsemble& ens, const Dataset& d,
                                           const TrainSpec& spec);
std::vector<FitReport> train_reward_model(MlpEnsemble& ens, const Dataset& d,
                                          const TrainSpec& spec);

// Raw delta head of the forward model (ensemble mean).
Vec forward_delta(const MlpEnsemble& fwd, std::span<const double> s,
                  std::span<const double> a);
// s' prediction: s + forward_delta(s, a).
Vec forward_predict(const MlpEnsemble& fwd, std::span<const double> s,
                    std::span<const double> a);
// Inverse dynamics prediction I(s, s').
Vec inverse_predict(const MlpEnsemble& inv, std::span<const double> s,
                    std::span<const double> sp);

}  // namespace scrl
