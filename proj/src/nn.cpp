#include "scrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "scrl/kern.hpp"

namespace scrl {

using nlohmann::json;

Mlp Mlp::make(std::vector<int> sizes, uint64_t seed) {
  if (sizes.size() < 2) throw ConfigError("an MLP needs at least input and output sizes");
  for (int s : sizes)
    if (s <= 0) throw ConfigError("layer sizes must be positive");
  Mlp net;
  net.sizes = std::move(sizes);
  net.seed = seed;
  Rng rng(seed);
  for (size_t l = 0; l + 1 < net.sizes.size(); ++l) {
    Layer layer;
    layer.cols = net.sizes[l];
    layer.rows = net.sizes[l + 1];
    const double bound = 1.0 / std::sqrt(double(layer.cols));
    layer.w.resize(size_t(layer.rows) * size_t(layer.cols));
    layer.b.resize(size_t(layer.rows));
    for (auto& w : layer.w) w = rng.uniform(-bound, bound);
    for (auto& b : layer.b) b = rng.uniform(-bound, bound);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

void Mlp::forward(std::span<const double> x, Trace& tr) const {
  if (int(x.size()) != in_dim())
    throw ValidationError("MLP input has dim " + std::to_string(x.size()) +
                          ", expected " + std::to_string(in_dim()));
  tr.acts.resize(layers.size() + 1);
  tr.acts[0].assign(x.begin(), x.end());
  for (size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    Vec& out = tr.acts[l + 1];
    out.resize(size_t(layer.rows));
    kern::matvec(layer.w.data(), tr.acts[l].data(), layer.b.data(), out.data(),
                 size_t(layer.rows), size_t(layer.cols));
    if (l + 1 < layers.size()) kern::relu(out.data(), out.data(), out.size());
  }
}

Vec Mlp::forward(std::span<const double> x) const {
  Trace tr;
  forward(x, tr);
  return tr.acts.back();
}

void Mlp::Grads::zero() {
  for (auto& layer : layers) {
    std::fill(layer.w.begin(), layer.w.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
}

Mlp::Grads Mlp::make_grads() const {
  Grads g;
  g.layers = layers;
  g.zero();
  return g;
}

void Mlp::backward(const Trace& tr, Vec dy, Grads* g, Vec* dx) const {
  if (tr.acts.size() != layers.size() + 1)
    throw ValidationError("backward called with a stale trace");
  Vec delta = std::move(dy);
  Vec next_delta;
  for (size_t l = layers.size(); l-- > 0;) {
    const Layer& layer = layers[l];
    if (g != nullptr) {
      kern::outer_acc(g->layers[l].w.data(), delta.data(), tr.acts[l].data(),
                      size_t(layer.rows), size_t(layer.cols));
      kern::axpy(1.0, delta.data(), g->layers[l].b.data(), delta.size());
    }
    const bool need_dx = l > 0 || dx != nullptr;
    if (!need_dx) break;
    next_delta.assign(size_t(layer.cols), 0.0);
    kern::matvec_t_acc(layer.w.data(), delta.data(), next_delta.data(),
                       size_t(layer.rows), size_t(layer.cols));
    if (l > 0)  // hidden activations are ReLU; the input is not masked
      kern::relu_mask(tr.acts[l].data(), next_delta.data(), next_delta.size());
    delta = std::move(next_delta);
  }
  if (dx != nullptr) *dx = std::move(delta);
}

Vec Mlp::flat_params() const {
  Vec out;
  for (const auto& layer : layers) {
    out.insert(out.end(), layer.w.begin(), layer.w.end());
    out.insert(out.end(), layer.b.begin(), layer.b.end());
  }
  return out;
}

void Mlp::set_flat_params(std::span<const double> p) {
  size_t off = 0;
  for (auto& layer : layers) {
    std::copy(p.begin() + long(off), p.begin() + long(off + layer.w.size()), layer.w.begin());
    off += layer.w.size();
    std::copy(p.begin() + long(off), p.begin() + long(off + layer.b.size()), layer.b.begin());
    off += layer.b.size();
  }
  if (off != p.size()) throw ValidationError("flat parameter size mismatch");
}

std::string Mlp::to_json_text() const {
  json j;
  j["sizes"] = sizes;
  j["seed"] = seed;
  json ls = json::array();
  for (const auto& layer : layers) ls.push_back({{"w", layer.w}, {"b", layer.b}});
  j["layers"] = std::move(ls);
  return j.dump();
}

Mlp Mlp::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint parse error: ") + e.what());
  }
  Mlp net = Mlp::make(j.at("sizes").get<std::vector<int>>(), j.value("seed", uint64_t(0)));
  const auto& ls = j.at("layers");
  if (ls.size() != net.layers.size())
    throw ValidationError("checkpoint layer count mismatch");
  for (size_t l = 0; l < net.layers.size(); ++l) {
    auto w = ls[l].at("w").get<Vec>();
    auto b = ls[l].at("b").get<Vec>();
    if (w.size() != net.layers[l].w.size() || b.size() != net.layers[l].b.size())
      throw ValidationError("checkpoint layer " + std::to_string(l) + " shape mismatch");
    net.layers[l].w = std::move(w);
    net.layers[l].b = std::move(b);
  }
  return net;
}

void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (target.sizes != online.sizes)
    throw ValidationError("soft_update: network shapes differ");
  for (size_t l = 0; l < target.layers.size(); ++l) {
    kern::lerp(target.layers[l].w.data(), online.layers[l].w.data(), tau,
               target.layers[l].w.size());
    kern::lerp(target.layers[l].b.data(), online.layers[l].b.data(), tau,
               target.layers[l].b.size());
  }
}

Adam::Adam(const Mlp& net) {
  m = net.layers;
  v = net.layers;
  for (auto& layer : m) {
    std::fill(layer.w.begin(), layer.w.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
  for (auto& layer : v) {
    std::fill(layer.w.begin(), layer.w.end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
}

void Adam::step(Mlp& net, const Mlp::Grads& g, double lr) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, double(t));
  const double bc2 = 1.0 - std::pow(beta2, double(t));
  for (size_t l = 0; l < net.layers.size(); ++l) {
    kern::adam_step(net.layers[l].w.data(), m[l].w.data(), v[l].w.data(),
                    g.layers[l].w.data(), net.layers[l].w.size(), lr, beta1, beta2,
                    eps, bc1, bc2);
    kern::adam_step(net.layers[l].b.data(), m[l].b.data(), v[l].b.data(),
                    g.layers[l].b.data(), net.layers[l].b.size(), lr, beta1, beta2,
                    eps, bc1, bc2);
  }
}

void TrainSpec::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (lr <= 0) throw ConfigError("learning rate must be positive");
  if (max_epochs < 1) throw ConfigError("epoch cap must be >= 1");
  if (holdout_frac < 0.0 || holdout_frac >= 1.0)
    throw ConfigError("holdout fraction must be in [0, 1)");
}

namespace {

double mean_mse(const Mlp& net, const std::vector<Vec>& xs, const std::vector<Vec>& ys,
                std::span<const int> idx) {
  if (idx.empty()) return 0.0;
  double acc = 0.0;
  Mlp::Trace tr;
  for (int i : idx) {
    net.forward(xs[size_t(i)], tr);
    acc += kern::sq_err(tr.acts.back().data(), ys[size_t(i)].data(),
                        ys[size_t(i)].size());
  }
  return acc / double(idx.size());
}

}  // namespace

FitReport fit_mse(Mlp& net, const std::vector<Vec>& inputs,
                  const std::vector<Vec>& targets, const TrainSpec& spec) {
  spec.validate();
  if (inputs.empty()) throw ValidationError("cannot fit on an empty sample set");
  if (inputs.size() != targets.size())
    throw ValidationError("inputs and targets differ in length");

  std::vector<int> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(spec.shuffle_seed, 0x5cf1));
  std::shuffle(order.begin(), order.end(), rng.raw());

  const size_t holdout_n =
      std::min(inputs.size() - 1, size_t(std::llround(double(inputs.size()) * spec.holdout_frac)));
  std::vector<int> holdout(order.begin(), order.begin() + long(holdout_n));
  std::vector<int> train(order.begin() + long(holdout_n), order.end());

  Adam opt(net);
  opt.beta1 = spec.beta1;
  opt.beta2 = spec.beta2;
  opt.eps = spec.eps;

  FitReport report;
  Vec best_params = net.flat_params();
  double best = holdout.empty() ? std::numeric_limits<double>::infinity()
                                : mean_mse(net, inputs, targets, holdout);
  int stale = 0;

  Mlp::Trace tr;
  Mlp::Grads grads = net.make_grads();
  for (int epoch = 0; epoch < spec.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng.raw());
    for (size_t start = 0; start < train.size(); start += size_t(spec.batch_size)) {
      const size_t end = std::min(train.size(), start + size_t(spec.batch_size));
      grads.zero();
      const double inv_n = 1.0 / double(end - start);
      for (size_t b = start; b < end; ++b) {
        const auto& x = inputs[size_t(train[b])];
        const auto& y = targets[size_t(train[b])];
        net.forward(x, tr);
        Vec dy(y.size());
        for (size_t k = 0; k < y.size(); ++k)
          dy[k] = 2.0 * (tr.acts.back()[k] - y[k]) * inv_n;
        net.backward(tr, std::move(dy), &grads, nullptr);
      }
      opt.step(net, grads, spec.lr);
    }
    ++report.epochs;
    const double mse = holdout.empty() ? mean_mse(net, inputs, targets, train)
                                       : mean_mse(net, inputs, targets, holdout);
    if (!std::isfinite(mse)) throw NumericError("holdout MSE became non-finite");
    report.history.push_back(mse);
    if (mse < best - 1e-15 && mse < best * (1.0 - 1e-4)) {
      best = mse;
      best_params = net.flat_params();
      stale = 0;
    } else if (++stale >= spec.patience) {
      break;
    }
  }
  net.set_flat_params(best_params);
  report.holdout_mse = best;
  return report;
}

MlpEnsemble MlpEnsemble::make(int count, const std::vector<int>& sizes, uint64_t seed) {
  if (count < 1) throw ConfigError("ensemble needs at least one member");
  MlpEnsemble ens;
  for (int i = 0; i < count; ++i)
    ens.members.push_back(Mlp::make(sizes, mix_seed(seed, uint64_t(i))));
  return ens;
}

Vec MlpEnsemble::predict(std::span<const double> x) const {
  Vec acc(size_t(members.front().out_dim()), 0.0);
  Mlp::Trace tr;
  for (const auto& net : members) {
    net.forward(x, tr);
    kern::axpy(1.0, tr.acts.back().data(), acc.data(), acc.size());
  }
  const double inv = 1.0 / double(members.size());
  for (auto& v : acc) v *= inv;
  return acc;
}

std::string MlpEnsemble::to_json_text() const {
  json j;
  json ms = json::array();
  for (const auto& m : members) ms.push_back(json::parse(m.to_json_text()));
  j["members"] = std::move(ms);
  return j.dump();
}

MlpEnsemble MlpEnsemble::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("ensemble parse error: ") + e.what());
  }
  MlpEnsemble ens;
  for (const auto& m : j.at("members"))
    ens.members.push_back(Mlp::from_json_text(m.dump()));
  if (ens.members.empty()) throw ValidationError("ensemble file has no members");
  return ens;
}

void MlpEnsemble::save(const std::string& path, const TrainSpec* spec) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  json j = json::parse(to_json_text());
  if (spec != nullptr) {
    const char* target = spec->target == TrainSpec::Target::next_state_delta
                             ? "next_state_delta"
                             : (spec->target == TrainSpec::Target::action ? "action"
                                                                          : "reward");
    j["train_spec"] = {{"lr", spec->lr},
                       {"batch_size", spec->batch_size},
                       {"max_epochs", spec->max_epochs},
                       {"patience", spec->patience},
                       {"holdout_frac", spec->holdout_frac},
                       {"shuffle_seed", spec->shuffle_seed},
                       {"target", target}};
  }
  out << j.dump() << "\n";
}

MlpEnsemble MlpEnsemble::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

namespace {

Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::vector<FitReport> fit_ensemble(MlpEnsemble& ens, const std::vector<Vec>& xs,
                                    const std::vector<Vec>& ys, const TrainSpec& spec) {
  // Members train independently; the per-member seed keeps runs reproducible
  // regardless of thread scheduling.
  std::vector<FitReport> reports(ens.members.size());
  std::vector<std::future<FitReport>> futs;
  for (size_t i = 0; i < ens.members.size(); ++i) {
    TrainSpec member_spec = spec;
    member_spec.shuffle_seed = mix_seed(spec.shuffle_seed, 0xE45 + i);
    futs.push_back(std::async(std::launch::async, [&ens, &xs, &ys, member_spec, i] {
      return fit_mse(ens.members[i], xs, ys, member_spec);
    }));
  }
  for (size_t i = 0; i < futs.size(); ++i) reports[i] = futs[i].get();
  return reports;
}

}  // namespace

std::vector<FitReport> train_forward_model(MlpEnsemble& ens, const Dataset& d,
                                           const TrainSpec& spec) {
  if (spec.target != TrainSpec::Target::next_state_delta)
    throw ConfigError("forward model expects target next_state_delta");
  std::vector<Vec> xs, ys;
  xs.reserve(d.records.size());
  ys.reserve(d.records.size());
  for (const auto& r : d.records) {
    xs.push_back(concat(r.s, r.a));
    Vec delta(r.s.size());
    for (size_t i = 0; i < delta.size(); ++i) delta[i] = r.s_next[i] - r.s[i];
    ys.push_back(std::move(delta));
  }
  return fit_ensemble(ens, xs, ys, spec);
}

std::vector<FitReport> train_inverse_model(MlpEnsemble& ens, const Dataset& d,
                                           const TrainSpec& spec) {
  if (spec.target != TrainSpec::Target::action)
    throw ConfigError("inverse model expects target action");
  std::vector<Vec> xs, ys;
  for (const auto& r : d.records) {
    xs.push_back(concat(r.s, r.s_next));
    ys.push_back(r.a);
  }
  return fit_ensemble(ens, xs, ys, spec);
}

std::vector<FitReport> train_reward_model(MlpEnsemble& ens, const Dataset& d,
                                          const TrainSpec& spec) {
  if (spec.target != TrainSpec::Target::reward)
    throw ConfigError("reward model expects target reward");
  std::vector<Vec> xs, ys;
  for (const auto& r : d.records) {
    xs.push_back(concat(r.s, r.s_next));
    ys.push_back(Vec{r.r});
  }
  return fit_ensemble(ens, xs, ys, spec);
}

Vec forward_delta(const MlpEnsemble& fwd, std::span<const double> s,
                  std::span<const double> a) {
  return fwd.predict(concat(s, a));
}

Vec forward_predict(const MlpEnsemble& fwd, std::span<const double> s,
                    std::span<const double> a) {
  Vec out = forward_delta(fwd, s, a);
  for (size_t i = 0; i < out.size(); ++i) out[i] += s[i];
  return out;
}

Vec inverse_predict(const MlpEnsemble& inv, std::span<const double> s,
                    std::span<const double> sp) {
  return inv.predict(concat(s, sp));
}

}  // namespace scrl
