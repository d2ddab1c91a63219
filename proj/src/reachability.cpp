#include "scrl/reachability.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "scrl/kern.hpp"
#include "scrl/mdp.hpp"
#include "scrl/tabular.hpp"

namespace scrl {

using nlohmann::json;

Norm norm_from_name(const std::string& name) {
  if (name == "l1") return Norm::l1;
  if (name == "l2") return Norm::l2;
  if (name == "linf") return Norm::linf;
  throw ConfigError("unknown norm '" + name + "' (expected l1, l2 or linf)");
}

const char* norm_name(Norm n) {
  switch (n) {
    case Norm::l1: return "l1";
    case Norm::l2: return "l2";
    default: return "linf";
  }
}

void ReachCriterion::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("reachability epsilon must be > 0");
  if (!(eps_s > 0.0)) throw ConfigError("eps_s must be > 0");
}

bool RangeBox::contains(std::span<const double> x) const {
  for (size_t i = 0; i < x.size(); ++i)
    if (x[i] < lo[i] || x[i] > hi[i]) return false;
  return true;
}

void RangeBox::validate() const {
  if (lo.size() != hi.size()) throw ValidationError("range box dims differ");
  for (size_t i = 0; i < lo.size(); ++i)
    if (lo[i] > hi[i]) throw ValidationError("range box has lo > hi");
}

RangeBox candidate_range(const Vec& s, const MlpEnsemble& fwd, int n_random,
                         const Vec& action_lo, const Vec& action_hi, Rng& rng) {
  if (n_random < 1) throw ConfigError("candidate_range needs n_random >= 1");
  if (action_lo.size() != action_hi.size())
    throw ConfigError("action bounds dims differ");
  RangeBox box;
  Vec a(action_lo.size());
  for (int i = 0; i < n_random; ++i) {
    for (size_t d = 0; d < a.size(); ++d) a[d] = rng.uniform(action_lo[d], action_hi[d]);
    Vec pred = forward_predict(fwd, s, a);
    if (i == 0) {
      box.lo = pred;
      box.hi = std::move(pred);
    } else {
      kern::minmax_acc(pred.data(), box.lo.data(), box.hi.data(), pred.size());
    }
  }
  return box;
}

SpatialIndex::SpatialIndex(const std::vector<Vec>& states) : states_(&states) {
  if (states.empty()) return;
  std::vector<int> ids(states.size());
  std::iota(ids.begin(), ids.end(), 0);
  root_ = build(ids, 0, ids.size());
}

std::unique_ptr<SpatialIndex::Node> SpatialIndex::build(std::vector<int>& ids,
                                                        size_t begin, size_t end) {
  auto node = std::make_unique<Node>();
  const auto& states = *states_;
  const size_t dim = states[size_t(ids[begin])].size();
  node->lo = states[size_t(ids[begin])];
  node->hi = states[size_t(ids[begin])];
  for (size_t i = begin + 1; i < end; ++i)
    kern::minmax_acc(states[size_t(ids[i])].data(), node->lo.data(),
                     node->hi.data(), dim);

  if (end - begin <= kLeafCap) {
    node->points.assign(ids.begin() + long(begin), ids.begin() + long(end));
    return node;
  }
  // Split on the widest extent at the median.
  size_t axis = 0;
  double widest = -1.0;
  for (size_t d = 0; d < dim; ++d) {
    const double w = node->hi[d] - node->lo[d];
    if (w > widest) {
      widest = w;
      axis = d;
    }
  }
  const size_t mid = begin + (end - begin) / 2;
  std::nth_element(ids.begin() + long(begin), ids.begin() + long(mid),
                   ids.begin() + long(end), [&](int a, int b) {
                     const double xa = states[size_t(a)][axis];
                     const double xb = states[size_t(b)][axis];
                     return xa < xb || (xa == xb && a < b);
                   });
  node->left = build(ids, begin, mid);
  node->right = build(ids, mid, end);
  return node;
}

void SpatialIndex::query_node(const Node* n, const RangeBox& box,
                              std::vector<int>& out) const {
  for (size_t d = 0; d < box.lo.size(); ++d)
    if (n->hi[d] < box.lo[d] || n->lo[d] > box.hi[d]) return;
  if (n->left == nullptr) {  // leaf
    for (int id : n->points)
      if (box.contains((*states_)[size_t(id)])) out.push_back(id);
    return;
  }
  query_node(n->left.get(), box, out);
  query_node(n->right.get(), box, out);
}

std::vector<int> SpatialIndex::query(const RangeBox& box) const {
  box.validate();
  std::vector<int> out;
  if (root_) query_node(root_.get(), box, out);
  std::sort(out.begin(), out.end());
  return out;
}

double apply_norm(Norm norm, const Vec& v) {
  switch (norm) {
    case Norm::l1: return kern::norm_l1(v.data(), v.size());
    case Norm::l2: return kern::norm_l2(v.data(), v.size());
    default: return kern::norm_linf(v.data(), v.size());
  }
}

namespace {

std::atomic<bool> g_zero_width_warned{false};

void scale_residual(Vec& resid, const RangeBox& range, double eps_s) {
  for (size_t d = 0; d < resid.size(); ++d) {
    double width = range.hi[d] - range.lo[d];
    if (width <= 0.0) {
      if (!g_zero_width_warned.exchange(true))
        std::fprintf(stderr,
                     "warning: zero-width range dimension; using eps_s=%g as divisor\n",
                     eps_s);
      width = eps_s;
    }
    resid[d] /= width;
  }
}

}  // namespace

Vec reach_residual(const Vec& s, const Vec& cand, const MlpEnsemble& fwd,
                   const MlpEnsemble& inv, const ReachCriterion& crit,
                   const RangeBox* range) {
  if (crit.scaled && range == nullptr)
    throw ConfigError("scaled reachability criterion requires a range box");
  const Vec action = inverse_predict(inv, s, cand);
  Vec resid = forward_predict(fwd, s, action);
  for (size_t d = 0; d < resid.size(); ++d) resid[d] -= cand[d];
  if (crit.scaled) scale_residual(resid, *range, crit.eps_s);
  return resid;
}

std::vector<ReachCandidate> estimate_reachable(
    const Vec& s, std::span<const int> candidate_ids, const std::vector<Vec>& states,
    const MlpEnsemble& fwd, const MlpEnsemble& inv, const ReachCriterion& crit,
    const RangeBox* range) {
  crit.validate();
  std::vector<ReachCandidate> out;
  for (int id : candidate_ids) {
    const Vec resid = reach_residual(s, states[size_t(id)], fwd, inv, crit, range);
    const double r = apply_norm(crit.norm, resid);
    if (r <= crit.epsilon) out.push_back({id, r});
  }
  return out;
}

std::vector<ReachCandidate> k_step_reachable(
    const Vec& s, int k, std::span<const int> candidate_ids,
    const std::vector<Vec>& states, const MlpEnsemble& fwd, const MlpEnsemble& inv,
    const ReachCriterion& crit, const RangeBox* range, const KStepOptions& opt) {
  if (k <= 0) throw ValidationError("k must be >= 1, got " + std::to_string(k));
  if (k == 1) return estimate_reachable(s, candidate_ids, states, fwd, inv, crit, range);
  if (crit.scaled && range == nullptr)
    throw ConfigError("scaled reachability criterion requires a range box");
  if (opt.action_lo.size() != opt.action_hi.size() || opt.action_lo.empty())
    throw ConfigError("k-step search needs action bounds");

  // Sampled rollouts: endpoints of k model steps under random action
  // sequences. Non-exhaustive by construction.
  Rng rng(mix_seed(opt.seed, 0x25feULL + uint64_t(k)));
  std::vector<Vec> endpoints;
  endpoints.reserve(size_t(opt.samples));
  Vec a(opt.action_lo.size());
  for (int i = 0; i < opt.samples; ++i) {
    Vec cur = s;
    for (int step = 0; step < k; ++step) {
      for (size_t d = 0; d < a.size(); ++d)
        a[d] = rng.uniform(opt.action_lo[d], opt.action_hi[d]);
      cur = forward_predict(fwd, cur, a);
    }
    endpoints.push_back(std::move(cur));
  }

  std::vector<ReachCandidate> out;
  Vec resid;
  for (int id : candidate_ids) {
    const Vec& cand = states[size_t(id)];
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : endpoints) {
      resid.resize(cand.size());
      for (size_t d = 0; d < cand.size(); ++d) resid[d] = p[d] - cand[d];
      if (crit.scaled) scale_residual(resid, *range, crit.eps_s);
      best = std::min(best, apply_norm(crit.norm, resid));
    }
    if (best <= crit.epsilon) out.push_back({id, best});
  }
  return out;
}

std::vector<int> k_step_reachable_exact(const std::function<int(int, int)>& step_fn,
                                        int n_actions, int s, int k,
                                        std::span<const char> in_dataset) {
  if (k <= 0) throw ValidationError("k must be >= 1, got " + std::to_string(k));
  std::vector<int> frontier{s};
  for (int depth = 0; depth < k; ++depth) {
    std::set<int> next;
    for (int cur : frontier)
      for (int a = 0; a < n_actions; ++a) next.insert(step_fn(cur, a));
    frontier.assign(next.begin(), next.end());
  }
  std::vector<int> out;
  for (int id : frontier)
    if (id >= 0 && size_t(id) < in_dataset.size() && in_dataset[size_t(id)])
      out.push_back(id);
  return out;
}

std::vector<std::pair<int, int>> grid_reachable(std::pair<int, int> cell) {
  const auto [x, y] = cell;
  return {{x + 1, y}, {x - 1, y}, {x, y + 1}, {x, y - 1}};
}

std::vector<int> ReachabilityIndex::id_set(int s) const {
  std::vector<int> out;
  out.reserve(cands[size_t(s)].size());
  for (const auto& c : cands[size_t(s)]) out.push_back(c.id);
  std::sort(out.begin(), out.end());
  return out;
}

void ReachabilityIndex::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  json header;
  header["criterion"] = {{"norm", norm_name(criterion.norm)},
                         {"eps", criterion.epsilon},
                         {"scaled", criterion.scaled}};
  header["k"] = k;
  header["n"] = int(cands.size());
  header["coverage"] = coverage;
  out << header.dump() << "\n";
  for (size_t s = 0; s < cands.size(); ++s) {
    json line;
    line["s"] = int(s);
    json cs = json::array();
    for (const auto& c : cands[s]) cs.push_back({c.id, c.residual});
    line["cands"] = std::move(cs);
    out << line.dump() << "\n";
  }
}

ReachabilityIndex ReachabilityIndex::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open reachability index: " + path);
  std::string line;
  int line_no = 0;
  auto parse = [&line_no](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw ValidationError("reach index parse error at line " +
                            std::to_string(line_no) + ": " + e.what());
    }
  };
  if (!std::getline(in, line))
    throw ValidationError("reachability index is empty: " + path);
  ++line_no;
  const json header = parse(line);
  ReachabilityIndex idx;
  idx.criterion.norm = norm_from_name(header.at("criterion").at("norm").get<std::string>());
  idx.criterion.epsilon = header.at("criterion").at("eps").get<double>();
  idx.criterion.scaled = header.at("criterion").at("scaled").get<bool>();
  idx.k = header.value("k", 1);
  idx.coverage = header.value("coverage", 1.0);
  idx.cands.assign(size_t(header.at("n").get<int>()), {});
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse(line);
    const int s = j.at("s").get<int>();
    if (s < 0 || size_t(s) >= idx.cands.size())
      throw ValidationError("reach index state id out of range at line " +
                            std::to_string(line_no));
    for (const auto& c : j.at("cands"))
      idx.cands[size_t(s)].push_back({c.at(0).get<int>(), c.at(1).get<double>()});
  }
  return idx;
}

ReachabilityIndex build_reachability_index(const std::vector<Vec>& states,
                                           const MlpEnsemble& fwd,
                                           const MlpEnsemble& inv,
                                           const ReachCriterion& crit,
                                           const ReachBuildOptions& opt) {
  crit.validate();
  if (opt.action_lo.empty() || opt.action_lo.size() != opt.action_hi.size())
    throw ConfigError("reachability build needs action bounds");

  const int n = int(states.size());
  ReachabilityIndex idx;
  idx.criterion = crit;
  idx.k = opt.k;
  idx.cands.assign(size_t(n), {});

  SpatialIndex spatial;
  if (!opt.bypass_index) spatial = SpatialIndex(states);

  std::vector<int> all_ids(states.size());
  std::iota(all_ids.begin(), all_ids.end(), 0);

  auto work = [&](int s) {
    Rng rng(mix_seed(opt.seed, 0xB0c5ULL + uint64_t(s)));
    const RangeBox box = candidate_range(states[size_t(s)], fwd, opt.n_random,
                                         opt.action_lo, opt.action_hi, rng);
    // The box both prunes candidates and supplies the scaling widths.
    std::vector<int> pruned;
    if (opt.bypass_index) {
      for (int id : all_ids)
        if (box.contains(states[size_t(id)])) pruned.push_back(id);
    } else {
      pruned = spatial.query(box);
    }
    std::vector<ReachCandidate> accepted;
    if (opt.k == 1) {
      accepted = estimate_reachable(states[size_t(s)], pruned, states, fwd, inv,
                                    crit, &box);
    } else {
      KStepOptions ko;
      ko.samples = opt.k_samples;
      ko.action_lo = opt.action_lo;
      ko.action_hi = opt.action_hi;
      ko.seed = mix_seed(opt.seed, 0x7a11ULL + uint64_t(s));
      // Candidate pruning by the 1-step box does not apply beyond one step;
      // score the full state set instead.
      accepted = k_step_reachable(states[size_t(s)], opt.k, all_ids, states, fwd,
                                  inv, crit, &box, ko);
    }
    if (opt.max_candidates > 0 && int(accepted.size()) > opt.max_candidates) {
      std::sort(accepted.begin(), accepted.end(), [](const auto& a, const auto& b) {
        return a.residual < b.residual || (a.residual == b.residual && a.id < b.id);
      });
      accepted.resize(size_t(opt.max_candidates));
      std::sort(accepted.begin(), accepted.end(),
                [](const auto& a, const auto& b) { return a.id < b.id; });
    }
    idx.cands[size_t(s)] = std::move(accepted);
  };

  const int threads = opt.threads > 0
                          ? opt.threads
                          : std::max(1u, std::thread::hardware_concurrency());
  if (threads <= 1 || n < 2) {
    for (int s = 0; s < n; ++s) work(s);
  } else {
    std::atomic<int> cursor{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int s = cursor.fetch_add(1); s < n; s = cursor.fetch_add(1)) work(s);
      });
    for (auto& t : pool) t.join();
  }
  return idx;
}

ReachabilityIndex exact_grid_reach_index(const MazeMdp& maze,
                                         const IndexedDataset& data, int k) {
  if (k <= 0) throw ValidationError("k must be >= 1, got " + std::to_string(k));
  ReachabilityIndex idx;
  idx.criterion.scaled = false;
  idx.criterion.epsilon = 1e-9;  // exact sets; residuals are identically 0
  idx.k = k;
  idx.cands.assign(size_t(maze.mdp.num_states()), {});
  auto step_fn = [&maze](int s, int a) { return maze.mdp.next[size_t(s)][size_t(a)]; };
  const std::span<const char> in_dataset(data.in_dataset.data(), data.in_dataset.size());
  for (int s : data.states) {
    std::set<int> ids;
    for (int depth = 1; depth <= k; ++depth)
      for (int id : k_step_reachable_exact(step_fn, maze.mdp.num_actions(), s, depth,
                                           in_dataset))
        ids.insert(id);
    for (int id : ids) idx.cands[size_t(s)].push_back({id, 0.0});
  }
  return idx;
}

ReachabilityIndex exact_grid_reach_index_dataset(const MazeMdp& maze,
                                                 const StateIndex& ds, int k) {
  if (k <= 0) throw ValidationError("k must be >= 1, got " + std::to_string(k));
  ReachabilityIndex idx;
  idx.criterion.scaled = false;
  idx.criterion.epsilon = 1e-9;
  idx.k = k;
  idx.cands.assign(ds.states.size(), {});

  // dataset id <-> maze id translation
  std::vector<int> maze_of(ds.states.size());
  std::unordered_map<int, int> ds_of;
  for (size_t i = 0; i < ds.states.size(); ++i) {
    const auto& v = ds.states[i];
    maze_of[i] = maze.id_of(int(v[0]), int(v[1]));
    ds_of[maze_of[i]] = int(i);
  }
  std::vector<char> in_dataset(size_t(maze.mdp.num_states()), 0);
  for (int m : maze_of) in_dataset[size_t(m)] = 1;

  auto step_fn = [&maze](int s, int a) { return maze.mdp.next[size_t(s)][size_t(a)]; };
  for (size_t i = 0; i < ds.states.size(); ++i) {
    if (maze.mdp.terminal[size_t(maze_of[i])]) continue;
    std::set<int> ids;
    for (int depth = 1; depth <= k; ++depth)
      for (int m : k_step_reachable_exact(step_fn, maze.mdp.num_actions(), maze_of[i],
                                          depth, in_dataset))
        ids.insert(ds_of.at(m));
    for (int id : ids) idx.cands[i].push_back({id, 0.0});
  }
  return idx;
}

std::string ReachReport::to_text() const {
  std::ostringstream os;
  os << "states indexed: " << n_states << "\n";
  os << "candidates: total " << total_candidates << ", mean " << mean_candidates
     << ", min " << min_candidates << ", max " << max_candidates << "\n";
  os << "residual histogram (bin width " << hist_bin_width << "):";
  for (size_t b : residual_hist) os << " " << b;
  os << "\n";
  if (precision && recall)
    os << "precision: " << *precision << ", recall: " << *recall << "\n";
  return os.str();
}

ReachReport reachability_report(const ReachabilityIndex& index,
                                const std::vector<std::vector<int>>* truth) {
  ReachReport rep;
  rep.n_states = index.size();
  rep.residual_hist.assign(10, 0);
  rep.hist_bin_width = index.criterion.epsilon / 10.0;
  bool first = true;
  for (const auto& cs : index.cands) {
    rep.total_candidates += cs.size();
    if (first || cs.size() < rep.min_candidates) rep.min_candidates = cs.size();
    if (first || cs.size() > rep.max_candidates) rep.max_candidates = cs.size();
    first = false;
    for (const auto& c : cs) {
      size_t bin = rep.hist_bin_width > 0
                       ? size_t(std::min(9.0, std::floor(c.residual / rep.hist_bin_width)))
                       : 0;
      ++rep.residual_hist[bin];
    }
  }
  rep.mean_candidates =
      index.size() > 0 ? double(rep.total_candidates) / double(index.size()) : 0.0;

  if (truth != nullptr) {
    size_t tp = 0, accepted = 0, actual = 0;
    for (int s = 0; s < index.size(); ++s) {
      const auto ids = index.id_set(s);
      const auto& t = (*truth)[size_t(s)];
      accepted += ids.size();
      actual += t.size();
      std::vector<int> inter;
      std::set_intersection(ids.begin(), ids.end(), t.begin(), t.end(),
                            std::back_inserter(inter));
      tp += inter.size();
    }
    rep.precision = accepted > 0 ? double(tp) / double(accepted) : 1.0;
    rep.recall = actual > 0 ? double(tp) / double(actual) : 1.0;
  }
  return rep;
}

}  // namespace scrl
