#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scrl/common.hpp"
#include "scrl/nn.hpp"

namespace scrl {

enum class Norm { l1, l2, linf };

Norm norm_from_name(const std::string& name);  // "l1" | "l2" | "linf"
const char* norm_name(Norm n);

// Residual acceptance rule. In scaled mode the residual vector is divided
// elementwise by the range-box width before the norm is taken; zero-width
// dimensions fall back to divisor eps_s.
struct ReachCriterion {
  Norm norm = Norm::linf;
  double epsilon = 0.1;
  bool scaled = true;
  double eps_s = 1e-3;

  void validate() const;
};

struct RangeBox {
  Vec lo, hi;

  bool contains(std::span<const double> x) const;
  void validate() const;
};

// Elementwise min/max of forward-model predictions over n_random actions
// sampled uniformly in the action bounds.
RangeBox candidate_range(const Vec& s, const MlpEnsemble& fwd, int n_random,
                         const Vec& action_lo, const Vec& action_hi, Rng& rng);

// Bulk-loaded hierarchy of bounding rectangles over point states; range
// queries return exactly the states inside the (closed) box.
class SpatialIndex {
 public:
  SpatialIndex() = default;
  explicit SpatialIndex(const std::vector<Vec>& states);

  std::vector<int> query(const RangeBox& box) const;  // sorted ids
  bool empty() const { return root_ == nullptr; }

 private:
  struct Node {
    Vec lo, hi;
    std::vector<int> points;  // leaf payload
    std::unique_ptr<Node> left, right;
  };
  std::unique_ptr<Node> build(std::vector<int>& ids, size_t begin, size_t end);
  void query_node(const Node* n, const RangeBox& box, std::vector<int>& out) const;

  const std::vector<Vec>* states_ = nullptr;
  std::unique_ptr<Node> root_;
  static constexpr size_t kLeafCap = 16;
};

struct ReachCandidate {
  int id = -1;
  double residual = 0.0;
};

// Residual vector f(s, I(s, cand)) - cand, optionally range-scaled.
Vec reach_residual(const Vec& s, const Vec& cand, const MlpEnsemble& fwd,
                   const MlpEnsemble& inv, const ReachCriterion& crit,
                   const RangeBox* range);

double apply_norm(Norm norm, const Vec& v);

// Keeps the candidates whose residual norm is within epsilon. Scaled mode
// requires a range box (ConfigError otherwise).
std::vector<ReachCandidate> estimate_reachable(
    const Vec& s, std::span<const int> candidate_ids, const std::vector<Vec>& states,
    const MlpEnsemble& fwd, const MlpEnsemble& inv, const ReachCriterion& crit,
    const RangeBox* range);

struct KStepOptions {
  int samples = 256;  // sampled action sequences for k >= 2
  Vec action_lo, action_hi;
  uint64_t seed = 0;
};

// k = 1 reduces to estimate_reachable. For k >= 2 the search rolls the
// forward model over sampled action sequences (declared non-exhaustive);
// intermediate states are unconstrained, only the endpoint must match a
// candidate within the criterion.
std::vector<ReachCandidate> k_step_reachable(
    const Vec& s, int k, std::span<const int> candidate_ids,
    const std::vector<Vec>& states, const MlpEnsemble& fwd, const MlpEnsemble& inv,
    const ReachCriterion& crit, const RangeBox* range, const KStepOptions& opt);

// Exhaustive |A|^k enumeration with an exact stepper; returns the dataset
// members reached at exactly depth k (sorted, deduplicated).
std::vector<int> k_step_reachable_exact(const std::function<int(int, int)>& step_fn,
                                        int n_actions, int s, int k,
                                        std::span<const char> in_dataset);

// The four cardinal neighbours, unfiltered (walls and off-grid cells
// included; dataset intersection happens at the learner).
std::vector<std::pair<int, int>> grid_reachable(std::pair<int, int> cell);

struct ReachabilityIndex {
  ReachCriterion criterion;
  int k = 1;
  std::vector<std::vector<ReachCandidate>> cands;  // per state id
  double coverage = 1.0;

  int size() const { return int(cands.size()); }
  std::vector<int> id_set(int s) const;  // candidate ids, sorted

  void save(const std::string& path) const;
  static ReachabilityIndex load(const std::string& path);
};

struct ReachBuildOptions {
  int n_random = 64;
  Vec action_lo, action_hi;
  bool bypass_index = false;  // replace the spatial index with a linear scan
  int max_candidates = 0;     // 0 = unlimited; else keep the smallest residuals
  int k = 1;
  int k_samples = 256;
  uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
};

// Appendix-B pipeline per state: range box -> box query -> residual test.
// Parallelizes across states; per-state RNG streams keep it deterministic.
ReachabilityIndex build_reachability_index(const std::vector<Vec>& states,
                                           const MlpEnsemble& fwd,
                                           const MlpEnsemble& inv,
                                           const ReachCriterion& crit,
                                           const ReachBuildOptions& opt);

struct MazeMdp;        // scrl/mdp.hpp
struct IndexedDataset;  // scrl/tabular.hpp

// Exact grid index over MDP state ids: union over step counts 1..k of exact
// j-step sets, intersected with the dataset states. Residuals are 0.
ReachabilityIndex exact_grid_reach_index(const MazeMdp& maze,
                                         const IndexedDataset& data, int k = 1);

struct StateIndex;  // scrl/dataset.hpp

// Same index expressed over dataset unique-state ids (the id space used by
// index files and the deep learners).
ReachabilityIndex exact_grid_reach_index_dataset(const MazeMdp& maze,
                                                 const StateIndex& ds, int k = 1);

struct ReachReport {
  int n_states = 0;
  size_t total_candidates = 0;
  size_t min_candidates = 0, max_candidates = 0;
  double mean_candidates = 0.0;
  std::vector<size_t> residual_hist;  // 10 bins over [0, epsilon]
  double hist_bin_width = 0.0;
  std::optional<double> precision, recall;

  std::string to_text() const;
};

// Ground truth, when supplied, is a per-state id set aligned with the index.
ReachReport reachability_report(const ReachabilityIndex& index,
                                const std::vector<std::vector<int>>* truth);

}  // namespace scrl
