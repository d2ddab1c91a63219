#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "scrl/common.hpp"
#include "scrl/mdp.hpp"

namespace scrl {

struct TransitionRecord {
  Vec s;
  Vec a;
  double r = 0.0;
  Vec s_next;
  bool terminal = false;
  int trajectory_id = 0;
  int step_index = 0;

  bool operator==(const TransitionRecord&) const = default;
};

// Per-feature state normalization: s_i -> (s_i - mean_i) / (std_i + eps).
struct NormalizationStats {
  Vec mean;
  Vec stddev;
  double eps = 1e-3;

  Vec apply(const Vec& s) const;
  Vec invert(const Vec& s) const;
};

struct Dataset {
  std::vector<TransitionRecord> records;
  int state_dim = 0;
  int action_dim = 0;
  std::optional<NormalizationStats> normalization;

  void validate() const;  // dims, trajectory contiguity, step ordering
  bool operator==(const Dataset& o) const {
    return records == o.records && state_dim == o.state_dim && action_dim == o.action_dim;
  }
};

// Deterministic rollout of a behavior policy (state id -> action id) on an
// MDP, recorded as a trajectory. Stops at a terminal state or after max_len
// steps. Throws EvaluationError when behavior is undefined at a visited state.
std::vector<TransitionRecord> rollout(const DeterministicMdp& mdp,
                                      const std::vector<int>& behavior, int s0,
                                      int max_len, int trajectory_id);

// Turns scenario trajectories (cell paths) into transition records.
Dataset dataset_from_maze(const MazeMdp& maze);

// Pooled mean/std over all s and s_next; returns a copy with states replaced
// and the stats recorded for inversion. Rewards and actions stay raw.
Dataset normalize_states(const Dataset& d);

// Deduplicated union of all s and s_next in first-appearance order, with a
// byte-exact key lookup.
struct StateIndex {
  std::vector<Vec> states;
  std::unordered_map<std::string, int> key_to_id;
  std::vector<bool> terminal;           // marked from records with done=true
  std::vector<std::vector<int>> recorded_next;  // recorded successor ids per state
  std::vector<bool> has_outgoing;

  int size() const { return int(states.size()); }
  int find(const Vec& s) const;  // -1 when absent
  static std::string key_of(const Vec& s);
};

StateIndex unique_states(const Dataset& d);

// JSON-Lines round trip. First line is the header
// {"state_dim":d,"action_dim":k}; each further line one record.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace scrl
