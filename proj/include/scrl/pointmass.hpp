#pragma once

#include <functional>

#include "scrl/common.hpp"
#include "scrl/dataset.hpp"

namespace scrl {

// Desk-scale continuous environment: a 2-D point mass with per-axis clipped
// actions, s' = clip(s + clip(a)). Ground-truth reachability and optimal
// returns are analytic, which is what the reachability and StaCQ checks rely
// on.
struct PointMassEnv {
  double action_limit = 0.2;
  Vec state_lo{0.0, 0.0};
  Vec state_hi{1.0, 1.0};
  Vec goal{0.85, 0.85};
  double goal_radius = 0.1;
  double goal_reward = 10.0;
  int max_episode_len = 60;

  int state_dim() const { return int(state_lo.size()); }

  Vec clip_action(Vec a) const;
  Vec step_state(const Vec& s, const Vec& a) const;
  bool in_goal(const Vec& s) const;
  double dist_to_goal(const Vec& s) const;

  // Entering the goal region pays goal_reward (terminal); every other step
  // pays the negative distance of the landing state to the goal.
  double reward(const Vec& s, const Vec& sp) const;

  // Analytic one-step reachability: sp inside the clipped action envelope.
  bool true_reachable(const Vec& s, const Vec& sp) const;

  Vec sample_start(Rng& rng) const;  // uniform over the state box, off-goal

  // Noisy proportional controller toward the goal.
  Vec behavior_action(const Vec& s, Rng& rng, double noise_std) const;

  // Episodes under the noisy scripted behavior until at least min_transitions
  // records exist.
  Dataset generate_dataset(int min_transitions, uint64_t seed, double noise_std) const;

  // Undiscounted return of one greedy episode under actor (raw in, raw out).
  double rollout_return(const std::function<Vec(const Vec&)>& actor, Rng& rng) const;

  // Mean undiscounted per-trajectory return of a dataset (the behavior bar).
  static double dataset_mean_return(const Dataset& d);
};

}  // namespace scrl
