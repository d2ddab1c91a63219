#pragma once

#include "scrl/common.hpp"
#include "scrl/dataset.hpp"
#include "scrl/mdp.hpp"

namespace scrl {

// Randomized small deterministic MDPs for the theorem checks.
struct RandomMdpSpec {
  int min_states = 4;
  int max_states = 12;
  int min_actions = 2;
  int max_actions = 4;
  double gamma_lo = 0.7;
  double gamma_hi = 0.95;
  double terminal_prob = 0.25;  // chance of having one terminal state
  double reward_lo = -1.0;
  double reward_hi = 1.0;
};

DeterministicMdp random_mdp(Rng& rng, const RandomMdpSpec& spec = {});

// One single-step trajectory per (state, action) pair: full state and action
// coverage.
Dataset full_coverage_dataset(const DeterministicMdp& mdp);

// Random behavior trajectories, then closure: every non-terminal unique state
// is given at least one outgoing record, so both extracted policies stay
// defined along their rollouts.
Dataset random_closed_dataset(const DeterministicMdp& mdp, Rng& rng, int n_traj,
                              int max_len);

}  // namespace scrl
