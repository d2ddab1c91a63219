#include "scrl/random_mdp.hpp"

#include <algorithm>
#include <cmath>

namespace scrl {

DeterministicMdp random_mdp(Rng& rng, const RandomMdpSpec& spec) {
  DeterministicMdp mdp;
  const int n = spec.min_states + rng.below(spec.max_states - spec.min_states + 1);
  const int na = spec.min_actions + rng.below(spec.max_actions - spec.min_actions + 1);
  for (int s = 0; s < n; ++s) mdp.states.push_back(Vec{double(s)});
  for (int a = 0; a < na; ++a) mdp.actions.push_back(Vec{double(a)});
  mdp.discount = rng.uniform(spec.gamma_lo, spec.gamma_hi);
  mdp.terminal.assign(size_t(n), false);
  if (rng.uniform(0.0, 1.0) < spec.terminal_prob && n > 1)
    mdp.terminal[size_t(rng.below(n))] = true;

  mdp.next.assign(size_t(n), std::vector<int>(size_t(na), 0));
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < na; ++a) {
      const int sp = mdp.terminal[size_t(s)] ? s : rng.below(n);
      mdp.next[size_t(s)][size_t(a)] = sp;
      if (!mdp.terminal[size_t(s)]) {
        const uint64_t key = pack_pair(s, sp);
        if (!mdp.reward.count(key))
          mdp.reward[key] = rng.uniform(spec.reward_lo, spec.reward_hi);
      }
    }
  }
  mdp.reward_bound = std::max(std::fabs(spec.reward_lo), std::fabs(spec.reward_hi));
  return mdp;
}

namespace {

TransitionRecord make_record(const DeterministicMdp& mdp, int s, int a, int traj,
                             int step) {
  const auto [sp, r] = mdp.step(s, a);
  TransitionRecord rec;
  rec.s = mdp.states[size_t(s)];
  rec.a = mdp.actions[size_t(a)];
  rec.r = r;
  rec.s_next = mdp.states[size_t(sp)];
  rec.terminal = mdp.terminal[size_t(sp)];
  rec.trajectory_id = traj;
  rec.step_index = step;
  return rec;
}

}  // namespace

Dataset full_coverage_dataset(const DeterministicMdp& mdp) {
  Dataset d;
  d.state_dim = 1;
  d.action_dim = 1;
  int traj = 0;
  for (int s = 0; s < mdp.num_states(); ++s) {
    if (mdp.terminal[size_t(s)]) continue;
    for (int a = 0; a < mdp.num_actions(); ++a)
      d.records.push_back(make_record(mdp, s, a, traj++, 0));
  }
  return d;
}

Dataset random_closed_dataset(const DeterministicMdp& mdp, Rng& rng, int n_traj,
                              int max_len) {
  Dataset d;
  d.state_dim = 1;
  d.action_dim = 1;
  std::vector<int> nonterminal;
  for (int s = 0; s < mdp.num_states(); ++s)
    if (!mdp.terminal[size_t(s)]) nonterminal.push_back(s);
  if (nonterminal.empty()) throw ValidationError("MDP has no non-terminal states");

  int traj = 0;
  for (int i = 0; i < n_traj; ++i) {
    int s = nonterminal[size_t(rng.below(int(nonterminal.size())))];
    bool pushed = false;
    for (int t = 0; t < max_len; ++t) {
      const int a = rng.below(mdp.num_actions());
      d.records.push_back(make_record(mdp, s, a, traj, t));
      pushed = true;
      if (d.records.back().terminal) break;
      s = int(d.records.back().s_next[0]);
    }
    if (pushed) ++traj;
  }
  // Closure: give every dangling non-terminal unique state an outgoing record.
  for (;;) {
    std::vector<char> has_out(size_t(mdp.num_states()), 0);
    std::vector<char> present(size_t(mdp.num_states()), 0);
    for (const auto& rec : d.records) {
      const int s = int(rec.s[0]);
      const int sp = int(rec.s_next[0]);
      has_out[size_t(s)] = 1;
      present[size_t(s)] = 1;
      present[size_t(sp)] = 1;
    }
    int dangling = -1;
    for (int s = 0; s < mdp.num_states(); ++s)
      if (present[size_t(s)] && !has_out[size_t(s)] && !mdp.terminal[size_t(s)]) {
        dangling = s;
        break;
      }
    if (dangling < 0) break;
    d.records.push_back(
        make_record(mdp, dangling, rng.below(mdp.num_actions()), traj++, 0));
  }
  // Degenerate draws (all starts terminal) still need a non-empty dataset.
  if (d.records.empty()) {
    for (int s = 0; s < mdp.num_states(); ++s)
      if (!mdp.terminal[size_t(s)]) {
        d.records.push_back(make_record(mdp, s, 0, traj++, 0));
        break;
      }
  }
  return d;
}

}  // namespace scrl
