#include "scrl/pointmass.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace scrl {

Vec PointMassEnv::clip_action(Vec a) const {
  for (auto& v : a) v = std::clamp(v, -action_limit, action_limit);
  return a;
}

Vec PointMassEnv::step_state(const Vec& s, const Vec& a) const {
  const Vec ca = clip_action(a);
  Vec sp(s.size());
  for (size_t d = 0; d < s.size(); ++d)
    sp[d] = std::clamp(s[d] + ca[d], state_lo[d], state_hi[d]);
  return sp;
}

bool PointMassEnv::in_goal(const Vec& s) const {
  return dist_to_goal(s) <= goal_radius;
}

double PointMassEnv::dist_to_goal(const Vec& s) const {
  double acc = 0.0;
  for (size_t d = 0; d < s.size(); ++d) {
    const double diff = s[d] - goal[d];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

double PointMassEnv::reward(const Vec&, const Vec& sp) const {
  return in_goal(sp) ? goal_reward : -dist_to_goal(sp);
}

bool PointMassEnv::true_reachable(const Vec& s, const Vec& sp) const {
  for (size_t d = 0; d < s.size(); ++d) {
    const double lo = std::max(state_lo[d], s[d] - action_limit);
    const double hi = std::min(state_hi[d], s[d] + action_limit);
    if (sp[d] < lo || sp[d] > hi) return false;
  }
  return true;
}

Vec PointMassEnv::sample_start(Rng& rng) const {
  for (;;) {
    Vec s(state_lo.size());
    for (size_t d = 0; d < s.size(); ++d) s[d] = rng.uniform(state_lo[d], state_hi[d]);
    if (!in_goal(s)) return s;
  }
}

Vec PointMassEnv::behavior_action(const Vec& s, Rng& rng, double noise_std) const {
  Vec a(s.size());
  for (size_t d = 0; d < s.size(); ++d)
    a[d] = 0.6 * (goal[d] - s[d]) + rng.normal(0.0, noise_std);
  return clip_action(std::move(a));
}

Dataset PointMassEnv::generate_dataset(int min_transitions, uint64_t seed,
                                       double noise_std) const {
  Dataset d;
  d.state_dim = state_dim();
  d.action_dim = state_dim();
  Rng rng(mix_seed(seed, 0x9011));
  int traj = 0;
  while (int(d.records.size()) < min_transitions) {
    Vec s = sample_start(rng);
    for (int t = 0; t < max_episode_len; ++t) {
      const Vec a = behavior_action(s, rng, noise_std);
      const Vec sp = step_state(s, a);
      TransitionRecord rec;
      rec.s = s;
      rec.a = a;
      rec.s_next = sp;
      rec.r = reward(s, sp);
      rec.terminal = in_goal(sp);
      rec.trajectory_id = traj;
      rec.step_index = t;
      d.records.push_back(rec);
      s = sp;
      if (rec.terminal) break;
    }
    ++traj;
  }
  return d;
}

double PointMassEnv::rollout_return(const std::function<Vec(const Vec&)>& actor,
                                    Rng& rng) const {
  Vec s = sample_start(rng);
  double ret = 0.0;
  for (int t = 0; t < max_episode_len; ++t) {
    const Vec sp = step_state(s, actor(s));
    ret += reward(s, sp);
    if (in_goal(sp)) break;
    s = sp;
  }
  return ret;
}

double PointMassEnv::dataset_mean_return(const Dataset& d) {
  if (d.records.empty()) return 0.0;
  std::map<int, double> per_traj;
  for (const auto& r : d.records) per_traj[r.trajectory_id] += r.r;
  double acc = 0.0;
  for (const auto& [id, ret] : per_traj) acc += ret;
  return acc / double(per_traj.size());
}

}  // namespace scrl
