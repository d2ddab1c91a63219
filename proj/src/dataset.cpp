#include "scrl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace scrl {

using nlohmann::json;

Vec NormalizationStats::apply(const Vec& s) const {
  Vec out(s.size());
  for (size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - mean[i]) / (stddev[i] + eps);
  return out;
}

Vec NormalizationStats::invert(const Vec& s) const {
  Vec out(s.size());
  for (size_t i = 0; i < s.size(); ++i) out[i] = s[i] * (stddev[i] + eps) + mean[i];
  return out;
}

void Dataset::validate() const {
  int expected_traj = 0;
  int last_traj = -1, last_step = -1;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (int(r.s.size()) != state_dim || int(r.s_next.size()) != state_dim)
      throw ValidationError("record " + std::to_string(i) + " has wrong state_dim");
    if (int(r.a.size()) != action_dim)
      throw ValidationError("record " + std::to_string(i) + " has wrong action_dim");
    if (r.trajectory_id == last_traj) {
      if (r.step_index <= last_step)
        throw ValidationError("record " + std::to_string(i) +
                              ": step_index not strictly increasing within trajectory");
      if (i > 0 && records[i - 1].terminal)
        throw ValidationError("record " + std::to_string(i) +
                              ": trajectory continues past a terminal record");
    } else {
      if (r.trajectory_id != expected_traj)
        throw ValidationError("record " + std::to_string(i) + ": trajectory ids not contiguous (got " +
                              std::to_string(r.trajectory_id) + ", expected " +
                              std::to_string(expected_traj) + ")");
      ++expected_traj;
    }
    last_traj = r.trajectory_id;
    last_step = r.step_index;
  }
}

std::vector<TransitionRecord> rollout(const DeterministicMdp& mdp,
                                      const std::vector<int>& behavior, int s0,
                                      int max_len, int trajectory_id) {
  std::vector<TransitionRecord> out;
  int s = s0;
  for (int t = 0; t < max_len; ++t) {
    if (mdp.terminal[size_t(s)]) break;
    const int a = (s < int(behavior.size())) ? behavior[size_t(s)] : -1;
    if (a < 0)
      throw EvaluationError("behavior policy undefined at state " + std::to_string(s));
    const auto [sp, r] = mdp.step(s, a);
    TransitionRecord rec;
    rec.s = mdp.states[size_t(s)];
    rec.a = mdp.actions[size_t(a)];
    rec.r = r;
    rec.s_next = mdp.states[size_t(sp)];
    rec.terminal = mdp.terminal[size_t(sp)];
    rec.trajectory_id = trajectory_id;
    rec.step_index = t;
    out.push_back(std::move(rec));
    s = sp;
  }
  return out;
}

Dataset dataset_from_maze(const MazeMdp& maze) {
  Dataset d;
  d.state_dim = 2;
  d.action_dim = 2;
  for (size_t t = 0; t < maze.scenario.trajectories.size(); ++t) {
    const auto& traj = maze.scenario.trajectories[t];
    for (size_t i = 0; i + 1 < traj.size(); ++i) {
      const auto [x0, y0] = traj[i];
      const auto [x1, y1] = traj[i + 1];
      TransitionRecord rec;
      rec.s = {double(x0), double(y0)};
      rec.a = {double(x1 - x0), double(y1 - y0)};
      const bool at_goal = (traj[i + 1] == maze.scenario.goal);
      rec.r = at_goal ? maze.scenario.r_goal : maze.scenario.r_pen;
      rec.s_next = {double(x1), double(y1)};
      rec.terminal = at_goal;
      rec.trajectory_id = int(t);
      rec.step_index = int(i);
      d.records.push_back(std::move(rec));
    }
  }
  return d;
}

Dataset normalize_states(const Dataset& d) {
  if (d.records.empty()) throw ValidationError("cannot normalize an empty dataset");
  const size_t dim = size_t(d.state_dim);
  Vec mean(dim, 0.0), var(dim, 0.0);
  const double count = 2.0 * double(d.records.size());
  for (const auto& r : d.records)
    for (size_t i = 0; i < dim; ++i) mean[i] += r.s[i] + r.s_next[i];
  for (size_t i = 0; i < dim; ++i) mean[i] /= count;
  for (const auto& r : d.records)
    for (size_t i = 0; i < dim; ++i) {
      const double a = r.s[i] - mean[i], b = r.s_next[i] - mean[i];
      var[i] += a * a + b * b;
    }
  NormalizationStats stats;
  stats.mean = mean;
  stats.stddev.resize(dim);
  for (size_t i = 0; i < dim; ++i) stats.stddev[i] = std::sqrt(var[i] / count);

  Dataset out = d;
  for (auto& r : out.records) {
    r.s = stats.apply(r.s);
    r.s_next = stats.apply(r.s_next);
  }
  out.normalization = stats;
  return out;
}

std::string StateIndex::key_of(const Vec& s) {
  std::string key(s.size() * sizeof(double), '\0');
  std::memcpy(key.data(), s.data(), key.size());
  return key;
}

int StateIndex::find(const Vec& s) const {
  const auto it = key_to_id.find(key_of(s));
  return it == key_to_id.end() ? -1 : it->second;
}

StateIndex unique_states(const Dataset& d) {
  StateIndex idx;
  auto intern = [&idx](const Vec& s) {
    const auto [it, inserted] = idx.key_to_id.try_emplace(StateIndex::key_of(s),
                                                          int(idx.states.size()));
    if (inserted) {
      idx.states.push_back(s);
      idx.terminal.push_back(false);
      idx.recorded_next.emplace_back();
      idx.has_outgoing.push_back(false);
    }
    return it->second;
  };
  for (const auto& r : d.records) {
    const int i = intern(r.s);
    const int j = intern(r.s_next);
    idx.has_outgoing[size_t(i)] = true;
    auto& nexts = idx.recorded_next[size_t(i)];
    if (std::find(nexts.begin(), nexts.end(), j) == nexts.end()) nexts.push_back(j);
    if (r.terminal) idx.terminal[size_t(j)] = true;
  }
  return idx;
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  json header;
  header["state_dim"] = d.state_dim;
  header["action_dim"] = d.action_dim;
  out << header.dump() << "\n";
  for (const auto& r : d.records) {
    json line;
    line["t"] = r.trajectory_id;
    line["i"] = r.step_index;
    line["s"] = r.s;
    line["a"] = r.a;
    line["r"] = r.r;
    line["sn"] = r.s_next;
    line["done"] = r.terminal;
    out << line.dump() << "\n";
  }
  if (!out) throw ValidationError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file: " + path);
  std::string line;
  int line_no = 0;
  auto parse_line = [&](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw ValidationError("dataset parse error at line " + std::to_string(line_no) +
                            ": " + e.what());
    }
  };

  Dataset d;
  if (!std::getline(in, line))
    throw ValidationError("dataset file is empty (missing header): " + path);
  ++line_no;
  const json header = parse_line(line);
  if (!header.contains("state_dim") || !header.contains("action_dim"))
    throw ValidationError("dataset header at line 1 must declare state_dim and action_dim");
  d.state_dim = header["state_dim"].get<int>();
  d.action_dim = header["action_dim"].get<int>();

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = parse_line(line);
    TransitionRecord r;
    try {
      r.trajectory_id = j.at("t").get<int>();
      r.step_index = j.at("i").get<int>();
      r.s = j.at("s").get<Vec>();
      r.a = j.at("a").get<Vec>();
      r.r = j.at("r").get<double>();
      r.s_next = j.at("sn").get<Vec>();
      r.terminal = j.at("done").get<bool>();
    } catch (const json::exception& e) {
      throw ValidationError("dataset record error at line " + std::to_string(line_no) +
                            ": " + e.what());
    }
    if (int(r.s.size()) != d.state_dim || int(r.s_next.size()) != d.state_dim)
      throw ValidationError("wrong state_dim at line " + std::to_string(line_no));
    if (int(r.a.size()) != d.action_dim)
      throw ValidationError("wrong action_dim at line " + std::to_string(line_no));
    d.records.push_back(std::move(r));
  }
  d.validate();
  return d;
}

}  // namespace scrl
