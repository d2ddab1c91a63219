#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scrl {

// One manifest per artifact-producing command: what ran, with which inputs
// (content-hashed), what came out, and how long it took. Reruns with identical
// inputs and seeds reproduce identical outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> input_hashes;  // path, fnv1a-64 hex
  std::vector<std::string> outputs;
  std::string simd_mode;
  double wall_clock_sec = 0.0;

  void add_input(const std::string& path);  // hashes the file contents
  void write(const std::string& path) const;
};

uint64_t fnv1a_file(const std::string& path);

}  // namespace scrl
