#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace scrl {

using Vec = std::vector<double>;

// Bad inputs, malformed files, violated preconditions. CLI maps this to exit 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent or incomplete run configuration. CLI maps this to exit 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training diverged (NaN/inf loss). CLI maps this to exit 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A policy was queried at a state it does not cover.
class EvaluationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// No action realizes the requested transition.
class ReachError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// splitmix64 finalizer; derives independent seed streams from one root seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  // Uniform integer in [0, n).
  int below(int n) { return std::uniform_int_distribution<int>(0, n - 1)(gen_); }

  std::mt19937_64& raw() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

// Packs a (state, state) or (state, action) id pair into one map key.
inline uint64_t pack_pair(int a, int b) {
  return (uint64_t(uint32_t(a)) << 32) | uint64_t(uint32_t(b));
}
inline int pair_first(uint64_t k) { return int(uint32_t(k >> 32)); }
inline int pair_second(uint64_t k) { return int(uint32_t(k)); }

}  // namespace scrl
