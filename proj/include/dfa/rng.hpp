#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dfa/errors.hpp"
#include "dfa/tensor.hpp"

namespace dfa {

// Seeded random source. One Rng instance is one deterministic stream; it must
// not be shared across concurrent callers. Distribution objects are created
// per draw so the engine state alone fully determines the sequence, which
// makes the state serializable as text.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Derive an independent child stream; used to give training, noise and
  // attacks separate deterministic streams from one run seed.
  Rng fork(std::uint64_t salt) {
    return Rng(seed_ ^ (0x9e3779b97f4a7c15ULL * (salt + 1)) ^ engine_());
  }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  double gamma(double shape) {
    return std::gamma_distribution<double>(shape, 1.0)(engine_);
  }

  // Beta(a, a) via the two-gamma construction.
  double beta_symmetric(double alpha) {
    if (!(alpha > 0.0)) throw ParameterError("beta: alpha must be positive");
    double g1 = gamma(alpha);
    double g2 = gamma(alpha);
    double s = g1 + g2;
    if (s <= 0.0) return 0.5;  // underflow corner for very small alpha
    return g1 / s;
  }

  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), engine_);
    return p;
  }

  Tensor normal_tensor(std::vector<std::size_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(0.0, stddev);
    return t;
  }

  Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

  std::string state() const {
    std::ostringstream os;
    os << seed_ << ' ' << engine_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> seed_ >> engine_;
    if (!is) throw ConfigError("rng: malformed state string");
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace dfa
