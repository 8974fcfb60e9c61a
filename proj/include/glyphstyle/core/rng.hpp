#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "glyphstyle/core/tensor.hpp"

namespace glyphstyle {

/// Seeded random source. All stochastic behaviour in the library flows
/// through an explicit Rng handle so runs are reproducible and resumable.
///
/// Distribution objects are constructed per call: the only state is the
/// engine itself, so `state()`/`set_state()` round-trips capture everything
/// needed to continue a stream after checkpoint restore.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::mt19937_64& engine() { return engine_; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }

  double uniform(double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uniform_int_distribution<std::int64_t> d(lo, hi);
    return d(engine_);
  }

  template <class T>
  Tensor<T> normal_tensor(std::vector<int> shape, double mean = 0.0, double stddev = 1.0) {
    Tensor<T> t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(normal(mean, stddev));
    return t;
  }

  template <class T>
  Tensor<T> uniform_tensor(std::vector<int> shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
    return t;
  }

  /// Fisher-Yates shuffle with this engine (std::shuffle's draw pattern is
  /// implementation-defined; this one is pinned so dataset splits are stable).
  template <class V>
  void shuffle(V& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    check(!is.fail(), "Rng::set_state: malformed engine state");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace glyphstyle
