#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace vaeatk {

// Derives a child seed from (master, stage tag, item index). All per-stage and
// per-item randomness in the project is keyed this way so that runs are
// reproducible regardless of execution order or worker count.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

// Small deterministic generator (splitmix64 core). We do not use
// std::normal_distribution because its output is implementation defined;
// this one produces the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();

  // Uniform in [lo, hi).
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller (second value cached).
  double normal();

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  void fill_normal(std::vector<double>& out);
  void fill_uniform(std::vector<double>& out, double lo, double hi);

  // Deterministic Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace vaeatk
