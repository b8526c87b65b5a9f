#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace vidqa {

// Deterministic random stream. One master stream per run; sub-streams are
// derived by purpose string (and optionally an index) so that the draw order
// of one consumer never perturbs another. All mappings from raw bits to
// values are implemented here rather than with std::*_distribution, which
// keeps artifacts byte-identical across standard library versions.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  RngStream derive(std::string_view purpose) const;
  RngStream derive(std::string_view purpose, std::uint64_t index) const;

  std::uint64_t next_u64();

  // Uniform in [0,1) with 53 bits of resolution.
  double uniform();
  // Uniform in [lo,hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0,n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  // Standard normal via Box-Muller (no cached second draw).
  double normal();
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = uniform_index(i + 1);
      std::swap(v[i], v[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace vidqa
