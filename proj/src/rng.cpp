#include "vidqa/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace vidqa {
namespace {

// splitmix64 step (Steele et al.); also used to mix derivation keys.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : seed_(seed), state_(mix64(seed)) {}

RngStream RngStream::derive(std::string_view purpose) const {
  return RngStream(mix64(seed_ ^ fnv1a(purpose)));
}

RngStream RngStream::derive(std::string_view purpose, std::uint64_t index) const {
  return RngStream(mix64(mix64(seed_ ^ fnv1a(purpose)) + index));
}

std::uint64_t RngStream::next_u64() {
  state_ = mix64(state_);
  return state_;
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::size_t RngStream::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  // Rejection sampling keeps the draw unbiased for any n.
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

double RngStream::normal() {
  double u1 = 1.0 - uniform();  // (0,1], keeps log() finite
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

double RngStream::normal(double mean, double stddev) {
  return mean + stddev * normal();
}

}  // namespace vidqa
