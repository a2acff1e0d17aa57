#pragma once

// Deterministic random number generation.  A single seeded Rng drives an
// entire training run; its state serializes into checkpoints so a resumed run
// continues the exact sample stream.  Gaussian draws use explicit Box-Muller
// (no cached second sample, no library normal_distribution) so the mapping
// from seed to stream is fixed by this file alone.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>

#include "sfd/common.hpp"

namespace sfd {

namespace detail {

// splitmix64 finalizer; used to decorrelate derived stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Independent generator for an auxiliary stream (e.g. evaluation at a given
  // step) that must not disturb the main training stream.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    return Rng(detail::mix64(detail::mix64(seed) ^ stream));
  }

  // Uniform on [0, 1).
  double uniform() {
    // 53 random bits -> double; exact and platform-independent.
    const std::uint64_t bits = gen_() >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller.  Uses two fresh uniforms per draw and
  // discards the paired sine branch: slightly wasteful, entirely stateless.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  void fill_normal(std::span<double> out) {
    for (double& v : out) {
      v = normal();
    }
  }

  // Uniform integer on [lo, hi] inclusive, by rejection (no modulo bias).
  int uniform_int(int lo, int hi) {
    require(lo <= hi, cat("uniform_int: empty range [", lo, ", ", hi, "]"));
    const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t r = gen_();
    while (r >= limit) {
      r = gen_();
    }
    return lo + static_cast<int>(r % span);
  }

  // Index sampled from unnormalized non-negative weights.
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
      require(w >= 0.0, "categorical: negative weight");
      total += w;
    }
    require(total > 0.0, "categorical: all weights zero");
    double u = uniform() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) {
        return static_cast<int>(i);
      }
    }
    return static_cast<int>(weights.size() - 1);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> gen_;
    if (is.fail()) {
      fail_io("Rng::deserialize: malformed generator state");
    }
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace sfd
