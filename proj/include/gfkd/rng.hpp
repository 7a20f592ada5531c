#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <vector>

namespace gfkd {

// xoshiro256++ generator.  We own the RNG (rather than using std::mt19937)
// because checkpoint resume needs the full state serialized and restored
// bit-exactly, and because the standard distributions are not guaranteed to
// produce identical streams across library implementations.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // uniform in [0,1) with 53 random bits
  double uniform01();
  // uniform in [lo,hi)
  double uniform(double lo, double hi);
  // standard normal via Box-Muller; no cached spare, so the state alone
  // determines the stream (keeps serialization honest)
  double gaussian();
  // uniform integer in [0,n)
  std::uint64_t below(std::uint64_t n);

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream; mixing the tag through splitmix64 keeps
  // sibling streams (data order, augmentation, per-sample noise...) decoupled.
  Rng child(std::uint64_t tag) const;

  std::array<std::uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace gfkd
