#ifndef FRAD_RNG_HPP
#define FRAD_RNG_HPP

#include <cstdint>
#include <string_view>
#include <vector>

namespace frad {

// xoshiro256++ with splitmix64 seeding. Hand-rolled so that streams are
// bit-identical across standard libraries and platforms; every experiment
// quantity is a pure function of its seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal();                        // standard normal, Marsaglia polar
  std::uint64_t bounded(std::uint64_t n); // [0, n), unbiased

  template <class T>
  void shuffle(std::vector<T>& v) {
    if (v.empty()) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(bounded(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t state_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable seed derivation: hash-mix a base seed with a purpose tag and an
// index so parallel workers get independent, order-free streams.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0);

}  // namespace frad

#endif
