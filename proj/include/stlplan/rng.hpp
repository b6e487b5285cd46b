#ifndef STLPLAN_RNG_HPP
#define STLPLAN_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace stlplan {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives independent stream seeds from a master seed and a short tag.
// Every rollout/episode/update gets its own stream, so resuming a run only
// needs loop counters, not RNG state snapshots.
inline std::uint64_t derive_seed(std::uint64_t master, const char* tag,
                                 std::uint64_t i = 0, std::uint64_t j = 0,
                                 std::uint64_t k = 0) {
  std::uint64_t h = master;
  for (const char* p = tag; *p; ++p) h = splitmix64(h ^ static_cast<std::uint64_t>(*p));
  h = splitmix64(h ^ (i * 0x9e3779b97f4a7c15ULL));
  h = splitmix64(h ^ (j * 0xc2b2ae3d27d4eb4fULL));
  h = splitmix64(h ^ (k * 0x165667b19e3779f9ULL));
  return h;
}

// mt19937_64 wrapper with explicit, platform-stable draw routines.
// normal() consumes exactly two raw draws (no cached spare), so a stream
// restored from save() continues bit-identically.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::string save() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void load(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace stlplan

#endif
