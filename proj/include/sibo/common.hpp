#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sibo {

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define SIBO_REQUIRE(cond, msg)                  \
  do {                                           \
    if (!(cond)) throw ::sibo::InvalidArgument(msg); \
  } while (0)

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// splitmix64; decorrelates seeds derived from a common base.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + stream * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Deterministic random stream with textual state round-trip. normal() draws
// a fresh uniform pair per call (no cached spare), so the engine state alone
// fully describes the stream position.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Unbiased draw from {0, ..., n-1}.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("uniform_int: n must be positive");
    std::uint64_t threshold = (-n) % n;
    for (;;) {
      std::uint64_t r = engine_();
      if (r >= threshold) return r % n;
    }
  }

  std::string serialize() const {
    std::ostringstream oss;
    oss << engine_;
    return oss.str();
  }

  static Rng deserialize(const std::string& state) {
    Rng r;
    std::istringstream iss(state);
    iss >> r.engine_;
    if (iss.fail()) throw InvalidArgument("Rng::deserialize: malformed state");
    return r;
  }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

// Recursive adaptive Simpson with a Richardson correction term. `evals`
// accumulates integrand evaluations across calls so callers can enforce a
// budget; on hitting max_evals or max depth the current panel estimate is
// accepted as-is and `converged` (if given) is cleared.
namespace detail {
template <typename F>
double simpson_rec(const F& f, double a, double b, double fa, double fm,
                   double fb, double whole, double tol, int depth,
                   long& evals, long max_evals, bool* converged) {
  double m = 0.5 * (a + b);
  if (evals + 2 > max_evals || depth <= 0) {
    if (converged) *converged = false;
    return whole;
  }
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  evals += 2;
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  double delta = left + right - whole;
  if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, evals,
                     max_evals, converged) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, evals,
                     max_evals, converged);
}
}  // namespace detail

template <typename F>
double adaptive_simpson(const F& f, double a, double b, double abs_tol,
                        long max_evals = 1 << 20, long* evals_used = nullptr,
                        bool* converged = nullptr, int max_depth = 40) {
  if (converged) *converged = true;
  if (!(a < b)) return 0.0;
  long evals = 3;
  double fa = f(a), fm = f(0.5 * (a + b)), fb = f(b);
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  double result = detail::simpson_rec(f, a, b, fa, fm, fb, whole, abs_tol,
                                      max_depth, evals, max_evals, converged);
  if (evals_used) *evals_used += evals;
  return result;
}

}  // namespace sibo
