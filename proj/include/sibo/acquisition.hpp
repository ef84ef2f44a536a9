#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "sibo/common.hpp"
#include "sibo/gchi2.hpp"
#include "sibo/mogp.hpp"

namespace sibo {

struct Target {
  Eigen::VectorXd values;
};

struct Incumbent {
  double best_value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_input;
};

inline double squared_error(const Eigen::VectorXd& y, const Target& target) {
  SIBO_REQUIRE(y.size() == target.values.size(),
               "squared_error: length mismatch");
  SIBO_REQUIRE(y.allFinite() && target.values.allFinite(),
               "squared_error: non-finite input");
  return (y - target.values).squaredNorm();
}

namespace detail {

inline GChi2 error_distribution(const Posterior& post, const Target& target) {
  SIBO_REQUIRE(post.mean.size() == target.values.size(),
               "acquisition: posterior/target length mismatch");
  return from_gaussian_quadratic(post.mean - target.values, post.covariance);
}

}  // namespace detail

inline double pi_score(const Posterior& post, const Target& target,
                       double incumbent_value) {
  SIBO_REQUIRE(std::isfinite(incumbent_value) && incumbent_value >= 0.0,
               "pi_score: incumbent_value must be finite and non-negative");
  return cdf(detail::error_distribution(post, target), incumbent_value);
}

// E[max(0, L* - Q)] = integral over [0, L*] of the CDF of Q.
inline double ei_score(const Posterior& post, const Target& target,
                       double incumbent_value) {
  SIBO_REQUIRE(std::isfinite(incumbent_value) && incumbent_value >= 0.0,
               "ei_score: incumbent_value must be finite and non-negative");
  GChi2 dist = detail::error_distribution(post, target);
  const double lstar = incumbent_value;
  const double s_star = lstar - dist.offset;
  if (s_star <= 0.0) return 0.0;
  if (dist.weights.size() == 0) return std::min(s_star, lstar);

  detail::Tails tails = detail::Tails::of(dist);
  // EI <= s* P(Q - delta <= s*) <= s* e^-tau once s* sits tau deep in the
  // lower tail, so anything below e^-28 ~ 7e-13 relative rounds to zero.
  if (s_star <= tails.lower(28.0)) return 0.0;
  if (s_star >= tails.upper(detail::kTailTau))
    return std::min(s_star - tails.mu, lstar);

  detail::FastCdf table = detail::FastCdf::build(dist, s_star, 4000);
  if (table.valid()) {
    double ei = table.integral(lstar);
    if (!std::isfinite(ei))
      throw NumericalError("ei_score: quadrature produced a non-finite value");
    return std::min(ei, lstar);
  }
  auto f = [&](double t) { return cdf(dist, t); };
  const double lo = dist.offset, hi = lstar;
  double coarse = 0.5 * (f(lo) + f(hi)) * (hi - lo);
  double tol = 1e-6 * std::max(coarse, 1e-12 * (hi - lo));
  double ei = adaptive_simpson(f, lo, hi, tol, std::size_t{1} << 14);
  if (!std::isfinite(ei))
    throw NumericalError("ei_score: quadrature produced a non-finite value");
  return std::min(std::max(ei, 0.0), lstar);
}

inline double mean_mse_score(const Posterior& post, const Target& target) {
  return -squared_error(post.mean, target);
}

}  // namespace sibo
