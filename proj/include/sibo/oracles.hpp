#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "sibo/common.hpp"
#include "sibo/mogp.hpp"

namespace sibo {

enum class OracleKind { TRIANGLE, SPHERE };

// Synthetic structured-output black boxes: six triangle vertices or ten
// points on a circle, each parameterized by a scalar x.
struct SyntheticOracle {
  OracleKind kind = OracleKind::TRIANGLE;
  NoiseParams noise;  // empty variances -> noise-free
};

inline Eigen::Index oracle_output_dim(OracleKind kind) {
  return kind == OracleKind::TRIANGLE ? 12 : 20;
}

inline Eigen::VectorXd triangle_eval(double x) {
  SIBO_REQUIRE(std::isfinite(x), "triangle_eval: x must be finite");
  const double s = 5.0 * std::sin(x);
  const double c = 5.0 * std::cos(x);
  const double r = std::sqrt(std::abs(x));
  Eigen::VectorXd out(12);
  out << s, s - r, s + r, s - 0.5 * r, s + 0.5 * r, s,
      c, c - 2.0 * r, c - 2.0 * r, c - r, c - r, c - 2.0 * r;
  return out;
}

inline Eigen::VectorXd sphere_eval(double x) {
  SIBO_REQUIRE(std::isfinite(x), "sphere_eval: x must be finite");
  const double c0 = 5.0 * std::sin(x);
  const double c1 = 5.0 * std::cos(x);
  const double r = 5.0 * std::abs(std::sin(x) - std::cos(x));
  Eigen::VectorXd out(20);
  for (int m = 1; m <= 10; ++m) {
    double ang = 2.0 * M_PI * static_cast<double>(m) / 10.0;
    out(m - 1) = c0 + r * std::cos(ang);
    out(9 + m) = c1 + r * std::sin(ang);
  }
  return out;
}

inline Eigen::VectorXd noiseless_eval(const SyntheticOracle& oracle,
                                      double x) {
  return oracle.kind == OracleKind::TRIANGLE ? triangle_eval(x)
                                             : sphere_eval(x);
}

inline Eigen::VectorXd observe(const SyntheticOracle& oracle, double x,
                               Rng& rng) {
  Eigen::VectorXd y = noiseless_eval(oracle, x);
  if (oracle.noise.variances.size() == 0) return y;
  SIBO_REQUIRE(oracle.noise.variances.size() == y.size(),
               "observe: noise variances length mismatch");
  for (Eigen::Index m = 0; m < y.size(); ++m)
    y(m) += std::sqrt(oracle.noise.variances(m)) * rng.normal();
  return y;
}

inline Eigen::MatrixXd generate_pool(OracleKind, Eigen::Index count,
                                     double lo, double hi,
                                     std::uint64_t seed) {
  SIBO_REQUIRE(count >= 1, "generate_pool: count must be positive");
  SIBO_REQUIRE(std::isfinite(lo) && std::isfinite(hi) && lo < hi,
               "generate_pool: invalid input range");
  Rng rng(seed);
  Eigen::MatrixXd pool(count, 1);
  for (Eigen::Index i = 0; i < count; ++i)
    pool(i, 0) = lo + (hi - lo) * rng.uniform();
  std::sort(pool.data(), pool.data() + count);
  return pool;
}

}  // namespace sibo
