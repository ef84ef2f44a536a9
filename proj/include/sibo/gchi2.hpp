#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>
#include <vector>

#include "sibo/common.hpp"

namespace sibo {

// Law of delta + sum_i weights[i] * chi2_1(noncentrality[i]).
struct GChi2 {
  Eigen::VectorXd weights;        // lambda, sorted descending, all > 0
  Eigen::VectorXd noncentrality;  // b^2, aligned with weights
  double offset = 0.0;            // delta, mass from zero-eigenvalue directions
};

inline GChi2 from_gaussian_quadratic(const Eigen::VectorXd& mean_shift,
                                     const Eigen::MatrixXd& covariance) {
  SIBO_REQUIRE(covariance.rows() == covariance.cols(),
               "from_gaussian_quadratic: covariance must be square");
  SIBO_REQUIRE(covariance.rows() == mean_shift.size(),
               "from_gaussian_quadratic: mean/covariance size mismatch");
  SIBO_REQUIRE(mean_shift.allFinite() && covariance.allFinite(),
               "from_gaussian_quadratic: non-finite input");
  SIBO_REQUIRE(
      (covariance - covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-9,
      "from_gaussian_quadratic: covariance asymmetric beyond tolerance");

  Eigen::MatrixXd sym = 0.5 * (covariance + covariance.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd& evals = es.eigenvalues();
  if (evals.size() > 0 && evals.minCoeff() < -1e-8) {
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "from_gaussian_quadratic: covariance has eigenvalue %.3e",
                  evals.minCoeff());
    throw NumericalError(buf);
  }
  Eigen::VectorXd proj = es.eigenvectors().transpose() * mean_shift;

  double max_eig = evals.size() > 0 ? std::max(0.0, evals.maxCoeff()) : 0.0;
  double eps_eig = 1e-10 * max_eig;
  std::vector<std::pair<double, double>> kept;  // (lambda, b^2)
  double offset = 0.0;
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    if (evals(i) > eps_eig)
      kept.emplace_back(evals(i), proj(i) * proj(i) / evals(i));
    else
      offset += proj(i) * proj(i);
  }
  std::sort(kept.begin(), kept.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  GChi2 out;
  out.weights.resize(static_cast<Eigen::Index>(kept.size()));
  out.noncentrality.resize(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    out.weights(static_cast<Eigen::Index>(i)) = kept[i].first;
    out.noncentrality(static_cast<Eigen::Index>(i)) = kept[i].second;
  }
  out.offset = offset;
  return out;
}

namespace detail {

// Imhof (1961): P(W <= delta + s) = 1/2 - (1/pi) * I(s) with
//   I(s) = int_0^inf sin(theta(u, s)) / (u * rho(u)) du,
//   theta(u, s) = a(u) - s*u/2,
//   a(u) = (1/2) sum_i [atan(l_i u) + b2_i l_i u / (1 + l_i^2 u^2)],
//   log rho(u) = sum_i [(1/4) log(1 + l_i^2 u^2)
//                       + (1/2) b2_i l_i^2 u^2 / (1 + l_i^2 u^2)].
struct ImhofContext {
  std::vector<double> lam, b2;

  explicit ImhofContext(const GChi2& dist)
      : lam(dist.weights.data(), dist.weights.data() + dist.weights.size()),
        b2(dist.noncentrality.data(),
           dist.noncentrality.data() + dist.noncentrality.size()) {}

  double a_phase(double u) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < lam.size(); ++i) {
      double lu = lam[i] * u;
      acc += std::atan(lu) + b2[i] * lu / (1.0 + lu * lu);
    }
    return 0.5 * acc;
  }

  double log_rho(double u) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < lam.size(); ++i) {
      double lu2 = lam[i] * u * lam[i] * u;
      acc += 0.25 * std::log1p(lu2) + 0.5 * b2[i] * lu2 / (1.0 + lu2);
    }
    return acc;
  }

  double theta(double u, double s) const { return a_phase(u) - 0.5 * s * u; }

  double log_rho_slope(double u) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < lam.size(); ++i) {
      double l2u = lam[i] * lam[i] * u;
      double d = 1.0 + l2u * u;
      acc += l2u * (0.5 + b2[i] / d) / d;
    }
    return acc;
  }

  double integrand(double u, double s) const {
    if (u <= 0.0) {  // limit sin(theta)/u -> theta'(0)
      double acc = 0.0;
      for (std::size_t i = 0; i < lam.size(); ++i)
        acc += lam[i] * (1.0 + b2[i]);
      return 0.5 * (acc - s);
    }
    return std::sin(theta(u, s)) * std::exp(-log_rho(u)) / u;
  }

  // Upper bound on |theta'(u, s')| valid for every s' in [0, s].
  double rate_bound(double u, double s) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < lam.size(); ++i) {
      double lu2 = lam[i] * u * lam[i] * u;
      double d = 1.0 + lu2;
      acc += lam[i] * (1.0 + b2[i] * std::abs(1.0 - lu2) / d) / d;
    }
    return 0.5 * acc + 0.5 * s;
  }

  // Beyond u_mono(s), theta(., s) is strictly decreasing with slope <= -s/4,
  // so roots of theta = k*pi are at most 4*pi/s apart.
  double u_monotone(double s) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < lam.size(); ++i)
      acc += (1.0 + b2[i]) / lam[i];
    return std::sqrt(2.0 * acc / s);
  }

  // Smallest u in (0, hi] with log_rho(u) >= level, or hi if none.
  double rho_death(double level, double hi) const {
    if (log_rho(hi) < level) return hi;
    double lo = 0.0, up = hi;
    for (int it = 0; it < 120 && up - lo > 1e-12 * up; ++it) {
      double mid = 0.5 * (lo + up);
      (log_rho(mid) < level ? lo : up) = mid;
    }
    return up;
  }

  double find_root(double target, double lo, double s) const {
    double step = 4.0 * M_PI / s;
    double hi = lo + step;
    int guard = 0;
    while (theta(hi, s) > target) {
      lo = hi;
      hi += step;
      if (++guard > 100000)
        throw NumericalError("gchi2 cdf: lobe root bracketing failed");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, hi); ++it) {
      double mid = 0.5 * (lo + hi);
      (theta(mid, s) > target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

// Marches [0, u_hi] in panels of bounded phase traversal, integrating each
// panel adaptively. Returns the integral of the Imhof integrand.
inline double imhof_phase_march(const ImhofContext& ctx, double s, double u_hi,
                                double rate_s, double panel_tol,
                                long max_panels) {
  auto g = [&](double u) { return ctx.integrand(u, s); };
  const double dphi = 1.8;
  double total = 0.0, u = 0.0;
  long panels = 0;
  while (u < u_hi) {
    double du = dphi / std::max(ctx.rate_bound(u, rate_s), 1e-300);
    for (int r = 0; r < 3; ++r) {
      double rmax = std::max({ctx.rate_bound(u, rate_s),
                              ctx.rate_bound(u + 0.5 * du, rate_s),
                              ctx.rate_bound(u + du, rate_s)});
      double du2 = dphi / rmax;
      if (du2 >= du) break;
      du = du2;
    }
    du = std::min(du, u_hi - u);
    total += adaptive_simpson(g, u, u + du, panel_tol);
    u += du;
    if (++panels > max_panels)
      throw NumericalError("gchi2 cdf: phase march exceeded panel budget");
  }
  return total;
}

// Integral over [u_start, inf) of the Imhof integrand, where theta(., s) is
// strictly decreasing: lobe-by-lobe between roots of theta = k*pi, summed as
// an alternating series with van Wijngaarden averaging.
inline double imhof_lobe_tail(const ImhofContext& ctx, double s,
                              double u_start, double lobe_tol,
                              double converge_tol, double* achieved) {
  auto g = [&](double u) { return ctx.integrand(u, s); };
  double total = 0.0;
  long k0 = static_cast<long>(std::floor(ctx.theta(u_start, s) / M_PI));
  double u_k = ctx.find_root(static_cast<double>(k0) * M_PI, u_start, s);
  total += adaptive_simpson(g, u_start, u_k, lobe_tol);

  std::vector<double> table;
  double plain_sum = 0.0, s_prev = 0.0, last_delta = 0.0;
  const int max_lobes = 800;
  for (int j = 0; j < max_lobes; ++j) {
    double u_next =
        ctx.find_root(static_cast<double>(k0 - 1 - j) * M_PI, u_k, s);
    double lobe = adaptive_simpson(g, u_k, u_next, lobe_tol);
    u_k = u_next;
    plain_sum += lobe;
    if (table.empty()) {
      table.push_back(lobe);
    } else {
      std::vector<double> next(table.size() + 1);
      next[0] = table[0] + lobe;
      for (std::size_t i = 1; i <= table.size(); ++i)
        next[i] = 0.5 * (next[i - 1] + table[i - 1]);
      table.swap(next);
    }
    double s_cur = table.back();
    if (std::abs(lobe) < converge_tol) {
      if (achieved) *achieved = std::abs(lobe);
      return total + plain_sum;
    }
    last_delta = std::abs(s_cur - s_prev);
    if (j >= 5 && last_delta < converge_tol && std::abs(lobe) < 1e-3) {
      if (achieved) *achieved = last_delta;
      return total + s_cur;
    }
    s_prev = s_cur;
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "gchi2 cdf: Imhof tail did not converge in %d lobes; achieved "
                "error bound ~%.3e",
                max_lobes, last_delta);
  throw NumericalError(buf);
}

// Phase budget estimate used to apportion the phase-A tolerance.
inline double imhof_phase_budget(const ImhofContext& ctx, double s,
                                 double u_hi) {
  double phi = 0.25 * M_PI * static_cast<double>(ctx.lam.size());
  for (std::size_t i = 0; i < ctx.lam.size(); ++i)
    phi += ctx.b2[i] * std::min(0.5, ctx.lam[i] * u_hi);
  return phi + 0.5 * s * u_hi;
}

// Bernstein-style two-sided concentration for sum_i lam_i * (Z_i + b_i)^2:
// P(X <= mu - 2 sqrt(v tau)) <= exp(-tau) and
// P(X >= mu + 2 sqrt(v tau) + 2 lmax tau) <= exp(-tau),
// from log E exp(t (X - mu)) <= v t^2 / (1 - 2 lmax max(t, 0)).
struct Tails {
  double mu = 0.0, v = 0.0, lmax = 0.0;

  static Tails of(const GChi2& dist) {
    Tails t;
    for (Eigen::Index i = 0; i < dist.weights.size(); ++i) {
      double l = dist.weights(i), b2 = dist.noncentrality(i);
      t.mu += l * (1.0 + b2);
      t.v += l * l * (1.0 + 2.0 * b2);
      t.lmax = std::max(t.lmax, l);
    }
    return t;
  }

  double lower(double tau) const { return mu - 2.0 * std::sqrt(v * tau); }
  double upper(double tau) const {
    return mu + 2.0 * std::sqrt(v * tau) + 2.0 * lmax * tau;
  }
};

// One-sided mass bound sharp enough that clamping to {0, 1} beyond these
// points is invisible at the 1e-9 accuracy target.
constexpr double kTailTau = 45.0;

struct GaussLegendre {
  Eigen::ArrayXd x, w;
};

inline const GaussLegendre& table_quadrature() {
  static const GaussLegendre gl = [] {
    const int n = 12;
    GaussLegendre g;
    g.x.resize(n);
    g.w.resize(n);
    for (int i = 0; i < n; ++i) {
      double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
      double p1 = 0.0, dp = 0.0;
      for (int it = 0; it < 64; ++it) {
        double p0 = 1.0;
        p1 = x;
        for (int k = 2; k <= n; ++k) {
          double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-15) break;
      }
      g.x(i) = x;
      g.w(i) = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return g;
  }();
  return gl;
}

// Shared-node evaluator of the Imhof integral: one panelization of
// [0, u_live] fine enough for every s in (0, s_cap], so that each CDF
// evaluation is a single weighted sine pass over fixed nodes. Used where the
// same distribution's CDF is queried many times (EI quadrature).
class FastCdf {
 public:
  static FastCdf build(const GChi2& dist, double s_cap, long max_panels) {
    FastCdf f;
    f.delta_ = dist.offset;
    if (dist.weights.size() == 0) return f;
    ImhofContext ctx(dist);
    f.s_one_ = Tails::of(dist).upper(kTailTau);
    double s_eff = std::min(s_cap, f.s_one_);
    if (!(s_eff > 0.0)) return f;

    double hi = 1.0;
    int guard = 0;
    while (ctx.log_rho(hi) < 60.0) {
      hi *= 2.0;
      if (++guard > 400) return f;
    }
    double u_live = ctx.rho_death(60.0, hi);
    if (imhof_phase_budget(ctx, s_eff, u_live) / kPanelPhase >
        static_cast<double>(max_panels))
      return f;

    auto rate = [&](double u) {
      return ctx.rate_bound(u, s_eff) + ctx.log_rho_slope(u);
    };
    const GaussLegendre& gl = table_quadrature();
    std::vector<double> us, ws, as;
    double u = 0.0;
    long panels = 0;
    while (u < u_live) {
      double du = kPanelPhase / std::max(rate(u), 1e-300);
      for (int r = 0; r < 3; ++r) {
        double rmax =
            std::max({rate(u), rate(u + 0.5 * du), rate(u + du)});
        double du2 = kPanelPhase / rmax;
        if (du2 >= du) break;
        du = du2;
      }
      du = std::min(du, u_live - u);
      double c = u + 0.5 * du, h = 0.5 * du;
      for (Eigen::Index q = 0; q < gl.x.size(); ++q) {
        double uq = c + h * gl.x(q);
        us.push_back(uq);
        ws.push_back(gl.w(q) * h * std::exp(-ctx.log_rho(uq)) / (uq * M_PI));
        as.push_back(ctx.a_phase(uq));
      }
      u += du;
      if (++panels > max_panels) return f;
    }
    auto wrap = [](std::vector<double>& v) {
      return Eigen::Map<Eigen::ArrayXd>(v.data(),
                                        static_cast<Eigen::Index>(v.size()))
          .eval();
    };
    f.u_ = wrap(us);
    f.w_ = wrap(ws);
    f.a_ = wrap(as);
    f.valid_ = true;
    return f;
  }

  bool valid() const { return valid_; }

  double operator()(double t) const {
    double s = t - delta_;
    if (s <= 1e-12) return 0.0;
    if (s >= s_one_) return 1.0;
    double p = 0.5 - (w_ * (a_ - (0.5 * s) * u_).sin()).sum();
    return std::min(1.0, std::max(0.0, p));
  }

  // Exact antiderivative of the node representation: integrates the CDF in
  // one node pass instead of an adaptive quadrature over many CDF calls.
  double integral(double t_hi) const {
    double s = t_hi - delta_;
    if (s <= 0.0) return 0.0;
    double tail = 0.0;
    if (s > s_one_) {
      tail = s - s_one_;
      s = s_one_;
    }
    double core =
        0.5 * s -
        (w_ * (4.0 / u_) * (a_ - (0.25 * s) * u_).sin() * (0.25 * s * u_).sin())
            .sum();
    return std::min(std::max(core, 0.0), s) + tail;
  }

 private:
  static constexpr double kPanelPhase = 6.0;

  bool valid_ = false;
  double delta_ = 0.0;
  double s_one_ = std::numeric_limits<double>::infinity();
  Eigen::ArrayXd u_, w_, a_;
};

}  // namespace detail

inline double mean(const GChi2& dist) {
  double acc = dist.offset;
  for (Eigen::Index i = 0; i < dist.weights.size(); ++i)
    acc += dist.weights(i) * (1.0 + dist.noncentrality(i));
  return acc;
}

inline double cdf(const GChi2& dist, double t) {
  SIBO_REQUIRE(std::isfinite(t) && t >= 0.0,
               "gchi2 cdf: t must be finite and non-negative");
  if (dist.weights.size() == 0)  // point mass at offset
    return dist.offset - t <= 1e-12 ? 1.0 : 0.0;
  double s = t - dist.offset;
  if (s <= 1e-12) return 0.0;

  detail::Tails tails = detail::Tails::of(dist);
  if (s <= tails.lower(detail::kTailTau)) return 0.0;
  if (s >= tails.upper(detail::kTailTau)) return 1.0;

  const double eps = 1e-9;
  detail::ImhofContext ctx(dist);

  double u_mono = ctx.u_monotone(s);
  double u_live = ctx.rho_death(60.0, u_mono);
  bool dead_tail = u_live < u_mono;

  double budget = detail::imhof_phase_budget(ctx, s, u_live);
  long est_panels = static_cast<long>(std::ceil(budget / 1.8)) + 8;
  double panel_tol = 0.25 * eps / static_cast<double>(est_panels);
  double integral = detail::imhof_phase_march(ctx, s, u_live, s, panel_tol,
                                              100 * est_panels + 10000);
  if (!dead_tail)
    integral +=
        detail::imhof_lobe_tail(ctx, s, u_live, eps / 16.0, eps / 8.0, nullptr);

  double p = 0.5 - integral / M_PI;
  return std::min(1.0, std::max(0.0, p));
}

inline Eigen::VectorXd sample(const GChi2& dist, long n, std::uint64_t seed) {
  SIBO_REQUIRE(n >= 1, "gchi2 sample: n must be positive");
  Rng rng(seed);
  const Eigen::Index k = dist.weights.size();
  Eigen::VectorXd b = dist.noncentrality.cwiseSqrt();
  Eigen::VectorXd out(n);
  for (long i = 0; i < n; ++i) {
    double v = dist.offset;
    for (Eigen::Index j = 0; j < k; ++j) {
      double z = rng.normal() + b(j);
      v += dist.weights(j) * z * z;
    }
    out(i) = v;
  }
  return out;
}

inline GChi2 scale(const GChi2& dist, double c) {
  SIBO_REQUIRE(std::isfinite(c) && c > 0.0,
               "gchi2 scale: factor must be positive");
  GChi2 out = dist;
  out.weights *= c;
  out.offset *= c;
  return out;
}

}  // namespace sibo
