#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <utility>
#include <vector>

#include "sibo/common.hpp"

namespace sibo {

struct LbfgsOptions {
  int max_iters = 60;
  int memory = 8;
  double grad_tol = 1e-5;  // sup-norm of the projected gradient
  double f_tol = 1e-12;    // relative objective decrease per iteration
  int max_line_steps = 25;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iters = 0;
  bool converged = false;
};

// Minimizes fg over the box [lo, hi] (entries may be +-infinity) starting
// from x0. fg(x, grad) returns the objective and fills grad. Evaluations
// that throw NumericalError during the line search act as infinite barriers;
// a throw at x0 propagates. Accepted iterates decrease monotonically, so the
// result is never worse than the start.
template <typename FG>
LbfgsResult lbfgs_minimize(FG&& fg, Eigen::VectorXd x0,
                           const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                           const LbfgsOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  auto project = [&](Eigen::VectorXd v) {
    for (Eigen::Index i = 0; i < n; ++i)
      v(i) = std::min(hi(i), std::max(lo(i), v(i)));
    return v;
  };

  Eigen::VectorXd x = project(std::move(x0));
  Eigen::VectorXd g(n), g_new(n);
  double f = fg(x, g);

  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs;  // (s, y)
  LbfgsResult res;
  res.x = x;
  res.f = f;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    // projected gradient: zero out components pushing against active bounds
    double pg_norm = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double gi = g(i);
      if (x(i) <= lo(i) && gi > 0.0) gi = 0.0;
      if (x(i) >= hi(i) && gi < 0.0) gi = 0.0;
      pg_norm = std::max(pg_norm, std::abs(gi));
    }
    if (pg_norm < opts.grad_tol) {
      res.converged = true;
      break;
    }

    // two-loop recursion
    Eigen::VectorXd d = -g;
    if (!pairs.empty()) {
      std::vector<double> alpha_coef(pairs.size());
      for (std::size_t k = pairs.size(); k-- > 0;) {
        const auto& [s, y] = pairs[k];
        double rho = 1.0 / s.dot(y);
        alpha_coef[k] = rho * s.dot(d);
        d -= alpha_coef[k] * y;
      }
      const auto& [s_last, y_last] = pairs.back();
      d *= s_last.dot(y_last) / y_last.squaredNorm();
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto& [s, y] = pairs[k];
        double rho = 1.0 / s.dot(y);
        double beta = rho * y.dot(d);
        d += (alpha_coef[k] - beta) * s;
      }
    }
    if (d.dot(g) >= -1e-12 * d.norm() * g.norm()) d = -g;  // ensure descent

    // projected Armijo backtracking
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = f;
    for (int ls = 0; ls < opts.max_line_steps; ++ls) {
      x_new = project(x + step * d);
      Eigen::VectorXd dx = x_new - x;
      if (dx.cwiseAbs().maxCoeff() == 0.0) break;
      bool ok = true;
      try {
        f_new = fg(x_new, g_new);
      } catch (const NumericalError&) {
        ok = false;
      }
      if (ok && f_new <= f + 1e-4 * g.dot(dx)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = g_new - g;
    if (s.dot(y) > 1e-10 * s.norm() * y.norm()) {
      pairs.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(pairs.size()) > opts.memory) pairs.pop_front();
    }

    double drop = f - f_new;
    x = std::move(x_new);
    g = g_new;
    f = f_new;
    res.x = x;
    res.f = f;
    res.iters = iter + 1;
    if (drop <= opts.f_tol * std::max(1.0, std::abs(f))) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace sibo
