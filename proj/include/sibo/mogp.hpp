#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "sibo/common.hpp"
#include "sibo/kernels.hpp"
#include "sibo/lbfgs.hpp"

namespace sibo {

inline constexpr double kNoiseFloor = 1e-8;

struct Dataset {
  Eigen::MatrixXd inputs;   // N x d
  Eigen::MatrixXd outputs;  // N x M

  void validate() const {
    SIBO_REQUIRE(inputs.rows() == outputs.rows(),
                 "Dataset: inputs and outputs disagree on N");
    SIBO_REQUIRE(inputs.allFinite() && outputs.allFinite(),
                 "Dataset: non-finite entries");
  }

  Eigen::Index size() const { return inputs.rows(); }
};

struct NoiseParams {
  Eigen::VectorXd variances;  // sigma^2 per output

  void validate() const {
    SIBO_REQUIRE(variances.size() >= 1, "NoiseParams: empty");
    SIBO_REQUIRE(variances.allFinite() && variances.minCoeff() > 0.0,
                 "NoiseParams: variances must be positive");
  }

  NoiseParams floored() const {
    NoiseParams out;
    out.variances = variances.cwiseMax(kNoiseFloor);
    return out;
  }
};

struct Hyperparams {
  InputKernelParams kernel;
  CoregionalizationParams coreg;
  NoiseParams noise;
};

struct Posterior {
  Eigen::VectorXd mean;        // mu_{y*}, length M
  Eigen::MatrixXd covariance;  // K_{y*}, M x M symmetric
  bool includes_noise = false;
};

// Immutable after construction; hyperparameters plus the cached Cholesky of
// S = B (x) Kx + Sigma (x) I_N and alpha = S^{-1} y (y stacks the columns of
// outputs, output-major).
struct FittedModel {
  Dataset data;
  InputKernelParams kernel;
  CoregionalizationParams coreg;
  NoiseParams noise;

  Eigen::MatrixXd B;   // M x M coregionalization matrix
  Eigen::MatrixXd Kx;  // N x N input kernel matrix
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd yvec;   // MN
  Eigen::VectorXd alpha;  // MN
  double log_det_half = 0.0;
  double jitter = 0.0;

  Eigen::Index n_points() const { return data.inputs.rows(); }
  Eigen::Index n_outputs() const { return coreg.factor.rows(); }
};

namespace detail {

// Cholesky with an escalating diagonal jitter ladder. Throws NumericalError
// with the smallest eigenvalue after the last rung fails.
inline Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(
    const Eigen::MatrixXd& S, double* jitter_used) {
  double base = S.diagonal().mean();
  double jitter = 0.0;
  for (;;) {
    Eigen::MatrixXd Sj = S;
    if (jitter > 0.0) Sj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(Sj);
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used = jitter;
      return llt;
    }
    if (jitter == 0.0)
      jitter = 1e-10 * base;
    else if (jitter < 1e-4 * base)
      jitter *= 10.0;
    else
      break;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "cholesky_with_jitter: factorization failed at max jitter; "
                "smallest eigenvalue %.6e",
                es.eigenvalues().minCoeff());
  throw NumericalError(buf);
}

inline Eigen::VectorXd stack_outputs(const Eigen::MatrixXd& Y) {
  Eigen::VectorXd y(Y.rows() * Y.cols());
  for (Eigen::Index m = 0; m < Y.cols(); ++m)
    y.segment(m * Y.rows(), Y.rows()) = Y.col(m);
  return y;
}

}  // namespace detail

inline FittedModel make_model(const Dataset& data, const Hyperparams& hp) {
  data.validate();
  hp.kernel.validate();
  hp.coreg.validate();
  hp.noise.validate();
  const Eigen::Index M = hp.coreg.factor.rows();
  SIBO_REQUIRE(data.outputs.cols() == M || data.size() == 0,
               "make_model: output dimension disagrees with coregionalization");
  SIBO_REQUIRE(hp.noise.variances.size() == M,
               "make_model: noise dimension disagrees with coregionalization");

  FittedModel model;
  model.data = data;
  model.kernel = hp.kernel;
  model.coreg = hp.coreg;
  model.noise = hp.noise.floored();
  model.B = coregionalization(hp.coreg);

  const Eigen::Index N = data.size();
  if (N == 0) return model;

  model.Kx = input_kernel_matrix(data.inputs, data.inputs, hp.kernel);
  Eigen::MatrixXd S = joint_covariance(model.B, model.Kx).matrix;
  for (Eigen::Index m = 0; m < M; ++m)
    S.diagonal().segment(m * N, N).array() += model.noise.variances(m);

  model.llt = detail::cholesky_with_jitter(S, &model.jitter);
  model.yvec = detail::stack_outputs(data.outputs);
  model.alpha = model.llt.solve(model.yvec);
  model.log_det_half =
      model.llt.matrixLLT().diagonal().array().log().sum();
  return model;
}

inline double log_marginal_likelihood(const FittedModel& model) {
  SIBO_REQUIRE(model.n_points() >= 1,
               "log_marginal_likelihood: needs at least one observation");
  double mn = static_cast<double>(model.yvec.size());
  return -0.5 * model.yvec.dot(model.alpha) - model.log_det_half -
         0.5 * mn * std::log(2.0 * M_PI);
}

struct HyperGrad {
  double d_log_variance = 0.0;
  double d_log_lengthscale = 0.0;
  Eigen::MatrixXd d_factor;  // M x r
  double d_log_kappa = 0.0;
  Eigen::VectorXd d_log_noise;  // M
};

// Analytic gradient of the log marginal likelihood in the log/linear
// parametrization used by fit: d LML / d theta = tr(A dS/dtheta) / 2 with
// A = alpha alpha^T - S^{-1}.
inline HyperGrad lml_gradient(const FittedModel& model) {
  SIBO_REQUIRE(model.n_points() >= 1,
               "lml_gradient: needs at least one observation");
  const Eigen::Index N = model.n_points(), M = model.n_outputs();
  const Eigen::Index MN = M * N;

  Eigen::MatrixXd A =
      model.llt.solve(Eigen::MatrixXd::Identity(MN, MN));
  A = (model.alpha * model.alpha.transpose() - A).eval();

  // squared input distances, for the lengthscale direction
  const double l2 = model.kernel.lengthscale * model.kernel.lengthscale;
  Eigen::MatrixXd E(N, N);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < N; ++j)
      E(i, j) = model.Kx(i, j) *
                (model.data.inputs.row(i) - model.data.inputs.row(j))
                    .squaredNorm() /
                l2;

  Eigen::MatrixXd TK(M, M), TE(M, M);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index mp = 0; mp < M; ++mp) {
      auto block = A.block(m * N, mp * N, N, N);
      TK(m, mp) = block.cwiseProduct(model.Kx).sum();
      TE(m, mp) = block.cwiseProduct(E).sum();
    }

  HyperGrad g;
  g.d_log_variance = 0.5 * model.B.cwiseProduct(TK).sum();
  g.d_log_lengthscale = 0.5 * model.B.cwiseProduct(TE).sum();
  g.d_factor = TK * model.coreg.factor;
  g.d_log_kappa = 0.5 * model.coreg.kappa * TK.trace();
  g.d_log_noise.resize(M);
  for (Eigen::Index m = 0; m < M; ++m)
    g.d_log_noise(m) = 0.5 * model.noise.variances(m) *
                       A.block(m * N, m * N, N, N).trace();
  return g;
}

struct FitOptions {
  int n_starts = 5;
  int max_iters = 60;
  double grad_tol = 1e-5;
  double bound_lo = -6.0;  // log-space box for variance/lengthscale/kappa/noise
  double bound_hi = 6.0;
  bool fix_noise = false;
  std::uint64_t seed = 0;
};

namespace detail {

struct ParamPacking {
  Eigen::Index M, r;
  bool fix_noise;

  Eigen::Index size() const { return 3 + M * r + (fix_noise ? 0 : M); }

  Eigen::VectorXd pack(const Hyperparams& hp) const {
    Eigen::VectorXd p(size());
    p(0) = std::log(hp.kernel.variance);
    p(1) = std::log(hp.kernel.lengthscale);
    for (Eigen::Index q = 0; q < r; ++q)
      for (Eigen::Index m = 0; m < M; ++m)
        p(2 + q * M + m) = hp.coreg.factor(m, q);
    p(2 + M * r) = std::log(std::max(hp.coreg.kappa, 1e-300));
    if (!fix_noise)
      for (Eigen::Index m = 0; m < M; ++m)
        p(3 + M * r + m) = std::log(hp.noise.variances(m));
    return p;
  }

  Hyperparams unpack(const Eigen::VectorXd& p,
                     const Hyperparams& base) const {
    Hyperparams hp = base;
    hp.kernel.variance = std::exp(p(0));
    hp.kernel.lengthscale = std::exp(p(1));
    hp.coreg.factor.resize(M, r);
    for (Eigen::Index q = 0; q < r; ++q)
      for (Eigen::Index m = 0; m < M; ++m)
        hp.coreg.factor(m, q) = p(2 + q * M + m);
    hp.coreg.kappa = std::exp(p(2 + M * r));
    if (!fix_noise) {
      hp.noise.variances.resize(M);
      for (Eigen::Index m = 0; m < M; ++m)
        hp.noise.variances(m) = std::exp(p(3 + M * r + m));
    }
    return hp;
  }

  Eigen::VectorXd pack_grad(const HyperGrad& g) const {
    Eigen::VectorXd out(size());
    out(0) = g.d_log_variance;
    out(1) = g.d_log_lengthscale;
    for (Eigen::Index q = 0; q < r; ++q)
      for (Eigen::Index m = 0; m < M; ++m)
        out(2 + q * M + m) = g.d_factor(m, q);
    out(2 + M * r) = g.d_log_kappa;
    if (!fix_noise)
      for (Eigen::Index m = 0; m < M; ++m)
        out(3 + M * r + m) = g.d_log_noise(m);
    return out;
  }

  void bounds(double lo_v, double hi_v, Eigen::VectorXd& lo,
              Eigen::VectorXd& hi) const {
    const double inf = std::numeric_limits<double>::infinity();
    lo = Eigen::VectorXd::Constant(size(), lo_v);
    hi = Eigen::VectorXd::Constant(size(), hi_v);
    for (Eigen::Index i = 2; i < 2 + M * r; ++i) {  // factor: unconstrained
      lo(i) = -inf;
      hi(i) = inf;
    }
  }
};

}  // namespace detail

// Multi-start bounded maximization of the log marginal likelihood. The
// returned model's objective is never below the objective at init (minus
// round-off), because init is always the first start and line searches only
// accept decreases of the negated objective.
inline FittedModel fit(const Dataset& data, const Hyperparams& init,
                       const FitOptions& opts = {}) {
  SIBO_REQUIRE(data.size() >= 1, "fit: needs at least one observation");
  detail::ParamPacking packing{init.coreg.factor.rows(),
                               init.coreg.factor.cols(), opts.fix_noise};

  auto fg = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
    Hyperparams hp = packing.unpack(p, init);
    FittedModel model = make_model(data, hp);
    grad = -packing.pack_grad(lml_gradient(model));
    return -log_marginal_likelihood(model);
  };

  Eigen::VectorXd lo, hi;
  packing.bounds(opts.bound_lo, opts.bound_hi, lo, hi);
  Eigen::VectorXd p_init = packing.pack(init);
  for (Eigen::Index i = 0; i < p_init.size(); ++i)
    p_init(i) = std::min(hi(i), std::max(lo(i), p_init(i)));

  LbfgsOptions lopts;
  lopts.max_iters = opts.max_iters;
  lopts.grad_tol = opts.grad_tol;

  Rng rng(derive_seed(opts.seed, 0x9d5ull));
  bool have_best = false;
  double best_f = 0.0;
  Eigen::VectorXd best_p;
  std::string last_error = "fit: no starts attempted";
  for (int start = 0; start < std::max(1, opts.n_starts); ++start) {
    Eigen::VectorXd p0 = p_init;
    if (start > 0) {
      for (Eigen::Index i = 0; i < p0.size(); ++i) {
        bool is_factor = i >= 2 && i < 2 + packing.M * packing.r;
        p0(i) += (is_factor ? 0.8 : 1.5) * rng.normal();
        p0(i) = std::min(hi(i), std::max(lo(i), p0(i)));
      }
    }
    try {
      LbfgsResult res = lbfgs_minimize(fg, p0, lo, hi, lopts);
      if (!have_best || res.f < best_f) {
        have_best = true;
        best_f = res.f;
        best_p = res.x;
      }
    } catch (const NumericalError& err) {
      last_error = err.what();
    }
  }
  if (!have_best)
    throw NumericalError(std::string("fit: all starts failed: ") + last_error);
  return make_model(data, packing.unpack(best_p, init));
}

// Cross-covariance K_{f*} between test point rows and the training stack,
// as an (M*P) x (M*N) matrix of vertically stacked per-candidate blocks.
namespace detail {
inline Eigen::MatrixXd cross_blocks(const FittedModel& model,
                                    const Eigen::MatrixXd& Xstar) {
  const Eigen::Index N = model.n_points(), M = model.n_outputs();
  const Eigen::Index P = Xstar.rows();
  Eigen::MatrixXd kxs =
      input_kernel_matrix(Xstar, model.data.inputs, model.kernel);  // P x N
  Eigen::MatrixXd R(M * P, M * N);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index mp = 0; mp < M; ++mp)
      for (Eigen::Index p = 0; p < P; ++p)
        R.block(p * M + m, mp * N, 1, N) = model.B(m, mp) * kxs.row(p);
  return R;
}
}  // namespace detail

inline std::vector<Posterior> predict_batch(const FittedModel& model,
                                            const Eigen::MatrixXd& Xstar,
                                            bool include_noise) {
  SIBO_REQUIRE(Xstar.allFinite(), "predict: non-finite test input");
  const Eigen::Index M = model.n_outputs(), P = Xstar.rows();
  const double kss = model.kernel.variance;  // k(x*, x*) for any x*

  std::vector<Posterior> out(static_cast<std::size_t>(P));
  if (model.n_points() == 0) {
    for (auto& post : out) {
      post.mean = Eigen::VectorXd::Zero(M);
      post.covariance = kss * model.B;
      if (include_noise)
        post.covariance.diagonal() += model.noise.variances;
      post.includes_noise = include_noise;
    }
    return out;
  }
  SIBO_REQUIRE(Xstar.cols() == model.data.inputs.cols(),
               "predict: test input dimension mismatch");

  Eigen::MatrixXd R = detail::cross_blocks(model, Xstar);  // (MP) x (MN)
  Eigen::MatrixXd V = model.llt.solve(R.transpose());      // (MN) x (MP)
  Eigen::VectorXd means = R * model.alpha;                  // (MP)
  for (Eigen::Index p = 0; p < P; ++p) {
    Posterior& post = out[static_cast<std::size_t>(p)];
    post.mean = means.segment(p * M, M);
    Eigen::MatrixXd cross =
        R.middleRows(p * M, M) * V.middleCols(p * M, M);  // M x M
    post.covariance = kss * model.B - cross;
    post.covariance =
        (0.5 * (post.covariance + post.covariance.transpose())).eval();
    if (include_noise) post.covariance.diagonal() += model.noise.variances;
    post.includes_noise = include_noise;
  }
  return out;
}

inline Posterior predict(const FittedModel& model,
                         const Eigen::VectorXd& x_star, bool include_noise) {
  return predict_batch(model, x_star.transpose(), include_noise)[0];
}

// Predictive means only (no covariance solve); row p is mu_{y*} at Xstar row p.
inline Eigen::MatrixXd predict_means(const FittedModel& model,
                                     const Eigen::MatrixXd& Xstar) {
  const Eigen::Index M = model.n_outputs(), P = Xstar.rows();
  if (model.n_points() == 0) return Eigen::MatrixXd::Zero(P, M);
  Eigen::VectorXd means = detail::cross_blocks(model, Xstar) * model.alpha;
  Eigen::MatrixXd out(P, M);
  for (Eigen::Index p = 0; p < P; ++p)
    out.row(p) = means.segment(p * M, M).transpose();
  return out;
}

// Data-driven starting point for fit: unit kernel variance, lengthscale from
// the input spread, factor column from per-output standard deviations.
inline Hyperparams default_init(const Dataset& data, Eigen::Index M,
                                Eigen::Index rank = 1) {
  Hyperparams hp;
  hp.kernel.variance = 1.0;
  hp.kernel.lengthscale = 1.0;
  if (data.size() >= 2) {
    Eigen::RowVectorXd mu = data.inputs.colwise().mean();
    double spread = std::sqrt((data.inputs.rowwise() - mu).squaredNorm() /
                              static_cast<double>(data.inputs.rows()));
    if (spread > 1e-8) hp.kernel.lengthscale = spread;
  }
  hp.coreg.factor = Eigen::MatrixXd::Zero(M, rank);
  Eigen::VectorXd s = Eigen::VectorXd::Ones(M);
  if (data.size() >= 2) {
    for (Eigen::Index m = 0; m < M; ++m) {
      double mean = data.outputs.col(m).mean();
      double var = (data.outputs.col(m).array() - mean).square().mean();
      s(m) = std::sqrt(std::max(var, 1e-4));
    }
  }
  hp.coreg.factor.col(0) = 0.9 * s;
  hp.coreg.kappa = std::max(0.1 * s.array().square().mean(), 1e-4);
  hp.noise.variances = (0.05 * s.array().square()).cwiseMax(1e-6).matrix();
  return hp;
}

}  // namespace sibo
