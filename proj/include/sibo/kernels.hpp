#pragma once

#include <Eigen/Dense>

#include "sibo/common.hpp"

namespace sibo {

struct InputKernelParams {
  double variance = 1.0;     // output scale of k
  double lengthscale = 1.0;  // input metric scale

  void validate() const {
    SIBO_REQUIRE(std::isfinite(variance) && variance > 0.0,
                 "InputKernelParams: variance must be positive");
    SIBO_REQUIRE(std::isfinite(lengthscale) && lengthscale > 0.0,
                 "InputKernelParams: lengthscale must be positive");
  }
};

struct CoregionalizationParams {
  Eigen::MatrixXd factor;  // M x r low-rank factor L
  double kappa = 0.0;      // diagonal inflation

  void validate() const {
    SIBO_REQUIRE(factor.rows() >= 1 && factor.cols() >= 1,
                 "CoregionalizationParams: factor must be M x r with r >= 1");
    SIBO_REQUIRE(factor.allFinite(),
                 "CoregionalizationParams: factor has non-finite entries");
    SIBO_REQUIRE(std::isfinite(kappa) && kappa >= 0.0,
                 "CoregionalizationParams: kappa must be non-negative");
  }

  Eigen::Index outputs() const { return factor.rows(); }
};

struct JointCovariance {
  Eigen::MatrixXd matrix;  // MN x MN, blocks B(m,m') * Kx
};

inline double eval_input_kernel(const Eigen::VectorXd& x,
                                const Eigen::VectorXd& x2,
                                const InputKernelParams& p) {
  p.validate();
  SIBO_REQUIRE(x.size() == x2.size(), "eval_input_kernel: dimension mismatch");
  SIBO_REQUIRE(x.allFinite() && x2.allFinite(),
               "eval_input_kernel: non-finite input");
  double sq = (x - x2).squaredNorm();
  return p.variance * std::exp(-sq / (2.0 * p.lengthscale * p.lengthscale));
}

inline Eigen::MatrixXd input_kernel_matrix(const Eigen::MatrixXd& X,
                                           const Eigen::MatrixXd& X2,
                                           const InputKernelParams& p) {
  p.validate();
  SIBO_REQUIRE(X.cols() == X2.cols(),
               "input_kernel_matrix: input dimension mismatch");
  SIBO_REQUIRE(X.allFinite() && X2.allFinite(),
               "input_kernel_matrix: non-finite input");
  const double inv_two_l2 = 1.0 / (2.0 * p.lengthscale * p.lengthscale);
  Eigen::MatrixXd K(X.rows(), X2.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X2.rows(); ++j)
      K(i, j) = p.variance *
                std::exp(-(X.row(i) - X2.row(j)).squaredNorm() * inv_two_l2);
  return K;
}

inline Eigen::MatrixXd coregionalization(const CoregionalizationParams& p) {
  p.validate();
  Eigen::MatrixXd B = p.factor * p.factor.transpose();
  B.diagonal().array() += p.kappa;
  // enforce exact symmetry against round-off in the outer product
  B = ((B + B.transpose()) * 0.5).eval();
  return B;
}

inline JointCovariance joint_covariance(const Eigen::MatrixXd& B,
                                        const Eigen::MatrixXd& Kx) {
  SIBO_REQUIRE(B.rows() == B.cols(), "joint_covariance: B must be square");
  SIBO_REQUIRE(Kx.rows() == Kx.cols(), "joint_covariance: Kx must be square");
  SIBO_REQUIRE((B - B.transpose()).cwiseAbs().maxCoeff() <= 1e-10,
               "joint_covariance: B is asymmetric beyond tolerance");
  SIBO_REQUIRE((Kx - Kx.transpose()).cwiseAbs().maxCoeff() <= 1e-10,
               "joint_covariance: Kx is asymmetric beyond tolerance");
  const Eigen::Index M = B.rows(), N = Kx.rows();
  JointCovariance out;
  out.matrix.resize(M * N, M * N);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index mp = 0; mp < M; ++mp)
      out.matrix.block(m * N, mp * N, N, N) = B(m, mp) * Kx;
  return out;
}

}  // namespace sibo
