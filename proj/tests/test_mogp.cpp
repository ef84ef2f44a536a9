#include <catch2/catch_amalgamated.hpp>

#include "sibo/mogp.hpp"
#include "test_util.hpp"

using namespace sibo;
using testutil::random_matrix;
using testutil::random_vector;

namespace {

Hyperparams small_hp(sibo::Rng& rng, Eigen::Index M, Eigen::Index r = 1) {
  Hyperparams hp;
  hp.kernel.variance = 0.5 + rng.uniform();
  hp.kernel.lengthscale = 0.6 + rng.uniform();
  hp.coreg.factor = random_matrix(rng, M, r, -1.0, 1.0);
  hp.coreg.kappa = 0.1 + 0.3 * rng.uniform();
  hp.noise.variances =
      testutil::random_vector(rng, M, 0.01, 0.2);
  return hp;
}

Dataset make_data(sibo::Rng& rng, Eigen::Index N, Eigen::Index d,
                    Eigen::Index M) {
  Dataset data;
  data.inputs = random_matrix(rng, N, d, -2.0, 2.0);
  data.outputs = random_matrix(rng, N, M, -1.5, 1.5);
  return data;
}

// From-scratch dense construction of S = B (x) Kx + Sigma (x) I using scalar
// loops only, independent of the library's assembly path.
Eigen::MatrixXd dense_S(const Dataset& data, const Hyperparams& hp) {
  const Eigen::Index N = data.size();
  const Eigen::Index M = hp.coreg.factor.rows();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(M, M);
  for (Eigen::Index a = 0; a < M; ++a)
    for (Eigen::Index b = 0; b < M; ++b) {
      for (Eigen::Index q = 0; q < hp.coreg.factor.cols(); ++q)
        B(a, b) += hp.coreg.factor(a, q) * hp.coreg.factor(b, q);
      if (a == b) B(a, b) += hp.coreg.kappa;
    }
  Eigen::MatrixXd S(M * N, M * N);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index mp = 0; mp < M; ++mp)
      for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j) {
          double sq = (data.inputs.row(i) - data.inputs.row(j)).squaredNorm();
          double k = hp.kernel.variance *
                     std::exp(-sq / (2.0 * hp.kernel.lengthscale *
                                     hp.kernel.lengthscale));
          double v = B(m, mp) * k;
          if (m == mp && i == j) v += hp.noise.variances(m);
          S(m * N + i, mp * N + j) = v;
        }
  return S;
}

Eigen::VectorXd stack_cols(const Eigen::MatrixXd& Y) {
  Eigen::VectorXd y(Y.size());
  for (Eigen::Index m = 0; m < Y.cols(); ++m)
    y.segment(m * Y.rows(), Y.rows()) = Y.col(m);
  return y;
}

}  // namespace

TEST_CASE("log marginal likelihood closed forms at N=1") {
  Dataset data;
  data.inputs = Eigen::MatrixXd::Zero(1, 1);
  data.outputs = Eigen::MatrixXd::Zero(1, 1);
  Hyperparams hp;
  hp.kernel = {0.7, 1.0};
  hp.coreg.factor = Eigen::MatrixXd::Ones(1, 1);
  hp.coreg.kappa = 0.0;
  hp.noise.variances = Eigen::VectorXd::Constant(1, 0.3);

  double lml = log_marginal_likelihood(make_model(data, hp));
  CHECK(lml == Catch::Approx(-0.5 * std::log(2.0 * M_PI * 1.0)).margin(1e-12));

  data.outputs(0, 0) = 1.0;
  hp.kernel.variance = 0.5;
  hp.noise.variances(0) = 0.5;
  lml = log_marginal_likelihood(make_model(data, hp));
  CHECK(lml ==
        Catch::Approx(-0.5 - 0.5 * std::log(2.0 * M_PI)).margin(1e-12));
  CHECK(lml == Catch::Approx(-1.41894).margin(1e-5));
}

TEST_CASE("log marginal likelihood matches dense oracle") {
  Rng rng(8);
  for (int rep = 0; rep < 8; ++rep) {
    Dataset data = make_data(rng, 3, 2, 2);
    Hyperparams hp = small_hp(rng, 2);
    double lml = log_marginal_likelihood(make_model(data, hp));

    Eigen::MatrixXd S = dense_S(data, hp);
    Eigen::VectorXd y = stack_cols(data.outputs);
    Eigen::MatrixXd Sinv = S.inverse();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    double logdet = es.eigenvalues().array().log().sum();
    double ref = -0.5 * y.dot(Sinv * y) - 0.5 * logdet -
                 0.5 * static_cast<double>(y.size()) * std::log(2.0 * M_PI);
    CHECK(lml == Catch::Approx(ref).margin(1e-8));
  }
}

TEST_CASE("predict with no data returns the prior") {
  Hyperparams hp;
  hp.kernel = {1.3, 0.9};
  hp.coreg.factor = Eigen::MatrixXd::Ones(2, 1);
  hp.coreg.kappa = 0.5;
  hp.noise.variances = Eigen::VectorXd::Constant(2, 0.01);
  Dataset empty;
  empty.inputs.resize(0, 1);
  empty.outputs.resize(0, 2);

  FittedModel model = make_model(empty, hp);
  Posterior post = predict(model, Eigen::VectorXd::Constant(1, 0.4), false);
  CHECK(post.mean.cwiseAbs().maxCoeff() == 0.0);
  Eigen::MatrixXd prior = 1.3 * coregionalization(hp.coreg);
  CHECK((post.covariance - prior).cwiseAbs().maxCoeff() < 1e-12);

  Posterior noisy = predict(model, Eigen::VectorXd::Constant(1, 0.4), true);
  CHECK((noisy.covariance - post.covariance).diagonal().isApprox(
      hp.noise.variances, 1e-12));
}

TEST_CASE("predict nearly interpolates at the noise floor") {
  Rng rng(17);
  Dataset data;
  data.inputs = Eigen::VectorXd::LinSpaced(5, -2.0, 2.0);
  data.outputs = random_matrix(rng, 5, 2, -1.0, 1.0);
  Hyperparams hp;
  hp.kernel = {1.0, 0.8};
  hp.coreg.factor = random_matrix(rng, 2, 1, 0.5, 1.5);
  hp.coreg.kappa = 0.4;
  hp.noise.variances = Eigen::VectorXd::Constant(2, 1e-8);

  FittedModel model = make_model(data, hp);
  for (int i = 0; i < 5; ++i) {
    Posterior post =
        predict(model, data.inputs.row(i).transpose(), false);
    CHECK((post.mean - data.outputs.row(i).transpose()).cwiseAbs().maxCoeff() <
          1e-3);
  }
}

TEST_CASE("predict matches dense Gaussian conditioning oracle") {
  Rng rng(29);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index N = 4, M = 3, d = 2;
    Dataset data = make_data(rng, N, d, M);
    Hyperparams hp = small_hp(rng, M);
    Eigen::VectorXd xs = random_vector(rng, d);

    FittedModel model = make_model(data, hp);
    Posterior post = predict(model, xs, false);

    // independent conditioning: explicit inverse of the scalar-assembled S
    Eigen::MatrixXd S = dense_S(data, hp);
    Eigen::MatrixXd B = coregionalization(hp.coreg);
    Eigen::MatrixXd Kfy(M, M * N);
    for (Eigen::Index m = 0; m < M; ++m)
      for (Eigen::Index mp = 0; mp < M; ++mp)
        for (Eigen::Index j = 0; j < N; ++j) {
          double sq = (xs.transpose() - data.inputs.row(j)).squaredNorm();
          double k = hp.kernel.variance *
                     std::exp(-sq / (2.0 * hp.kernel.lengthscale *
                                     hp.kernel.lengthscale));
          Kfy(m, mp * N + j) = B(m, mp) * k;
        }
    Eigen::MatrixXd Sinv = S.inverse();
    Eigen::VectorXd y = stack_cols(data.outputs);
    Eigen::VectorXd mean_ref = Kfy * Sinv * y;
    Eigen::MatrixXd cov_ref =
        hp.kernel.variance * B - Kfy * Sinv * Kfy.transpose();

    CHECK((post.mean - mean_ref).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((post.covariance - cov_ref).cwiseAbs().maxCoeff() < 1e-8);

    Posterior noisy = predict(model, xs, true);
    CHECK((noisy.covariance.diagonal() - post.covariance.diagonal() -
           hp.noise.variances.cwiseMax(kNoiseFloor))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
}

TEST_CASE("posterior covariance is symmetric with bounded variance") {
  Rng rng(31);
  for (int rep = 0; rep < 10; ++rep) {
    Dataset data = make_data(rng, 6, 1, 3);
    Hyperparams hp = small_hp(rng, 3);
    FittedModel model = make_model(data, hp);
    Posterior post = predict(model, random_vector(rng, 1), true);

    CHECK((post.covariance - post.covariance.transpose())
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(post.covariance);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);

    Eigen::VectorXd prior_diag =
        hp.kernel.variance * coregionalization(hp.coreg).diagonal() +
        hp.noise.variances;
    CHECK(((post.covariance.diagonal() - prior_diag).array() <= 1e-9).all());
  }
}

TEST_CASE("identity coregionalization degenerates to independent GPs") {
  Rng rng(37);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index N = 5, M = 3;
    Dataset data = make_data(rng, N, 1, M);
    Hyperparams hp;
    hp.kernel = {0.8 + rng.uniform(), 0.7 + rng.uniform()};
    hp.coreg.factor = Eigen::MatrixXd::Zero(M, 1);
    hp.coreg.kappa = 1.0;
    hp.noise.variances = testutil::random_vector(rng, M, 0.01, 0.1);

    FittedModel model = make_model(data, hp);
    Eigen::VectorXd xs = random_vector(rng, 1);
    Posterior post = predict(model, xs, false);

    // per-output single-output GP, solved independently
    Eigen::MatrixXd Kx = input_kernel_matrix(data.inputs, data.inputs,
                                             hp.kernel);
    Eigen::MatrixXd ks = input_kernel_matrix(
        xs.transpose(), data.inputs, hp.kernel);  // 1 x N
    for (Eigen::Index m = 0; m < M; ++m) {
      Eigen::MatrixXd Km = Kx;
      Km.diagonal().array() += hp.noise.variances(m);
      Eigen::VectorXd w = Km.inverse() * data.outputs.col(m);
      double mean_m = (ks * w)(0);
      double var_m =
          hp.kernel.variance - (ks * Km.inverse() * ks.transpose())(0);
      CHECK(post.mean(m) == Catch::Approx(mean_m).margin(1e-8));
      CHECK(post.covariance(m, m) == Catch::Approx(var_m).margin(1e-8));
    }
  }
}

TEST_CASE("duplicated observation never increases posterior variance") {
  Rng rng(41);
  Dataset data = make_data(rng, 5, 1, 2);
  Hyperparams hp = small_hp(rng, 2);

  Dataset more = data;
  more.inputs.conservativeResize(6, 1);
  more.outputs.conservativeResize(6, 2);
  more.inputs.row(5) = data.inputs.row(0);
  more.outputs.row(5) = data.outputs.row(0);

  FittedModel base = make_model(data, hp);
  FittedModel dup = make_model(more, hp);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd xs = random_vector(rng, 1, -3.0, 3.0);
    Eigen::VectorXd v0 = predict(base, xs, false).covariance.diagonal();
    Eigen::VectorXd v1 = predict(dup, xs, false).covariance.diagonal();
    CHECK(((v1 - v0).array() <= 1e-9).all());
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(43);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index N = 2 + static_cast<Eigen::Index>(rng.uniform_int(4));
    const Eigen::Index M = 1 + static_cast<Eigen::Index>(rng.uniform_int(3));
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_int(2));
    Dataset data = make_data(rng, N, d, M);
    Hyperparams hp = small_hp(rng, M);

    detail::ParamPacking packing{M, 1, false};
    Eigen::VectorXd p = packing.pack(hp);
    FittedModel model = make_model(data, hp);
    Eigen::VectorXd grad = packing.pack_grad(lml_gradient(model));

    const double h = 1e-5;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      Eigen::VectorXd pp = p, pm = p;
      pp(i) += h;
      pm(i) -= h;
      double fp = log_marginal_likelihood(
          make_model(data, packing.unpack(pp, hp)));
      double fm = log_marginal_likelihood(
          make_model(data, packing.unpack(pm, hp)));
      double fd = (fp - fm) / (2.0 * h);
      double rel = std::abs(grad(i) - fd) / std::max(std::abs(fd), 1e-6);
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("fit handles a single data point") {
  Rng rng(47);
  Dataset data = make_data(rng, 1, 1, 2);
  Hyperparams init = default_init(data, 2);
  FitOptions opts;
  opts.n_starts = 2;
  opts.max_iters = 20;
  FittedModel model = fit(data, init, opts);
  CHECK(std::isfinite(log_marginal_likelihood(model)));
}

TEST_CASE("fit never degrades the initial objective") {
  Rng rng(53);
  for (int rep = 0; rep < 5; ++rep) {
    Dataset data = make_data(rng, 6, 1, 2);
    Hyperparams init = small_hp(rng, 2);
    double before = log_marginal_likelihood(make_model(data, init));
    FitOptions opts;
    opts.n_starts = 3;
    opts.max_iters = 30;
    opts.seed = 1000 + static_cast<std::uint64_t>(rep);
    FittedModel model = fit(data, init, opts);
    CHECK(log_marginal_likelihood(model) >= before - 1e-12);
  }
}

TEST_CASE("refitting from the fitted optimum barely moves the objective") {
  Rng rng(59);
  Dataset data = make_data(rng, 7, 1, 2);
  FitOptions opts;
  opts.n_starts = 3;
  opts.max_iters = 400;
  FittedModel first = fit(data, default_init(data, 2), opts);
  double f1 = log_marginal_likelihood(first);

  Hyperparams warm{first.kernel, first.coreg, first.noise};
  FitOptions once = opts;
  once.n_starts = 1;
  double f2 = log_marginal_likelihood(fit(data, warm, once));
  CHECK(f2 >= f1 - 1e-12);
  CHECK(std::abs(f2 - f1) < 1e-6 * std::max(1.0, std::abs(f1)));
}

TEST_CASE("fit recovers the lengthscale bracket on synthetic draws") {
  Rng rng(61);
  double log_sum = 0.0;
  const int draws = 20;
  for (int rep = 0; rep < draws; ++rep) {
    const Eigen::Index N = 12, M = 2;
    Dataset data;
    data.inputs = random_matrix(rng, N, 1, -3.0, 3.0);

    Hyperparams truth;
    truth.kernel = {1.0, 1.0};
    truth.coreg.factor = Eigen::MatrixXd(M, 1);
    truth.coreg.factor << 1.0, 0.8;
    truth.coreg.kappa = 0.1;
    truth.noise.variances = Eigen::VectorXd::Constant(M, 1e-4);

    Eigen::MatrixXd S = dense_S(data, truth);
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    REQUIRE(llt.info() == Eigen::Success);
    Eigen::VectorXd z(M * N);
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    Eigen::VectorXd y = Eigen::MatrixXd(llt.matrixL()) * z;
    data.outputs.resize(N, M);
    for (Eigen::Index m = 0; m < M; ++m)
      data.outputs.col(m) = y.segment(m * N, N);

    FitOptions opts;
    opts.n_starts = 3;
    opts.max_iters = 50;
    opts.seed = static_cast<std::uint64_t>(rep);
    FittedModel model = fit(data, default_init(data, M), opts);
    log_sum += std::log(model.kernel.lengthscale);
  }
  double geo_mean = std::exp(log_sum / draws);
  CHECK(geo_mean > 0.3);
  CHECK(geo_mean < 3.0);
}

TEST_CASE("fit with fixed noise keeps the noise parameters") {
  Rng rng(67);
  Dataset data = make_data(rng, 5, 1, 2);
  Hyperparams init = small_hp(rng, 2);
  FitOptions opts;
  opts.n_starts = 2;
  opts.max_iters = 25;
  opts.fix_noise = true;
  FittedModel model = fit(data, init, opts);
  CHECK(model.noise.variances == init.noise.variances.cwiseMax(kNoiseFloor));
}

TEST_CASE("make_model validates dimensions") {
  Rng rng(71);
  Dataset data = make_data(rng, 3, 1, 2);
  Hyperparams hp = small_hp(rng, 3);  // M mismatch
  CHECK_THROWS_AS(make_model(data, hp), InvalidArgument);

  Hyperparams ok = small_hp(rng, 2);
  ok.noise.variances = Eigen::VectorXd::Constant(3, 0.1);
  CHECK_THROWS_AS(make_model(data, ok), InvalidArgument);
}

TEST_CASE("predict_batch agrees with single predictions") {
  Rng rng(73);
  Dataset data = make_data(rng, 5, 2, 2);
  Hyperparams hp = small_hp(rng, 2);
  FittedModel model = make_model(data, hp);
  Eigen::MatrixXd Xs = random_matrix(rng, 7, 2);

  auto batch = predict_batch(model, Xs, true);
  Eigen::MatrixXd means = predict_means(model, Xs);
  REQUIRE(batch.size() == 7);
  for (int p = 0; p < 7; ++p) {
    Posterior single = predict(model, Xs.row(p).transpose(), true);
    CHECK((batch[p].mean - single.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((batch[p].covariance - single.covariance).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((means.row(p).transpose() - single.mean).cwiseAbs().maxCoeff() <
          1e-12);
  }
}
