#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "hrmsm/glm.hpp"
#include "hrmsm/rng.hpp"

using namespace hrmsm;
using namespace hrmsm::testing;

namespace {

GlmProblem gaussian_line() {
  GlmProblem pr;
  pr.family = GlmFamily::gaussian_identity;
  pr.X.resize(3, 2);
  pr.X << 1, 0, 1, 1, 1, 2;
  pr.y = vec({1, 3, 5});
  pr.weights = Eigen::VectorXd::Ones(3);
  return pr;
}

// Central finite differences of the log-likelihood.
Eigen::VectorXd fd_gradient(const GlmProblem& pr, const Eigen::MatrixXd& beta) {
  const Eigen::Index p = beta.rows();
  const Eigen::Index m = beta.cols();
  Eigen::VectorXd grad(p * m);
  const double h = 1e-5;
  for (Eigen::Index c = 0; c < m; ++c) {
    for (Eigen::Index k = 0; k < p; ++k) {
      Eigen::MatrixXd up = beta, dn = beta;
      up(k, c) += h;
      dn(k, c) -= h;
      grad(c * p + k) = (glm_log_likelihood(pr, up) - glm_log_likelihood(pr, dn)) / (2 * h);
    }
  }
  return grad;
}

void check_fd(const GlmProblem& pr, const Eigen::MatrixXd& beta) {
  const Eigen::VectorXd s = glm_score(pr, beta);
  const Eigen::VectorXd fd = fd_gradient(pr, beta);
  REQUIRE(s.size() == fd.size());
  for (Eigen::Index k = 0; k < s.size(); ++k)
    CHECK(std::abs(s(k) - fd(k)) <= 1e-5 * std::max(1.0, std::abs(fd(k))));
}

}  // namespace

TEST_CASE("gaussian: exact line") {
  const GlmFit fit = glm_fit(gaussian_line());
  CHECK(fit.converged);
  CHECK(fit.beta(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fit.beta(1, 0) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(fit.dispersion == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("bernoulli: closed-form intercept at 25% ones") {
  GlmProblem pr;
  pr.family = GlmFamily::bernoulli_logit;
  const int n = 400;
  pr.X = Eigen::MatrixXd::Ones(n, 1);
  pr.y.resize(n);
  for (int i = 0; i < n; ++i) pr.y(i) = i < n / 4 ? 1.0 : 0.0;
  pr.weights = Eigen::VectorXd::Ones(n);
  const GlmFit fit = glm_fit(pr);
  CHECK(fit.converged);
  CHECK(fit.beta(0, 0) == doctest::Approx(std::log(0.25 / 0.75)).epsilon(1e-6));
}

TEST_CASE("binomial: recovers the generating coefficients within 3 analytic SE") {
  Rng rng(404);
  const int n = 5000;
  const Eigen::VectorXd truth = vec({-1.2, 0.7});
  GlmProblem pr;
  pr.family = GlmFamily::binomial_logit;
  pr.X.resize(n, 2);
  pr.y.resize(n);
  pr.trials.resize(n);
  pr.weights = Eigen::VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    pr.X(i, 0) = 1.0;
    pr.X(i, 1) = x;
    const long trials = 5 + static_cast<long>(rng.uniform_index(20));
    const double p = 1.0 / (1.0 + std::exp(-(truth(0) + truth(1) * x)));
    pr.trials(i) = static_cast<double>(trials);
    pr.y(i) = static_cast<double>(rng.binomial(trials, p));
  }
  const GlmFit fit = glm_fit(pr);
  REQUIRE(fit.converged);
  // Fisher information at the truth is the SE oracle.
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < n; ++i) {
    const double eta = pr.X.row(i).dot(truth);
    const double p = 1.0 / (1.0 + std::exp(-eta));
    info += pr.trials(i) * p * (1 - p) * pr.X.row(i).transpose() * pr.X.row(i);
  }
  const Eigen::MatrixXd cov = info.inverse();
  for (int k = 0; k < 2; ++k)
    CHECK(std::abs(fit.beta(k, 0) - truth(k)) <= 3.0 * std::sqrt(cov(k, k)));
}

TEST_CASE("score is near zero at the fitted solution") {
  const GlmFit fit = glm_fit(gaussian_line());
  CHECK(glm_score(gaussian_line(), fit.beta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("gaussian score with zero data is zero") {
  GlmProblem pr = gaussian_line();
  pr.y = Eigen::VectorXd::Zero(3);
  const Eigen::VectorXd s = glm_score(pr, Eigen::MatrixXd::Zero(2, 1));
  CHECK(s.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("score equals the finite-difference gradient for every family") {
  Rng rng(777);
  const int n = 60;

  SUBCASE("gaussian") {
    GlmProblem pr;
    pr.family = GlmFamily::gaussian_identity;
    pr.X.resize(n, 3);
    pr.y.resize(n);
    pr.weights.resize(n);
    for (int i = 0; i < n; ++i) {
      pr.X(i, 0) = 1.0;
      pr.X(i, 1) = rng.normal();
      pr.X(i, 2) = rng.normal();
      pr.y(i) = rng.normal(0.5, 2.0);
      pr.weights(i) = 0.2 + rng.uniform01();
    }
    check_fd(pr, vec({0.3, -0.4, 0.1}));
  }
  SUBCASE("bernoulli") {
    GlmProblem pr;
    pr.family = GlmFamily::bernoulli_logit;
    pr.X.resize(n, 2);
    pr.y.resize(n);
    pr.weights.resize(n);
    for (int i = 0; i < n; ++i) {
      pr.X(i, 0) = 1.0;
      pr.X(i, 1) = rng.normal();
      pr.y(i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
      pr.weights(i) = 0.2 + rng.uniform01();
    }
    check_fd(pr, vec({-0.2, 0.6}));
  }
  SUBCASE("binomial") {
    GlmProblem pr;
    pr.family = GlmFamily::binomial_logit;
    pr.X.resize(n, 2);
    pr.y.resize(n);
    pr.trials.resize(n);
    pr.weights.resize(n);
    for (int i = 0; i < n; ++i) {
      pr.X(i, 0) = 1.0;
      pr.X(i, 1) = rng.normal();
      pr.trials(i) = 3 + static_cast<double>(rng.uniform_index(10));
      pr.y(i) = static_cast<double>(rng.binomial(static_cast<long>(pr.trials(i)), 0.3));
      pr.weights(i) = 0.2 + rng.uniform01();
    }
    check_fd(pr, vec({0.1, -0.3}));
  }
  SUBCASE("multinomial") {
    GlmProblem pr;
    pr.family = GlmFamily::multinomial_logit;
    pr.n_levels = 3;
    pr.X.resize(n, 2);
    pr.weights.resize(n);
    for (int i = 0; i < n; ++i) {
      pr.X(i, 0) = 1.0;
      pr.X(i, 1) = rng.normal();
      pr.labels.push_back(static_cast<int>(rng.uniform_index(3)));
      pr.weights(i) = 0.2 + rng.uniform01();
    }
    Eigen::MatrixXd beta(2, 2);
    beta << 0.2, -0.1, -0.4, 0.3;
    check_fd(pr, beta);
  }
}

TEST_CASE("weight scaling leaves the fit unchanged") {
  Rng rng(31);
  GlmProblem pr;
  pr.family = GlmFamily::bernoulli_logit;
  const int n = 300;
  pr.X.resize(n, 2);
  pr.y.resize(n);
  pr.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    pr.X(i, 0) = 1.0;
    pr.X(i, 1) = rng.normal();
    pr.y(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    pr.weights(i) = 0.5 + rng.uniform01();
  }
  const GlmFit a = glm_fit(pr);
  GlmProblem scaled = pr;
  scaled.weights *= 3.7;
  const GlmFit b = glm_fit(scaled);
  CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("duplicating a row equals doubling its weight") {
  GlmProblem pr = gaussian_line();
  pr.y(2) = 4.0;  // make it non-degenerate
  GlmProblem doubled = pr;
  doubled.weights(1) = 2.0;
  GlmProblem duplicated = pr;
  duplicated.X.conservativeResize(4, 2);
  duplicated.X.row(3) = pr.X.row(1);
  duplicated.y.conservativeResize(4);
  duplicated.y(3) = pr.y(1);
  duplicated.weights = Eigen::VectorXd::Ones(4);
  const GlmFit a = glm_fit(doubled);
  const GlmFit b = glm_fit(duplicated);
  CHECK((a.beta - b.beta).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("multinomial: three levels recovered and probabilities sum to one") {
  Rng rng(59);
  const int n = 6000;
  Eigen::MatrixXd truth(2, 2);
  truth << 0.5, -0.5, 1.0, -1.0;  // levels 1 and 2 against baseline 0
  GlmProblem pr;
  pr.family = GlmFamily::multinomial_logit;
  pr.n_levels = 3;
  pr.X.resize(n, 2);
  pr.weights = Eigen::VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    pr.X(i, 0) = 1.0;
    pr.X(i, 1) = rng.normal();
    const Eigen::VectorXd x = pr.X.row(i).transpose();
    const auto probs = multinomial_probs(truth, x);
    pr.labels.push_back(rng.categorical(probs));
  }
  const GlmFit fit = glm_fit(pr);
  REQUIRE(fit.converged);
  CHECK((fit.beta - truth).cwiseAbs().maxCoeff() < 0.15);
  const auto probs = multinomial_probs(fit.beta, vec({1.0, 0.3}));
  double sum = 0.0;
  for (double p : probs) sum += p;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("perfect separation is flagged, not fatal") {
  // Separated with a small margin relative to the column spread, so the
  // diverging slope crosses the standardized threshold.
  GlmProblem pr;
  pr.family = GlmFamily::bernoulli_logit;
  const int n = 40;
  pr.X.resize(n, 2);
  pr.y.resize(n);
  pr.weights = Eigen::VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    double x;
    if (i < 2)
      x = -6.0;
    else if (i < n / 2)
      x = -0.2;
    else if (i < n - 2)
      x = 0.2;
    else
      x = 6.0;
    pr.X(i, 0) = 1.0;
    pr.X(i, 1) = x;
    pr.y(i) = x > 0 ? 1.0 : 0.0;
  }
  const GlmFit fit = glm_fit(pr);
  CHECK(fit.separation_suspect);
  CHECK(std::isfinite(fit.beta(1, 0)));
}

TEST_CASE("fewer positive-weight rows than coefficients is rejected") {
  GlmProblem pr = gaussian_line();
  pr.weights(0) = 0.0;
  pr.weights(1) = 0.0;
  CHECK_THROWS_AS(glm_fit(pr), ValidationError);
}

TEST_CASE("streaming least squares matches the materialized fit") {
  Rng rng(67);
  const int n = 500;
  GlmProblem pr;
  pr.family = GlmFamily::gaussian_identity;
  pr.X.resize(n, 3);
  pr.y.resize(n);
  pr.weights = Eigen::VectorXd::Ones(n);
  NormalEq eq(3);
  for (int i = 0; i < n; ++i) {
    pr.X(i, 0) = 1.0;
    pr.X(i, 1) = rng.normal();
    pr.X(i, 2) = rng.uniform01();
    pr.y(i) = 2.0 * pr.X(i, 1) - 1.0 + rng.normal();
    const double row[3] = {pr.X(i, 0), pr.X(i, 1), pr.X(i, 2)};
    eq.add(row, pr.y(i));
  }
  const GlmFit fit = glm_fit(pr);
  const Eigen::VectorXd beta = eq.solve();
  CHECK((fit.beta.col(0) - beta).cwiseAbs().maxCoeff() < 1e-10);
}
