#include "hrmsm/glm.hpp"

#include <cmath>

namespace hrmsm {

std::string to_string(GlmFamily f) {
  switch (f) {
    case GlmFamily::gaussian_identity: return "gaussian_identity";
    case GlmFamily::bernoulli_logit: return "bernoulli_logit";
    case GlmFamily::binomial_logit: return "binomial_logit";
    case GlmFamily::multinomial_logit: return "multinomial_logit";
  }
  return "?";
}

void GlmProblem::validate() const {
  const auto nr = X.rows();
  if (weights.size() != nr) throw ValidationError("glm: weights length mismatch");
  if (family == GlmFamily::multinomial_logit) {
    if (static_cast<Eigen::Index>(labels.size()) != nr)
      throw ValidationError("glm: labels length mismatch");
    if (n_levels < 2) throw ValidationError("glm: multinomial needs n_levels >= 2");
    for (int l : labels)
      if (l < 0 || l >= n_levels) throw ValidationError("glm: label outside 0..n_levels-1");
  } else {
    if (y.size() != nr) throw ValidationError("glm: response length mismatch");
  }
  if (family == GlmFamily::binomial_logit && trials.size() != nr)
    throw ValidationError("glm: binomial needs a trials column");
  Eigen::Index positive = 0;
  for (Eigen::Index i = 0; i < nr; ++i) {
    const double w = weights(i);
    if (!std::isfinite(w) || w < 0.0) throw ValidationError("glm: weights must be finite and >= 0");
    if (w > 0.0) ++positive;
  }
  if (positive < X.cols())
    throw ValidationError("glm: fewer positive-weight observations (" + std::to_string(positive) +
                          ") than coefficients (" + std::to_string(X.cols()) + ")");
}

namespace {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Effective bernoulli/binomial mean and trial count per row.
inline double row_trials(const GlmProblem& pr, Eigen::Index i) {
  return pr.family == GlmFamily::binomial_logit ? pr.trials(i) : 1.0;
}

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, double ridge,
                          bool* rank_flag) {
  Eigen::MatrixXd hr = h;
  if (ridge > 0.0) hr.diagonal().array() += ridge;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hr);
  const auto& ev = es.eigenvalues();
  const double emax = ev.cwiseAbs().maxCoeff();
  if (!(emax > 0.0) || ev.minCoeff() <= emax * 1e-14) {
    if (rank_flag != nullptr) *rank_flag = true;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(hr);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("glm: normal equations factorization failed");
  return ldlt.solve(g);
}

bool separation_check(const Eigen::MatrixXd& X, const Eigen::MatrixXd& beta) {
  // Diverging coefficients on standardized columns signal (near-)separation.
  const double n = static_cast<double>(X.rows());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).mean();
    const double sd = std::sqrt((X.col(j).array() - mean).square().sum() / std::max(n - 1.0, 1.0));
    const double scale = sd > 1e-12 ? sd : 1.0;
    for (Eigen::Index c = 0; c < beta.cols(); ++c) {
      if (std::abs(beta(j, c)) * scale > 30.0) return true;
    }
  }
  return false;
}

void accumulate_xtwx(Eigen::MatrixXd& xtx, const Eigen::MatrixXd& X, Eigen::Index i, double w) {
  const Eigen::Index p = X.cols();
  for (Eigen::Index a = 0; a < p; ++a) {
    const double wa = w * X(i, a);
    for (Eigen::Index b = 0; b <= a; ++b) xtx(a, b) += wa * X(i, b);
  }
}

GlmFit fit_gaussian(const GlmProblem& pr, const GlmControls& ctl) {
  GlmFit fit;
  const Eigen::Index p = pr.p();
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
  for (Eigen::Index i = 0; i < pr.n(); ++i) {
    const double w = pr.weights(i);
    if (w == 0.0) continue;
    accumulate_xtwx(xtx, pr.X, i, w);
    xty += w * pr.y(i) * pr.X.row(i).transpose();
  }
  xtx = xtx.selfadjointView<Eigen::Lower>();
  fit.beta = solve_spd(xtx, xty, ctl.ridge, &fit.rank_deficient);
  double rss = 0.0, wsum = 0.0;
  for (Eigen::Index i = 0; i < pr.n(); ++i) {
    const double r = pr.y(i) - pr.X.row(i).dot(fit.beta.col(0));
    rss += pr.weights(i) * r * r;
    wsum += pr.weights(i);
  }
  fit.dispersion = wsum > 0.0 ? rss / wsum : 0.0;
  fit.iterations = 1;
  fit.score_norm = glm_score(pr, fit.beta).cwiseAbs().maxCoeff();
  fit.converged = true;
  return fit;
}

GlmFit fit_logistic(const GlmProblem& pr, const GlmControls& ctl) {
  GlmFit fit;
  const Eigen::Index p = pr.p();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double ll = glm_log_likelihood(pr, beta);
  for (int iter = 1; iter <= ctl.max_iter; ++iter) {
    fit.iterations = iter;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < pr.n(); ++i) {
      const double w = pr.weights(i);
      if (w == 0.0) continue;
      const double mu = sigmoid(pr.X.row(i).dot(beta));
      const double nt = row_trials(pr, i);
      grad += w * (pr.y(i) - nt * mu) * pr.X.row(i).transpose();
      accumulate_xtwx(hess, pr.X, i, w * nt * mu * (1.0 - mu));
    }
    hess = hess.selfadjointView<Eigen::Lower>();
    fit.score_norm = grad.cwiseAbs().maxCoeff();
    if (fit.score_norm < ctl.tol) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd step = solve_spd(hess, grad, ctl.ridge, &fit.rank_deficient);
    // Step-halving when the likelihood does not improve.
    double scale = 1.0;
    for (int h = 0; h < 30; ++h) {
      const Eigen::VectorXd cand = beta + scale * step;
      const double cand_ll = glm_log_likelihood(pr, cand);
      if (cand_ll >= ll - 1e-12 * (1.0 + std::abs(ll))) {
        beta = cand;
        ll = cand_ll;
        break;
      }
      scale *= 0.5;
      if (h == 29) beta += scale * step;
    }
  }
  fit.beta = beta;
  if (!fit.converged) fit.score_norm = glm_score(pr, fit.beta).cwiseAbs().maxCoeff();
  fit.separation_suspect = separation_check(pr.X, fit.beta);
  return fit;
}

GlmFit fit_multinomial(const GlmProblem& pr, const GlmControls& ctl) {
  GlmFit fit;
  const Eigen::Index p = pr.p();
  const int m = pr.n_levels - 1;  // non-baseline levels
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(p, m);
  double ll = glm_log_likelihood(pr, beta);
  std::vector<double> probs(static_cast<std::size_t>(pr.n_levels));
  for (int iter = 1; iter <= ctl.max_iter; ++iter) {
    fit.iterations = iter;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p * m);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(p * m, p * m);
    for (Eigen::Index i = 0; i < pr.n(); ++i) {
      const double w = pr.weights(i);
      if (w == 0.0) continue;
      const Eigen::VectorXd x = pr.X.row(i).transpose();
      // softmax over (0, x'b_1, ..., x'b_m)
      double denom = 1.0;
      for (int c = 0; c < m; ++c) {
        probs[static_cast<std::size_t>(c) + 1] = std::exp(std::min(x.dot(beta.col(c)), 700.0));
        denom += probs[static_cast<std::size_t>(c) + 1];
      }
      for (int c = 0; c < m; ++c) probs[static_cast<std::size_t>(c) + 1] /= denom;
      const int label = pr.labels[static_cast<std::size_t>(i)];
      for (int c = 0; c < m; ++c) {
        const double resid = (label == c + 1 ? 1.0 : 0.0) - probs[static_cast<std::size_t>(c) + 1];
        grad.segment(c * p, p) += w * resid * x;
        for (int d = 0; d <= c; ++d) {
          const double pc = probs[static_cast<std::size_t>(c) + 1];
          const double pd = probs[static_cast<std::size_t>(d) + 1];
          const double v = w * (c == d ? pc * (1.0 - pc) : -pc * pd);
          hess.block(c * p, d * p, p, p) += v * x * x.transpose();
        }
      }
    }
    for (int c = 0; c < m; ++c)
      for (int d = c + 1; d < m; ++d)
        hess.block(c * p, d * p, p, p) = hess.block(d * p, c * p, p, p).transpose();
    fit.score_norm = grad.cwiseAbs().maxCoeff();
    if (fit.score_norm < ctl.tol) {
      fit.converged = true;
      break;
    }
    const Eigen::VectorXd step = solve_spd(hess, grad, ctl.ridge, &fit.rank_deficient);
    double scale = 1.0;
    for (int h = 0; h < 30; ++h) {
      Eigen::MatrixXd cand = beta;
      for (int c = 0; c < m; ++c) cand.col(c) += scale * step.segment(c * p, p);
      const double cand_ll = glm_log_likelihood(pr, cand);
      if (cand_ll >= ll - 1e-12 * (1.0 + std::abs(ll))) {
        beta = cand;
        ll = cand_ll;
        break;
      }
      scale *= 0.5;
      if (h == 29)
        for (int c = 0; c < m; ++c) beta.col(c) += scale * step.segment(c * p, p);
    }
  }
  fit.beta = beta;
  if (!fit.converged) fit.score_norm = glm_score(pr, fit.beta).cwiseAbs().maxCoeff();
  fit.separation_suspect = separation_check(pr.X, fit.beta);
  return fit;
}

}  // namespace

double glm_log_likelihood(const GlmProblem& pr, const Eigen::MatrixXd& beta) {
  double ll = 0.0;
  switch (pr.family) {
    case GlmFamily::gaussian_identity:
      for (Eigen::Index i = 0; i < pr.n(); ++i) {
        const double r = pr.y(i) - pr.X.row(i).dot(beta.col(0));
        ll -= 0.5 * pr.weights(i) * r * r;
      }
      break;
    case GlmFamily::bernoulli_logit:
    case GlmFamily::binomial_logit:
      for (Eigen::Index i = 0; i < pr.n(); ++i) {
        const double eta = pr.X.row(i).dot(beta.col(0));
        const double nt = row_trials(pr, i);
        // y*eta - n*log(1+exp(eta)), with a stable log1p form.
        const double log1pe = eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
        ll += pr.weights(i) * (pr.y(i) * eta - nt * log1pe);
      }
      break;
    case GlmFamily::multinomial_logit: {
      const int m = pr.n_levels - 1;
      for (Eigen::Index i = 0; i < pr.n(); ++i) {
        const Eigen::VectorXd x = pr.X.row(i).transpose();
        double denom = 1.0;
        double chosen = 0.0;
        const int label = pr.labels[static_cast<std::size_t>(i)];
        for (int c = 0; c < m; ++c) {
          const double eta = std::min(x.dot(beta.col(c)), 700.0);
          denom += std::exp(eta);
          if (label == c + 1) chosen = eta;
        }
        ll += pr.weights(i) * (chosen - std::log(denom));
      }
      break;
    }
  }
  return ll;
}

Eigen::VectorXd glm_score(const GlmProblem& pr, const Eigen::MatrixXd& beta) {
  const Eigen::Index p = pr.p();
  switch (pr.family) {
    case GlmFamily::gaussian_identity: {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(p);
      for (Eigen::Index i = 0; i < pr.n(); ++i)
        s += pr.weights(i) * (pr.y(i) - pr.X.row(i).dot(beta.col(0))) * pr.X.row(i).transpose();
      return s;
    }
    case GlmFamily::bernoulli_logit:
    case GlmFamily::binomial_logit: {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(p);
      for (Eigen::Index i = 0; i < pr.n(); ++i) {
        const double mu = sigmoid(pr.X.row(i).dot(beta.col(0)));
        s += pr.weights(i) * (pr.y(i) - row_trials(pr, i) * mu) * pr.X.row(i).transpose();
      }
      return s;
    }
    case GlmFamily::multinomial_logit: {
      const int m = pr.n_levels - 1;
      Eigen::VectorXd s = Eigen::VectorXd::Zero(p * m);
      std::vector<double> e(static_cast<std::size_t>(m));
      for (Eigen::Index i = 0; i < pr.n(); ++i) {
        const Eigen::VectorXd x = pr.X.row(i).transpose();
        double denom = 1.0;
        for (int c = 0; c < m; ++c) {
          e[static_cast<std::size_t>(c)] = std::exp(std::min(x.dot(beta.col(c)), 700.0));
          denom += e[static_cast<std::size_t>(c)];
        }
        const int label = pr.labels[static_cast<std::size_t>(i)];
        for (int c = 0; c < m; ++c) {
          const double resid = (label == c + 1 ? 1.0 : 0.0) - e[static_cast<std::size_t>(c)] / denom;
          s.segment(c * p, p) += pr.weights(i) * resid * x;
        }
      }
      return s;
    }
  }
  throw NumericalError("glm: unknown family");
}

GlmFit glm_fit(const GlmProblem& problem, const GlmControls& controls) {
  problem.validate();
  switch (problem.family) {
    case GlmFamily::gaussian_identity: return fit_gaussian(problem, controls);
    case GlmFamily::bernoulli_logit:
    case GlmFamily::binomial_logit: return fit_logistic(problem, controls);
    case GlmFamily::multinomial_logit: return fit_multinomial(problem, controls);
  }
  throw NumericalError("glm: unknown family");
}

std::vector<double> multinomial_probs(const Eigen::MatrixXd& beta, const Eigen::VectorXd& x) {
  const int m = static_cast<int>(beta.cols());
  std::vector<double> probs(static_cast<std::size_t>(m) + 1);
  double denom = 1.0;
  probs[0] = 1.0;
  for (int c = 0; c < m; ++c) {
    probs[static_cast<std::size_t>(c) + 1] = std::exp(std::min(x.dot(beta.col(c)), 700.0));
    denom += probs[static_cast<std::size_t>(c) + 1];
  }
  for (auto& v : probs) v /= denom;
  return probs;
}

Eigen::VectorXd NormalEq::solve(double ridge) const {
  if (n_ < xty_.size())
    throw NumericalError("least squares: fewer rows than coefficients");
  Eigen::MatrixXd xtx = xtx_.selfadjointView<Eigen::Lower>();
  bool rank_flag = false;
  Eigen::VectorXd beta = solve_spd(xtx, xty_, ridge, &rank_flag);
  if (rank_flag) throw NumericalError("least squares: rank-deficient design");
  return beta;
}

}  // namespace hrmsm
