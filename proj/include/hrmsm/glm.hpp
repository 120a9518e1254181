#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hrmsm/errors.hpp"

namespace hrmsm {

enum class GlmFamily { gaussian_identity, bernoulli_logit, binomial_logit, multinomial_logit };

std::string to_string(GlmFamily f);

// Weighted maximum-likelihood problem. Responses live in the column that
// matches the family: `y` for gaussian/bernoulli, (`y`, `trials`) events and
// trials for binomial, `labels` with `n_levels` for multinomial.
struct GlmProblem {
  Eigen::MatrixXd X;
  Eigen::VectorXd weights;
  GlmFamily family = GlmFamily::gaussian_identity;
  Eigen::VectorXd y;
  Eigen::VectorXd trials;
  std::vector<int> labels;
  int n_levels = 0;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
  void validate() const;
};

struct GlmControls {
  int max_iter = 100;
  double tol = 1e-8;       // max-norm of the weighted score
  double ridge = 1e-10;    // added to the normal equations for rank protection; 0 disables
};

struct GlmFit {
  // p x 1, or p x (n_levels-1) for multinomial (column c: level c+1 against
  // the first level, which is the baseline category).
  Eigen::MatrixXd beta;
  bool converged = false;
  int iterations = 0;
  double dispersion = 0.0;  // gaussian residual variance (weighted MLE)
  double score_norm = 0.0;
  bool separation_suspect = false;
  bool rank_deficient = false;
};

// Iteratively reweighted least squares (damped Newton for the multinomial).
// Gaussian solves in one step. Non-convergence is flagged on the returned
// fit, not thrown.
GlmFit glm_fit(const GlmProblem& problem, const GlmControls& controls = {});

// Weighted score sum_i w_i x_i (y_i - mu_i(beta)), stacked level-wise for the
// multinomial family.
Eigen::VectorXd glm_score(const GlmProblem& problem, const Eigen::MatrixXd& beta);

// Log-likelihood up to response-only constants (the quantity whose gradient
// is the score; gaussian uses -1/2 sum w (y-mu)^2).
double glm_log_likelihood(const GlmProblem& problem, const Eigen::MatrixXd& beta);

// Per-level probabilities of a multinomial fit at covariate vector x.
std::vector<double> multinomial_probs(const Eigen::MatrixXd& beta, const Eigen::VectorXd& x);

// Streaming weighted least squares: accumulates the normal equations row by
// row so large simulated designs never need materializing.
class NormalEq {
 public:
  explicit NormalEq(int p)
      : xtx_(Eigen::MatrixXd::Zero(p, p)), xty_(Eigen::VectorXd::Zero(p)) {}

  void add(const double* row, double y, double w = 1.0) {
    const Eigen::Index p = xty_.size();
    for (Eigen::Index a = 0; a < p; ++a) {
      const double wa = w * row[a];
      for (Eigen::Index b = 0; b <= a; ++b) xtx_(a, b) += wa * row[b];
      xty_(a) += wa * y;
    }
    yy_ += w * y * y;
    wsum_ += w;
    ++n_;
  }

  void merge(const NormalEq& other) {
    xtx_ += other.xtx_;
    xty_ += other.xty_;
    yy_ += other.yy_;
    wsum_ += other.wsum_;
    n_ += other.n_;
  }

  Eigen::VectorXd solve(double ridge = 1e-10) const;
  long n() const { return n_; }
  double weight_sum() const { return wsum_; }

 private:
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xty_;
  double yy_ = 0.0;
  double wsum_ = 0.0;
  long n_ = 0;
};

}  // namespace hrmsm
