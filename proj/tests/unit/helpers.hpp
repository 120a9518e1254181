#pragma once

#include <string>
#include <vector>

#include "hrmsm/estimators.hpp"
#include "hrmsm/panel.hpp"
#include "hrmsm/simulation.hpp"

namespace hrmsm::testing {

inline TreatmentLevels binary_levels() {
  return {{"0", "1"}, {0.0, 1.0}};
}

inline FeatureSpec fs(const std::vector<std::string>& terms) {
  return parse_feature_spec(terms);
}

inline Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

// The confounded process used across the statistical tests: one continuous
// confounder w on the treatment->outcome pathway.
//   w(0) ~ N(0,1)
//   w(j) = -0.2 + 0.4 a(j-1) + 0.5 w(j-1) + N(0,1)
//   P(a(j)=1) = expit(0.8 w(j))
//   y(j) = a(j-1) + 0.5 a(j-2) + 0.7 w(j-1) + N(0,1)
// The centering makes E w(j) = 0 and E a(j) = 1/2 at every j, so the
// marginal additive-in-lags model is exactly correct for s = 3 with
//   beta* = (-0.21, 1.0, 0.78, 0.14)  for (const, a_lag:0, a_lag:1, a_lag:2).
inline DgpSpec reference_dgp() {
  DgpSpec dgp;
  dgp.K = 9;
  dgp.levels = binary_levels();
  dgp.baseline = {{"w", DgpBaseline::Law::normal, 0.0, 1.0}};
  DgpChannel w;
  w.name = "w";
  w.family = GlmFamily::gaussian_identity;
  w.sd = 1.0;
  w.features = fs({"const", "a_prev:1", "l:w:1"});
  w.coef = vec({-0.2, 0.4, 0.5});
  dgp.channels = {w};
  dgp.outcome.name = "y";
  dgp.outcome.family = GlmFamily::gaussian_identity;
  dgp.outcome.sd = 1.0;
  dgp.outcome.features = fs({"a_prev:1", "a_prev:2", "l:w:1"});
  dgp.outcome.coef = vec({1.0, 0.5, 0.7});
  dgp.outcome_kind = OutcomeKind::continuous;
  dgp.treatment_features = fs({"l:w:0"});
  dgp.treatment_coef = Eigen::MatrixXd::Constant(1, 1, 0.8);
  return dgp;
}

inline Eigen::VectorXd reference_beta_star() {
  return vec({-0.21, 1.0, 0.78, 0.14});
}

inline MsmSpec reference_msm(int s = 3, int K = 9) {
  MsmSpec msm;
  msm.mode = MsmMode::pooled;
  msm.link = MsmLink::identity;
  msm.terms = parse_msm_terms({"const", "a_lag:0", "a_lag:1", "a_lag:2"});
  msm.window = WindowSpec::all_targets(s, K);
  return msm;
}

inline FeatureSpec reference_g_terms() { return fs({"const", "l:w:0"}); }

inline QSpec reference_qspec(bool wrong = false) {
  QSpec q;
  QChannelSpec w;
  w.name = "w";
  w.family = GlmFamily::gaussian_identity;
  w.features = fs({"const", "a_prev:1", "l:w:1"});
  q.channels = {w};
  q.outcome.name = "y";
  q.outcome.family = GlmFamily::gaussian_identity;
  q.outcome.features =
      wrong ? fs({"const", "a_prev:1", "a_prev:2"}) : fs({"const", "a_prev:1", "a_prev:2", "l:w:1"});
  return q;
}

// Treatment absent from every outcome ancestor: the covariate is a plain
// autoregression and the outcome depends on it alone.
inline DgpSpec null_effect_dgp() {
  DgpSpec dgp = reference_dgp();
  dgp.channels[0].features = fs({"l:w:1"});
  dgp.channels[0].coef = vec({0.5});
  dgp.outcome.features = fs({"l:w:1"});
  dgp.outcome.coef = vec({0.7});
  return dgp;
}

inline DgpSpec randomized_dgp() {
  DgpSpec dgp = reference_dgp();
  dgp.treatment_coef = Eigen::MatrixXd::Constant(1, 1, 0.0);
  return dgp;
}

}  // namespace hrmsm::testing
