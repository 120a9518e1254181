#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hrmsm/design.hpp"
#include "hrmsm/features.hpp"
#include "hrmsm/glm.hpp"
#include "hrmsm/panel.hpp"
#include "hrmsm/simulation.hpp"
#include "hrmsm/treatment.hpp"

namespace hrmsm {

// Declared transition model for one time-varying variable.
struct QChannelSpec {
  std::string name;
  GlmFamily family = GlmFamily::gaussian_identity;
  FeatureSpec features;
};

// Covariate channels must be declared in slice order (the panel's column
// order); the outcome is always the last variable of a slice.
struct QSpec {
  std::vector<QChannelSpec> channels;
  QChannelSpec outcome;

  void validate(const PanelMeta& meta) const;
};

// Fitted covariate/outcome transition laws plus the empirical baseline law.
class QModel {
 public:
  struct ChannelFit {
    QChannelSpec spec;
    CompiledFeatures compiled;
    GlmFit fit;
    bool degenerate = false;   // constant response, kept as a point mass
    double point_mass = 0.0;
    double resid_sd = 0.0;     // gaussian channels
  };

  const PanelMeta& meta() const { return meta_; }
  int K() const { return K_; }
  const std::vector<ChannelFit>& channels() const { return channels_; }
  const ChannelFit& outcome() const { return outcome_; }
  const std::vector<std::vector<double>>& baseline_pool() const { return baseline_pool_; }
  const TimeFnRegistry& registry() const { return registry_; }
  const std::vector<std::vector<long>>& trials_pool() const { return trials_pool_; }

 private:
  friend QModel fit_q(const PanelDataset&, const QSpec&, const TimeFnRegistry&);
  PanelMeta meta_;
  TimeFnRegistry registry_;
  int K_ = 0;
  std::vector<ChannelFit> channels_;
  ChannelFit outcome_;
  std::vector<std::vector<double>> baseline_pool_;
  std::vector<std::vector<long>> trials_pool_;  // counts outcome: observed N per time
};

// Pooled-over-time fits, one per declared variable. Constant channels are
// flagged degenerate and kept as point masses.
QModel fit_q(const PanelDataset& data, const QSpec& qspec, const TimeFnRegistry& registry);

// Trajectory sampler backed by fitted (Q, g): baseline resampled from the
// observed L(0) pool, covariates/outcome from the Q fits, treatments from the
// fitted mechanism. Counts outcomes resample their trial counts from the
// per-time observed pool (the denominator process is treated as exogenous).
class FittedLaw final : public TrajectoryLaw {
 public:
  FittedLaw(const QModel& q, const TreatmentModel& g);

  const PanelMeta& law_meta() const override { return q_->meta(); }
  int K() const override { return q_->K(); }
  void draw_baseline(SeqData& seq, Rng& rng) const override;
  void draw_slice(SeqData& seq, int j, Rng& rng) const override;
  void draw_treatment(SeqData& seq, int j, Rng& rng) const override;
  std::vector<double> treatment_probs(const SeqData& seq, int j) const override;

 private:
  const QModel* q_;
  const TreatmentModel* g_;
};

struct EstimateReport {
  std::string estimator;
  MsmMode mode = MsmMode::pooled;
  MsmLink link = MsmLink::identity;
  std::vector<std::string> term_names;
  Eigen::VectorXd beta;                                  // pooled estimate
  std::vector<std::pair<int, Eigen::VectorXd>> beta_by_t;  // stratified estimates
  long n_units = 0;
  long n_obs = 0;
  bool converged = true;
  std::vector<std::string> warnings;
  long monte_carlo_draws = 0;
  std::uint64_t seed = 0;
  // Weight diagnostics (IPTW / DR).
  bool has_weights = false;
  WeightStyle weight_style = WeightStyle::unstabilized;
  double w_min = 0, w_max = 0, w_mean = 0, w_q99 = 0;
  long w_clamp_events = 0;
  double effective_sample_size = 0;
};

// Weighted regression of Y(t+1) on the design rows over all target times
// (the pooled IPTW estimating equation; h = dm/dbeta times the optional
// stabilization numerator).
EstimateReport iptw_pooled(const PanelDataset& data, const MsmSpec& msm,
                           const TimeFnRegistry& registry, const TreatmentModel& gmodel,
                           WeightStyle style = WeightStyle::unstabilized,
                           std::optional<Truncation> truncation = std::nullopt);

// Separate weighted regression at one target time.
EstimateReport iptw_stratified(const PanelDataset& data, const MsmSpec& msm,
                               const TimeFnRegistry& registry, const TreatmentModel& gmodel, int t,
                               WeightStyle style = WeightStyle::unstabilized,
                               std::optional<Truncation> truncation = std::nullopt);

// All stratified fits collected into one report.
EstimateReport iptw_stratified_all(const PanelDataset& data, const MsmSpec& msm,
                                   const TimeFnRegistry& registry, const TreatmentModel& gmodel,
                                   WeightStyle style = WeightStyle::unstabilized,
                                   std::optional<Truncation> truncation = std::nullopt);

// Unweighted associational regression on the same design; biased under
// time-dependent confounding and kept as a diagnostic contrast.
EstimateReport naive_regression(const PanelDataset& data, const MsmSpec& msm,
                                const TimeFnRegistry& registry);

// Monte Carlo G-computation: counterfactual records simulated under the
// fitted laws (pre-window treatments drawn from the fitted g), then one
// unweighted regression of the simulated outcomes on the MSM design.
EstimateReport gcomp_estimate(const PanelDataset& data, const MsmSpec& msm,
                              const TimeFnRegistry& registry, const QModel& qmodel,
                              const TreatmentModel& gmodel, const RegimenGrid& grid, long draws,
                              std::uint64_t seed, int threads = 1);

// Double robust estimator (identity link): the IPTW estimating function
// augmented by per-window-step projections
//   E[D | A-bar(j), L-bar(j)] - E[D | A-bar(j-1), L-bar(j)],
// each approximated by `m_aug` forward completions under the fitted (Q, g).
// The estimating equation is affine in beta and solved directly.
EstimateReport dr_estimate(const PanelDataset& data, const MsmSpec& msm,
                           const TimeFnRegistry& registry, const QModel& qmodel,
                           const TreatmentModel& gmodel, long m_aug, std::uint64_t seed,
                           int threads = 1);

}  // namespace hrmsm
