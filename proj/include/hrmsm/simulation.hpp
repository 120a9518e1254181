#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hrmsm/design.hpp"
#include "hrmsm/features.hpp"
#include "hrmsm/glm.hpp"
#include "hrmsm/panel.hpp"
#include "hrmsm/rng.hpp"

namespace hrmsm {

// One structural equation: a GLM-form conditional law with true coefficients.
struct DgpChannel {
  std::string name;
  GlmFamily family = GlmFamily::gaussian_identity;
  double sd = 1.0;   // gaussian noise
  long trials = 1;   // binomial outcome: fixed trial count
  FeatureSpec features;
  Eigen::VectorXd coef;
};

struct DgpBaseline {
  enum class Law { normal, bernoulli, constant };
  std::string name;
  Law law = Law::normal;
  double a = 0.0;  // mean / probability / constant value
  double b = 1.0;  // sd (normal)
};

// Structural-equation data-generating process. Equations only reference
// strictly prior variables (or same-slice predecessors in declared order),
// and the treatment law only references observed history, so temporal
// ordering and sequential randomization hold by construction.
struct DgpSpec {
  int K = 1;
  TreatmentLevels levels;
  std::vector<DgpBaseline> baseline;   // one entry per covariate channel, slice order
  std::vector<DgpChannel> channels;    // covariate equations, slice order
  DgpChannel outcome;
  OutcomeKind outcome_kind = OutcomeKind::continuous;
  FeatureSpec treatment_features;
  Eigen::MatrixXd treatment_coef;      // arity x (levels-1)
  TimeFnRegistry registry;

  PanelMeta meta() const;
  void validate() const;
};

// Sampling interface over one longitudinal trajectory; implemented by the
// true structural equations and by fitted (Q, g) nuisance models, so
// G-computation and the oracle run through the same machinery.
class TrajectoryLaw {
 public:
  virtual ~TrajectoryLaw() = default;
  virtual const PanelMeta& law_meta() const = 0;
  virtual int K() const = 0;
  // Fills covariates[0].
  virtual void draw_baseline(SeqData& seq, Rng& rng) const = 0;
  // Draws all covariate channels and the outcome at slice j >= 1.
  virtual void draw_slice(SeqData& seq, int j, Rng& rng) const = 0;
  virtual void draw_treatment(SeqData& seq, int j, Rng& rng) const = 0;
  virtual std::vector<double> treatment_probs(const SeqData& seq, int j) const = 0;
};

// Preallocates a sequence of the right shape (values filled as simulation
// advances).
SeqData make_empty_seq(const PanelMeta& meta, int K);

class DgpLaw final : public TrajectoryLaw {
 public:
  explicit DgpLaw(const DgpSpec& spec);

  const PanelMeta& law_meta() const override { return meta_; }
  int K() const override { return spec_.K; }
  void draw_baseline(SeqData& seq, Rng& rng) const override;
  void draw_slice(SeqData& seq, int j, Rng& rng) const override;
  void draw_treatment(SeqData& seq, int j, Rng& rng) const override;
  std::vector<double> treatment_probs(const SeqData& seq, int j) const override;

  // Single-channel draw with its own stream (channel == n_channels is the
  // outcome); the panel simulator uses this for replayable noise.
  void draw_slice_channel(SeqData& seq, int j, int channel, Rng& rng) const;

  const DgpSpec& spec() const { return spec_; }

  // Exact conditional density (pmf) of the realized value at slice j.
  // `channel` indexes covariate channels; channel == n_channels means the
  // outcome. The `via_view` variants assemble the conditioning features
  // through a t-specific view instead of the raw sequence.
  double channel_density(const SeqData& seq, int channel, int j) const;
  double channel_density_via_view(const TView& view, int channel, int j) const;
  std::vector<double> treatment_probs_via_view(const TView& view, int j) const;

  // Feature rows used by the theorem checks that refit g both ways.
  void treatment_row(const SeqData& seq, int j, double* out) const;
  void treatment_row_via_view(const TView& view, int j, double* out) const;
  std::size_t treatment_arity() const { return compiled_treatment_.arity(); }

 private:
  double channel_lp(int channel, const SeqData& seq, int j) const;

  DgpSpec spec_;
  PanelMeta meta_;
  std::vector<CompiledFeatures> compiled_channels_;
  CompiledFeatures compiled_outcome_;
  CompiledFeatures compiled_treatment_;
};

// n i.i.d. units drawn sequentially L(0), A(0), L(1), ..., A(K), L(K+1).
// Each (unit, slice, channel) draw has its own derived stream, so
// re-simulation with forced treatments replays identical noise.
PanelDataset simulate_panel(const DgpSpec& dgp, long n, std::uint64_t seed);

// Counterfactual trajectory of one panel unit under forced treatment levels
// (entry -1 keeps the natural draw), sharing the panel's noise streams.
SeqData simulate_unit(const DgpSpec& dgp, std::uint64_t seed, long unit_index,
                      const std::vector<int>& forced_treatments);

// ---------------------------------------------------------------------------
// Counterfactual record engine shared by G-computation and the oracle.
//
// Per replicate: one natural trajectory (baseline + treatments drawn from the
// law's g) supplies the shared pre-window segment; at each target t the
// trajectory splits per grid regimen, window treatments are set, and the
// window segment is drawn forward to Y(t+1). Records carry the MSM design
// row and outcome.
using CfRecordSink = std::function<void(int t, int regimen_index, const double* design_row,
                                        double y, long events, long trials)>;

void simulate_cf_chunk(const TrajectoryLaw& law, const MsmSpec& msm, const TimeFnRegistry& registry,
                       const RegimenGrid& grid, long m_lo, long m_hi, std::uint64_t seed,
                       const CfRecordSink& sink);

struct OracleRequest {
  DgpSpec dgp;
  MsmSpec msm;
  RegimenGrid grid;
  long draws = 100000;
  std::uint64_t seed = 0;
  int threads = 1;
  int batches = 10;
};

struct OracleReport {
  Eigen::VectorXd beta_star;
  Eigen::VectorXd mc_se;
  std::vector<std::string> term_names;
  long draws = 0;
  int batches = 0;
  std::uint64_t seed = 0;
};

// True parameter by brute force: counterfactual outcomes are simulated from
// the true laws for every (replicate, t, regimen) and regressed on the MSM
// design. The Monte Carlo standard error comes from batch means.
OracleReport oracle_beta(const OracleRequest& req);

// ---------------------------------------------------------------------------
// Executable checks of the re-indexing identities behind the t-specific view
// construction, run against simulated data with known laws.

using ViewBuilder = std::function<TView(const SeqData&, const WindowSpec&, int)>;

struct AppendixBMismatch {
  long unit = 0;
  int t = 0;
  int j = 0;
  std::string what;
};

struct AppendixBReport {
  long comparisons = 0;
  std::vector<AppendixBMismatch> mismatches;
  double max_coef_diff = 0.0;  // refitted-g coefficient gap, view vs conventional rows
  bool passed() const { return mismatches.empty() && max_coef_diff <= 1e-10; }
};

// (a) For sampled units, targets t, and inner times j, the conditioning
//     vectors and true conditional density values assembled through the view
//     must equal the conventional ones exactly.
// (b) The treatment mechanism refitted on view-assembled rows must match the
//     conventional fit coefficient-wise to 1e-10 (same underlying rows).
AppendixBReport verify_appendix_b(const DgpSpec& dgp, const WindowSpec& window, int n_check,
                                  std::uint64_t seed, const ViewBuilder& view_builder = {});

}  // namespace hrmsm
