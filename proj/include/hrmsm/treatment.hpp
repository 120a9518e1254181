#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hrmsm/design.hpp"
#include "hrmsm/features.hpp"
#include "hrmsm/glm.hpp"
#include "hrmsm/panel.hpp"

namespace hrmsm {

// Fitted treatment mechanism: one pooled multinomial regression of A(j) on
// the feature spec over all (unit, j) pairs. Per-step probabilities feeding
// weight products are clamped to [prob_floor, 1-prob_floor]; clamping events
// are counted by the callers that request them.
class TreatmentModel {
 public:
  static constexpr double prob_floor = 1e-6;

  TreatmentModel() = default;

  const GlmFit& denominator_fit() const { return denom_fit_; }
  const PanelMeta& meta() const { return meta_; }
  int fitted_lo() const { return j_lo_; }
  int fitted_hi() const { return j_hi_; }

  // Probabilities of every level for A(j) given the sequence's past.
  std::vector<double> step_probs(const SeqData& seq, int j) const;

  // Same prediction assembled through a t-specific view (theorem checks).
  std::vector<double> step_probs_view(const TView& view, int j) const;

  // Product over j = t-s+1..t of the clamped probability of the observed
  // treatment. `which` selects the denominator (full conditioning) or the
  // stabilization numerator.
  enum class Which { denominator, numerator };
  double window_probability(const SeqData& seq, int t, int s, Which which,
                            long* clamp_events = nullptr) const;

  bool has_numerator() const { return !numerator_.empty(); }

 private:
  friend TreatmentModel fit_g(const PanelDataset&, const FeatureSpec&, const TimeFnRegistry&,
                              int, int);
  friend void fit_numerator(TreatmentModel&, const PanelDataset&, const std::vector<MsmTerm>&,
                            const WindowSpec&, const VSpec&);

  PanelMeta meta_;
  TimeFnRegistry registry_;
  FeatureSpec gspec_;
  CompiledFeatures compiled_;
  GlmFit denom_fit_;
  int j_lo_ = 0, j_hi_ = 0;

  // Stabilization numerator: the window regimen law is factorized by window
  // position, one multinomial fit per position. Features may reference V,
  // time, and treatments earlier in the window only.
  struct PositionModel {
    std::vector<MsmTerm> terms;  // a_lag:k here means "k positions earlier in the window"
    GlmFit fit;
  };
  std::vector<PositionModel> numerator_;
  VSpec num_vspec_;
  int num_s_ = 0;

  Eigen::VectorXd numerator_row(const SeqData& seq, int t, int s, int pos) const;
};

TreatmentModel fit_g(const PanelDataset& data, const FeatureSpec& spec,
                     const TimeFnRegistry& registry, int j_lo = 0, int j_hi = -1);

// Fits the stabilization numerator in place over the window positions implied
// by `window`. Terms may use const, t, fn:NAME, v:i, and a_lag:k (k >= 1,
// meaning the treatment k positions earlier in the window); terms whose lag
// reaches before the window start are dropped from that position's model.
void fit_numerator(TreatmentModel& model, const PanelDataset& data,
                   const std::vector<MsmTerm>& terms, const WindowSpec& window,
                   const VSpec& vspec);

enum class WeightStyle { unstabilized, stabilized };

std::string to_string(WeightStyle s);

struct Truncation {
  enum class Kind { bound, quantile } kind = Kind::bound;
  double value = 0.0;
};

struct WeightRow {
  int unit = 0;
  int t = 0;
  double weight = 0.0;
  bool flagged = false;
};

struct WeightReport {
  WeightStyle style = WeightStyle::unstabilized;
  int s = 1;
  long n_units = 0;
  std::vector<WeightRow> rows;  // unit-major, target-time-minor
  double min = 0.0, max = 0.0, mean = 0.0, q50 = 0.0, q90 = 0.0, q99 = 0.0;
  double flag_threshold = 0.0;  // default flagging rule: 10x the mean weight
  bool truncated = false;
  double truncation_bound = 0.0;
  long truncation_count = 0;
  long clamp_events = 0;

  void write_csv(const std::string& path, const PanelDataset& data) const;
};

WeightReport compute_weights(const TreatmentModel& model, const PanelDataset& data,
                             const WindowSpec& window, WeightStyle style,
                             std::optional<Truncation> truncation = std::nullopt);

struct EtaDiagnostic {
  double threshold = 0.0;
  std::vector<std::size_t> flagged;      // indices into WeightReport::rows
  double flagged_weight_fraction = 0.0;  // share of total weight mass carried
  double efficiency = 1.0;               // (mean w)^2 / mean(w^2)
  double effective_sample_size = 0.0;    // n_units * efficiency
};

EtaDiagnostic eta_diagnostic(const WeightReport& report, double threshold);

}  // namespace hrmsm
