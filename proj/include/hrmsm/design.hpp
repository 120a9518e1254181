#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hrmsm/panel.hpp"
#include "hrmsm/timefn.hpp"

namespace hrmsm {

// Term language of the causal model m(t, a-bar(t-s+1,t), V | beta). Atoms:
//   const        1
//   t  (t)       the view time (pooled mode only)
//   a_lag:k      score of the treatment k steps before the window end, a(t-k)
//   a_mean       mean score over the window
//   v:i          i-th component of the V vector
//   fn:NAME      registered time function at the view time (pooled mode only)
// Terms are '*'-joined products; the intercept is an explicit "const" term.
enum class MsmAtomKind { constant, t_index, a_lag, a_mean, v_ref, time_fn };

struct MsmAtom {
  MsmAtomKind kind = MsmAtomKind::constant;
  int lag = 0;
  int v_index = 0;
  std::string fn;
};

struct MsmTerm {
  std::vector<MsmAtom> atoms;
  std::string label;
};

enum class MsmMode { stratified, pooled };
enum class MsmLink { identity, logit_binary, logit_binomial };

std::string to_string(MsmMode m);
std::string to_string(MsmLink l);

struct MsmSpec {
  MsmMode mode = MsmMode::pooled;
  MsmLink link = MsmLink::identity;
  std::vector<MsmTerm> terms;
  WindowSpec window;
  VSpec vspec;

  std::size_t arity() const { return terms.size(); }
  std::vector<std::string> term_names() const;
  void validate(const PanelMeta& meta, int K, const TimeFnRegistry& registry) const;
};

MsmTerm parse_msm_term(const std::string& text);
std::vector<MsmTerm> parse_msm_terms(const std::vector<std::string>& term_strings);

// One design value per term. `window_scores` holds the s treatment scores in
// window order (oldest first); `v` is the evaluated V vector.
void design_row_parts(const MsmSpec& spec, const TimeFnRegistry& registry, int t,
                      std::span<const double> window_scores, std::span<const double> v,
                      double* out);

// Design row of an observed view; `regimen_override` (level indices, length s)
// replaces the observed window treatments for atom evaluation when present.
Eigen::VectorXd design_row(const TView& view, const MsmSpec& spec, const TimeFnRegistry& registry,
                           const PanelMeta& meta,
                           std::optional<std::span<const int>> regimen_override = std::nullopt);

// Inverse-link applied to the linear predictor: identity returns the dot
// product, the logit links return 1/(1+exp(-dot)) with saturation at the
// extremes instead of overflow.
double mean_response(std::span<const double> row, std::span<const double> beta, MsmLink link);

double inverse_logit(double x);

// The set of window regimens intervened on during G-computation, as level
// indices. The full product set is only generated up to 256 regimens;
// larger problems must supply an explicit list.
struct RegimenGrid {
  std::vector<std::vector<int>> regimens;

  static RegimenGrid full_product(const TreatmentLevels& levels, int s);
  void validate(const TreatmentLevels& levels, int s) const;
};

}  // namespace hrmsm
