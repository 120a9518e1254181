#pragma once

#include <string>
#include <vector>

#include "hrmsm/panel.hpp"
#include "hrmsm/timefn.hpp"

namespace hrmsm {

// Regressor language for conditional laws indexed by a response time j:
// the treatment mechanism g(A(j) | A-bar(j-1), L-bar(j)), covariate/outcome
// transitions f(.(j) | L-bar(j-1), A-bar(j-1), same-slice predecessors), and
// the structural equations of simulated processes.
//
// Atom grammar (token syntax in parentheses):
//   const                       1
//   j  (j)                      the response time index
//   a_prev:k                    score of A(j-k), k >= 1
//   a_mean_prev:lo:hi           mean score of A(j-hi .. j-lo)
//   l:NAME:k                    covariate NAME at time j-k (the outcome
//                               channel may be named too, k >= 1)
//   fn:NAME                     registered time function, evaluated at j-1
//                               (the view time whose outcome lands at j)
// A term is a '*'-joined product of atoms; a spec is a list of terms.
//
// Lags that would reach before the start of follow-up are carried back: time
// 0 for covariates and treatments, time 1 for the outcome channel.
enum class FAtomKind { constant, j_index, a_prev, a_mean_prev, covariate, time_fn };

struct FAtom {
  FAtomKind kind = FAtomKind::constant;
  int lag = 0;
  int lag_hi = 0;
  std::string name;
};

struct FTerm {
  std::vector<FAtom> atoms;
  std::string label;
};

struct FeatureSpec {
  std::vector<FTerm> terms;

  std::size_t arity() const { return terms.size(); }
  std::vector<std::string> labels() const;
};

FTerm parse_feature_term(const std::string& text);
FeatureSpec parse_feature_spec(const std::vector<std::string>& term_strings);

// Where a spec is used; controls which lags are legal.
//   treatment:  covariate lag >= 0, treatment lag >= 1
//   transition: covariate lag >= 1 unless the channel precedes `slot` in the
//               slice order (then lag 0 is allowed); treatment lag >= 1
enum class FeatureRole { treatment, transition };

struct CompiledFeatures {
  struct Atom {
    FAtomKind kind;
    int lag = 0;
    int lag_hi = 0;
    int channel = -1;  // covariate index; -1 means the outcome channel
    std::string fn;
  };
  struct Term {
    std::vector<Atom> atoms;
  };
  std::vector<Term> terms;
  bool references_outcome = false;

  std::size_t arity() const { return terms.size(); }
};

// Resolves names and validates lag rules. `slot` is the slice position of
// the variable being modelled (covariate channel index, or the number of
// covariate channels for the outcome); it is ignored for the treatment role.
CompiledFeatures compile_features(const FeatureSpec& spec, const PanelMeta& meta,
                                  const TimeFnRegistry& registry, FeatureRole role,
                                  int slot = 0);

// One value per term at response time j. The sequence must be filled through
// the times the atoms reference (given the role's lag rules, everything
// strictly before j plus same-slice predecessors).
void eval_features(const CompiledFeatures& spec, const PanelMeta& meta,
                   const TimeFnRegistry& registry, const SeqData& seq, int j, double* out);

// Same evaluation routed through a t-specific view's own structures.
void eval_features_view(const CompiledFeatures& spec, const PanelMeta& meta,
                        const TimeFnRegistry& registry, const TView& view, int j, double* out);

}  // namespace hrmsm
