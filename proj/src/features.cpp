#include "hrmsm/features.hpp"

#include <algorithm>
#include <sstream>

namespace hrmsm {

std::vector<std::string> FeatureSpec::labels() const {
  std::vector<std::string> out;
  out.reserve(terms.size());
  for (const auto& t : terms) out.push_back(t.label);
  return out;
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text) {
    if (ch == sep) {
      parts.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  return parts;
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw ValidationError("");
    return v;
  } catch (...) {
    throw ValidationError("expected an integer in " + what + ", got '" + s + "'");
  }
}

FAtom parse_feature_atom(const std::string& token) {
  const auto parts = split(token, ':');
  const std::string& head = parts[0];
  FAtom atom;
  if (head == "const" && parts.size() == 1) {
    atom.kind = FAtomKind::constant;
  } else if (head == "j" && parts.size() == 1) {
    atom.kind = FAtomKind::j_index;
  } else if (head == "a_prev" && parts.size() == 2) {
    atom.kind = FAtomKind::a_prev;
    atom.lag = parse_int(parts[1], token);
    if (atom.lag < 1) throw ValidationError("a_prev lag must be >= 1 in '" + token + "'");
  } else if (head == "a_mean_prev" && parts.size() == 3) {
    atom.kind = FAtomKind::a_mean_prev;
    atom.lag = parse_int(parts[1], token);
    atom.lag_hi = parse_int(parts[2], token);
    if (atom.lag < 1 || atom.lag_hi < atom.lag)
      throw ValidationError("a_mean_prev needs 1 <= lo <= hi in '" + token + "'");
  } else if (head == "l" && parts.size() == 3) {
    atom.kind = FAtomKind::covariate;
    atom.name = parts[1];
    atom.lag = parse_int(parts[2], token);
    if (atom.lag < 0) throw ValidationError("covariate lag must be >= 0 in '" + token + "'");
  } else if (head == "fn" && parts.size() == 2) {
    atom.kind = FAtomKind::time_fn;
    atom.name = parts[1];
  } else {
    throw ValidationError("cannot parse feature atom '" + token + "'");
  }
  return atom;
}

}  // namespace

FTerm parse_feature_term(const std::string& text) {
  FTerm term;
  term.label = text;
  for (const auto& token : split(text, '*')) {
    if (token.empty()) throw ValidationError("empty atom in feature term '" + text + "'");
    term.atoms.push_back(parse_feature_atom(token));
  }
  return term;
}

FeatureSpec parse_feature_spec(const std::vector<std::string>& term_strings) {
  FeatureSpec spec;
  for (const auto& s : term_strings) spec.terms.push_back(parse_feature_term(s));
  if (spec.terms.empty()) throw ValidationError("feature spec needs at least one term");
  return spec;
}

CompiledFeatures compile_features(const FeatureSpec& spec, const PanelMeta& meta,
                                  const TimeFnRegistry& registry, FeatureRole role, int slot) {
  if (spec.terms.empty()) throw ValidationError("feature spec needs at least one term");
  if (spec.terms.size() > 64) throw ValidationError("feature spec exceeds 64 terms");
  CompiledFeatures out;
  for (const auto& term : spec.terms) {
    CompiledFeatures::Term ct;
    if (term.atoms.empty()) throw ValidationError("feature term with no atoms");
    for (const auto& atom : term.atoms) {
      CompiledFeatures::Atom ca;
      ca.kind = atom.kind;
      ca.lag = atom.lag;
      ca.lag_hi = atom.lag_hi;
      switch (atom.kind) {
        case FAtomKind::covariate: {
          if (meta.is_outcome(atom.name)) {
            ca.channel = -1;
            out.references_outcome = true;
            if (atom.lag < 1)
              throw ValidationError("outcome lag must be >= 1 in features ('" + atom.name + "')");
          } else {
            ca.channel = meta.covariate_index(atom.name);
            if (ca.channel < 0)
              throw ValidationError("feature references unknown covariate '" + atom.name + "'");
            if (role == FeatureRole::transition && atom.lag == 0 && ca.channel >= slot)
              throw ValidationError("same-slice feature '" + atom.name +
                                    "' must precede the modelled variable in slice order");
          }
          break;
        }
        case FAtomKind::time_fn:
          if (!registry.has(atom.name))
            throw ValidationError("feature references unknown time function '" + atom.name + "'");
          ca.fn = atom.name;
          break;
        default:
          break;
      }
      ct.atoms.push_back(std::move(ca));
    }
    out.terms.push_back(std::move(ct));
  }
  return out;
}

namespace {

inline double score_at(const PanelMeta& meta, const SeqData& seq, int time) {
  const int clamped = std::max(time, 0);
  return meta.levels.score(seq.treatments[static_cast<std::size_t>(clamped)]);
}

inline double value_at(const SeqData& seq, int channel, int time) {
  if (channel < 0) {
    const int clamped = std::max(time, 1);
    return seq.outcome.value[static_cast<std::size_t>(clamped)];
  }
  const int clamped = std::max(time, 0);
  return seq.covariates[static_cast<std::size_t>(clamped)][static_cast<std::size_t>(channel)];
}

}  // namespace

void eval_features(const CompiledFeatures& spec, const PanelMeta& meta,
                   const TimeFnRegistry& registry, const SeqData& seq, int j, double* out) {
  for (std::size_t k = 0; k < spec.terms.size(); ++k) {
    double prod = 1.0;
    for (const auto& atom : spec.terms[k].atoms) {
      switch (atom.kind) {
        case FAtomKind::constant:
          break;
        case FAtomKind::j_index:
          prod *= static_cast<double>(j);
          break;
        case FAtomKind::a_prev:
          prod *= score_at(meta, seq, j - atom.lag);
          break;
        case FAtomKind::a_mean_prev: {
          double acc = 0.0;
          for (int lag = atom.lag; lag <= atom.lag_hi; ++lag) acc += score_at(meta, seq, j - lag);
          prod *= acc / static_cast<double>(atom.lag_hi - atom.lag + 1);
          break;
        }
        case FAtomKind::covariate:
          prod *= value_at(seq, atom.channel, j - atom.lag);
          break;
        case FAtomKind::time_fn:
          prod *= registry.eval(atom.fn, j - 1);
          break;
      }
    }
    out[k] = prod;
  }
}

namespace {

inline double view_score_at(const PanelMeta& meta, const TView& view, int time) {
  const int clamped = std::max(time, 0);
  const int start = view.window_start();
  const int level = clamped >= start
                        ? view.window_treatments[static_cast<std::size_t>(clamped - start)]
                        : view.pre_treatments[static_cast<std::size_t>(clamped)];
  return meta.levels.score(level);
}

inline double view_value_at(const TView& view, int channel, int time) {
  const int start = view.window_start();
  if (channel < 0) {
    const int clamped = std::max(time, 1);
    return clamped >= start + 1
               ? view.window_outcomes[static_cast<std::size_t>(clamped - start - 1)]
               : view.pre_outcomes[static_cast<std::size_t>(clamped) - 1];
  }
  const int clamped = std::max(time, 0);
  return clamped >= start + 1
             ? view.window_covariates[static_cast<std::size_t>(clamped - start - 1)][static_cast<std::size_t>(channel)]
             : view.pre_covariates[static_cast<std::size_t>(clamped)][static_cast<std::size_t>(channel)];
}

}  // namespace

void eval_features_view(const CompiledFeatures& spec, const PanelMeta& meta,
                        const TimeFnRegistry& registry, const TView& view, int j, double* out) {
  for (std::size_t k = 0; k < spec.terms.size(); ++k) {
    double prod = 1.0;
    for (const auto& atom : spec.terms[k].atoms) {
      switch (atom.kind) {
        case FAtomKind::constant:
          break;
        case FAtomKind::j_index:
          prod *= static_cast<double>(j);
          break;
        case FAtomKind::a_prev:
          prod *= view_score_at(meta, view, j - atom.lag);
          break;
        case FAtomKind::a_mean_prev: {
          double acc = 0.0;
          for (int lag = atom.lag; lag <= atom.lag_hi; ++lag)
            acc += view_score_at(meta, view, j - lag);
          prod *= acc / static_cast<double>(atom.lag_hi - atom.lag + 1);
          break;
        }
        case FAtomKind::covariate:
          prod *= view_value_at(view, atom.channel, j - atom.lag);
          break;
        case FAtomKind::time_fn:
          prod *= registry.eval(atom.fn, j - 1);
          break;
      }
    }
    out[k] = prod;
  }
}

}  // namespace hrmsm
