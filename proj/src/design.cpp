#include "hrmsm/design.hpp"

#include <cmath>

namespace hrmsm {

std::string to_string(MsmMode m) { return m == MsmMode::stratified ? "stratified" : "pooled"; }

std::string to_string(MsmLink l) {
  switch (l) {
    case MsmLink::identity: return "identity";
    case MsmLink::logit_binary: return "logit_binary";
    case MsmLink::logit_binomial: return "logit_binomial";
  }
  return "?";
}

std::vector<std::string> MsmSpec::term_names() const {
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

MsmAtom parse_msm_atom(const std::string& token) {
  const auto parts = split(token, ':');
  const std::string& head = parts[0];
  MsmAtom atom;
  if (head == "const" && parts.size() == 1) {
    atom.kind = MsmAtomKind::constant;
  } else if (head == "t" && parts.size() == 1) {
    atom.kind = MsmAtomKind::t_index;
  } else if (head == "a_lag" && parts.size() == 2) {
    atom.kind = MsmAtomKind::a_lag;
    atom.lag = parse_int(parts[1], token);
    if (atom.lag < 0) throw ValidationError("a_lag must be >= 0 in '" + token + "'");
  } else if (head == "a_mean" && parts.size() == 1) {
    atom.kind = MsmAtomKind::a_mean;
  } else if (head == "v" && parts.size() == 2) {
    atom.kind = MsmAtomKind::v_ref;
    atom.v_index = parse_int(parts[1], token);
    if (atom.v_index < 0) throw ValidationError("v index must be >= 0 in '" + token + "'");
  } else if (head == "fn" && parts.size() == 2) {
    atom.kind = MsmAtomKind::time_fn;
    atom.fn = parts[1];
  } else {
    throw ValidationError("cannot parse model term atom '" + token + "'");
  }
  return atom;
}

}  // namespace

MsmTerm parse_msm_term(const std::string& text) {
  MsmTerm term;
  term.label = text;
  for (const auto& token : split(text, '*')) {
    if (token.empty()) throw ValidationError("empty atom in model term '" + text + "'");
    term.atoms.push_back(parse_msm_atom(token));
  }
  return term;
}

std::vector<MsmTerm> parse_msm_terms(const std::vector<std::string>& term_strings) {
  std::vector<MsmTerm> out;
  for (const auto& s : term_strings) out.push_back(parse_msm_term(s));
  return out;
}

void MsmSpec::validate(const PanelMeta& meta, int K, const TimeFnRegistry& registry) const {
  window.validate(K);
  vspec.validate(meta);
  if (terms.empty()) throw ValidationError("model needs at least one term");
  if (link == MsmLink::logit_binomial && meta.outcome_kind != OutcomeKind::counts)
    throw ValidationError("logit_binomial link requires a counts outcome");
  if (link == MsmLink::logit_binary && meta.outcome_kind != OutcomeKind::binary)
    throw ValidationError("logit_binary link requires a binary outcome");
  for (const auto& term : terms) {
    for (const auto& atom : term.atoms) {
      switch (atom.kind) {
        case MsmAtomKind::t_index:
        case MsmAtomKind::time_fn:
          if (mode == MsmMode::stratified)
            throw ValidationError("stratified models cannot use time atoms ('" + term.label +
                                  "'); time enters through the per-t parameters");
          if (atom.kind == MsmAtomKind::time_fn && !registry.has(atom.fn))
            throw ValidationError("model term references unknown time function '" + atom.fn + "'");
          break;
        case MsmAtomKind::a_lag:
          if (atom.lag >= window.s)
            throw ValidationError("a_lag:" + std::to_string(atom.lag) +
                                  " reaches outside the window (s=" + std::to_string(window.s) + ")");
          break;
        case MsmAtomKind::v_ref:
          if (atom.v_index >= static_cast<int>(vspec.atoms.size()))
            throw ValidationError("v:" + std::to_string(atom.v_index) +
                                  " is out of range for the V specification");
          break;
        default:
          break;
      }
    }
  }
}

void design_row_parts(const MsmSpec& spec, const TimeFnRegistry& registry, int t,
                      std::span<const double> window_scores, std::span<const double> v,
                      double* out) {
  const int s = spec.window.s;
  double mean_score = 0.0;
  for (double a : window_scores) mean_score += a;
  mean_score /= static_cast<double>(s);

  for (std::size_t k = 0; k < spec.terms.size(); ++k) {
    double prod = 1.0;
    for (const auto& atom : spec.terms[k].atoms) {
      switch (atom.kind) {
        case MsmAtomKind::constant:
          break;
        case MsmAtomKind::t_index:
          prod *= static_cast<double>(t);
          break;
        case MsmAtomKind::a_lag:
          // a(t-k) sits at window position s-1-k counting from the start.
          prod *= window_scores[static_cast<std::size_t>(s - 1 - atom.lag)];
          break;
        case MsmAtomKind::a_mean:
          prod *= mean_score;
          break;
        case MsmAtomKind::v_ref:
          prod *= v[static_cast<std::size_t>(atom.v_index)];
          break;
        case MsmAtomKind::time_fn:
          prod *= registry.eval(atom.fn, t);
          break;
      }
    }
    out[k] = prod;
  }
}

Eigen::VectorXd design_row(const TView& view, const MsmSpec& spec, const TimeFnRegistry& registry,
                           const PanelMeta& meta,
                           std::optional<std::span<const int>> regimen_override) {
  const int s = spec.window.s;
  std::vector<double> scores(static_cast<std::size_t>(s));
  if (regimen_override) {
    if (static_cast<int>(regimen_override->size()) != s)
      throw ValidationError("regimen override must have window length s");
    for (int i = 0; i < s; ++i) {
      const int level = (*regimen_override)[static_cast<std::size_t>(i)];
      if (level < 0 || level >= static_cast<int>(meta.levels.size()))
        throw ValidationError("regimen override holds an invalid treatment level");
      scores[static_cast<std::size_t>(i)] = meta.levels.score(level);
    }
  } else {
    for (int i = 0; i < s; ++i)
      scores[static_cast<std::size_t>(i)] = meta.levels.score(view.window_treatments[static_cast<std::size_t>(i)]);
  }
  const std::vector<double> v = eval_v(view, spec.vspec, meta);
  Eigen::VectorXd row(static_cast<Eigen::Index>(spec.terms.size()));
  design_row_parts(spec, registry, view.t, scores, v, row.data());
  return row;
}

double inverse_logit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double mean_response(std::span<const double> row, std::span<const double> beta, MsmLink link) {
  if (row.size() != beta.size()) throw ValidationError("design row and beta dimension mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) dot += row[i] * beta[i];
  return link == MsmLink::identity ? dot : inverse_logit(dot);
}

RegimenGrid RegimenGrid::full_product(const TreatmentLevels& levels, int s) {
  const std::size_t n_levels = levels.size();
  double count = 1.0;
  for (int i = 0; i < s; ++i) count *= static_cast<double>(n_levels);
  if (count > 256.0)
    throw ValidationError("full regimen grid would hold " + std::to_string(count) +
                          " regimens (limit 256); supply an explicit grid");
  RegimenGrid grid;
  std::vector<int> regimen(static_cast<std::size_t>(s), 0);
  while (true) {
    grid.regimens.push_back(regimen);
    int pos = s - 1;
    while (pos >= 0) {
      if (++regimen[static_cast<std::size_t>(pos)] < static_cast<int>(n_levels)) break;
      regimen[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  return grid;
}

void RegimenGrid::validate(const TreatmentLevels& levels, int s) const {
  if (regimens.empty()) throw ValidationError("regimen grid must be nonempty");
  for (const auto& r : regimens) {
    if (static_cast<int>(r.size()) != s)
      throw ValidationError("every grid regimen must have window length s");
    for (int level : r)
      if (level < 0 || level >= static_cast<int>(levels.size()))
        throw ValidationError("grid regimen holds an invalid treatment level");
  }
}

}  // namespace hrmsm
