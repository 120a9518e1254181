#include "hrmsm/treatment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace hrmsm {

std::string to_string(WeightStyle s) {
  return s == WeightStyle::unstabilized ? "unstabilized" : "stabilized";
}

TreatmentModel fit_g(const PanelDataset& data, const FeatureSpec& spec,
                     const TimeFnRegistry& registry, int j_lo, int j_hi) {
  if (j_hi < 0) j_hi = data.K;
  if (j_lo < 0 || j_hi > data.K || j_lo > j_hi)
    throw ValidationError("treatment model: fitting range must lie in 0..K");

  TreatmentModel model;
  model.meta_ = data.meta;
  model.registry_ = registry;
  model.gspec_ = spec;
  model.compiled_ = compile_features(spec, data.meta, registry, FeatureRole::treatment);
  if (model.compiled_.references_outcome && j_lo == 0)
    throw ValidationError(
        "treatment-model features reference the outcome; no outcome exists before time 1, "
        "so the fitting range must start at j >= 1");
  model.j_lo_ = j_lo;
  model.j_hi_ = j_hi;

  const Eigen::Index p = static_cast<Eigen::Index>(spec.arity());
  const Eigen::Index rows =
      static_cast<Eigen::Index>(data.n_units()) * static_cast<Eigen::Index>(j_hi - j_lo + 1);
  GlmProblem pr;
  pr.family = GlmFamily::multinomial_logit;
  pr.n_levels = static_cast<int>(data.meta.levels.size());
  pr.X.resize(rows, p);
  pr.weights = Eigen::VectorXd::Ones(rows);
  pr.labels.reserve(static_cast<std::size_t>(rows));
  Eigen::Index r = 0;
  std::vector<double> row(spec.arity());
  for (const auto& unit : data.units) {
    for (int j = j_lo; j <= j_hi; ++j) {
      eval_features(model.compiled_, data.meta, registry, unit.seq, j, row.data());
      for (Eigen::Index c = 0; c < p; ++c) pr.X(r, c) = row[static_cast<std::size_t>(c)];
      pr.labels.push_back(unit.seq.treatments[static_cast<std::size_t>(j)]);
      ++r;
    }
  }
  model.denom_fit_ = glm_fit(pr);
  if (!model.denom_fit_.converged)
    throw NumericalError("treatment model did not converge (score norm " +
                         std::to_string(model.denom_fit_.score_norm) + ")");
  return model;
}

std::vector<double> TreatmentModel::step_probs(const SeqData& seq, int j) const {
  std::vector<double> row(compiled_.arity());
  eval_features(compiled_, meta_, registry_, seq, j, row.data());
  const Eigen::Map<const Eigen::VectorXd> x(row.data(), static_cast<Eigen::Index>(row.size()));
  return multinomial_probs(denom_fit_.beta, x);
}

std::vector<double> TreatmentModel::step_probs_view(const TView& view, int j) const {
  std::vector<double> row(compiled_.arity());
  eval_features_view(compiled_, meta_, registry_, view, j, row.data());
  const Eigen::Map<const Eigen::VectorXd> x(row.data(), static_cast<Eigen::Index>(row.size()));
  return multinomial_probs(denom_fit_.beta, x);
}

Eigen::VectorXd TreatmentModel::numerator_row(const SeqData& seq, int t, int s, int pos) const {
  const auto& pm = numerator_[static_cast<std::size_t>(pos)];
  Eigen::VectorXd x(static_cast<Eigen::Index>(pm.terms.size()));
  const std::vector<double> v = [&] {
    std::vector<double> out;
    for (const auto& atom : num_vspec_.atoms) {
      const int idx = meta_.covariate_index(atom.covariate);
      const int time = atom.anchor == VAnchor::window_start ? t - s + 1 : 0;
      out.push_back(seq.covariates[static_cast<std::size_t>(time)][static_cast<std::size_t>(idx)]);
    }
    return out;
  }();
  const int start = t - s + 1;
  for (std::size_t k = 0; k < pm.terms.size(); ++k) {
    double prod = 1.0;
    for (const auto& atom : pm.terms[k].atoms) {
      switch (atom.kind) {
        case MsmAtomKind::constant:
          break;
        case MsmAtomKind::t_index:
          prod *= static_cast<double>(t);
          break;
        case MsmAtomKind::a_lag:
          // k positions earlier inside the window
          prod *= meta_.levels.score(
              seq.treatments[static_cast<std::size_t>(start + pos - atom.lag)]);
          break;
        case MsmAtomKind::v_ref:
          prod *= v[static_cast<std::size_t>(atom.v_index)];
          break;
        case MsmAtomKind::time_fn:
          prod *= registry_.eval(atom.fn, t);
          break;
        case MsmAtomKind::a_mean:
          throw ValidationError("a_mean is not allowed in numerator terms");
      }
    }
    x(static_cast<Eigen::Index>(k)) = prod;
  }
  return x;
}

void fit_numerator(TreatmentModel& model, const PanelDataset& data,
                   const std::vector<MsmTerm>& terms, const WindowSpec& window,
                   const VSpec& vspec) {
  if (terms.empty()) throw ValidationError("numerator spec needs at least one term");
  vspec.validate(data.meta);
  for (const auto& term : terms) {
    for (const auto& atom : term.atoms) {
      if (atom.kind == MsmAtomKind::a_mean)
        throw ValidationError("a_mean is not allowed in numerator terms ('" + term.label + "')");
      if (atom.kind == MsmAtomKind::a_lag && atom.lag < 1)
        throw ValidationError("numerator a_lag must be >= 1 ('" + term.label + "')");
      if (atom.kind == MsmAtomKind::v_ref &&
          atom.v_index >= static_cast<int>(vspec.atoms.size()))
        throw ValidationError("numerator v index out of range ('" + term.label + "')");
      if (atom.kind == MsmAtomKind::time_fn && !model.registry_.has(atom.fn))
        throw ValidationError("numerator references unknown time function '" + atom.fn + "'");
    }
  }
  model.num_vspec_ = vspec;
  model.num_s_ = window.s;
  model.numerator_.clear();
  const int s = window.s;
  for (int pos = 0; pos < s; ++pos) {
    TreatmentModel::PositionModel pm;
    for (const auto& term : terms) {
      bool reachable = true;
      for (const auto& atom : term.atoms)
        if (atom.kind == MsmAtomKind::a_lag && atom.lag > pos) reachable = false;
      if (reachable) pm.terms.push_back(term);
    }
    if (pm.terms.empty())
      throw ValidationError("numerator position " + std::to_string(pos) +
                            " has no evaluable terms; add 'const'");
    model.numerator_.push_back(std::move(pm));
  }

  for (int pos = 0; pos < s; ++pos) {
    auto& pm = model.numerator_[static_cast<std::size_t>(pos)];
    const Eigen::Index p = static_cast<Eigen::Index>(pm.terms.size());
    const Eigen::Index rows = static_cast<Eigen::Index>(data.n_units()) *
                              static_cast<Eigen::Index>(window.targets.size());
    GlmProblem pr;
    pr.family = GlmFamily::multinomial_logit;
    pr.n_levels = static_cast<int>(data.meta.levels.size());
    pr.X.resize(rows, p);
    pr.weights = Eigen::VectorXd::Ones(rows);
    pr.labels.reserve(static_cast<std::size_t>(rows));
    Eigen::Index r = 0;
    for (const auto& unit : data.units) {
      for (int t : window.targets) {
        pr.X.row(r) = model.numerator_row(unit.seq, t, s, pos).transpose();
        pr.labels.push_back(unit.seq.treatments[static_cast<std::size_t>(t - s + 1 + pos)]);
        ++r;
      }
    }
    pm.fit = glm_fit(pr);
    if (!pm.fit.converged)
      throw NumericalError("stabilization numerator (position " + std::to_string(pos) +
                           ") did not converge");
  }
}

double TreatmentModel::window_probability(const SeqData& seq, int t, int s, Which which,
                                          long* clamp_events) const {
  double prod = 1.0;
  for (int j = t - s + 1; j <= t; ++j) {
    const int observed = seq.treatments[static_cast<std::size_t>(j)];
    double p;
    if (which == Which::denominator) {
      p = step_probs(seq, j)[static_cast<std::size_t>(observed)];
    } else {
      if (numerator_.empty())
        throw ValidationError("no stabilization numerator has been fitted");
      if (s != num_s_)
        throw ValidationError("numerator was fitted for a different window size");
      const int pos = j - (t - s + 1);
      const Eigen::VectorXd x = numerator_row(seq, t, s, pos);
      p = multinomial_probs(numerator_[static_cast<std::size_t>(pos)].fit.beta,
                            x)[static_cast<std::size_t>(observed)];
    }
    if (p < prob_floor || p > 1.0 - prob_floor) {
      p = std::clamp(p, prob_floor, 1.0 - prob_floor);
      if (clamp_events != nullptr) ++*clamp_events;
    }
    prod *= p;
  }
  return prod;
}

WeightReport compute_weights(const TreatmentModel& model, const PanelDataset& data,
                             const WindowSpec& window, WeightStyle style,
                             std::optional<Truncation> truncation) {
  window.validate(data.K);
  for (int t : window.targets) {
    if (t - window.s + 1 < model.fitted_lo() || t > model.fitted_hi())
      throw ValidationError("treatment model was not fitted over the window at t=" +
                            std::to_string(t));
  }

  WeightReport report;
  report.style = style;
  report.s = window.s;
  report.n_units = static_cast<long>(data.n_units());

  long clamps = 0;
  for (std::size_t i = 0; i < data.units.size(); ++i) {
    const auto& seq = data.units[i].seq;
    for (int t : window.targets) {
      const double denom = model.window_probability(seq, t, window.s,
                                                    TreatmentModel::Which::denominator, &clamps);
      double w = 1.0 / denom;
      if (style == WeightStyle::stabilized)
        w *= model.window_probability(seq, t, window.s, TreatmentModel::Which::numerator, &clamps);
      report.rows.push_back({static_cast<int>(i), t, w, false});
    }
  }
  report.clamp_events = clamps;

  if (truncation) {
    double bound;
    if (truncation->kind == Truncation::Kind::bound) {
      bound = truncation->value;
      if (!(bound > 0.0)) throw ValidationError("truncation bound must be positive");
    } else {
      const double q = truncation->value;
      if (!(q > 0.0 && q < 1.0)) throw ValidationError("truncation quantile must be in (0,1)");
      std::vector<double> sorted;
      sorted.reserve(report.rows.size());
      for (const auto& r : report.rows) sorted.push_back(r.weight);
      std::sort(sorted.begin(), sorted.end());
      const double idx = q * static_cast<double>(sorted.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(idx);
      const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
      bound = sorted[lo] + (idx - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    }
    for (auto& r : report.rows) {
      if (r.weight > bound) {
        r.weight = bound;
        ++report.truncation_count;
      }
    }
    report.truncated = true;
    report.truncation_bound = bound;
  }

  std::vector<double> sorted;
  sorted.reserve(report.rows.size());
  double sum = 0.0;
  for (const auto& r : report.rows) {
    sorted.push_back(r.weight);
    sum += r.weight;
  }
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double idx = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (idx - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  report.min = sorted.front();
  report.max = sorted.back();
  report.mean = sum / static_cast<double>(sorted.size());
  report.q50 = quantile(0.5);
  report.q90 = quantile(0.9);
  report.q99 = quantile(0.99);
  report.flag_threshold = 10.0 * report.mean;
  for (auto& r : report.rows) r.flagged = r.weight > report.flag_threshold;
  return report;
}

EtaDiagnostic eta_diagnostic(const WeightReport& report, double threshold) {
  EtaDiagnostic diag;
  diag.threshold = threshold;
  double sum = 0.0, sumsq = 0.0, flagged_mass = 0.0;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const double w = report.rows[i].weight;
    sum += w;
    sumsq += w * w;
    if (w > threshold) {
      diag.flagged.push_back(i);
      flagged_mass += w;
    }
  }
  const double n = static_cast<double>(report.rows.size());
  const double mean = sum / n;
  const double meansq = sumsq / n;
  diag.efficiency = meansq > 0.0 ? mean * mean / meansq : 1.0;
  diag.effective_sample_size = static_cast<double>(report.n_units) * diag.efficiency;
  diag.flagged_weight_fraction = sum > 0.0 ? flagged_mass / sum : 0.0;
  return diag;
}

void WeightReport::write_csv(const std::string& path, const PanelDataset& data) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "unit,t,weight,flagged\n";
  out.precision(12);
  for (const auto& r : rows) {
    out << data.units[static_cast<std::size_t>(r.unit)].id << ',' << r.t << ',' << r.weight << ','
        << (r.flagged ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace hrmsm
