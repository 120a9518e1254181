#include "hrmsm/reports.hpp"

#include <fstream>
#include <sstream>

namespace hrmsm {

using nlohmann::json;

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& e : j) v(i++) = e.get<double>();
  return v;
}

}  // namespace

json estimate_to_json(const EstimateReport& report) {
  json j;
  j["estimator"] = report.estimator;
  j["mode"] = to_string(report.mode);
  j["link"] = to_string(report.link);
  j["terms"] = report.term_names;
  j["beta"] = vector_to_json(report.beta);
  if (!report.beta_by_t.empty()) {
    json by_t = json::array();
    for (const auto& [t, beta] : report.beta_by_t)
      by_t.push_back({{"t", t}, {"beta", vector_to_json(beta)}});
    j["beta_by_t"] = by_t;
  }
  j["n_units"] = report.n_units;
  j["n_obs"] = report.n_obs;
  j["converged"] = report.converged;
  j["warnings"] = report.warnings;
  if (report.monte_carlo_draws > 0) {
    j["monte_carlo_draws"] = report.monte_carlo_draws;
    j["seed"] = report.seed;
  }
  if (report.has_weights) {
    j["weights"] = {{"style", to_string(report.weight_style)},
                    {"min", report.w_min},
                    {"max", report.w_max},
                    {"mean", report.w_mean},
                    {"q99", report.w_q99},
                    {"clamp_events", report.w_clamp_events},
                    {"effective_sample_size", report.effective_sample_size}};
  }
  return j;
}

EstimateReport estimate_from_json(const json& j) {
  EstimateReport report;
  report.estimator = j.at("estimator").get<std::string>();
  const std::string mode = j.at("mode").get<std::string>();
  report.mode = mode == "stratified" ? MsmMode::stratified : MsmMode::pooled;
  const std::string link = j.at("link").get<std::string>();
  report.link = link == "identity" ? MsmLink::identity
              : link == "logit_binary" ? MsmLink::logit_binary
                                       : MsmLink::logit_binomial;
  report.term_names = j.at("terms").get<std::vector<std::string>>();
  report.beta = vector_from_json(j.at("beta"));
  if (j.contains("beta_by_t"))
    for (const auto& e : j.at("beta_by_t"))
      report.beta_by_t.push_back({e.at("t").get<int>(), vector_from_json(e.at("beta"))});
  report.n_units = j.value("n_units", 0L);
  report.n_obs = j.value("n_obs", 0L);
  report.converged = j.value("converged", true);
  if (j.contains("warnings")) report.warnings = j.at("warnings").get<std::vector<std::string>>();
  return report;
}

std::string estimate_to_text(const EstimateReport& report) {
  std::ostringstream out;
  out.precision(6);
  out << "estimator: " << report.estimator << "  (" << to_string(report.mode) << ", "
      << to_string(report.link) << ")\n";
  out << "units: " << report.n_units << "  observations: " << report.n_obs << "\n";
  if (report.monte_carlo_draws > 0)
    out << "monte carlo draws: " << report.monte_carlo_draws << "  seed: " << report.seed << "\n";
  if (!report.converged) out << "WARNING: not converged\n";
  for (const auto& w : report.warnings) out << "WARNING: " << w << "\n";
  if (report.beta_by_t.empty()) {
    out << "\n  term                              estimate\n";
    for (std::size_t k = 0; k < report.term_names.size(); ++k) {
      out << "  ";
      out.width(32);
      out << std::left << report.term_names[k] << "  " << report.beta(static_cast<Eigen::Index>(k))
          << "\n";
    }
  } else {
    out << "\n  t";
    for (const auto& name : report.term_names) out << "  " << name;
    out << "\n";
    for (const auto& [t, beta] : report.beta_by_t) {
      out << "  " << t;
      for (Eigen::Index k = 0; k < beta.size(); ++k) out << "  " << beta(k);
      out << "\n";
    }
  }
  if (report.has_weights) {
    out << "\nweights (" << to_string(report.weight_style) << "): mean " << report.w_mean
        << ", max " << report.w_max << ", q99 " << report.w_q99 << ", clamped "
        << report.w_clamp_events << ", effective sample size " << report.effective_sample_size
        << "\n";
  }
  return out.str();
}

json bootstrap_to_json(const BootstrapResult& result) {
  json j;
  j["B"] = result.B;
  j["alpha"] = result.alpha;
  j["failures"] = result.failures;
  j["seed"] = result.seed;
  json coefs = json::array();
  for (std::size_t k = 0; k < result.coefs.size(); ++k) {
    const auto& c = result.coefs[k];
    json e = {{"point", c.point},         {"se", c.se},
              {"lo", c.lo},               {"hi", c.hi},
              {"normal_lo", c.normal_lo}, {"normal_hi", c.normal_hi}};
    if (k < result.names.size()) e["term"] = result.names[k];
    coefs.push_back(e);
  }
  j["coefficients"] = coefs;
  return j;
}

std::string bootstrap_to_text(const BootstrapResult& result) {
  std::ostringstream out;
  out.precision(6);
  out << "bootstrap: B=" << result.B << "  alpha=" << result.alpha
      << "  failed replicates=" << result.failures << "\n";
  out << "  term                              point        se          [percentile]\n";
  for (std::size_t k = 0; k < result.coefs.size(); ++k) {
    const auto& c = result.coefs[k];
    out << "  ";
    out.width(32);
    out << std::left << (k < result.names.size() ? result.names[k] : "b" + std::to_string(k));
    out << "  " << c.point << "  " << c.se << "  [" << c.lo << ", " << c.hi << "]\n";
  }
  return out.str();
}

json oracle_to_json(const OracleReport& report) {
  json j;
  j["beta_star"] = vector_to_json(report.beta_star);
  j["mc_se"] = vector_to_json(report.mc_se);
  j["terms"] = report.term_names;
  j["draws"] = report.draws;
  j["batches"] = report.batches;
  j["seed"] = report.seed;
  return j;
}

std::string oracle_to_text(const OracleReport& report) {
  std::ostringstream out;
  out.precision(6);
  out << "oracle: draws=" << report.draws << "  batches=" << report.batches
      << "  seed=" << report.seed << "\n";
  out << "  term                              beta*       mc se\n";
  for (std::size_t k = 0; k < report.term_names.size(); ++k) {
    out << "  ";
    out.width(32);
    out << std::left << report.term_names[k] << "  "
        << report.beta_star(static_cast<Eigen::Index>(k)) << "  "
        << report.mc_se(static_cast<Eigen::Index>(k)) << "\n";
  }
  return out.str();
}

std::vector<EffectCurvePoint> effect_curve(const EstimateReport& report,
                                           const TimeFnRegistry& registry,
                                           const std::vector<int>& targets) {
  if (report.mode != MsmMode::pooled)
    throw ValidationError("effect curve needs a pooled report");
  // Re-parse the term labels; reports carry the term grammar verbatim.
  const std::vector<MsmTerm> terms = parse_msm_terms(report.term_names);
  if (terms.size() != static_cast<std::size_t>(report.beta.size()))
    throw ValidationError("effect curve: term/coefficient count mismatch in the report");

  bool any_time_atom = false;
  for (const auto& term : terms)
    for (const auto& atom : term.atoms)
      if (atom.kind == MsmAtomKind::t_index || atom.kind == MsmAtomKind::time_fn)
        any_time_atom = true;
  if (!any_time_atom)
    throw ValidationError(
        "effect curve: the fitted model has no time atoms, so the exposure effect does not vary "
        "over time; nothing to plot");

  std::vector<EffectCurvePoint> curve;
  for (int t : targets) {
    double effect = 0.0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
      int exposure_atoms = 0;
      int v_atoms = 0;
      double rest = 1.0;
      for (const auto& atom : terms[k].atoms) {
        switch (atom.kind) {
          case MsmAtomKind::a_lag:
          case MsmAtomKind::a_mean:
            ++exposure_atoms;
            break;
          case MsmAtomKind::constant:
            break;
          case MsmAtomKind::t_index:
            rest *= static_cast<double>(t);
            break;
          case MsmAtomKind::time_fn:
            rest *= registry.eval(atom.fn, t);
            break;
          case MsmAtomKind::v_ref:
            ++v_atoms;
            break;
        }
      }
      if (exposure_atoms == 0) continue;
      if (v_atoms > 0)
        throw ValidationError("effect curve: term '" + terms[k].label +
                              "' modifies the exposure by V; a single curve is not defined");
      if (exposure_atoms > 1)
        throw ValidationError("effect curve: term '" + terms[k].label +
                              "' is nonlinear in the exposure");
      effect += report.beta(static_cast<Eigen::Index>(k)) * rest;
    }
    curve.push_back({t, effect});
  }
  return curve;
}

void write_effect_curve_csv(const std::vector<EffectCurvePoint>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.precision(17);
  out << "t,effect\n";
  for (const auto& p : curve) out << p.t << ',' << p.effect << '\n';
  if (!out) throw IoError("write failure on '" + path + "'");
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failure on '" + path + "'");
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace hrmsm
