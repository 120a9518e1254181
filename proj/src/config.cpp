#include "hrmsm/config.hpp"

#include <fstream>
#include <sstream>

namespace hrmsm {

using nlohmann::json;

namespace {

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key))
    throw ValidationError("config: missing key '" + path + key + "'");
  return j.at(key);
}

std::string str_at(const json& j, const std::string& key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_string()) throw ValidationError("config: '" + path + key + "' must be a string");
  return v.get<std::string>();
}

double num_at(const json& j, const std::string& key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_number()) throw ValidationError("config: '" + path + key + "' must be a number");
  return v.get<double>();
}

long int_at(const json& j, const std::string& key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_number_integer())
    throw ValidationError("config: '" + path + key + "' must be an integer");
  return v.get<long>();
}

std::vector<std::string> str_list_at(const json& j, const std::string& key,
                                     const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_array()) throw ValidationError("config: '" + path + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string())
      throw ValidationError("config: '" + path + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

GlmFamily family_from_string(const std::string& s, const std::string& where) {
  if (s == "gaussian") return GlmFamily::gaussian_identity;
  if (s == "bernoulli") return GlmFamily::bernoulli_logit;
  if (s == "binomial") return GlmFamily::binomial_logit;
  throw ValidationError("config: '" + where + "' has unknown family '" + s +
                        "' (gaussian | bernoulli | binomial)");
}

OutcomeKind outcome_kind_from_string(const std::string& s, const std::string& where) {
  if (s == "continuous") return OutcomeKind::continuous;
  if (s == "binary") return OutcomeKind::binary;
  if (s == "counts") return OutcomeKind::counts;
  throw ValidationError("config: '" + where + "' has unknown outcome kind '" + s + "'");
}

FeatureSpec equation_features(const json& eq, const std::string& path, Eigen::VectorXd& coef) {
  if (!eq.is_array() || eq.empty())
    throw ValidationError("config: '" + path + "' must be a nonempty array of {term, coef}");
  FeatureSpec spec;
  coef.resize(static_cast<Eigen::Index>(eq.size()));
  Eigen::Index k = 0;
  for (const auto& e : eq) {
    spec.terms.push_back(parse_feature_term(str_at(e, "term", path + ".")));
    coef(k++) = num_at(e, "coef", path + ".");
  }
  return spec;
}

TimeFnRegistry registry_from_json(const json& j, const std::string& path) {
  TimeFnRegistry registry;
  if (!j.contains("time_fns")) return registry;
  const json& fns = j.at("time_fns");
  if (!fns.is_object()) throw ValidationError("config: '" + path + "time_fns' must be an object");
  for (const auto& [name, body] : fns.items()) {
    TimeFn fn;
    const std::string kind = str_at(body, "kind", path + "time_fns." + name + ".");
    if (kind == "year") {
      fn.kind = TimeFn::Kind::year;
      fn.origin = body.value("origin", 0);
      fn.per = body.value("per", 4);
      if (fn.per < 1) throw ValidationError("config: time_fns." + name + ".per must be >= 1");
    } else if (kind == "season") {
      fn.kind = TimeFn::Kind::season;
      fn.origin = body.value("origin", 0);
      fn.per = body.value("per", 4);
      fn.split = body.value("split", 2);
      if (fn.per < 1 || fn.split < 0 || fn.split > fn.per)
        throw ValidationError("config: time_fns." + name + " needs 0 <= split <= per");
    } else {
      throw ValidationError("config: time_fns." + name + " has unknown kind '" + kind + "'");
    }
    registry.set(name, fn);
  }
  return registry;
}

}  // namespace

TreatmentLevels levels_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty())
    throw ValidationError("config: '" + path + "' must be a nonempty array");
  TreatmentLevels levels;
  for (const auto& e : j) {
    levels.labels.push_back(str_at(e, "label", path + "."));
    levels.scores.push_back(num_at(e, "score", path + "."));
  }
  levels.validate();
  return levels;
}

DgpSpec dgp_from_json(const json& j, const std::string& path) {
  DgpSpec dgp;
  dgp.K = static_cast<int>(int_at(j, "K", path));
  dgp.levels = levels_from_json(require(j, "treatment_levels", path), path + "treatment_levels");
  dgp.registry = registry_from_json(j, path);

  const json& baseline = require(j, "baseline", path);
  if (!baseline.is_array())
    throw ValidationError("config: '" + path + "baseline' must be an array");
  for (const auto& b : baseline) {
    DgpBaseline bl;
    bl.name = str_at(b, "name", path + "baseline.");
    const std::string law = str_at(b, "law", path + "baseline.");
    if (law == "normal") {
      bl.law = DgpBaseline::Law::normal;
      bl.a = num_at(b, "mean", path + "baseline.");
      bl.b = num_at(b, "sd", path + "baseline.");
    } else if (law == "bernoulli") {
      bl.law = DgpBaseline::Law::bernoulli;
      bl.a = num_at(b, "p", path + "baseline.");
    } else if (law == "constant") {
      bl.law = DgpBaseline::Law::constant;
      bl.a = num_at(b, "value", path + "baseline.");
    } else {
      throw ValidationError("config: baseline law '" + law + "' unknown");
    }
    dgp.baseline.push_back(bl);
  }

  const json& channels = require(j, "channels", path);
  if (!channels.is_array())
    throw ValidationError("config: '" + path + "channels' must be an array");
  for (const auto& c : channels) {
    DgpChannel ch;
    ch.name = str_at(c, "name", path + "channels.");
    ch.family = family_from_string(str_at(c, "family", path + "channels."),
                                   path + "channels." + ch.name);
    if (ch.family == GlmFamily::gaussian_identity)
      ch.sd = num_at(c, "sd", path + "channels." + ch.name + ".");
    ch.features = equation_features(require(c, "equation", path + "channels."),
                                    path + "channels." + ch.name + ".equation", ch.coef);
    dgp.channels.push_back(std::move(ch));
  }

  const json& outc = require(j, "outcome", path);
  dgp.outcome.name = str_at(outc, "name", path + "outcome.");
  dgp.outcome_kind =
      outcome_kind_from_string(str_at(outc, "kind", path + "outcome."), path + "outcome.kind");
  switch (dgp.outcome_kind) {
    case OutcomeKind::continuous:
      dgp.outcome.family = GlmFamily::gaussian_identity;
      dgp.outcome.sd = num_at(outc, "sd", path + "outcome.");
      break;
    case OutcomeKind::binary:
      dgp.outcome.family = GlmFamily::bernoulli_logit;
      break;
    case OutcomeKind::counts:
      dgp.outcome.family = GlmFamily::binomial_logit;
      dgp.outcome.trials = int_at(outc, "trials", path + "outcome.");
      break;
  }
  dgp.outcome.features = equation_features(require(outc, "equation", path + "outcome."),
                                           path + "outcome.equation", dgp.outcome.coef);

  const json& trt = require(j, "treatment", path);
  const json& per_level = require(trt, "levels", path + "treatment.");
  if (!per_level.is_array() || per_level.size() != dgp.levels.size() - 1)
    throw ValidationError("config: '" + path +
                          "treatment.levels' must hold one equation per non-baseline level");
  // All levels share one feature spec; the union of terms defines it.
  std::vector<std::string> term_strings;
  for (const auto& eq : per_level) {
    for (const auto& e : eq) {
      const std::string term = str_at(e, "term", path + "treatment.");
      bool seen = false;
      for (const auto& t : term_strings) seen = seen || t == term;
      if (!seen) term_strings.push_back(term);
    }
  }
  dgp.treatment_features = parse_feature_spec(term_strings);
  dgp.treatment_coef = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(term_strings.size()),
                                             static_cast<Eigen::Index>(dgp.levels.size()) - 1);
  for (std::size_t lvl = 0; lvl < per_level.size(); ++lvl) {
    for (const auto& e : per_level[lvl]) {
      const std::string term = str_at(e, "term", path + "treatment.");
      const double coef = num_at(e, "coef", path + "treatment.");
      for (std::size_t k = 0; k < term_strings.size(); ++k)
        if (term_strings[k] == term)
          dgp.treatment_coef(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(lvl)) = coef;
    }
  }

  dgp.validate();
  return dgp;
}

RunConfig parse_config(const json& j, const std::string& raw_text) {
  RunConfig cfg;
  cfg.raw_text = raw_text;
  cfg.config_version = static_cast<int>(int_at(j, "config_version", ""));
  if (cfg.config_version != 1)
    throw ValidationError("config: unsupported config_version " +
                          std::to_string(cfg.config_version));
  cfg.seed = static_cast<std::uint64_t>(int_at(j, "seed", ""));
  cfg.out_dir = j.value("out", std::string("out"));
  cfg.threads = static_cast<int>(j.value("threads", 0));
  cfg.registry = registry_from_json(j, "");

  if (j.contains("data")) {
    const json& data = j.at("data");
    cfg.has_data = true;
    cfg.data_path = str_at(data, "path", "data.");
    const json& schema = require(data, "schema", "data.");
    cfg.schema.id = str_at(schema, "id", "data.schema.");
    cfg.schema.time = str_at(schema, "time", "data.schema.");
    cfg.schema.treatment = str_at(schema, "treatment", "data.schema.");
    const json& outc = require(schema, "outcome", "data.schema.");
    cfg.schema.outcome_kind =
        outcome_kind_from_string(str_at(outc, "kind", "data.schema.outcome."), "data.schema.outcome.kind");
    if (cfg.schema.outcome_kind == OutcomeKind::counts) {
      cfg.schema.outcome_events = str_at(outc, "events", "data.schema.outcome.");
      cfg.schema.outcome_trials = str_at(outc, "trials", "data.schema.outcome.");
      cfg.schema.outcome_name = outc.value("name", cfg.schema.outcome_events);
    } else {
      cfg.schema.outcome_value = str_at(outc, "value", "data.schema.outcome.");
      cfg.schema.outcome_name = outc.value("name", cfg.schema.outcome_value);
    }
    cfg.schema.covariates = str_list_at(schema, "covariates", "data.schema.");
    cfg.levels = levels_from_json(require(data, "treatment_levels", "data."),
                                  "data.treatment_levels");
  }

  if (j.contains("dgp")) {
    cfg.dgp = dgp_from_json(j.at("dgp"), "dgp.");
    cfg.sim_n = j.value("sim_n", 0L);
    cfg.emit_oracle = j.value("oracle", false);
    if (!cfg.has_data) {
      cfg.levels = cfg.dgp->levels;
      cfg.schema.outcome_kind = cfg.dgp->outcome_kind;
      cfg.schema.outcome_name = cfg.dgp->outcome.name;
      cfg.schema.covariates = cfg.dgp->meta().covariate_names;
    }
  }
  if (!cfg.has_data && !cfg.dgp)
    throw ValidationError("config: needs 'data' and/or 'dgp'");

  if (j.contains("window")) {
    const json& w = j.at("window");
    cfg.window.s = static_cast<int>(int_at(w, "s", "window."));
    const json& targets = require(w, "targets", "window.");
    if (targets.is_string() && targets.get<std::string>() == "all") {
      cfg.window_all_targets = true;
    } else if (targets.is_array()) {
      for (const auto& t : targets) {
        if (!t.is_number_integer())
          throw ValidationError("config: 'window.targets' must hold integers or be \"all\"");
        cfg.window.targets.push_back(t.get<int>());
      }
    } else {
      throw ValidationError("config: 'window.targets' must be an array or \"all\"");
    }
  }

  if (j.contains("v")) {
    const json& v = j.at("v");
    if (!v.is_array()) throw ValidationError("config: 'v' must be an array");
    for (const auto& a : v) {
      VAtom atom;
      atom.covariate = str_at(a, "covariate", "v.");
      const std::string anchor = a.value("anchor", std::string("window_start"));
      if (anchor == "window_start")
        atom.anchor = VAnchor::window_start;
      else if (anchor == "study_baseline")
        atom.anchor = VAnchor::study_baseline;
      else
        throw ValidationError("config: v anchor '" + anchor + "' unknown");
      cfg.vspec.atoms.push_back(atom);
    }
  }

  if (j.contains("msm")) {
    const json& m = j.at("msm");
    const std::string mode = str_at(m, "mode", "msm.");
    if (mode == "pooled")
      cfg.msm.mode = MsmMode::pooled;
    else if (mode == "stratified")
      cfg.msm.mode = MsmMode::stratified;
    else
      throw ValidationError("config: msm.mode must be pooled or stratified");
    const std::string link = str_at(m, "link", "msm.");
    if (link == "identity")
      cfg.msm.link = MsmLink::identity;
    else if (link == "logit_binary")
      cfg.msm.link = MsmLink::logit_binary;
    else if (link == "logit_binomial")
      cfg.msm.link = MsmLink::logit_binomial;
    else
      throw ValidationError("config: msm.link must be identity, logit_binary or logit_binomial");
    cfg.msm.terms = parse_msm_terms(str_list_at(m, "terms", "msm."));
  }

  if (j.contains("g_model")) {
    cfg.g_terms = parse_feature_spec(str_list_at(j.at("g_model"), "terms", "g_model."));
    cfg.has_g = true;
  }
  if (j.contains("numerator"))
    cfg.numerator_terms = parse_msm_terms(str_list_at(j.at("numerator"), "terms", "numerator."));

  if (j.contains("q_model")) {
    const json& q = j.at("q_model");
    QSpec qs;
    if (q.contains("channels")) {
      const json& chs = q.at("channels");
      if (!chs.is_array()) throw ValidationError("config: 'q_model.channels' must be an array");
      for (const auto& c : chs) {
        QChannelSpec spec;
        spec.name = str_at(c, "name", "q_model.channels.");
        spec.family = family_from_string(str_at(c, "family", "q_model.channels."),
                                         "q_model.channels." + spec.name);
        spec.features = parse_feature_spec(str_list_at(c, "terms", "q_model.channels."));
        qs.channels.push_back(std::move(spec));
      }
    }
    const json& outc = require(q, "outcome", "q_model.");
    qs.outcome.name = "outcome";
    qs.outcome.family =
        family_from_string(str_at(outc, "family", "q_model.outcome."), "q_model.outcome");
    qs.outcome.features = parse_feature_spec(str_list_at(outc, "terms", "q_model.outcome."));
    cfg.qspec = std::move(qs);
  }

  if (j.contains("estimators")) {
    cfg.estimators = str_list_at(j, "estimators", "");
    for (const auto& e : cfg.estimators)
      if (e != "iptw" && e != "gcomp" && e != "dr" && e != "naive")
        throw ValidationError("config: unknown estimator '" + e +
                              "' (iptw | gcomp | dr | naive)");
  }

  if (j.contains("weights")) {
    const json& w = j.at("weights");
    const std::string style = w.value("style", std::string("unstabilized"));
    if (style == "unstabilized")
      cfg.weight_style = WeightStyle::unstabilized;
    else if (style == "stabilized")
      cfg.weight_style = WeightStyle::stabilized;
    else
      throw ValidationError("config: weights.style must be unstabilized or stabilized");
    if (w.contains("truncation") && !w.at("truncation").is_null()) {
      const json& tr = w.at("truncation");
      Truncation t;
      if (tr.contains("bound")) {
        t.kind = Truncation::Kind::bound;
        t.value = num_at(tr, "bound", "weights.truncation.");
      } else if (tr.contains("quantile")) {
        t.kind = Truncation::Kind::quantile;
        t.value = num_at(tr, "quantile", "weights.truncation.");
      } else {
        throw ValidationError("config: weights.truncation needs 'bound' or 'quantile'");
      }
      cfg.truncation = t;
    }
  }

  if (j.contains("grid")) {
    const json& g = j.at("grid");
    if (g.is_string() && g.get<std::string>() == "full") {
      cfg.grid_full = true;
    } else if (g.is_array()) {
      cfg.grid_full = false;
      for (const auto& r : g) {
        if (!r.is_array()) throw ValidationError("config: 'grid' must hold label arrays");
        std::vector<std::string> regimen;
        for (const auto& l : r) regimen.push_back(l.get<std::string>());
        cfg.grid_labels.push_back(std::move(regimen));
      }
    } else {
      throw ValidationError("config: 'grid' must be \"full\" or an array of regimens");
    }
  }

  if (j.contains("mc")) {
    const json& m = j.at("mc");
    cfg.mc.draws = m.value("draws", cfg.mc.draws);
    cfg.mc.m_aug = m.value("m_aug", cfg.mc.m_aug);
    cfg.mc.oracle_draws = m.value("oracle_draws", cfg.mc.oracle_draws);
    cfg.mc.oracle_batches = m.value("oracle_batches", cfg.mc.oracle_batches);
  }

  if (j.contains("bootstrap")) {
    BootControls b;
    b.B = int_at(j.at("bootstrap"), "B", "bootstrap.");
    b.alpha = j.at("bootstrap").value("alpha", 0.05);
    cfg.boot = b;
  }

  if (j.contains("diagnose")) {
    const json& d = j.at("diagnose");
    const json& sl = require(d, "s_list", "diagnose.");
    if (!sl.is_array()) throw ValidationError("config: 'diagnose.s_list' must be an array");
    for (const auto& s : sl) cfg.diagnose.s_list.push_back(s.get<int>());
    const std::string style = d.value("style", std::string("unstabilized"));
    cfg.diagnose.style =
        style == "stabilized" ? WeightStyle::stabilized : WeightStyle::unstabilized;
  }

  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& err) {
    throw ValidationError("config: JSON parse failure in '" + path + "': " + err.what());
  }
  return parse_config(j, text);
}

void RunConfig::finalize(const PanelMeta& meta, int K) {
  if (window.s < 1) throw ValidationError("config: 'window.s' must be >= 1");
  if (window_all_targets && window.targets.empty())
    window = WindowSpec::all_targets(window.s, K);
  window.validate(K);
  vspec.validate(meta);
  msm.window = window;
  msm.vspec = vspec;
  if (!msm.terms.empty()) msm.validate(meta, K, registry);
  if (has_g) compile_features(g_terms, meta, registry, FeatureRole::treatment);
  if (qspec) qspec->validate(meta);
}

RegimenGrid RunConfig::make_grid(const TreatmentLevels& lv) const {
  if (grid_full) return RegimenGrid::full_product(lv, window.s);
  RegimenGrid grid;
  for (const auto& labels : grid_labels) {
    std::vector<int> regimen;
    for (const auto& label : labels) {
      const int idx = lv.index_of(label);
      if (idx < 0) throw ValidationError("config: grid label '" + label + "' not a treatment level");
      regimen.push_back(idx);
    }
    grid.regimens.push_back(std::move(regimen));
  }
  grid.validate(lv, window.s);
  return grid;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    hash ^= ch;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace hrmsm
