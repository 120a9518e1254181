#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <iostream>
#include <optional>
#include <thread>

#include "hrmsm/config.hpp"
#include "hrmsm/estimators.hpp"
#include "hrmsm/inference.hpp"
#include "hrmsm/reports.hpp"
#include "hrmsm/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "configuration file (JSON)")->required();
  auto* seed = cmd->add_option("--seed", "override the config seed");
  seed->each([&args](const std::string& v) { args.seed = std::stoull(v); });
  auto* threads = cmd->add_option("--threads", "worker threads (outputs do not depend on it)");
  threads->each([&args](const std::string& v) { args.threads = std::stoi(v); });
  auto* out = cmd->add_option("--out", "override the output directory");
  out->each([&args](const std::string& v) { args.out = v; });
}

hrmsm::RunConfig load(const CommonArgs& args) {
  hrmsm::RunConfig cfg = hrmsm::load_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.threads) cfg.threads = *args.threads;
  if (args.out) cfg.out_dir = *args.out;
  if (cfg.threads <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    cfg.threads = hw > 0 ? static_cast<int>(hw) : 1;
  }
  return cfg;
}

void write_manifest(const hrmsm::RunConfig& cfg, const std::string& command) {
  json manifest;
  manifest["tool"] = "hrmsm";
  manifest["version"] = kVersion;
  manifest["command"] = command;
  manifest["config_version"] = cfg.config_version;
  manifest["config_hash"] =
      "fnv1a64:" + std::to_string(hrmsm::fnv1a64(cfg.raw_text));
  manifest["seed"] = cfg.seed;
  hrmsm::write_json_file(cfg.out_dir + "/manifest.json", manifest);
}

void prepare_out(const hrmsm::RunConfig& cfg, const std::string& command) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw hrmsm::IoError("cannot create output directory '" + cfg.out_dir + "'");
  write_manifest(cfg, command);
}

// Loads observed data, or simulates it when the config only carries a
// process definition.
hrmsm::PanelDataset obtain_data(const hrmsm::RunConfig& cfg) {
  if (cfg.data_path) return hrmsm::load_panel(*cfg.data_path, cfg.schema, cfg.levels);
  if (!cfg.dgp) throw hrmsm::ValidationError("config: needs 'data.path' or 'dgp'");
  if (cfg.sim_n < 1) throw hrmsm::ValidationError("config: 'sim_n' must be >= 1 to simulate");
  return hrmsm::simulate_panel(*cfg.dgp, cfg.sim_n, cfg.seed);
}

hrmsm::OracleRequest oracle_request(const hrmsm::RunConfig& cfg) {
  hrmsm::OracleRequest req;
  req.dgp = *cfg.dgp;
  req.msm = cfg.msm;
  req.grid = cfg.make_grid(cfg.dgp->levels);
  req.draws = cfg.mc.oracle_draws;
  req.batches = cfg.mc.oracle_batches;
  req.seed = cfg.seed;
  req.threads = cfg.threads;
  return req;
}

int cmd_simulate(const CommonArgs& args) {
  hrmsm::RunConfig cfg = load(args);
  if (!cfg.dgp) throw hrmsm::ValidationError("config: 'simulate' needs a 'dgp' block");
  if (cfg.sim_n < 1) throw hrmsm::ValidationError("config: 'sim_n' must be >= 1");
  const hrmsm::PanelDataset data = hrmsm::simulate_panel(*cfg.dgp, cfg.sim_n, cfg.seed);
  cfg.finalize(data.meta, data.K);
  prepare_out(cfg, "simulate");
  hrmsm::ColumnSchema schema = cfg.schema;
  schema.outcome_kind = data.meta.outcome_kind;
  schema.covariates = data.meta.covariate_names;
  hrmsm::save_panel(data, cfg.out_dir + "/panel.csv", schema);
  std::cout << "wrote " << cfg.out_dir << "/panel.csv (" << data.n_units() << " units, K="
            << data.K << ")\n";
  if (cfg.emit_oracle) {
    const hrmsm::OracleReport oracle = hrmsm::oracle_beta(oracle_request(cfg));
    hrmsm::write_json_file(cfg.out_dir + "/oracle.json", hrmsm::oracle_to_json(oracle));
    hrmsm::write_text_file(cfg.out_dir + "/oracle.txt", hrmsm::oracle_to_text(oracle));
    std::cout << "wrote " << cfg.out_dir << "/oracle.json\n";
  }
  return 0;
}

int cmd_oracle(const CommonArgs& args) {
  hrmsm::RunConfig cfg = load(args);
  if (!cfg.dgp) throw hrmsm::ValidationError("config: 'oracle' needs a 'dgp' block");
  cfg.finalize(cfg.dgp->meta(), cfg.dgp->K);
  prepare_out(cfg, "oracle");
  const hrmsm::OracleReport oracle = hrmsm::oracle_beta(oracle_request(cfg));
  hrmsm::write_json_file(cfg.out_dir + "/oracle.json", hrmsm::oracle_to_json(oracle));
  hrmsm::write_text_file(cfg.out_dir + "/oracle.txt", hrmsm::oracle_to_text(oracle));
  std::cout << hrmsm::oracle_to_text(oracle);
  return 0;
}

struct FittedModels {
  std::optional<hrmsm::TreatmentModel> g;
  std::optional<hrmsm::QModel> q;
};

FittedModels fit_models(const hrmsm::RunConfig& cfg, const hrmsm::PanelDataset& data,
                        bool need_g, bool need_q) {
  FittedModels models;
  if (need_g) {
    if (!cfg.has_g)
      throw hrmsm::ValidationError("config: the selected estimators need a 'g_model' block");
    models.g = hrmsm::fit_g(data, cfg.g_terms, cfg.registry);
    if (cfg.numerator_terms)
      hrmsm::fit_numerator(*models.g, data, *cfg.numerator_terms, cfg.window, cfg.vspec);
    else if (cfg.weight_style == hrmsm::WeightStyle::stabilized)
      throw hrmsm::ValidationError("config: stabilized weights need a 'numerator' block");
  }
  if (need_q) {
    if (!cfg.qspec)
      throw hrmsm::ValidationError("config: the selected estimators need a 'q_model' block");
    models.q = hrmsm::fit_q(data, *cfg.qspec, cfg.registry);
  }
  return models;
}

hrmsm::EstimateReport run_estimator(const std::string& name, const hrmsm::RunConfig& cfg,
                                    const hrmsm::PanelDataset& data, const FittedModels& models) {
  if (name == "iptw") {
    return cfg.msm.mode == hrmsm::MsmMode::pooled
               ? hrmsm::iptw_pooled(data, cfg.msm, cfg.registry, *models.g, cfg.weight_style,
                                    cfg.truncation)
               : hrmsm::iptw_stratified_all(data, cfg.msm, cfg.registry, *models.g,
                                            cfg.weight_style, cfg.truncation);
  }
  if (name == "gcomp") {
    return hrmsm::gcomp_estimate(data, cfg.msm, cfg.registry, *models.q, *models.g,
                                 cfg.make_grid(data.meta.levels), cfg.mc.draws, cfg.seed,
                                 cfg.threads);
  }
  if (name == "dr") {
    return hrmsm::dr_estimate(data, cfg.msm, cfg.registry, *models.q, *models.g, cfg.mc.m_aug,
                              cfg.seed, cfg.threads);
  }
  if (name == "naive") return hrmsm::naive_regression(data, cfg.msm, cfg.registry);
  throw hrmsm::ValidationError("unknown estimator '" + name + "'");
}

// Full-pipeline closure for the bootstrap: nuisance models are refitted
// inside every replicate. Stratified estimates are flattened t-major.
hrmsm::EstimatorFn pipeline_closure(const std::string& name, const hrmsm::RunConfig& cfg,
                                    bool need_g, bool need_q) {
  return [name, &cfg, need_g, need_q](
             const hrmsm::PanelDataset& d) -> std::optional<Eigen::VectorXd> {
    const FittedModels models = fit_models(cfg, d, need_g, need_q);
    const hrmsm::EstimateReport report = run_estimator(name, cfg, d, models);
    if (!report.converged) return std::nullopt;
    if (report.beta_by_t.empty()) return report.beta;
    Eigen::VectorXd flat(static_cast<Eigen::Index>(report.beta_by_t.size()) *
                         report.beta_by_t.front().second.size());
    Eigen::Index at = 0;
    for (const auto& [t, beta] : report.beta_by_t) {
      flat.segment(at, beta.size()) = beta;
      at += beta.size();
    }
    return flat;
  };
}

int estimate_impl(const CommonArgs& args, bool force_bootstrap) {
  hrmsm::RunConfig cfg = load(args);
  const hrmsm::PanelDataset data = obtain_data(cfg);
  cfg.finalize(data.meta, data.K);
  if (cfg.estimators.empty())
    throw hrmsm::ValidationError("config: 'estimators' must list at least one estimator");
  if (cfg.msm.terms.empty()) throw hrmsm::ValidationError("config: missing key 'msm'");
  prepare_out(cfg, force_bootstrap ? "bootstrap" : "estimate");

  bool need_g = false, need_q = false;
  for (const auto& name : cfg.estimators) {
    need_g = need_g || name == "iptw" || name == "gcomp" || name == "dr";
    need_q = need_q || name == "gcomp" || name == "dr";
  }
  const FittedModels models = fit_models(cfg, data, need_g, need_q);

  if (models.g) {
    const hrmsm::WeightReport weights =
        hrmsm::compute_weights(*models.g, data, cfg.window, cfg.weight_style, cfg.truncation);
    weights.write_csv(cfg.out_dir + "/weights.csv", data);
  }

  std::vector<hrmsm::EstimateReport> reports;
  for (const auto& name : cfg.estimators) {
    hrmsm::EstimateReport report = run_estimator(name, cfg, data, models);
    hrmsm::write_json_file(cfg.out_dir + "/estimate_" + name + ".json",
                           hrmsm::estimate_to_json(report));
    hrmsm::write_text_file(cfg.out_dir + "/estimate_" + name + ".txt",
                           hrmsm::estimate_to_text(report));
    std::cout << hrmsm::estimate_to_text(report) << "\n";
    reports.push_back(std::move(report));
  }

  if (reports.size() > 1) {
    std::ostringstream agree;
    agree.precision(6);
    agree << "cross-estimator agreement (max |difference| per coefficient)\n";
    for (std::size_t a = 0; a < reports.size(); ++a) {
      for (std::size_t b = a + 1; b < reports.size(); ++b) {
        if (reports[a].beta.size() != reports[b].beta.size() ||
            !reports[a].beta_by_t.empty() || !reports[b].beta_by_t.empty())
          continue;
        agree << "  " << reports[a].estimator << " vs " << reports[b].estimator << ": "
              << (reports[a].beta - reports[b].beta).cwiseAbs().maxCoeff() << "\n";
      }
    }
    hrmsm::write_text_file(cfg.out_dir + "/agreement.txt", agree.str());
  }

  const bool run_bootstrap = force_bootstrap || cfg.boot.has_value();
  if (run_bootstrap) {
    hrmsm::BootControls boot = cfg.boot.value_or(hrmsm::BootControls{});
    for (const auto& name : cfg.estimators) {
      const hrmsm::BootstrapResult result =
          hrmsm::bootstrap(pipeline_closure(name, cfg, need_g, need_q), data, boot.B, boot.alpha,
                           cfg.seed, cfg.threads, cfg.msm.term_names());
      hrmsm::write_json_file(cfg.out_dir + "/bootstrap_" + name + ".json",
                             hrmsm::bootstrap_to_json(result));
      hrmsm::write_text_file(cfg.out_dir + "/bootstrap_" + name + ".txt",
                             hrmsm::bootstrap_to_text(result));
      std::cout << hrmsm::bootstrap_to_text(result) << "\n";
    }
  }
  return 0;
}

int cmd_diagnose(const CommonArgs& args) {
  hrmsm::RunConfig cfg = load(args);
  const hrmsm::PanelDataset data = obtain_data(cfg);
  if (cfg.diagnose.s_list.empty())
    throw hrmsm::ValidationError("config: 'diagnose.s_list' must list window sizes");
  if (!cfg.has_g) throw hrmsm::ValidationError("config: 'diagnose' needs a 'g_model' block");
  // Window sizes are validated against K up front; the mechanism itself does
  // not depend on s and is fitted once.
  for (int s : cfg.diagnose.s_list) {
    if (s < 1 || s > data.K + 1)
      throw hrmsm::ValidationError("diagnose: window size " + std::to_string(s) +
                                   " outside 1..K+1");
  }
  prepare_out(cfg, "diagnose");
  const hrmsm::TreatmentModel g = hrmsm::fit_g(data, cfg.g_terms, cfg.registry);

  std::ostringstream csv;
  csv.precision(12);
  csv << "s,n_obs,mean,variance,max,q99,efficiency,effective_sample_size,flagged\n";
  std::cout << "s  ess  max_weight\n";
  for (int s : cfg.diagnose.s_list) {
    hrmsm::WindowSpec window = hrmsm::WindowSpec::all_targets(s, data.K);
    hrmsm::TreatmentModel g_local = g;
    if (cfg.numerator_terms && cfg.diagnose.style == hrmsm::WeightStyle::stabilized)
      hrmsm::fit_numerator(g_local, data, *cfg.numerator_terms, window, cfg.vspec);
    const hrmsm::WeightReport report =
        hrmsm::compute_weights(g_local, data, window, cfg.diagnose.style);
    const hrmsm::EtaDiagnostic diag = hrmsm::eta_diagnostic(report, report.flag_threshold);
    double var = 0.0;
    for (const auto& row : report.rows) {
      var += (row.weight - report.mean) * (row.weight - report.mean);
    }
    var /= static_cast<double>(report.rows.size());
    csv << s << ',' << report.rows.size() << ',' << report.mean << ',' << var << ','
        << report.max << ',' << report.q99 << ',' << diag.efficiency << ','
        << diag.effective_sample_size << ',' << diag.flagged.size() << '\n';
    std::cout << s << "  " << diag.effective_sample_size << "  " << report.max << "\n";
  }
  hrmsm::write_text_file(cfg.out_dir + "/diagnose.csv", csv.str());
  return 0;
}

int cmd_effect_curve(const CommonArgs& args, const std::string& report_path) {
  hrmsm::RunConfig cfg = load(args);
  int K = 0;
  if (cfg.dgp) {
    K = cfg.dgp->K;
  } else {
    const hrmsm::PanelDataset data = obtain_data(cfg);
    K = data.K;
  }
  if (cfg.window_all_targets && cfg.window.targets.empty())
    cfg.window = hrmsm::WindowSpec::all_targets(cfg.window.s, K);
  cfg.window.validate(K);
  prepare_out(cfg, "effect-curve");

  std::ifstream in(report_path);
  if (!in) throw hrmsm::IoError("cannot open report '" + report_path + "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& err) {
    throw hrmsm::ValidationError("report '" + report_path + "' is not valid JSON: " + err.what());
  }
  const hrmsm::EstimateReport report = hrmsm::estimate_from_json(j);
  const auto curve = hrmsm::effect_curve(report, cfg.registry, cfg.window.targets);
  hrmsm::write_effect_curve_csv(curve, cfg.out_dir + "/effect_curve.csv");
  std::cout << "wrote " << cfg.out_dir << "/effect_curve.csv (" << curve.size() << " points)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hrmsm: history-restricted marginal structural model estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  CommonArgs sim_args, est_args, boot_args, diag_args, curve_args, oracle_args;
  std::string report_path;

  add_common(app.add_subcommand("simulate", "simulate a panel from a configured process"),
             sim_args);
  add_common(app.add_subcommand("estimate", "run the configured estimators"), est_args);
  add_common(app.add_subcommand("bootstrap", "estimate with bootstrap confidence intervals"),
             boot_args);
  add_common(app.add_subcommand("diagnose", "weight diagnostics across window sizes"), diag_args);
  CLI::App* curve =
      app.add_subcommand("effect-curve", "time-varying exposure effect from a pooled fit");
  add_common(curve, curve_args);
  curve->add_option("--report", report_path, "estimate report (JSON) to read")->required();
  add_common(app.add_subcommand("oracle", "true parameters of a configured process"), oracle_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("simulate")) return cmd_simulate(sim_args);
    if (app.got_subcommand("estimate")) return estimate_impl(est_args, false);
    if (app.got_subcommand("bootstrap")) return estimate_impl(boot_args, true);
    if (app.got_subcommand("diagnose")) return cmd_diagnose(diag_args);
    if (app.got_subcommand("effect-curve")) return cmd_effect_curve(curve_args, report_path);
    if (app.got_subcommand("oracle")) return cmd_oracle(oracle_args);
  } catch (const hrmsm::ValidationError& err) {
    std::cerr << "error (validation): " << err.what() << "\n";
    return 2;
  } catch (const hrmsm::NumericalError& err) {
    std::cerr << "error (numerical): " << err.what() << "\n";
    return 3;
  } catch (const hrmsm::IoError& err) {
    std::cerr << "error (io): " << err.what() << "\n";
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 1;
}
