#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hrmsm/design.hpp"
#include "hrmsm/estimators.hpp"
#include "hrmsm/panel.hpp"
#include "hrmsm/simulation.hpp"
#include "hrmsm/treatment.hpp"

namespace hrmsm {

struct McControls {
  long draws = 10000;
  long m_aug = 25;
  long oracle_draws = 100000;
  int oracle_batches = 10;
};

struct BootControls {
  long B = 200;
  double alpha = 0.05;
};

struct DiagnoseControls {
  std::vector<int> s_list;
  WeightStyle style = WeightStyle::unstabilized;
};

// Everything a run needs, parsed from one JSON file. Validation failures
// name the offending key.
struct RunConfig {
  int config_version = 1;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int threads = 0;  // 0: hardware default

  // Observed-data source (path + schema) and/or a simulator.
  std::optional<std::string> data_path;
  ColumnSchema schema;
  TreatmentLevels levels;
  bool has_data = false;

  std::optional<DgpSpec> dgp;
  long sim_n = 0;
  bool emit_oracle = false;

  WindowSpec window;
  bool window_all_targets = false;
  VSpec vspec;
  MsmSpec msm;  // window/vspec copied in during finalization
  TimeFnRegistry registry;

  FeatureSpec g_terms;
  bool has_g = false;
  std::optional<std::vector<MsmTerm>> numerator_terms;

  std::optional<QSpec> qspec;

  std::vector<std::string> estimators;
  WeightStyle weight_style = WeightStyle::unstabilized;
  std::optional<Truncation> truncation;

  bool grid_full = true;
  std::vector<std::vector<std::string>> grid_labels;

  McControls mc;
  std::optional<BootControls> boot;
  DiagnoseControls diagnose;

  // Raw text the config was parsed from (hashed into the run manifest).
  std::string raw_text;

  // Resolves "all" targets against K and cross-validates specs against the
  // dataset's meta.
  void finalize(const PanelMeta& meta, int K);
  RegimenGrid make_grid(const TreatmentLevels& lv) const;
};

RunConfig load_config(const std::string& path);
RunConfig parse_config(const nlohmann::json& j, const std::string& raw_text);

DgpSpec dgp_from_json(const nlohmann::json& j, const std::string& path);
TreatmentLevels levels_from_json(const nlohmann::json& j, const std::string& path);

// 64-bit FNV-1a, used for the reproducibility manifest.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace hrmsm
