#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "hrmsm/estimators.hpp"
#include "hrmsm/inference.hpp"
#include "hrmsm/simulation.hpp"
#include "hrmsm/treatment.hpp"

namespace hrmsm {

nlohmann::json estimate_to_json(const EstimateReport& report);
EstimateReport estimate_from_json(const nlohmann::json& j);
std::string estimate_to_text(const EstimateReport& report);

nlohmann::json bootstrap_to_json(const BootstrapResult& result);
std::string bootstrap_to_text(const BootstrapResult& result);

nlohmann::json oracle_to_json(const OracleReport& report);
std::string oracle_to_text(const OracleReport& report);

// Time-varying unit-exposure effect implied by a pooled fit: for each term
// that is linear in the exposure (exactly one a_mean / a_lag atom), its
// coefficient times the term's remaining time factors, summed per t. Errors
// when no term carries a time atom, or when exposure terms mix in V atoms or
// higher powers of exposure.
struct EffectCurvePoint {
  int t = 0;
  double effect = 0.0;
};

std::vector<EffectCurvePoint> effect_curve(const EstimateReport& report,
                                           const TimeFnRegistry& registry,
                                           const std::vector<int>& targets);

void write_effect_curve_csv(const std::vector<EffectCurvePoint>& curve, const std::string& path);

void write_text_file(const std::string& path, const std::string& text);
void write_json_file(const std::string& path, const nlohmann::json& j);

}  // namespace hrmsm
