#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hrmsm/panel.hpp"

namespace hrmsm {

// Full-pipeline estimator run inside each replicate (nuisance models must be
// refitted in the closure). Return nullopt to mark the replicate failed.
using EstimatorFn = std::function<std::optional<Eigen::VectorXd>(const PanelDataset&)>;

struct CoefInterval {
  double point = 0.0;
  double se = 0.0;
  double lo = 0.0, hi = 0.0;              // percentile interval
  double normal_lo = 0.0, normal_hi = 0.0;  // point +/- z * se
};

struct BootstrapResult {
  long B = 0;
  double alpha = 0.05;
  std::vector<std::string> names;
  std::vector<CoefInterval> coefs;
  long failures = 0;
  std::uint64_t seed = 0;
};

// Nonparametric bootstrap resampling whole units with replacement. Percentile
// intervals are the default report; normal-approximation intervals are
// emitted alongside. Throws when more than 20% of replicates fail.
BootstrapResult bootstrap(const EstimatorFn& estimator, const PanelDataset& data, long B,
                          double alpha, std::uint64_t seed, int threads = 1,
                          const std::vector<std::string>& names = {});

// Standard normal quantile (Acklam's rational approximation).
double normal_quantile(double p);

}  // namespace hrmsm
