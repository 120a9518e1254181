#include "hrmsm/inference.hpp"

#include <algorithm>
#include <cmath>

#include "hrmsm/parallel.hpp"
#include "hrmsm/rng.hpp"

namespace hrmsm {

namespace {

constexpr std::uint64_t kDomainBootstrap = 21;

double percentile(std::vector<double>& sorted, double q) {
  const double idx = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(idx);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (idx - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("normal_quantile needs p in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

BootstrapResult bootstrap(const EstimatorFn& estimator, const PanelDataset& data, long B,
                          double alpha, std::uint64_t seed, int threads,
                          const std::vector<std::string>& names) {
  if (B < 2) throw ValidationError("bootstrap needs B >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("bootstrap needs 0 < alpha < 1");

  const auto point = estimator(data);
  if (!point) throw NumericalError("bootstrap: the full-data estimate failed");
  const Eigen::Index p = point->size();

  std::vector<std::optional<Eigen::VectorXd>> replicates(static_cast<std::size_t>(B));
  parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t b) {
    Rng rng = Rng::derive(seed, {kDomainBootstrap, static_cast<std::uint64_t>(b)});
    PanelDataset resampled;
    resampled.meta = data.meta;
    resampled.K = data.K;
    resampled.units.reserve(data.n_units());
    for (std::size_t i = 0; i < data.n_units(); ++i)
      resampled.units.push_back(data.units[rng.uniform_index(data.n_units())]);
    try {
      auto est = estimator(resampled);
      if (est && est->size() != p) est.reset();
      replicates[b] = std::move(est);
    } catch (...) {
      replicates[b].reset();
    }
  });

  BootstrapResult result;
  result.B = B;
  result.alpha = alpha;
  result.seed = seed;
  result.names = names;

  std::vector<Eigen::VectorXd> ok;
  ok.reserve(static_cast<std::size_t>(B));
  for (auto& r : replicates) {
    if (r)
      ok.push_back(std::move(*r));
    else
      ++result.failures;
  }
  if (result.failures * 5 > B)
    throw NumericalError("bootstrap: " + std::to_string(result.failures) + " of " +
                         std::to_string(B) + " replicates failed; intervals would be unreliable");

  const double z = normal_quantile(1.0 - alpha / 2.0);
  std::vector<double> column(ok.size());
  for (Eigen::Index k = 0; k < p; ++k) {
    for (std::size_t b = 0; b < ok.size(); ++b) column[b] = ok[b](k);
    double mean = 0.0;
    for (double v : column) mean += v;
    mean /= static_cast<double>(column.size());
    double var = 0.0;
    for (double v : column) var += (v - mean) * (v - mean);
    var = column.size() > 1 ? var / static_cast<double>(column.size() - 1) : 0.0;

    std::vector<double> sorted = column;
    std::sort(sorted.begin(), sorted.end());
    CoefInterval ci;
    ci.point = (*point)(k);
    ci.se = std::sqrt(var);
    ci.lo = percentile(sorted, alpha / 2.0);
    ci.hi = percentile(sorted, 1.0 - alpha / 2.0);
    ci.normal_lo = ci.point - z * ci.se;
    ci.normal_hi = ci.point + z * ci.se;
    result.coefs.push_back(ci);
  }
  return result;
}

}  // namespace hrmsm
