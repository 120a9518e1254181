#include "hrmsm/simulation.hpp"

#include <algorithm>
#include <cmath>

#include "hrmsm/glm.hpp"
#include "hrmsm/parallel.hpp"

namespace hrmsm {

namespace {

// Stream-id domains; keep these stable so seeded runs stay reproducible.
constexpr std::uint64_t kDomainPanel = 1;
constexpr std::uint64_t kDomainCfNatural = 2;
constexpr std::uint64_t kDomainCfWindow = 3;

constexpr double kTwoPi = 6.283185307179586476925286766559;

double gaussian_pdf(double value, double mean, double sd) {
  const double r = (value - mean) / sd;
  return std::exp(-0.5 * r * r) / (sd * std::sqrt(kTwoPi));
}

double binomial_pmf(double c, double n, double p) {
  const double logpmf = std::lgamma(n + 1.0) - std::lgamma(c + 1.0) - std::lgamma(n - c + 1.0) +
                        c * std::log(p) + (n - c) * std::log1p(-p);
  return std::exp(logpmf);
}

}  // namespace

PanelMeta DgpSpec::meta() const {
  PanelMeta m;
  for (const auto& ch : channels) m.covariate_names.push_back(ch.name);
  m.levels = levels;
  m.outcome_kind = outcome_kind;
  m.outcome_name = outcome.name;
  return m;
}

void DgpSpec::validate() const {
  levels.validate();
  if (K < 0) throw ValidationError("dgp: K must be >= 0");
  if (baseline.size() != channels.size())
    throw ValidationError("dgp: one baseline law per covariate channel required");
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (baseline[c].name != channels[c].name)
      throw ValidationError("dgp: baseline and channel order mismatch at '" + channels[c].name + "'");
    if (channels[c].family != GlmFamily::gaussian_identity &&
        channels[c].family != GlmFamily::bernoulli_logit)
      throw ValidationError("dgp: covariate channels must be gaussian or bernoulli");
    if (channels[c].family == GlmFamily::gaussian_identity && !(channels[c].sd > 0.0))
      throw ValidationError("dgp: gaussian channel '" + channels[c].name + "' needs sd > 0");
  }
  switch (outcome_kind) {
    case OutcomeKind::continuous:
      if (outcome.family != GlmFamily::gaussian_identity)
        throw ValidationError("dgp: continuous outcome needs a gaussian equation");
      if (!(outcome.sd > 0.0)) throw ValidationError("dgp: outcome sd must be > 0");
      break;
    case OutcomeKind::binary:
      if (outcome.family != GlmFamily::bernoulli_logit)
        throw ValidationError("dgp: binary outcome needs a bernoulli equation");
      break;
    case OutcomeKind::counts:
      if (outcome.family != GlmFamily::binomial_logit)
        throw ValidationError("dgp: counts outcome needs a binomial equation");
      if (outcome.trials < 1) throw ValidationError("dgp: binomial outcome needs trials >= 1");
      break;
  }
  const PanelMeta m = meta();
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto cf = compile_features(channels[c].features, m, registry, FeatureRole::transition,
                                     static_cast<int>(c));
    if (channels[c].coef.size() != static_cast<Eigen::Index>(cf.arity()))
      throw ValidationError("dgp: coefficient count mismatch in channel '" + channels[c].name + "'");
  }
  const auto cfo = compile_features(outcome.features, m, registry, FeatureRole::transition,
                                    static_cast<int>(channels.size()));
  if (outcome.coef.size() != static_cast<Eigen::Index>(cfo.arity()))
    throw ValidationError("dgp: coefficient count mismatch in the outcome equation");
  const auto cft = compile_features(treatment_features, m, registry, FeatureRole::treatment);
  if (treatment_coef.rows() != static_cast<Eigen::Index>(cft.arity()) ||
      treatment_coef.cols() != static_cast<Eigen::Index>(levels.size()) - 1)
    throw ValidationError("dgp: treatment coefficient matrix must be arity x (levels-1)");
}

SeqData make_empty_seq(const PanelMeta& meta, int K) {
  SeqData seq;
  seq.treatments.assign(static_cast<std::size_t>(K) + 1, -1);
  seq.covariates.assign(static_cast<std::size_t>(K) + 2,
                        std::vector<double>(meta.covariate_names.size(), 0.0));
  seq.outcome.kind = meta.outcome_kind;
  seq.outcome.value.assign(static_cast<std::size_t>(K) + 2, 0.0);
  if (meta.outcome_kind == OutcomeKind::counts) {
    seq.outcome.events.assign(static_cast<std::size_t>(K) + 2, 0);
    seq.outcome.trials.assign(static_cast<std::size_t>(K) + 2, 1);
  }
  return seq;
}

DgpLaw::DgpLaw(const DgpSpec& spec) : spec_(spec), meta_(spec.meta()) {
  spec_.validate();
  for (std::size_t c = 0; c < spec_.channels.size(); ++c)
    compiled_channels_.push_back(compile_features(spec_.channels[c].features, meta_,
                                                  spec_.registry, FeatureRole::transition,
                                                  static_cast<int>(c)));
  compiled_outcome_ = compile_features(spec_.outcome.features, meta_, spec_.registry,
                                       FeatureRole::transition,
                                       static_cast<int>(spec_.channels.size()));
  compiled_treatment_ =
      compile_features(spec_.treatment_features, meta_, spec_.registry, FeatureRole::treatment);
}

void DgpLaw::draw_baseline(SeqData& seq, Rng& rng) const {
  auto& l0 = seq.covariates[0];
  for (std::size_t c = 0; c < spec_.baseline.size(); ++c) {
    const auto& b = spec_.baseline[c];
    switch (b.law) {
      case DgpBaseline::Law::normal: l0[c] = rng.normal(b.a, b.b); break;
      case DgpBaseline::Law::bernoulli: l0[c] = rng.bernoulli(b.a) ? 1.0 : 0.0; break;
      case DgpBaseline::Law::constant: l0[c] = b.a; break;
    }
  }
}

double DgpLaw::channel_lp(int channel, const SeqData& seq, int j) const {
  const bool is_outcome = channel == static_cast<int>(spec_.channels.size());
  const auto& cf =
      is_outcome ? compiled_outcome_ : compiled_channels_[static_cast<std::size_t>(channel)];
  const auto& coef =
      is_outcome ? spec_.outcome.coef : spec_.channels[static_cast<std::size_t>(channel)].coef;
  std::vector<double> row(cf.arity());
  eval_features(cf, meta_, spec_.registry, seq, j, row.data());
  double lp = 0.0;
  for (std::size_t k = 0; k < row.size(); ++k) lp += coef(static_cast<Eigen::Index>(k)) * row[k];
  return lp;
}

void DgpLaw::draw_slice_channel(SeqData& seq, int j, int channel, Rng& rng) const {
  const double lp = channel_lp(channel, seq, j);
  if (channel == static_cast<int>(spec_.channels.size())) {
    switch (spec_.outcome_kind) {
      case OutcomeKind::continuous:
        seq.outcome.value[static_cast<std::size_t>(j)] = lp + rng.normal(0.0, spec_.outcome.sd);
        break;
      case OutcomeKind::binary:
        seq.outcome.value[static_cast<std::size_t>(j)] =
            rng.bernoulli(inverse_logit(lp)) ? 1.0 : 0.0;
        break;
      case OutcomeKind::counts: {
        const long n = spec_.outcome.trials;
        const long c = rng.binomial(n, inverse_logit(lp));
        seq.outcome.events[static_cast<std::size_t>(j)] = c;
        seq.outcome.trials[static_cast<std::size_t>(j)] = n;
        seq.outcome.value[static_cast<std::size_t>(j)] =
            static_cast<double>(c) / static_cast<double>(n);
        break;
      }
    }
    return;
  }
  const auto& ch = spec_.channels[static_cast<std::size_t>(channel)];
  seq.covariates[static_cast<std::size_t>(j)][static_cast<std::size_t>(channel)] =
      ch.family == GlmFamily::gaussian_identity
          ? lp + rng.normal(0.0, ch.sd)
          : (rng.bernoulli(inverse_logit(lp)) ? 1.0 : 0.0);
}

void DgpLaw::draw_slice(SeqData& seq, int j, Rng& rng) const {
  for (int c = 0; c <= static_cast<int>(spec_.channels.size()); ++c)
    draw_slice_channel(seq, j, c, rng);
}

std::vector<double> DgpLaw::treatment_probs(const SeqData& seq, int j) const {
  std::vector<double> row(compiled_treatment_.arity());
  eval_features(compiled_treatment_, meta_, spec_.registry, seq, j, row.data());
  const Eigen::Map<const Eigen::VectorXd> x(row.data(), static_cast<Eigen::Index>(row.size()));
  return multinomial_probs(spec_.treatment_coef, x);
}

void DgpLaw::draw_treatment(SeqData& seq, int j, Rng& rng) const {
  const auto probs = treatment_probs(seq, j);
  seq.treatments[static_cast<std::size_t>(j)] = rng.categorical(probs);
}

double DgpLaw::channel_density(const SeqData& seq, int channel, int j) const {
  const double lp = channel_lp(channel, seq, j);
  if (channel == static_cast<int>(spec_.channels.size())) {
    switch (spec_.outcome_kind) {
      case OutcomeKind::continuous:
        return gaussian_pdf(seq.outcome.value[static_cast<std::size_t>(j)], lp, spec_.outcome.sd);
      case OutcomeKind::binary: {
        const double p = inverse_logit(lp);
        return seq.outcome.value[static_cast<std::size_t>(j)] == 1.0 ? p : 1.0 - p;
      }
      case OutcomeKind::counts:
        return binomial_pmf(static_cast<double>(seq.outcome.events[static_cast<std::size_t>(j)]),
                            static_cast<double>(seq.outcome.trials[static_cast<std::size_t>(j)]),
                            inverse_logit(lp));
    }
  }
  const auto& ch = spec_.channels[static_cast<std::size_t>(channel)];
  const double value =
      seq.covariates[static_cast<std::size_t>(j)][static_cast<std::size_t>(channel)];
  if (ch.family == GlmFamily::gaussian_identity) return gaussian_pdf(value, lp, ch.sd);
  const double p = inverse_logit(lp);
  return value == 1.0 ? p : 1.0 - p;
}

double DgpLaw::channel_density_via_view(const TView& view, int channel, int j) const {
  const bool is_outcome = channel == static_cast<int>(spec_.channels.size());
  const auto& cf =
      is_outcome ? compiled_outcome_ : compiled_channels_[static_cast<std::size_t>(channel)];
  const auto& coef =
      is_outcome ? spec_.outcome.coef : spec_.channels[static_cast<std::size_t>(channel)].coef;
  std::vector<double> row(cf.arity());
  eval_features_view(cf, meta_, spec_.registry, view, j, row.data());
  double lp = 0.0;
  for (std::size_t k = 0; k < row.size(); ++k) lp += coef(static_cast<Eigen::Index>(k)) * row[k];

  const int start = view.window_start();
  if (is_outcome) {
    const double value = j >= start + 1
                             ? view.window_outcomes[static_cast<std::size_t>(j - start - 1)]
                             : view.pre_outcomes[static_cast<std::size_t>(j) - 1];
    switch (spec_.outcome_kind) {
      case OutcomeKind::continuous:
        return gaussian_pdf(value, lp, spec_.outcome.sd);
      case OutcomeKind::binary: {
        const double p = inverse_logit(lp);
        return value == 1.0 ? p : 1.0 - p;
      }
      case OutcomeKind::counts: {
        // The view keeps the raw pair only for Y(t+1); earlier slots carry the
        // rate, and the trial count is the DGP constant.
        double c, n;
        if (j == view.t + 1) {
          c = static_cast<double>(view.outcome_events);
          n = static_cast<double>(view.outcome_trials);
        } else {
          n = static_cast<double>(spec_.outcome.trials);
          c = std::round(value * n);
        }
        return binomial_pmf(c, n, inverse_logit(lp));
      }
    }
  }
  const auto& ch = spec_.channels[static_cast<std::size_t>(channel)];
  const double value =
      j >= start + 1
          ? view.window_covariates[static_cast<std::size_t>(j - start - 1)][static_cast<std::size_t>(channel)]
          : view.pre_covariates[static_cast<std::size_t>(j)][static_cast<std::size_t>(channel)];
  if (ch.family == GlmFamily::gaussian_identity) return gaussian_pdf(value, lp, ch.sd);
  const double p = inverse_logit(lp);
  return value == 1.0 ? p : 1.0 - p;
}

std::vector<double> DgpLaw::treatment_probs_via_view(const TView& view, int j) const {
  std::vector<double> row(compiled_treatment_.arity());
  eval_features_view(compiled_treatment_, meta_, spec_.registry, view, j, row.data());
  const Eigen::Map<const Eigen::VectorXd> x(row.data(), static_cast<Eigen::Index>(row.size()));
  return multinomial_probs(spec_.treatment_coef, x);
}

void DgpLaw::treatment_row(const SeqData& seq, int j, double* out) const {
  eval_features(compiled_treatment_, meta_, spec_.registry, seq, j, out);
}

void DgpLaw::treatment_row_via_view(const TView& view, int j, double* out) const {
  eval_features_view(compiled_treatment_, meta_, spec_.registry, view, j, out);
}

// ---------------------------------------------------------------------------

namespace {

// Noise stream per (unit, time, channel): channel ids are 0 for the baseline
// block, 1..C for covariate channels, C+1 for the outcome, C+2 for the
// treatment. Forcing a treatment skips its draw without shifting any other
// stream, which makes consistency and temporal-ordering checks exact.
SeqData simulate_unit_impl(const DgpLaw& law, std::uint64_t seed, long unit_index,
                           const std::vector<int>* forced) {
  const int K = law.K();
  const auto& meta = law.law_meta();
  const std::uint64_t n_cov = meta.covariate_names.size();
  SeqData seq = make_empty_seq(meta, K);
  {
    Rng rng = Rng::derive(seed, {kDomainPanel, static_cast<std::uint64_t>(unit_index), 0, 0});
    law.draw_baseline(seq, rng);
  }
  for (int j = 0; j <= K + 1; ++j) {
    if (j >= 1) {
      for (std::uint64_t c = 0; c <= n_cov; ++c) {
        Rng rng = Rng::derive(seed, {kDomainPanel, static_cast<std::uint64_t>(unit_index),
                                     static_cast<std::uint64_t>(j), c + 1});
        law.draw_slice_channel(seq, j, static_cast<int>(c), rng);
      }
    }
    if (j <= K) {
      if (forced != nullptr && (*forced)[static_cast<std::size_t>(j)] >= 0) {
        seq.treatments[static_cast<std::size_t>(j)] = (*forced)[static_cast<std::size_t>(j)];
      } else {
        Rng rng = Rng::derive(seed, {kDomainPanel, static_cast<std::uint64_t>(unit_index),
                                     static_cast<std::uint64_t>(j), n_cov + 2});
        law.draw_treatment(seq, j, rng);
      }
    }
  }
  return seq;
}

}  // namespace

PanelDataset simulate_panel(const DgpSpec& dgp, long n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("simulate_panel: n must be >= 1");
  const DgpLaw law(dgp);
  PanelDataset data;
  data.meta = dgp.meta();
  data.K = dgp.K;
  data.units.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    UnitRecord unit;
    unit.id = "u" + std::to_string(i);
    unit.seq = simulate_unit_impl(law, seed, i, nullptr);
    data.units.push_back(std::move(unit));
  }
  data.validate();
  return data;
}

SeqData simulate_unit(const DgpSpec& dgp, std::uint64_t seed, long unit_index,
                      const std::vector<int>& forced_treatments) {
  const DgpLaw law(dgp);
  if (forced_treatments.size() != static_cast<std::size_t>(dgp.K) + 1)
    throw ValidationError("forced treatment vector must have length K+1");
  return simulate_unit_impl(law, seed, unit_index, &forced_treatments);
}

// ---------------------------------------------------------------------------

void simulate_cf_chunk(const TrajectoryLaw& law, const MsmSpec& msm, const TimeFnRegistry& registry,
                       const RegimenGrid& grid, long m_lo, long m_hi, std::uint64_t seed,
                       const CfRecordSink& sink) {
  const PanelMeta& meta = law.law_meta();
  const int K = law.K();
  const int s = msm.window.s;
  msm.window.validate(K);
  grid.validate(meta.levels, s);

  int t_max = msm.window.targets.front();
  for (int t : msm.window.targets) t_max = std::max(t_max, t);

  const std::size_t p = msm.arity();
  std::vector<double> row(p);
  std::vector<double> scores(static_cast<std::size_t>(s));

  // Both buffers are reused across replicates; every value read downstream is
  // freshly drawn or set before use.
  SeqData natural = make_empty_seq(meta, K);
  SeqData work = make_empty_seq(meta, K);
  for (long m = m_lo; m < m_hi; ++m) {
    Rng rng_nat = Rng::derive(seed, {kDomainCfNatural, static_cast<std::uint64_t>(m)});
    law.draw_baseline(natural, rng_nat);
    // Pre-window treatments stay random: drawn from the law's own treatment
    // mechanism through the latest pre-window point any target needs.
    for (int j = 0; j <= t_max - s; ++j) {
      law.draw_treatment(natural, j, rng_nat);
      law.draw_slice(natural, j + 1, rng_nat);
    }

    for (int t : msm.window.targets) {
      const int start = t - s + 1;
      const std::vector<double> v = eval_v_seq(natural, msm.vspec, meta, t, s);
      for (std::size_t g = 0; g < grid.regimens.size(); ++g) {
        // Trajectory splitting: the natural prefix is shared across regimens,
        // only the window segment is redrawn.
        work = natural;
        Rng rng_win = Rng::derive(seed, {kDomainCfWindow, static_cast<std::uint64_t>(m),
                                         static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(g)});
        const auto& regimen = grid.regimens[g];
        for (int j = start; j <= t; ++j) {
          work.treatments[static_cast<std::size_t>(j)] = regimen[static_cast<std::size_t>(j - start)];
          law.draw_slice(work, j + 1, rng_win);
        }
        for (int i = 0; i < s; ++i)
          scores[static_cast<std::size_t>(i)] = meta.levels.score(regimen[static_cast<std::size_t>(i)]);
        design_row_parts(msm, registry, t, scores, v, row.data());
        const double y = work.outcome.value[static_cast<std::size_t>(t) + 1];
        long ev = 0, tr = 0;
        if (meta.outcome_kind == OutcomeKind::counts) {
          ev = work.outcome.events[static_cast<std::size_t>(t) + 1];
          tr = work.outcome.trials[static_cast<std::size_t>(t) + 1];
        }
        sink(t, static_cast<int>(g), row.data(), y, ev, tr);
      }
    }
  }
}

OracleReport oracle_beta(const OracleRequest& req) {
  const DgpLaw law(req.dgp);
  req.msm.validate(law.law_meta(), req.dgp.K, req.dgp.registry);
  if (req.draws < 1) throw ValidationError("oracle: draws must be >= 1");
  const int B = std::max(1, req.batches);
  const std::size_t p = req.msm.arity();

  std::vector<Eigen::VectorXd> batch_beta(static_cast<std::size_t>(B));
  std::vector<long> batch_rows(static_cast<std::size_t>(B), 0);
  std::vector<NormalEq> batch_eq;
  batch_eq.reserve(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) batch_eq.emplace_back(static_cast<int>(p));

  const bool identity = req.msm.link == MsmLink::identity;

  parallel_for(static_cast<std::size_t>(B), req.threads, [&](std::size_t b) {
    const long lo = static_cast<long>(b) * req.draws / B;
    const long hi = (static_cast<long>(b) + 1) * req.draws / B;
    if (identity) {
      auto& eq = batch_eq[b];
      simulate_cf_chunk(law, req.msm, req.dgp.registry, req.grid, lo, hi, req.seed,
                        [&](int, int, const double* x, double y, long, long) { eq.add(x, y); });
      batch_beta[b] = eq.solve();
      batch_rows[b] = eq.n();
    } else {
      std::vector<double> xs;
      std::vector<double> ys;
      std::vector<long> evs, trs;
      simulate_cf_chunk(law, req.msm, req.dgp.registry, req.grid, lo, hi, req.seed,
                        [&](int, int, const double* x, double y, long ev, long tr) {
                          xs.insert(xs.end(), x, x + p);
                          ys.push_back(y);
                          evs.push_back(ev);
                          trs.push_back(tr);
                        });
      GlmProblem pr;
      const Eigen::Index n = static_cast<Eigen::Index>(ys.size());
      pr.X.resize(n, static_cast<Eigen::Index>(p));
      for (Eigen::Index i = 0; i < n; ++i)
        for (std::size_t k = 0; k < p; ++k)
          pr.X(i, static_cast<Eigen::Index>(k)) = xs[static_cast<std::size_t>(i) * p + k];
      pr.weights = Eigen::VectorXd::Ones(n);
      if (req.msm.link == MsmLink::logit_binary) {
        pr.family = GlmFamily::bernoulli_logit;
        pr.y = Eigen::Map<const Eigen::VectorXd>(ys.data(), n);
      } else {
        pr.family = GlmFamily::binomial_logit;
        pr.y.resize(n);
        pr.trials.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
          pr.y(i) = static_cast<double>(evs[static_cast<std::size_t>(i)]);
          pr.trials(i) = static_cast<double>(trs[static_cast<std::size_t>(i)]);
        }
      }
      const GlmFit fit = glm_fit(pr);
      if (!fit.converged) throw NumericalError("oracle: batch regression did not converge");
      batch_beta[b] = fit.beta.col(0);
      batch_rows[b] = n;
    }
  });

  OracleReport report;
  report.term_names = req.msm.term_names();
  report.draws = req.draws;
  report.batches = B;
  report.seed = req.seed;

  if (identity) {
    NormalEq pooled(static_cast<int>(p));
    for (const auto& eq : batch_eq) pooled.merge(eq);
    report.beta_star = pooled.solve();
  } else {
    // Draws-weighted mean of batch estimates; the pooled logistic refit is
    // not worth holding every simulated row for.
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    long total = 0;
    for (int b = 0; b < B; ++b) {
      acc += static_cast<double>(batch_rows[static_cast<std::size_t>(b)]) *
             batch_beta[static_cast<std::size_t>(b)];
      total += batch_rows[static_cast<std::size_t>(b)];
    }
    report.beta_star = acc / static_cast<double>(total);
  }

  report.mc_se = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  if (B > 1) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    for (const auto& bb : batch_beta) mean += bb;
    mean /= static_cast<double>(B);
    Eigen::VectorXd var = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    for (const auto& bb : batch_beta) var += (bb - mean).cwiseAbs2();
    var /= static_cast<double>(B - 1);
    report.mc_se = (var / static_cast<double>(B)).cwiseSqrt();
  }
  return report;
}

// ---------------------------------------------------------------------------

AppendixBReport verify_appendix_b(const DgpSpec& dgp, const WindowSpec& window, int n_check,
                                  std::uint64_t seed, const ViewBuilder& view_builder) {
  const DgpLaw law(dgp);
  window.validate(dgp.K);
  const ViewBuilder build =
      view_builder ? view_builder : [](const SeqData& seq, const WindowSpec& w, int t) {
        return build_t_view(seq, w, t);
      };
  const PanelDataset data = simulate_panel(dgp, n_check, seed);
  const int n_channels = static_cast<int>(dgp.channels.size());

  AppendixBReport report;
  auto note = [&](long unit, int t, int j, const std::string& what) {
    if (report.mismatches.size() < 64)
      report.mismatches.push_back({unit, t, j, what});
    else if (report.mismatches.size() == 64)
      report.mismatches.push_back({unit, t, j, "... further mismatches suppressed"});
  };

  for (std::size_t i = 0; i < data.units.size(); ++i) {
    const auto& seq = data.units[i].seq;
    for (int t : window.targets) {
      const TView view = build(seq, window, t);
      const int start = t - window.s + 1;
      for (int j = start + 1; j <= t + 1; ++j) {
        ++report.comparisons;
        if (covariate_conditioning(seq, j) != covariate_conditioning_view(view, j))
          note(static_cast<long>(i), t, j, "covariate conditioning set differs");
        for (int c = 0; c <= n_channels; ++c) {
          if (law.channel_density(seq, c, j) != law.channel_density_via_view(view, c, j))
            note(static_cast<long>(i), t, j, "density mismatch on channel " + std::to_string(c));
        }
      }
      for (int j = start; j <= t; ++j) {
        ++report.comparisons;
        if (treatment_conditioning(seq, j) != treatment_conditioning_view(view, j))
          note(static_cast<long>(i), t, j, "treatment conditioning set differs");
        if (law.treatment_probs(seq, j) != law.treatment_probs_via_view(view, j))
          note(static_cast<long>(i), t, j, "treatment probability mismatch");
      }
    }
  }

  // Refit g over each target's window rows, conventional vs view-assembled.
  // The row sets are identical, so the coefficients must agree.
  const std::size_t p = law.treatment_arity();
  for (int t : window.targets) {
    const Eigen::Index rows =
        static_cast<Eigen::Index>(data.n_units()) * static_cast<Eigen::Index>(window.s);
    GlmProblem conv, via;
    conv.family = via.family = GlmFamily::multinomial_logit;
    conv.n_levels = via.n_levels = static_cast<int>(dgp.levels.size());
    conv.X.resize(rows, static_cast<Eigen::Index>(p));
    via.X.resize(rows, static_cast<Eigen::Index>(p));
    conv.weights = Eigen::VectorXd::Ones(rows);
    via.weights = Eigen::VectorXd::Ones(rows);
    std::vector<double> row(p);
    Eigen::Index r = 0;
    for (const auto& unit : data.units) {
      const TView view = build(unit.seq, window, t);
      for (int j = t - window.s + 1; j <= t; ++j) {
        law.treatment_row(unit.seq, j, row.data());
        for (std::size_t k = 0; k < p; ++k) conv.X(r, static_cast<Eigen::Index>(k)) = row[k];
        conv.labels.push_back(unit.seq.treatments[static_cast<std::size_t>(j)]);
        law.treatment_row_via_view(view, j, row.data());
        for (std::size_t k = 0; k < p; ++k) via.X(r, static_cast<Eigen::Index>(k)) = row[k];
        via.labels.push_back(
            view.window_treatments[static_cast<std::size_t>(j - (t - window.s + 1))]);
        ++r;
      }
    }
    const GlmFit f1 = glm_fit(conv);
    const GlmFit f2 = glm_fit(via);
    const double diff = (f1.beta - f2.beta).cwiseAbs().maxCoeff();
    report.max_coef_diff = std::max(report.max_coef_diff, diff);
  }
  return report;
}

}  // namespace hrmsm
