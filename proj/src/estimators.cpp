#include "hrmsm/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hrmsm/parallel.hpp"

namespace hrmsm {

namespace {

constexpr std::uint64_t kDomainGcomp = 11;
constexpr std::uint64_t kDomainDr = 12;
constexpr std::size_t kMaxArity = 64;

// Design row straight off a sequence (no view copy); agrees with
// design_row(build_t_view(...)) by the re-indexing identity.
void seq_design_row(const SeqData& seq, const PanelMeta& meta, const MsmSpec& msm,
                    const TimeFnRegistry& registry, int t, double* out) {
  const int s = msm.window.s;
  if (s > static_cast<int>(kMaxArity))
    throw ValidationError("window size exceeds the supported maximum (64)");
  double scores[kMaxArity];
  for (int i = 0; i < s; ++i)
    scores[i] = meta.levels.score(seq.treatments[static_cast<std::size_t>(t - s + 1 + i)]);
  const std::vector<double> v = eval_v_seq(seq, msm.vspec, meta, t, s);
  design_row_parts(msm, registry, t, {scores, static_cast<std::size_t>(s)}, v, out);
}

struct ObsRows {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd trials;
  long n_obs = 0;
};

ObsRows observed_rows(const PanelDataset& data, const MsmSpec& msm, const TimeFnRegistry& registry,
                      const std::vector<int>& targets) {
  if (msm.window.s > static_cast<int>(kMaxArity))
    throw ValidationError("window size exceeds the supported maximum");
  const std::size_t p = msm.arity();
  const Eigen::Index rows =
      static_cast<Eigen::Index>(data.n_units()) * static_cast<Eigen::Index>(targets.size());
  ObsRows out;
  out.X.resize(rows, static_cast<Eigen::Index>(p));
  out.y.resize(rows);
  if (msm.link == MsmLink::logit_binomial) out.trials.resize(rows);
  std::vector<double> row(p);
  Eigen::Index r = 0;
  for (const auto& unit : data.units) {
    for (int t : targets) {
      seq_design_row(unit.seq, data.meta, msm, registry, t, row.data());
      for (std::size_t k = 0; k < p; ++k) out.X(r, static_cast<Eigen::Index>(k)) = row[k];
      if (msm.link == MsmLink::logit_binomial) {
        out.y(r) = static_cast<double>(unit.seq.outcome.events[static_cast<std::size_t>(t) + 1]);
        out.trials(r) =
            static_cast<double>(unit.seq.outcome.trials[static_cast<std::size_t>(t) + 1]);
      } else {
        out.y(r) = unit.seq.outcome.value[static_cast<std::size_t>(t) + 1];
      }
      ++r;
    }
  }
  out.n_obs = static_cast<long>(rows);
  return out;
}

GlmFamily family_for_link(MsmLink link) {
  switch (link) {
    case MsmLink::identity: return GlmFamily::gaussian_identity;
    case MsmLink::logit_binary: return GlmFamily::bernoulli_logit;
    case MsmLink::logit_binomial: return GlmFamily::binomial_logit;
  }
  return GlmFamily::gaussian_identity;
}

EstimateReport weighted_msm_fit(const std::string& name, const PanelDataset& data,
                                const MsmSpec& msm, const TimeFnRegistry& registry,
                                const std::vector<int>& targets, const Eigen::VectorXd& weights) {
  ObsRows rows = observed_rows(data, msm, registry, targets);
  GlmProblem pr;
  pr.family = family_for_link(msm.link);
  pr.X = std::move(rows.X);
  pr.y = std::move(rows.y);
  pr.trials = std::move(rows.trials);
  pr.weights = weights;

  EstimateReport report;
  report.estimator = name;
  report.mode = msm.mode;
  report.link = msm.link;
  report.term_names = msm.term_names();
  report.n_units = static_cast<long>(data.n_units());
  report.n_obs = rows.n_obs;
  try {
    const GlmFit fit = glm_fit(pr);
    report.beta = fit.beta.col(0);
    report.converged = fit.converged;
    if (!fit.converged)
      report.warnings.push_back("regression did not converge (score norm " +
                                std::to_string(fit.score_norm) + ")");
    if (fit.separation_suspect)
      report.warnings.push_back("near-separation suspected: some coefficients diverged");
    if (fit.rank_deficient)
      report.warnings.push_back("design is numerically rank deficient; ridge fallback used");
  } catch (const ValidationError& err) {
    throw NumericalError(name + ": " + err.what());
  }
  return report;
}

Eigen::VectorXd weights_vector(const WeightReport& wr) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(wr.rows.size()));
  for (std::size_t i = 0; i < wr.rows.size(); ++i) w(static_cast<Eigen::Index>(i)) = wr.rows[i].weight;
  return w;
}

void attach_weight_summary(EstimateReport& report, const WeightReport& wr) {
  report.has_weights = true;
  report.weight_style = wr.style;
  report.w_min = wr.min;
  report.w_max = wr.max;
  report.w_mean = wr.mean;
  report.w_q99 = wr.q99;
  report.w_clamp_events = wr.clamp_events;
  report.effective_sample_size = eta_diagnostic(wr, wr.flag_threshold).effective_sample_size;
}

}  // namespace

EstimateReport iptw_pooled(const PanelDataset& data, const MsmSpec& msm,
                           const TimeFnRegistry& registry, const TreatmentModel& gmodel,
                           WeightStyle style, std::optional<Truncation> truncation) {
  if (msm.mode != MsmMode::pooled)
    throw ValidationError("iptw_pooled requires a pooled model specification");
  msm.validate(data.meta, data.K, registry);
  const WeightReport wr = compute_weights(gmodel, data, msm.window, style, truncation);
  EstimateReport report =
      weighted_msm_fit("iptw", data, msm, registry, msm.window.targets, weights_vector(wr));
  attach_weight_summary(report, wr);
  return report;
}

EstimateReport iptw_stratified(const PanelDataset& data, const MsmSpec& msm,
                               const TimeFnRegistry& registry, const TreatmentModel& gmodel, int t,
                               WeightStyle style, std::optional<Truncation> truncation) {
  if (msm.mode != MsmMode::stratified)
    throw ValidationError("iptw_stratified requires a stratified model specification");
  msm.validate(data.meta, data.K, registry);
  if (std::find(msm.window.targets.begin(), msm.window.targets.end(), t) ==
      msm.window.targets.end())
    throw ValidationError("t=" + std::to_string(t) + " is not a target time");
  WindowSpec single = msm.window;
  single.targets = {t};
  const WeightReport wr = compute_weights(gmodel, data, single, style, truncation);
  EstimateReport report =
      weighted_msm_fit("iptw", data, msm, registry, single.targets, weights_vector(wr));
  report.beta_by_t.push_back({t, report.beta});
  attach_weight_summary(report, wr);
  return report;
}

EstimateReport iptw_stratified_all(const PanelDataset& data, const MsmSpec& msm,
                                   const TimeFnRegistry& registry, const TreatmentModel& gmodel,
                                   WeightStyle style, std::optional<Truncation> truncation) {
  EstimateReport combined;
  bool first = true;
  for (int t : msm.window.targets) {
    EstimateReport one = iptw_stratified(data, msm, registry, gmodel, t, style, truncation);
    if (first) {
      combined = one;
      combined.beta_by_t.clear();
      first = false;
    }
    combined.converged = combined.converged && one.converged;
    for (const auto& w : one.warnings)
      combined.warnings.push_back("t=" + std::to_string(t) + ": " + w);
    combined.beta_by_t.push_back({t, one.beta});
  }
  combined.n_obs =
      static_cast<long>(data.n_units()) * static_cast<long>(msm.window.targets.size());
  return combined;
}

EstimateReport naive_regression(const PanelDataset& data, const MsmSpec& msm,
                                const TimeFnRegistry& registry) {
  msm.validate(data.meta, data.K, registry);
  const Eigen::Index rows = static_cast<Eigen::Index>(data.n_units()) *
                            static_cast<Eigen::Index>(msm.window.targets.size());
  EstimateReport report = weighted_msm_fit("naive", data, msm, registry, msm.window.targets,
                                           Eigen::VectorXd::Ones(rows));
  return report;
}

// ---------------------------------------------------------------------------
// Q models

void QSpec::validate(const PanelMeta& meta) const {
  if (channels.size() != meta.covariate_names.size())
    throw ValidationError("q model must declare every covariate channel (in slice order)");
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].name != meta.covariate_names[c])
      throw ValidationError("q channel '" + channels[c].name +
                            "' out of order; expected '" + meta.covariate_names[c] + "'");
    if (channels[c].family != GlmFamily::gaussian_identity &&
        channels[c].family != GlmFamily::bernoulli_logit)
      throw ValidationError("q covariate channels must be gaussian or bernoulli");
  }
  switch (meta.outcome_kind) {
    case OutcomeKind::continuous:
      if (outcome.family != GlmFamily::gaussian_identity)
        throw ValidationError("outcome family must be gaussian for a continuous outcome");
      break;
    case OutcomeKind::binary:
      if (outcome.family != GlmFamily::bernoulli_logit)
        throw ValidationError("outcome family must be bernoulli for a binary outcome");
      break;
    case OutcomeKind::counts:
      if (outcome.family != GlmFamily::binomial_logit)
        throw ValidationError("outcome family must be binomial for a counts outcome");
      break;
  }
}

namespace {

QModel::ChannelFit fit_q_channel(const PanelDataset& data, const QChannelSpec& spec,
                                 const TimeFnRegistry& registry, int slot, bool is_outcome) {
  QModel::ChannelFit cf;
  cf.spec = spec;
  cf.compiled = compile_features(spec.features, data.meta, registry, FeatureRole::transition, slot);

  const Eigen::Index rows =
      static_cast<Eigen::Index>(data.n_units()) * static_cast<Eigen::Index>(data.K + 1);
  const std::size_t p = spec.features.arity();
  GlmProblem pr;
  pr.family = spec.family;
  pr.X.resize(rows, static_cast<Eigen::Index>(p));
  pr.y.resize(rows);
  if (spec.family == GlmFamily::binomial_logit) pr.trials.resize(rows);
  pr.weights = Eigen::VectorXd::Ones(rows);
  std::vector<double> row(p);
  Eigen::Index r = 0;
  for (const auto& unit : data.units) {
    for (int j = 1; j <= data.K + 1; ++j) {
      eval_features(cf.compiled, data.meta, registry, unit.seq, j, row.data());
      for (std::size_t k = 0; k < p; ++k) pr.X(r, static_cast<Eigen::Index>(k)) = row[k];
      if (is_outcome) {
        if (spec.family == GlmFamily::binomial_logit) {
          pr.y(r) = static_cast<double>(unit.seq.outcome.events[static_cast<std::size_t>(j)]);
          pr.trials(r) = static_cast<double>(unit.seq.outcome.trials[static_cast<std::size_t>(j)]);
        } else {
          pr.y(r) = unit.seq.outcome.value[static_cast<std::size_t>(j)];
        }
      } else {
        pr.y(r) = unit.seq.covariates[static_cast<std::size_t>(j)][static_cast<std::size_t>(slot)];
      }
      ++r;
    }
  }

  // Constant responses short-circuit to a point mass.
  bool constant = true;
  for (Eigen::Index i = 1; i < pr.y.size() && constant; ++i)
    if (pr.y(i) != pr.y(0)) constant = false;
  if (constant && !(is_outcome && spec.family == GlmFamily::binomial_logit)) {
    cf.degenerate = true;
    cf.point_mass = pr.y.size() > 0 ? pr.y(0) : 0.0;
    return cf;
  }

  if (spec.family == GlmFamily::bernoulli_logit) {
    for (Eigen::Index i = 0; i < pr.y.size(); ++i)
      if (pr.y(i) != 0.0 && pr.y(i) != 1.0)
        throw ValidationError("q channel '" + spec.name + "' declared bernoulli but is not 0/1");
  }

  cf.fit = glm_fit(pr);
  if (!cf.fit.converged)
    throw NumericalError("q channel '" + spec.name + "' did not converge (score norm " +
                         std::to_string(cf.fit.score_norm) + ")");
  if (spec.family == GlmFamily::gaussian_identity) cf.resid_sd = std::sqrt(cf.fit.dispersion);
  return cf;
}

}  // namespace

QModel fit_q(const PanelDataset& data, const QSpec& qspec, const TimeFnRegistry& registry) {
  qspec.validate(data.meta);
  QModel model;
  model.meta_ = data.meta;
  model.registry_ = registry;
  model.K_ = data.K;
  for (std::size_t c = 0; c < qspec.channels.size(); ++c)
    model.channels_.push_back(
        fit_q_channel(data, qspec.channels[c], registry, static_cast<int>(c), false));
  model.outcome_ = fit_q_channel(data, qspec.outcome, registry,
                                 static_cast<int>(qspec.channels.size()), true);
  for (const auto& unit : data.units) model.baseline_pool_.push_back(unit.seq.covariates[0]);
  if (data.meta.outcome_kind == OutcomeKind::counts) {
    model.trials_pool_.assign(static_cast<std::size_t>(data.K) + 2, {});
    for (const auto& unit : data.units)
      for (int j = 1; j <= data.K + 1; ++j)
        model.trials_pool_[static_cast<std::size_t>(j)].push_back(
            unit.seq.outcome.trials[static_cast<std::size_t>(j)]);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Fitted trajectory law

FittedLaw::FittedLaw(const QModel& q, const TreatmentModel& g) : q_(&q), g_(&g) {
  if (q.meta().covariate_names != g.meta().covariate_names ||
      q.meta().levels.labels != g.meta().levels.labels)
    throw ValidationError("q and treatment models were fitted on different panels");
}

void FittedLaw::draw_baseline(SeqData& seq, Rng& rng) const {
  const auto& pool = q_->baseline_pool();
  seq.covariates[0] = pool[rng.uniform_index(pool.size())];
}

void FittedLaw::draw_slice(SeqData& seq, int j, Rng& rng) const {
  double row[kMaxArity];
  const auto& meta = q_->meta();
  for (std::size_t c = 0; c < q_->channels().size(); ++c) {
    const auto& ch = q_->channels()[c];
    double value;
    if (ch.degenerate) {
      value = ch.point_mass;
    } else {
      eval_features(ch.compiled, meta, q_->registry(), seq, j, row);
      double lp = 0.0;
      for (std::size_t k = 0; k < ch.compiled.arity(); ++k)
        lp += ch.fit.beta(static_cast<Eigen::Index>(k), 0) * row[k];
      value = ch.spec.family == GlmFamily::gaussian_identity
                  ? lp + rng.normal(0.0, ch.resid_sd)
                  : (rng.bernoulli(inverse_logit(lp)) ? 1.0 : 0.0);
    }
    seq.covariates[static_cast<std::size_t>(j)][c] = value;
  }

  const auto& oc = q_->outcome();
  double lp = 0.0;
  if (!oc.degenerate) {
    eval_features(oc.compiled, meta, q_->registry(), seq, j, row);
    for (std::size_t k = 0; k < oc.compiled.arity(); ++k)
      lp += oc.fit.beta(static_cast<Eigen::Index>(k), 0) * row[k];
  }
  switch (meta.outcome_kind) {
    case OutcomeKind::continuous:
      seq.outcome.value[static_cast<std::size_t>(j)] =
          oc.degenerate ? oc.point_mass : lp + rng.normal(0.0, oc.resid_sd);
      break;
    case OutcomeKind::binary:
      seq.outcome.value[static_cast<std::size_t>(j)] =
          oc.degenerate ? oc.point_mass : (rng.bernoulli(inverse_logit(lp)) ? 1.0 : 0.0);
      break;
    case OutcomeKind::counts: {
      const auto& pool = q_->trials_pool()[static_cast<std::size_t>(j)];
      const long n = pool[rng.uniform_index(pool.size())];
      const long c = rng.binomial(n, inverse_logit(lp));
      seq.outcome.events[static_cast<std::size_t>(j)] = c;
      seq.outcome.trials[static_cast<std::size_t>(j)] = n;
      seq.outcome.value[static_cast<std::size_t>(j)] =
          static_cast<double>(c) / static_cast<double>(n);
      break;
    }
  }
}

std::vector<double> FittedLaw::treatment_probs(const SeqData& seq, int j) const {
  return g_->step_probs(seq, j);
}

void FittedLaw::draw_treatment(SeqData& seq, int j, Rng& rng) const {
  const auto probs = treatment_probs(seq, j);
  seq.treatments[static_cast<std::size_t>(j)] = rng.categorical(probs);
}

// ---------------------------------------------------------------------------
// G-computation

EstimateReport gcomp_estimate(const PanelDataset& data, const MsmSpec& msm,
                              const TimeFnRegistry& registry, const QModel& qmodel,
                              const TreatmentModel& gmodel, const RegimenGrid& grid, long draws,
                              std::uint64_t seed, int threads) {
  msm.validate(data.meta, data.K, registry);
  grid.validate(data.meta.levels, msm.window.s);
  if (draws < 1) throw ValidationError("gcomp: draws must be >= 1");
  const FittedLaw law(qmodel, gmodel);
  const std::size_t p = msm.arity();

  EstimateReport report;
  report.estimator = "gcomp";
  report.mode = msm.mode;
  report.link = msm.link;
  report.term_names = msm.term_names();
  report.n_units = static_cast<long>(data.n_units());
  report.monte_carlo_draws = draws;
  report.seed = seed;
  if (draws < 1000)
    report.warnings.push_back("gcomp draws < 1000: Monte Carlo noise will dominate");

  // Fixed chunk layout: partial sums are merged in chunk order, so the
  // result is bit-identical for any thread count.
  const int n_chunks = static_cast<int>(std::min<long>(64, draws));
  report.n_obs = draws * static_cast<long>(msm.window.targets.size()) *
                 static_cast<long>(grid.regimens.size());

  // Stratified mode fits one regression per target time on that time's
  // records; pooled mode fits a single regression on all of them.
  const bool stratified = msm.mode == MsmMode::stratified;
  const auto& targets = msm.window.targets;
  std::map<int, std::size_t> t_slot;
  for (std::size_t i = 0; i < targets.size(); ++i) t_slot[targets[i]] = i;
  const std::size_t n_slots = stratified ? targets.size() : 1;

  if (msm.link == MsmLink::identity) {
    std::vector<std::vector<NormalEq>> chunk_eq(static_cast<std::size_t>(n_chunks));
    for (auto& per_t : chunk_eq) per_t.assign(n_slots, NormalEq(static_cast<int>(p)));
    parallel_for(static_cast<std::size_t>(n_chunks), threads, [&](std::size_t c) {
      const long lo = static_cast<long>(c) * draws / n_chunks;
      const long hi = (static_cast<long>(c) + 1) * draws / n_chunks;
      auto& per_t = chunk_eq[c];
      simulate_cf_chunk(law, msm, registry, grid, lo, hi, seed ^ kDomainGcomp,
                        [&](int t, int, const double* x, double y, long, long) {
                          per_t[stratified ? t_slot.at(t) : 0].add(x, y);
                        });
    });
    std::vector<NormalEq> pooled(n_slots, NormalEq(static_cast<int>(p)));
    for (const auto& per_t : chunk_eq)
      for (std::size_t s = 0; s < n_slots; ++s) pooled[s].merge(per_t[s]);
    if (stratified) {
      for (std::size_t s = 0; s < n_slots; ++s)
        report.beta_by_t.push_back({targets[s], pooled[s].solve()});
      report.beta = report.beta_by_t.front().second;
    } else {
      report.beta = pooled[0].solve();
    }
    return report;
  }

  // Logit links: materialize the simulated records, then unweighted fits.
  struct Chunk {
    std::vector<double> xs;
    std::vector<double> ys;
    std::vector<long> evs, trs;
    std::vector<int> ts;
  };
  std::vector<Chunk> chunks(static_cast<std::size_t>(n_chunks));
  parallel_for(static_cast<std::size_t>(n_chunks), threads, [&](std::size_t c) {
    const long lo = static_cast<long>(c) * draws / n_chunks;
    const long hi = (static_cast<long>(c) + 1) * draws / n_chunks;
    auto& chunk = chunks[c];
    simulate_cf_chunk(law, msm, registry, grid, lo, hi, seed ^ kDomainGcomp,
                      [&](int t, int, const double* x, double y, long ev, long tr) {
                        chunk.xs.insert(chunk.xs.end(), x, x + p);
                        chunk.ys.push_back(y);
                        chunk.evs.push_back(ev);
                        chunk.trs.push_back(tr);
                        chunk.ts.push_back(t);
                      });
  });
  const bool binomial = msm.link == MsmLink::logit_binomial;
  auto fit_slot = [&](std::size_t slot) {
    std::size_t total = 0;
    for (const auto& c : chunks)
      for (std::size_t i = 0; i < c.ys.size(); ++i)
        if (!stratified || t_slot.at(c.ts[i]) == slot) ++total;
    GlmProblem pr;
    pr.X.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(p));
    pr.y.resize(static_cast<Eigen::Index>(total));
    pr.weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(total));
    pr.family = binomial ? GlmFamily::binomial_logit : GlmFamily::bernoulli_logit;
    if (binomial) pr.trials.resize(static_cast<Eigen::Index>(total));
    Eigen::Index r = 0;
    for (const auto& c : chunks) {
      for (std::size_t i = 0; i < c.ys.size(); ++i) {
        if (stratified && t_slot.at(c.ts[i]) != slot) continue;
        for (std::size_t k = 0; k < p; ++k)
          pr.X(r, static_cast<Eigen::Index>(k)) = c.xs[i * p + k];
        if (binomial) {
          pr.y(r) = static_cast<double>(c.evs[i]);
          pr.trials(r) = static_cast<double>(c.trs[i]);
        } else {
          pr.y(r) = c.ys[i];
        }
        ++r;
      }
    }
    return glm_fit(pr);
  };
  if (stratified) {
    for (std::size_t s = 0; s < n_slots; ++s) {
      const GlmFit fit = fit_slot(s);
      report.converged = report.converged && fit.converged;
      report.beta_by_t.push_back({targets[s], fit.beta.col(0)});
    }
    report.beta = report.beta_by_t.front().second;
  } else {
    const GlmFit fit = fit_slot(0);
    report.beta = fit.beta.col(0);
    report.converged = fit.converged;
    if (!fit.converged)
      report.warnings.push_back("gcomp regression did not converge (score norm " +
                                std::to_string(fit.score_norm) + ")");
  }
  return report;
}

// ---------------------------------------------------------------------------
// Double robust estimator

namespace {

struct AffinePiece {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  explicit AffinePiece(std::size_t p)
      : A(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p))),
        b(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p))) {}
  void add(const Eigen::VectorXd& x, double y, double inv_g, double scale) {
    A += scale * inv_g * x * x.transpose();
    b += scale * inv_g * y * x;
  }
};

// Clamped probability of the realized treatment at step j of `seq`.
double step_prob_clamped(const TreatmentModel& g, const SeqData& seq, int j, long* clamps) {
  const int observed = seq.treatments[static_cast<std::size_t>(j)];
  double p = g.step_probs(seq, j)[static_cast<std::size_t>(observed)];
  if (p < TreatmentModel::prob_floor || p > 1.0 - TreatmentModel::prob_floor) {
    p = std::clamp(p, TreatmentModel::prob_floor, 1.0 - TreatmentModel::prob_floor);
    if (clamps != nullptr) ++*clamps;
  }
  return p;
}

}  // namespace

EstimateReport dr_estimate(const PanelDataset& data, const MsmSpec& msm,
                           const TimeFnRegistry& registry, const QModel& qmodel,
                           const TreatmentModel& gmodel, long m_aug, std::uint64_t seed,
                           int threads) {
  msm.validate(data.meta, data.K, registry);
  if (msm.link != MsmLink::identity)
    throw ValidationError("dr_estimate supports the identity link only");
  if (m_aug < 1) throw ValidationError("dr: m_aug must be >= 1");
  const FittedLaw law(qmodel, gmodel);
  const PanelMeta& meta = data.meta;
  const std::size_t p = msm.arity();
  const int s = msm.window.s;
  const bool stratified = msm.mode == MsmMode::stratified;
  const auto& targets = msm.window.targets;
  std::map<int, std::size_t> t_slot;
  for (std::size_t i = 0; i < targets.size(); ++i) t_slot[targets[i]] = i;
  const std::size_t n_slots = stratified ? targets.size() : 1;

  std::vector<std::vector<AffinePiece>> unit_piece(
      data.n_units(), std::vector<AffinePiece>(n_slots, AffinePiece(p)));

  parallel_for(data.n_units(), threads, [&](std::size_t i) {
    const SeqData& obs = data.units[i].seq;
    Eigen::VectorXd x(static_cast<Eigen::Index>(p));
    std::vector<double> row(p);
    SeqData work = make_empty_seq(meta, data.K);

    for (int t : targets) {
      AffinePiece& piece = unit_piece[i][stratified ? t_slot.at(t) : 0];
      const int start = t - s + 1;

      // Leading IPTW piece on the observed data.
      double g_obs = 1.0;
      for (int j = start; j <= t; ++j) g_obs *= step_prob_clamped(gmodel, obs, j, nullptr);
      seq_design_row(obs, meta, msm, registry, t, row.data());
      for (std::size_t k = 0; k < p; ++k) x(static_cast<Eigen::Index>(k)) = row[k];
      piece.add(x, obs.outcome.value[static_cast<std::size_t>(t) + 1], 1.0 / g_obs, 1.0);

      // Augmentation: for each window step, the completion from the state
      // including A(j) minus the completion that redraws A(j).
      for (int j = start; j <= t; ++j) {
        for (int which = 0; which < 2; ++which) {  // 0: plus (A(j) kept), 1: minus (A(j) redrawn)
          Rng rng = Rng::derive(seed, {kDomainDr, static_cast<std::uint64_t>(i),
                                       static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(j),
                                       static_cast<std::uint64_t>(which)});
          const double scale = (which == 0 ? -1.0 : 1.0) / static_cast<double>(m_aug);
          for (long r = 0; r < m_aug; ++r) {
            work = obs;  // observed prefix; the suffix is overwritten below
            if (which == 1) law.draw_treatment(work, j, rng);
            for (int sl = j + 1; sl <= t + 1; ++sl) {
              law.draw_slice(work, sl, rng);
              if (sl <= t) law.draw_treatment(work, sl, rng);
            }
            double g_win = 1.0;
            for (int jj = start; jj <= t; ++jj)
              g_win *= step_prob_clamped(gmodel, work, jj, nullptr);
            seq_design_row(work, meta, msm, registry, t, row.data());
            for (std::size_t k = 0; k < p; ++k) x(static_cast<Eigen::Index>(k)) = row[k];
            piece.add(x, work.outcome.value[static_cast<std::size_t>(t) + 1], 1.0 / g_win, scale);
          }
        }
      }
    }
  });

  auto solve_slot = [&](std::size_t slot) {
    Eigen::MatrixXd A =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
    for (const auto& pieces : unit_piece) {
      A += pieces[slot].A;
      b += pieces[slot].b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
    const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
    const double emin = es.eigenvalues().cwiseAbs().minCoeff();
    if (!(emax > 0.0) || emin <= emax * 1e-12)
      throw NumericalError("dr: singular estimating equation (condition number " +
                           std::to_string(emax / std::max(emin, 1e-300)) + ")");
    return Eigen::VectorXd(A.fullPivLu().solve(b));
  };

  EstimateReport report;
  report.estimator = "dr";
  report.mode = msm.mode;
  report.link = msm.link;
  report.term_names = msm.term_names();
  if (stratified) {
    for (std::size_t slot = 0; slot < n_slots; ++slot)
      report.beta_by_t.push_back({targets[slot], solve_slot(slot)});
    report.beta = report.beta_by_t.front().second;
  } else {
    report.beta = solve_slot(0);
  }
  report.n_units = static_cast<long>(data.n_units());
  report.n_obs = static_cast<long>(data.n_units()) * static_cast<long>(targets.size());
  report.monte_carlo_draws = m_aug;
  report.seed = seed;
  return report;
}

}  // namespace hrmsm
