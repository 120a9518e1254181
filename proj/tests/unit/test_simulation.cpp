#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "hrmsm/simulation.hpp"

using namespace hrmsm;
using namespace hrmsm::testing;

TEST_CASE("all-constant laws produce identical units") {
  DgpSpec dgp;
  dgp.K = 3;
  dgp.levels = binary_levels();
  dgp.baseline = {{"w", DgpBaseline::Law::constant, 2.5, 0.0}};
  DgpChannel w;
  w.name = "w";
  w.family = GlmFamily::bernoulli_logit;
  w.features = fs({"const"});
  w.coef = vec({100.0});  // always 1
  dgp.channels = {w};
  dgp.outcome.name = "y";
  dgp.outcome.family = GlmFamily::bernoulli_logit;
  dgp.outcome.features = fs({"const"});
  dgp.outcome.coef = vec({-100.0});  // always 0
  dgp.outcome_kind = OutcomeKind::binary;
  dgp.treatment_features = fs({"const"});
  dgp.treatment_coef = Eigen::MatrixXd::Constant(1, 1, 100.0);  // always level 1

  const PanelDataset data = simulate_panel(dgp, 5, 1);
  for (const auto& unit : data.units) {
    CHECK(unit.seq.treatments == data.units[0].seq.treatments);
    CHECK(unit.seq.covariates == data.units[0].seq.covariates);
    CHECK(unit.seq.outcome.value == data.units[0].seq.outcome.value);
    CHECK(unit.seq.covariates[0][0] == 2.5);
    CHECK(unit.seq.treatments[0] == 1);
  }
}

TEST_CASE("randomized binary treatment hits its marginal at every time") {
  const PanelDataset data = simulate_panel(randomized_dgp(), 10000, 2024);
  for (int j = 0; j <= data.K; ++j) {
    double share = 0.0;
    for (const auto& unit : data.units)
      share += static_cast<double>(unit.seq.treatments[static_cast<std::size_t>(j)]);
    share /= static_cast<double>(data.n_units());
    CHECK(std::abs(share - 0.5) < 0.015);
  }
}

TEST_CASE("same seed reproduces the identical panel") {
  const PanelDataset a = simulate_panel(reference_dgp(), 50, 99);
  const PanelDataset b = simulate_panel(reference_dgp(), 50, 99);
  for (std::size_t i = 0; i < a.n_units(); ++i) {
    CHECK(a.units[i].seq.treatments == b.units[i].seq.treatments);
    CHECK(a.units[i].seq.covariates == b.units[i].seq.covariates);
    CHECK(a.units[i].seq.outcome.value == b.units[i].seq.outcome.value);
  }
}

TEST_CASE("consistency: forcing the observed regimen replays the observed trajectory") {
  const std::uint64_t seed = 487;
  const DgpSpec dgp = reference_dgp();
  const PanelDataset data = simulate_panel(dgp, 20, seed);
  for (long i = 0; i < 20; ++i) {
    const auto& observed = data.units[static_cast<std::size_t>(i)].seq;
    const SeqData replay = simulate_unit(dgp, seed, i, observed.treatments);
    CHECK(replay.treatments == observed.treatments);
    CHECK(replay.covariates == observed.covariates);
    CHECK(replay.outcome.value == observed.outcome.value);
  }
}

TEST_CASE("temporal ordering: intervening at j changes nothing at or before j") {
  const std::uint64_t seed = 523;
  const DgpSpec dgp = reference_dgp();
  const PanelDataset data = simulate_panel(dgp, 10, seed);
  const int j_int = 4;
  for (long i = 0; i < 10; ++i) {
    const auto& observed = data.units[static_cast<std::size_t>(i)].seq;
    std::vector<int> forced(static_cast<std::size_t>(dgp.K) + 1, -1);
    forced[j_int] = 1 - observed.treatments[j_int];  // flip one treatment
    const SeqData flipped = simulate_unit(dgp, seed, i, forced);
    for (int j = 0; j <= j_int; ++j) {
      CHECK(flipped.covariates[static_cast<std::size_t>(j)] ==
            observed.covariates[static_cast<std::size_t>(j)]);
      if (j >= 1)
        CHECK(flipped.outcome.value[static_cast<std::size_t>(j)] ==
              observed.outcome.value[static_cast<std::size_t>(j)]);
      if (j < j_int)
        CHECK(flipped.treatments[static_cast<std::size_t>(j)] ==
              observed.treatments[static_cast<std::size_t>(j)]);
    }
    // The intervened treatment sticks, and the confounder at j+1 moves.
    CHECK(flipped.treatments[j_int] == forced[j_int]);
    CHECK(flipped.covariates[j_int + 1] != observed.covariates[j_int + 1]);
  }
}

TEST_CASE("oracle: null-effect process has zero treatment coefficients") {
  OracleRequest req;
  req.dgp = null_effect_dgp();
  req.msm = reference_msm();
  req.grid = RegimenGrid::full_product(req.dgp.levels, 3);
  req.draws = 20000;
  req.seed = 5;
  req.threads = 2;
  const OracleReport report = oracle_beta(req);
  for (int k = 1; k <= 3; ++k) {
    CHECK(std::abs(report.beta_star(k)) <=
          std::max(3.0 * report.mc_se(k), 0.02));
  }
}

TEST_CASE("oracle: analytic truth of the reference process") {
  OracleRequest req;
  req.dgp = reference_dgp();
  req.msm = reference_msm();
  req.grid = RegimenGrid::full_product(req.dgp.levels, 3);
  req.draws = 120000;
  req.seed = 6;
  req.threads = 2;
  const OracleReport report = oracle_beta(req);
  const Eigen::VectorXd truth = reference_beta_star();
  for (int k = 0; k < 4; ++k)
    CHECK(std::abs(report.beta_star(k) - truth(k)) <=
          std::max(4.0 * report.mc_se(k), 0.02));
}

TEST_CASE("oracle: saturated two-regimen grid equals direct counterfactual means") {
  OracleRequest req;
  req.dgp = reference_dgp();
  req.msm.mode = MsmMode::pooled;
  req.msm.link = MsmLink::identity;
  req.msm.terms = parse_msm_terms({"const", "a_lag:0"});
  req.msm.window.s = 1;
  req.msm.window.targets = {5};
  req.grid.regimens = {{0}, {1}};
  req.draws = 60000;
  req.seed = 7;
  req.threads = 2;
  const OracleReport report = oracle_beta(req);

  // Independent pipeline: direct Monte Carlo means of Y(6) under A(5) = 0/1
  // with everything before left natural.
  const DgpLaw law(req.dgp);
  double mean[2] = {0.0, 0.0};
  const long M = 60000;
  for (long m = 0; m < M; ++m) {
    Rng rng = Rng::derive(991177, {static_cast<std::uint64_t>(m)});
    SeqData base = make_empty_seq(law.law_meta(), req.dgp.K);
    law.draw_baseline(base, rng);
    for (int j = 0; j <= 4; ++j) {
      law.draw_treatment(base, j, rng);
      law.draw_slice(base, j + 1, rng);
    }
    for (int arm = 0; arm < 2; ++arm) {
      SeqData work = base;
      work.treatments[5] = arm;
      Rng rng_arm = Rng::derive(991177, {static_cast<std::uint64_t>(m), 7u + static_cast<std::uint64_t>(arm)});
      law.draw_slice(work, 6, rng_arm);
      mean[arm] += work.outcome.value[6];
    }
  }
  mean[0] /= static_cast<double>(M);
  mean[1] /= static_cast<double>(M);

  const double joint_se = std::sqrt(report.mc_se(0) * report.mc_se(0) +
                                    report.mc_se(1) * report.mc_se(1)) +
                          0.02;
  CHECK(std::abs(report.beta_star(0) - mean[0]) <= 3.0 * joint_se);
  CHECK(std::abs(report.beta_star(1) - (mean[1] - mean[0])) <= 3.0 * joint_se);
}

TEST_CASE("oracle: full-history window never touches the treatment mechanism") {
  OracleRequest req;
  req.dgp = reference_dgp();
  req.msm = reference_msm(10, 9);
  req.msm.terms = parse_msm_terms({"const", "a_lag:0", "a_lag:1", "a_lag:9"});
  req.msm.window = WindowSpec{10, {9}};
  req.grid.regimens = {{0, 0, 0, 0, 0, 0, 0, 0, 0, 0}, {1, 1, 1, 1, 1, 1, 1, 1, 1, 1},
                       {0, 0, 0, 0, 0, 0, 0, 0, 0, 1}, {1, 0, 0, 0, 0, 0, 0, 0, 0, 0}};
  req.draws = 5000;
  req.seed = 8;
  const OracleReport a = oracle_beta(req);
  OracleRequest req2 = req;
  req2.dgp.treatment_coef(0, 0) = -5.0;  // a completely different mechanism
  const OracleReport b = oracle_beta(req2);
  CHECK((a.beta_star - b.beta_star).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("oracle self-consistency: doubling the draws moves beta* within its error bars") {
  OracleRequest req;
  req.dgp = reference_dgp();
  req.msm = reference_msm();
  req.grid = RegimenGrid::full_product(req.dgp.levels, 3);
  req.draws = 30000;
  req.seed = 9;
  req.threads = 2;
  const OracleReport a = oracle_beta(req);
  req.draws = 60000;
  const OracleReport b = oracle_beta(req);
  for (int k = 0; k < 4; ++k) {
    const double joint = std::sqrt(a.mc_se(k) * a.mc_se(k) + b.mc_se(k) * b.mc_se(k));
    CHECK(std::abs(a.beta_star(k) - b.beta_star(k)) <= 3.0 * joint + 0.01);
  }
}

TEST_CASE("verify_appendix_b passes on distinct processes and catches an injected off-by-one") {
  // Three structurally different processes.
  std::vector<DgpSpec> dgps;
  dgps.push_back(reference_dgp());
  {
    DgpSpec two = reference_dgp();
    DgpChannel z;
    z.name = "z";
    z.family = GlmFamily::bernoulli_logit;
    z.features = fs({"const", "l:w:0"});
    z.coef = vec({-0.3, 0.5});
    two.channels.push_back(z);
    two.baseline.push_back({"z", DgpBaseline::Law::bernoulli, 0.4, 0.0});
    // Keep slice order (w, z): z may reference w at lag 0.
    two.outcome.features = fs({"a_prev:1", "l:w:1", "l:z:1"});
    two.outcome.coef = vec({0.8, 0.4, -0.6});
    dgps.push_back(two);
  }
  {
    // Three treatment levels.
    DgpSpec multi = reference_dgp();
    multi.levels = TreatmentLevels{{"low", "mid", "high"}, {0.0, 1.0, 2.0}};
    multi.treatment_coef = Eigen::MatrixXd::Zero(1, 2);
    multi.treatment_coef(0, 0) = 0.5;
    multi.treatment_coef(0, 1) = -0.4;
    dgps.push_back(multi);
  }

  const WindowSpec window = WindowSpec::all_targets(3, 9);
  for (std::size_t d = 0; d < dgps.size(); ++d) {
    const AppendixBReport report = verify_appendix_b(dgps[d], window, 50, 1000 + d);
    CHECK(report.mismatches.empty());
    CHECK(report.max_coef_diff <= 1e-10);
    CHECK(report.comparisons > 0);
  }

  // Mutation: a builder with the window treatments shifted by one.
  const ViewBuilder corrupted = [](const SeqData& seq, const WindowSpec& w, int t) {
    TView view = build_t_view(seq, w, t);
    for (std::size_t k = 0; k + 1 < view.window_treatments.size(); ++k)
      view.window_treatments[k] = view.window_treatments[k + 1];
    return view;
  };
  const AppendixBReport bad = verify_appendix_b(dgps[0], window, 50, 1000, corrupted);
  CHECK(!bad.passed());
  CHECK(!bad.mismatches.empty());
}

TEST_CASE("counterfactual engine shares the pre-window segment across regimens") {
  // With a deterministic outcome equation the split trajectories must agree
  // at the pre-window covariate, so V is identical across regimens.
  const DgpSpec dgp = reference_dgp();
  const DgpLaw law(dgp);
  MsmSpec msm = reference_msm();
  msm.vspec.atoms = {{"w", VAnchor::window_start}};
  msm.terms = parse_msm_terms({"const", "a_lag:0", "v:0"});
  const RegimenGrid grid = RegimenGrid::full_product(dgp.levels, 3);
  std::vector<double> v_seen;
  int last_t = -1;
  simulate_cf_chunk(law, msm, dgp.registry, grid, 0, 3, 17,
                    [&](int t, int g, const double* x, double, long, long) {
                      if (t != last_t) {
                        v_seen.clear();
                        last_t = t;
                      }
                      if (g == 0)
                        v_seen.push_back(x[2]);
                      else
                        CHECK(x[2] == v_seen.back());
                    });
}
