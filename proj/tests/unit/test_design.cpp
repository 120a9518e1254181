#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "hrmsm/design.hpp"
#include "hrmsm/features.hpp"

using namespace hrmsm;
using namespace hrmsm::testing;

namespace {

PanelMeta meta1() {
  PanelMeta meta;
  meta.covariate_names = {"w"};
  meta.levels = binary_levels();
  meta.outcome_name = "y";
  return meta;
}

SeqData seq_with_scores(const std::vector<int>& a, int n_cov = 1) {
  SeqData seq;
  seq.treatments = a;
  const int K = static_cast<int>(a.size()) - 1;
  for (int j = 0; j <= K + 1; ++j)
    seq.covariates.push_back(std::vector<double>(static_cast<std::size_t>(n_cov), 0.5 * j));
  seq.outcome.kind = OutcomeKind::continuous;
  seq.outcome.value.assign(static_cast<std::size_t>(K) + 2, 0.0);
  for (int j = 1; j <= K + 1; ++j) seq.outcome.value[static_cast<std::size_t>(j)] = j;
  return seq;
}

}  // namespace

TEST_CASE("time function built-ins") {
  TimeFnRegistry registry;
  // year: floor((t+1)/4); season: 1 when (t+1) mod 4 < 2
  CHECK(registry.eval("year", 0) == 0.0);
  CHECK(registry.eval("year", 3) == 1.0);
  CHECK(registry.eval("year", 70) == 17.0);
  CHECK(registry.eval("season", 0) == 1.0);   // (t+1)=1 -> 1 mod 4 = 1 < 2
  CHECK(registry.eval("season", 1) == 0.0);   // 2 mod 4 = 2
  CHECK(registry.eval("season", 3) == 1.0);   // 4 mod 4 = 0
  CHECK_THROWS_AS(registry.eval("nope", 0), ValidationError);
}

TEST_CASE("design row: intercept only") {
  const SeqData seq = seq_with_scores({0, 1, 0, 1});
  MsmSpec msm;
  msm.terms = parse_msm_terms({"const"});
  msm.window = WindowSpec::all_targets(2, 3);
  TimeFnRegistry registry;
  const TView view = build_t_view(seq, msm.window, 2);
  const Eigen::VectorXd row = design_row(view, msm, registry, meta1());
  REQUIRE(row.size() == 1);
  CHECK(row(0) == 1.0);
}

TEST_CASE("design row: pooled binomial-style model with seven terms") {
  // terms (const, a_mean, f1, f2, a_mean f1, a_mean f2, a_mean f1 f2), s = 4
  const SeqData seq = seq_with_scores({1, 1, 0, 1, 0, 1, 1, 0});
  MsmSpec msm;
  msm.mode = MsmMode::pooled;
  msm.terms = parse_msm_terms({"const", "a_mean", "fn:year", "fn:season", "a_mean*fn:year",
                               "a_mean*fn:season", "a_mean*fn:year*fn:season"});
  msm.window = WindowSpec::all_targets(4, 7);
  TimeFnRegistry registry;
  const int t = 6;
  const TView view = build_t_view(seq, msm.window, t);
  const Eigen::VectorXd row = design_row(view, msm, registry, meta1());
  REQUIRE(row.size() == 7);
  // a_mean = (a(3)+a(4)+a(5)+a(6))/4 = (1+0+1+1)/4
  const double am = 0.75;
  const double f1 = std::floor((t + 1) / 4.0);
  const double f2 = ((t + 1) % 4) < 2 ? 1.0 : 0.0;
  CHECK(row(0) == 1.0);
  CHECK(row(1) == doctest::Approx(am));
  CHECK(row(2) == doctest::Approx(f1));
  CHECK(row(3) == doctest::Approx(f2));
  CHECK(row(4) == doctest::Approx(am * f1));
  CHECK(row(5) == doctest::Approx(am * f2));
  CHECK(row(6) == doctest::Approx(am * f1 * f2));
}

TEST_CASE("design row: zero exposure scores") {
  const SeqData seq = seq_with_scores({0, 0, 0, 0});
  MsmSpec msm;
  msm.terms = parse_msm_terms({"a_mean", "a_lag:0"});
  msm.window = WindowSpec::all_targets(2, 3);
  TimeFnRegistry registry;
  const TView view = build_t_view(seq, msm.window, 3);
  const Eigen::VectorXd row = design_row(view, msm, registry, meta1());
  CHECK(row(0) == 0.0);
  CHECK(row(1) == 0.0);
}

TEST_CASE("a_lag(k) is the treatment k steps before the window end") {
  TreatmentLevels levels{{"lo", "mid", "hi"}, {10.0, 20.0, 30.0}};
  PanelMeta meta;
  meta.covariate_names = {};
  meta.levels = levels;
  SeqData seq;
  seq.treatments = {0, 1, 2};  // scores 10, 20, 30
  for (int j = 0; j <= 3; ++j) seq.covariates.push_back({});
  seq.outcome.kind = OutcomeKind::continuous;
  seq.outcome.value.assign(5, 0.0);
  MsmSpec msm;
  msm.terms = parse_msm_terms({"a_lag:0", "a_lag:1", "a_lag:2", "a_mean"});
  msm.window = WindowSpec::all_targets(3, 2);
  TimeFnRegistry registry;
  const TView view = build_t_view(seq, msm.window, 2);
  const Eigen::VectorXd row = design_row(view, msm, registry, meta);
  CHECK(row(0) == 30.0);  // a(t)
  CHECK(row(1) == 20.0);  // a(t-1)
  CHECK(row(2) == 10.0);  // a(t-2)
  CHECK(row(3) == doctest::Approx(20.0));
}

TEST_CASE("regimen override replaces the observed window") {
  const SeqData seq = seq_with_scores({1, 1, 1, 1});
  MsmSpec msm;
  msm.terms = parse_msm_terms({"a_mean", "a_lag:0"});
  msm.window = WindowSpec::all_targets(2, 3);
  TimeFnRegistry registry;
  const TView view = build_t_view(seq, msm.window, 3);
  const std::vector<int> same = {view.window_treatments[0], view.window_treatments[1]};
  const Eigen::VectorXd no_override = design_row(view, msm, registry, meta1());
  const Eigen::VectorXd with_same =
      design_row(view, msm, registry, meta1(), std::span<const int>(same));
  CHECK(no_override == with_same);
  const std::vector<int> zero = {0, 0};
  const Eigen::VectorXd with_zero =
      design_row(view, msm, registry, meta1(), std::span<const int>(zero));
  CHECK(with_zero(0) == 0.0);
  CHECK(with_zero(1) == 0.0);
  const std::vector<int> bad = {0};
  CHECK_THROWS_AS(design_row(view, msm, registry, meta1(), std::span<const int>(bad)),
                  ValidationError);
}

TEST_CASE("design rows depend only on window, V, and t") {
  // Two sequences identical on the window and V but different elsewhere.
  SeqData a = seq_with_scores({0, 1, 1, 0, 1, 1});
  SeqData b = a;
  b.covariates[1][0] += 9.0;
  b.outcome.value[2] += 5.0;
  MsmSpec msm;
  msm.terms = parse_msm_terms({"const", "a_mean", "a_lag:0", "v:0"});
  msm.window = WindowSpec::all_targets(2, 5);
  msm.vspec.atoms = {{"w", VAnchor::window_start}};
  TimeFnRegistry registry;
  const TView va = build_t_view(a, msm.window, 4);
  const TView vb = build_t_view(b, msm.window, 4);
  CHECK(design_row(va, msm, registry, meta1()) == design_row(vb, msm, registry, meta1()));
}

TEST_CASE("a_mean equals the average of the a_lag columns") {
  const SeqData seq = seq_with_scores({1, 0, 1, 1, 0, 1, 0, 1});
  MsmSpec msm;
  msm.terms = parse_msm_terms({"a_mean", "a_lag:0", "a_lag:1", "a_lag:2"});
  msm.window = WindowSpec::all_targets(3, 7);
  TimeFnRegistry registry;
  for (int t : msm.window.targets) {
    const TView view = build_t_view(seq, msm.window, t);
    const Eigen::VectorXd row = design_row(view, msm, registry, meta1());
    CHECK(row(0) == doctest::Approx((row(1) + row(2) + row(3)) / 3.0));
  }
}

TEST_CASE("mean_response") {
  const double row[] = {1.0, 2.0};
  const double beta[] = {0.5, 0.25};
  CHECK(mean_response({row, 2}, {beta, 2}, MsmLink::identity) == doctest::Approx(1.0));
  const double zero[] = {0.0, 0.0};
  CHECK(mean_response({zero, 2}, {beta, 2}, MsmLink::logit_binary) == doctest::Approx(0.5));
  const double big[] = {800.0, 0.0};
  const double one[] = {1.0, 0.0};
  const double hi = mean_response({big, 2}, {one, 2}, MsmLink::logit_binary);
  CHECK(hi == doctest::Approx(1.0));
  CHECK(std::isfinite(hi));
  const double lo = mean_response({big, 2}, {vec({-1.0, 0.0}).data(), 2}, MsmLink::logit_binary);
  CHECK(lo == doctest::Approx(0.0));
}

TEST_CASE("msm validation rules") {
  PanelMeta meta = meta1();
  TimeFnRegistry registry;
  MsmSpec msm;
  msm.window = WindowSpec::all_targets(2, 5);

  SUBCASE("stratified mode forbids time atoms") {
    msm.mode = MsmMode::stratified;
    msm.terms = parse_msm_terms({"const", "t"});
    CHECK_THROWS_AS(msm.validate(meta, 5, registry), ValidationError);
    msm.terms = parse_msm_terms({"const", "fn:year"});
    CHECK_THROWS_AS(msm.validate(meta, 5, registry), ValidationError);
    msm.terms = parse_msm_terms({"const", "a_lag:0"});
    CHECK_NOTHROW(msm.validate(meta, 5, registry));
  }
  SUBCASE("binomial link requires a counts outcome") {
    msm.link = MsmLink::logit_binomial;
    msm.terms = parse_msm_terms({"const"});
    CHECK_THROWS_AS(msm.validate(meta, 5, registry), ValidationError);
    meta.outcome_kind = OutcomeKind::counts;
    CHECK_NOTHROW(msm.validate(meta, 5, registry));
  }
  SUBCASE("a_lag must stay inside the window") {
    msm.terms = parse_msm_terms({"a_lag:2"});
    CHECK_THROWS_AS(msm.validate(meta, 5, registry), ValidationError);
  }
  SUBCASE("v index must exist") {
    msm.terms = parse_msm_terms({"v:0"});
    CHECK_THROWS_AS(msm.validate(meta, 5, registry), ValidationError);
  }
}

TEST_CASE("term parsing rejects malformed atoms") {
  CHECK_THROWS_AS(parse_msm_term("a_lag"), ValidationError);
  CHECK_THROWS_AS(parse_msm_term("a_lag:x"), ValidationError);
  CHECK_THROWS_AS(parse_msm_term("what:1"), ValidationError);
  CHECK_THROWS_AS(parse_msm_term("const**const"), ValidationError);
  CHECK_NOTHROW(parse_msm_term("a_mean*fn:year*fn:season"));
}

TEST_CASE("feature evaluation: lags, padding, same-slice predecessors") {
  PanelMeta meta;
  meta.covariate_names = {"w", "z"};
  meta.levels = binary_levels();
  meta.outcome_name = "y";
  TimeFnRegistry registry;

  SeqData seq;
  seq.treatments = {1, 0, 1};
  for (int j = 0; j <= 3; ++j) seq.covariates.push_back({1.0 * j, 10.0 * j});
  seq.outcome.kind = OutcomeKind::continuous;
  seq.outcome.value = {0.0, 100.0, 200.0, 300.0};

  SUBCASE("treatment-model features allow lag-0 covariates") {
    const auto cf = compile_features(fs({"const", "j", "a_prev:1", "l:w:0", "l:z:1", "l:y:1"}),
                                     meta, registry, FeatureRole::treatment);
    double row[6];
    eval_features(cf, meta, registry, seq, 2, row);
    CHECK(row[0] == 1.0);
    CHECK(row[1] == 2.0);
    CHECK(row[2] == 0.0);   // a(1)
    CHECK(row[3] == 2.0);   // w(2)
    CHECK(row[4] == 10.0);  // z(1)
    CHECK(row[5] == 100.0); // y(1)
  }
  SUBCASE("padding carries the earliest value back") {
    const auto cf = compile_features(fs({"a_prev:3", "l:w:5", "l:y:4"}), meta, registry,
                                     FeatureRole::treatment);
    double row[3];
    eval_features(cf, meta, registry, seq, 1, row);
    CHECK(row[0] == 1.0);    // a(-2) -> a(0)
    CHECK(row[1] == 0.0);    // w(-4) -> w(0)
    CHECK(row[2] == 100.0);  // y(-3) -> y(1)
  }
  SUBCASE("a_mean_prev averages the lag range") {
    const auto cf =
        compile_features(fs({"a_mean_prev:1:3"}), meta, registry, FeatureRole::treatment);
    double row[1];
    eval_features(cf, meta, registry, seq, 3, row);
    CHECK(row[0] == doctest::Approx((1.0 + 0.0 + 1.0) / 3.0));
  }
  SUBCASE("transition role rejects same-slice successors") {
    CHECK_THROWS_AS(compile_features(fs({"l:z:0"}), meta, registry, FeatureRole::transition, 1),
                    ValidationError);
    CHECK_NOTHROW(compile_features(fs({"l:w:0"}), meta, registry, FeatureRole::transition, 1));
  }
  SUBCASE("unknown names are rejected") {
    CHECK_THROWS_AS(compile_features(fs({"l:nope:1"}), meta, registry, FeatureRole::treatment),
                    ValidationError);
    CHECK_THROWS_AS(compile_features(fs({"fn:nope"}), meta, registry, FeatureRole::treatment),
                    ValidationError);
  }
  SUBCASE("outcome lag 0 is rejected") {
    CHECK_THROWS_AS(compile_features(fs({"l:y:0"}), meta, registry, FeatureRole::treatment),
                    ValidationError);
  }
  SUBCASE("view-based evaluation matches sequence-based evaluation") {
    const auto cf = compile_features(fs({"const", "a_prev:1", "a_prev:2", "l:w:0", "l:w:1",
                                         "l:z:2", "l:y:1", "a_mean_prev:1:2", "j"}),
                                     meta, registry, FeatureRole::treatment);
    const WindowSpec window = WindowSpec::all_targets(2, 2);
    for (int t : window.targets) {
      const TView view = build_t_view(seq, window, t);
      for (int j = t - 1; j <= t; ++j) {
        double a[9], b[9];
        eval_features(cf, meta, registry, seq, j, a);
        eval_features_view(cf, meta, registry, view, j, b);
        for (int k = 0; k < 9; ++k) CHECK(a[k] == b[k]);
      }
    }
  }
}
