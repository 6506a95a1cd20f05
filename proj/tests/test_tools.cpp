#include <doctest.h>

#include <cmath>
#include <vector>

#include "cafkit/bench.hpp"
#include "cafkit/demo.hpp"
#include "cafkit/error.hpp"
#include "cafkit/verify.hpp"

using namespace cafkit;

namespace {

VerifyConfig small_verify() {
  VerifyConfig c;
  c.normalization_instances = 200;
  c.equivalence_instances = 50;
  c.gradient_instances = 20;
  c.kl_instances = 20;
  c.stationarity_instances = 10;
  c.shuffle_instances = 10;
  c.injectivity_trials = 20;
  return c;
}

const PropertyResult& find(const VerifyReport& r, const std::string& name) {
  for (const auto& p : r.properties)
    if (p.name == name) return p;
  FAIL("missing property " << name);
  return r.properties.front();
}

}  // namespace

TEST_CASE("verify: default small run passes") {
  const VerifyReport r = run_verify(small_verify());
  CHECK(r.all_pass());
  CHECK(r.failures() == 0);
  const PropertyResult& lin = find(r, "linear_vs_reference");
  CHECK(lin.metric == "max_rel_err");
  CHECK(lin.measured <= 1e-8);
  CHECK(r.to_text().find("linear_vs_reference") != std::string::npos);
}

TEST_CASE("verify: indivisible heads is a config error") {
  VerifyConfig c = small_verify();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(run_verify(c), ConfigError);
  c.heads = 8;
  c.threads = 0;
  CHECK_THROWS_AS(run_verify(c), ConfigError);
}

TEST_CASE("verify: sabotage breaks normalization") {
  VerifyConfig c = small_verify();
  c.sabotage = Sabotage::DropUniformTerm;
  const VerifyReport r = run_verify(c);
  CHECK_FALSE(r.all_pass());
  CHECK_FALSE(find(r, "normalization").pass);
  CHECK(parse_sabotage("drop-uniform") == Sabotage::DropUniformTerm);
  CHECK_THROWS_AS(parse_sabotage("everything"), ConfigError);
}

TEST_CASE("verify: report is independent of thread count") {
  VerifyConfig a = small_verify();
  VerifyConfig b = a;
  b.threads = 4;
  CHECK(run_verify(a).to_text() == run_verify(b).to_text());
}

TEST_CASE("max_rel_deviation") {
  const FeatureMatrix a = FeatureMatrix::from_rows({{10.0, 0.001}});
  const FeatureMatrix b = FeatureMatrix::from_rows({{10.5, 0.002}});
  CHECK(max_rel_deviation(a, b) == doctest::Approx(0.5 / 10.5));
  CHECK_THROWS_AS(max_rel_deviation(a, FeatureMatrix(2, 1)), ShapeError);
}

TEST_CASE("fit_loglog_slope") {
  const std::vector<double> x{1, 2, 4, 8, 16};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * v * v);
  CHECK(fit_loglog_slope(x, y) == doctest::Approx(2.0).epsilon(1e-12));
  const std::vector<double> flat{5, 5};
  CHECK_THROWS_AS(fit_loglog_slope(flat, flat), InvalidInputError);
  CHECK_THROWS_AS(fit_loglog_slope(std::vector<double>{1}, std::vector<double>{1}), InvalidInputError);
}

TEST_CASE("bench config validation") {
  BenchConfig c;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.seq_lens = {64, 32};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.seq_lens = {32, 64};
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.heads = 8;
  c.repeats = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("bench: N = 1 smoke run, memory guard and round trips") {
  BenchConfig c;
  c.seq_lens = {1, 64};
  c.methods = {AttentionMethod::Linear, AttentionMethod::Quadratic, AttentionMethod::SoftmaxBaseline};
  c.repeats = 3;
  const BenchResult r = run_bench(c);
  REQUIRE(r.records.size() == 6);
  CHECK(r.records[0].checksum == doctest::Approx(r.records[2].checksum).epsilon(1e-8));
  CHECK(r.records[0].checksum == doctest::Approx(r.records[4].checksum).epsilon(1e-8));
  for (const auto& rec : r.records) {
    CHECK(rec.status == "ok");
    CHECK(std::isfinite(rec.checksum));
    CHECK(rec.median_wall_time >= 0.0);
  }
  CHECK(parse_bench_csv(to_csv(r)) == r);
  CHECK(parse_bench_json(to_json(r)) == r);

  BenchConfig g = c;
  g.seq_lens = {100};
  g.methods = {AttentionMethod::Quadratic};
  g.memory_budget_bytes = 1000;
  const BenchResult skipped = run_bench(g);
  REQUIRE(skipped.records.size() == 1);
  CHECK(skipped.records[0].status == "skipped-memory-guard");
}

TEST_CASE("bench parsers reject malformed input") {
  CHECK_THROWS_AS(parse_bench_csv("nope\n"), ParseError);
  CHECK_THROWS_AS(parse_bench_json("{\"records\": ["), ParseError);
  CHECK_THROWS_AS(parse_bench_json("{\"records\": []}"), ParseError);
}

TEST_CASE("loss demo") {
  const Fixture fx = make_fixture(FixtureKind::Consistent, Seed{2024});
  SUBCASE("zero steps reports the initial losses") {
    LossDemoConfig cfg;
    cfg.steps = 0;
    const LossDemoReport r = run_loss_demo(fx.traces, fx.labels, cfg);
    REQUIRE(r.curve.size() == 1);
    CHECK(r.curve[0].sigma2_hard == 1.0);
    CHECK(r.curve[0].total == doctest::Approx(r.curve[0].hard + r.curve[0].soft).epsilon(1e-14));
    // W = 0, b = 0 gives uniform predictions
    CHECK(r.curve[0].hard > 0.0);
  }
  SUBCASE("consistent supervision drives both terms down") {
    const LossDemoReport r = run_loss_demo(fx.traces, fx.labels, {});
    CHECK(r.curve.size() == 501);
    CHECK(r.curve.back().hard < 0.05 * r.curve.front().hard);
    CHECK(r.curve.back().soft < 0.05 * r.curve.front().soft);
    CHECK(r.curve.back().sigma2_hard < 1.0);
    CHECK(r.curve.back().sigma2_soft < 1.0);
    CHECK(r.to_text() == run_loss_demo(fx.traces, fx.labels, {}).to_text());
  }
  SUBCASE("mismatched inputs") {
    std::vector<TokenSeq> fewer(fx.labels.begin(), fx.labels.end() - 1);
    CHECK_THROWS_AS(run_loss_demo(fx.traces, fewer, {}), InvalidInputError);
  }
}

TEST_CASE("fixtures") {
  const Fixture c = make_fixture(FixtureKind::Consistent, Seed{5});
  const Fixture k = make_fixture(FixtureKind::Conflicting, Seed{5});
  REQUIRE(c.labels.size() == 8);
  REQUIRE(k.labels.size() == 8);
  for (std::size_t n = 0; n < 8; ++n) {
    c.traces[n].validate();
    k.traces[n].validate();
    REQUIRE(c.traces[n].length() == c.labels[n].size());
    REQUIRE(k.traces[n].length() == k.labels[n].size());
    for (std::size_t l = 0; l < c.labels[n].size(); ++l)
      CHECK(c.traces[n].answer_dists[l][static_cast<std::size_t>(c.labels[n].ids[l])] == 1.0);
    for (std::size_t l = 0; l < k.labels[n].size(); ++l)
      CHECK(k.traces[n].answer_dists[l][static_cast<std::size_t>(k.labels[n].ids[l])] < 0.5);
  }
}

TEST_CASE("fuse demo") {
  SUBCASE("synthetic 896x896, tile 448, 8 + 16 prompt tokens") {
    const FuseDemoSummary s = run_fuse_demo({});
    CHECK(s.patch_count == 4);
    CHECK(s.visual_tokens == 5 * 64);
    CHECK(s.prompt_tokens == 24);
    CHECK(s.fused_rows == 24);
    CHECK(s.boundary == 24);
    CHECK(s.sequence_length == 48);
    CHECK(s.to_text() == run_fuse_demo({}).to_text());
  }
  SUBCASE("empty chain of thought leaves the question") {
    FuseDemoConfig cfg;
    cfg.question_len = 1;
    cfg.cot_len = 0;
    cfg.synthetic_size = 100;
    const FuseDemoSummary s = run_fuse_demo(cfg);
    CHECK(s.prompt_tokens == 1);
    CHECK(s.patch_count == 1);
  }
  SUBCASE("image-query role") {
    FuseDemoConfig cfg;
    cfg.synthetic_size = 300;
    cfg.role = FusionRole::ImageQuery;
    const FuseDemoSummary s = run_fuse_demo(cfg);
    CHECK(s.fused_rows == s.visual_tokens);
  }
  SUBCASE("unreadable image") {
    FuseDemoConfig cfg;
    cfg.image = "/nonexistent/image.ppm";
    CHECK_THROWS_AS(run_fuse_demo(cfg), Error);
  }
}
