#include <doctest.h>

#include <cmath>
#include <vector>

#include "cafkit/caf.hpp"
#include "cafkit/error.hpp"
#include "cafkit/verify.hpp"

using namespace cafkit;

namespace {

double phi(KernelKind k, double x) {
  switch (k) {
    case KernelKind::Identity: return x;
    case KernelKind::ReLU: return x > 0 ? x : 0.0;
    case KernelKind::EluPlusOne: return x > 0 ? x + 1.0 : std::exp(x);
  }
  return x;
}

// Double-loop recomputation: score, mean, weight, weighted sum.
FeatureMatrix brute_force(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                          KernelKind kern) {
  const std::size_t n = k.rows();
  FeatureMatrix out(q.rows(), v.cols());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<double> score(n);
    double mean = 0;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < q.cols(); ++c) s += phi(kern, q(i, c)) * phi(kern, k(j, c));
      score[j] = s;
      mean += s / static_cast<double>(n);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double w = score[j] - mean + 1.0 / static_cast<double>(n);
      for (std::size_t c = 0; c < v.cols(); ++c) out(i, c) += w * v(j, c);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("weights: worked example with a negative weight") {
  const FeatureMatrix k = FeatureMatrix::from_rows({{1, 0}, {0, 1}, {2, 0}});
  const std::vector<double> q{1, 0};
  const AttentionWeights w = attention_weights(q, k, KernelKind::Identity);
  REQUIRE(w.values.size() == 3);
  CHECK(w.values[0] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(w.values[1] == doctest::Approx(-2.0 / 3).epsilon(1e-15));
  CHECK(w.values[2] == doctest::Approx(4.0 / 3).epsilon(1e-15));
  CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("weights: single key is exactly one") {
  for (KernelKind kern : kAllKernels) {
    const FeatureMatrix k = seeded_random_matrix(1, 5, Seed{2});
    const FeatureMatrix q = seeded_random_matrix(1, 5, Seed{3});
    const AttentionWeights w = attention_weights(q.row(0), k, kern);
    REQUIRE(w.values.size() == 1);
    CHECK(w.values[0] == 1.0);
  }
}

TEST_CASE("weights: identical keys give uniform weights") {
  const FeatureMatrix row = seeded_random_matrix(1, 6, Seed{8});
  std::vector<double> data;
  for (int i = 0; i < 4; ++i) data.insert(data.end(), row.values().begin(), row.values().end());
  const FeatureMatrix k(4, 6, data);
  const FeatureMatrix q = seeded_random_matrix(1, 6, Seed{9});
  for (double w : attention_weights(q.row(0), k, KernelKind::ReLU).values) CHECK(w == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("weights: dimension mismatch") {
  const std::vector<double> q{1, 2, 3};
  CHECK_THROWS_AS(attention_weights(q, FeatureMatrix(2, 2), KernelKind::Identity), ShapeError);
}

TEST_CASE("caf_reference matches brute force on Q 4x8, K 6x8, V 6x8") {
  const FeatureMatrix q = seeded_random_matrix(4, 8, Seed{7});
  const FeatureMatrix k = seeded_random_matrix(6, 8, Seed{8});
  const FeatureMatrix v = seeded_random_matrix(6, 8, Seed{9});
  for (KernelKind kern : kAllKernels) {
    CHECK(max_rel_deviation(caf_reference(q, k, v, kern), brute_force(q, k, v, kern)) < 1e-13);
  }
}

TEST_CASE("caf_linear matches caf_reference on Q 16x32, K 128x32") {
  const FeatureMatrix q = seeded_random_matrix(16, 32, Seed{11});
  const FeatureMatrix k = seeded_random_matrix(128, 32, Seed{12});
  const FeatureMatrix v = seeded_random_matrix(128, 32, Seed{13});
  for (KernelKind kern : kAllKernels) {
    CHECK(max_rel_deviation(caf_linear(q, k, v, kern), caf_reference(q, k, v, kern)) <= 1e-8);
  }
}

TEST_CASE("degenerate outputs") {
  const FeatureMatrix q = seeded_random_matrix(3, 4, Seed{1});
  const FeatureMatrix k = seeded_random_matrix(1, 4, Seed{2});
  const FeatureMatrix v = seeded_random_matrix(1, 5, Seed{3});
  const FeatureMatrix lin = caf_linear(q, k, v, KernelKind::Identity);
  const FeatureMatrix ref = caf_reference(q, k, v, KernelKind::Identity);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(ref(r, c) == v(0, c));
      CHECK(lin(r, c) == doctest::Approx(v(0, c)).epsilon(1e-14));
    }

  const FeatureMatrix zero_v(7, 3);
  const FeatureMatrix out = caf_linear(q, seeded_random_matrix(7, 4, Seed{5}), zero_v, KernelKind::ReLU);
  for (double x : out.values()) CHECK(x == 0.0);
}

TEST_CASE("identical keys give the value mean") {
  const FeatureMatrix row = seeded_random_matrix(1, 8, Seed{21});
  std::vector<double> data;
  for (int i = 0; i < 10; ++i) data.insert(data.end(), row.values().begin(), row.values().end());
  const FeatureMatrix k(10, 8, data);
  const FeatureMatrix v = seeded_random_matrix(10, 3, Seed{22});
  const FeatureMatrix out = caf_linear(seeded_random_matrix(4, 8, Seed{23}), k, v, KernelKind::EluPlusOne);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t j = 0; j < 10; ++j) mean += v(j, c) / 10.0;
    for (std::size_t r = 0; r < 4; ++r) CHECK(std::abs(out(r, c) - mean) <= 1e-10);
  }
}

TEST_CASE("shape errors") {
  const FeatureMatrix a(2, 3), b(4, 3), c(5, 3);
  CHECK_THROWS_AS(caf_linear(a, b, c, KernelKind::Identity), ShapeError);
  CHECK_THROWS_AS(caf_reference(a, FeatureMatrix(4, 2), b, KernelKind::Identity), ShapeError);
}

TEST_CASE("multi-head") {
  const FeatureMatrix q = seeded_random_matrix(5, 64, Seed{3});
  const FeatureMatrix k = seeded_random_matrix(40, 64, Seed{4});
  const FeatureMatrix v = seeded_random_matrix(40, 64, Seed{5});

  SUBCASE("one head is bitwise caf_linear") {
    CHECK(multi_head_caf(q, k, v, {64, 1, KernelKind::ReLU, std::nullopt}) ==
          caf_linear(q, k, v, KernelKind::ReLU));
  }
  SUBCASE("eight heads equal the per-head reference concatenation") {
    const FeatureMatrix got = multi_head_caf(q, k, v, {64, 8, KernelKind::Identity, std::nullopt});
    for (std::size_t h = 0; h < 8; ++h) {
      const FeatureMatrix ref = brute_force(q.col_slice(h * 8, 8), k.col_slice(h * 8, 8),
                                            v.col_slice(h * 8, 8), KernelKind::Identity);
      CHECK(max_rel_deviation(got.col_slice(h * 8, 8), ref) <= 1e-8);
    }
  }
  SUBCASE("indivisible model_dim") {
    CHECK_THROWS_AS(multi_head_caf(q, k, v, {64, 3, KernelKind::Identity, std::nullopt}), ConfigError);
    CHECK_THROWS_AS((CafConfig{64, 0, KernelKind::Identity, std::nullopt}.validate()), ConfigError);
  }
  SUBCASE("seeded projections are deterministic and change the output") {
    const CafConfig proj{64, 8, KernelKind::Identity, Seed{99}};
    CHECK(multi_head_caf(q, k, v, proj) == multi_head_caf(q, k, v, proj));
    CHECK_FALSE(multi_head_caf(q, k, v, proj) ==
                multi_head_caf(q, k, v, {64, 8, KernelKind::Identity, std::nullopt}));
  }
}

TEST_CASE("methods agree on a single key") {
  const FeatureMatrix q = seeded_random_matrix(1, 16, Seed{1});
  const FeatureMatrix k = seeded_random_matrix(1, 16, Seed{2});
  const FeatureMatrix v = seeded_random_matrix(1, 16, Seed{3});
  const CafConfig cfg{16, 8, KernelKind::Identity, std::nullopt};
  const FeatureMatrix lin = multi_head_attention(q, k, v, cfg, AttentionMethod::Linear);
  CHECK(max_rel_deviation(multi_head_attention(q, k, v, cfg, AttentionMethod::Quadratic), lin) <= 1e-8);
  CHECK(max_rel_deviation(multi_head_attention(q, k, v, cfg, AttentionMethod::SoftmaxBaseline), lin) <= 1e-8);
  CHECK(parse_method("softmax") == AttentionMethod::SoftmaxBaseline);
  for (AttentionMethod m : {AttentionMethod::Linear, AttentionMethod::Quadratic, AttentionMethod::SoftmaxBaseline})
    CHECK(parse_method(to_string(m)) == m);
}

TEST_CASE("softmax_attention against direct evaluation") {
  const FeatureMatrix q = seeded_random_matrix(2, 4, Seed{1});
  const FeatureMatrix k = seeded_random_matrix(3, 4, Seed{2});
  const FeatureMatrix v = seeded_random_matrix(3, 2, Seed{3});
  const FeatureMatrix out = softmax_attention(q, k, v);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> e(3);
    double z = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) s += q(i, c) * k(j, c);
      e[j] = std::exp(s);
      z += e[j];
    }
    for (std::size_t c = 0; c < 2; ++c) {
      double want = 0;
      for (std::size_t j = 0; j < 3; ++j) want += e[j] / z * v(j, c);
      CHECK(out(i, c) == doctest::Approx(want).epsilon(1e-13));
    }
  }
}

TEST_CASE("fuse") {
  const CafConfig cfg{32, 8, KernelKind::Identity, std::nullopt};

  SUBCASE("one text token, one visual token") {
    const FeatureMatrix vis = seeded_random_matrix(1, 32, Seed{1});
    const FeatureMatrix txt = seeded_random_matrix(1, 32, Seed{2});
    const FusedSequence f = fuse(vis, txt, cfg);
    REQUIRE(f.tokens.rows() == 2);
    CHECK(f.boundary == 1);
    for (std::size_t c = 0; c < 32; ++c) {
      CHECK(f.tokens(0, c) == doctest::Approx(vis(0, c)).epsilon(1e-14));
      CHECK(f.tokens(1, c) == txt(0, c));
    }
  }
  SUBCASE("random visual 64x32, text 8x32") {
    const FeatureMatrix vis = seeded_random_matrix(64, 32, Seed{3});
    const FeatureMatrix txt = seeded_random_matrix(8, 32, Seed{4});
    const FusedSequence f = fuse(vis, txt, cfg);
    const FeatureMatrix block = multi_head_caf(txt, vis, vis, cfg);
    REQUIRE(f.boundary == block.rows());
    REQUIRE(f.tokens.rows() == block.rows() + txt.rows());
    for (std::size_t r = 0; r < block.rows(); ++r)
      for (std::size_t c = 0; c < 32; ++c) CHECK(f.tokens(r, c) == block(r, c));
    for (std::size_t r = 0; r < txt.rows(); ++r)
      for (std::size_t c = 0; c < 32; ++c) CHECK(f.tokens(f.boundary + r, c) == txt(r, c));

    const FusedSequence again = fuse(vis, txt, cfg);
    CHECK(again.tokens == f.tokens);
    CHECK(again.boundary == f.boundary);
  }
  SUBCASE("image-query role keeps one row per visual token") {
    const FeatureMatrix vis = seeded_random_matrix(12, 32, Seed{5});
    const FeatureMatrix txt = seeded_random_matrix(5, 32, Seed{6});
    const FusedSequence f = fuse(vis, txt, cfg, FusionRole::ImageQuery);
    CHECK(f.boundary == 12);
    CHECK(f.tokens.rows() == 17);
  }
  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(fuse(FeatureMatrix(3, 32), FeatureMatrix(2, 16), cfg), ShapeError);
  }
}

TEST_CASE("shift invariance of weights with a constant coordinate") {
  const FeatureMatrix q = seeded_random_matrix(1, 6, Seed{31});
  const FeatureMatrix k = seeded_random_matrix(9, 6, Seed{32});
  std::vector<double> q2(q.row(0).begin(), q.row(0).end());
  q2.push_back(1.0);
  FeatureMatrix k2(9, 7);
  for (std::size_t j = 0; j < 9; ++j) {
    for (std::size_t c = 0; c < 6; ++c) k2(j, c) = k(j, c);
    k2(j, 6) = 3.7;
  }
  const auto a = attention_weights(q.row(0), k, KernelKind::Identity).values;
  const auto b = attention_weights(q2, k2, KernelKind::Identity).values;
  for (std::size_t j = 0; j < 9; ++j) CHECK(b[j] == doctest::Approx(a[j]).epsilon(1e-12));
}

TEST_CASE("sabotaged weights no longer sum to one") {
  const FeatureMatrix q = seeded_random_matrix(1, 4, Seed{1});
  const FeatureMatrix k = seeded_random_matrix(5, 4, Seed{2});
  CHECK(std::abs(fault::attention_weights_without_uniform_term(q.row(0), k, KernelKind::Identity).sum() - 1.0) > 0.5);
}
