#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "cafkit/error.hpp"
#include "cafkit/vision.hpp"

using namespace cafkit;

namespace {

ImageTensor random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  SeededRng rng(Seed{seed});
  ImageTensor img(h, w, c);
  for (double& v : img.values()) v = rng.uniform();
  return img;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("adaptive_encode tile counts") {
  const PatchSet one = adaptive_encode(ImageTensor(448, 448), 448, 448);
  CHECK(one.patches.size() == 1);
  CHECK(one.global.height() == 448);

  const PatchSet four = adaptive_encode(random_image(896, 896, 3, 1), 448, 448);
  CHECK(four.patches.size() == 4);
  CHECK(four.tile_rows == 2);
  CHECK(four.tile_cols == 2);
}

TEST_CASE("adaptive_encode pads the last tile with zeros") {
  SeededRng rng(Seed{2});
  ImageTensor img(500, 448);
  for (double& v : img.values()) v = 0.1 + 0.9 * rng.uniform();
  const PatchSet ps = adaptive_encode(img, 448, 448);
  REQUIRE(ps.patches.size() == 2);
  const ImageTensor& second = ps.patches[1];
  CHECK(second.height() == 448);
  for (std::size_t y = 0; y < 448; ++y)
    for (std::size_t x = 0; x < 448; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        if (y < 52) {
          REQUIRE(second(y, x, c) == img(448 + y, x, c));
        } else {
          REQUIRE(second(y, x, c) == 0.0);
        }
      }
  // first tile copies the top rows verbatim
  CHECK(ps.patches[0](447, 447, 2) == img(447, 447, 2));
}

TEST_CASE("adaptive_encode tile count formula") {
  for (std::size_t h : {1, 7, 8, 9, 30})
    for (std::size_t w : {1, 5, 16, 17})
      CHECK(adaptive_encode(ImageTensor(h, w), 8, 4).patches.size() == ((h + 7) / 8) * ((w + 7) / 8));
  CHECK_THROWS_AS(adaptive_encode(ImageTensor(4, 4), 0, 4), InvalidInputError);
  CHECK_THROWS_AS(ImageTensor(0, 4), InvalidInputError);
}

TEST_CASE("area_resize") {
  const ImageTensor img = random_image(6, 9, 3, 3);
  SUBCASE("same size is the identity") { CHECK(area_resize(img, 6, 9) == img); }
  SUBCASE("integer factor is block averaging") {
    const ImageTensor r = area_resize(img, 2, 3);
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 3; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double s = 0;
          for (std::size_t dy = 0; dy < 3; ++dy)
            for (std::size_t dx = 0; dx < 3; ++dx) s += img(3 * y + dy, 3 * x + dx, c);
          CHECK(r(y, x, c) == doctest::Approx(s / 9).epsilon(1e-14));
        }
  }
  SUBCASE("mean is preserved for non-integer factors") {
    const ImageTensor r = area_resize(img, 4, 5);
    for (std::size_t c = 0; c < 3; ++c) {
      double a = 0, b = 0;
      for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 9; ++x) a += img(y, x, c) / 54.0;
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 5; ++x) b += r(y, x, c) / 20.0;
      CHECK(b == doctest::Approx(a).epsilon(1e-13));
    }
  }
}

TEST_CASE("pixel_shuffle") {
  SUBCASE("r = 1 is the identity") {
    const ImageTensor f = random_image(3, 5, 2, 4);
    CHECK(pixel_shuffle(f, 1) == f);
  }
  SUBCASE("4x4x1 values 0..15") {
    ImageTensor f(4, 4, 1);
    for (std::size_t i = 0; i < 16; ++i) f.values()[i] = static_cast<double>(i);
    const ImageTensor s = pixel_shuffle(f, 2);
    CHECK(s.height() == 2);
    CHECK(s.width() == 2);
    CHECK(s.channels() == 4);
    CHECK(s(0, 0, 0) == 0);
    CHECK(s(0, 0, 1) == 1);
    CHECK(s(0, 0, 2) == 4);
    CHECK(s(0, 0, 3) == 5);
    CHECK(s(1, 1, 0) == 10);
    CHECK(s(1, 1, 3) == 15);
  }
  SUBCASE("round trip 8x8x3") {
    const ImageTensor f = random_image(8, 8, 3, 5);
    CHECK(inverse_pixel_shuffle(pixel_shuffle(f, 2), 2) == f);
    CHECK(pixel_shuffle(inverse_pixel_shuffle(pixel_shuffle(f, 4), 4), 4) == pixel_shuffle(f, 4));
  }
  SUBCASE("index oracle") {
    const ImageTensor f = random_image(6, 9, 2, 6);
    const ImageTensor s = pixel_shuffle(f, 3);
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 3; ++x)
        for (std::size_t dy = 0; dy < 3; ++dy)
          for (std::size_t dx = 0; dx < 3; ++dx)
            for (std::size_t c = 0; c < 2; ++c)
              REQUIRE(s(y, x, (dy * 3 + dx) * 2 + c) == f(y * 3 + dy, x * 3 + dx, c));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(pixel_shuffle(ImageTensor(5, 4, 1), 2), ShapeError);
    CHECK_THROWS_AS(inverse_pixel_shuffle(ImageTensor(2, 2, 3), 2), ShapeError);
  }
}

TEST_CASE("mlp_adapter") {
  const FeatureMatrix feat = seeded_random_matrix(4, 16, Seed{1});

  SUBCASE("zero weights give zero output") {
    const AdapterWeights w{FeatureMatrix(16, 8), std::vector<double>(8), FeatureMatrix(8, 3),
                           std::vector<double>(3), Activation::Gelu};
    const FeatureMatrix out = mlp_adapter(feat, w);
    for (double v : out.values()) CHECK(v == 0.0);
  }
  SUBCASE("identity layers reproduce the input") {
    const AdapterWeights w{FeatureMatrix::identity(16), std::vector<double>(16),
                           FeatureMatrix::identity(16), std::vector<double>(16), Activation::Identity};
    CHECK(mlp_adapter(feat, w) == feat);
  }
  SUBCASE("straight-line forward oracle") {
    AdapterWeights w = AdapterWeights::seeded(16, 12, 5, Seed{77});
    for (std::size_t j = 0; j < 12; ++j) w.b1[j] = 0.01 * static_cast<double>(j);
    for (std::size_t j = 0; j < 5; ++j) w.b2[j] = -0.02 * static_cast<double>(j);
    const FeatureMatrix out = mlp_adapter(feat, w);
    REQUIRE(out.rows() == 4);
    REQUIRE(out.cols() == 5);
    for (std::size_t r = 0; r < 4; ++r) {
      std::vector<double> hid(12);
      for (std::size_t j = 0; j < 12; ++j) {
        double s = w.b1[j];
        for (std::size_t i = 0; i < 16; ++i) s += feat(r, i) * w.w1(i, j);
        hid[j] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
      }
      for (std::size_t o = 0; o < 5; ++o) {
        double s = w.b2[o];
        for (std::size_t j = 0; j < 12; ++j) s += hid[j] * w.w2(j, o);
        CHECK(out(r, o) == doctest::Approx(s).epsilon(1e-12));
      }
    }
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(mlp_adapter(feat, AdapterWeights::seeded(8, 4, 2, Seed{1})), ShapeError);
    AdapterWeights bad = AdapterWeights::seeded(16, 4, 2, Seed{1});
    bad.b1.pop_back();
    CHECK_THROWS_AS(mlp_adapter(feat, bad), ShapeError);
  }
  SUBCASE("seeded init is deterministic") {
    const AdapterWeights a = AdapterWeights::seeded(16, 4, 2, Seed{5});
    const AdapterWeights b = AdapterWeights::seeded(16, 4, 2, Seed{5});
    CHECK(a.w1 == b.w1);
    CHECK(a.w2 == b.w2);
  }
}

TEST_CASE("visual encoder token count") {
  const VisualEncoderConfig cfg;
  CHECK(tokens_per_image(cfg) == 64);
  const PatchSet ps = adaptive_encode(random_image(100, 150, 3, 8), 64, 64);
  const FeatureMatrix tok = encode_visual_tokens(ps, cfg);
  CHECK(tok.rows() == (ps.patches.size() + 1) * 64);
  CHECK(tok.cols() == cfg.model_dim);
  CHECK(tok.all_finite());
  CHECK(encode_visual_tokens(ps, cfg) == tok);
}

TEST_CASE("PNM decoding") {
  SUBCASE("P6 with comment") {
    std::string s = "P6\n# made by hand\n2 1\n255\n";
    s += std::string("\xff\x00\x80\x00\x00\xff", 6);
    const ImageTensor img = decode_pnm(bytes_of(s));
    CHECK(img.height() == 1);
    CHECK(img.width() == 2);
    CHECK(img(0, 0, 0) == 1.0);
    CHECK(img(0, 0, 1) == 0.0);
    CHECK(img(0, 0, 2) == doctest::Approx(128.0 / 255.0));
    CHECK(img(0, 1, 2) == 1.0);
  }
  SUBCASE("P5 grey replicated, 16-bit big-endian") {
    std::string s = "P5 1 1 65535\n";
    s += std::string("\x80\x00", 2);
    const ImageTensor img = decode_pnm(bytes_of(s));
    CHECK(img.channels() == 3);
    CHECK(img(0, 0, 0) == doctest::Approx(32768.0 / 65535.0));
    CHECK(img(0, 0, 2) == img(0, 0, 0));
  }
  SUBCASE("errors carry byte offsets") {
    try {
      decode_pnm(bytes_of("P3\n1 1\n255\n0 0 0"));
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
    try {
      decode_pnm(bytes_of("P6\n2 x\n255\n"));
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 5);
    }
    try {
      decode_pnm(bytes_of("P6\n2 1\n255\n\x01\x02"));
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() >= 11);
    }
  }
  SUBCASE("encode then decode") {
    ImageTensor img(3, 2);
    for (std::size_t i = 0; i < img.values().size(); ++i) img.values()[i] = static_cast<double>(i * 13 % 256) / 255.0;
    const ImageTensor back = decode_pnm(encode_ppm(img));
    for (std::size_t i = 0; i < img.values().size(); ++i) CHECK(back.values()[i] == doctest::Approx(img.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("synthetic image is deterministic and in range") {
  const ImageTensor a = synthetic_image(40, 30, Seed{3});
  CHECK(a == synthetic_image(40, 30, Seed{3}));
  CHECK_FALSE(a == synthetic_image(40, 30, Seed{4}));
  for (double v : a.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
