#include "cafkit/vision.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cafkit/error.hpp"

namespace cafkit {

namespace {

struct Tap {
  std::size_t src;
  double weight;
};

// Box-filter taps for resizing `in` samples to `out`. In units scaled by
// in*out, source s spans [s*out, (s+1)*out) and target o spans [o*in, (o+1)*in),
// so overlaps are exact integers.
std::vector<std::vector<Tap>> box_taps(std::size_t in, std::size_t out) {
  std::vector<std::vector<Tap>> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    const std::size_t lo = o * in;
    const std::size_t hi = (o + 1) * in;
    for (std::size_t s = lo / out; s < in && s * out < hi; ++s) {
      const std::size_t a = std::max(lo, s * out);
      const std::size_t b = std::min(hi, (s + 1) * out);
      if (b > a) taps[o].push_back({s, static_cast<double>(b - a) / static_cast<double>(in)});
    }
  }
  return taps;
}

}  // namespace

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels)
    : height_(height), width_(width), channels_(channels) {
  if (height == 0 || width == 0 || channels == 0) {
    throw InvalidInputError("image needs positive height, width and channels, got " +
                            std::to_string(height) + "x" + std::to_string(width) + "x" +
                            std::to_string(channels));
  }
  data_.assign(height * width * channels, 0.0);
}

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
                         std::vector<double> data)
    : ImageTensor(height, width, channels) {
  if (data.size() != data_.size()) {
    throw ShapeError("image data has " + std::to_string(data.size()) + " values, expected " +
                     std::to_string(data_.size()));
  }
  require_finite(data, "ImageTensor");
  data_ = std::move(data);
}

ImageTensor area_resize(const ImageTensor& img, std::size_t out_height, std::size_t out_width) {
  if (out_height == 0 || out_width == 0) throw InvalidInputError("area_resize: empty target");
  const std::size_t c = img.channels();
  const auto row_taps = box_taps(img.height(), out_height);
  const auto col_taps = box_taps(img.width(), out_width);

  // Rows first into (out_height x W), then columns.
  ImageTensor tmp(out_height, img.width(), c);
  for (std::size_t oy = 0; oy < out_height; ++oy)
    for (const Tap& t : row_taps[oy])
      for (std::size_t x = 0; x < img.width(); ++x)
        for (std::size_t ch = 0; ch < c; ++ch) tmp(oy, x, ch) += t.weight * img(t.src, x, ch);

  ImageTensor out(out_height, out_width, c);
  for (std::size_t oy = 0; oy < out_height; ++oy)
    for (std::size_t ox = 0; ox < out_width; ++ox)
      for (const Tap& t : col_taps[ox])
        for (std::size_t ch = 0; ch < c; ++ch) out(oy, ox, ch) += t.weight * tmp(oy, t.src, ch);
  return out;
}

PatchSet adaptive_encode(const ImageTensor& img, std::size_t tile, std::size_t thumb) {
  if (tile == 0) throw InvalidInputError("adaptive_encode: tile size must be >= 1");
  if (thumb == 0) throw InvalidInputError("adaptive_encode: thumbnail size must be >= 1");

  const std::size_t rows = (img.height() + tile - 1) / tile;
  const std::size_t cols = (img.width() + tile - 1) / tile;
  const std::size_t c = img.channels();

  PatchSet out{{}, area_resize(img, thumb, thumb), rows, cols};
  out.patches.reserve(rows * cols);
  for (std::size_t ty = 0; ty < rows; ++ty) {
    for (std::size_t tx = 0; tx < cols; ++tx) {
      ImageTensor p(tile, tile, c);
      const std::size_t y0 = ty * tile;
      const std::size_t x0 = tx * tile;
      const std::size_t h = std::min(tile, img.height() - y0);
      const std::size_t w = std::min(tile, img.width() - x0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t ch = 0; ch < c; ++ch) p(y, x, ch) = img(y0 + y, x0 + x, ch);
      out.patches.push_back(std::move(p));
    }
  }
  return out;
}

FeatureMap pixel_shuffle(const FeatureMap& feat, std::size_t r) {
  if (r == 0 || feat.height() % r != 0 || feat.width() % r != 0) {
    throw ShapeError("pixel_shuffle: factor " + std::to_string(r) + " does not divide " +
                     std::to_string(feat.height()) + "x" + std::to_string(feat.width()));
  }
  const std::size_t c = feat.channels();
  FeatureMap out(feat.height() / r, feat.width() / r, c * r * r);
  for (std::size_t y = 0; y < out.height(); ++y)
    for (std::size_t x = 0; x < out.width(); ++x)
      for (std::size_t dy = 0; dy < r; ++dy)
        for (std::size_t dx = 0; dx < r; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch)
            out(y, x, (dy * r + dx) * c + ch) = feat(y * r + dy, x * r + dx, ch);
  return out;
}

FeatureMap inverse_pixel_shuffle(const FeatureMap& feat, std::size_t r) {
  if (r == 0 || feat.channels() % (r * r) != 0) {
    throw ShapeError("inverse_pixel_shuffle: " + std::to_string(feat.channels()) +
                     " channels not divisible by r^2 for r=" + std::to_string(r));
  }
  const std::size_t c = feat.channels() / (r * r);
  FeatureMap out(feat.height() * r, feat.width() * r, c);
  for (std::size_t y = 0; y < feat.height(); ++y)
    for (std::size_t x = 0; x < feat.width(); ++x)
      for (std::size_t dy = 0; dy < r; ++dy)
        for (std::size_t dx = 0; dx < r; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch)
            out(y * r + dy, x * r + dx, ch) = feat(y, x, (dy * r + dx) * c + ch);
  return out;
}

FeatureMatrix to_tokens(const FeatureMap& feat) {
  auto v = feat.values();
  return FeatureMatrix(feat.height() * feat.width(), feat.channels(),
                       std::vector<double>(v.begin(), v.end()));
}

double activate(Activation act, double x) noexcept {
  switch (act) {
    case Activation::Identity: return x;
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::Gelu: return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return x;
}

void AdapterWeights::validate() const {
  if (b1.size() != w1.cols() || w2.rows() != w1.cols() || b2.size() != w2.cols()) {
    throw ShapeError("adapter layers do not chain: w1 " + std::to_string(w1.rows()) + "x" +
                     std::to_string(w1.cols()) + ", b1 " + std::to_string(b1.size()) + ", w2 " +
                     std::to_string(w2.rows()) + "x" + std::to_string(w2.cols()) + ", b2 " +
                     std::to_string(b2.size()));
  }
}

AdapterWeights AdapterWeights::seeded(std::size_t input_dim, std::size_t hidden_dim,
                                      std::size_t output_dim, Seed seed, Activation act) {
  FeatureMatrix w1 = seeded_random_matrix(input_dim, hidden_dim, seed);
  FeatureMatrix w2 = seeded_random_matrix(hidden_dim, output_dim, Seed{seed.value + 1});
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (double& v : w1.values()) v *= s1;
  for (double& v : w2.values()) v *= s2;
  return AdapterWeights{std::move(w1), std::vector<double>(hidden_dim, 0.0), std::move(w2),
                        std::vector<double>(output_dim, 0.0), act};
}

FeatureMatrix mlp_adapter(const FeatureMatrix& feat, const AdapterWeights& w) {
  w.validate();
  if (feat.cols() != w.input_dim()) {
    throw ShapeError("mlp_adapter: feature width " + std::to_string(feat.cols()) +
                     " != adapter input " + std::to_string(w.input_dim()));
  }
  FeatureMatrix hidden = matmul(feat, w.w1);
  for (std::size_t r = 0; r < hidden.rows(); ++r) {
    auto h = hidden.row(r);
    for (std::size_t j = 0; j < h.size(); ++j) h[j] = activate(w.activation, h[j] + w.b1[j]);
  }
  FeatureMatrix out = matmul(hidden, w.w2);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += w.b2[j];
  }
  return out;
}

std::size_t tokens_per_image(const VisualEncoderConfig& cfg) {
  const std::size_t side = cfg.grid / cfg.shuffle;
  return side * side;
}

FeatureMatrix encode_visual_tokens(const PatchSet& patches, const VisualEncoderConfig& cfg) {
  if (cfg.grid == 0 || cfg.patch_px == 0 || cfg.shuffle == 0 || cfg.grid % cfg.shuffle != 0) {
    throw ConfigError("visual encoder: grid must be a positive multiple of the shuffle factor");
  }
  const std::size_t side = cfg.grid * cfg.patch_px;
  const std::size_t cell_dim = cfg.patch_px * cfg.patch_px * 3;

  FeatureMatrix embed = seeded_random_matrix(cell_dim, cfg.embed_channels, cfg.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cell_dim));
  for (double& v : embed.values()) v *= scale;
  const std::size_t shuffled = cfg.embed_channels * cfg.shuffle * cfg.shuffle;
  const AdapterWeights adapter = AdapterWeights::seeded(shuffled, cfg.adapter_hidden,
                                                        cfg.model_dim, Seed{cfg.seed.value + 10});

  std::vector<const ImageTensor*> images;
  for (const auto& p : patches.patches) images.push_back(&p);
  images.push_back(&patches.global);

  const std::size_t per_image = tokens_per_image(cfg);
  FeatureMatrix out(images.size() * per_image, cfg.model_dim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ImageTensor small = area_resize(*images[i], side, side);
    // Cells as rows, flattened (py, px, c); centred around 0.5.
    FeatureMatrix cells(cfg.grid * cfg.grid, cell_dim);
    for (std::size_t gy = 0; gy < cfg.grid; ++gy)
      for (std::size_t gx = 0; gx < cfg.grid; ++gx) {
        auto row = cells.row(gy * cfg.grid + gx);
        std::size_t k = 0;
        for (std::size_t py = 0; py < cfg.patch_px; ++py)
          for (std::size_t px = 0; px < cfg.patch_px; ++px)
            for (std::size_t ch = 0; ch < 3; ++ch)
              row[k++] = small(gy * cfg.patch_px + py, gx * cfg.patch_px + px, ch) - 0.5;
      }
    const FeatureMatrix embedded = matmul(cells, embed);
    auto ev = embedded.values();
    FeatureMap fmap(cfg.grid, cfg.grid, cfg.embed_channels, std::vector<double>(ev.begin(), ev.end()));
    const FeatureMatrix tokens = mlp_adapter(to_tokens(pixel_shuffle(fmap, cfg.shuffle)), adapter);
    std::copy(tokens.values().begin(), tokens.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * per_image * cfg.model_dim));
  }
  return out;
}

ImageTensor synthetic_image(std::size_t height, std::size_t width, Seed seed) {
  ImageTensor img(height, width, 3);
  SeededRng rng(seed);
  const double fy = rng.uniform(1.0, 4.0);
  const double fx = rng.uniform(1.0, 4.0);
  const double phase[3] = {rng.uniform(0.0, 6.28), rng.uniform(0.0, 6.28), rng.uniform(0.0, 6.28)};
  for (std::size_t y = 0; y < height; ++y) {
    const double ty = static_cast<double>(y) / static_cast<double>(height);
    for (std::size_t x = 0; x < width; ++x) {
      const double tx = static_cast<double>(x) / static_cast<double>(width);
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = 0.5 + 0.35 * std::sin(fy * 6.28 * ty + fx * 6.28 * tx + phase[c]);
        img(y, x, c) = std::clamp(base + 0.1 * (rng.uniform() - 0.5), 0.0, 1.0);
      }
    }
  }
  return img;
}

}  // namespace cafkit
