#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "cafkit/matrix.hpp"

namespace cafkit {

/// H x W x C image, HWC interleaved. Values are finite reals; pixel data is in [0, 1].
class ImageTensor {
 public:
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels = 3);
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
              std::vector<double> data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }

  double operator()(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[(y * width_ + x) * channels_ + c];
  }
  double& operator()(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return data_[(y * width_ + x) * channels_ + c];
  }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::size_t channels_;
  std::vector<double> data_;
};

/// A spatial feature map has the same H x W x C layout as an image; values are unbounded.
using FeatureMap = ImageTensor;

struct PatchSet {
  std::vector<ImageTensor> patches;  // row-major tile order
  ImageTensor global;
  std::size_t tile_rows = 0;
  std::size_t tile_cols = 0;
};

/// Box-filter resize. Each output pixel is the exact area-weighted mean of the
/// source pixels it covers, so integer ratios reduce to plain block means.
ImageTensor area_resize(const ImageTensor& img, std::size_t out_height, std::size_t out_width);

/// Split into non-overlapping tile x tile patches (edge tiles zero-padded) plus
/// a thumb x thumb area-averaged copy of the whole image.
PatchSet adaptive_encode(const ImageTensor& img, std::size_t tile, std::size_t thumb);

/// Space-to-depth: (H, W, C) -> (H/r, W/r, C*r*r). Output channel (dy*r + dx)*C + c
/// of cell (y, x) holds input (y*r + dy, x*r + dx, c).
FeatureMap pixel_shuffle(const FeatureMap& feat, std::size_t r);
/// Exact inverse of pixel_shuffle (depth-to-space).
FeatureMap inverse_pixel_shuffle(const FeatureMap& feat, std::size_t r);

/// Flatten to (H*W) x C tokens, row-major over spatial positions.
FeatureMatrix to_tokens(const FeatureMap& feat);

enum class Activation { Identity, ReLU, Gelu };

/// Two affine layers with an activation between: y = act(x W1 + b1) W2 + b2.
struct AdapterWeights {
  FeatureMatrix w1;  // input_dim x hidden_dim
  std::vector<double> b1;
  FeatureMatrix w2;  // hidden_dim x output_dim
  std::vector<double> b2;
  Activation activation = Activation::Gelu;

  std::size_t input_dim() const noexcept { return w1.rows(); }
  std::size_t hidden_dim() const noexcept { return w1.cols(); }
  std::size_t output_dim() const noexcept { return w2.cols(); }

  /// Throws ShapeError unless the layers chain.
  void validate() const;

  /// Normal(0, 1/fan_in) weights, zero biases; deterministic per seed.
  static AdapterWeights seeded(std::size_t input_dim, std::size_t hidden_dim,
                               std::size_t output_dim, Seed seed,
                               Activation act = Activation::Gelu);
};

double activate(Activation act, double x) noexcept;

FeatureMatrix mlp_adapter(const FeatureMatrix& feat, const AdapterWeights& w);

/// Stand-in for the frozen visual encoder: every image in the patch set is
/// area-resized to (grid * patch_px)^2, cut into patch_px^2 cells, each cell
/// linearly embedded to embed_channels, pixel-shuffled by `shuffle`, and the
/// resulting tokens passed through the adapter.
struct VisualEncoderConfig {
  std::size_t grid = 16;
  std::size_t patch_px = 4;
  std::size_t embed_channels = 32;
  std::size_t shuffle = 2;
  std::size_t adapter_hidden = 256;
  std::size_t model_dim = 64;
  Seed seed{0};
};

/// Tokens per image after shuffling: (grid / shuffle)^2.
std::size_t tokens_per_image(const VisualEncoderConfig& cfg);
FeatureMatrix encode_visual_tokens(const PatchSet& patches, const VisualEncoderConfig& cfg);

// --- PPM / PGM ---------------------------------------------------------------

/// Decodes binary P6 (RGB) or P5 (grey, replicated to 3 channels), maxval 1..65535.
/// Throws FormatError with the byte offset of the first bad byte.
ImageTensor decode_pnm(std::span<const std::uint8_t> bytes);
ImageTensor read_pnm(const std::filesystem::path& path);
/// 8-bit P6 encoding, values clamped to [0, 1] and rounded.
std::vector<std::uint8_t> encode_ppm(const ImageTensor& img);

/// Deterministic smooth-gradient-plus-noise test image in [0, 1].
ImageTensor synthetic_image(std::size_t height, std::size_t width, Seed seed);

}  // namespace cafkit
