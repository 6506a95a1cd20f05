#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cafkit/adcot.hpp"
#include "cafkit/caf.hpp"
#include "cafkit/vision.hpp"

namespace cafkit {

// --- loss demo ------------------------------------------------------------------

/// Gradient descent on a linear student head logits = X W + b, where X holds
/// fixed seeded features per (sample, position), trained jointly with the two
/// log-variances under the uncertainty-weighted distillation loss. Task terms
/// are averaged over samples.
struct LossDemoConfig {
  std::size_t steps = 500;
  double lr = 0.5;
  std::size_t feature_dim = 32;
  Seed seed{1};
  /// Lower bound on s = log sigma^2 for both tasks. Without one, s drifts to
  /// -inf once a task is fit exactly and the effective step size explodes.
  double min_log_sigma2 = -3.0;
};

struct LossStep {
  std::size_t step = 0;
  double hard = 0.0;
  double soft = 0.0;
  double sigma2_hard = 1.0;
  double sigma2_soft = 1.0;
  double total = 0.0;
};

struct LossDemoReport {
  std::vector<LossStep> curve;  // steps + 1 entries; entry 0 is before any update

  std::string to_text() const;
};

/// Throws InvalidInputError if counts or vocabularies disagree.
LossDemoReport run_loss_demo(const std::vector<TeacherTrace>& traces,
                             const std::vector<TokenSeq>& labels, const LossDemoConfig& cfg);

enum class FixtureKind {
  Consistent,   // teacher is the one-hot ground truth
  Conflicting,  // teacher prefers a different token at every position
};

struct Fixture {
  std::vector<TeacherTrace> traces;
  std::vector<TokenSeq> labels;
};

Fixture make_fixture(FixtureKind kind, Seed seed, std::size_t samples = 8, std::size_t vocab = 16,
                     std::size_t max_len = 4);
void write_fixture(const Fixture& f, const std::filesystem::path& traces_path,
                   const std::filesystem::path& labels_path);

// --- fuse demo ------------------------------------------------------------------

struct FuseDemoConfig {
  std::optional<std::filesystem::path> image;
  /// Used when no image path is given.
  Seed synthetic_seed{0};
  std::size_t synthetic_size = 896;
  std::size_t tile = 448;
  std::size_t thumb = 448;
  std::size_t question_len = 8;
  std::size_t cot_len = 16;
  std::size_t vocab = 1000;
  CafConfig caf{};
  FusionRole role = FusionRole::TextQuery;
  VisualEncoderConfig encoder{};
};

struct FuseDemoSummary {
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::size_t patch_count = 0;  // local tiles, excluding the global thumbnail
  std::size_t visual_tokens = 0;
  std::size_t prompt_tokens = 0;
  std::size_t fused_rows = 0;
  std::size_t sequence_length = 0;
  std::size_t boundary = 0;
  double fused_block_norm = 0.0;
  double text_block_norm = 0.0;
  double fused_mean_row_norm = 0.0;
  double text_mean_row_norm = 0.0;
  FusionRole role = FusionRole::TextQuery;

  std::string to_text() const;
};

/// Image (or synthetic image) -> tiles + thumbnail -> visual tokens; seeded
/// question and chain-of-thought ids -> enriched prompt -> text embeddings;
/// then Concat(CAF(visual, text), text). The language model is replaced by
/// these summary statistics.
FuseDemoSummary run_fuse_demo(const FuseDemoConfig& cfg);

/// Deterministic embedding rows for token ids (one seeded normal row per id, scaled by 1/sqrt(dim)).
FeatureMatrix embed_tokens(const TokenSeq& tokens, std::size_t dim, Seed seed);

}  // namespace cafkit
