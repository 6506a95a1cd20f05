#pragma once

// Language-queried linear cross-attention with injective (mean-centred)
// weights, plus the quadratic reference it must agree with.
//
// For a query q and keys K_1..K_N the weights are
//
//   w_j = phi(q).phi(K_j) - (1/N) sum_s phi(q).phi(K_s) + 1/N
//
// which sum to exactly one and may be negative. The output for q is
// sum_j w_j V_j. Re-associating that sum gives the linear form
//
//   out = phi(q)^T S_kv - (phi(q).s_k - 1) * v_mean
//
// with S_kv = sum_j phi(K_j) V_j^T, s_k = sum_j phi(K_j) and v_mean the mean
// value row, all accumulated once in ascending key order.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cafkit/matrix.hpp"

namespace cafkit {

struct CafConfig {
  std::size_t model_dim = 64;
  std::size_t num_heads = 8;
  KernelKind kernel = KernelKind::Identity;
  /// When set, Q, K and V are each multiplied by a seeded random
  /// model_dim x model_dim projection (scaled by 1/sqrt(model_dim)) before
  /// head splitting. Off by default: heads are plain contiguous column slices.
  std::optional<Seed> projection_seed;

  std::size_t head_dim() const noexcept { return num_heads == 0 ? 0 : model_dim / num_heads; }
  /// Throws ConfigError when num_heads == 0 or model_dim % num_heads != 0.
  void validate() const;
};

struct AttentionWeights {
  std::vector<double> values;

  double sum() const noexcept;
};

struct FusedSequence {
  FeatureMatrix tokens;
  /// Row index where the (unmodified) text tokens begin.
  std::size_t boundary = 0;
};

/// Which side supplies the queries in `fuse`.
enum class FusionRole {
  TextQuery,   // text queries visual keys/values; fused block has text.rows rows
  ImageQuery,  // role swap: visual tokens query the text
};

enum class AttentionMethod { Linear, Quadratic, SoftmaxBaseline };

std::string_view to_string(AttentionMethod m) noexcept;
/// "linear", "quadratic", "softmax" (or "softmax-baseline").
AttentionMethod parse_method(std::string_view name);

AttentionWeights attention_weights(std::span<const double> query, const FeatureMatrix& keys,
                                   KernelKind kernel);

/// O(N_q * N_k) evaluation: explicit weights per query, then the weighted sum of value rows.
FeatureMatrix caf_reference(const FeatureMatrix& queries, const FeatureMatrix& keys,
                            const FeatureMatrix& values, KernelKind kernel);

/// Single pass over keys to build the aggregates, then O(d * d_v) per query.
FeatureMatrix caf_linear(const FeatureMatrix& queries, const FeatureMatrix& keys,
                         const FeatureMatrix& values, KernelKind kernel);

/// Baseline for timing comparisons: softmax over raw dot-product scores.
FeatureMatrix softmax_attention(const FeatureMatrix& queries, const FeatureMatrix& keys,
                                const FeatureMatrix& values);

/// caf_linear per contiguous head slice; head outputs concatenated in column order.
FeatureMatrix multi_head_caf(const FeatureMatrix& queries, const FeatureMatrix& keys,
                             const FeatureMatrix& values, const CafConfig& cfg);

/// Same head split as multi_head_caf with a selectable per-head method.
FeatureMatrix multi_head_attention(const FeatureMatrix& queries, const FeatureMatrix& keys,
                                   const FeatureMatrix& values, const CafConfig& cfg,
                                   AttentionMethod method);

/// Concat(CAF(visual, text), text). With TextQuery the text tokens query the
/// visual tokens and the fused block replaces the visual block.
FusedSequence fuse(const FeatureMatrix& visual, const FeatureMatrix& text, const CafConfig& cfg,
                   FusionRole role = FusionRole::TextQuery);

/// Mutants used by the self-test mode of the verify command. Not for production use.
namespace fault {

/// Weights with the trailing +1/N dropped; they sum to 0 instead of 1.
AttentionWeights attention_weights_without_uniform_term(std::span<const double> query,
                                                        const FeatureMatrix& keys,
                                                        KernelKind kernel);

}  // namespace fault

}  // namespace cafkit
