#pragma once

// Decoupled chain-of-thought distillation: prompt enrichment with a teacher's
// reasoning context, and the uncertainty-weighted two-task loss
//
//   total = e^{-s_hard} * NLL(labels) + e^{-s_soft} * sum_{l <= min(L, L')} KL(p_teacher_l || p_student_l)
//           + s_hard / 2 + s_soft / 2
//
// with s = log sigma^2, so the regulariser log sigma_hard + log sigma_soft is (s_hard + s_soft) / 2.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cafkit/matrix.hpp"

namespace cafkit {

struct TokenSeq {
  std::vector<std::int64_t> ids;
  std::size_t vocab_size = 0;

  /// Throws InvalidInputError unless ids is nonempty and every id is in [0, vocab_size).
  void validate() const;
  std::size_t size() const noexcept { return ids.size(); }
};

struct TeacherTrace {
  std::string reasoning;
  /// One dense distribution over the vocabulary per answer position (L' of them).
  std::vector<std::vector<double>> answer_dists;
  std::optional<std::vector<std::int64_t>> answer_ids;
  std::size_t vocab_size = 0;

  std::size_t length() const noexcept { return answer_dists.size(); }
  /// Throws InvalidInputError if empty, ragged, negative, or any row mass is off by > 1e-6.
  void validate() const;
};

struct UncertaintyParams {
  double s_hard = 0.0;  // log sigma_hard^2
  double s_soft = 0.0;  // log sigma_soft^2

  double sigma2_hard() const noexcept;
  double sigma2_soft() const noexcept;
};

struct LossBreakdown {
  double hard_term = 0.0;
  double soft_term = 0.0;
  double reg_term = 0.0;
  double total = 0.0;
  /// d total / d logits; present only when the loss was evaluated from logits.
  std::optional<FeatureMatrix> grad_logits;
  double grad_s_hard = 0.0;
  double grad_s_soft = 0.0;
};

/// A loss term's value and its gradient with respect to the logits.
struct TermWithGrad {
  double value = 0.0;
  FeatureMatrix grad;
};

inline constexpr double kDistributionTolerance = 1e-6;

/// question.ids followed by cot.ids.
TokenSeq build_enriched_prompt(const TokenSeq& question, const TokenSeq& cot);

/// -sum_l log softmax(logits_l)[target_l]; gradient softmax - one_hot per row.
TermWithGrad nll_term(const FeatureMatrix& logits, const TokenSeq& targets);

struct KlOptions {
  /// Rescale teacher rows to unit mass instead of rejecting them.
  bool renormalize = false;
};

/// sum over l < min(L, L') of KL(teacher_l || softmax(logits_l)), teacher and
/// student front-aligned. Rows at or beyond the cut get zero gradient.
TermWithGrad kl_term(const TeacherTrace& teacher, const FeatureMatrix& logits,
                     KlOptions opts = {});

LossBreakdown mtl_loss(double hard, double soft, const UncertaintyParams& u);

/// nll_term + kl_term on the same student logits, combined by mtl_loss, with
/// the chain rule applied to give d total / d logits.
LossBreakdown distill_loss(const FeatureMatrix& logits, const TokenSeq& targets,
                           const TeacherTrace& teacher, const UncertaintyParams& u,
                           KlOptions opts = {});

// --- JSON Lines ---------------------------------------------------------------

struct TraceParseOptions {
  /// Expand sparse top-k rows and rescale them to unit mass when short.
  bool renormalize = false;
};

/// One object: {"reasoning": str, "dists": [[[id, p], ...], ...], "vocab": int, "answer_ids": [int] (optional)}.
/// Malformed JSON throws ParseError carrying the byte offset; bad values throw InvalidInputError.
TeacherTrace parse_teacher_trace(std::string_view line, TraceParseOptions opts = {});
/// One object: {"ids": [int, ...], "vocab": int}.
TokenSeq parse_label(std::string_view line);

/// Inverse of parse_teacher_trace; only nonzero probabilities are written.
std::string serialize_teacher_trace(const TeacherTrace& trace);
std::string serialize_label(const TokenSeq& label);

/// Blank lines are skipped. Errors are rethrown as ParseError with the 1-based line number.
std::vector<TeacherTrace> read_teacher_traces(const std::filesystem::path& path,
                                              TraceParseOptions opts = {});
std::vector<TokenSeq> read_labels(const std::filesystem::path& path);

}  // namespace cafkit
