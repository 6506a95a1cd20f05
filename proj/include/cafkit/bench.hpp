#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cafkit/caf.hpp"

namespace cafkit {

struct BenchRecord {
  AttentionMethod method = AttentionMethod::Linear;
  std::size_t n_keys = 0;
  std::size_t n_queries = 0;
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::size_t repeats = 0;
  double median_wall_time = 0.0;  // seconds
  double checksum = 0.0;          // sum of output entries
  /// "ok", or "skipped-memory-guard" for quadratic runs over the budget.
  std::string status = "ok";

  friend bool operator==(const BenchRecord&, const BenchRecord&) = default;
};

struct SlopeSummary {
  AttentionMethod method = AttentionMethod::Linear;
  double slope = 0.0;
  std::size_t points = 0;

  friend bool operator==(const SlopeSummary&, const SlopeSummary&) = default;
};

struct BenchResult {
  std::vector<BenchRecord> records;
  std::vector<SlopeSummary> slopes;

  std::optional<double> slope(AttentionMethod m) const;
  friend bool operator==(const BenchResult&, const BenchResult&) = default;
};

struct BenchConfig {
  Seed seed{7};
  std::vector<std::size_t> seq_lens;
  std::size_t dim = 64;
  std::size_t heads = 8;
  KernelKind kernel = KernelKind::Identity;
  std::vector<AttentionMethod> methods{AttentionMethod::Linear};
  std::size_t repeats = 5;
  /// Quadratic methods skip N when N * N * 8 bytes exceeds this.
  std::size_t memory_budget_bytes = std::size_t{2} << 30;

  /// seq_lens nonempty, ascending, >= 1; dim divisible by heads; repeats >= 3.
  void validate() const;
};

/// For every (method, N): Q, K, V are N x dim seeded normals, one discarded
/// warm-up, then the median of `repeats` timed runs on the calling thread.
BenchResult run_bench(const BenchConfig& cfg);

/// Least-squares slope of log(y) against log(x). Needs >= 2 points with x, y > 0.
double fit_loglog_slope(std::span<const double> x, std::span<const double> y);

/// Header, one row per record, then "# slope,<method>,<value>,<points>" lines.
std::string to_csv(const BenchResult& r);
std::string to_json(const BenchResult& r);
BenchResult parse_bench_csv(std::string_view text);
BenchResult parse_bench_json(std::string_view text);

}  // namespace cafkit
