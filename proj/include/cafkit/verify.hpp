#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cafkit/caf.hpp"
#include "cafkit/matrix.hpp"

namespace cafkit {

enum class Sabotage {
  None,
  DropUniformTerm,  // weights lose the +1/N term; normalization must fail
};

Sabotage parse_sabotage(std::string_view name);  // "none", "drop-uniform"
std::string_view to_string(Sabotage s) noexcept;

struct VerifyConfig {
  Seed seed{20250101};
  /// Restrict kernel-randomized properties to one kernel; all kernels otherwise.
  std::optional<KernelKind> kernel;
  std::size_t dim = 64;
  std::size_t heads = 8;
  Sabotage sabotage = Sabotage::None;
  unsigned threads = 1;

  // Instance counts.
  std::size_t normalization_instances = 10000;
  std::size_t equivalence_instances = 1000;
  std::size_t gradient_instances = 200;
  std::size_t kl_instances = 200;
  std::size_t stationarity_instances = 50;
  std::size_t shuffle_instances = 100;
  std::size_t injectivity_trials = 200;

  /// Throws ConfigError (e.g. dim not divisible by heads, threads == 0).
  void validate() const;
};

struct PropertyResult {
  std::string name;
  std::string metric;
  double measured = 0.0;
  double threshold = 0.0;
  std::size_t instances = 0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<PropertyResult> properties;

  bool all_pass() const noexcept;
  std::size_t failures() const noexcept;
  /// One line per property, then a summary line. Contains no timings.
  std::string to_text() const;
};

/// Runs the attention, loss and rearrangement property suites. Instance i of
/// every property draws from its own generator derived from (seed, property, i),
/// so results are identical for any thread count.
VerifyReport run_verify(const VerifyConfig& cfg);

/// Elementwise |a - b| / max(|b|, 1): relative for entries of magnitude >= 1,
/// absolute below. Throws ShapeError on shape mismatch.
double max_rel_deviation(const FeatureMatrix& a, const FeatureMatrix& b);

/// Derives an independent seed for (base, stream, index).
Seed derive_seed(Seed base, std::uint64_t stream, std::uint64_t index) noexcept;

}  // namespace cafkit
