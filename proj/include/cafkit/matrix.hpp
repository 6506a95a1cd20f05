#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace cafkit {

/// Dense row-major matrix of doubles holding N token embeddings of width d.
///
/// Every constructor that accepts external data rejects NaN/Inf, and every
/// operation in this library validates its inputs, so a FeatureMatrix that
/// flows through the public API never carries a non-finite entry.
class FeatureMatrix {
 public:
  /// Zero-filled rows x cols matrix. Both dimensions must be >= 1.
  FeatureMatrix(std::size_t rows, std::size_t cols);
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static FeatureMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static FeatureMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }

  bool all_finite() const noexcept;

  /// Copy of columns [first, first + count).
  FeatureMatrix col_slice(std::size_t first, std::size_t count) const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

/// Read-only strided window onto a FeatureMatrix (or a column block of one).
struct ConstMatrixView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;

  ConstMatrixView() = default;
  ConstMatrixView(const FeatureMatrix& m) noexcept  // NOLINT(google-explicit-constructor)
      : data(m.values().data()), rows(m.rows()), cols(m.cols()), stride(m.cols()) {}

  double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * stride + c]; }
  std::span<const double> row(std::size_t r) const noexcept { return {data + r * stride, cols}; }

  ConstMatrixView columns(std::size_t first, std::size_t count) const noexcept {
    ConstMatrixView v = *this;
    v.data = data + first;
    v.cols = count;
    return v;
  }
};

enum class KernelKind { Identity, ReLU, EluPlusOne };

std::string_view to_string(KernelKind k) noexcept;
/// Accepts "identity", "relu", "elu1" (also "elu+1"). Throws ConfigError otherwise.
KernelKind parse_kernel(std::string_view name);

inline constexpr KernelKind kAllKernels[] = {KernelKind::Identity, KernelKind::ReLU,
                                             KernelKind::EluPlusOne};

/// phi(x) for one scalar.
double kernel_scalar(KernelKind k, double x) noexcept;

struct Seed {
  std::uint64_t value = 0;
};

/// Portable seeded generator: mt19937_64 bits mapped to doubles by hand so
/// that the same seed yields the same stream regardless of standard library.
class SeededRng {
 public:
  explicit SeededRng(Seed seed) : engine_(seed.value) {}

  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

FeatureMatrix apply_kernel(const FeatureMatrix& x, KernelKind k);
FeatureMatrix matmul(const FeatureMatrix& a, const FeatureMatrix& b);
FeatureMatrix transpose(const FeatureMatrix& a);
/// Numerically stable softmax of every row (max-subtracted).
FeatureMatrix row_softmax(const FeatureMatrix& x);
/// Stable log-softmax of one row into `out` (same length).
void log_softmax_row(std::span<const double> x, std::span<double> out) noexcept;
/// Entries i.i.d. standard normal; identical for identical seeds.
FeatureMatrix seeded_random_matrix(std::size_t rows, std::size_t cols, Seed seed);

/// Throws InvalidInputError naming `what` if any entry is NaN/Inf.
void require_finite(std::span<const double> values, std::string_view what);

}  // namespace cafkit
