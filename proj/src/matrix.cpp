#include "cafkit/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "cafkit/error.hpp"

namespace cafkit {

namespace {

void require_nonempty(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("FeatureMatrix needs rows >= 1 and cols >= 1, got " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  }
}

}  // namespace

void require_finite(std::span<const double> values, std::string_view what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw InvalidInputError(std::string(what) + ": non-finite value at flat index " +
                              std::to_string(i));
    }
  }
}

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_() {
  require_nonempty(rows, cols);
  data_.assign(rows * cols, 0.0);
}

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_nonempty(rows, cols);
  if (data_.size() != rows * cols) {
    throw ShapeError("FeatureMatrix data has " + std::to_string(data_.size()) +
                     " values, expected " + std::to_string(rows * cols));
  }
  require_finite(data_, "FeatureMatrix");
}

FeatureMatrix FeatureMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t d = n == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(n * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return FeatureMatrix(n, d, std::move(data));
}

FeatureMatrix FeatureMatrix::identity(std::size_t n) {
  FeatureMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool FeatureMatrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

FeatureMatrix FeatureMatrix::col_slice(std::size_t first, std::size_t count) const {
  if (count == 0 || first + count > cols_) {
    throw ShapeError("col_slice [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") out of " + std::to_string(cols_));
  }
  FeatureMatrix out(rows_, count);
  for (std::size_t r = 0; r < rows_; ++r) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + first), count,
                out.row(r).begin());
  }
  return out;
}

std::string_view to_string(KernelKind k) noexcept {
  switch (k) {
    case KernelKind::Identity: return "identity";
    case KernelKind::ReLU: return "relu";
    case KernelKind::EluPlusOne: return "elu1";
  }
  return "unknown";
}

KernelKind parse_kernel(std::string_view name) {
  if (name == "identity") return KernelKind::Identity;
  if (name == "relu") return KernelKind::ReLU;
  if (name == "elu1" || name == "elu+1") return KernelKind::EluPlusOne;
  throw ConfigError("unknown kernel '" + std::string(name) + "' (expected identity|relu|elu1)");
}

double kernel_scalar(KernelKind k, double x) noexcept {
  switch (k) {
    case KernelKind::Identity: return x;
    case KernelKind::ReLU: return x > 0.0 ? x : 0.0;
    // elu(x) + 1: x + 1 for x > 0, exp(x) otherwise.
    case KernelKind::EluPlusOne: return x > 0.0 ? x + 1.0 : std::exp(x);
  }
  return x;
}

double SeededRng::uniform() {
  // 53 high bits -> [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::int64_t SeededRng::uniform_int(std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return lo + static_cast<std::int64_t>(x % span);
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

FeatureMatrix apply_kernel(const FeatureMatrix& x, KernelKind k) {
  require_finite(x.values(), "apply_kernel");
  FeatureMatrix out(x.rows(), x.cols());
  auto src = x.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = kernel_scalar(k, src[i]);
  return out;
}

FeatureMatrix matmul(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  FeatureMatrix out(a.rows(), b.cols());
  // i-k-j order: contiguous inner loop over b's row.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

FeatureMatrix transpose(const FeatureMatrix& a) {
  FeatureMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

void log_softmax_row(std::span<const double> x, std::span<double> out) noexcept {
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - mx);
  const double log_z = mx + std::log(sum);
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] - log_z;
}

FeatureMatrix row_softmax(const FeatureMatrix& x) {
  require_finite(x.values(), "row_softmax");
  FeatureMatrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const double inv = 1.0 / sum;
    for (double& v : o) v *= inv;
  }
  return out;
}

FeatureMatrix seeded_random_matrix(std::size_t rows, std::size_t cols, Seed seed) {
  FeatureMatrix out(rows, cols);
  SeededRng rng(seed);
  for (double& v : out.values()) v = rng.normal();
  return out;
}

}  // namespace cafkit
