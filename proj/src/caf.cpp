#include "cafkit/caf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cafkit/error.hpp"

namespace cafkit {

namespace {

void check_qkv(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
               std::string_view op) {
  if (q.cols() != k.cols()) {
    throw ShapeError(std::string(op) + ": query width " + std::to_string(q.cols()) +
                     " != key width " + std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(k.rows()) + " keys but " +
                     std::to_string(v.rows()) + " values");
  }
  require_finite(q.values(), op);
  require_finite(k.values(), op);
  require_finite(v.values(), op);
}

void kernel_row(KernelKind kernel, std::span<const double> x, std::span<double> out) noexcept {
  if (kernel == KernelKind::Identity) {
    std::copy(x.begin(), x.end(), out.begin());
    return;
  }
  for (std::size_t a = 0; a < x.size(); ++a) out[a] = kernel_scalar(kernel, x[a]);
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Scores phi(q).phi(K_j) into `w`, then centre and shift. `phi_keys` is N x d, already mapped.
void centred_weights(std::span<const double> phi_q, ConstMatrixView phi_keys, bool uniform_term,
                     std::span<double> w) noexcept {
  const std::size_t n = phi_keys.rows;
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    w[j] = dot(phi_q, phi_keys.row(j));
    total += w[j];
  }
  const double mean = total / static_cast<double>(n);
  const double shift = uniform_term ? 1.0 / static_cast<double>(n) : 0.0;
  for (std::size_t j = 0; j < n; ++j) w[j] = (w[j] - mean) + shift;
}

FeatureMatrix map_rows(ConstMatrixView x, KernelKind kernel) {
  FeatureMatrix out(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) kernel_row(kernel, x.row(r), out.row(r));
  return out;
}

AttentionWeights weights_impl(std::span<const double> query, const FeatureMatrix& keys,
                              KernelKind kernel, bool uniform_term) {
  if (query.size() != keys.cols()) {
    throw ShapeError("attention_weights: query length " + std::to_string(query.size()) +
                     " != key width " + std::to_string(keys.cols()));
  }
  require_finite(query, "attention_weights");
  require_finite(keys.values(), "attention_weights");
  std::vector<double> phi_q(query.size());
  kernel_row(kernel, query, phi_q);
  const FeatureMatrix phi_keys = map_rows(keys, kernel);
  AttentionWeights out;
  out.values.resize(keys.rows());
  centred_weights(phi_q, phi_keys, uniform_term, out.values);
  return out;
}

// Quadratic path on one head: out[i, out_col + b] = sum_j w_ij V[j, b].
void reference_block(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v, KernelKind kernel,
                     FeatureMatrix& out, std::size_t out_col) {
  const FeatureMatrix phi_keys = map_rows(k, kernel);
  std::vector<double> phi_q(q.cols);
  std::vector<double> w(k.rows);
  for (std::size_t i = 0; i < q.rows; ++i) {
    kernel_row(kernel, q.row(i), phi_q);
    centred_weights(phi_q, phi_keys, true, w);
    double* o = &out(i, out_col);
    for (std::size_t j = 0; j < k.rows; ++j) {
      const double wj = w[j];
      auto vj = v.row(j);
      for (std::size_t b = 0; b < v.cols; ++b) o[b] += wj * vj[b];
    }
  }
}

// Linear path over `heads` contiguous column groups in one sweep over the rows,
// so each key/value row is read once for all heads. Aggregates are built in
// ascending key order; heads == 1 is the plain single-head form.
void linear_heads(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v, KernelKind kernel,
                  std::size_t heads, FeatureMatrix& out) {
  const std::size_t d = k.cols / heads;
  const std::size_t dv = v.cols / heads;
  const std::size_t n = k.rows;

  std::vector<double> kv_sum(heads * d * dv, 0.0);  // S_kv per head, d x dv
  std::vector<double> key_sum(k.cols, 0.0);         // s_k
  std::vector<double> value_mean(v.cols, 0.0);
  std::vector<double> phi(k.cols);

  for (std::size_t j = 0; j < n; ++j) {
    kernel_row(kernel, k.row(j), phi);
    const auto vrow = v.row(j);
    for (std::size_t h = 0; h < heads; ++h) {
      const double* ph = phi.data() + h * d;
      const double* vj = vrow.data() + h * dv;
      double* ks = key_sum.data() + h * d;
      double* kv = kv_sum.data() + h * d * dv;
      for (std::size_t a = 0; a < d; ++a) {
        ks[a] += ph[a];
        double* kv_row = kv + a * dv;
        const double pa = ph[a];
        for (std::size_t b = 0; b < dv; ++b) kv_row[b] += pa * vj[b];
      }
    }
    for (std::size_t b = 0; b < v.cols; ++b) value_mean[b] += vrow[b];
  }
  for (double& m : value_mean) m /= static_cast<double>(n);

  for (std::size_t i = 0; i < q.rows; ++i) {
    kernel_row(kernel, q.row(i), phi);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::span<const double> ph(phi.data() + h * d, d);
      const double excess = dot(ph, std::span<const double>(key_sum.data() + h * d, d)) - 1.0;
      double* o = &out(i, h * dv);
      const double* vm = value_mean.data() + h * dv;
      for (std::size_t b = 0; b < dv; ++b) o[b] = -excess * vm[b];
      const double* kv = kv_sum.data() + h * d * dv;
      for (std::size_t a = 0; a < d; ++a) {
        const double pa = ph[a];
        const double* kv_row = kv + a * dv;
        for (std::size_t b = 0; b < dv; ++b) o[b] += pa * kv_row[b];
      }
    }
  }
}

void softmax_block(ConstMatrixView q, ConstMatrixView k, ConstMatrixView v, FeatureMatrix& out,
                   std::size_t out_col) {
  std::vector<double> p(k.rows);
  for (std::size_t i = 0; i < q.rows; ++i) {
    auto qi = q.row(i);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k.rows; ++j) {
      p[j] = dot(qi, k.row(j));
      mx = std::max(mx, p[j]);
    }
    double z = 0.0;
    for (double& pj : p) {
      pj = std::exp(pj - mx);
      z += pj;
    }
    double* o = &out(i, out_col);
    for (std::size_t j = 0; j < k.rows; ++j) {
      const double wj = p[j] / z;
      auto vj = v.row(j);
      for (std::size_t b = 0; b < v.cols; ++b) o[b] += wj * vj[b];
    }
  }
}

void run_block(AttentionMethod method, ConstMatrixView q, ConstMatrixView k, ConstMatrixView v,
               KernelKind kernel, FeatureMatrix& out, std::size_t out_col) {
  switch (method) {
    case AttentionMethod::Linear: break;  // handled by linear_heads
    case AttentionMethod::Quadratic: reference_block(q, k, v, kernel, out, out_col); break;
    case AttentionMethod::SoftmaxBaseline: softmax_block(q, k, v, out, out_col); break;
  }
}

FeatureMatrix project(const FeatureMatrix& x, Seed seed) {
  FeatureMatrix w = seeded_random_matrix(x.cols(), x.cols(), seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  for (double& e : w.values()) e *= scale;
  return matmul(x, w);
}

}  // namespace

void CafConfig::validate() const {
  if (num_heads == 0) throw ConfigError("num_heads must be >= 1");
  if (model_dim == 0) throw ConfigError("model_dim must be >= 1");
  if (model_dim % num_heads != 0) {
    throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
}

double AttentionWeights::sum() const noexcept {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

std::string_view to_string(AttentionMethod m) noexcept {
  switch (m) {
    case AttentionMethod::Linear: return "linear";
    case AttentionMethod::Quadratic: return "quadratic";
    case AttentionMethod::SoftmaxBaseline: return "softmax-baseline";
  }
  return "unknown";
}

AttentionMethod parse_method(std::string_view name) {
  if (name == "linear") return AttentionMethod::Linear;
  if (name == "quadratic") return AttentionMethod::Quadratic;
  if (name == "softmax" || name == "softmax-baseline") return AttentionMethod::SoftmaxBaseline;
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected linear|quadratic|softmax)");
}

AttentionWeights attention_weights(std::span<const double> query, const FeatureMatrix& keys,
                                   KernelKind kernel) {
  return weights_impl(query, keys, kernel, true);
}

FeatureMatrix caf_reference(const FeatureMatrix& queries, const FeatureMatrix& keys,
                            const FeatureMatrix& values, KernelKind kernel) {
  check_qkv(queries, keys, values, "caf_reference");
  FeatureMatrix out(queries.rows(), values.cols());
  reference_block(queries, keys, values, kernel, out, 0);
  return out;
}

FeatureMatrix caf_linear(const FeatureMatrix& queries, const FeatureMatrix& keys,
                         const FeatureMatrix& values, KernelKind kernel) {
  check_qkv(queries, keys, values, "caf_linear");
  FeatureMatrix out(queries.rows(), values.cols());
  linear_heads(queries, keys, values, kernel, 1, out);
  return out;
}

FeatureMatrix softmax_attention(const FeatureMatrix& queries, const FeatureMatrix& keys,
                                const FeatureMatrix& values) {
  check_qkv(queries, keys, values, "softmax_attention");
  FeatureMatrix out(queries.rows(), values.cols());
  softmax_block(queries, keys, values, out, 0);
  return out;
}

FeatureMatrix multi_head_attention(const FeatureMatrix& queries, const FeatureMatrix& keys,
                                   const FeatureMatrix& values, const CafConfig& cfg,
                                   AttentionMethod method) {
  cfg.validate();
  for (const FeatureMatrix* m : {&queries, &keys, &values}) {
    if (m->cols() != cfg.model_dim) {
      throw ShapeError("multi-head attention: input width " + std::to_string(m->cols()) +
                       " != model_dim " + std::to_string(cfg.model_dim));
    }
  }
  check_qkv(queries, keys, values, "multi-head attention");

  if (cfg.projection_seed) {
    const std::uint64_t s = cfg.projection_seed->value;
    CafConfig plain = cfg;
    plain.projection_seed.reset();
    return multi_head_attention(project(queries, Seed{s}), project(keys, Seed{s + 1}),
                                project(values, Seed{s + 2}), plain, method);
  }

  const std::size_t hd = cfg.head_dim();
  FeatureMatrix out(queries.rows(), cfg.model_dim);
  const ConstMatrixView q(queries), k(keys), v(values);
  if (method == AttentionMethod::Linear) {
    linear_heads(q, k, v, cfg.kernel, cfg.num_heads, out);
    return out;
  }
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const std::size_t c0 = h * hd;
    run_block(method, q.columns(c0, hd), k.columns(c0, hd), v.columns(c0, hd), cfg.kernel, out,
              c0);
  }
  return out;
}

FeatureMatrix multi_head_caf(const FeatureMatrix& queries, const FeatureMatrix& keys,
                             const FeatureMatrix& values, const CafConfig& cfg) {
  return multi_head_attention(queries, keys, values, cfg, AttentionMethod::Linear);
}

FusedSequence fuse(const FeatureMatrix& visual, const FeatureMatrix& text, const CafConfig& cfg,
                   FusionRole role) {
  if (visual.cols() != cfg.model_dim || text.cols() != cfg.model_dim) {
    throw ShapeError("fuse: visual width " + std::to_string(visual.cols()) + ", text width " +
                     std::to_string(text.cols()) + ", model_dim " +
                     std::to_string(cfg.model_dim));
  }
  const FeatureMatrix block = role == FusionRole::TextQuery
                                  ? multi_head_caf(text, visual, visual, cfg)
                                  : multi_head_caf(visual, text, text, cfg);

  FeatureMatrix tokens(block.rows() + text.rows(), cfg.model_dim);
  auto dst = tokens.values();
  std::copy(block.values().begin(), block.values().end(), dst.begin());
  std::copy(text.values().begin(), text.values().end(),
            dst.begin() + static_cast<std::ptrdiff_t>(block.size()));
  return FusedSequence{std::move(tokens), block.rows()};
}

namespace fault {

AttentionWeights attention_weights_without_uniform_term(std::span<const double> query,
                                                        const FeatureMatrix& keys,
                                                        KernelKind kernel) {
  return weights_impl(query, keys, kernel, false);
}

}  // namespace fault

}  // namespace cafkit
