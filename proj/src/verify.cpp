#include "cafkit/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <thread>

#include "cafkit/adcot.hpp"
#include "cafkit/error.hpp"
#include "cafkit/gradcheck.hpp"
#include "cafkit/vision.hpp"

namespace cafkit {

namespace {

// Property stream ids for derive_seed.
enum Stream : std::uint64_t {
  kNormalization = 1,
  kEquivalence,
  kMultiHead,
  kDegenerate,
  kShift,
  kInjectivity,
  kGradients,
  kKl,
  kStationarity,
  kShuffle,
};

template <typename T>
std::vector<T> parallel_map(std::size_t n, unsigned threads, const std::function<T(std::size_t)>& fn) {
  std::vector<T> out(n);
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) out[i] = fn(i);
    });
  }
  pool.clear();  // joins
  return out;
}

FeatureMatrix random_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  FeatureMatrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

std::size_t pick(SeededRng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

KernelKind pick_kernel(SeededRng& rng, const VerifyConfig& cfg) {
  if (cfg.kernel) return *cfg.kernel;
  return kAllKernels[pick(rng, 0, 2)];
}

std::vector<double> random_distribution(SeededRng& rng, std::size_t v, bool allow_zeros) {
  std::vector<double> p(v);
  double mass = 0.0;
  for (auto& x : p) {
    x = std::exp(rng.normal());
    if (allow_zeros && rng.uniform() < 0.2) x = 0.0;
    mass += x;
  }
  if (mass == 0.0) {
    p[0] = 1.0;
    mass = 1.0;
  }
  for (auto& x : p) x /= mass;
  return p;
}

double max_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

PropertyResult bounded_by(std::string name, std::string metric, const std::vector<double>& values,
                           double threshold) {
  const double m = max_of(values);
  // An empty run proves nothing, so it does not pass.
  return {std::move(name), std::move(metric), m, threshold, values.size(),
          !values.empty() && m <= threshold};
}

PropertyResult zero_failures(std::string name, const std::vector<int>& failed) {
  double count = 0;
  for (int f : failed) count += f;
  return {std::move(name), "failures", count, 0.0, failed.size(), !failed.empty() && count == 0};
}

PropertyResult normalization(const VerifyConfig& cfg) {
  auto errs = parallel_map<double>(cfg.normalization_instances, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kNormalization, i));
    const KernelKind k = pick_kernel(rng, cfg);
    const std::size_t d = pick(rng, 1, 64);
    const std::size_t n = pick(rng, 1, 256);
    const FeatureMatrix q = random_matrix(rng, 1, d);
    const FeatureMatrix keys = random_matrix(rng, n, d);
    const AttentionWeights w =
        cfg.sabotage == Sabotage::DropUniformTerm
            ? fault::attention_weights_without_uniform_term(q.row(0), keys, k)
            : attention_weights(q.row(0), keys, k);
    return std::abs(w.sum() - 1.0);
  });
  return bounded_by("normalization", "max|sum(w)-1|", errs, 1e-9);
}

PropertyResult equivalence(const VerifyConfig& cfg) {
  auto devs = parallel_map<double>(cfg.equivalence_instances, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kEquivalence, i));
    const KernelKind k = pick_kernel(rng, cfg);
    const std::size_t d = pick(rng, 1, 64);
    const std::size_t dv = pick(rng, 1, 64);
    const std::size_t nk = pick(rng, 1, 256);
    const std::size_t nq = pick(rng, 1, 32);
    const FeatureMatrix q = random_matrix(rng, nq, d);
    const FeatureMatrix keys = random_matrix(rng, nk, d);
    const FeatureMatrix v = random_matrix(rng, nk, dv);
    return max_rel_deviation(caf_linear(q, keys, v, k), caf_reference(q, keys, v, k));
  });
  return bounded_by("linear_vs_reference", "max_rel_err", devs, 1e-8);
}

PropertyResult multi_head(const VerifyConfig& cfg) {
  CafConfig caf{cfg.dim, cfg.heads, KernelKind::Identity, std::nullopt};
  auto devs = parallel_map<double>(100, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kMultiHead, i));
    CafConfig c = caf;
    c.kernel = pick_kernel(rng, cfg);
    const std::size_t nq = pick(rng, 1, 16);
    const std::size_t nk = pick(rng, 1, 128);
    const FeatureMatrix q = random_matrix(rng, nq, cfg.dim);
    const FeatureMatrix keys = random_matrix(rng, nk, cfg.dim);
    const FeatureMatrix v = random_matrix(rng, nk, cfg.dim);
    const FeatureMatrix got = multi_head_caf(q, keys, v, c);
    const std::size_t hd = c.head_dim();
    double worst = 0.0;
    for (std::size_t h = 0; h < c.num_heads; ++h) {
      const FeatureMatrix ref = caf_reference(q.col_slice(h * hd, hd), keys.col_slice(h * hd, hd),
                                              v.col_slice(h * hd, hd), c.kernel);
      worst = std::max(worst, max_rel_deviation(got.col_slice(h * hd, hd), ref));
    }
    return worst;
  });
  return bounded_by("multi_head_vs_per_head_reference", "max_rel_err", devs, 1e-8);
}

std::vector<PropertyResult> degenerate(const VerifyConfig& cfg) {
  const std::size_t n = 100;
  auto single = parallel_map<int>(n, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kDegenerate, i));
    const std::size_t d = pick(rng, 1, 64);
    const FeatureMatrix q = random_matrix(rng, 1, d, 5.0);
    const FeatureMatrix keys = random_matrix(rng, 1, d, 5.0);
    const AttentionWeights w = attention_weights(q.row(0), keys, pick_kernel(rng, cfg));
    return static_cast<int>(!(w.values.size() == 1 && w.values[0] == 1.0));
  });
  auto collapse = parallel_map<double>(n, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kDegenerate, n + i));
    const KernelKind k = pick_kernel(rng, cfg);
    const std::size_t d = pick(rng, 1, 64);
    const std::size_t nk = pick(rng, 1, 256);
    const FeatureMatrix q = random_matrix(rng, pick(rng, 1, 16), d);
    const FeatureMatrix one_key = random_matrix(rng, 1, d);
    FeatureMatrix keys(nk, d);
    for (std::size_t j = 0; j < nk; ++j) std::ranges::copy(one_key.row(0), keys.row(j).begin());
    const FeatureMatrix v = random_matrix(rng, nk, pick(rng, 1, 64));
    std::vector<double> mean(v.cols(), 0.0);
    for (std::size_t j = 0; j < nk; ++j)
      for (std::size_t b = 0; b < v.cols(); ++b) mean[b] += v(j, b);
    for (double& m : mean) m /= static_cast<double>(nk);
    const FeatureMatrix out = caf_linear(q, keys, v, k);
    double worst = 0.0;
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t b = 0; b < out.cols(); ++b)
        worst = std::max(worst, std::abs(out(r, b) - mean[b]));
    return worst;
  });
  auto one_head = parallel_map<int>(n, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kDegenerate, 2 * n + i));
    const std::size_t d = pick(rng, 1, 64);
    const std::size_t nk = pick(rng, 1, 128);
    const FeatureMatrix q = random_matrix(rng, pick(rng, 1, 16), d);
    const FeatureMatrix keys = random_matrix(rng, nk, d);
    const FeatureMatrix v = random_matrix(rng, nk, d);
    const KernelKind k = pick_kernel(rng, cfg);
    const CafConfig c{d, 1, k, std::nullopt};
    return static_cast<int>(!(multi_head_caf(q, keys, v, c) == caf_linear(q, keys, v, k)));
  });
  return {zero_failures("single_key_weight_is_one", single),
          bounded_by("identical_keys_give_value_mean", "max_abs_err", collapse, 1e-10),
          zero_failures("one_head_bitwise_equals_linear", one_head)};
}

PropertyResult shift_invariance(const VerifyConfig& cfg) {
  auto errs = parallel_map<double>(200, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kShift, i));
    const std::size_t d = pick(rng, 1, 32);
    const std::size_t n = pick(rng, 1, 128);
    const double c = rng.uniform(-10.0, 10.0);
    const FeatureMatrix q = random_matrix(rng, 1, d);
    const FeatureMatrix keys = random_matrix(rng, n, d);
    // Appending 1 to q and c to every key adds c to every score.
    FeatureMatrix q2(1, d + 1);
    FeatureMatrix keys2(n, d + 1);
    std::ranges::copy(q.row(0), q2.row(0).begin());
    q2(0, d) = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      std::ranges::copy(keys.row(j), keys2.row(j).begin());
      keys2(j, d) = c;
    }
    const auto w1 = attention_weights(q.row(0), keys, KernelKind::Identity).values;
    const auto w2 = attention_weights(q2.row(0), keys2, KernelKind::Identity).values;
    double worst = 0.0;
    for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(w1[j] - w2[j]));
    return worst;
  });
  return bounded_by("score_shift_invariance", "max_abs_err", errs, 1e-9);
}

PropertyResult injectivity(const VerifyConfig& cfg) {
  auto failed = parallel_map<int>(cfg.injectivity_trials, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kInjectivity, i));
    const std::size_t d = pick(rng, 1, 16);
    const std::size_t n = pick(rng, d + 1, d + 32);
    const FeatureMatrix keys = random_matrix(rng, n, d);
    const FeatureMatrix qa = random_matrix(rng, 1, d);
    const FeatureMatrix qb = random_matrix(rng, 1, d);
    const auto wa = attention_weights(qa.row(0), keys, KernelKind::Identity).values;
    const auto wb = attention_weights(qb.row(0), keys, KernelKind::Identity).values;
    double gap = 0.0;
    for (std::size_t j = 0; j < n; ++j) gap = std::max(gap, std::abs(wa[j] - wb[j]));
    return static_cast<int>(!(qa != qb && gap > 1e-12));
  });
  return zero_failures("distinct_queries_distinct_weights", failed);
}

struct LossInstance {
  FeatureMatrix logits;
  TokenSeq targets;
  TeacherTrace teacher;
  UncertaintyParams u;
};

LossInstance random_loss_instance(SeededRng& rng) {
  const std::size_t l = pick(rng, 1, 6);
  const std::size_t lp = pick(rng, 1, 6);
  const std::size_t v = pick(rng, 2, 10);
  LossInstance inst{random_matrix(rng, l, v, 2.0), TokenSeq{{}, v}, TeacherTrace{}, {}};
  for (std::size_t i = 0; i < l; ++i) inst.targets.ids.push_back(rng.uniform_int(0, static_cast<std::int64_t>(v) - 1));
  inst.teacher.vocab_size = v;
  for (std::size_t i = 0; i < lp; ++i) inst.teacher.answer_dists.push_back(random_distribution(rng, v, true));
  inst.u = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
  return inst;
}

PropertyResult gradients(const VerifyConfig& cfg) {
  constexpr double kTolRel = 1e-4;
  constexpr double kTolAbs = 1e-7;
  auto rel = parallel_map<double>(cfg.gradient_instances, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kGradients, i));
    const LossInstance inst = random_loss_instance(rng);
    const std::size_t nl = inst.logits.size();
    std::vector<double> x(inst.logits.values().begin(), inst.logits.values().end());
    x.push_back(inst.u.s_hard);
    x.push_back(inst.u.s_soft);

    const auto total = [&](std::span<const double> p) {
      FeatureMatrix lg(inst.logits.rows(), inst.logits.cols(),
                       std::vector<double>(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(nl)));
      return distill_loss(lg, inst.targets, inst.teacher, {p[nl], p[nl + 1]}).total;
    };
    const LossBreakdown lb = distill_loss(inst.logits, inst.targets, inst.teacher, inst.u);
    std::vector<double> analytic(lb.grad_logits->values().begin(), lb.grad_logits->values().end());
    analytic.push_back(lb.grad_s_hard);
    analytic.push_back(lb.grad_s_soft);
    const std::vector<double> numeric = finite_diff_grad(total, x);
    const GradReport rep = check_grads(analytic, numeric, kTolRel, kTolAbs);
    // |a - n| / max(|n|, floor / tol): at most kTolRel exactly when each
    // coordinate is within kTolRel relative or kTolAbs absolute.
    double worst = 0.0;
    for (std::size_t j = 0; j < numeric.size(); ++j) {
      worst = std::max(worst, std::abs(analytic[j] - numeric[j]) /
                                  std::max(std::abs(numeric[j]), kTolAbs / kTolRel));
    }
    return rep.pass ? worst : std::max(worst, 1.0);
  });
  return bounded_by("loss_gradients_vs_central_differences", "floored_rel_err", rel, kTolRel);
}

std::vector<PropertyResult> kl_contract(const VerifyConfig& cfg) {
  const std::size_t n = cfg.kl_instances;
  auto negativity = parallel_map<double>(n, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kKl, i));
    const LossInstance inst = random_loss_instance(rng);
    return std::max(0.0, -kl_term(inst.teacher, inst.logits).value);
  });
  auto at_teacher = parallel_map<double>(n, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kKl, n + i));
    const std::size_t l = pick(rng, 1, 6);
    const std::size_t v = pick(rng, 2, 10);
    TeacherTrace t{"", {}, std::nullopt, v};
    FeatureMatrix logits(l, v);
    const double offset = rng.uniform(-5.0, 5.0);
    for (std::size_t r = 0; r < l; ++r) {
      t.answer_dists.push_back(random_distribution(rng, v, false));
      for (std::size_t c = 0; c < v; ++c) logits(r, c) = std::log(t.answer_dists[r][c]) + offset;
    }
    const TermWithGrad kl = kl_term(t, logits);
    double worst = std::abs(kl.value);
    for (double g : kl.grad.values()) worst = std::max(worst, std::abs(g));
    return worst;
  });
  auto truncation = parallel_map<double>(n, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kKl, 2 * n + i));
    const std::size_t lp = pick(rng, 1, 4);
    const std::size_t l = pick(rng, lp + 1, lp + 4);
    const std::size_t v = pick(rng, 2, 10);
    TeacherTrace t{"", {}, std::nullopt, v};
    for (std::size_t r = 0; r < lp; ++r) t.answer_dists.push_back(random_distribution(rng, v, true));
    const FeatureMatrix logits = random_matrix(rng, l, v, 2.0);
    FeatureMatrix perturbed = logits;
    for (std::size_t r = lp; r < l; ++r)
      for (std::size_t c = 0; c < v; ++c) perturbed(r, c) += rng.normal() * 10.0;
    const TermWithGrad a = kl_term(t, logits);
    const TermWithGrad b = kl_term(t, perturbed);
    double change = std::abs(a.value - b.value);
    for (std::size_t k = 0; k < a.grad.size(); ++k)
      change = std::max(change, std::abs(a.grad.values()[k] - b.grad.values()[k]));
    for (std::size_t r = lp; r < l; ++r)
      for (std::size_t c = 0; c < v; ++c) change = std::max(change, std::abs(a.grad(r, c)));
    return change;
  });
  return {bounded_by("kl_nonnegative", "max(-kl)", negativity, 0.0),
          bounded_by("kl_zero_at_teacher", "max|kl|,|grad|", at_teacher, 1e-12),
          bounded_by("kl_truncation_cut", "max_change", truncation, 0.0)};
}

std::vector<PropertyResult> uncertainty(const VerifyConfig& cfg) {
  const std::size_t n = cfg.stationarity_instances;
  auto stationary = parallel_map<double>(n, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kStationarity, i));
    const double t = std::exp(rng.uniform(std::log(1e-3), std::log(1e3)));
    const double s = std::log(2.0 * t);
    const LossBreakdown lb = mtl_loss(t, t, {s, s});
    return std::max(std::abs(lb.grad_s_hard), std::abs(lb.grad_s_soft));
  });
  auto monotone = parallel_map<int>(n, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kStationarity, n + i));
    const double t = std::exp(rng.uniform(std::log(1e-3), std::log(1e3)));
    const double s_star = std::log(2.0 * t);
    const double delta = rng.uniform(0.05, 2.0);
    // Term exceeds e^s / 2 below the stationary point: total decreasing in s.
    const LossBreakdown below = mtl_loss(t, 0.0, {s_star - delta, 0.0});
    const LossBreakdown above = mtl_loss(t, 0.0, {s_star + delta, 0.0});
    const bool ok = below.grad_s_hard < 0.0 && above.grad_s_hard > 0.0 &&
                    below.total > mtl_loss(t, 0.0, {s_star, 0.0}).total &&
                    above.total > mtl_loss(t, 0.0, {s_star, 0.0}).total;
    return static_cast<int>(!ok);
  });
  return {bounded_by("uncertainty_stationary_at_2T", "max|d total/ds|", stationary, 1e-10),
          zero_failures("uncertainty_monotone_around_stationary", monotone)};
}

PropertyResult shuffle_bijection(const VerifyConfig& cfg) {
  auto failed = parallel_map<int>(cfg.shuffle_instances, cfg.threads, [&](std::size_t i) {
    SeededRng rng(derive_seed(cfg.seed, kShuffle, i));
    const std::size_t r = pick(rng, 1, 4);
    const std::size_t h = r * pick(rng, 1, 8);
    const std::size_t w = r * pick(rng, 1, 8);
    const std::size_t c = pick(rng, 1, 4);
    FeatureMap in(h, w, c);
    for (double& v : in.values()) v = rng.normal();
    const FeatureMap out = pixel_shuffle(in, r);
    const bool shape = out.height() == h / r && out.width() == w / r && out.channels() == c * r * r;
    std::vector<double> a(in.values().begin(), in.values().end());
    std::vector<double> b(out.values().begin(), out.values().end());
    std::ranges::sort(a);
    std::ranges::sort(b);
    return static_cast<int>(!(shape && a == b && inverse_pixel_shuffle(out, r) == in));
  });
  return zero_failures("pixel_shuffle_bijection", failed);
}

void append(std::vector<PropertyResult>& dst, std::vector<PropertyResult> src) {
  for (auto& p : src) dst.push_back(std::move(p));
}

}  // namespace

Sabotage parse_sabotage(std::string_view name) {
  if (name == "none") return Sabotage::None;
  if (name == "drop-uniform") return Sabotage::DropUniformTerm;
  throw ConfigError("unknown sabotage mode '" + std::string(name) + "' (expected none|drop-uniform)");
}

std::string_view to_string(Sabotage s) noexcept {
  return s == Sabotage::DropUniformTerm ? "drop-uniform" : "none";
}

void VerifyConfig::validate() const {
  CafConfig{dim, heads, KernelKind::Identity, std::nullopt}.validate();
  if (threads == 0) throw ConfigError("threads must be >= 1");
}

bool VerifyReport::all_pass() const noexcept { return failures() == 0; }

std::size_t VerifyReport::failures() const noexcept {
  return static_cast<std::size_t>(
      std::ranges::count_if(properties, [](const PropertyResult& p) { return !p.pass; }));
}

std::string VerifyReport::to_text() const {
  std::string out;
  char buf[256];
  for (const auto& p : properties) {
    std::snprintf(buf, sizeof buf, "%s %-40s %-16s = %.3e (<= %.1e, n=%zu)\n",
                  p.pass ? "PASS" : "FAIL", p.name.c_str(), p.metric.c_str(), p.measured,
                  p.threshold, p.instances);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "%zu properties, %zu failed\n", properties.size(), failures());
  out += buf;
  return out;
}

VerifyReport run_verify(const VerifyConfig& cfg) {
  cfg.validate();
  VerifyReport rep;
  rep.properties.push_back(normalization(cfg));
  rep.properties.push_back(equivalence(cfg));
  rep.properties.push_back(multi_head(cfg));
  append(rep.properties, degenerate(cfg));
  rep.properties.push_back(shift_invariance(cfg));
  rep.properties.push_back(injectivity(cfg));
  rep.properties.push_back(gradients(cfg));
  append(rep.properties, kl_contract(cfg));
  append(rep.properties, uncertainty(cfg));
  rep.properties.push_back(shuffle_bijection(cfg));
  return rep;
}

double max_rel_deviation(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("max_rel_deviation: shape mismatch");
  }
  double worst = 0.0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    worst = std::max(worst, std::abs(av[i] - bv[i]) / std::max(std::abs(bv[i]), 1.0));
  }
  return worst;
}

Seed derive_seed(Seed base, std::uint64_t stream, std::uint64_t index) noexcept {
  // splitmix64 finalizer over a combined key
  std::uint64_t z = base.value ^ (stream * 0x9E3779B97F4A7C15ULL) ^ (index * 0xD1B54A32D192ED03ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Seed{z ^ (z >> 31)};
}

}  // namespace cafkit
