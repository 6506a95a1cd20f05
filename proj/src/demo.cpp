#include "cafkit/demo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cafkit/error.hpp"
#include "cafkit/verify.hpp"

namespace cafkit {

namespace {

double frobenius(const FeatureMatrix& m, std::size_t row_begin, std::size_t row_end) {
  double s = 0.0;
  for (std::size_t r = row_begin; r < row_end; ++r)
    for (double v : m.row(r)) s += v * v;
  return std::sqrt(s);
}

double mean_row_norm(const FeatureMatrix& m, std::size_t row_begin, std::size_t row_end) {
  if (row_end <= row_begin) return 0.0;
  double s = 0.0;
  for (std::size_t r = row_begin; r < row_end; ++r) {
    double rs = 0.0;
    for (double v : m.row(r)) rs += v * v;
    s += std::sqrt(rs);
  }
  return s / static_cast<double>(row_end - row_begin);
}

std::string_view role_name(FusionRole r) {
  return r == FusionRole::TextQuery ? "text-query" : "image-query";
}

}  // namespace

// --- loss demo ------------------------------------------------------------------

std::string LossDemoReport::to_text() const {
  std::string out = "step,hard,soft,sigma2_hard,sigma2_soft,total\n";
  char buf[256];
  for (const auto& s : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.10e,%.10e,%.10e,%.10e,%.10e\n", s.step, s.hard, s.soft,
                  s.sigma2_hard, s.sigma2_soft, s.total);
    out += buf;
  }
  return out;
}

LossDemoReport run_loss_demo(const std::vector<TeacherTrace>& traces,
                             const std::vector<TokenSeq>& labels, const LossDemoConfig& cfg) {
  if (traces.empty() || traces.size() != labels.size()) {
    throw InvalidInputError("loss demo: " + std::to_string(traces.size()) + " traces vs " +
                            std::to_string(labels.size()) + " labels");
  }
  if (cfg.feature_dim == 0 || !(cfg.lr > 0.0)) throw ConfigError("loss demo: bad feature_dim or lr");
  const std::size_t vocab = labels.front().vocab_size;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    labels[n].validate();
    if (labels[n].vocab_size != vocab || traces[n].vocab_size != vocab) {
      throw InvalidInputError("loss demo: vocabulary sizes disagree at sample " +
                              std::to_string(n));
    }
  }

  const std::size_t samples = labels.size();
  const std::size_t f = cfg.feature_dim;
  const double feat_scale = 1.0 / std::sqrt(static_cast<double>(f));
  std::vector<FeatureMatrix> features;
  for (std::size_t n = 0; n < samples; ++n) {
    FeatureMatrix x = seeded_random_matrix(labels[n].size(), f, derive_seed(cfg.seed, 0xF0, n));
    for (double& v : x.values()) v *= feat_scale;
    features.push_back(std::move(x));
  }

  FeatureMatrix w(f, vocab);
  std::vector<double> bias(vocab, 0.0);
  UncertaintyParams u{0.0, 0.0};
  const double inv_samples = 1.0 / static_cast<double>(samples);

  LossDemoReport report;
  for (std::size_t step = 0;; ++step) {
    double hard = 0.0;
    double soft = 0.0;
    std::vector<FeatureMatrix> hard_grads, soft_grads;
    for (std::size_t n = 0; n < samples; ++n) {
      FeatureMatrix logits = matmul(features[n], w);
      for (std::size_t r = 0; r < logits.rows(); ++r)
        for (std::size_t v = 0; v < vocab; ++v) logits(r, v) += bias[v];
      TermWithGrad h = nll_term(logits, labels[n]);
      TermWithGrad s = kl_term(traces[n], logits);
      hard += h.value * inv_samples;
      soft += s.value * inv_samples;
      hard_grads.push_back(std::move(h.grad));
      soft_grads.push_back(std::move(s.grad));
    }
    const LossBreakdown lb = mtl_loss(hard, soft, u);
    report.curve.push_back({step, hard, soft, u.sigma2_hard(), u.sigma2_soft(), lb.total});
    if (step == cfg.steps) break;

    const double wh = std::exp(-u.s_hard) * inv_samples;
    const double ws = std::exp(-u.s_soft) * inv_samples;
    FeatureMatrix dw(f, vocab);
    std::vector<double> db(vocab, 0.0);
    for (std::size_t n = 0; n < samples; ++n) {
      const FeatureMatrix& x = features[n];
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t v = 0; v < vocab; ++v) {
          const double g = wh * hard_grads[n](r, v) + ws * soft_grads[n](r, v);
          db[v] += g;
          for (std::size_t a = 0; a < f; ++a) dw(a, v) += x(r, a) * g;
        }
      }
    }
    for (std::size_t i = 0; i < dw.size(); ++i) w.values()[i] -= cfg.lr * dw.values()[i];
    for (std::size_t v = 0; v < vocab; ++v) bias[v] -= cfg.lr * db[v];
    u.s_hard = std::max(cfg.min_log_sigma2, u.s_hard - cfg.lr * lb.grad_s_hard);
    u.s_soft = std::max(cfg.min_log_sigma2, u.s_soft - cfg.lr * lb.grad_s_soft);
  }
  return report;
}

Fixture make_fixture(FixtureKind kind, Seed seed, std::size_t samples, std::size_t vocab,
                     std::size_t max_len) {
  if (samples == 0 || vocab < 2 || max_len == 0) throw ConfigError("make_fixture: bad sizes");
  SeededRng rng(seed);
  Fixture fx;
  for (std::size_t n = 0; n < samples; ++n) {
    const auto len = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(max_len)));
    TokenSeq label{{}, vocab};
    for (std::size_t l = 0; l < len; ++l)
      label.ids.push_back(rng.uniform_int(0, static_cast<std::int64_t>(vocab) - 1));

    TeacherTrace t;
    t.vocab_size = vocab;
    t.reasoning = "Perceive: synthetic scene " + std::to_string(n) +
                  ". Reason: answer tokens follow from the scene layout.";
    std::vector<std::int64_t> answer;
    for (std::size_t l = 0; l < len; ++l) {
      std::vector<double> p(vocab, 0.0);
      if (kind == FixtureKind::Consistent) {
        p[static_cast<std::size_t>(label.ids[l])] = 1.0;
        answer.push_back(label.ids[l]);
      } else {
        const auto shift = rng.uniform_int(1, static_cast<std::int64_t>(vocab) - 1);
        const auto other = static_cast<std::size_t>((label.ids[l] + shift) % static_cast<std::int64_t>(vocab));
        // 0.75 on a wrong token, the remaining mass spread evenly.
        const double rest = 0.25 / static_cast<double>(vocab - 1);
        std::fill(p.begin(), p.end(), rest);
        p[other] = 0.75;
        answer.push_back(static_cast<std::int64_t>(other));
      }
      t.answer_dists.push_back(std::move(p));
    }
    t.answer_ids = std::move(answer);
    fx.labels.push_back(std::move(label));
    fx.traces.push_back(std::move(t));
  }
  return fx;
}

void write_fixture(const Fixture& f, const std::filesystem::path& traces_path,
                   const std::filesystem::path& labels_path) {
  std::ofstream traces(traces_path, std::ios::binary);
  std::ofstream labels(labels_path, std::ios::binary);
  if (!traces || !labels) throw Error("cannot write fixture files");
  for (const auto& t : f.traces) traces << serialize_teacher_trace(t) << '\n';
  for (const auto& l : f.labels) labels << serialize_label(l) << '\n';
}

// --- fuse demo ------------------------------------------------------------------

FeatureMatrix embed_tokens(const TokenSeq& tokens, std::size_t dim, Seed seed) {
  tokens.validate();
  FeatureMatrix out(tokens.size(), dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    SeededRng rng(derive_seed(seed, 0xE3, static_cast<std::uint64_t>(tokens.ids[i])));
    for (double& v : out.row(i)) v = scale * rng.normal();
  }
  return out;
}

std::string FuseDemoSummary::to_text() const {
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "image: %zux%zu\n"
                "patches: %zu (+1 global)\n"
                "visual_tokens: %zu\n"
                "prompt_tokens: %zu\n"
                "role: %s\n"
                "fused_rows: %zu\n"
                "sequence_length: %zu\n"
                "boundary: %zu\n"
                "fused_block_norm: %.9f\n"
                "text_block_norm: %.9f\n"
                "fused_mean_row_norm: %.9f\n"
                "text_mean_row_norm: %.9f\n",
                image_height, image_width, patch_count, visual_tokens, prompt_tokens,
                std::string(role_name(role)).c_str(), fused_rows, sequence_length, boundary,
                fused_block_norm, text_block_norm, fused_mean_row_norm, text_mean_row_norm);
  return buf;
}

FuseDemoSummary run_fuse_demo(const FuseDemoConfig& cfg) {
  cfg.caf.validate();
  if (cfg.question_len == 0) throw ConfigError("fuse demo: question_len must be >= 1");
  if (cfg.vocab == 0) throw ConfigError("fuse demo: vocab must be >= 1");

  const ImageTensor img =
      cfg.image ? read_pnm(*cfg.image)
                : synthetic_image(cfg.synthetic_size, cfg.synthetic_size, cfg.synthetic_seed);
  const PatchSet patches = adaptive_encode(img, cfg.tile, cfg.thumb);
  VisualEncoderConfig enc = cfg.encoder;
  enc.model_dim = cfg.caf.model_dim;
  const FeatureMatrix visual = encode_visual_tokens(patches, enc);

  SeededRng rng(derive_seed(cfg.synthetic_seed, 0x7E, 0));
  const auto draw = [&](std::size_t n) {
    TokenSeq t{{}, cfg.vocab};
    for (std::size_t i = 0; i < n; ++i)
      t.ids.push_back(rng.uniform_int(0, static_cast<std::int64_t>(cfg.vocab) - 1));
    return t;
  };
  const TokenSeq question = draw(cfg.question_len);
  const TokenSeq prompt = cfg.cot_len == 0 ? question
                                           : build_enriched_prompt(question, draw(cfg.cot_len));
  const FeatureMatrix text = embed_tokens(prompt, cfg.caf.model_dim, cfg.synthetic_seed);
  const FusedSequence fused = fuse(visual, text, cfg.caf, cfg.role);

  FuseDemoSummary s;
  s.image_height = img.height();
  s.image_width = img.width();
  s.patch_count = patches.patches.size();
  s.visual_tokens = visual.rows();
  s.prompt_tokens = prompt.size();
  s.fused_rows = fused.boundary;
  s.sequence_length = fused.tokens.rows();
  s.boundary = fused.boundary;
  s.fused_block_norm = frobenius(fused.tokens, 0, fused.boundary);
  s.text_block_norm = frobenius(fused.tokens, fused.boundary, fused.tokens.rows());
  s.fused_mean_row_norm = mean_row_norm(fused.tokens, 0, fused.boundary);
  s.text_mean_row_norm = mean_row_norm(fused.tokens, fused.boundary, fused.tokens.rows());
  s.role = cfg.role;
  return s;
}

}  // namespace cafkit
