#include "cafkit/adcot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cafkit/error.hpp"

namespace cafkit {

using nlohmann::json;

void TokenSeq::validate() const {
  if (ids.empty()) throw InvalidInputError("token sequence is empty");
  if (vocab_size == 0) throw InvalidInputError("vocab_size must be >= 1");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size) {
      throw InvalidInputError("token id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside vocab of " +
                              std::to_string(vocab_size));
    }
  }
}

void TeacherTrace::validate() const {
  if (answer_dists.empty()) throw InvalidInputError("teacher trace has no answer distributions");
  for (std::size_t l = 0; l < answer_dists.size(); ++l) {
    const auto& p = answer_dists[l];
    if (p.size() != vocab_size) {
      throw InvalidInputError("teacher distribution " + std::to_string(l) + " has width " +
                              std::to_string(p.size()) + ", vocab is " +
                              std::to_string(vocab_size));
    }
    double mass = 0.0;
    for (double v : p) {
      if (!std::isfinite(v) || v < 0.0) {
        throw InvalidInputError("teacher distribution " + std::to_string(l) +
                                " has a negative or non-finite probability");
      }
      mass += v;
    }
    if (std::abs(mass - 1.0) > kDistributionTolerance) {
      throw InvalidInputError("teacher distribution " + std::to_string(l) + " has mass " +
                              std::to_string(mass));
    }
  }
}

double UncertaintyParams::sigma2_hard() const noexcept { return std::exp(s_hard); }
double UncertaintyParams::sigma2_soft() const noexcept { return std::exp(s_soft); }

TokenSeq build_enriched_prompt(const TokenSeq& question, const TokenSeq& cot) {
  if (question.vocab_size != cot.vocab_size) {
    throw InvalidInputError("question vocab " + std::to_string(question.vocab_size) +
                            " != chain-of-thought vocab " + std::to_string(cot.vocab_size));
  }
  question.validate();
  cot.validate();
  TokenSeq out{question.ids, question.vocab_size};
  out.ids.insert(out.ids.end(), cot.ids.begin(), cot.ids.end());
  return out;
}

TermWithGrad nll_term(const FeatureMatrix& logits, const TokenSeq& targets) {
  targets.validate();
  if (logits.rows() != targets.size() || logits.cols() != targets.vocab_size) {
    throw ShapeError("nll_term: logits " + std::to_string(logits.rows()) + "x" +
                     std::to_string(logits.cols()) + " vs " + std::to_string(targets.size()) +
                     " targets over vocab " + std::to_string(targets.vocab_size));
  }
  require_finite(logits.values(), "nll_term");
  TermWithGrad out{0.0, FeatureMatrix(logits.rows(), logits.cols())};
  std::vector<double> logp(logits.cols());
  for (std::size_t l = 0; l < logits.rows(); ++l) {
    log_softmax_row(logits.row(l), logp);
    const auto t = static_cast<std::size_t>(targets.ids[l]);
    out.value -= logp[t];
    auto g = out.grad.row(l);
    for (std::size_t v = 0; v < logp.size(); ++v) g[v] = std::exp(logp[v]);
    g[t] -= 1.0;
  }
  return out;
}

TermWithGrad kl_term(const TeacherTrace& teacher, const FeatureMatrix& logits, KlOptions opts) {
  if (teacher.answer_dists.empty()) {
    throw InvalidInputError("kl_term: teacher trace has no answer distributions");
  }
  if (logits.cols() != teacher.vocab_size) {
    throw ShapeError("kl_term: logits width " + std::to_string(logits.cols()) +
                     " != teacher vocab " + std::to_string(teacher.vocab_size));
  }
  require_finite(logits.values(), "kl_term");
  if (!opts.renormalize) teacher.validate();

  TermWithGrad out{0.0, FeatureMatrix(logits.rows(), logits.cols())};
  const std::size_t cut = std::min(logits.rows(), teacher.length());
  std::vector<double> logq(logits.cols());
  std::vector<double> p(logits.cols());
  for (std::size_t l = 0; l < cut; ++l) {
    const auto& row = teacher.answer_dists[l];
    if (row.size() != logits.cols()) throw ShapeError("kl_term: ragged teacher distribution");
    double mass = 0.0;
    for (double v : row) {
      if (!std::isfinite(v) || v < 0.0) throw InvalidInputError("kl_term: bad teacher probability");
      mass += v;
    }
    if (opts.renormalize) {
      if (mass <= 0.0) throw InvalidInputError("kl_term: teacher row with zero mass");
      for (std::size_t v = 0; v < row.size(); ++v) p[v] = row[v] / mass;
      mass = 1.0;
    } else {
      std::copy(row.begin(), row.end(), p.begin());
    }

    log_softmax_row(logits.row(l), logq);
    auto g = out.grad.row(l);
    for (std::size_t v = 0; v < p.size(); ++v) {
      if (p[v] > 0.0) out.value += p[v] * (std::log(p[v]) - logq[v]);  // 0 log 0 := 0
      g[v] = std::exp(logq[v]) * mass - p[v];
    }
  }
  return out;
}

LossBreakdown mtl_loss(double hard, double soft, const UncertaintyParams& u) {
  for (double v : {hard, soft, u.s_hard, u.s_soft}) {
    if (!std::isfinite(v)) throw InvalidInputError("mtl_loss: non-finite input");
  }
  if (hard < 0.0 || soft < 0.0) throw InvalidInputError("mtl_loss: task terms must be >= 0");
  LossBreakdown out;
  out.hard_term = hard;
  out.soft_term = soft;
  const double w_hard = std::exp(-u.s_hard);
  const double w_soft = std::exp(-u.s_soft);
  out.reg_term = 0.5 * u.s_hard + 0.5 * u.s_soft;
  out.total = hard * w_hard + soft * w_soft + out.reg_term;
  out.grad_s_hard = -hard * w_hard + 0.5;
  out.grad_s_soft = -soft * w_soft + 0.5;
  return out;
}

LossBreakdown distill_loss(const FeatureMatrix& logits, const TokenSeq& targets,
                           const TeacherTrace& teacher, const UncertaintyParams& u,
                           KlOptions opts) {
  const TermWithGrad hard = nll_term(logits, targets);
  const TermWithGrad soft = kl_term(teacher, logits, opts);
  LossBreakdown out = mtl_loss(hard.value, soft.value, u);
  const double w_hard = std::exp(-u.s_hard);
  const double w_soft = std::exp(-u.s_soft);
  FeatureMatrix grad(logits.rows(), logits.cols());
  auto g = grad.values();
  auto gh = hard.grad.values();
  auto gs = soft.grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = w_hard * gh[i] + w_soft * gs[i];
  out.grad_logits = std::move(grad);
  return out;
}

// --- JSON Lines -----------------------------------------------------------------

namespace {

json parse_json(std::string_view line) {
  try {
    return json::parse(line.begin(), line.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
  }
}

template <typename T>
T field(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ParseError(std::string("missing field '") + key + "'", 0);
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("field '") + key + "': " + e.what(), 0);
  }
}

std::size_t vocab_field(const json& obj) {
  const auto v = field<std::int64_t>(obj, "vocab");
  if (v <= 0) throw InvalidInputError("vocab must be >= 1, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

template <typename Fn>
auto read_lines(const std::filesystem::path& path, Fn&& parse_one) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'", 0);
  std::vector<decltype(parse_one(std::string_view{}))> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(parse_one(line));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what(), e.offset(),
                       lineno);
    } catch (const Error& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what(), 0, lineno);
    }
  }
  return out;
}

}  // namespace

TeacherTrace parse_teacher_trace(std::string_view line, TraceParseOptions opts) {
  const json obj = parse_json(line);
  TeacherTrace trace;
  trace.reasoning = field<std::string>(obj, "reasoning");
  trace.vocab_size = vocab_field(obj);
  const auto dists = field<std::vector<json>>(obj, "dists");
  if (dists.empty()) throw InvalidInputError("teacher trace has no answer distributions");

  for (std::size_t l = 0; l < dists.size(); ++l) {
    if (!dists[l].is_array()) throw ParseError("dists[" + std::to_string(l) + "] is not a list", 0);
    std::vector<double> dense(trace.vocab_size, 0.0);
    std::vector<bool> seen(trace.vocab_size, false);
    for (const json& entry : dists[l]) {
      if (!entry.is_array() || entry.size() != 2 || !entry[0].is_number_integer() ||
          !entry[1].is_number()) {
        throw ParseError("dists[" + std::to_string(l) + "] entries must be [token_id, prob]", 0);
      }
      const auto id = entry[0].get<std::int64_t>();
      const auto p = entry[1].get<double>();
      if (id < 0 || static_cast<std::size_t>(id) >= trace.vocab_size) {
        throw InvalidInputError("token id " + std::to_string(id) + " outside vocab");
      }
      if (!std::isfinite(p) || p < 0.0) {
        throw InvalidInputError("negative or non-finite probability at dists[" +
                                std::to_string(l) + "]");
      }
      if (seen[id]) throw InvalidInputError("duplicate token id " + std::to_string(id));
      seen[id] = true;
      dense[id] = p;
    }
    double mass = 0.0;
    for (double v : dense) mass += v;
    if (std::abs(mass - 1.0) > kDistributionTolerance) {
      if (!opts.renormalize || mass <= 0.0) {
        throw InvalidInputError("dists[" + std::to_string(l) + "] has mass " +
                                std::to_string(mass));
      }
      for (double& v : dense) v /= mass;
    }
    trace.answer_dists.push_back(std::move(dense));
  }

  if (obj.contains("answer_ids") && !obj.at("answer_ids").is_null()) {
    TokenSeq ids{field<std::vector<std::int64_t>>(obj, "answer_ids"), trace.vocab_size};
    ids.validate();
    trace.answer_ids = std::move(ids.ids);
  }
  return trace;
}

TokenSeq parse_label(std::string_view line) {
  const json obj = parse_json(line);
  TokenSeq seq{field<std::vector<std::int64_t>>(obj, "ids"), vocab_field(obj)};
  seq.validate();
  return seq;
}

std::string serialize_teacher_trace(const TeacherTrace& trace) {
  json dists = json::array();
  for (const auto& row : trace.answer_dists) {
    json sparse = json::array();
    for (std::size_t v = 0; v < row.size(); ++v) {
      if (row[v] != 0.0) sparse.push_back({static_cast<std::int64_t>(v), row[v]});
    }
    dists.push_back(std::move(sparse));
  }
  json obj = {{"reasoning", trace.reasoning},
              {"dists", std::move(dists)},
              {"vocab", trace.vocab_size}};
  if (trace.answer_ids) obj["answer_ids"] = *trace.answer_ids;
  return obj.dump();
}

std::string serialize_label(const TokenSeq& label) {
  return json{{"ids", label.ids}, {"vocab", label.vocab_size}}.dump();
}

std::vector<TeacherTrace> read_teacher_traces(const std::filesystem::path& path,
                                              TraceParseOptions opts) {
  return read_lines(path, [&](std::string_view l) { return parse_teacher_trace(l, opts); });
}

std::vector<TokenSeq> read_labels(const std::filesystem::path& path) {
  return read_lines(path, [](std::string_view l) { return parse_label(l); });
}

}  // namespace cafkit
