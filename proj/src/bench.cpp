#include "cafkit/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "cafkit/error.hpp"

namespace cafkit {

namespace {

constexpr std::string_view kCsvHeader =
    "method,n_keys,n_queries,dim,heads,repeats,median_wall_time,checksum,status";

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double checksum_of(const FeatureMatrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v;
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line) {
  T value{};
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || p != field.data() + field.size()) {
    throw ParseError("bad number '" + std::string(field) + "'", 0, line);
  }
  return value;
}

std::vector<SlopeSummary> summarize(const std::vector<BenchRecord>& records,
                                    const std::vector<AttentionMethod>& methods) {
  std::vector<SlopeSummary> out;
  for (AttentionMethod m : methods) {
    std::vector<double> xs, ys;
    for (const auto& r : records) {
      if (r.method == m && r.status == "ok" && r.median_wall_time > 0.0) {
        xs.push_back(static_cast<double>(r.n_keys));
        ys.push_back(r.median_wall_time);
      }
    }
    if (xs.size() >= 2) out.push_back({m, fit_loglog_slope(xs, ys), xs.size()});
  }
  return out;
}

}  // namespace

std::optional<double> BenchResult::slope(AttentionMethod m) const {
  for (const auto& s : slopes)
    if (s.method == m) return s.slope;
  return std::nullopt;
}

void BenchConfig::validate() const {
  if (seq_lens.empty()) throw ConfigError("seq_lens must not be empty");
  for (std::size_t i = 0; i < seq_lens.size(); ++i) {
    if (seq_lens[i] == 0) throw ConfigError("seq_lens entries must be >= 1");
    if (i > 0 && seq_lens[i] <= seq_lens[i - 1]) throw ConfigError("seq_lens must be ascending");
  }
  CafConfig{dim, heads, kernel, std::nullopt}.validate();
  if (repeats < 3) throw ConfigError("repeats must be >= 3");
  if (methods.empty()) throw ConfigError("at least one method is required");
}

BenchResult run_bench(const BenchConfig& cfg) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const CafConfig caf{cfg.dim, cfg.heads, cfg.kernel, std::nullopt};

  BenchResult result;
  for (AttentionMethod method : cfg.methods) {
    for (std::size_t n : cfg.seq_lens) {
      BenchRecord rec{method, n, n, cfg.dim, cfg.heads, cfg.repeats, 0.0, 0.0, "ok"};
      const bool quadratic = method != AttentionMethod::Linear;
      if (quadratic && static_cast<double>(n) * static_cast<double>(n) * 8.0 >
                           static_cast<double>(cfg.memory_budget_bytes)) {
        rec.status = "skipped-memory-guard";
        result.records.push_back(rec);
        continue;
      }
      const FeatureMatrix q = seeded_random_matrix(n, cfg.dim, Seed{cfg.seed.value * 3 + 0});
      const FeatureMatrix k = seeded_random_matrix(n, cfg.dim, Seed{cfg.seed.value * 3 + 1});
      const FeatureMatrix v = seeded_random_matrix(n, cfg.dim, Seed{cfg.seed.value * 3 + 2});

      rec.checksum = checksum_of(multi_head_attention(q, k, v, caf, method));  // warm-up
      std::vector<double> times;
      for (std::size_t r = 0; r < cfg.repeats; ++r) {
        const auto t0 = clock::now();
        const FeatureMatrix out = multi_head_attention(q, k, v, caf, method);
        const auto t1 = clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
        rec.checksum = checksum_of(out);
      }
      std::ranges::sort(times);
      rec.median_wall_time = times[times.size() / 2];
      result.records.push_back(rec);
    }
  }
  result.slopes = summarize(result.records, cfg.methods);
  return result;
}

double fit_loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw InvalidInputError("fit_loglog_slope: need >= 2 paired points");
  }
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidInputError("fit_loglog_slope: values must be > 0");
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw InvalidInputError("fit_loglog_slope: x values are all equal");
  return (n * sxy - sx * sy) / denom;
}

std::string to_csv(const BenchResult& r) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& rec : r.records) {
    out += std::string(to_string(rec.method)) + ',' + std::to_string(rec.n_keys) + ',' +
           std::to_string(rec.n_queries) + ',' + std::to_string(rec.dim) + ',' +
           std::to_string(rec.heads) + ',' + std::to_string(rec.repeats) + ',' +
           fmt_double(rec.median_wall_time) + ',' + fmt_double(rec.checksum) + ',' + rec.status +
           '\n';
  }
  for (const auto& s : r.slopes) {
    out += "# slope," + std::string(to_string(s.method)) + ',' + fmt_double(s.slope) + ',' +
           std::to_string(s.points) + '\n';
  }
  return out;
}

BenchResult parse_bench_csv(std::string_view text) {
  BenchResult r;
  const auto lines = split(text, '\n');
  if (lines.empty() || lines[0] != kCsvHeader) throw ParseError("bench CSV: unexpected header", 0, 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string_view line = lines[i];
    const std::size_t lineno = i + 1;
    if (line.empty()) continue;
    if (line.starts_with("# slope,")) {
      const auto f = split(line.substr(8), ',');
      if (f.size() != 3) throw ParseError("bench CSV: bad slope line", 0, lineno);
      r.slopes.push_back({parse_method(f[0]), parse_number<double>(f[1], lineno),
                          parse_number<std::size_t>(f[2], lineno)});
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 9) throw ParseError("bench CSV: expected 9 fields", 0, lineno);
    r.records.push_back({parse_method(f[0]), parse_number<std::size_t>(f[1], lineno),
                         parse_number<std::size_t>(f[2], lineno),
                         parse_number<std::size_t>(f[3], lineno),
                         parse_number<std::size_t>(f[4], lineno),
                         parse_number<std::size_t>(f[5], lineno),
                         parse_number<double>(f[6], lineno), parse_number<double>(f[7], lineno),
                         std::string(f[8])});
  }
  return r;
}

std::string to_json(const BenchResult& r) {
  // ordered_json keeps the documented field order.
  using nlohmann::ordered_json;
  ordered_json records = ordered_json::array();
  for (const auto& rec : r.records) {
    records.push_back(ordered_json{{"method", to_string(rec.method)},
                                   {"n_keys", rec.n_keys},
                                   {"n_queries", rec.n_queries},
                                   {"dim", rec.dim},
                                   {"heads", rec.heads},
                                   {"repeats", rec.repeats},
                                   {"median_wall_time", rec.median_wall_time},
                                   {"checksum", rec.checksum},
                                   {"status", rec.status}});
  }
  ordered_json slopes = ordered_json::array();
  for (const auto& s : r.slopes) {
    slopes.push_back(
        ordered_json{{"method", to_string(s.method)}, {"slope", s.slope}, {"points", s.points}});
  }
  return ordered_json{{"records", std::move(records)}, {"slopes", std::move(slopes)}}.dump(2) +
         "\n";
}

BenchResult parse_bench_json(std::string_view text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("bench JSON: ") + e.what(), e.byte);
  }
  BenchResult r;
  try {
    for (const auto& j : doc.at("records")) {
      r.records.push_back({parse_method(j.at("method").get<std::string>()),
                           j.at("n_keys").get<std::size_t>(), j.at("n_queries").get<std::size_t>(),
                           j.at("dim").get<std::size_t>(), j.at("heads").get<std::size_t>(),
                           j.at("repeats").get<std::size_t>(),
                           j.at("median_wall_time").get<double>(), j.at("checksum").get<double>(),
                           j.at("status").get<std::string>()});
    }
    for (const auto& j : doc.at("slopes")) {
      r.slopes.push_back({parse_method(j.at("method").get<std::string>()),
                          j.at("slope").get<double>(), j.at("points").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bench JSON: ") + e.what(), 0);
  }
  return r;
}

}  // namespace cafkit
