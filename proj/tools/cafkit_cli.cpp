// cafkit: property verification, complexity benchmarks and pipeline demos.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cafkit/bench.hpp"
#include "cafkit/demo.hpp"
#include "cafkit/error.hpp"
#include "cafkit/verify.hpp"

#ifndef CAFKIT_DATA_DIR
#define CAFKIT_DATA_DIR "data"
#endif

namespace {

enum ExitCode : int { kOk = 0, kPropertyFailure = 1, kConfigError = 2, kInputError = 3 };

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw cafkit::Error("cannot write '" + path + "'");
  f << text;
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size()) throw cafkit::ConfigError("bad sequence length '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cafkit: linear cross-attention fusion and distillation-loss toolkit"};
  app.require_subcommand(1);

  // verify
  auto* verify = app.add_subcommand("verify", "Run the attention, loss and rearrangement property suites");
  std::uint64_t v_seed = cafkit::VerifyConfig{}.seed.value;
  std::string v_kernel, v_sabotage = "none", v_out;
  std::size_t v_dim = 64, v_heads = 8;
  unsigned v_threads = 1;
  verify->add_option("--seed", v_seed, "Base seed");
  verify->add_option("--kernel", v_kernel, "Restrict to one kernel: identity|relu|elu1 (default: all)");
  verify->add_option("--sabotage", v_sabotage, "Fault injection: none|drop-uniform");
  verify->add_option("--dim", v_dim, "Model dimension for the multi-head check");
  verify->add_option("--heads", v_heads, "Head count for the multi-head check");
  verify->add_option("--threads", v_threads, "Worker threads for instance evaluation");
  verify->add_option("--out", v_out, "Report path (default stdout)");

  // bench
  auto* bench = app.add_subcommand("bench", "Time linear vs quadratic attention over sequence lengths");
  std::string b_lens = "1024,2048,4096,8192,16384,32768,65536";
  std::string b_methods = "linear", b_format = "csv", b_out, b_kernel = "identity";
  std::size_t b_dim = 64, b_heads = 8, b_repeats = 5;
  std::uint64_t b_seed = 7;
  bench->add_option("--seq-lens", b_lens, "Comma-separated ascending sequence lengths");
  bench->add_option("--dim", b_dim, "Model dimension");
  bench->add_option("--heads", b_heads, "Number of heads");
  bench->add_option("--methods", b_methods, "Comma-separated: linear,quadratic,softmax");
  bench->add_option("--format", b_format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
  bench->add_option("--out", b_out, "Output path (default stdout)");
  bench->add_option("--repeats", b_repeats, "Timed repeats per point (>= 3)");
  bench->add_option("--seed", b_seed, "Input seed");
  bench->add_option("--kernel", b_kernel, "identity|relu|elu1");

  // loss-demo
  auto* loss = app.add_subcommand("loss-demo", "Train a linear student head on teacher traces");
  std::string l_traces = std::string(CAFKIT_DATA_DIR) + "/fixtures/consistent_traces.jsonl";
  std::string l_labels = std::string(CAFKIT_DATA_DIR) + "/fixtures/consistent_labels.jsonl";
  std::string l_out;
  cafkit::LossDemoConfig l_cfg;
  bool l_renorm = false;
  loss->add_option("--traces", l_traces, "Teacher trace JSONL");
  loss->add_option("--labels", l_labels, "Ground-truth label JSONL");
  loss->add_option("--steps", l_cfg.steps, "Gradient steps");
  loss->add_option("--lr", l_cfg.lr, "Learning rate");
  loss->add_option("--seed", l_cfg.seed.value, "Feature seed");
  loss->add_option("--min-log-sigma2", l_cfg.min_log_sigma2, "Floor on log sigma^2");
  loss->add_flag("--renormalize", l_renorm, "Rescale short top-k teacher rows to unit mass");
  loss->add_option("--out", l_out, "Report path (default stdout)");

  // fuse-demo
  auto* fuse = app.add_subcommand("fuse-demo", "Run tiles -> visual tokens -> fusion on one image");
  cafkit::FuseDemoConfig f_cfg;
  std::string f_image, f_kernel = "identity", f_out;
  std::uint64_t f_seed = 0;
  bool f_image_query = false;
  auto* img_opt = fuse->add_option("--image", f_image, "Binary PPM/PGM image");
  auto* syn_opt = fuse->add_option("--synthetic", f_seed, "Seed for a synthetic image");
  img_opt->excludes(syn_opt);
  fuse->add_option("--size", f_cfg.synthetic_size, "Synthetic image side in pixels");
  fuse->add_option("--tile", f_cfg.tile, "Tile side in pixels");
  fuse->add_option("--thumb", f_cfg.thumb, "Global thumbnail side in pixels");
  fuse->add_option("--question-len", f_cfg.question_len, "Question tokens");
  fuse->add_option("--cot-len", f_cfg.cot_len, "Chain-of-thought tokens");
  fuse->add_option("--dim", f_cfg.caf.model_dim, "Model dimension");
  fuse->add_option("--heads", f_cfg.caf.num_heads, "Number of heads");
  fuse->add_option("--kernel", f_kernel, "identity|relu|elu1");
  fuse->add_flag("--image-query", f_image_query, "Swap roles: visual tokens query the text");
  fuse->add_option("--out", f_out, "Summary path (default stdout)");

  // gen-fixtures
  auto* gen = app.add_subcommand("gen-fixtures", "Write the synthetic teacher/label fixtures");
  std::string g_dir = std::string(CAFKIT_DATA_DIR) + "/fixtures";
  std::uint64_t g_seed = 2024;
  gen->add_option("--out-dir", g_dir, "Destination directory");
  gen->add_option("--seed", g_seed, "Fixture seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) {
      cafkit::VerifyConfig cfg;
      cfg.seed = {v_seed};
      if (!v_kernel.empty()) cfg.kernel = cafkit::parse_kernel(v_kernel);
      cfg.sabotage = cafkit::parse_sabotage(v_sabotage);
      cfg.dim = v_dim;
      cfg.heads = v_heads;
      cfg.threads = v_threads;
      cfg.validate();
      const cafkit::VerifyReport rep = cafkit::run_verify(cfg);
      emit(rep.to_text(), v_out);
      if (!rep.all_pass()) {
        for (const auto& p : rep.properties)
          if (!p.pass) std::cerr << "property failed: " << p.name << '\n';
        return kPropertyFailure;
      }
      return kOk;
    }
    if (*bench) {
      cafkit::BenchConfig cfg;
      cfg.seed = {b_seed};
      cfg.seq_lens = parse_size_list(b_lens);
      cfg.dim = b_dim;
      cfg.heads = b_heads;
      cfg.repeats = b_repeats;
      cfg.kernel = cafkit::parse_kernel(b_kernel);
      cfg.methods.clear();
      std::stringstream ss(b_methods);
      for (std::string m; std::getline(ss, m, ',');)
        if (!m.empty()) cfg.methods.push_back(cafkit::parse_method(m));
      cfg.validate();
      const cafkit::BenchResult res = cafkit::run_bench(cfg);
      for (const auto& r : res.records)
        if (r.status != "ok")
          std::cerr << "warning: " << cafkit::to_string(r.method) << " N=" << r.n_keys << " "
                    << r.status << '\n';
      emit(b_format == "json" ? cafkit::to_json(res) : cafkit::to_csv(res), b_out);
      return kOk;
    }
    if (*loss) {
      const auto traces = cafkit::read_teacher_traces(l_traces, {l_renorm});
      const auto labels = cafkit::read_labels(l_labels);
      emit(cafkit::run_loss_demo(traces, labels, l_cfg).to_text(), l_out);
      return kOk;
    }
    if (*fuse) {
      if (!f_image.empty()) f_cfg.image = f_image;
      f_cfg.synthetic_seed = {f_seed};
      f_cfg.caf.kernel = cafkit::parse_kernel(f_kernel);
      f_cfg.role = f_image_query ? cafkit::FusionRole::ImageQuery : cafkit::FusionRole::TextQuery;
      emit(cafkit::run_fuse_demo(f_cfg).to_text(), f_out);
      return kOk;
    }
    if (*gen) {
      std::filesystem::create_directories(g_dir);
      const std::filesystem::path dir(g_dir);
      cafkit::write_fixture(cafkit::make_fixture(cafkit::FixtureKind::Consistent, {g_seed}),
                            dir / "consistent_traces.jsonl", dir / "consistent_labels.jsonl");
      cafkit::write_fixture(cafkit::make_fixture(cafkit::FixtureKind::Conflicting, {g_seed + 1}),
                            dir / "conflicting_traces.jsonl", dir / "conflicting_labels.jsonl");
      return kOk;
    }
  } catch (const cafkit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const cafkit::ParseError& e) {
    std::cerr << "parse error: " << e.what() << " (line " << e.line() << ", byte " << e.offset()
              << ")\n";
    return kInputError;
  } catch (const cafkit::FormatError& e) {
    std::cerr << "format error at byte " << e.offset() << ": " << e.what() << '\n';
    return kInputError;
  } catch (const cafkit::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kOk;
}
