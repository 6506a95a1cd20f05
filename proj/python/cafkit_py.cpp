#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/functional.h>

#include "cafkit/adcot.hpp"
#include "cafkit/caf.hpp"
#include "cafkit/error.hpp"
#include "cafkit/gradcheck.hpp"
#include "cafkit/verify.hpp"
#include "cafkit/vision.hpp"

namespace py = pybind11;
using namespace cafkit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

FeatureMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto r = static_cast<std::size_t>(a.shape(0));
  const auto c = static_cast<std::size_t>(a.shape(1));
  return FeatureMatrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array from_matrix(const FeatureMatrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

ImageTensor to_image(const Array& a) {
  if (a.ndim() != 3) throw ShapeError("expected an H x W x C array");
  const auto h = static_cast<std::size_t>(a.shape(0));
  const auto w = static_cast<std::size_t>(a.shape(1));
  const auto c = static_cast<std::size_t>(a.shape(2));
  return ImageTensor(h, w, c, std::vector<double>(a.data(), a.data() + h * w * c));
}

Array from_image(const ImageTensor& img) {
  Array out({img.height(), img.width(), img.channels()});
  std::copy(img.values().begin(), img.values().end(), out.mutable_data());
  return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

TeacherTrace to_trace(const Array& dists) {
  const FeatureMatrix m = to_matrix(dists);
  TeacherTrace t;
  t.vocab_size = m.cols();
  for (std::size_t l = 0; l < m.rows(); ++l) t.answer_dists.emplace_back(m.row(l).begin(), m.row(l).end());
  return t;
}

py::dict breakdown(const LossBreakdown& b) {
  py::dict d;
  d["hard"] = b.hard_term;
  d["soft"] = b.soft_term;
  d["reg"] = b.reg_term;
  d["total"] = b.total;
  d["grad_s_hard"] = b.grad_s_hard;
  d["grad_s_soft"] = b.grad_s_soft;
  if (b.grad_logits) d["grad_logits"] = from_matrix(*b.grad_logits);
  return d;
}

}  // namespace

PYBIND11_MODULE(_cafkit, m) {
  m.doc() = "Linear cross-attention fusion, distillation loss and image rearrangement kernels.";

  // translators registered later are tried first, so the base class goes first
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<InvalidInputError>(m, "InvalidInputError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  // attention
  m.def("attention_weights", [](const Array& q, const Array& k, const std::string& kernel) {
    const std::vector<double> qv = to_vector(q);
    return attention_weights(qv, to_matrix(k), parse_kernel(kernel)).values;
  }, py::arg("q"), py::arg("keys"), py::arg("kernel") = "identity");
  m.def("caf_reference", [](const Array& q, const Array& k, const Array& v, const std::string& kernel) {
    return from_matrix(caf_reference(to_matrix(q), to_matrix(k), to_matrix(v), parse_kernel(kernel)));
  }, py::arg("q"), py::arg("k"), py::arg("v"), py::arg("kernel") = "identity");
  m.def("caf_linear", [](const Array& q, const Array& k, const Array& v, const std::string& kernel) {
    return from_matrix(caf_linear(to_matrix(q), to_matrix(k), to_matrix(v), parse_kernel(kernel)));
  }, py::arg("q"), py::arg("k"), py::arg("v"), py::arg("kernel") = "identity");
  m.def("multi_head_caf", [](const Array& q, const Array& k, const Array& v, std::size_t heads,
                             const std::string& kernel) {
    const FeatureMatrix qm = to_matrix(q);
    const CafConfig cfg{qm.cols(), heads, parse_kernel(kernel), std::nullopt};
    return from_matrix(multi_head_caf(qm, to_matrix(k), to_matrix(v), cfg));
  }, py::arg("q"), py::arg("k"), py::arg("v"), py::arg("heads") = 8, py::arg("kernel") = "identity");
  m.def("fuse", [](const Array& visual, const Array& text, std::size_t heads, const std::string& kernel,
                   bool image_query) {
    const FeatureMatrix t = to_matrix(text);
    const CafConfig cfg{t.cols(), heads, parse_kernel(kernel), std::nullopt};
    const FusedSequence f = fuse(to_matrix(visual), t, cfg,
                                 image_query ? FusionRole::ImageQuery : FusionRole::TextQuery);
    return py::make_tuple(from_matrix(f.tokens), f.boundary);
  }, py::arg("visual"), py::arg("text"), py::arg("heads") = 8, py::arg("kernel") = "identity",
     py::arg("image_query") = false, "Returns (tokens, boundary).");

  // vision
  m.def("pixel_shuffle", [](const Array& f, std::size_t r) { return from_image(pixel_shuffle(to_image(f), r)); },
        py::arg("feat"), py::arg("r"));
  m.def("inverse_pixel_shuffle",
        [](const Array& f, std::size_t r) { return from_image(inverse_pixel_shuffle(to_image(f), r)); },
        py::arg("feat"), py::arg("r"));
  m.def("area_resize", [](const Array& img, std::size_t h, std::size_t w) {
    return from_image(area_resize(to_image(img), h, w));
  }, py::arg("img"), py::arg("height"), py::arg("width"));
  m.def("adaptive_encode", [](const Array& img, std::size_t tile, std::size_t thumb) {
    const PatchSet ps = adaptive_encode(to_image(img), tile, thumb);
    py::list patches;
    for (const auto& p : ps.patches) patches.append(from_image(p));
    return py::make_tuple(patches, from_image(ps.global));
  }, py::arg("img"), py::arg("tile") = 448, py::arg("thumb") = 448, "Returns (patches, global).");

  // loss
  m.def("nll_term", [](const Array& logits, const std::vector<std::int64_t>& targets) {
    const FeatureMatrix lg = to_matrix(logits);
    const TermWithGrad r = nll_term(lg, {targets, lg.cols()});
    return py::make_tuple(r.value, from_matrix(r.grad));
  }, py::arg("logits"), py::arg("targets"));
  m.def("kl_term", [](const Array& teacher, const Array& logits, bool renormalize) {
    const TermWithGrad r = kl_term(to_trace(teacher), to_matrix(logits), {renormalize});
    return py::make_tuple(r.value, from_matrix(r.grad));
  }, py::arg("teacher"), py::arg("logits"), py::arg("renormalize") = false);
  m.def("mtl_loss", [](double hard, double soft, double s_hard, double s_soft) {
    return breakdown(mtl_loss(hard, soft, {s_hard, s_soft}));
  }, py::arg("hard"), py::arg("soft"), py::arg("s_hard") = 0.0, py::arg("s_soft") = 0.0);
  m.def("distill_loss", [](const Array& logits, const std::vector<std::int64_t>& targets,
                           const Array& teacher, double s_hard, double s_soft) {
    const FeatureMatrix lg = to_matrix(logits);
    return breakdown(distill_loss(lg, {targets, lg.cols()}, to_trace(teacher), {s_hard, s_soft}));
  }, py::arg("logits"), py::arg("targets"), py::arg("teacher"), py::arg("s_hard") = 0.0,
     py::arg("s_soft") = 0.0);
  m.def("parse_teacher_trace", [](const std::string& line, bool renormalize) {
    const TeacherTrace t = parse_teacher_trace(line, {renormalize});
    FeatureMatrix d(t.length(), t.vocab_size);
    for (std::size_t l = 0; l < t.length(); ++l) std::ranges::copy(t.answer_dists[l], d.row(l).begin());
    return py::make_tuple(t.reasoning, from_matrix(d));
  }, py::arg("line"), py::arg("renormalize") = false, "Returns (reasoning, dense distributions).");

  // gradient checking
  m.def("finite_diff_grad", [](const std::function<double(Array)>& f, const Array& x, double h) {
    const ScalarFn fn = [&](std::span<const double> p) {
      Array a(static_cast<py::ssize_t>(p.size()));
      std::copy(p.begin(), p.end(), a.mutable_data());
      return f(a);
    };
    return finite_diff_grad(fn, to_vector(x), h);
  }, py::arg("f"), py::arg("x"), py::arg("h") = kDefaultFdStep);
  m.def("check_grads", [](const Array& a, const Array& n, double tol_rel, double tol_abs) {
    const GradReport r = check_grads(to_vector(a), to_vector(n), tol_rel, tol_abs);
    py::dict d;
    d["max_rel_err"] = r.max_rel_err;
    d["max_abs_err"] = r.max_abs_err;
    d["worst_index"] = r.worst_index;
    d["pass"] = r.pass;
    return d;
  }, py::arg("analytic"), py::arg("numeric"), py::arg("tol_rel") = 1e-4, py::arg("tol_abs") = 1e-7);

  m.def("verify", [](std::uint64_t seed, double scale) {
    VerifyConfig c;
    c.seed = {seed};
    const auto scaled = [&](std::size_t n) { return std::max<std::size_t>(1, static_cast<std::size_t>(n * scale)); };
    c.normalization_instances = scaled(c.normalization_instances);
    c.equivalence_instances = scaled(c.equivalence_instances);
    c.gradient_instances = scaled(c.gradient_instances);
    c.kl_instances = scaled(c.kl_instances);
    c.stationarity_instances = scaled(c.stationarity_instances);
    c.shuffle_instances = scaled(c.shuffle_instances);
    c.injectivity_trials = scaled(c.injectivity_trials);
    py::gil_scoped_release release;
    const VerifyReport r = run_verify(c);
    return std::make_pair(r.all_pass(), r.to_text());
  }, py::arg("seed") = 20250101, py::arg("scale") = 1.0,
     "Runs the property suite with instance counts multiplied by `scale`. Returns (all_pass, report).");
}
