#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mi2v/attention.hpp"
#include "mi2v/cli.hpp"
#include "mi2v/config.hpp"
#include "mi2v/distill.hpp"
#include "mi2v/error.hpp"
#include "mi2v/flow.hpp"
#include "mi2v/io.hpp"
#include "mi2v/rng.hpp"
#include "mi2v/toy_distill.hpp"
#include "mi2v/verify.hpp"

namespace py = pybind11;
using namespace mi2v;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Dims dims(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(dims), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
  py::array_t<float> out(shape);
  std::copy_n(t.data(), t.size(), out.mutable_data());
  return out;
}

std::vector<float> to_floats(const FloatArray& a) { return {a.data(), a.data() + a.size()}; }

py::tuple loss_tuple(const LossValue& lv) { return py::make_tuple(lv.value, to_array(lv.grad)); }

Tensor run_attention(const FloatArray& x, std::int64_t heads, const std::string& kind, const std::string& strategy,
                     std::uint64_t seed) {
  const Tensor xt = to_tensor(x);
  require(xt.rank() == 3, "attention", "x must be (B, S, C)");
  Rng rng(seed);
  const AttentionParams p = AttentionParams::random(rng, xt.dim(2), heads);
  const ExecStrategy s = ExecStrategy::parse(strategy);
  if (kind == "softmax") return softmax_attention(xt, p, s);
  if (kind == "linear") return linear_attention_streaming(xt, p, s);
  if (kind == "linear-reference") return linear_attention_reference(xt, p);
  fail("attention", "kind must be softmax, linear or linear-reference");
}

}  // namespace

PYBIND11_MODULE(_mi2v, m) {
  m.doc() = "Bindings for the mi2v C++ core";
  py::register_exception<Error>(m, "Mi2vError", PyExc_ValueError);

  py::class_<LatentSpec>(m, "LatentSpec")
      .def(py::init<std::int64_t, std::int64_t, std::int64_t>(), py::arg("width"), py::arg("height"), py::arg("frames"))
      .def_static("parse", &LatentSpec::parse)
      .def_readonly("width", &LatentSpec::width)
      .def_readonly("height", &LatentSpec::height)
      .def_readonly("frames", &LatentSpec::frames)
      .def_property_readonly("latent_width", &LatentSpec::latent_width)
      .def_property_readonly("latent_height", &LatentSpec::latent_height)
      .def_property_readonly("latent_frames", &LatentSpec::latent_frames)
      .def_property_readonly("frame_tokens", &LatentSpec::frame_tokens)
      .def("__str__", &LatentSpec::to_string);

  m.def("token_count", [](const LatentSpec& s) { return token_count(s); });
  m.def("token_timesteps", [](const LatentSpec& s, float t) { return token_timesteps(s, t); });

  m.def("flow_coefficients", [](double t) {
    const auto c = flow_coefficients(t);
    return py::make_tuple(c.a, c.b);
  });
  m.def("schedule_eval", [](double t) {
    const auto s = schedule_eval(t);
    py::dict d;
    d["a"] = s.a;
    d["b"] = s.b;
    d["lambda"] = s.lambda;
    d["dlambda"] = s.dlambda;
    d["weight"] = s.weight;
    return d;
  });
  m.def("noise_forward", [](const FloatArray& x0, const FloatArray& eps, const FloatArray& t) {
    return to_array(noise_forward(to_tensor(x0), to_tensor(eps), to_floats(t)));
  });

  m.def("attention", [](const FloatArray& x, std::int64_t heads, const std::string& kind,
                        const std::string& strategy, std::uint64_t seed) {
    return to_array(run_attention(x, heads, kind, strategy, seed));
  }, py::arg("x"), py::arg("heads"), py::arg("kind") = "linear", py::arg("strategy") = "baseline",
     py::arg("seed") = 0, "Attention with seeded random projections. x is (B, S, C).");
  m.def("dual_form_max_error", &dual_form_max_error, py::arg("cases"), py::arg("seed") = 0);

  m.def("parameter_count", [](const std::string& preset) { return parameter_count(denoiser_preset(preset)); },
        py::arg("preset") = "desk");

  m.def("loss_regression", [](const FloatArray& x, const FloatArray& target) {
    return loss_tuple(loss_regression(to_tensor(x), to_tensor(target)));
  });
  m.def("loss_fake_score", [](const FloatArray& x, const FloatArray& target) {
    return loss_tuple(loss_fake_score(to_tensor(x), to_tensor(target)));
  });
  m.def("dmd_surrogate", [](const FloatArray& g, const FloatArray& x0) {
    return loss_tuple(dmd_surrogate(to_tensor(g), to_tensor(x0)));
  });
  m.def("dmd_gradient_field", [](const FloatArray& s_real, const FloatArray& s_fake) {
    return to_array(dmd_gradient_field(to_tensor(s_real), to_tensor(s_fake)));
  });
  m.def("loss_adv_discriminator", [](const FloatArray& real, const FloatArray& fake) {
    return loss_adv_discriminator(to_tensor(real), to_tensor(fake)).value;
  });
  m.def("sliced_wasserstein", [](const DoubleArray& a, const DoubleArray& b, int projections, std::uint64_t seed) {
    return toy::sliced_wasserstein({a.data(), std::size_t(a.size())}, {b.data(), std::size_t(b.size())},
                                   projections, seed);
  }, py::arg("a"), py::arg("b"), py::arg("projections") = 64, py::arg("seed") = 0,
     "a and b are flattened (n, 2) point sets.");

  m.def("encode_container", [](const std::vector<std::pair<std::string, FloatArray>>& entries) {
    std::vector<NamedTensor> named;
    for (const auto& [name, a] : entries) named.emplace_back(name, to_tensor(a));
    const auto bytes = encode_container(named);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }, "Encode an ordered list of (name, array) pairs.");
  m.def("decode_container", [](const py::bytes& data) {
    const std::string s = data;
    py::list out;
    for (const auto& [name, t] : decode_container(std::vector<std::uint8_t>(s.begin(), s.end())))
      out.append(py::make_tuple(name, to_array(t)));
    return out;
  });
  m.def("emit_pgm_preview", [](const FloatArray& frame, const LatentSpec& spec) {
    const auto bytes = emit_pgm_preview(to_tensor(frame), spec);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });

  m.def("verify_report", [] { return run_verify_suite().to_json(); }, "JSON text of the invariant suite report.");

  m.def("generate", [](const std::string& spec, int steps, float motion, std::uint64_t seed,
                       const std::string& preset, std::uint64_t weights_seed, const FloatArray& reference) {
    const LatentSpec ls = LatentSpec::parse(spec);
    const DenoiserConfig cfg = denoiser_preset(preset);
    const Tensor ref = to_tensor(reference);
    py::gil_scoped_release release;
    const auto weights = init_weights(cfg, weights_seed);
    const Tensor out =
        euler_sample_i2v(make_denoiser_model(weights, cfg, ls), ls, SamplerConfig{steps}, ref, motion, seed);
    py::gil_scoped_acquire acquire;
    return to_array(out);
  }, py::arg("spec"), py::arg("steps"), py::arg("motion"), py::arg("seed"), py::arg("preset"),
     py::arg("weights_seed"), py::arg("reference"));

  m.def("cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli_dispatch(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, "Run a command-line subcommand in process; returns (exit_code, stdout, stderr).");
}
