#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "t2i/attention.hpp"
#include "t2i/cli.hpp"
#include "t2i/errors.hpp"
#include "t2i/metrics.hpp"
#include "t2i/serialize.hpp"
#include "t2i/textdata.hpp"

namespace py = pybind11;
using namespace t2i;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

std::vector<std::uint8_t> to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& m) {
  return std::vector<std::uint8_t>(m.data(), m.data() + m.size());
}

GaussianStats stats_from(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
  GaussianStats s;
  s.mu = mu;
  s.sigma = sigma;
  s.n = 2;
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bangla text-to-image core: tokenizer, attention, metrics and the command line";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<EmptyCaptionError>(m, "EmptyCaptionError", base.ptr());
  py::register_exception<EncodingError>(m, "EncodingError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DatasetError>(m, "DatasetError", base.ptr());
  py::register_exception<StatsError>(m, "StatsError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<MaskError>(m, "MaskError", base.ptr());
  py::register_exception<IncompatibleError>(m, "IncompatibleError", base.ptr());

  m.def("nfc", [](const std::string& s) { return nfc(s); }, py::arg("text"));
  m.def("tokenize", [](const std::string& s) { return tokenize(s); }, py::arg("text"),
        "NFC-normalise and split into word tokens.");
  m.def("split_counts", [](std::int64_t n, double fraction) {
    const auto train = split_train_count(n, fraction);
    return py::make_tuple(train, n - train);
  }, py::arg("n"), py::arg("train_fraction"));

  m.def("gaussian_stats", [](const Eigen::MatrixXd& features) {
    const auto s = gaussian_stats(features);
    return py::make_tuple(s.mu, s.sigma);
  }, py::arg("features"), "Mean and unbiased covariance of the rows.");
  m.def("fid", [](const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& sigma_a, const Eigen::VectorXd& mu_b,
                  const Eigen::MatrixXd& sigma_b) { return fid(stats_from(mu_a, sigma_a), stats_from(mu_b, sigma_b)).fid; },
        py::arg("mu_a"), py::arg("sigma_a"), py::arg("mu_b"), py::arg("sigma_b"));
  m.def("inception_score", [](const Eigen::MatrixXd& probs, int splits) {
    const auto r = inception_score(probs, splits);
    return py::make_tuple(r.mean, r.std);
  }, py::arg("probs"), py::arg("splits") = 1);

  m.def("word_context", [](const Array& words, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask,
                           const Array& h) {
    const auto r = word_context(to_tensor(words), to_mask(mask), to_tensor(h));
    return py::make_tuple(to_array(r.context), to_array(r.alpha));
  }, py::arg("words"), py::arg("mask"), py::arg("h"),
        "words (B, D, T), mask (B, T), h (B, D, N) -> context (B, D, N), alpha (B, T, N).");
  m.def("top_attended", [](const Array& alpha, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask,
                           const std::vector<std::vector<std::string>>& tokens, int k) {
    py::list out;
    for (const auto& item : top_attended(to_tensor(alpha), to_mask(mask), tokens, k)) {
      py::list row;
      for (const auto& w : item) row.append(py::make_tuple(w.token, w.position, w.score));
      out.append(row);
    }
    return out;
  }, py::arg("alpha"), py::arg("mask"), py::arg("tokens"), py::arg("k") = 5);

  m.def("load_tensor", [](const std::filesystem::path& p) { return to_array(load_tensor(p)); }, py::arg("path"));
  m.def("save_tensor", [](const std::filesystem::path& p, const Array& a) { save_tensor(p, to_tensor(a)); },
        py::arg("path"), py::arg("array"));

  m.def("run", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Run one command line; returns (exit code, stdout, stderr).");
}
