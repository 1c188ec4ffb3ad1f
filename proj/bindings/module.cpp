/*
 * Copyright 2025 The gradlab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gradlab/accountant.hpp"
#include "gradlab/dp.hpp"
#include "gradlab/experiment.hpp"
#include "gradlab/metrics.hpp"

namespace py = pybind11;
using namespace gradlab;

namespace {

Tensor tensor_from_array(const py::array_t<double>& a) {
  auto buf = a.request();
  std::vector<int> shape(buf.shape.begin(), buf.shape.end());
  Tensor t(shape);
  auto flat = py::array_t<double, py::array::c_style |
                                      py::array::forcecast>::ensure(a);
  const double* p = static_cast<const double*>(flat.request().ptr);
  std::copy(p, p + t.numel(), t.data.begin());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> a(shape);
  std::copy(t.data.begin(), t.data.end(),
            static_cast<double*>(a.request().ptr));
  return a;
}

}  // namespace

PYBIND11_MODULE(_gradlab, m) {
  m.doc() = "gradient leakage attack lab (C++ core)";

  m.attr("STABLE_MODEL_SEED") = py::int_(kStableModelSeed);

  m.def(
      "ssim",
      [](const py::array_t<double>& a, const py::array_t<double>& b,
         bool gaussian) {
        SsimParams p;
        p.gaussian = gaussian;
        return ssim(tensor_from_array(a), tensor_from_array(b), p);
      },
      py::arg("a"), py::arg("b"), py::arg("gaussian") = false,
      "Structural similarity of two images in [0, 1].");

  m.def(
      "mse",
      [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return mse(tensor_from_array(a), tensor_from_array(b));
      },
      py::arg("a"), py::arg("b"));

  m.def("rdp_gaussian", &rdp_gaussian, py::arg("sigma"), py::arg("q"),
        py::arg("alpha"),
        "Renyi DP of one subsampled Gaussian step at integer order alpha.");

  m.def(
      "epsilon",
      [](double sigma, double q, int steps, double delta) {
        PrivacyBudget b;
        b.delta = delta;
        b.add_steps(sigma, q, steps);
        auto r = compose_and_convert(b);
        return py::make_tuple(r.eps, r.best_alpha);
      },
      py::arg("sigma"), py::arg("q"), py::arg("steps"), py::arg("delta"),
      "(eps, best_alpha) after composing subsampled Gaussian steps.");

  m.def("calibrate_sigma", &calibrate_sigma, py::arg("target_eps"),
        py::arg("delta"), py::arg("q"), py::arg("steps"),
        "Smallest noise multiplier meeting the epsilon target.");

  m.def(
      "group_privacy",
      [](double eps, double delta, int k) {
        auto r = group_privacy(eps, delta, k);
        return py::make_tuple(r.eps, r.delta);
      },
      py::arg("eps"), py::arg("delta"), py::arg("k"));

  m.def(
      "synthetic_digits",
      [](int n, std::uint64_t seed) {
        auto d = synthetic_digits(n, seed);
        return py::make_tuple(array_from_tensor(d.images), d.labels);
      },
      py::arg("n"), py::arg("seed"),
      "(images [n,1,32,32], labels) synthetic digit dataset.");

  m.def(
      "run_train",
      [](const std::string& config_text, const std::string& out_dir) {
        auto out = run_classification_experiment(
            ExperimentConfig::parse_string(config_text), out_dir);
        py::dict d;
        d["diverged"] = out.diverged;
        d["epochs"] = out.epochs_run;
        d["train_loss"] = out.final_train_loss;
        d["val_loss"] = out.final_val_loss;
        d["accuracy"] = out.val_accuracy;
        return d;
      },
      py::arg("config_text"), py::arg("out_dir"));

  m.def(
      "run_attack",
      [](const std::string& config_text, const std::string& out_dir) {
        auto out = run_attack_experiment(
            ExperimentConfig::parse_string(config_text), out_dir);
        py::dict d;
        d["diverged"] = out.result.trace.diverged;
        d["label"] = out.result.y_rec;
        d["ssim"] = out.final_ssim;
        d["loss"] = out.result.trace.loss.empty()
                        ? 0.0
                        : out.result.trace.loss.back();
        d["noise_sigma"] = out.noise_sigma;
        d["image"] = array_from_tensor(out.result.x_rec);
        return d;
      },
      py::arg("config_text"), py::arg("out_dir"));

  m.def(
      "run_audit",
      [](const std::string& config_text, const std::string& out_dir) {
        auto rows = run_audit(ExperimentConfig::parse_string(config_text),
                              out_dir);
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["mechanism"] = r.mechanism;
          d["sigma"] = r.sigma;
          d["q"] = r.q;
          d["steps"] = r.steps;
          d["eps_empirical"] = r.eps_empirical;
          d["eps_reference"] = r.eps_reference;
          d["wide_interval"] = r.wide_interval;
          out.append(d);
        }
        return out;
      },
      py::arg("config_text"), py::arg("out_dir"));

  m.def(
      "run_accountant",
      [](const std::string& config_text, const std::string& out_dir) {
        return run_accountant(ExperimentConfig::parse_string(config_text),
                              out_dir);
      },
      py::arg("config_text"), py::arg("out_dir"));
}
