// Python module `_maw`. Structured values (hyperparameters, configs,
// reports) cross the boundary as JSON text; the `maw` package wraps them
// into dicts.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "maw/config.hpp"
#include "maw/errors.hpp"
#include "maw/eval.hpp"
#include "maw/model.hpp"
#include "maw/theory.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

json parse_or_empty(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

py::dict posterior_dict(const maw::MixturePosterior& p) {
  py::dict d;
  d["mu1"] = p.mu1;
  d["mu2"] = p.mu2;
  d["m1"] = p.m1;
  d["m2"] = p.m2;
  d["sigma1"] = p.sigma1;
  d["sigma2"] = p.sigma2;
  d["eta"] = p.eta;
  return d;
}

py::dict solution_dict(const maw::theory::TheorySolution& s) {
  py::dict d;
  d["mu1"] = s.mu1;
  d["mu2"] = s.mu2;
  d["sigma1"] = s.sigma1;
  d["sigma2"] = s.sigma2;
  d["objective"] = s.objective;
  d["u"] = s.u;
  return d;
}

py::tuple dataset_tuple(const maw::eval::Dataset& d) { return py::make_tuple(d.features, d.labels); }

}  // namespace

PYBIND11_MODULE(_maw, m) {
  m.doc() = "Robust novelty detection with a Wasserstein-regularized mixture autoencoder";

  // Translators run newest first, so subclasses are registered after the base.
  const auto& base = py::register_exception<maw::Error>(m, "Error");
  py::register_exception<maw::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<maw::ParseError>(m, "ParseError", base.ptr());
  py::register_exception<maw::NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<maw::ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<maw::DomainError>(m, "DomainError", base.ptr());

  // Data and metrics.
  m.def(
      "gen_synthetic",
      [](int dim, int rank, int inliers, double c, double noise, std::uint64_t seed) {
        return dataset_tuple(maw::eval::gen_synthetic(dim, rank, inliers, c, noise, seed));
      },
      py::arg("dim"), py::arg("rank"), py::arg("inliers"), py::arg("c"), py::arg("noise"), py::arg("seed"));
  m.def(
      "load_csv", [](const std::string& path) { return dataset_tuple(maw::eval::load_csv(path)); }, py::arg("path"));
  m.def("auc", &maw::eval::auc, py::arg("scores"), py::arg("labels"));
  m.def("ap", &maw::eval::ap, py::arg("scores"), py::arg("labels"));

  // Model.
  py::class_<maw::MawModel>(m, "Model")
      .def_property_readonly("input_dim", &maw::MawModel::input_dim)
      .def_property_readonly("seed", &maw::MawModel::seed)
      .def_property_readonly("hyperparams_json",
                             [](const maw::MawModel& model) { return model.hyperparams().to_json().dump(); })
      .def(
          "score",
          [](const maw::MawModel& model, const maw::Matrix& y, int samples, std::uint64_t seed) {
            return maw::score_all(model, y, samples, seed);
          },
          py::arg("y"), py::arg("samples"), py::arg("seed"))
      .def(
          "posterior", [](const maw::MawModel& model, const maw::Vector& y) { return posterior_dict(model.posterior(y)); },
          py::arg("y"))
      .def("save", &maw::MawModel::save, py::arg("path"))
      .def_static("load", &maw::MawModel::load, py::arg("path"))
      .def("to_json", [](const maw::MawModel& model) { return model.to_json().dump(); })
      .def_static(
          "from_json", [](const std::string& text) { return maw::MawModel::from_json(json::parse(text)); },
          py::arg("text"))
      .def("__eq__", &maw::MawModel::operator==);

  m.def(
      "train",
      [](const maw::Matrix& data, const std::string& hyperparams_json, std::uint64_t seed) {
        const maw::Hyperparams hp = maw::Hyperparams::from_json(parse_or_empty(hyperparams_json));
        maw::TrainResult r;
        {
          py::gil_scoped_release release;
          r = maw::train(data, hp, seed);
        }
        py::list trace;
        for (const auto& e : r.trace) {
          py::dict row;
          row["epoch"] = e.epoch;
          row["loss_vae"] = e.vae;
          row["loss_w1"] = e.critic;
          row["loss_gen"] = e.gen;
          trace.append(row);
        }
        return py::make_tuple(std::move(r.model), trace);
      },
      py::arg("data"), py::arg("hyperparams_json") = "", py::arg("seed") = 0);
  m.def("stream_seed", &maw::stream_seed, py::arg("seed"), py::arg("index"));

  // Experiments.
  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        const maw::RunConfig cfg = maw::RunConfig::from_json(parse_or_empty(config_json));
        cfg.validate();
        std::vector<maw::eval::MetricReport> reports;
        {
          py::gil_scoped_release release;
          reports = cfg.sweep_param.empty()
                        ? maw::eval::run_experiment(cfg.experiment())
                        : maw::eval::sweep(cfg.experiment(), cfg.sweep_param, cfg.sweep_values);
        }
        return maw::eval::report_json(reports).dump();
      },
      py::arg("config_json") = "");

  // Theory.
  m.def("w2_gaussian", &maw::theory::w2_gaussian, py::arg("mu1"), py::arg("sigma1"), py::arg("mu2"),
        py::arg("sigma2"));
  m.def("kl_gaussian", &maw::theory::kl_gaussian, py::arg("mu1"), py::arg("sigma1"), py::arg("mu0"),
        py::arg("sigma0"));
  m.def("scalar_objective_f", &maw::theory::scalar_objective_f, py::arg("u"), py::arg("dim"), py::arg("inlier_rank"),
        py::arg("epsilon"), py::arg("eta"));
  m.def(
      "prop2_analytic",
      [](int dim, int inlier_rank, double epsilon, double eta) {
        return solution_dict(maw::theory::prop2_analytic(dim, inlier_rank, epsilon, eta));
      },
      py::arg("dim"), py::arg("inlier_rank"), py::arg("epsilon"), py::arg("eta"));
  m.def(
      "empirical_w1",
      [](const maw::Matrix& a, const maw::Matrix& b) {
        std::vector<maw::Vector> pa, pb;
        for (Eigen::Index i = 0; i < a.rows(); ++i) pa.push_back(a.row(i).transpose());
        for (Eigen::Index i = 0; i < b.rows(); ++i) pb.push_back(b.row(i).transpose());
        return maw::theory::empirical_w1(pa, pb);
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "verification_report", [](std::uint64_t seed) { return maw::theory::verification_report(seed).dump(); },
      py::arg("seed") = 0);
}
