// Python bindings for the main operations: model building and prediction,
// posterior construction/sampling/density, the perturbation family, Lanczos,
// metrics, and the config-driven experiment runner.

#include "sabma/error.hpp"
#include "sabma/harness.hpp"
#include "sabma/rng.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace sabma;

namespace {

ParamVector params_from_array(const Model& model, const Vector& flat) {
    if (static_cast<int>(flat.size()) != model.param_count())
        fail_config("expected " + std::to_string(model.param_count()) + " parameters, got " +
                    std::to_string(flat.size()));
    ParamVector p;
    p.registry = model.registry;
    p.values.assign(flat.data(), flat.data() + flat.size());
    return p;
}

Vector params_to_array(const ParamVector& p) {
    return Eigen::Map<const Vector>(p.values.data(), static_cast<Eigen::Index>(p.values.size()));
}

Dataset dataset_from_arrays(const Matrix& X, const std::vector<int>& labels) {
    Dataset d;
    d.X = X;
    d.labels = labels;
    d.classes = 0;
    for (int y : labels) d.classes = std::max(d.classes, y + 1);
    if (d.classes < 2) d.classes = 2;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "flat-posterior optimizer core";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            switch (e.kind()) {
                case ErrorKind::Numeric: PyErr_SetString(PyExc_ArithmeticError, e.what()); break;
                default: PyErr_SetString(PyExc_ValueError, e.what()); break;
            }
        }
    });

    py::class_<Model>(m, "Model")
        .def_property_readonly("param_count", &Model::param_count)
        .def_property_readonly("registry",
                               [](const Model& mo) {
                                   std::vector<std::tuple<std::string, int, int, int>> out;
                                   for (const auto& r : mo.registry)
                                       out.emplace_back(r.name, r.start, r.rows, r.cols);
                                   return out;
                               })
        .def("init_params",
             [](const Model& mo, std::uint64_t seed) { return params_to_array(init_params(mo, seed)); },
             py::arg("seed"))
        .def("predict",
             [](const Model& mo, const Vector& params, const Matrix& X) {
                 return predict(mo, params_from_array(mo, params), X);
             },
             py::arg("params"), py::arg("X"))
        .def("nll_loss",
             [](const Model& mo, const Vector& params, const Matrix& X,
                const std::vector<int>& labels, double weight_decay) {
                 return nll_loss(mo, params_from_array(mo, params), dataset_from_arrays(X, labels),
                                 weight_decay);
             },
             py::arg("params"), py::arg("X"), py::arg("labels"), py::arg("weight_decay") = 0.0)
        .def("nll_grad",
             [](const Model& mo, const Vector& params, const Matrix& X,
                const std::vector<int>& labels, double weight_decay) {
                 return params_to_array(nll_grad(mo, params_from_array(mo, params),
                                                 dataset_from_arrays(X, labels), weight_decay));
             },
             py::arg("params"), py::arg("X"), py::arg("labels"), py::arg("weight_decay") = 0.0);

    m.def("build_mlp",
          [](int input_dim, const std::vector<int>& hidden, int classes, bool norm,
             const std::string& activation) {
              return build_mlp(input_dim, hidden, classes, norm, parse_activation(activation));
          },
          py::arg("input_dim"), py::arg("hidden"), py::arg("classes"), py::arg("norm") = true,
          py::arg("activation") = "tanh");

    py::class_<GaussianPosterior>(m, "Posterior")
        .def_property_readonly("p1", &GaussianPosterior::p1)
        .def_property_readonly("K", &GaussianPosterior::K)
        .def_readonly("mu", &GaussianPosterior::mu)
        .def_readonly("log_sigma", &GaussianPosterior::log_sigma)
        .def_readonly("lowrank", &GaussianPosterior::lowrank)
        .def("sample",
             [](const GaussianPosterior& post, std::uint64_t seed) {
                 return params_to_array(sample(post, seed));
             },
             py::arg("seed"))
        .def("log_density", &log_density, py::arg("w_s"))
        .def("grad_log_density",
             [](const GaussianPosterior& post, const Vector& w_s) {
                 ThetaGroups g = grad_log_density(post, w_s);
                 return py::make_tuple(g.mu, g.log_sigma, g.lowrank);
             },
             py::arg("w_s"));

    m.def("moped_from_dnn",
          [](const Model& mo, const Vector& params, const std::string& partition, double delta,
             double alpha) {
              ParamPartition part = partition_params(mo, parse_partition_policy(partition));
              return moped_from_dnn(mo, params_from_array(mo, params), part, delta, alpha);
          },
          py::arg("model"), py::arg("params"), py::arg("partition") = "all",
          py::arg("delta") = 0.05, py::arg("alpha") = 1e-4);

    m.def("sam_perturb", &sam_perturb, py::arg("grad"), py::arg("gamma"), py::arg("eps") = 1e-12);
    m.def("fsam_perturb", &fsam_perturb, py::arg("grad"), py::arg("diag_fim"), py::arg("gamma"),
          py::arg("eta_fisher") = 1.0, py::arg("eps") = 1e-12);
    m.def("sabma_perturb", &sabma_perturb, py::arg("loss_grads"), py::arg("scores"),
          py::arg("gamma"), py::arg("eps") = 1e-12);

    m.def("lanczos_topk",
          [](const Matrix& A, int k, std::uint64_t seed, int max_iters, double tol) {
              if (A.rows() != A.cols()) fail_config("lanczos_topk: matrix must be square");
              LanczosOptions opts;
              opts.max_iters = max_iters;
              opts.tol = tol;
              SpectrumReport r = lanczos_topk([&A](const Vector& x) { return Vector(A * x); },
                                              static_cast<int>(A.rows()), k, seed, opts);
              py::dict out;
              out["eigenvalues"] = r.eigenvalues;
              out["lambda1"] = r.lambda1;
              out["iterations"] = r.iterations;
              out["residuals"] = r.residuals;
              out["converged"] = r.converged;
              return out;
          },
          py::arg("A"), py::arg("k") = 1, py::arg("seed") = 0, py::arg("max_iters") = 200,
          py::arg("tol") = 1e-8);

    m.def("weyl_certificate",
          [](const std::vector<double>& maxes, const std::vector<double>& mins, double observed) {
              WeylCertificate c = weyl_certificate(maxes, mins, observed);
              py::dict out;
              out["lower"] = c.lower;
              out["upper"] = c.upper;
              out["observed"] = c.observed;
              out["slack"] = c.slack;
              out["pass"] = c.pass;
              return out;
          },
          py::arg("lambda_maxes"), py::arg("lambda_mins"), py::arg("observed"));

    m.def("metrics",
          [](const Matrix& probs, const std::vector<int>& labels) {
              Metrics mm = metrics(probs, labels);
              py::dict out;
              out["acc"] = mm.acc;
              out["ece"] = mm.ece;
              out["nll"] = mm.nll;
              return out;
          },
          py::arg("probs"), py::arg("labels"));

    m.def("gen_dataset",
          [](const std::string& kind, int n_per_class, double noise, std::uint64_t seed,
             int classes, int dim) {
              Dataset d = gen_dataset(parse_data_kind(kind), n_per_class, noise, seed, classes, dim);
              return py::make_tuple(d.X, d.labels);
          },
          py::arg("kind"), py::arg("n_per_class"), py::arg("noise") = 0.1, py::arg("seed") = 0,
          py::arg("classes") = 2, py::arg("dim") = 2);

    m.def("run_experiment",
          [](const std::string& config_json, bool canonical) {
              ExperimentConfig cfg = config_from_json(Json::parse(config_json));
              return canonical_report_string(run_experiment(cfg, canonical));
          },
          py::arg("config_json"), py::arg("canonical") = true);

    m.def("derive_seed", &rng::derive, py::arg("master"), py::arg("tag"), py::arg("index") = 0);
}
