#include "voxelforge/cli.hpp"
#include "voxelforge/errors.hpp"
#include "voxelforge/gabor.hpp"
#include "voxelforge/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <sstream>

namespace py = pybind11;
using namespace voxelforge;

namespace {

py::dict weights_dict(const SparseWeights& w) {
    py::dict d;
    d["support"] = w.support;
    d["coefficients"] = w.coefficients;
    d["intercept"] = w.intercept;
    d["rank_deficient"] = w.rank_deficient;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "voxel encoding models: Gabor pyramid, ROMP, correlation-loss head, statistics";

    static py::exception<DataError> data_error(m, "DataError", PyExc_ValueError);
    static py::exception<RuntimeFailure> runtime_failure(m, "RuntimeFailure", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const DataError& e) {
            py::set_error(data_error, e.what());
        } catch (const RuntimeFailure& e) {
            py::set_error(runtime_failure, e.what());
        }
    });

    m.attr("DEFAULT_SEED") = kDefaultSeed;

    // gabor
    py::class_<GaborConfig>(m, "GaborConfig")
        .def(py::init<>())
        .def_readwrite("image_size", &GaborConfig::image_size)
        .def_readwrite("frequencies", &GaborConfig::frequencies)
        .def_readwrite("orientations", &GaborConfig::orientations_count)
        .def_readwrite("envelope_ratio", &GaborConfig::envelope_ratio)
        .def_readwrite("grid_multiplier", &GaborConfig::grid_multiplier)
        .def_readwrite("dc_channel", &GaborConfig::dc_channel);
    py::class_<GaborBank>(m, "GaborBank")
        .def_property_readonly("feature_dim", &GaborBank::feature_dim)
        .def_property_readonly("channels", &GaborBank::channels)
        .def_property_readonly("feature_channels", &GaborBank::feature_channels);
    m.def("build_bank", &build_bank, py::arg("config") = GaborConfig{});
    m.def("extract_features", &extract_features, py::arg("image"), py::arg("bank"));
    m.def("extract_batch", [](const std::vector<StimulusImage>& images, const GaborBank& bank) {
        return extract_batch(images, bank);
    }, py::arg("images"), py::arg("bank"));

    // sparse linear
    py::class_<RompConfig>(m, "RompConfig")
        .def(py::init<>())
        .def_readwrite("max_sparsity", &RompConfig::max_sparsity)
        .def_readwrite("selection_size", &RompConfig::selection_size)
        .def_readwrite("max_iterations", &RompConfig::max_iterations)
        .def_readwrite("residual_tolerance", &RompConfig::residual_tolerance)
        .def_readwrite("standardize", &RompConfig::standardize);
    m.def("romp_solve", [](const Matrix& dictionary, const Vector& target, const RompConfig& config) {
        return weights_dict(romp_solve(dictionary, target, config));
    }, py::arg("dictionary"), py::arg("target"), py::arg("config") = RompConfig{});
    py::class_<LinearEncodingModel>(m, "LinearEncodingModel")
        .def_property_readonly("feature_dim", &LinearEncodingModel::feature_dim)
        .def_property_readonly("voxel_count", &LinearEncodingModel::voxel_count)
        .def("weights", [](const LinearEncodingModel& model, std::size_t v) {
            if (v >= model.voxels.size()) throw py::index_error("voxel out of range");
            return weights_dict(model.voxels[v]);
        });
    m.def("fit_voxelwise", &fit_voxelwise, py::arg("features"), py::arg("responses"),
          py::arg("config") = RompConfig{});
    m.def("predict_linear", &predict_linear, py::arg("model"), py::arg("features"));

    // mlp head
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("hidden_size", &TrainConfig::hidden_size)
        .def_readwrite("lambda_", &TrainConfig::lambda)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("max_epochs", &TrainConfig::max_epochs)
        .def_readwrite("patience", &TrainConfig::patience)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("mu_threshold", &TrainConfig::mu_threshold);
    py::class_<MlpHeadParams>(m, "MlpHeadParams")
        .def_readwrite("w1", &MlpHeadParams::w1)
        .def_readwrite("b1", &MlpHeadParams::b1)
        .def_readwrite("w2", &MlpHeadParams::w2)
        .def_readwrite("b2", &MlpHeadParams::b2)
        .def("weight_norm_sq", &MlpHeadParams::weight_norm_sq);
    m.def("init_params", &init_params, py::arg("feature_dim"), py::arg("voxels"), py::arg("config") = TrainConfig{});
    m.def("forward", &forward, py::arg("params"), py::arg("features"));
    m.def("loss", [](const MlpHeadParams& p, const Matrix& x, const Matrix& y, const Vector& mu, double lambda) {
        return loss(p, x, y, VoxelWeights{mu}, lambda);
    }, py::arg("params"), py::arg("features"), py::arg("measured"), py::arg("mu"), py::arg("lambda_"));
    m.def("loss_gradient", [](const MlpHeadParams& p, const Matrix& x, const Matrix& y, const Vector& mu, double lambda) {
        return loss_gradient(p, x, y, VoxelWeights{mu}, lambda);
    }, py::arg("params"), py::arg("features"), py::arg("measured"), py::arg("mu"), py::arg("lambda_"));

    // trainer
    m.def("update_mu", [](const Vector& c, double threshold) { return update_mu(c, threshold).mu; },
          py::arg("validation_correlation"), py::arg("threshold") = 0.27);
    m.def("split_dataset", [](Index n, Index train, Index validation, Index test, Seed seed) {
        const DatasetSplit s = split_dataset(n, {train, validation, test}, seed);
        py::dict d;
        d["train"] = s.train_indices;
        d["validation"] = s.validation_indices;
        d["test"] = s.test_indices;
        return d;
    }, py::arg("sample_count"), py::arg("train"), py::arg("validation"), py::arg("test"),
          py::arg("seed") = kDefaultSeed);

    // statistics
    m.def("pearson", py::overload_cast<const Vector&, const Vector&>(&pearson), py::arg("x"), py::arg("y"));
    m.def("accuracy", [](const Matrix& measured, const Matrix& predicted) {
        const AccuracyVector a = accuracy(measured, predicted);
        return py::make_tuple(a.values, a.defined);
    }, py::arg("measured"), py::arg("predicted"));
    m.def("randomization_threshold", [](const Matrix& measured, const Matrix& predicted, int shuffles, double p, Seed seed) {
        const SignificanceResult r = randomization_threshold(measured, predicted, shuffles, p, seed);
        py::dict d;
        d["threshold"] = r.threshold;
        d["per_voxel_threshold"] = r.per_voxel_threshold;
        d["significant"] = r.significant;
        d["excluded_voxels"] = r.excluded_voxels;
        return d;
    }, py::arg("measured"), py::arg("predicted"), py::arg("shuffles") = 1000, py::arg("p") = 0.001,
          py::arg("seed") = kDefaultSeed);
    m.def("model_advantage", [](const std::vector<double>& a, const std::vector<double>& b, double threshold,
                                int permutations, Seed seed) {
        auto wrap = [](const std::vector<double>& v) {
            AccuracyVector out;
            out.values = v;
            for (std::size_t i = 0; i < v.size(); ++i) {
                out.defined.push_back(!std::isnan(v[i]));
                out.voxel_ids.push_back(static_cast<int>(i));
            }
            return out;
        };
        const AdvantageResult r = model_advantage(wrap(a), wrap(b), threshold, permutations, seed);
        py::dict d;
        d["advantage_fraction"] = r.advantage_fraction;
        d["significance_band"] = r.significance_band;
        d["significant"] = r.significant;
        d["eligible_voxel_count"] = r.eligible_voxel_count;
        return d;
    }, py::arg("acc_a"), py::arg("acc_b"), py::arg("threshold") = 0.27, py::arg("permutations") = 1000,
          py::arg("seed") = kDefaultSeed);

    // files and the command line
    m.def("read_matrix", &read_matrix, py::arg("path"));
    m.def("write_matrix", &write_matrix, py::arg("matrix"), py::arg("path"));
    m.def("run_cli", [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
    }, py::arg("args"));
}
