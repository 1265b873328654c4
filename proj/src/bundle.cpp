#include "voxelforge/data_io.hpp"
#include "voxelforge/errors.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <set>

namespace voxelforge {

namespace {

constexpr const char* kBundleFormat = "voxelforge-bundle";
constexpr const char* kSplitFile = "split.json";

Json num(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }
double num_or_nan(const Json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

Matrix column_of(const Vector& v) { return Matrix(v); }

Vector as_vector(const Matrix& m, Index expected, const std::string& what) {
    if (m.cols() != 1 || m.rows() != expected) throw SchemaMismatch(what + " has unexpected shape");
    return m.col(0);
}

Matrix scaler_matrix(const FeatureScaler& s) {
    Matrix m(2, s.dim());
    m.row(0) = s.mean.transpose();
    m.row(1) = s.scale.transpose();
    return m;
}

FeatureScaler scaler_from(const Matrix& m, const std::string& what) {
    if (m.rows() != 2) throw SchemaMismatch(what + " must have 2 rows (mean, scale)");
    FeatureScaler s{m.row(0).transpose(), m.row(1).transpose()};
    if ((s.scale.array() <= 0).any()) throw SchemaMismatch(what + " has non-positive scales");
    return s;
}

Json log_to_json(const TrainingLog& log) {
    Json epochs = Json::array();
    for (const auto& e : log.epochs) {
        epochs.push_back({e.epoch, num(e.weighted_loss), num(e.mean_validation_c),
                          num(e.validation_score), num(e.mean_mu)});
    }
    return {{"columns", {"epoch", "weighted_loss", "mean_validation_c", "validation_score", "mean_mu"}},
            {"epochs", epochs},
            {"best_epoch", log.best_epoch},
            {"best_score", num(log.best_score)},
            {"converged", log.converged},
            {"warnings", log.warnings}};
}

TrainingLog log_from_json(const Json& j) {
    TrainingLog log;
    for (const auto& row : j.at("epochs")) {
        log.epochs.push_back({row.at(0).get<int>(), num_or_nan(row.at(1)), num_or_nan(row.at(2)),
                              num_or_nan(row.at(3)), num_or_nan(row.at(4))});
    }
    log.best_epoch = j.at("best_epoch").get<int>();
    log.best_score = num_or_nan(j.at("best_score"));
    log.converged = j.at("converged").get<bool>();
    log.warnings = j.at("warnings").get<std::vector<std::string>>();
    return log;
}

Json split_to_json(const DatasetSplit& s) {
    return {{"train", s.train_indices}, {"validation", s.validation_indices}, {"test", s.test_indices}};
}

DatasetSplit split_from_json(const Json& j) {
    return {j.at("train").get<std::vector<Index>>(), j.at("validation").get<std::vector<Index>>(),
            j.at("test").get<std::vector<Index>>()};
}

fs::path need(const fs::path& p) {
    if (!fs::exists(p)) throw MissingFile("bundle file missing: " + p.filename().string());
    return p;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{"format",     "version",     "model_kind", "seed",
                                            "config",     "dataset",     "split_record",
                                            "projections", "rois",       "warnings"};
    return keys;
}

}  // namespace

Json to_json(const PipelineConfig& c) {
    return {{"train",
             {{"hidden_size", c.train.hidden_size},
              {"lambda", c.train.lambda},
              {"learning_rate", c.train.learning_rate},
              {"max_epochs", c.train.max_epochs},
              {"patience", c.train.patience},
              {"batch_size", c.train.batch_size},
              {"seed", c.train.seed},
              {"mu_threshold", c.train.mu_threshold}}},
            {"romp",
             {{"max_sparsity", c.romp.max_sparsity},
              {"selection_size", c.romp.selection_size},
              {"max_iterations", c.romp.max_iterations},
              {"residual_tolerance", c.romp.residual_tolerance},
              {"standardize", c.romp.standardize}}},
            {"gabor",
             {{"image_size", c.gabor.image_size},
              {"frequencies", c.gabor.frequencies},
              {"orientations", c.gabor.orientations_count},
              {"envelope_ratio", c.gabor.envelope_ratio},
              {"grid_multiplier", c.gabor.grid_multiplier},
              {"dc_channel", c.gabor.dc_channel}}},
            {"validation_size", c.validation_size},
            {"max_feature_dim", c.max_feature_dim}};
}

PipelineConfig pipeline_config_from_json(const Json& j, PipelineConfig c) {
    try {
        if (j.contains("train")) {
            const Json& t = j["train"];
            c.train.hidden_size = t.value("hidden_size", c.train.hidden_size);
            c.train.lambda = t.value("lambda", c.train.lambda);
            c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
            c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
            c.train.patience = t.value("patience", c.train.patience);
            c.train.batch_size = t.value("batch_size", c.train.batch_size);
            c.train.seed = t.value("seed", c.train.seed);
            c.train.mu_threshold = t.value("mu_threshold", c.train.mu_threshold);
        }
        if (j.contains("romp")) {
            const Json& r = j["romp"];
            c.romp.max_sparsity = r.value("max_sparsity", c.romp.max_sparsity);
            c.romp.selection_size = r.value("selection_size", c.romp.selection_size);
            c.romp.max_iterations = r.value("max_iterations", c.romp.max_iterations);
            c.romp.residual_tolerance = r.value("residual_tolerance", c.romp.residual_tolerance);
            c.romp.standardize = r.value("standardize", c.romp.standardize);
        }
        if (j.contains("gabor")) {
            const Json& g = j["gabor"];
            c.gabor.image_size = g.value("image_size", c.gabor.image_size);
            if (g.contains("frequencies")) c.gabor.frequencies = g["frequencies"].get<std::vector<double>>();
            c.gabor.orientations_count = g.value("orientations", c.gabor.orientations_count);
            c.gabor.envelope_ratio = g.value("envelope_ratio", c.gabor.envelope_ratio);
            c.gabor.grid_multiplier = g.value("grid_multiplier", c.gabor.grid_multiplier);
            c.gabor.dc_channel = g.value("dc_channel", c.gabor.dc_channel);
        }
        c.validation_size = j.value("validation_size", c.validation_size);
        c.max_feature_dim = j.value("max_feature_dim", c.max_feature_dim);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(std::string("config: ") + e.what());
    }
    return c;
}

void save_bundle(const ModelBundle& b, const fs::path& dir) {
    fs::create_directories(dir);
    Json j;
    j["format"] = kBundleFormat;
    j["version"] = kBundleVersion;
    j["model_kind"] = to_string(b.kind);
    j["seed"] = b.seed;
    j["config"] = to_json(b.config);
    j["dataset"] = {{"name", b.dataset_name},
                    {"manifest", b.dataset_manifest},
                    {"test_signature", b.test_signature}};
    j["split_record"] = kSplitFile;
    Json projections = Json::array();
    for (const auto& p : b.projections) {
        projections.push_back({{"layer_id", p.layer_id},
                               {"input_dim", p.input_dim},
                               {"output_dim", p.output_dim},
                               {"seed", p.seed}});
    }
    j["projections"] = projections;

    Json rois = Json::array();
    for (std::size_t r = 0; r < b.rois.size(); ++r) {
        const RoiModel& roi = b.rois[r];
        const std::string sub = "roi_" + std::to_string(r);
        const fs::path rdir = dir / sub;
        fs::create_directories(rdir);
        Json jr = {{"name", roi.name}, {"voxels", roi.voxels}, {"directory", sub},
                   {"layer_map", roi.layer_map}};
        Json acc = Json::array();
        for (double x : roi.validation_accuracy) acc.push_back(num(x));
        jr["validation_accuracy"] = acc;

        Json layers = Json::array();
        for (const auto& lm : roi.linear_layers) {
            const int id = lm.layer_id.value_or(0);
            const std::string stem = "layer" + std::to_string(id);
            if (lm.feature_dim() >= (Index{1} << 24)) {
                throw RuntimeFailure("feature index does not fit the triplet format");
            }
            std::vector<std::array<double, 3>> triplets;
            Vector intercepts(lm.voxel_count());
            std::vector<int> rank_deficient;
            for (Index v = 0; v < lm.voxel_count(); ++v) {
                const auto& w = lm.voxels[static_cast<std::size_t>(v)];
                intercepts(v) = w.intercept;
                if (w.rank_deficient) rank_deficient.push_back(static_cast<int>(v));
                for (std::size_t i = 0; i < w.support.size(); ++i) {
                    triplets.push_back({static_cast<double>(v), static_cast<double>(w.support[i]),
                                        w.coefficients[i]});
                }
            }
            Matrix tm(static_cast<Index>(triplets.size()), 3);
            for (std::size_t i = 0; i < triplets.size(); ++i) {
                for (int c = 0; c < 3; ++c) tm(static_cast<Index>(i), c) = triplets[i][static_cast<std::size_t>(c)];
            }
            write_matrix(tm, rdir / (stem + "_weights.nenc"));
            write_matrix(column_of(intercepts), rdir / (stem + "_intercepts.nenc"));
            write_matrix(scaler_matrix(lm.scaler), rdir / (stem + "_scaler.nenc"));
            layers.push_back({{"layer_id", id},
                              {"type", "sparse_linear"},
                              {"feature_dim", lm.feature_dim()},
                              {"rank_deficient_voxels", rank_deficient},
                              {"files",
                               {{"weights", stem + "_weights.nenc"},
                                {"intercepts", stem + "_intercepts.nenc"},
                                {"scaler", stem + "_scaler.nenc"}}}});
        }
        for (const auto& hm : roi.head_layers) {
            const std::string stem = "layer" + std::to_string(hm.layer_id);
            write_matrix(hm.params.w1, rdir / (stem + "_w1.nenc"));
            write_matrix(column_of(hm.params.b1), rdir / (stem + "_b1.nenc"));
            write_matrix(hm.params.w2, rdir / (stem + "_w2.nenc"));
            write_matrix(column_of(hm.params.b2), rdir / (stem + "_b2.nenc"));
            write_matrix(scaler_matrix(hm.scaler), rdir / (stem + "_scaler.nenc"));
            layers.push_back({{"layer_id", hm.layer_id},
                              {"type", "mlp_head"},
                              {"feature_dim", hm.params.feature_dim()},
                              {"hidden", hm.params.hidden()},
                              {"files",
                               {{"w1", stem + "_w1.nenc"},
                                {"b1", stem + "_b1.nenc"},
                                {"w2", stem + "_w2.nenc"},
                                {"b2", stem + "_b2.nenc"},
                                {"scaler", stem + "_scaler.nenc"}}},
                              {"log", log_to_json(hm.log)}});
        }
        jr["layers"] = layers;
        rois.push_back(jr);
    }
    j["rois"] = rois;
    j["warnings"] = b.warnings;
    for (const auto& [key, value] : b.extra.items()) {
        if (!known_keys().count(key)) j[key] = value;
    }
    write_json_file(split_to_json(b.split), dir / kSplitFile);
    write_json_file(j, dir / "manifest.json");
}

ModelBundle load_bundle(const fs::path& dir) {
    const Json j = read_json_file(need(dir / "manifest.json"));
    if (j.value("format", std::string{}) != kBundleFormat) {
        throw SchemaMismatch("bundle manifest format must be '" + std::string(kBundleFormat) + "'");
    }
    if (j.value("version", 0) != kBundleVersion) {
        throw SchemaMismatch("unsupported bundle version " + j.value("version", Json(0)).dump());
    }
    ModelBundle b;
    try {
        b.kind = parse_model_kind(j.at("model_kind").get<std::string>());
        b.seed = j.at("seed").get<Seed>();
        b.config = pipeline_config_from_json(j.at("config"));
        b.dataset_name = j.at("dataset").at("name").get<std::string>();
        b.dataset_manifest = j.at("dataset").at("manifest").get<std::string>();
        b.test_signature = j.at("dataset").at("test_signature").get<std::string>();
        const fs::path split_path = dir / j.at("split_record").get<std::string>();
        if (!fs::exists(split_path)) {
            throw MissingFile("bundle is missing its split record " + split_path.filename().string());
        }
        b.split = split_from_json(read_json_file(split_path));
        for (const auto& p : j.at("projections")) {
            b.projections.push_back({p.at("layer_id").get<int>(), p.at("input_dim").get<Index>(),
                                     p.at("output_dim").get<Index>(), p.at("seed").get<Seed>()});
        }
        for (const auto& jr : j.at("rois")) {
            RoiModel roi;
            roi.name = jr.at("name").get<std::string>();
            roi.voxels = jr.at("voxels").get<Index>();
            roi.layer_map = jr.at("layer_map").get<std::vector<int>>();
            for (const auto& x : jr.at("validation_accuracy")) roi.validation_accuracy.push_back(num_or_nan(x));
            const fs::path rdir = dir / jr.at("directory").get<std::string>();
            for (const auto& jl : jr.at("layers")) {
                const int id = jl.at("layer_id").get<int>();
                const Json& files = jl.at("files");
                auto file = [&](const char* key) { return need(rdir / files.at(key).get<std::string>()); };
                const std::string type = jl.at("type").get<std::string>();
                if (type == "sparse_linear") {
                    LinearEncodingModel lm;
                    lm.layer_id = id;
                    lm.scaler = scaler_from(read_matrix(file("scaler")), "scaler");
                    const Vector intercepts =
                        as_vector(read_matrix(file("intercepts")), roi.voxels, "intercepts");
                    lm.voxels.resize(static_cast<std::size_t>(roi.voxels));
                    for (Index v = 0; v < roi.voxels; ++v) lm.voxels[static_cast<std::size_t>(v)].intercept = intercepts(v);
                    const Matrix tm = read_matrix(file("weights"));
                    if (tm.cols() != 3) throw SchemaMismatch("weight triplets must have 3 columns");
                    for (Index i = 0; i < tm.rows(); ++i) {
                        const auto v = static_cast<Index>(tm(i, 0));
                        const auto f = static_cast<Index>(tm(i, 1));
                        if (v < 0 || v >= roi.voxels || f < 0 || f >= lm.feature_dim()) {
                            throw SchemaMismatch("weight triplet out of range");
                        }
                        auto& w = lm.voxels[static_cast<std::size_t>(v)];
                        w.support.push_back(f);
                        w.coefficients.push_back(tm(i, 2));
                    }
                    for (int v : jl.value("rank_deficient_voxels", std::vector<int>{})) {
                        if (v >= 0 && v < roi.voxels) lm.voxels[static_cast<std::size_t>(v)].rank_deficient = true;
                    }
                    roi.linear_layers.push_back(std::move(lm));
                } else if (type == "mlp_head") {
                    HeadLayerModel hm;
                    hm.layer_id = id;
                    hm.params.w1 = read_matrix(file("w1"));
                    hm.params.w2 = read_matrix(file("w2"));
                    hm.params.b1 = as_vector(read_matrix(file("b1")), hm.params.w1.rows(), "b1");
                    hm.params.b2 = as_vector(read_matrix(file("b2")), hm.params.w2.rows(), "b2");
                    hm.params.check_consistent();
                    hm.scaler = scaler_from(read_matrix(file("scaler")), "scaler");
                    if (hm.scaler.dim() != hm.params.feature_dim()) throw SchemaMismatch("scaler width differs from W1");
                    if (jl.contains("log")) hm.log = log_from_json(jl["log"]);
                    roi.head_layers.push_back(std::move(hm));
                } else {
                    throw SchemaMismatch("unknown layer model type '" + type + "'");
                }
            }
            if (static_cast<Index>(roi.layer_map.size()) != roi.voxels) {
                throw SchemaMismatch("layer map length differs from voxel count in ROI " + roi.name);
            }
            b.rois.push_back(std::move(roi));
        }
        b.warnings = j.value("warnings", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(std::string("bundle manifest: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        if (!known_keys().count(key)) {
            b.extra[key] = value;
            b.warnings.push_back("unknown manifest key '" + key + "' preserved");
        }
    }
    return b;
}

}  // namespace voxelforge
