#include "voxelforge/pipeline.hpp"

#include "voxelforge/errors.hpp"
#include "voxelforge/gabor.hpp"
#include "voxelforge/parallel.hpp"

#include <cmath>
#include <sstream>

namespace voxelforge {

namespace {

constexpr std::uint64_t kSplitStream = 0x5917;
constexpr std::uint64_t kProjectionStream = 0x9000;
constexpr std::uint64_t kHeadStream = 0x7E00;

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

const ProjectionRecord* find_projection(const ModelBundle& b, int layer_id) {
    for (const auto& p : b.projections) {
        if (p.layer_id == layer_id) return &p;
    }
    return nullptr;
}

FeatureMatrix layer_rows(const ModelBundle& bundle, const Dataset& dataset, int layer_id,
                         const std::vector<Index>& rows) {
    for (Index r : rows) {
        if (r < 0 || r >= dataset.sample_count()) throw SizeMismatch("sample row out of range");
    }
    if (layer_id == kGaborLayerId) {
        if (dataset.stimuli.empty()) {
            throw MissingLayerFeatures("gwp model needs stimulus images; the dataset lists none");
        }
        const auto& gabor = bundle.config.gabor;
        if (dataset.stimuli.front().rows() != gabor.image_size) {
            throw SizeMismatch("stimuli are " + std::to_string(dataset.stimuli.front().rows()) +
                               " px but gabor.image_size is " + std::to_string(gabor.image_size));
        }
        std::vector<StimulusImage> images;
        images.reserve(rows.size());
        for (Index r : rows) images.push_back(dataset.stimuli[static_cast<std::size_t>(r)]);
        return extract_batch(images, build_bank(gabor));
    }
    auto it = dataset.layers.find(layer_id);
    if (it == dataset.layers.end()) {
        throw MissingLayerFeatures("dataset has no features for layer " + std::to_string(layer_id));
    }
    FeatureMatrix x = take_rows(it->second, rows);
    if (const auto* p = find_projection(bundle, layer_id)) {
        if (p->input_dim != x.cols()) {
            throw SizeMismatch("layer " + std::to_string(layer_id) + " width differs from the recorded projection");
        }
        x = x * random_projection(p->input_dim, p->output_dim, p->seed);
    }
    return x;
}

std::vector<Index> all_rows(Index n) {
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
    return rows;
}

std::vector<double> accuracy_values(const AccuracyVector& a) { return a.values; }

double mean_finite(const std::vector<double>& v) {
    double s = 0;
    int n = 0;
    for (double x : v) {
        if (std::isfinite(x)) {
            s += x;
            ++n;
        }
    }
    return n ? s / n : std::nan("");
}

std::string fmt(double x) {
    std::ostringstream o;
    o.precision(6);
    o << x;
    return o.str();
}

}  // namespace

FeatureMatrix bundle_layer_features(const ModelBundle& bundle, const Dataset& dataset, int layer_id) {
    return layer_rows(bundle, dataset, layer_id, all_rows(dataset.sample_count()));
}

ModelBundle train_full_model(const Dataset& dataset, ModelKind kind, const PipelineConfig& config,
                             Seed seed, const LogSink& log) {
    validate_dataset(dataset);
    config.train.validate();
    config.romp.validate();
    if (kind == ModelKind::Gwp) config.gabor.validate();
    if (config.max_feature_dim < 1) throw InvalidConfig("max_feature_dim must be >= 1");
    auto emit = [&](const std::string& line) {
        if (log) log(line);
    };

    ModelBundle b;
    b.kind = kind;
    b.seed = seed;
    b.config = config;
    b.config.train.seed = seed;
    b.dataset_name = dataset.manifest.name;
    b.dataset_manifest = dataset.manifest_path.string();
    b.test_signature = dataset.manifest.test_signature();
    b.split = split_with_test_block(dataset.manifest.estimation_samples, dataset.manifest.test_samples,
                                    config.validation_size, derive_seed(seed, kSplitStream));

    std::vector<int> layer_ids;
    if (kind == ModelKind::Gwp) {
        layer_ids.push_back(kGaborLayerId);
    } else {
        for (const auto& [id, x] : dataset.layers) {
            layer_ids.push_back(id);
            if (x.cols() > config.max_feature_dim) {
                b.projections.push_back({id, x.cols(), config.max_feature_dim,
                                         derive_seed(seed, kProjectionStream + static_cast<std::uint64_t>(id))});
                emit("event=projection layer=" + std::to_string(id) + " from=" + std::to_string(x.cols()) +
                     " to=" + std::to_string(config.max_feature_dim));
            }
        }
        if (layer_ids.empty()) throw MissingLayerFeatures("dataset lists no DNN layer features");
    }

    // features for train + validation rows, per layer
    std::vector<Index> est_rows = b.split.train_indices;
    est_rows.insert(est_rows.end(), b.split.validation_indices.begin(), b.split.validation_indices.end());
    const auto n_train = static_cast<Index>(b.split.train_indices.size());
    const auto n_val = static_cast<Index>(b.split.validation_indices.size());
    DatasetSplit local;
    for (Index i = 0; i < n_train; ++i) local.train_indices.push_back(i);
    for (Index i = 0; i < n_val; ++i) local.validation_indices.push_back(n_train + i);

    std::vector<FeatureMatrix> features;
    for (int id : layer_ids) {
        features.push_back(layer_rows(b, dataset, id, est_rows));
        emit("event=features layer=" + std::to_string(id) + " dim=" + std::to_string(features.back().cols()));
    }

    for (std::size_t r = 0; r < dataset.responses.size(); ++r) {
        const auto& entry = dataset.manifest.rois[r];
        const ResponseMatrix y = take_rows(dataset.responses[r], est_rows);
        const ResponseMatrix y_train = y.topRows(n_train);
        const ResponseMatrix y_val = y.bottomRows(n_val);
        RoiModel roi;
        roi.name = entry.name;
        roi.voxels = entry.voxels;
        std::vector<LayerCandidate> candidates(layer_ids.size());

        if (kind == ModelKind::DnnTl) {
            roi.head_layers.resize(layer_ids.size());
            // layers are trained one after another; evaluate_loss is the hot spot
            for (std::size_t l = 0; l < layer_ids.size(); ++l) {
                TrainConfig tc = b.config.train;
                tc.seed = derive_seed(seed, kHeadStream + r * 16 + static_cast<std::uint64_t>(layer_ids[l]));
                auto res = train_roi_layer(features[l], y, local, tc);
                HeadLayerModel& hm = roi.head_layers[l];
                hm.layer_id = layer_ids[l];
                hm.scaler = std::move(res.scaler);
                hm.params = std::move(res.params);
                hm.log = std::move(res.log);
                const Matrix xv = hm.scaler.apply(features[l].bottomRows(n_val));
                candidates[l] = {layer_ids[l], accuracy(y_val, forward(hm.params, xv)).values};
                for (const auto& w : hm.log.warnings) {
                    b.warnings.push_back("roi " + roi.name + " layer " + std::to_string(hm.layer_id) + ": " + w);
                }
                emit("event=layer_trained roi=" + roi.name + " layer=" + std::to_string(hm.layer_id) +
                     " epochs=" + std::to_string(hm.log.epochs.size()) + " best_epoch=" +
                     std::to_string(hm.log.best_epoch) + " converged=" + (hm.log.converged ? "true" : "false") +
                     " mean_val_c=" + fmt(mean_finite(candidates[l].validation_correlation)));
            }
        } else {
            roi.linear_layers.resize(layer_ids.size());
            for (std::size_t l = 0; l < layer_ids.size(); ++l) {
                auto lm = fit_voxelwise(features[l].topRows(n_train), y_train, config.romp);
                lm.layer_id = layer_ids[l];
                candidates[l] = {layer_ids[l],
                                 accuracy_values(accuracy(y_val, predict_linear(lm, features[l].bottomRows(n_val))))};
                roi.linear_layers[l] = std::move(lm);
                emit("event=layer_trained roi=" + roi.name + " layer=" + std::to_string(layer_ids[l]) +
                     " mean_val_c=" + fmt(mean_finite(candidates[l].validation_correlation)));
            }
        }
        roi.layer_map = select_layer_per_voxel(candidates);
        roi.validation_accuracy.resize(static_cast<std::size_t>(roi.voxels));
        for (Index v = 0; v < roi.voxels; ++v) {
            const int id = roi.layer_map[static_cast<std::size_t>(v)];
            for (const auto& c : candidates) {
                if (c.layer_id == id) roi.validation_accuracy[static_cast<std::size_t>(v)] = c.validation_correlation[static_cast<std::size_t>(v)];
            }
        }
        emit("event=roi_done roi=" + roi.name + " voxels=" + std::to_string(roi.voxels) +
             " mean_val_c=" + fmt(mean_finite(roi.validation_accuracy)));
        b.rois.push_back(std::move(roi));
    }
    return b;
}

std::vector<ResponseMatrix> predict_bundle(const ModelBundle& bundle, const Dataset& dataset,
                                           const std::vector<Index>& rows) {
    if (bundle.rois.size() != dataset.manifest.rois.size()) {
        throw SizeMismatch("bundle and dataset have different ROI lists");
    }
    std::map<int, FeatureMatrix> cache;
    auto features = [&](int id) -> const FeatureMatrix& {
        auto it = cache.find(id);
        if (it == cache.end()) it = cache.emplace(id, layer_rows(bundle, dataset, id, rows)).first;
        return it->second;
    };
    std::vector<ResponseMatrix> out;
    for (std::size_t r = 0; r < bundle.rois.size(); ++r) {
        const RoiModel& roi = bundle.rois[r];
        if (roi.name != dataset.manifest.rois[r].name || roi.voxels != dataset.manifest.rois[r].voxels) {
            throw SizeMismatch("bundle ROI " + roi.name + " does not match the dataset");
        }
        ResponseMatrix pred = ResponseMatrix::Zero(static_cast<Index>(rows.size()), roi.voxels);
        auto scatter = [&](int id, const ResponseMatrix& p) {
            for (Index v = 0; v < roi.voxels; ++v) {
                if (roi.layer_map[static_cast<std::size_t>(v)] == id) pred.col(v) = p.col(v);
            }
        };
        for (const auto& lm : roi.linear_layers) {
            const int id = lm.layer_id.value_or(kGaborLayerId);
            scatter(id, predict_linear(lm, features(id)));
        }
        for (const auto& hm : roi.head_layers) {
            scatter(hm.layer_id, forward(hm.params, hm.scaler.apply(features(hm.layer_id))));
        }
        out.push_back(std::move(pred));
    }
    return out;
}

}  // namespace voxelforge
