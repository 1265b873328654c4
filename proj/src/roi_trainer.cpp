#include "voxelforge/roi_trainer.hpp"

#include "voxelforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace voxelforge {

namespace {

constexpr double kImprovement = 1e-4;
constexpr std::uint64_t kBatchOrderStream = 0xBA7C;

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

void check_indices(const std::vector<Index>& idx, Index n, const char* what) {
    for (Index i : idx) {
        if (i < 0 || i >= n) throw SizeMismatch(std::string(what) + " index out of range");
    }
}

}  // namespace

DatasetSplit split_dataset(Index sample_count, const SplitSizes& sizes, Seed seed) {
    if (sizes.train < 0 || sizes.validation < 0 || sizes.test < 0) {
        throw SizeOverflow("split sizes must be non-negative");
    }
    if (sizes.train + sizes.validation + sizes.test > sample_count) {
        throw SizeOverflow("split sizes " + std::to_string(sizes.train) + "/" +
                           std::to_string(sizes.validation) + "/" + std::to_string(sizes.test) +
                           " exceed " + std::to_string(sample_count) + " samples");
    }
    std::vector<Index> order(static_cast<std::size_t>(sample_count));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    DatasetSplit split;
    auto it = order.begin();
    split.validation_indices.assign(it, it + sizes.validation);
    it += sizes.validation;
    split.test_indices.assign(it, it + sizes.test);
    it += sizes.test;
    split.train_indices.assign(it, order.end());
    for (auto* part : {&split.train_indices, &split.validation_indices, &split.test_indices}) {
        std::sort(part->begin(), part->end());
    }
    return split;
}

DatasetSplit split_with_test_block(Index estimation_count, Index test_count,
                                   Index validation_size, Seed seed) {
    if (test_count < 0) throw SizeOverflow("negative test block");
    if (validation_size >= estimation_count) {
        throw SizeOverflow("validation size " + std::to_string(validation_size) +
                           " leaves no training samples out of " + std::to_string(estimation_count));
    }
    DatasetSplit split = split_dataset(
        estimation_count, {estimation_count - validation_size, validation_size, 0}, seed);
    split.test_indices.resize(static_cast<std::size_t>(test_count));
    std::iota(split.test_indices.begin(), split.test_indices.end(), estimation_count);
    return split;
}

VoxelWeights update_mu(const Vector& c, double threshold) {
    if (!(threshold > 0)) throw InvalidConfig("mu threshold must be > 0");
    VoxelWeights w;
    w.mu.resize(c.size());
    for (Index v = 0; v < c.size(); ++v) {
        const double x = c(v);
        if (std::isnan(x)) throw NonFinite("validation correlation of voxel " + std::to_string(v) + " is NaN");
        if (x < 0) w.mu(v) = 0.0;
        else if (x < threshold) w.mu(v) = x / threshold;
        else w.mu(v) = 1.0;
    }
    return w;
}

HeadTrainingResult train_roi_layer(const FeatureMatrix& features, const ResponseMatrix& responses,
                                   const DatasetSplit& split, const TrainConfig& config) {
    config.validate();
    if (features.rows() != responses.rows()) {
        throw SizeMismatch("features and responses have different sample counts");
    }
    check_indices(split.train_indices, features.rows(), "train");
    check_indices(split.validation_indices, features.rows(), "validation");
    if (split.train_indices.size() < 3 || split.validation_indices.size() < 3) {
        throw SizeMismatch("training needs at least 3 train and 3 validation samples");
    }
    if (responses.cols() < 1) throw SizeMismatch("no voxels to train");

    HeadTrainingResult result;
    const Matrix train_raw = take_rows(features, split.train_indices);
    result.scaler = FeatureScaler::fit(train_raw);
    const Matrix train_x = result.scaler.apply(train_raw);
    const Matrix val_x = result.scaler.apply(take_rows(features, split.validation_indices));
    const Matrix train_y = take_rows(responses, split.train_indices);
    const Matrix val_y = take_rows(responses, split.validation_indices);
    const Index voxels = responses.cols();

    MlpHeadParams params = init_params(features.cols(), voxels, config);
    AdamState adam = AdamState::for_params(params);
    std::mt19937_64 order_rng(derive_seed(config.seed, kBatchOrderStream));
    std::vector<Index> order(split.train_indices.size());
    std::iota(order.begin(), order.end(), 0);

    auto run_epoch = [&](const VoxelWeights& mu) {
        std::shuffle(order.begin(), order.end(), order_rng);
        const auto n = static_cast<Index>(order.size());
        const Index batch = std::min<Index>(config.batch_size, n);
        double total = 0;
        int batches = 0;
        for (Index start = 0; start < n;) {
            Index end = std::min(n, start + batch);
            // fold a short tail into the last batch
            if (n - end < 3) end = n;
            std::vector<Index> rows(order.begin() + start, order.begin() + end);
            const Matrix bx = take_rows(train_x, rows);
            const Matrix by = take_rows(train_y, rows);
            auto eval = evaluate_loss(params, bx, by, mu, config.lambda, VarianceMode::Training);
            adam_step(params, eval.gradient, adam, config.learning_rate);
            total += eval.loss;
            ++batches;
            start = end;
        }
        return total / batches;
    };

    auto validate = [&](const VoxelWeights& mu) {
        return evaluate_loss(params, val_x, val_y, mu, config.lambda, VarianceMode::Training, false)
            .correlations;
    };

    VoxelWeights mu{Vector::Ones(voxels)};
    int epoch = 1;
    double epoch_loss = run_epoch(mu);
    double best_score = -std::numeric_limits<double>::infinity();
    double reference_score = best_score;
    int stale_rounds = 0;
    TrainingLog& log = result.log;

    while (true) {
        const Vector c = validate(mu);
        const VoxelWeights next_mu = update_mu(c, config.mu_threshold);
        const double score = next_mu.mu.dot(c) / static_cast<double>(voxels);
        log.epochs.push_back({epoch, epoch_loss, c.mean(), score, next_mu.mu.mean()});

        if (score > best_score) {
            best_score = score;
            result.params = params;
            result.validation_correlation = c;
            result.mu = next_mu;
            log.best_epoch = epoch;
        }
        if (score >= reference_score + kImprovement) {
            reference_score = score;
            stale_rounds = 0;
        } else if (++stale_rounds >= config.patience) {
            log.converged = true;
            break;
        }
        if (next_mu.mu.maxCoeff() == 0.0) {
            log.warnings.push_back("NonConvergence: every voxel weight is zero, training halted at epoch " +
                                   std::to_string(epoch));
            break;
        }
        if (epoch >= config.max_epochs) {
            log.warnings.push_back("NonConvergence: reached max_epochs=" +
                                   std::to_string(config.max_epochs));
            break;
        }
        mu = next_mu;
        epoch_loss = run_epoch(mu);
        ++epoch;
    }
    log.best_score = best_score;
    return result;
}

std::vector<int> select_layer_per_voxel(std::span<const LayerCandidate> candidates) {
    if (candidates.empty()) throw EmptyCandidates("layer selection needs at least one candidate");
    const std::size_t voxels = candidates.front().validation_correlation.size();
    for (const auto& c : candidates) {
        if (c.validation_correlation.size() != voxels) {
            throw SizeMismatch("layer candidates cover different voxel sets");
        }
    }
    auto score = [](double x) { return std::isnan(x) ? -std::numeric_limits<double>::infinity() : x; };
    std::vector<int> out(voxels);
    for (std::size_t v = 0; v < voxels; ++v) {
        const LayerCandidate* best = &candidates.front();
        for (const auto& c : candidates) {
            const double s = score(c.validation_correlation[v]);
            const double b = score(best->validation_correlation[v]);
            if (s > b || (s == b && c.layer_id < best->layer_id)) best = &c;
        }
        out[v] = best->layer_id;
    }
    return out;
}

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::Gwp: return "gwp";
        case ModelKind::DnnLinear: return "dnn-linear";
        case ModelKind::DnnTl: return "dnn-tl";
    }
    return "dnn-tl";
}

ModelKind parse_model_kind(const std::string& text) {
    if (text == "gwp") return ModelKind::Gwp;
    if (text == "dnn-linear" || text == "dnn_linear") return ModelKind::DnnLinear;
    if (text == "dnn-tl" || text == "dnn_tl") return ModelKind::DnnTl;
    throw InvalidConfig("unknown model kind '" + text + "' (expected gwp, dnn-linear or dnn-tl)");
}

Matrix random_projection(Index input_dim, Index output_dim, Seed seed) {
    Matrix p(input_dim, output_dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(output_dim)));
    for (Index r = 0; r < input_dim; ++r) {
        for (Index c = 0; c < output_dim; ++c) p(r, c) = normal(rng);
    }
    return p;
}

}  // namespace voxelforge
