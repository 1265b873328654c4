#include "oracles/oracles.hpp"
#include "voxelforge/errors.hpp"
#include "voxelforge/pipeline.hpp"
#include "voxelforge/roi_trainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace voxelforge;

namespace {

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

// sparse linear responses over the given features
Matrix planted_linear(const Matrix& x, Index voxels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> pick(0, x.cols() - 1);
    std::normal_distribution<double> n01;
    Matrix y = Matrix::Zero(x.rows(), voxels);
    for (Index v = 0; v < voxels; ++v) {
        for (int k = 0; k < 5; ++k) y.col(v) += n01(rng) * x.col(pick(rng));
    }
    return y;
}

TrainConfig fast_config(std::uint64_t seed) {
    TrainConfig c;
    c.hidden_size = 32;
    c.learning_rate = 1e-2;
    c.max_epochs = 60;
    c.patience = 8;
    c.seed = seed;
    return c;
}

double test_accuracy_mean(const ModelBundle& bundle, const Dataset& data, std::size_t roi) {
    const auto pred = predict_bundle(bundle, data, bundle.split.test_indices);
    const Matrix truth = take_rows(data.responses[roi], bundle.split.test_indices);
    return accuracy(truth, pred[roi]).mean_defined();
}

}  // namespace

TEST_CASE("split sizes follow the estimation/validation protocol") {
    const DatasetSplit s = split_with_test_block(1750, 120, 120, 7);
    CHECK(s.train_indices.size() == 1630);
    CHECK(s.validation_indices.size() == 120);
    REQUIRE(s.test_indices.size() == 120);
    for (std::size_t i = 0; i < 120; ++i) CHECK(s.test_indices[i] == static_cast<Index>(1750 + i));
    std::set<Index> all(s.train_indices.begin(), s.train_indices.end());
    all.insert(s.validation_indices.begin(), s.validation_indices.end());
    CHECK(all.size() == 1750);
    CHECK(*all.rbegin() == 1749);

    const DatasetSplit t = split_dataset(50, {0, 0, 50}, 1);
    CHECK(t.train_indices.empty());
    CHECK(t.validation_indices.empty());
    CHECK(t.test_indices.size() == 50);

    const DatasetSplit a = split_dataset(200, {100, 50, 50}, 99);
    const DatasetSplit b = split_dataset(200, {100, 50, 50}, 99);
    CHECK(a.train_indices == b.train_indices);
    CHECK(a.validation_indices == b.validation_indices);
    CHECK(a.test_indices == b.test_indices);
    CHECK(split_dataset(200, {100, 50, 50}, 100).validation_indices != a.validation_indices);

    CHECK_THROWS_AS(split_dataset(10, {5, 5, 1}, 1), SizeOverflow);
    CHECK_THROWS_AS(split_with_test_block(100, 10, 100, 1), SizeOverflow);
}

TEST_CASE("update_mu branches") {
    Vector c(5);
    c << -0.1, 0.0, 0.135, 0.27, 0.9;
    const Vector mu = update_mu(c, 0.27).mu;
    CHECK(mu(0) == 0.0);
    CHECK(mu(1) == 0.0);
    CHECK(mu(2) == 0.5);
    CHECK(mu(3) == 1.0);
    CHECK(mu(4) == 1.0);
}

TEST_CASE("update_mu commutes with joint rescaling and is monotone") {
    const Vector c = Vector::LinSpaced(101, -0.5, 1.0);
    const Vector base = update_mu(c, 0.27).mu;
    for (double alpha : {0.5, 2.0, 10.0}) {
        const Vector scaled = update_mu(alpha * c, alpha * 0.27).mu;
        CHECK((scaled - base).cwiseAbs().maxCoeff() <= 1e-15);
    }
    for (Index i = 1; i < base.size(); ++i) CHECK(base(i) >= base(i - 1));
    CHECK(base.minCoeff() >= 0.0);
    CHECK(base.maxCoeff() <= 1.0);

    Vector bad = c;
    bad(3) = std::nan("");
    CHECK_THROWS_AS(update_mu(bad, 0.27), NonFinite);
    CHECK_THROWS_AS(update_mu(c, 0.0), InvalidConfig);
}

TEST_CASE("noiseless linear ground truth is learned to validation C >= 0.95") {
    const Matrix x = oracle::gaussian(600, 20, 11);
    const Matrix y = planted_linear(x, 10, 12);
    const DatasetSplit split = split_with_test_block(600, 0, 120, 3);
    TrainConfig cfg = fast_config(5);
    cfg.max_epochs = 200;
    const HeadTrainingResult r = train_roi_layer(x, y, split, cfg);
    CHECK(r.validation_correlation.mean() >= 0.95);
    // best-snapshot rule
    for (const auto& e : r.log.epochs) CHECK(e.validation_score <= r.log.best_score);
    CHECK(r.params.all_finite());
}

TEST_CASE("pure-noise responses are down-weighted") {
    const Matrix x = oracle::gaussian(600, 20, 21);
    const Matrix y = oracle::gaussian(600, 30, 22);
    const DatasetSplit split = split_with_test_block(600, 0, 120, 3);
    const HeadTrainingResult r = train_roi_layer(x, y, split, fast_config(6));
    CHECK(r.mu.mu.mean() < 0.2);
    CHECK(r.log.epochs.back().mean_mu < 0.2);
}

TEST_CASE("all-negative validation correlation halts with a warning") {
    // validation rows carry the opposite sign of the training relation
    const Matrix x = oracle::gaussian(300, 4, 31);
    Matrix y(300, 3);
    for (Index v = 0; v < 3; ++v) y.col(v) = x.col(v);
    const DatasetSplit split = split_with_test_block(300, 0, 60, 4);
    for (Index r : split.validation_indices) y.row(r) *= -1;
    TrainConfig cfg = fast_config(7);
    cfg.learning_rate = 5e-2;
    const HeadTrainingResult r = train_roi_layer(x, y, split, cfg);
    CHECK(r.log.epochs.size() == 1);
    CHECK((r.validation_correlation.array() < 0).all());
    CHECK(r.mu.mu.isZero());
    REQUIRE(r.log.warnings.size() == 1);
    CHECK(r.log.warnings[0].find("NonConvergence") != std::string::npos);
    CHECK_FALSE(r.log.converged);
}

TEST_CASE("training is reproducible") {
    const Matrix x = oracle::gaussian(200, 8, 41);
    const Matrix y = planted_linear(x, 4, 42);
    const DatasetSplit split = split_with_test_block(200, 0, 50, 5);
    TrainConfig cfg = fast_config(8);
    cfg.max_epochs = 10;
    const HeadTrainingResult a = train_roi_layer(x, y, split, cfg);
    const HeadTrainingResult b = train_roi_layer(x, y, split, cfg);
    CHECK(a.params.w1 == b.params.w1);
    CHECK(a.params.w2 == b.params.w2);
    REQUIRE(a.log.epochs.size() == b.log.epochs.size());
    for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
        CHECK(a.log.epochs[i].weighted_loss == b.log.epochs[i].weighted_loss);
        CHECK(a.log.epochs[i].validation_score == b.log.epochs[i].validation_score);
    }
}

TEST_CASE("layer selection: single candidate, ties, order invariance, errors") {
    const std::vector<LayerCandidate> one{{4, {0.1, -0.2, std::nan("")}}};
    CHECK(select_layer_per_voxel(one) == std::vector<int>{4, 4, 4});

    std::vector<LayerCandidate> c{{1, {0.1, 0.5}}, {2, {0.4, 0.5}}, {3, {0.4, 0.2}}};
    CHECK(select_layer_per_voxel(c) == std::vector<int>{2, 1});
    std::reverse(c.begin(), c.end());
    CHECK(select_layer_per_voxel(c) == std::vector<int>{2, 1});
    std::swap(c[0], c[1]);
    CHECK(select_layer_per_voxel(c) == std::vector<int>{2, 1});

    CHECK_THROWS_AS(select_layer_per_voxel(std::vector<LayerCandidate>{}), EmptyCandidates);
    const std::vector<LayerCandidate> ragged{{1, {0.1}}, {2, {0.1, 0.2}}};
    CHECK_THROWS_AS(select_layer_per_voxel(ragged), SizeMismatch);
}

TEST_CASE("voxels planted on layer 3 select layer 3") {
    std::vector<Matrix> layers;
    for (int l = 0; l < 4; ++l) layers.push_back(oracle::gaussian(500, 16, 60 + static_cast<std::uint64_t>(l)));
    Matrix y = planted_linear(layers[2], 20, 70);
    y += 0.3 * oracle::gaussian(500, 20, 71);
    const DatasetSplit split = split_with_test_block(500, 0, 120, 9);
    std::vector<LayerCandidate> candidates;
    for (int l = 0; l < 4; ++l) {
        const HeadTrainingResult r = train_roi_layer(layers[static_cast<std::size_t>(l)], y, split, fast_config(80));
        LayerCandidate c{l + 1, {}};
        c.validation_correlation.assign(r.validation_correlation.data(),
                                        r.validation_correlation.data() + r.validation_correlation.size());
        candidates.push_back(std::move(c));
    }
    const auto chosen = select_layer_per_voxel(candidates);
    CHECK(std::count(chosen.begin(), chosen.end(), 3) >= 16);
}

TEST_CASE("full model: dnn-tl bundle structure") {
    SyntheticSpec spec;
    spec.samples = 300;
    spec.test_samples = 60;
    spec.layer_dims = {12, 10};
    spec.rois = {{"a", 4, 4, 2, 0, 0}, {"b", 3, 0, 3, 0, 0}};
    const SyntheticDataset data = generate_synthetic(spec);
    PipelineConfig cfg;
    cfg.train = fast_config(1);
    cfg.train.max_epochs = 5;
    cfg.validation_size = 60;
    const ModelBundle b = train_full_model(data.dataset, ModelKind::DnnTl, cfg, 123);
    CHECK(b.kind == ModelKind::DnnTl);
    CHECK(b.seed == 123);
    CHECK(b.split.train_indices.size() == 240);
    CHECK(b.split.validation_indices.size() == 60);
    CHECK(b.split.test_indices.size() == 60);
    REQUIRE(b.rois.size() == 2);
    for (std::size_t r = 0; r < 2; ++r) {
        CHECK(b.rois[r].head_layers.size() == 2);
        CHECK(b.rois[r].layer_map.size() == static_cast<std::size_t>(spec.rois[r].voxels()));
        for (int l : b.rois[r].layer_map) CHECK((l == 1 || l == 2));
        CHECK(b.rois[r].validation_accuracy.size() == b.rois[r].layer_map.size());
    }
    CHECK(b.test_signature == data.dataset.manifest.test_signature());
}

TEST_CASE("full model: gwp on Gabor-generated voxels") {
    SyntheticSpec spec;
    spec.samples = 400;
    spec.test_samples = 120;
    spec.layer_dims = {8};
    spec.noise_sigma = 0.1;
    spec.gabor = GaborConfig{16, {1, 2, 4}, 4, 0.5, 1.0, false};
    spec.rois = {{"v1", 0, 0, 0, 12, 0}};
    const SyntheticDataset data = generate_synthetic(spec);
    PipelineConfig cfg;
    cfg.gabor = spec.gabor;
    cfg.romp.max_sparsity = 10;
    cfg.validation_size = 80;
    const ModelBundle b = train_full_model(data.dataset, ModelKind::Gwp, cfg, 5);
    REQUIRE(b.rois.size() == 1);
    for (int l : b.rois[0].layer_map) CHECK(l == kGaborLayerId);
    CHECK(test_accuracy_mean(b, data.dataset, 0) >= 0.8);
}

TEST_CASE("full model: dnn-linear picks the planted layer") {
    SyntheticSpec spec;
    spec.samples = 400;
    spec.test_samples = 100;
    spec.layer_dims = {30, 30, 30};
    spec.noise_sigma = 0.2;
    spec.rois = {{"roi", 30, 0, 0, 0, 2}};
    const SyntheticDataset data = generate_synthetic(spec);
    PipelineConfig cfg;
    cfg.romp.max_sparsity = 8;
    cfg.validation_size = 100;
    const ModelBundle b = train_full_model(data.dataset, ModelKind::DnnLinear, cfg, 9);
    const auto& map = b.rois[0].layer_map;
    CHECK(std::count(map.begin(), map.end(), 2) >= 27);
    CHECK(b.rois[0].linear_layers.size() == 3);
}

TEST_CASE("full model errors") {
    SyntheticSpec spec;
    spec.samples = 100;
    spec.test_samples = 20;
    spec.layer_dims = {6};
    spec.rois = {{"roi", 3, 0, 1, 0, 0}};
    const SyntheticDataset data = generate_synthetic(spec);
    PipelineConfig cfg;
    cfg.validation_size = 20;
    // no stimuli for a Gabor model
    CHECK_THROWS_AS(train_full_model(data.dataset, ModelKind::Gwp, cfg, 1), MissingLayerFeatures);
    Dataset bare = data.dataset;
    bare.layers.clear();
    bare.manifest.layers.clear();
    CHECK_THROWS_AS(train_full_model(bare, ModelKind::DnnTl, cfg, 1), MissingLayerFeatures);
}
