#pragma once

#include "voxelforge/gabor.hpp"
#include "voxelforge/mlp_head.hpp"
#include "voxelforge/sparse_linear.hpp"
#include "voxelforge/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace voxelforge {

struct DatasetSplit {
    std::vector<Index> train_indices;
    std::vector<Index> validation_indices;
    std::vector<Index> test_indices;
};

struct SplitSizes {
    Index train = 1630;
    Index validation = 120;
    Index test = 0;
};

// Seeded uniform partition of [0, sample_count). Samples not claimed by the
// requested sizes are appended to the training set so the split always
// covers every sample. Throws SizeOverflow when the sizes exceed the count.
DatasetSplit split_dataset(Index sample_count, const SplitSizes& sizes, Seed seed);

// Random train/validation split of the estimation block; the held-out test
// block [estimation_count, estimation_count + test_count) passes through.
DatasetSplit split_with_test_block(Index estimation_count, Index test_count,
                                   Index validation_size, Seed seed);

// Piecewise voxel weight: 0 below 0, C / threshold on [0, threshold), 1 above.
VoxelWeights update_mu(const Vector& validation_correlation, double threshold);

struct EpochRecord {
    int epoch = 0;
    double weighted_loss = 0;       // mean training-batch loss under current mu
    double mean_validation_c = 0;
    double validation_score = 0;    // sum_v mu_v C_v / V on validation
    double mean_mu = 0;
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_score = 0;
    bool converged = false;
    std::vector<std::string> warnings;
};

struct HeadTrainingResult {
    MlpHeadParams params;            // best validation snapshot
    FeatureScaler scaler;            // train-set standardization
    Vector validation_correlation;   // per voxel, at the best snapshot
    VoxelWeights mu;                 // at the best snapshot
    TrainingLog log;
};

// Dynamic-weight training loop for one feature layer of one ROI.
HeadTrainingResult train_roi_layer(const FeatureMatrix& features, const ResponseMatrix& responses,
                                   const DatasetSplit& split, const TrainConfig& config);

struct LayerCandidate {
    int layer_id = 0;
    std::vector<double> validation_correlation;  // NaN allowed (treated as -inf)
};

// Per voxel argmax of validation correlation, ties to the lower layer id.
std::vector<int> select_layer_per_voxel(std::span<const LayerCandidate> candidates);

enum class ModelKind { Gwp, DnnLinear, DnnTl };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

struct PipelineConfig {
    TrainConfig train;
    RompConfig romp;
    GaborConfig gabor;
    Index validation_size = 120;
    // layers wider than this are reduced by a seeded random projection
    Index max_feature_dim = 4096;
};

// Seeded Gaussian projection (input_dim x output_dim, entries N(0, 1/output_dim)).
Matrix random_projection(Index input_dim, Index output_dim, Seed seed);

}  // namespace voxelforge
