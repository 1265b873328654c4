#pragma once

#include "voxelforge/types.hpp"

#include <optional>
#include <vector>

namespace voxelforge {

struct RompConfig {
    int max_sparsity = 50;
    // |J|, candidates considered per iteration; 0 means max_sparsity
    int selection_size = 0;
    int max_iterations = 100;
    // stop once ||residual|| <= tolerance * ||centered target||
    double residual_tolerance = 1e-4;
    bool standardize = true;

    void validate() const;
};

struct SparseWeights {
    std::vector<Index> support;         // in selection order
    std::vector<double> coefficients;   // aligned with support
    double intercept = 0;
    // a least-squares refit hit a rank-deficient system and fell back to
    // the minimum-norm solution
    bool rank_deficient = false;

    double coefficient_for(Index feature) const;
};

// Per-iteration record of one solve.
struct RompIteration {
    std::vector<Index> batch;            // J0 added this iteration
    std::vector<double> batch_magnitude; // |u| over J0
    double residual_norm = 0;            // after the refit
};

struct RompTrace {
    double initial_residual_norm = 0;
    std::vector<RompIteration> iterations;
};

// Regularized orthogonal matching pursuit on (dictionary, target). The
// target and dictionary columns are centered internally; the intercept
// absorbs the means.
SparseWeights romp_solve(const FeatureMatrix& dictionary, const Vector& target,
                         const RompConfig& config, RompTrace* trace = nullptr);

struct LinearEncodingModel {
    FeatureScaler scaler;
    std::vector<SparseWeights> voxels;
    std::optional<int> layer_id;

    Index feature_dim() const { return scaler.dim(); }
    Index voxel_count() const { return static_cast<Index>(voxels.size()); }
};

// Independent romp_solve per response column on (optionally) standardized
// features.
LinearEncodingModel fit_voxelwise(const FeatureMatrix& features, const ResponseMatrix& responses,
                                  const RompConfig& config);

ResponseMatrix predict_linear(const LinearEncodingModel& model, const FeatureMatrix& features);

}  // namespace voxelforge
