#pragma once

#include "voxelforge/types.hpp"

namespace voxelforge {

// Trainable head on top of frozen features:
//   r_p = W2 * relu(W1 * x + b1) + b2
struct MlpHeadParams {
    Matrix w1;  // hidden x feature_dim
    Vector b1;  // hidden
    Matrix w2;  // voxels x hidden
    Vector b2;  // voxels

    Index feature_dim() const { return w1.cols(); }
    Index hidden() const { return w1.rows(); }
    Index voxels() const { return w2.rows(); }

    // ||W1||_F^2 + ||W2||_F^2 (biases are not penalized)
    double weight_norm_sq() const;
    bool all_finite() const;
    void check_consistent() const;

    static MlpHeadParams zeros(Index feature_dim, Index hidden, Index voxels);
    static MlpHeadParams zeros_like(const MlpHeadParams& other);
};

struct TrainConfig {
    int hidden_size = 100;
    double lambda = 1e-3;
    double learning_rate = 1e-3;
    int max_epochs = 200;
    int patience = 10;
    int batch_size = 64;
    Seed seed = kDefaultSeed;
    double mu_threshold = 0.27;

    void validate() const;
};

struct VoxelWeights {
    Vector mu;  // each in [0, 1]
};

// How constant series are treated inside the correlation term.
enum class VarianceMode {
    // ZeroVariance is thrown, tagged with the voxel index
    Strict,
    // a voxel whose predicted or measured variance is below 1e-12 contributes
    // C_v = 0 and no gradient
    Training,
};

MlpHeadParams init_params(Index feature_dim, Index voxels, const TrainConfig& config);

// samples x feature_dim -> samples x voxels
ResponseMatrix forward(const MlpHeadParams& params, const FeatureMatrix& features);

// -sum_v mu_v * C_v(measured_v, predicted_v) + lambda * (||W1||^2 + ||W2||^2)
double loss(const MlpHeadParams& params, const FeatureMatrix& features,
            const ResponseMatrix& measured, const VoxelWeights& mu, double lambda,
            VarianceMode mode = VarianceMode::Strict);

MlpHeadParams loss_gradient(const MlpHeadParams& params, const FeatureMatrix& features,
                            const ResponseMatrix& measured, const VoxelWeights& mu,
                            double lambda, VarianceMode mode = VarianceMode::Strict);

struct LossEvaluation {
    double loss = 0;
    Vector correlations;  // per voxel; 0 for degenerate voxels in training mode
    MlpHeadParams gradient;
};

// Loss, per-voxel correlations and gradient from a single forward pass.
LossEvaluation evaluate_loss(const MlpHeadParams& params, const FeatureMatrix& features,
                             const ResponseMatrix& measured, const VoxelWeights& mu,
                             double lambda, VarianceMode mode, bool with_gradient = true);

struct AdamState {
    MlpHeadParams first_moment;
    MlpHeadParams second_moment;
    long step = 0;

    static AdamState for_params(const MlpHeadParams& params);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

// One bias-corrected Adam update, in place.
void adam_step(MlpHeadParams& params, const MlpHeadParams& gradient, AdamState& state,
               double learning_rate);

}  // namespace voxelforge
