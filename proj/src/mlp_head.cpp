#include "voxelforge/mlp_head.hpp"

#include "voxelforge/errors.hpp"
#include "voxelforge/stats.hpp"

#include <cmath>
#include <random>

namespace voxelforge {

namespace {

constexpr double kTrainingVarianceFloor = 1e-12;

void check_inputs(const MlpHeadParams& params, const FeatureMatrix& features,
                  const ResponseMatrix& measured, const VoxelWeights& mu) {
    if (features.cols() != params.feature_dim()) {
        throw SizeMismatch("head expects " + std::to_string(params.feature_dim()) +
                           " features, got " + std::to_string(features.cols()));
    }
    if (measured.rows() != features.rows() || measured.cols() != params.voxels()) {
        throw SizeMismatch("measured responses do not match features/voxels");
    }
    if (mu.mu.size() != params.voxels()) throw SizeMismatch("mu length differs from voxel count");
    if (features.rows() < 3) throw SizeMismatch("correlation loss needs at least 3 samples");
}

}  // namespace

double MlpHeadParams::weight_norm_sq() const {
    return w1.squaredNorm() + w2.squaredNorm();
}

bool MlpHeadParams::all_finite() const {
    return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

void MlpHeadParams::check_consistent() const {
    if (b1.size() != w1.rows() || w2.cols() != w1.rows() || b2.size() != w2.rows()) {
        throw SizeMismatch("head parameter blocks have inconsistent shapes");
    }
}

MlpHeadParams MlpHeadParams::zeros(Index feature_dim, Index hidden, Index voxels) {
    return {Matrix::Zero(hidden, feature_dim), Vector::Zero(hidden), Matrix::Zero(voxels, hidden),
            Vector::Zero(voxels)};
}

MlpHeadParams MlpHeadParams::zeros_like(const MlpHeadParams& other) {
    return zeros(other.feature_dim(), other.hidden(), other.voxels());
}

void TrainConfig::validate() const {
    if (hidden_size < 1) throw InvalidConfig("hidden_size must be >= 1");
    if (!(lambda >= 0)) throw InvalidConfig("lambda must be >= 0");
    if (!(learning_rate > 0)) throw InvalidConfig("learning_rate must be > 0");
    if (max_epochs < 1) throw InvalidConfig("max_epochs must be >= 1");
    if (patience < 1) throw InvalidConfig("patience must be >= 1");
    if (batch_size < 3) throw InvalidConfig("batch_size must be >= 3");
    if (!(mu_threshold > 0)) throw InvalidConfig("mu_threshold must be > 0");
}

MlpHeadParams init_params(Index feature_dim, Index voxels, const TrainConfig& config) {
    if (feature_dim < 1 || voxels < 1 || config.hidden_size < 1) {
        throw InvalidConfig("head dimensions must be >= 1");
    }
    auto params = MlpHeadParams::zeros(feature_dim, config.hidden_size, voxels);
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(config.hidden_size));
    for (Index i = 0; i < params.w1.size(); ++i) params.w1.data()[i] = s1 * normal(rng);
    for (Index i = 0; i < params.w2.size(); ++i) params.w2.data()[i] = s2 * normal(rng);
    return params;
}

ResponseMatrix forward(const MlpHeadParams& params, const FeatureMatrix& features) {
    params.check_consistent();
    if (features.cols() != params.feature_dim()) {
        throw SizeMismatch("head expects " + std::to_string(params.feature_dim()) +
                           " features, got " + std::to_string(features.cols()));
    }
    const Matrix hidden =
        ((features * params.w1.transpose()).rowwise() + params.b1.transpose()).cwiseMax(0.0);
    return (hidden * params.w2.transpose()).rowwise() + params.b2.transpose();
}

LossEvaluation evaluate_loss(const MlpHeadParams& params, const FeatureMatrix& features,
                             const ResponseMatrix& measured, const VoxelWeights& mu,
                             double lambda, VarianceMode mode, bool with_gradient) {
    params.check_consistent();
    check_inputs(params, features, measured, mu);
    const Index n = features.rows();
    const Index voxels = params.voxels();

    const Matrix pre = (features * params.w1.transpose()).rowwise() + params.b1.transpose();
    const Matrix hidden = pre.cwiseMax(0.0);
    const Matrix predicted = (hidden * params.w2.transpose()).rowwise() + params.b2.transpose();

    LossEvaluation out;
    out.correlations = Vector::Zero(voxels);
    Matrix d_pred = Matrix::Zero(n, voxels);
    double data_term = 0;

    for (Index v = 0; v < voxels; ++v) {
        const Vector mc = measured.col(v).array() - measured.col(v).mean();
        const Vector pc = predicted.col(v).array() - predicted.col(v).mean();
        const double ss_m = mc.squaredNorm();
        const double ss_p = pc.squaredNorm();

        if (mode == VarianceMode::Strict) {
            const Vector m_col = measured.col(v);
            const Vector p_col = predicted.col(v);
            if (is_constant_series({m_col.data(), static_cast<std::size_t>(n)}) ||
                is_constant_series({p_col.data(), static_cast<std::size_t>(n)})) {
                throw ZeroVariance("voxel " + std::to_string(v) + " has a constant series",
                                   static_cast<std::ptrdiff_t>(v));
            }
        } else if (ss_m / n < kTrainingVarianceFloor || ss_p / n < kTrainingVarianceFloor) {
            continue;
        }

        const double norm_m = std::sqrt(ss_m);
        const double norm_p = std::sqrt(ss_p);
        const double c = mc.dot(pc) / (norm_m * norm_p);
        out.correlations(v) = c;
        data_term += mu.mu(v) * c;
        if (with_gradient && mu.mu(v) != 0) {
            // dC/dp = mc / (|mc||pc|) - C * pc / |pc|^2
            d_pred.col(v) = -mu.mu(v) * (mc / (norm_m * norm_p) - (c / ss_p) * pc);
        }
    }

    out.loss = -data_term + lambda * params.weight_norm_sq();
    if (!with_gradient) return out;

    MlpHeadParams& g = out.gradient;
    g.w2 = d_pred.transpose() * hidden + 2.0 * lambda * params.w2;
    g.b2 = d_pred.colwise().sum().transpose();
    const Matrix d_hidden = d_pred * params.w2;
    // relu subgradient at 0 taken as 0
    const Matrix d_pre = (pre.array() > 0.0).select(d_hidden, 0.0);
    g.w1 = d_pre.transpose() * features + 2.0 * lambda * params.w1;
    g.b1 = d_pre.colwise().sum().transpose();
    return out;
}

double loss(const MlpHeadParams& params, const FeatureMatrix& features,
            const ResponseMatrix& measured, const VoxelWeights& mu, double lambda,
            VarianceMode mode) {
    return evaluate_loss(params, features, measured, mu, lambda, mode, false).loss;
}

MlpHeadParams loss_gradient(const MlpHeadParams& params, const FeatureMatrix& features,
                            const ResponseMatrix& measured, const VoxelWeights& mu,
                            double lambda, VarianceMode mode) {
    return evaluate_loss(params, features, measured, mu, lambda, mode, true).gradient;
}

AdamState AdamState::for_params(const MlpHeadParams& params) {
    return {MlpHeadParams::zeros_like(params), MlpHeadParams::zeros_like(params), 0};
}

void adam_step(MlpHeadParams& params, const MlpHeadParams& gradient, AdamState& state,
               double learning_rate) {
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(kAdamBeta1, t);
    const double correction2 = 1.0 - std::pow(kAdamBeta2, t);

    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        if (p.size() != g.size()) throw SizeMismatch("gradient shape differs from parameters");
        m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
        v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
        p.array() -= learning_rate * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + kAdamEpsilon);
    };
    update(params.w1, gradient.w1, state.first_moment.w1, state.second_moment.w1);
    update(params.b1, gradient.b1, state.first_moment.b1, state.second_moment.b1);
    update(params.w2, gradient.w2, state.first_moment.w2, state.second_moment.w2);
    update(params.b2, gradient.b2, state.first_moment.b2, state.second_moment.b2);
}

}  // namespace voxelforge
