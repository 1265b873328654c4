#include "voxelforge/errors.hpp"
#include "voxelforge/types.hpp"

#include <cmath>

namespace voxelforge {

FeatureScaler FeatureScaler::fit(const FeatureMatrix& features) {
    FeatureScaler s;
    const Index n = features.rows();
    s.mean = n > 0 ? Vector(features.colwise().mean().transpose()) : Vector::Zero(features.cols());
    s.scale = Vector::Ones(features.cols());
    if (n < 2) return s;
    for (Index j = 0; j < features.cols(); ++j) {
        const double sd =
            std::sqrt((features.col(j).array() - s.mean(j)).square().sum() / static_cast<double>(n));
        // constant columns keep unit scale; they standardize to zero
        if (sd > 1e-12 * std::max(1.0, std::abs(s.mean(j)))) s.scale(j) = sd;
    }
    return s;
}

FeatureScaler FeatureScaler::identity(Index dim) {
    return {Vector::Zero(dim), Vector::Ones(dim)};
}

FeatureMatrix FeatureScaler::apply(const FeatureMatrix& features) const {
    if (features.cols() != dim()) {
        throw SizeMismatch("feature matrix has " + std::to_string(features.cols()) +
                           " columns, scaler expects " + std::to_string(dim()));
    }
    return ((features.rowwise() - mean.transpose()).array().rowwise() /
            scale.transpose().array())
        .matrix();
}

}  // namespace voxelforge
