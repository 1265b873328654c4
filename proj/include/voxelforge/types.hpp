#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace voxelforge {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// samples x features
using FeatureMatrix = Matrix;
// samples x voxels; measured (r_m) or predicted (r_p)
using ResponseMatrix = Matrix;
using FeatureVector = Vector;

using Seed = std::uint64_t;

// Seed used whenever the caller does not pass one.
inline constexpr Seed kDefaultSeed = 1750;

// Derives an independent stream seed from a master seed and a stream id
// (voxel index, layer id, ...). splitmix64 finalizer.
constexpr Seed derive_seed(Seed master, std::uint64_t stream) noexcept {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Per-feature affine standardization fitted on training rows.
struct FeatureScaler {
    Vector mean;
    Vector scale;  // strictly positive

    Index dim() const { return mean.size(); }

    static FeatureScaler fit(const FeatureMatrix& features);
    static FeatureScaler identity(Index dim);

    FeatureMatrix apply(const FeatureMatrix& features) const;
};

}  // namespace voxelforge
