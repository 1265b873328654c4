#pragma once

#include "voxelforge/types.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace voxelforge {

// Pearson correlation of two equal-length series (length >= 3).
// Throws ZeroVariance if either series is constant, SizeMismatch otherwise.
double pearson(std::span<const double> x, std::span<const double> y);
double pearson(const Vector& x, const Vector& y);

// A series counts as constant when its variance is at rounding level
// relative to its squared mean (or exactly zero).
bool is_constant_series(std::span<const double> x);

struct AccuracyVector {
    std::vector<double> values;  // NaN where undefined
    std::vector<bool> defined;
    std::vector<int> voxel_ids;

    std::size_t size() const { return values.size(); }
    std::size_t defined_count() const;
    double mean_defined() const;
};

// Per-voxel Pearson over the rows (samples) of two aligned response
// matrices; constant voxels are flagged undefined.
AccuracyVector accuracy(const ResponseMatrix& measured, const ResponseMatrix& predicted);

struct SignificanceResult {
    double threshold = 0;   // global: max over voxels of the per-voxel quantile
    double p_level = 0;
    int null_samples_per_voxel = 0;
    std::vector<double> per_voxel_threshold;  // NaN for excluded voxels
    std::vector<bool> significant;             // C > global threshold
    std::vector<bool> significant_per_voxel;   // C > own null quantile
    std::vector<int> excluded_voxels;          // zero variance
};

// Builds a per-voxel null distribution of Pearson C by shuffling the
// measured/predicted pairing `shuffles` times (independent stream per voxel)
// and takes the order statistic at ceil((1 - p) * shuffles).
SignificanceResult randomization_threshold(const ResponseMatrix& measured,
                                           const ResponseMatrix& predicted,
                                           int shuffles = 1000, double p = 0.001,
                                           Seed seed = kDefaultSeed);

struct AdvantageResult {
    double advantage_fraction = 0.5;
    double significance_band = 0;
    bool significant = false;
    int eligible_voxel_count = 0;
};

// Fraction of eligible voxels (defined under both models and above the
// threshold under at least one) on which A beats B, ties half each, with a
// sign-flip permutation null.
AdvantageResult model_advantage(const AccuracyVector& a, const AccuracyVector& b,
                                double threshold, int permutations = 1000,
                                Seed seed = kDefaultSeed);

// Half-credit advantage of A over B on the eligible voxels. The smaller side
// is computed by division and the larger as its complement, so
// advantage(A, B) + advantage(B, A) == 1 holds exactly in floating point.
double advantage_fraction(std::span<const double> a, std::span<const double> b);

struct AccuracyCurve {
    std::vector<double> accuracies;  // descending, all > threshold
    double significant_fraction = 0;
    int voxel_count = 0;
};

std::map<std::string, AccuracyCurve> sorted_curves(
    const std::map<std::string, AccuracyVector>& acc_per_model, double threshold);

// Order statistic used for null quantiles: 1-based rank ceil(q * n).
double upper_order_statistic(std::vector<double> samples, double q);

}  // namespace voxelforge
