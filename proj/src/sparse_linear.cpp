#include "voxelforge/sparse_linear.hpp"

#include "voxelforge/errors.hpp"
#include "voxelforge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace voxelforge {

namespace {

// relative to the centered target norm
constexpr double kPruneTolerance = 1e-9;

// Among J (sorted by descending magnitude) pick the contiguous window whose
// entries are within a factor 2 of each other and whose energy is largest.
// Any comparable subset of a sorted list is contained in such a window, so
// scanning windows is exhaustive. Returns [begin, end).
std::pair<std::size_t, std::size_t> comparable_batch(const std::vector<double>& mags) {
    std::size_t best_begin = 0, best_end = 0;
    double best_energy = -1;
    std::size_t end = 0;
    double energy = 0;
    for (std::size_t begin = 0; begin < mags.size(); ++begin) {
        if (end < begin) {
            end = begin;
            energy = 0;
        }
        while (end < mags.size() && mags[begin] <= 2.0 * mags[end]) {
            energy += mags[end] * mags[end];
            ++end;
        }
        if (energy > best_energy) {
            best_energy = energy;
            best_begin = begin;
            best_end = end;
        }
        energy -= mags[begin] * mags[begin];
    }
    return {best_begin, best_end};
}

}  // namespace

void RompConfig::validate() const {
    if (max_sparsity < 1) throw InvalidConfig("ROMP max_sparsity must be >= 1");
    if (max_iterations < 1) throw InvalidConfig("ROMP max_iterations must be >= 1");
    if (!(residual_tolerance >= 0)) throw InvalidConfig("ROMP residual_tolerance must be >= 0");
    if (selection_size < 0) throw InvalidConfig("ROMP selection_size must be >= 0");
}

double SparseWeights::coefficient_for(Index feature) const {
    for (std::size_t i = 0; i < support.size(); ++i) {
        if (support[i] == feature) return coefficients[i];
    }
    return 0.0;
}

SparseWeights romp_solve(const FeatureMatrix& dictionary, const Vector& target,
                         const RompConfig& config, RompTrace* trace) {
    config.validate();
    const Index n = dictionary.rows();
    const Index p = dictionary.cols();
    if (n == 0) throw EmptyInput("ROMP: dictionary has no rows");
    if (target.size() != n) {
        throw SizeMismatch("ROMP: target length " + std::to_string(target.size()) +
                           " does not match dictionary rows " + std::to_string(n));
    }
    if (!target.allFinite()) throw NonFinite("ROMP: target contains non-finite values");

    const Vector col_mean = dictionary.colwise().mean().transpose();
    const double y_mean = target.mean();
    const Vector centered = target.array() - y_mean;
    const double target_norm = centered.norm();

    SparseWeights out;
    out.intercept = y_mean;
    if (trace != nullptr) {
        trace->initial_residual_norm = target_norm;
        trace->iterations.clear();
    }
    if (target_norm == 0 || p == 0) return out;

    const auto budget = static_cast<std::size_t>(config.max_sparsity);
    const auto selection = static_cast<std::size_t>(config.selection_size > 0 ? config.selection_size
                                                                             : config.max_sparsity);
    std::vector<char> in_support(static_cast<std::size_t>(p), 0);
    Vector residual = centered;
    Vector coef;
    double residual_norm = target_norm;
    std::vector<Index> order(static_cast<std::size_t>(p));

    for (int it = 0; it < config.max_iterations && out.support.size() < budget; ++it) {
        if (residual_norm <= config.residual_tolerance * target_norm) break;

        // correlations with the centered dictionary
        const Vector u = dictionary.transpose() * residual - col_mean * residual.sum();
        const double scale = u.cwiseAbs().maxCoeff();
        if (!(scale > 0)) break;

        order.clear();
        for (Index j = 0; j < p; ++j) {
            if (!in_support[static_cast<std::size_t>(j)] && std::abs(u(j)) > 1e-12 * scale) {
                order.push_back(j);
            }
        }
        if (order.empty()) break;
        const std::size_t take = std::min(selection, order.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                          order.end(), [&](Index a, Index b) {
                              const double ma = std::abs(u(a));
                              const double mb = std::abs(u(b));
                              return ma != mb ? ma > mb : a < b;
                          });
        order.resize(take);

        std::vector<double> mags(take);
        for (std::size_t i = 0; i < take; ++i) mags[i] = std::abs(u(order[i]));
        auto [begin, end] = comparable_batch(mags);
        end = std::min(end, begin + (budget - out.support.size()));
        if (!(mags[begin] <= 2.0 * mags[end - 1])) {
            throw RuntimeFailure("ROMP selected a batch violating the comparability condition");
        }

        RompIteration record;
        for (std::size_t i = begin; i < end; ++i) {
            out.support.push_back(order[i]);
            in_support[static_cast<std::size_t>(order[i])] = 1;
            record.batch.push_back(order[i]);
            record.batch_magnitude.push_back(mags[i]);
        }

        // least-squares refit on the centered support columns
        const auto k = static_cast<Index>(out.support.size());
        Matrix sub(n, k);
        for (Index c = 0; c < k; ++c) {
            const Index j = out.support[static_cast<std::size_t>(c)];
            sub.col(c) = dictionary.col(j).array() - col_mean(j);
        }
        Eigen::CompleteOrthogonalDecomposition<Matrix> cod(sub);
        if (cod.rank() < k) out.rank_deficient = true;
        coef = cod.solve(centered);
        residual = centered - sub * coef;
        residual_norm = residual.norm();
        record.residual_norm = residual_norm;
        if (trace != nullptr) trace->iterations.push_back(std::move(record));
    }

    // drop columns whose least-squares contribution is numerically zero (a
    // noiseless fit on a superset of the true support leaves exact zeros)
    if (coef.size() > 0) {
        std::vector<Index> kept;
        for (Index c = 0; c < coef.size(); ++c) {
            const Index j = out.support[static_cast<std::size_t>(c)];
            const double contribution =
                std::abs(coef(c)) * (dictionary.col(j).array() - col_mean(j)).matrix().norm();
            if (contribution > kPruneTolerance * target_norm) {
                kept.push_back(j);
            }
        }
        if (kept.size() < out.support.size()) {
            out.support = kept;
            const auto k = static_cast<Index>(kept.size());
            Matrix sub(n, k);
            for (Index c = 0; c < k; ++c) sub.col(c) = dictionary.col(kept[static_cast<std::size_t>(c)]).array() - col_mean(kept[static_cast<std::size_t>(c)]);
            coef = k > 0 ? Vector(Eigen::CompleteOrthogonalDecomposition<Matrix>(sub).solve(centered)) : Vector();
        }
    }

    out.coefficients.assign(coef.data(), coef.data() + coef.size());
    for (std::size_t i = 0; i < out.support.size(); ++i) {
        out.intercept -= out.coefficients[i] * col_mean(out.support[i]);
    }
    return out;
}

LinearEncodingModel fit_voxelwise(const FeatureMatrix& features, const ResponseMatrix& responses,
                                  const RompConfig& config) {
    config.validate();
    if (features.rows() != responses.rows()) {
        throw SizeMismatch("features have " + std::to_string(features.rows()) +
                           " samples, responses have " + std::to_string(responses.rows()));
    }
    if (!features.allFinite()) throw NonFinite("features contain non-finite values");
    LinearEncodingModel model;
    model.scaler = config.standardize ? FeatureScaler::fit(features)
                                      : FeatureScaler::identity(features.cols());
    model.voxels.resize(static_cast<std::size_t>(responses.cols()));
    if (responses.cols() == 0) return model;

    const FeatureMatrix dictionary = config.standardize ? model.scaler.apply(features) : features;
    parallel_for(model.voxels.size(), [&](std::size_t v) {
        try {
            model.voxels[v] = romp_solve(dictionary, responses.col(static_cast<Index>(v)), config);
        } catch (const VoxelError&) {
            throw;
        } catch (const Error& e) {
            throw VoxelError(e.what(), static_cast<std::ptrdiff_t>(v));
        }
    });
    return model;
}

ResponseMatrix predict_linear(const LinearEncodingModel& model, const FeatureMatrix& features) {
    if (features.cols() != model.feature_dim()) {
        throw SizeMismatch("model expects " + std::to_string(model.feature_dim()) +
                           " features, got " + std::to_string(features.cols()));
    }
    const Index n = features.rows();
    ResponseMatrix out(n, model.voxel_count());
    for (Index v = 0; v < model.voxel_count(); ++v) {
        const SparseWeights& w = model.voxels[static_cast<std::size_t>(v)];
        Vector col = Vector::Constant(n, w.intercept);
        for (std::size_t i = 0; i < w.support.size(); ++i) {
            const Index j = w.support[i];
            col += (w.coefficients[i] / model.scaler.scale(j)) *
                   (features.col(j).array() - model.scaler.mean(j)).matrix();
        }
        out.col(v) = col;
    }
    return out;
}

}  // namespace voxelforge
