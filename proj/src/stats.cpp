#include "voxelforge/stats.hpp"

#include "voxelforge/errors.hpp"
#include "voxelforge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace voxelforge {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Moments {
    double mean = 0;
    double ss = 0;  // sum of squared deviations
};

Moments moments(std::span<const double> x) {
    Moments m;
    for (double v : x) m.mean += v;
    m.mean /= static_cast<double>(x.size());
    for (double v : x) m.ss += (v - m.mean) * (v - m.mean);
    return m;
}

bool constant_from(const Moments& m, std::size_t n) {
    return m.ss == 0 || m.ss / static_cast<double>(n) <= 1e-24 * m.mean * m.mean;
}

// Centered, unit-norm copy of x.
std::vector<double> standardized(std::span<const double> x) {
    const Moments m = moments(x);
    const double inv = 1.0 / std::sqrt(m.ss);
    std::vector<double> z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = (x[i] - m.mean) * inv;
    return z;
}

std::vector<double> column(const ResponseMatrix& m, Index c) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    for (Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, c);
    return out;
}

// Half-credit fraction from counts, with the complement trick described in
// the header.
double half_credit(long wins, long losses, long ties) {
    const long total = wins + losses + ties;
    const long num_a = 2 * wins + ties;
    const long num_b = 2 * losses + ties;
    const double denom = 2.0 * static_cast<double>(total);
    if (num_a <= num_b) return static_cast<double>(num_a) / denom;
    return 1.0 - static_cast<double>(num_b) / denom;
}

}  // namespace

bool is_constant_series(std::span<const double> x) {
    if (x.empty()) return true;
    return constant_from(moments(x), x.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw SizeMismatch("pearson: series lengths differ (" + std::to_string(x.size()) +
                           " vs " + std::to_string(y.size()) + ")");
    }
    if (x.size() < 3) throw SizeMismatch("pearson: need at least 3 samples");
    const Moments mx = moments(x);
    const Moments my = moments(y);
    if (constant_from(mx, x.size()) || constant_from(my, y.size())) {
        throw ZeroVariance("pearson: constant series");
    }
    double cross = 0;
    for (std::size_t i = 0; i < x.size(); ++i) cross += (x[i] - mx.mean) * (y[i] - my.mean);
    const double r = cross / (std::sqrt(mx.ss) * std::sqrt(my.ss));
    return std::clamp(r, -1.0, 1.0);
}

double pearson(const Vector& x, const Vector& y) {
    return pearson(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                   std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

std::size_t AccuracyVector::defined_count() const {
    return static_cast<std::size_t>(std::count(defined.begin(), defined.end(), true));
}

double AccuracyVector::mean_defined() const {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (defined[i]) {
            sum += values[i];
            ++n;
        }
    }
    return n == 0 ? kNaN : sum / static_cast<double>(n);
}

AccuracyVector accuracy(const ResponseMatrix& measured, const ResponseMatrix& predicted) {
    if (measured.rows() != predicted.rows() || measured.cols() != predicted.cols()) {
        throw SizeMismatch("accuracy: measured and predicted shapes differ");
    }
    AccuracyVector out;
    const auto voxels = static_cast<std::size_t>(measured.cols());
    out.values.assign(voxels, kNaN);
    out.defined.assign(voxels, false);
    out.voxel_ids.resize(voxels);
    std::iota(out.voxel_ids.begin(), out.voxel_ids.end(), 0);
    for (Index v = 0; v < measured.cols(); ++v) {
        const auto m = column(measured, v);
        const auto p = column(predicted, v);
        try {
            out.values[static_cast<std::size_t>(v)] = pearson(m, p);
            out.defined[static_cast<std::size_t>(v)] = true;
        } catch (const ZeroVariance&) {
        }
    }
    return out;
}

double upper_order_statistic(std::vector<double> samples, double q) {
    if (samples.empty()) throw EmptyInput("order statistic of an empty sample");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    // tolerance keeps e.g. 0.999 * 1000 from rounding up to rank 1000
    auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, samples.size());
    return samples[rank - 1];
}

SignificanceResult randomization_threshold(const ResponseMatrix& measured,
                                           const ResponseMatrix& predicted, int shuffles,
                                           double p, Seed seed) {
    if (measured.rows() != predicted.rows() || measured.cols() != predicted.cols()) {
        throw SizeMismatch("randomization test: measured and predicted shapes differ");
    }
    if (!(p > 0 && p < 1)) throw InvalidConfig("p level must lie in (0, 1)");
    if (shuffles < 1 || static_cast<double>(shuffles) * p < 1.0 - 1e-9) {
        throw InvalidConfig("randomization test needs at least 1/p shuffles");
    }
    if (measured.rows() < 3) throw SizeMismatch("randomization test: need at least 3 samples");

    const auto voxels = static_cast<std::size_t>(measured.cols());
    const auto n = static_cast<std::size_t>(measured.rows());
    SignificanceResult out;
    out.p_level = p;
    out.null_samples_per_voxel = shuffles;
    out.per_voxel_threshold.assign(voxels, kNaN);
    std::vector<double> observed(voxels, kNaN);

    parallel_for(voxels, [&](std::size_t v) {
        const auto m = column(measured, static_cast<Index>(v));
        const auto pr = column(predicted, static_cast<Index>(v));
        if (is_constant_series(m) || is_constant_series(pr)) return;
        const auto zm = standardized(m);
        const auto zp = standardized(pr);
        double obs = 0;
        for (std::size_t i = 0; i < n; ++i) obs += zm[i] * zp[i];
        observed[v] = std::clamp(obs, -1.0, 1.0);

        std::mt19937_64 rng(derive_seed(seed, v));
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::vector<double> null(static_cast<std::size_t>(shuffles));
        for (auto& sample : null) {
            std::shuffle(perm.begin(), perm.end(), rng);
            double c = 0;
            for (std::size_t i = 0; i < n; ++i) c += zm[i] * zp[perm[i]];
            sample = c;
        }
        out.per_voxel_threshold[v] = upper_order_statistic(std::move(null), 1.0 - p);
    });

    out.threshold = -1.0;
    bool any = false;
    for (std::size_t v = 0; v < voxels; ++v) {
        if (std::isnan(out.per_voxel_threshold[v])) {
            out.excluded_voxels.push_back(static_cast<int>(v));
            continue;
        }
        any = true;
        out.threshold = std::max(out.threshold, out.per_voxel_threshold[v]);
    }
    if (!any) out.threshold = kNaN;

    out.significant.assign(voxels, false);
    out.significant_per_voxel.assign(voxels, false);
    for (std::size_t v = 0; v < voxels; ++v) {
        if (std::isnan(observed[v])) continue;
        out.significant[v] = observed[v] > out.threshold;
        out.significant_per_voxel[v] = observed[v] > out.per_voxel_threshold[v];
    }
    return out;
}

double advantage_fraction(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw SizeMismatch("advantage: accuracy vectors differ in length");
    if (a.empty()) throw NoEligibleVoxels("advantage: no voxels");
    long wins = 0, losses = 0, ties = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) ++wins;
        else if (a[i] < b[i]) ++losses;
        else ++ties;
    }
    return half_credit(wins, losses, ties);
}

AdvantageResult model_advantage(const AccuracyVector& a, const AccuracyVector& b,
                                double threshold, int permutations, Seed seed) {
    if (a.size() != b.size()) throw SizeMismatch("advantage: models cover different voxel sets");
    if (permutations < 1) throw InvalidConfig("advantage: permutations must be >= 1");

    // outcome per eligible voxel: +1 A wins, -1 B wins, 0 tie
    std::vector<int> outcome;
    for (std::size_t v = 0; v < a.size(); ++v) {
        if (!a.defined[v] || !b.defined[v]) continue;
        if (!(a.values[v] > threshold || b.values[v] > threshold)) continue;
        const double da = a.values[v];
        const double db = b.values[v];
        outcome.push_back(da > db ? 1 : (da < db ? -1 : 0));
    }
    if (outcome.empty()) throw NoEligibleVoxels("no voxel exceeds the threshold under either model");

    auto fraction = [](const std::vector<int>& signs, const std::vector<char>* flip) {
        long wins = 0, losses = 0, ties = 0;
        for (std::size_t i = 0; i < signs.size(); ++i) {
            int s = signs[i];
            if (flip != nullptr && (*flip)[i]) s = -s;
            if (s > 0) ++wins;
            else if (s < 0) ++losses;
            else ++ties;
        }
        return half_credit(wins, losses, ties);
    };

    AdvantageResult out;
    out.eligible_voxel_count = static_cast<int>(outcome.size());
    out.advantage_fraction = fraction(outcome, nullptr);

    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<char> flip(outcome.size());
    std::vector<double> deviations(static_cast<std::size_t>(permutations));
    for (auto& d : deviations) {
        for (auto& f : flip) f = coin(rng) ? 1 : 0;
        d = std::abs(fraction(outcome, &flip) - 0.5);
    }
    out.significance_band = upper_order_statistic(std::move(deviations), 0.95);
    out.significant = std::abs(out.advantage_fraction - 0.5) > out.significance_band;
    return out;
}

std::map<std::string, AccuracyCurve> sorted_curves(
    const std::map<std::string, AccuracyVector>& acc_per_model, double threshold) {
    std::map<std::string, AccuracyCurve> out;
    for (const auto& [model, acc] : acc_per_model) {
        AccuracyCurve curve;
        curve.voxel_count = static_cast<int>(acc.size());
        for (std::size_t v = 0; v < acc.size(); ++v) {
            if (acc.defined[v] && acc.values[v] > threshold) curve.accuracies.push_back(acc.values[v]);
        }
        std::sort(curve.accuracies.begin(), curve.accuracies.end(), std::greater<>());
        curve.significant_fraction =
            curve.voxel_count == 0
                ? 0.0
                : static_cast<double>(curve.accuracies.size()) / curve.voxel_count;
        out.emplace(model, std::move(curve));
    }
    return out;
}

}  // namespace voxelforge
