#include "oracles/oracles.hpp"
#include "voxelforge/errors.hpp"
#include "voxelforge/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace voxelforge;

namespace {

AccuracyVector make_acc(std::vector<double> values) {
    AccuracyVector a;
    a.values = std::move(values);
    a.defined.assign(a.values.size(), true);
    a.voxel_ids.resize(a.values.size());
    std::iota(a.voxel_ids.begin(), a.voxel_ids.end(), 0);
    return a;
}

double global_threshold(Index n, int voxels, std::uint64_t seed) {
    const Matrix m = oracle::gaussian(n, voxels, seed);
    const Matrix p = oracle::gaussian(n, voxels, seed + 1);
    return randomization_threshold(m, p, 1000, 0.001, seed).threshold;
}

}  // namespace

TEST_CASE("pearson examples") {
    const std::vector<double> x{1, 2, 3, 4};
    CHECK(pearson(x, x) == doctest::Approx(1.0).epsilon(1e-15));
    const std::vector<double> neg{-1, -2, -3, -4};
    CHECK(pearson(x, neg) == doctest::Approx(-1.0).epsilon(1e-15));
    const std::vector<double> a{1, 2, 3, 4, 5}, b{2, 1, 4, 3, 5};
    CHECK(pearson(a, b) == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(pearson(a, b) == doctest::Approx(oracle::pearson(a, b)).epsilon(1e-14));
}

TEST_CASE("pearson errors") {
    const std::vector<double> c{2, 2, 2, 2}, x{1, 2, 3, 4};
    CHECK_THROWS_AS(pearson(c, x), ZeroVariance);
    CHECK_THROWS_AS(pearson(x, c), ZeroVariance);
    const std::vector<double> three{1, 2, 3};
    CHECK_THROWS_AS(pearson(x, three), SizeMismatch);
    const std::vector<double> two{1, 2};
    CHECK_THROWS_AS(pearson(two, two), DataError);
}

TEST_CASE("pearson is symmetric and affine invariant") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n01;
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x(50), y(50);
        for (auto& v : x) v = n01(rng);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5 * x[i] + n01(rng);
        const double r = pearson(x, y);
        CHECK(pearson(y, x) == r);
        std::vector<double> ax(x), ay(y);
        for (auto& v : ax) v = 4.5 * v - 30;
        for (auto& v : ay) v = 0.01 * v + 7;
        CHECK(std::fabs(pearson(ax, y) - r) <= 1e-10);
        CHECK(std::fabs(pearson(x, ay) - r) <= 1e-10);
    }
}

TEST_CASE("accuracy: identity, shuffled null, undefined voxels") {
    const Matrix m = oracle::gaussian(120, 40, 9);
    const AccuracyVector same = accuracy(m, m);
    for (double v : same.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<Index> perm(120);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(4);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(120, 40);
    for (Index r = 0; r < 120; ++r) shuffled.row(r) = m.row(perm[static_cast<std::size_t>(r)]);
    const AccuracyVector null = accuracy(m, shuffled);
    double mean_abs = 0;
    for (double v : null.values) mean_abs += std::fabs(v);
    CHECK(mean_abs / 40 < 0.1);

    Matrix pred = m;
    pred.col(7).setConstant(3.0);
    const AccuracyVector acc = accuracy(m, pred);
    for (std::size_t v = 0; v < acc.size(); ++v) CHECK(acc.defined[v] == (v != 7));
    CHECK(std::isnan(acc.values[7]));
    CHECK(acc.defined_count() == 39);
    CHECK(acc.mean_defined() == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(accuracy(m, m.leftCols(3)), SizeMismatch);
}

TEST_CASE("randomization threshold at 120 samples lands near 0.27") {
    const double t = global_threshold(120, 2, kDefaultSeed);
    CHECK(t >= 0.24);
    CHECK(t <= 0.31);
}

TEST_CASE("randomization threshold at 30 samples and strict ordering in n") {
    const double t30 = global_threshold(30, 3, kDefaultSeed);
    CHECK(std::fabs(t30 - 0.55) <= 0.06);
    const double t120 = global_threshold(120, 3, kDefaultSeed);
    const double t480 = global_threshold(480, 3, kDefaultSeed);
    CHECK(t30 > t120);
    CHECK(t120 > t480);
}

TEST_CASE("per-voxel null quantiles average to the Fisher-z value") {
    for (int n : {30, 120}) {
        double sum = 0;
        for (std::uint64_t k = 0; k < 40; ++k) sum += global_threshold(n, 1, 500 + 7 * k);
        CHECK(std::fabs(sum / 40 - oracle::fisher_threshold(n, 0.001)) <= 0.03);
    }
}

TEST_CASE("randomization: perfect predictions are all significant, constant voxels excluded") {
    Matrix m = oracle::gaussian(60, 6, 2);
    Matrix p = m;
    p.col(4).setConstant(1.0);
    const SignificanceResult r = randomization_threshold(m, p, 1000, 0.001, 8);
    CHECK(r.null_samples_per_voxel == 1000);
    CHECK(r.p_level == 0.001);
    CHECK(r.excluded_voxels == std::vector<int>{4});
    for (std::size_t v = 0; v < 6; ++v) {
        CHECK(r.significant[v] == (v != 4));
        if (v != 4) CHECK(r.per_voxel_threshold[v] <= r.threshold);
    }
    CHECK(std::isnan(r.per_voxel_threshold[4]));
    CHECK_THROWS_AS(randomization_threshold(m, m, 999, 0.001, 1), InvalidConfig);
}

TEST_CASE("randomization results are reproducible") {
    const Matrix m = oracle::gaussian(80, 5, 1), p = oracle::gaussian(80, 5, 2);
    const SignificanceResult a = randomization_threshold(m, p, 1000, 0.001, 44);
    const SignificanceResult b = randomization_threshold(m, p, 1000, 0.001, 44);
    CHECK(a.threshold == b.threshold);
    CHECK(a.per_voxel_threshold == b.per_voxel_threshold);
    CHECK(a.significant == b.significant);
    const SignificanceResult c = randomization_threshold(m, p, 1000, 0.001, 45);
    CHECK(c.per_voxel_threshold != a.per_voxel_threshold);
}

TEST_CASE("upper order statistic uses rank ceil(q n)") {
    std::vector<double> s(1000);
    std::iota(s.begin(), s.end(), 1.0);
    std::shuffle(s.begin(), s.end(), std::mt19937_64(1));
    CHECK(upper_order_statistic(s, 0.999) == 999.0);
    CHECK(upper_order_statistic(s, 0.5) == 500.0);
    CHECK(upper_order_statistic({3.0, 1.0, 2.0}, 0.9) == 3.0);
}

TEST_CASE("model advantage examples") {
    const AccuracyVector a = make_acc({0.5, 0.6, 0.4, 0.1, 0.35});
    const AccuracyVector b = make_acc({0.3, 0.2, 0.1, 0.05, 0.3});
    const AdvantageResult r = model_advantage(a, b, 0.27, 1000, 3);
    CHECK(r.eligible_voxel_count == 4);
    CHECK(r.advantage_fraction == 1.0);

    const AdvantageResult tie = model_advantage(a, a, 0.27, 1000, 3);
    CHECK(tie.advantage_fraction == 0.5);
    CHECK_FALSE(tie.significant);

    CHECK_THROWS_AS(model_advantage(make_acc({0.1, 0.2}), make_acc({0.0, 0.2}), 0.27), NoEligibleVoxels);
    CHECK_THROWS_AS(model_advantage(make_acc({0.5}), make_acc({0.5, 0.4}), 0.27), SizeMismatch);
}

TEST_CASE("undefined accuracies are not eligible") {
    AccuracyVector a = make_acc({0.5, 0.9, 0.6});
    AccuracyVector b = make_acc({0.4, std::nan(""), 0.7});
    b.defined[1] = false;
    const AdvantageResult r = model_advantage(a, b, 0.27, 1000, 1);
    CHECK(r.eligible_voxel_count == 2);
    CHECK(r.advantage_fraction == 0.5);
}

TEST_CASE("advantage is exactly antisymmetric") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-0.2, 0.8);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> a(37), b(37);
        for (auto& v : a) v = std::round(u(rng) * 20) / 20;  // coarse grid forces ties
        for (auto& v : b) v = std::round(u(rng) * 20) / 20;
        CHECK(advantage_fraction(a, b) + advantage_fraction(b, a) == 1.0);
        const AdvantageResult ab = model_advantage(make_acc(a), make_acc(b), 0.27, 200, 9);
        const AdvantageResult ba = model_advantage(make_acc(b), make_acc(a), 0.27, 200, 9);
        CHECK(ab.advantage_fraction + ba.advantage_fraction == 1.0);
    }
}

TEST_CASE("advantage band for ~1000 eligible voxels is about 3%") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> n01;
    std::vector<double> a(1000), b(1000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double base = 0.5 + 0.1 * n01(rng);
        a[i] = base + 0.05 * n01(rng);
        b[i] = base + 0.05 * n01(rng);
    }
    const AdvantageResult r = model_advantage(make_acc(a), make_acc(b), 0.27, 1000, 7);
    CHECK(r.eligible_voxel_count >= 990);
    CHECK(std::fabs(r.significance_band - 0.03) <= 0.01);
    CHECK(std::fabs(r.significance_band - oracle::binomial_band(r.eligible_voxel_count)) <= 0.01);
    const AdvantageResult again = model_advantage(make_acc(a), make_acc(b), 0.27, 1000, 7);
    CHECK(again.significance_band == r.significance_band);
    CHECK(again.significant == r.significant);
}

TEST_CASE("sorted curves") {
    const auto curves = sorted_curves({{"m", make_acc({0.5, 0.1, 0.3})}, {"low", make_acc({0.1, 0.2})}}, 0.27);
    CHECK(curves.at("m").accuracies == std::vector<double>{0.5, 0.3});
    CHECK(curves.at("m").significant_fraction == doctest::Approx(2.0 / 3));
    CHECK(curves.at("m").voxel_count == 3);
    CHECK(curves.at("low").accuracies.empty());
    CHECK(curves.at("low").significant_fraction == 0.0);
}
