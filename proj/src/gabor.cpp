#include "voxelforge/gabor.hpp"

#include "voxelforge/errors.hpp"
#include "voxelforge/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace voxelforge {

namespace {

// Envelope support radius in sigmas; the DC correction below is computed
// on the truncated window so filters stay exactly zero-mean.
constexpr double kSupportSigmas = 3.0;

GaborWavelet make_wavelet(const GaborConfig& config, double frequency, double orientation,
                          double cx, double cy, Phase phase) {
    const int n = config.image_size;
    const double sigma = config.envelope_ratio / frequency;  // FOV units
    const double radius_px = kSupportSigmas * sigma * n;

    GaborWavelet w;
    w.frequency = frequency;
    w.orientation = orientation;
    w.center_x = cx;
    w.center_y = cy;
    w.phase = phase;

    // pixel (r, c) sits at ((c + 0.5) / n, (r + 0.5) / n)
    const double center_col = cx * n - 0.5;
    const double center_row = cy * n - 0.5;
    const int c0 = std::max(0, static_cast<int>(std::ceil(center_col - radius_px)));
    const int c1 = std::min(n - 1, static_cast<int>(std::floor(center_col + radius_px)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(center_row - radius_px)));
    const int r1 = std::min(n - 1, static_cast<int>(std::floor(center_row + radius_px)));
    w.row0 = r0;
    w.col0 = c0;
    w.rows = r1 - r0 + 1;
    w.cols = c1 - c0 + 1;

    const double cos_t = std::cos(orientation);
    const double sin_t = std::sin(orientation);
    const double two_pi_f = 2.0 * std::numbers::pi * frequency;
    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);

    std::vector<double> envelope(static_cast<std::size_t>(w.rows) * w.cols);
    std::vector<double> carrier(envelope.size());
    double env_sum = 0;
    double env_carrier_sum = 0;
    for (int r = 0; r < w.rows; ++r) {
        const double dy = (r0 + r + 0.5) / n - cy;
        for (int c = 0; c < w.cols; ++c) {
            const double dx = (c0 + c + 0.5) / n - cx;
            const double along = dx * cos_t + dy * sin_t;
            const double e = std::exp(-(dx * dx + dy * dy) * inv_two_sigma_sq);
            const double k = phase == Phase::Even ? std::cos(two_pi_f * along)
                                                  : std::sin(two_pi_f * along);
            const std::size_t i = static_cast<std::size_t>(r) * w.cols + c;
            envelope[i] = e;
            carrier[i] = k;
            env_sum += e;
            env_carrier_sum += e * k;
        }
    }

    // Morlet-style correction: subtract a scaled envelope to remove DC.
    const double offset = env_carrier_sum / env_sum;
    w.taps.resize(envelope.size());
    double norm_sq = 0;
    for (std::size_t i = 0; i < envelope.size(); ++i) {
        w.taps[i] = envelope[i] * (carrier[i] - offset);
        norm_sq += w.taps[i] * w.taps[i];
    }
    if (norm_sq > 0) {
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (double& t : w.taps) t *= inv;
    }
    return w;
}

// Border clipping breaks the even/odd quadrature relation. Mix the pair with
// T = (M M^T)^(-1/2), where M maps (cos phi, sin phi) of a grating at the
// pair's own frequency and orientation to the two responses, so that grating
// gets a phase-independent energy. Both filters stay zero-mean; the pair is
// then scaled to unit RMS norm (individual norms differ only when clipped).
void balance_pair(QuadraturePair& pair, int n) {
    GaborWavelet& e = pair.even;
    GaborWavelet& o = pair.odd;
    const double kx = 2.0 * std::numbers::pi * e.frequency * std::cos(e.orientation);
    const double ky = 2.0 * std::numbers::pi * e.frequency * std::sin(e.orientation);
    double m[2][2] = {{0, 0}, {0, 0}};
    std::size_t i = 0;
    for (int r = 0; r < e.rows; ++r) {
        const double y = (e.row0 + r + 0.5) / n;
        for (int c = 0; c < e.cols; ++c, ++i) {
            const double x = (e.col0 + c + 0.5) / n;
            const double cs = std::cos(kx * x + ky * y);
            const double sn = std::sin(kx * x + ky * y);
            m[0][0] += e.taps[i] * cs;
            m[0][1] -= e.taps[i] * sn;
            m[1][0] += o.taps[i] * cs;
            m[1][1] -= o.taps[i] * sn;
        }
    }
    // G = M M^T, symmetric 2x2
    const double a = m[0][0] * m[0][0] + m[0][1] * m[0][1];
    const double b = m[0][0] * m[1][0] + m[0][1] * m[1][1];
    const double d = m[1][0] * m[1][0] + m[1][1] * m[1][1];
    const double det = a * d - b * b;
    if (!(det > 1e-12 * (a + d) * (a + d))) return;
    // G^(-1/2) via the 2x2 identity sqrt(G) = (G + sqrt(det) I) / t
    const double root_det = std::sqrt(det);
    const double t = std::sqrt(a + d + 2.0 * root_det);
    const double s00 = (a + root_det) / t, s01 = b / t, s11 = (d + root_det) / t;
    const double sdet = s00 * s11 - s01 * s01;
    const double t00 = s11 / sdet, t01 = -s01 / sdet, t11 = s00 / sdet;
    double norm_sq = 0;
    for (std::size_t k = 0; k < e.taps.size(); ++k) {
        const double ev = e.taps[k], ov = o.taps[k];
        e.taps[k] = t00 * ev + t01 * ov;
        o.taps[k] = t01 * ev + t11 * ov;
        norm_sq += e.taps[k] * e.taps[k] + o.taps[k] * o.taps[k];
    }
    const double scale = std::sqrt(2.0 / norm_sq);
    for (double& v : e.taps) v *= scale;
    for (double& v : o.taps) v *= scale;
}

void check_image(const StimulusImage& image, int image_size) {
    if (image.rows() != image_size || image.cols() != image_size) {
        throw SizeMismatch("image is " + std::to_string(image.rows()) + "x" +
                           std::to_string(image.cols()) + ", bank expects " +
                           std::to_string(image_size) + "x" + std::to_string(image_size));
    }
    if (!image.allFinite()) throw NonFinite("image contains non-finite pixels");
}

}  // namespace

void GaborConfig::validate() const {
    if (image_size < 1) throw InvalidConfig("image_size must be positive");
    if (frequencies.empty()) throw InvalidConfig("at least one frequency is required");
    if (orientations_count < 1) throw InvalidConfig("orientations_count must be >= 1");
    if (!(envelope_ratio > 0)) throw InvalidConfig("envelope_ratio must be positive");
    if (!(grid_multiplier > 0)) throw InvalidConfig("grid_multiplier must be positive");
    for (std::size_t i = 0; i < frequencies.size(); ++i) {
        if (!std::isfinite(frequencies[i]) || frequencies[i] < 1.0) {
            throw InvalidConfig("frequencies must be >= 1 cycle/FOV");
        }
        if (i > 0 && frequencies[i] <= frequencies[i - 1]) {
            throw InvalidConfig("frequencies must be strictly increasing");
        }
    }
    if (2.0 * frequencies.back() > image_size) {
        throw NyquistViolation("frequency " + std::to_string(frequencies.back()) +
                               " cycles/FOV exceeds Nyquist limit of a " +
                               std::to_string(image_size) + "-pixel image");
    }
}

int GaborConfig::grid_size(double frequency) const {
    return std::max(1, static_cast<int>(std::lround(frequency * grid_multiplier)));
}

double GaborWavelet::peak() const {
    double m = 0;
    for (double t : taps) m = std::max(m, std::abs(t));
    return m;
}

double GaborWavelet::sum() const {
    double s = 0;
    for (double t : taps) s += t;
    return s;
}

double GaborWavelet::at(int r, int c) const {
    const int lr = r - row0;
    const int lc = c - col0;
    if (lr < 0 || lc < 0 || lr >= rows || lc >= cols) return 0.0;
    return taps[static_cast<std::size_t>(lr) * cols + lc];
}

double GaborWavelet::respond(const StimulusImage& image) const {
    double acc = 0;
    const double* tap = taps.data();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) acc += *tap++ * image(row0 + r, col0 + c);
    }
    return acc;
}

GaborBank::GaborBank(GaborConfig config) : config_(std::move(config)) {
    config_.validate();
    const int orientations = config_.orientations_count;
    for (std::size_t fi = 0; fi < config_.frequencies.size(); ++fi) {
        const double f = config_.frequencies[fi];
        const int grid = config_.grid_size(f);
        for (int k = 0; k < orientations; ++k) {
            const double theta = k * std::numbers::pi / orientations;
            const int channel = static_cast<int>(fi) * orientations + k;
            for (int gy = 0; gy < grid; ++gy) {
                for (int gx = 0; gx < grid; ++gx) {
                    const double cx = (gx + 0.5) / grid;
                    const double cy = (gy + 0.5) / grid;
                    QuadraturePair pair{make_wavelet(config_, f, theta, cx, cy, Phase::Even),
                                        make_wavelet(config_, f, theta, cx, cy, Phase::Odd)};
                    balance_pair(pair, config_.image_size);
                    pairs_.push_back(std::move(pair));
                    feature_channel_.push_back(channel);
                }
            }
        }
    }
    if (config_.dc_channel) feature_channel_.push_back(-1);
}

Index GaborBank::feature_dim() const {
    return static_cast<Index>(feature_channel_.size());
}

std::vector<std::pair<double, double>> GaborBank::channels() const {
    std::vector<std::pair<double, double>> out;
    for (double f : config_.frequencies) {
        for (int k = 0; k < config_.orientations_count; ++k) {
            out.emplace_back(f, k * std::numbers::pi / config_.orientations_count);
        }
    }
    return out;
}

GaborBank build_bank(const GaborConfig& config) {
    return GaborBank(config);
}

FeatureVector extract_features(const StimulusImage& image, const GaborBank& bank) {
    check_image(image, bank.config().image_size);
    FeatureVector out(bank.feature_dim());
    const auto pairs = bank.pairs();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const double e = pairs[i].even.respond(image);
        const double o = pairs[i].odd.respond(image);
        out(static_cast<Index>(i)) = std::sqrt(e * e + o * o);
    }
    if (bank.config().dc_channel) out(out.size() - 1) = image.mean();
    return out;
}

FeatureMatrix extract_batch(std::span<const StimulusImage> images, const GaborBank& bank) {
    for (const auto& image : images) check_image(image, bank.config().image_size);
    FeatureMatrix out(static_cast<Index>(images.size()), bank.feature_dim());
    parallel_for(images.size(), [&](std::size_t i) {
        out.row(static_cast<Index>(i)) = extract_features(images[i], bank).transpose();
    });
    return out;
}

}  // namespace voxelforge
