#pragma once

#include "voxelforge/types.hpp"

#include <span>
#include <utility>
#include <vector>

namespace voxelforge {

// Grayscale stimulus, image_size x image_size, values in [0, 1].
using StimulusImage = Matrix;

struct GaborConfig {
    int image_size = 128;
    // cycles per field of view, strictly increasing
    std::vector<double> frequencies{1, 2, 4, 8, 16, 32};
    int orientations_count = 8;
    // Gaussian sigma as a fraction of the carrier wavelength
    double envelope_ratio = 0.5;
    // frequency f gets round(f * grid_multiplier) centers per side
    double grid_multiplier = 1.0;
    // append mean luminance as one extra feature
    bool dc_channel = false;

    // Throws InvalidConfig, or NyquistViolation when the top frequency
    // exceeds image_size / 2.
    void validate() const;

    int grid_size(double frequency) const;
};

enum class Phase { Even, Odd };

// One real-valued wavelet, stored on its (border-clipped) support window.
struct GaborWavelet {
    double frequency = 0;    // cycles / FOV
    double orientation = 0;  // radians in [0, pi)
    double center_x = 0;     // FOV-normalized, [0, 1]
    double center_y = 0;
    Phase phase = Phase::Even;

    int row0 = 0;
    int col0 = 0;
    int rows = 0;
    int cols = 0;
    std::vector<double> taps;  // rows * cols, row-major

    double peak() const;
    double sum() const;
    // Value at full-image pixel (r, c); zero outside the support.
    double at(int r, int c) const;
    // <image, wavelet>
    double respond(const StimulusImage& image) const;
};

struct QuadraturePair {
    GaborWavelet even;
    GaborWavelet odd;
};

// Immutable wavelet pyramid. Pair order is frequency-major, then
// orientation, then row-major center position; feature i is the energy of
// pair i (plus an optional trailing luminance feature).
class GaborBank {
public:
    explicit GaborBank(GaborConfig config);

    const GaborConfig& config() const { return config_; }
    std::span<const QuadraturePair> pairs() const { return pairs_; }
    Index feature_dim() const;

    // Distinct (frequency, orientation) channels in bank order.
    std::vector<std::pair<double, double>> channels() const;
    // Channel index (frequency_index * orientations + orientation_index)
    // of every energy feature; the luminance feature maps to -1.
    const std::vector<int>& feature_channels() const { return feature_channel_; }

private:
    GaborConfig config_;
    std::vector<QuadraturePair> pairs_;
    std::vector<int> feature_channel_;
};

GaborBank build_bank(const GaborConfig& config);

// Quadrature energy sqrt(<img, even>^2 + <img, odd>^2) for every pair.
FeatureVector extract_features(const StimulusImage& image, const GaborBank& bank);

// Row i = extract_features(images[i]).
FeatureMatrix extract_batch(std::span<const StimulusImage> images, const GaborBank& bank);

}  // namespace voxelforge
