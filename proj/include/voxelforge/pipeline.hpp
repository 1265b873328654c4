#pragma once

#include "voxelforge/data_io.hpp"
#include "voxelforge/stats.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace voxelforge {

// Line-oriented progress sink; receives "key=value ..." records.
using LogSink = std::function<void(const std::string&)>;

// Trains one model family on every ROI of the dataset and returns a bundle
// that carries the full config, seed and split.
ModelBundle train_full_model(const Dataset& dataset, ModelKind kind, const PipelineConfig& config,
                             Seed seed, const LogSink& log = {});

// Features of one layer as the bundle sees them (projected when the bundle
// records a reduction for that layer). kGaborLayerId extracts Gabor energies
// from the dataset stimuli.
FeatureMatrix bundle_layer_features(const ModelBundle& bundle, const Dataset& dataset, int layer_id);

// Predictions for every ROI on the given sample rows, each voxel served by
// its selected layer.
std::vector<ResponseMatrix> predict_bundle(const ModelBundle& bundle, const Dataset& dataset,
                                           const std::vector<Index>& rows);

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct EvalConfig {
    int shuffles = 1000;
    double p_level = 0.001;
    int permutations = 1000;
    // comparison threshold; defaults to the larger global randomization
    // threshold of the compared models
    std::optional<double> threshold;
    Seed seed = kDefaultSeed;
    int histogram_bins = 40;
};

struct RoiEvaluation {
    std::string roi;
    AccuracyVector accuracy;
    SignificanceResult significance;
    AccuracyCurve curve;  // against the model's own global threshold
};

struct ModelEvaluation {
    std::string label;
    std::string kind;
    std::vector<RoiEvaluation> rois;
};

struct Histogram {
    std::vector<double> edges;  // bins + 1
    std::vector<int> counts;
};

struct RoiComparison {
    std::string roi;
    std::string model_a;
    std::string model_b;
    double threshold = 0;
    std::vector<std::pair<double, double>> scatter;  // (C_a, C_b) per defined voxel
    std::vector<double> differences;  // C_a - C_b on voxels significant under both
    Histogram histogram;
    double fraction_a_higher = 0;     // among voxels significant under both
    double fraction_b_higher = 0;
    AdvantageResult advantage;        // A over B
    bool advantage_defined = true;    // false when no voxel is eligible
    std::map<std::string, AccuracyCurve> curves;
};

struct EvaluationReport {
    int version = 1;
    std::string dataset;
    std::string test_signature;
    EvalConfig config;
    std::vector<ModelEvaluation> models;
    std::vector<RoiComparison> comparisons;
};

// Single-model evaluation on the held-out test block.
EvaluationReport evaluate_bundle(const ModelBundle& bundle, const Dataset& dataset,
                                 const EvalConfig& config);

// Evaluates every bundle and compares each pair (i < j) ROI by ROI.
// Throws PartitionMismatch if the bundles were trained on different test
// blocks or on another dataset.
EvaluationReport comparison_report(const std::vector<ModelBundle>& bundles, const Dataset& dataset,
                                   const EvalConfig& config);

Json to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const Json& j);
// Field-wise equality; NaN compares equal to NaN.
bool reports_equal(const EvaluationReport& a, const EvaluationReport& b);

// SVG scatter, difference histogram and sorted-curve plots, one set per
// comparison (curves only for single-model reports). Returns written files.
std::vector<fs::path> write_report_plots(const EvaluationReport& report, const fs::path& dir);

}  // namespace voxelforge
