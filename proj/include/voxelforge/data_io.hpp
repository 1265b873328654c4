#pragma once

#include "voxelforge/gabor.hpp"
#include "voxelforge/roi_trainer.hpp"
#include "voxelforge/types.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace voxelforge {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Matrix container
//
//   offset 0   4 bytes   magic "NENC"
//   offset 4   u32 LE    version (1)
//   offset 8   u64 LE    rows
//   offset 16  u64 LE    cols
//   offset 24  f32 LE    rows * cols values, row-major
// ---------------------------------------------------------------------------

inline constexpr char kMatrixMagic[4] = {'N', 'E', 'N', 'C'};
inline constexpr std::uint32_t kMatrixVersion = 1;
inline constexpr std::size_t kMatrixHeaderBytes = 24;

std::vector<std::byte> encode_matrix(const Matrix& matrix);
Matrix decode_matrix(std::span<const std::byte> bytes, const std::string& origin = "<memory>");

// Writes the binary container. Throws NonFiniteValue for NaN/Inf entries.
void write_matrix(const Matrix& matrix, const fs::path& path);

// Reads the binary container, or CSV (header row f0,f1,...) when the file
// does not start with the magic and has a .csv extension.
Matrix read_matrix(const fs::path& path);
Matrix parse_csv_matrix(const std::string& text, const std::string& origin = "<memory>");

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

struct RoiEntry {
    std::string name;
    Index voxels = 0;
    fs::path responses;  // relative to the manifest directory
};

struct StimulusEntry {
    fs::path directory;  // relative to the manifest directory
    int image_size = 0;
};

// Every feature/response matrix has estimation_samples + test_samples rows;
// the test block is the last test_samples rows.
struct DatasetManifest {
    std::string name;
    Index estimation_samples = 0;
    Index test_samples = 0;
    std::map<int, fs::path> layers;  // layer id (1..8) -> feature file
    std::vector<RoiEntry> rois;
    std::optional<StimulusEntry> stimuli;
    std::string notes;
    fs::path root;  // directory the relative paths resolve against

    Index sample_count() const { return estimation_samples + test_samples; }
    fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : root / p; }
    // "<name>:<estimation>:<test>" identifies the held-out block
    std::string test_signature() const;
};

Json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const Json& j, const fs::path& root);
DatasetManifest read_manifest(const fs::path& path);
void write_manifest(const DatasetManifest& manifest, const fs::path& path);

struct Dataset {
    DatasetManifest manifest;
    std::map<int, FeatureMatrix> layers;
    std::vector<ResponseMatrix> responses;  // aligned with manifest.rois
    std::vector<StimulusImage> stimuli;     // empty unless the manifest names a directory
    fs::path manifest_path;                 // empty for in-memory datasets

    Index sample_count() const { return manifest.sample_count(); }
};

// Loads and validates every referenced file; row-count disagreements raise
// SizeMismatch before any training can start.
Dataset load_dataset(const fs::path& manifest_path);
void validate_dataset(const Dataset& dataset);

// Images from a directory (*.nenc and binary/ascii *.pgm, sorted by name) or
// a text file listing one path per line. Pixel values are mapped to [0, 1]
// for PGM; matrix files are taken as-is.
std::vector<StimulusImage> load_images(const fs::path& source);

// ---------------------------------------------------------------------------
// Synthetic ground truth
// ---------------------------------------------------------------------------

struct SyntheticRoiSpec {
    std::string name;
    Index linear = 0;
    Index nonlinear = 0;
    Index noise = 0;
    Index gabor = 0;
    // layer every planted voxel reads from; 0 = uniform over layers
    int source_layer = 0;

    Index voxels() const { return linear + nonlinear + noise + gabor; }
};

struct SyntheticSpec {
    std::string name = "synthetic";
    Index samples = 500;       // estimation block
    Index test_samples = 120;  // held-out block
    std::vector<Index> layer_dims{64, 64};
    std::vector<SyntheticRoiSpec> rois;
    double noise_sigma = 0.1;
    Seed seed = kDefaultSeed;
    int planted_sparsity = 5;
    // nonlinear voxels sum |u . x| over this many random directions, each
    // realized as a +/- pair of rectifier units
    int nonlinear_pairs = 2;
    GaborConfig gabor{32, {1, 2, 4, 8}, 8, 0.5, 1.0, false};

    void validate() const;
    bool needs_stimuli() const;
};

Json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const Json& j);

enum class VoxelGroup { Linear, Nonlinear, Noise, Gabor };
std::string to_string(VoxelGroup group);

struct PlantedVoxel {
    VoxelGroup group = VoxelGroup::Noise;
    int source_layer = 0;          // 0 for noise / gabor voxels
    std::vector<Index> support;    // feature indices within the source space
    std::vector<double> weights;   // linear / gabor: coefficients over support
    std::vector<std::vector<double>> directions;  // nonlinear: one per pair, over support
    std::vector<double> pair_weights;             // nonlinear: output weight per pair
    // signal = (raw - offset) / scale; response = signal + noise
    double offset = 0;
    double scale = 1;
};

struct GroundTruth {
    std::vector<std::vector<PlantedVoxel>> rois;
};

Json to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const Json& j);

// Noise-free planted signal of one voxel given its source features
// (layer features, or Gabor features for gabor voxels).
Vector planted_signal(const PlantedVoxel& voxel, const FeatureMatrix& source);

struct SyntheticDataset {
    Dataset dataset;
    GroundTruth truth;
    FeatureMatrix gabor_features;  // empty unless stimuli were generated
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);
// Generates and writes manifest.json, features/, responses/, stimuli/ and
// ground_truth.json under out_dir. Returns the manifest path.
fs::path write_synthetic(const SyntheticDataset& data, const fs::path& out_dir);

// ---------------------------------------------------------------------------
// Model bundles
// ---------------------------------------------------------------------------

struct HeadLayerModel {
    int layer_id = 0;
    FeatureScaler scaler;
    MlpHeadParams params;
    TrainingLog log;
};

struct RoiModel {
    std::string name;
    Index voxels = 0;
    std::vector<LinearEncodingModel> linear_layers;  // gwp / dnn-linear
    std::vector<HeadLayerModel> head_layers;         // dnn-tl
    std::vector<int> layer_map;                      // per voxel
    std::vector<double> validation_accuracy;         // per voxel, at the selected layer
};

struct ProjectionRecord {
    int layer_id = 0;
    Index input_dim = 0;
    Index output_dim = 0;
    Seed seed = 0;
};

inline constexpr int kBundleVersion = 1;
// layer id used for Gabor features in gwp bundles
inline constexpr int kGaborLayerId = 0;

struct ModelBundle {
    ModelKind kind = ModelKind::DnnTl;
    Seed seed = kDefaultSeed;
    PipelineConfig config;
    std::string dataset_name;
    std::string dataset_manifest;  // absolute path used at training time
    std::string test_signature;
    DatasetSplit split;
    std::vector<ProjectionRecord> projections;
    std::vector<RoiModel> rois;
    Json extra = Json::object();   // unknown manifest keys, preserved on save
    std::vector<std::string> warnings;
};

void save_bundle(const ModelBundle& bundle, const fs::path& dir);
ModelBundle load_bundle(const fs::path& dir);

Json to_json(const PipelineConfig& config);
// Overlays the keys present in j onto base.
PipelineConfig pipeline_config_from_json(const Json& j, PipelineConfig base = {});

Json read_json_file(const fs::path& path);
void write_json_file(const Json& j, const fs::path& path);

}  // namespace voxelforge
