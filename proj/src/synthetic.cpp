#include "voxelforge/data_io.hpp"
#include "voxelforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace voxelforge {

namespace {

// stream ids for derive_seed
constexpr std::uint64_t kFeatureStream = 1;
constexpr std::uint64_t kStimulusStream = 2;
constexpr std::uint64_t kPlantStream = 3;
constexpr std::uint64_t kNoiseStream = 4;

// Everything generated is rounded to float so the in-memory dataset equals
// what the matrix container stores.
double f32(double x) { return static_cast<double>(static_cast<float>(x)); }

std::vector<Index> sample_support(Index dim, int k, std::mt19937_64& rng) {
    std::vector<Index> all(static_cast<std::size_t>(dim));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(k));
    std::sort(all.begin(), all.end());
    return all;
}

double raw_signal_row(const PlantedVoxel& v, const FeatureMatrix& source, Index row) {
    double raw = 0;
    switch (v.group) {
        case VoxelGroup::Linear:
        case VoxelGroup::Gabor:
            for (std::size_t i = 0; i < v.support.size(); ++i) raw += v.weights[i] * source(row, v.support[i]);
            break;
        case VoxelGroup::Nonlinear:
            for (std::size_t p = 0; p < v.directions.size(); ++p) {
                double z = 0;
                for (std::size_t i = 0; i < v.support.size(); ++i) z += v.directions[p][i] * source(row, v.support[i]);
                // relu(z) + relu(-z)
                raw += v.pair_weights[p] * (std::max(z, 0.0) + std::max(-z, 0.0));
            }
            break;
        case VoxelGroup::Noise:
            break;
    }
    return raw;
}

VoxelGroup group_from_string(const std::string& s) {
    if (s == "linear") return VoxelGroup::Linear;
    if (s == "nonlinear") return VoxelGroup::Nonlinear;
    if (s == "noise") return VoxelGroup::Noise;
    if (s == "gabor") return VoxelGroup::Gabor;
    throw SchemaMismatch("unknown voxel group '" + s + "'");
}

}  // namespace

std::string to_string(VoxelGroup group) {
    switch (group) {
        case VoxelGroup::Linear: return "linear";
        case VoxelGroup::Nonlinear: return "nonlinear";
        case VoxelGroup::Noise: return "noise";
        case VoxelGroup::Gabor: return "gabor";
    }
    return "noise";
}

void SyntheticSpec::validate() const {
    if (samples < 3) throw InvalidConfig("synthetic spec: need at least 3 estimation samples");
    if (test_samples < 0) throw InvalidConfig("synthetic spec: negative test_samples");
    if (layer_dims.empty() || layer_dims.size() > 8) throw InvalidConfig("synthetic spec: 1..8 layers");
    if (rois.empty()) throw InvalidConfig("synthetic spec: at least one ROI");
    if (!(noise_sigma >= 0)) throw InvalidConfig("synthetic spec: noise_sigma must be >= 0");
    if (planted_sparsity < 1) throw InvalidConfig("synthetic spec: planted_sparsity must be >= 1");
    if (nonlinear_pairs < 1) throw InvalidConfig("synthetic spec: nonlinear_pairs must be >= 1");
    for (Index d : layer_dims) {
        if (d < planted_sparsity) throw InvalidConfig("synthetic spec: layer narrower than planted sparsity");
    }
    for (const auto& roi : rois) {
        if (roi.linear < 0 || roi.nonlinear < 0 || roi.noise < 0 || roi.gabor < 0) {
            throw InvalidConfig("synthetic spec: negative voxel count in ROI " + roi.name);
        }
        if (roi.source_layer < 0 || roi.source_layer > static_cast<int>(layer_dims.size())) {
            throw InvalidConfig("synthetic spec: ROI " + roi.name + " names a missing source layer");
        }
    }
    if (needs_stimuli()) gabor.validate();
}

bool SyntheticSpec::needs_stimuli() const {
    return std::any_of(rois.begin(), rois.end(), [](const auto& r) { return r.gabor > 0; });
}

Json to_json(const SyntheticSpec& s) {
    Json rois = Json::array();
    for (const auto& r : s.rois) {
        rois.push_back({{"name", r.name},
                        {"linear", r.linear},
                        {"nonlinear", r.nonlinear},
                        {"noise", r.noise},
                        {"gabor", r.gabor},
                        {"source_layer", r.source_layer}});
    }
    return {{"name", s.name},
            {"samples", s.samples},
            {"test_samples", s.test_samples},
            {"layer_dims", s.layer_dims},
            {"rois", rois},
            {"noise_sigma", s.noise_sigma},
            {"seed", s.seed},
            {"planted_sparsity", s.planted_sparsity},
            {"nonlinear_pairs", s.nonlinear_pairs},
            {"gabor",
             {{"image_size", s.gabor.image_size},
              {"frequencies", s.gabor.frequencies},
              {"orientations", s.gabor.orientations_count},
              {"envelope_ratio", s.gabor.envelope_ratio},
              {"grid_multiplier", s.gabor.grid_multiplier}}}};
}

SyntheticSpec synthetic_spec_from_json(const Json& j) {
    SyntheticSpec s;
    try {
        s.name = j.value("name", s.name);
        s.samples = j.value("samples", s.samples);
        s.test_samples = j.value("test_samples", s.test_samples);
        if (j.contains("layer_dims")) s.layer_dims = j["layer_dims"].get<std::vector<Index>>();
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.seed = j.value("seed", s.seed);
        s.planted_sparsity = j.value("planted_sparsity", s.planted_sparsity);
        s.nonlinear_pairs = j.value("nonlinear_pairs", s.nonlinear_pairs);
        if (j.contains("rois")) {
            for (const auto& r : j["rois"]) {
                SyntheticRoiSpec roi;
                roi.name = r.value("name", "roi" + std::to_string(s.rois.size() + 1));
                roi.linear = r.value("linear", Index{0});
                roi.nonlinear = r.value("nonlinear", Index{0});
                roi.noise = r.value("noise", Index{0});
                roi.gabor = r.value("gabor", Index{0});
                roi.source_layer = r.value("source_layer", 0);
                s.rois.push_back(roi);
            }
        }
        if (j.contains("gabor")) {
            const Json& g = j["gabor"];
            s.gabor.image_size = g.value("image_size", s.gabor.image_size);
            if (g.contains("frequencies")) s.gabor.frequencies = g["frequencies"].get<std::vector<double>>();
            s.gabor.orientations_count = g.value("orientations", s.gabor.orientations_count);
            s.gabor.envelope_ratio = g.value("envelope_ratio", s.gabor.envelope_ratio);
            s.gabor.grid_multiplier = g.value("grid_multiplier", s.gabor.grid_multiplier);
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(std::string("synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

Json to_json(const GroundTruth& truth) {
    Json rois = Json::array();
    for (const auto& roi : truth.rois) {
        Json voxels = Json::array();
        for (const auto& v : roi) {
            Json jv = {{"group", to_string(v.group)},
                       {"source_layer", v.source_layer},
                       {"support", v.support},
                       {"offset", v.offset},
                       {"scale", v.scale}};
            if (!v.weights.empty()) jv["weights"] = v.weights;
            if (!v.directions.empty()) {
                jv["directions"] = v.directions;
                jv["pair_weights"] = v.pair_weights;
            }
            voxels.push_back(jv);
        }
        rois.push_back(voxels);
    }
    return {{"rois", rois}};
}

GroundTruth ground_truth_from_json(const Json& j) {
    GroundTruth truth;
    try {
        for (const auto& roi : j.at("rois")) {
            auto& out = truth.rois.emplace_back();
            for (const auto& jv : roi) {
                PlantedVoxel v;
                v.group = group_from_string(jv.at("group").get<std::string>());
                v.source_layer = jv.at("source_layer").get<int>();
                v.support = jv.at("support").get<std::vector<Index>>();
                v.offset = jv.at("offset").get<double>();
                v.scale = jv.at("scale").get<double>();
                if (jv.contains("weights")) v.weights = jv["weights"].get<std::vector<double>>();
                if (jv.contains("directions")) {
                    v.directions = jv["directions"].get<std::vector<std::vector<double>>>();
                    v.pair_weights = jv["pair_weights"].get<std::vector<double>>();
                }
                out.push_back(std::move(v));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(std::string("ground truth: ") + e.what());
    }
    return truth;
}

Vector planted_signal(const PlantedVoxel& voxel, const FeatureMatrix& source) {
    Vector out(source.rows());
    for (Index r = 0; r < source.rows(); ++r) {
        out(r) = voxel.group == VoxelGroup::Noise
                     ? 0.0
                     : (raw_signal_row(voxel, source, r) - voxel.offset) / voxel.scale;
    }
    return out;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const Index n = spec.samples + spec.test_samples;
    const int k = spec.planted_sparsity;
    const int layer_count = static_cast<int>(spec.layer_dims.size());

    SyntheticDataset out;
    Dataset& d = out.dataset;
    d.manifest.name = spec.name;
    d.manifest.estimation_samples = spec.samples;
    d.manifest.test_samples = spec.test_samples;
    d.manifest.notes = "synthetic ground truth; seed " + std::to_string(spec.seed);

    std::mt19937_64 feature_rng(derive_seed(spec.seed, kFeatureStream));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int l = 0; l < layer_count; ++l) {
        FeatureMatrix f(n, spec.layer_dims[static_cast<std::size_t>(l)]);
        // row-major draw order so the stream does not depend on Eigen storage
        for (Index r = 0; r < f.rows(); ++r) {
            for (Index c = 0; c < f.cols(); ++c) f(r, c) = f32(normal(feature_rng));
        }
        const int id = l + 1;
        d.layers[id] = std::move(f);
        d.manifest.layers[id] = "features/layer" + std::to_string(id) + ".nenc";
    }

    Index gabor_dim = 0;
    if (spec.needs_stimuli()) {
        std::mt19937_64 stim_rng(derive_seed(spec.seed, kStimulusStream));
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        const int size = spec.gabor.image_size;
        d.stimuli.reserve(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) {
            StimulusImage img(size, size);
            for (int r = 0; r < size; ++r) {
                for (int c = 0; c < size; ++c) img(r, c) = f32(uniform(stim_rng));
            }
            d.stimuli.push_back(std::move(img));
        }
        d.manifest.stimuli = StimulusEntry{"stimuli", size};
        const GaborBank bank = build_bank(spec.gabor);
        out.gabor_features = extract_batch(d.stimuli, bank);
        gabor_dim = bank.feature_dim();
        if (gabor_dim < k) throw InvalidConfig("synthetic spec: Gabor bank narrower than planted sparsity");
    }

    std::mt19937_64 plant_rng(derive_seed(spec.seed, kPlantStream));
    std::mt19937_64 noise_rng(derive_seed(spec.seed, kNoiseStream));
    std::uniform_real_distribution<double> magnitude(0.5, 1.5);
    std::bernoulli_distribution sign(0.5);
    std::uniform_int_distribution<int> pick_layer(1, layer_count);

    for (std::size_t ri = 0; ri < spec.rois.size(); ++ri) {
        const auto& roi = spec.rois[ri];
        auto& planted = out.truth.rois.emplace_back();
        const Index voxels = roi.voxels();
        ResponseMatrix responses(n, voxels);

        auto plan = [&](VoxelGroup group) {
            PlantedVoxel v;
            v.group = group;
            if (group == VoxelGroup::Noise) return v;
            const FeatureMatrix* source = &out.gabor_features;
            if (group != VoxelGroup::Gabor) {
                v.source_layer = roi.source_layer > 0 ? roi.source_layer : pick_layer(plant_rng);
                source = &d.layers.at(v.source_layer);
            }
            v.support = sample_support(source->cols(), k, plant_rng);
            if (group == VoxelGroup::Nonlinear) {
                for (int p = 0; p < spec.nonlinear_pairs; ++p) {
                    std::vector<double> u(static_cast<std::size_t>(k));
                    double norm = 0;
                    for (auto& x : u) {
                        x = normal(plant_rng);
                        norm += x * x;
                    }
                    for (auto& x : u) x /= std::sqrt(norm);
                    v.directions.push_back(std::move(u));
                    v.pair_weights.push_back(magnitude(plant_rng));
                }
            } else {
                for (int i = 0; i < k; ++i) {
                    v.weights.push_back((sign(plant_rng) ? 1.0 : -1.0) * magnitude(plant_rng));
                }
            }
            // unit-variance signal over all generated samples
            v.scale = 1.0;
            v.offset = 0.0;
            const Vector raw = planted_signal(v, *source);
            v.offset = raw.mean();
            const double sd = std::sqrt((raw.array() - v.offset).square().mean());
            v.scale = sd > 0 ? sd : 1.0;
            return v;
        };

        const std::pair<VoxelGroup, Index> groups[] = {{VoxelGroup::Linear, roi.linear},
                                                       {VoxelGroup::Nonlinear, roi.nonlinear},
                                                       {VoxelGroup::Noise, roi.noise},
                                                       {VoxelGroup::Gabor, roi.gabor}};
        for (const auto& [group, count] : groups) {
            for (Index i = 0; i < count; ++i) planted.push_back(plan(group));
        }

        for (Index v = 0; v < voxels; ++v) {
            const PlantedVoxel& pv = planted[static_cast<std::size_t>(v)];
            Vector signal = Vector::Zero(n);
            if (pv.group == VoxelGroup::Gabor) signal = planted_signal(pv, out.gabor_features);
            else if (pv.group != VoxelGroup::Noise) signal = planted_signal(pv, d.layers.at(pv.source_layer));
            // noise voxels carry unit-variance noise whatever noise_sigma is
            const double sigma = pv.group == VoxelGroup::Noise ? 1.0 : spec.noise_sigma;
            for (Index r = 0; r < n; ++r) responses(r, v) = f32(signal(r) + sigma * normal(noise_rng));
        }

        d.manifest.rois.push_back({roi.name, voxels, "responses/" + roi.name + ".nenc"});
        d.responses.push_back(std::move(responses));
    }
    validate_dataset(d);
    return out;
}

fs::path write_synthetic(const SyntheticDataset& data, const fs::path& out_dir) {
    const Dataset& d = data.dataset;
    fs::create_directories(out_dir);
    for (const auto& [id, path] : d.manifest.layers) write_matrix(d.layers.at(id), out_dir / path);
    for (std::size_t r = 0; r < d.manifest.rois.size(); ++r) {
        write_matrix(d.responses[r], out_dir / d.manifest.rois[r].responses);
    }
    if (d.manifest.stimuli) {
        const fs::path dir = out_dir / d.manifest.stimuli->directory;
        fs::create_directories(dir);
        char name[32];
        for (std::size_t i = 0; i < d.stimuli.size(); ++i) {
            std::snprintf(name, sizeof(name), "img_%06zu.nenc", i);
            write_matrix(d.stimuli[i], dir / name);
        }
    }
    write_json_file(to_json(data.truth), out_dir / "ground_truth.json");
    const fs::path manifest_path = out_dir / "manifest.json";
    write_manifest(d.manifest, manifest_path);
    return manifest_path;
}

}  // namespace voxelforge
