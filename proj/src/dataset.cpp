#include "voxelforge/data_io.hpp"
#include "voxelforge/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

namespace voxelforge {

namespace {

constexpr const char* kDatasetFormat = "voxelforge-dataset";

template <typename T>
T required(const Json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw SchemaMismatch(where + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(where + ": bad value for '" + key + "': " + e.what());
    }
}

// --- PGM -------------------------------------------------------------------

std::string next_token(std::istream& in) {
    std::string token;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!token.empty()) break;
            continue;
        }
        token.push_back(static_cast<char>(ch));
    }
    return token;
}

StimulusImage read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot open " + path.string());
    const std::string magic = next_token(in);
    if (magic != "P5" && magic != "P2") throw BadMagic(path.string() + ": not a PGM image");
    int width = 0, height = 0, maxval = 0;
    try {
        width = std::stoi(next_token(in));
        height = std::stoi(next_token(in));
        maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw SchemaMismatch(path.string() + ": malformed PGM header");
    }
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
        throw SchemaMismatch(path.string() + ": malformed PGM header");
    }
    StimulusImage image(height, width);
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            int value = 0;
            if (magic == "P2") {
                const std::string t = next_token(in);
                if (t.empty()) throw TruncatedPayload(path.string() + ": truncated PGM data");
                value = std::stoi(t);
            } else if (maxval < 256) {
                const int b = in.get();
                if (b == EOF) throw TruncatedPayload(path.string() + ": truncated PGM data");
                value = b;
            } else {
                const int hi = in.get();
                const int lo = in.get();
                if (lo == EOF) throw TruncatedPayload(path.string() + ": truncated PGM data");
                value = (hi << 8) | lo;
            }
            image(r, c) = static_cast<double>(value) / maxval;
        }
    }
    return image;
}

StimulusImage read_image(const fs::path& path) {
    if (path.extension() == ".pgm") return read_pgm(path);
    return read_matrix(path);
}

}  // namespace

std::string DatasetManifest::test_signature() const {
    return name + ":" + std::to_string(estimation_samples) + ":" + std::to_string(test_samples);
}

Json to_json(const DatasetManifest& m) {
    Json j;
    j["format"] = kDatasetFormat;
    j["version"] = 1;
    j["name"] = m.name;
    j["samples"] = {{"estimation", m.estimation_samples}, {"test", m.test_samples}};
    Json layers = Json::object();
    for (const auto& [id, path] : m.layers) layers[std::to_string(id)] = path.generic_string();
    j["layers"] = layers;
    Json rois = Json::array();
    for (const auto& roi : m.rois) {
        rois.push_back({{"name", roi.name},
                        {"voxels", roi.voxels},
                        {"responses", roi.responses.generic_string()}});
    }
    j["rois"] = rois;
    if (m.stimuli) {
        j["stimuli"] = {{"directory", m.stimuli->directory.generic_string()},
                        {"image_size", m.stimuli->image_size}};
    }
    if (!m.notes.empty()) j["notes"] = m.notes;
    return j;
}

DatasetManifest manifest_from_json(const Json& j, const fs::path& root) {
    const std::string where = "dataset manifest";
    if (j.value("format", std::string{}) != kDatasetFormat) {
        throw SchemaMismatch(where + ": format must be '" + kDatasetFormat + "'");
    }
    if (j.value("version", 0) != 1) throw SchemaMismatch(where + ": unsupported version");
    DatasetManifest m;
    m.root = root;
    m.name = required<std::string>(j, "name", where);
    const Json samples = required<Json>(j, "samples", where);
    m.estimation_samples = required<Index>(samples, "estimation", where + ".samples");
    m.test_samples = required<Index>(samples, "test", where + ".samples");
    if (m.estimation_samples < 0 || m.test_samples < 0) {
        throw SchemaMismatch(where + ": negative sample counts");
    }
    const Json layers = required<Json>(j, "layers", where);
    for (const auto& [key, value] : layers.items()) {
        int id = 0;
        try {
            id = std::stoi(key);
        } catch (const std::exception&) {
            throw SchemaMismatch(where + ": layer key '" + key + "' is not an integer");
        }
        if (id < 1 || id > 8) throw SchemaMismatch(where + ": layer ids must be 1..8");
        m.layers[id] = value.get<std::string>();
    }
    for (const auto& roi : required<Json>(j, "rois", where)) {
        m.rois.push_back({required<std::string>(roi, "name", where + ".rois"),
                          required<Index>(roi, "voxels", where + ".rois"),
                          required<std::string>(roi, "responses", where + ".rois")});
    }
    if (j.contains("stimuli")) {
        const Json& s = j["stimuli"];
        m.stimuli = StimulusEntry{required<std::string>(s, "directory", where + ".stimuli"),
                                  required<int>(s, "image_size", where + ".stimuli")};
    }
    m.notes = j.value("notes", std::string{});
    return m;
}

DatasetManifest read_manifest(const fs::path& path) {
    return manifest_from_json(read_json_file(path), fs::absolute(path).parent_path());
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    write_json_file(to_json(manifest), path);
}

std::vector<StimulusImage> load_images(const fs::path& source) {
    std::vector<fs::path> files;
    if (fs::is_directory(source)) {
        for (const auto& entry : fs::directory_iterator(source)) {
            const auto ext = entry.path().extension();
            if (entry.is_regular_file() && (ext == ".nenc" || ext == ".pgm")) {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
    } else if (fs::is_regular_file(source)) {
        std::ifstream in(source);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line.front() == '#') continue;
            fs::path p = line;
            files.push_back(p.is_absolute() ? p : source.parent_path() / p);
        }
    } else {
        throw MissingFile("image source " + source.string() + " does not exist");
    }
    std::vector<StimulusImage> images;
    images.reserve(files.size());
    for (const auto& f : files) {
        if (!fs::exists(f)) throw MissingFile("image " + f.string() + " does not exist");
        images.push_back(read_image(f));
    }
    return images;
}

void validate_dataset(const Dataset& d) {
    const Index n = d.sample_count();
    for (const auto& [id, features] : d.layers) {
        if (features.rows() != n) {
            throw SizeMismatch("layer " + std::to_string(id) + " has " +
                               std::to_string(features.rows()) + " rows, manifest declares " +
                               std::to_string(n) + " samples");
        }
    }
    if (d.responses.size() != d.manifest.rois.size()) {
        throw SizeMismatch("response matrices do not match the ROI list");
    }
    for (std::size_t r = 0; r < d.responses.size(); ++r) {
        const auto& roi = d.manifest.rois[r];
        if (d.responses[r].rows() != n) {
            throw SizeMismatch("ROI " + roi.name + " responses have " +
                               std::to_string(d.responses[r].rows()) + " rows, manifest declares " +
                               std::to_string(n) + " samples");
        }
        if (d.responses[r].cols() != roi.voxels) {
            throw SizeMismatch("ROI " + roi.name + " responses have " +
                               std::to_string(d.responses[r].cols()) +
                               " voxels, manifest declares " + std::to_string(roi.voxels));
        }
    }
    if (d.manifest.stimuli) {
        if (static_cast<Index>(d.stimuli.size()) != n) {
            throw SizeMismatch("stimulus directory holds " + std::to_string(d.stimuli.size()) +
                               " images, manifest declares " + std::to_string(n) + " samples");
        }
        for (const auto& img : d.stimuli) {
            if (img.rows() != d.manifest.stimuli->image_size ||
                img.cols() != d.manifest.stimuli->image_size) {
                throw SizeMismatch("stimulus image size differs from the manifest");
            }
        }
    }
}

Dataset load_dataset(const fs::path& manifest_path) {
    Dataset d;
    d.manifest = read_manifest(manifest_path);
    d.manifest_path = fs::absolute(manifest_path).lexically_normal();
    for (const auto& [id, path] : d.manifest.layers) {
        const auto full = d.manifest.resolve(path);
        if (!fs::exists(full)) throw MissingFile("layer " + std::to_string(id) + " file " + full.string());
        d.layers[id] = read_matrix(full);
    }
    for (const auto& roi : d.manifest.rois) {
        const auto full = d.manifest.resolve(roi.responses);
        if (!fs::exists(full)) throw MissingFile("ROI " + roi.name + " response file " + full.string());
        d.responses.push_back(read_matrix(full));
    }
    if (d.manifest.stimuli) d.stimuli = load_images(d.manifest.resolve(d.manifest.stimuli->directory));
    validate_dataset(d);
    return d;
}

}  // namespace voxelforge
