#include "oracles/oracles.hpp"
#include "voxelforge/errors.hpp"
#include "voxelforge/pipeline.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

using namespace voxelforge;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = fs::temp_directory_path() / ("voxelforge_" + tag + "_" + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

Matrix as_float(const Matrix& m) { return m.cast<float>().cast<double>(); }

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.samples = 120;
    s.test_samples = 30;
    s.layer_dims = {10, 8};
    s.rois = {{"r0", 4, 3, 2, 0, 0}, {"r1", 2, 0, 2, 0, 1}};
    return s;
}

Matrix take_rows(const Matrix& m, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

}  // namespace

TEST_CASE("matrix container round-trip and header layout") {
    TempDir tmp("matrix");
    const Matrix m = oracle::gaussian(7, 13, 3);
    write_matrix(m, tmp.path / "m.nenc");
    CHECK(read_matrix(tmp.path / "m.nenc") == as_float(m));

    const std::string bytes = slurp(tmp.path / "m.nenc");
    REQUIRE(bytes.size() == 24 + 7 * 13 * 4);
    CHECK(bytes.substr(0, 4) == "NENC");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(static_cast<unsigned char>(bytes[8]) == 7);
    CHECK(static_cast<unsigned char>(bytes[16]) == 13);
    float first = 0;
    std::memcpy(&first, bytes.data() + 24, 4);
    CHECK(first == static_cast<float>(m(0, 0)));
    float second = 0;
    std::memcpy(&second, bytes.data() + 28, 4);
    CHECK(second == static_cast<float>(m(0, 1)));  // row-major

    const Matrix empty(0, 5);
    write_matrix(empty, tmp.path / "e.nenc");
    const Matrix back = read_matrix(tmp.path / "e.nenc");
    CHECK(back.rows() == 0);
    CHECK(back.cols() == 5);
}

TEST_CASE("matrix container errors") {
    TempDir tmp("matrix_err");
    write_matrix(oracle::gaussian(3, 3, 1), tmp.path / "ok.nenc");
    std::string bytes = slurp(tmp.path / "ok.nenc");

    std::string bad = bytes;
    bad.replace(0, 4, "XXXX");
    spit(tmp.path / "bad.nenc", bad);
    CHECK_THROWS_AS(read_matrix(tmp.path / "bad.nenc"), BadMagic);

    spit(tmp.path / "short.nenc", bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_matrix(tmp.path / "short.nenc"), TruncatedPayload);
    spit(tmp.path / "header.nenc", bytes.substr(0, 10));
    CHECK_THROWS_AS(read_matrix(tmp.path / "header.nenc"), TruncatedPayload);

    std::string nan = bytes;
    const float q = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan.data() + 24 + 4 * 4, &q, 4);
    spit(tmp.path / "nan.nenc", nan);
    CHECK_THROWS_AS(read_matrix(tmp.path / "nan.nenc"), NonFiniteValue);

    Matrix inf = Matrix::Zero(2, 2);
    inf(1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(write_matrix(inf, tmp.path / "inf.nenc"), NonFiniteValue);
    CHECK_THROWS_AS(read_matrix(tmp.path / "missing.nenc"), MissingFile);
}

TEST_CASE("CSV and its binary twin parse identically") {
    TempDir tmp("csv");
    spit(tmp.path / "m.csv", "f0,f1,f2\n1.5,-2,3e-1\n0,0.25,7\n-1,2,3\n");
    Matrix m(3, 3);
    m << 1.5, -2, 0.3, 0, 0.25, 7, -1, 2, 3;
    write_matrix(m, tmp.path / "m.nenc");
    const Matrix a = read_matrix(tmp.path / "m.csv");
    const Matrix b = read_matrix(tmp.path / "m.nenc");
    CHECK(as_float(a) == b);
    CHECK_THROWS_AS(parse_csv_matrix("f0,f1\n1,2\n3\n"), DataError);
    CHECK_THROWS_AS(parse_csv_matrix("f0\nnan\n"), NonFiniteValue);
}

TEST_CASE("synthetic generation is deterministic down to the bytes") {
    TempDir a("synth_a"), b("synth_b");
    write_synthetic(generate_synthetic(small_spec()), a.path);
    write_synthetic(generate_synthetic(small_spec()), b.path);
    int files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a.path)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), a.path);
        REQUIRE(fs::exists(b.path / rel));
        CHECK(slurp(e.path()) == slurp(b.path / rel));
        ++files;
    }
    CHECK(files >= 6);

    SyntheticSpec other = small_spec();
    other.seed = 4;
    const auto x = generate_synthetic(small_spec());
    const auto y = generate_synthetic(other);
    CHECK(x.dataset.responses[0] != y.dataset.responses[0]);
}

TEST_CASE("noiseless synthetic responses are reproducible from the ground truth") {
    SyntheticSpec spec = small_spec();
    spec.noise_sigma = 0;
    spec.rois = {{"r", 5, 5, 0, 0, 0}};
    const SyntheticDataset data = generate_synthetic(spec);
    const auto& truth = data.truth.rois[0];
    REQUIRE(truth.size() == 10);
    for (std::size_t v = 0; v < truth.size(); ++v) {
        const Vector s = planted_signal(truth[v], data.dataset.layers.at(truth[v].source_layer));
        const Vector r = data.dataset.responses[0].col(static_cast<Index>(v));
        CHECK((s - r).norm() <= 1e-6 * r.norm());
        CHECK(truth[v].support.size() == 5);
    }
    // truth survives its JSON codec
    const GroundTruth back = ground_truth_from_json(to_json(data.truth));
    CHECK(back.rois[0][3].support == truth[3].support);
    CHECK(back.rois[0][7].directions == truth[7].directions);
}

TEST_CASE("noiseless linear voxels: planted supports are recovered") {
    SyntheticSpec spec = small_spec();
    spec.samples = 200;
    spec.noise_sigma = 0;
    spec.layer_dims = {40};
    spec.rois = {{"r", 12, 0, 0, 0, 1}};
    const SyntheticDataset data = generate_synthetic(spec);
    RompConfig cfg;
    cfg.max_sparsity = 10;
    cfg.selection_size = 5;
    const LinearEncodingModel m = fit_voxelwise(data.dataset.layers.at(1), data.dataset.responses[0], cfg);
    for (std::size_t v = 0; v < 12; ++v) {
        std::vector<Index> got = m.voxels[v].support, want = data.truth.rois[0][v].support;
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        CHECK(got == want);
    }
}

TEST_CASE("pure-noise voxels rarely pass the randomization test") {
    SyntheticSpec spec = small_spec();
    spec.samples = 10;
    spec.test_samples = 120;
    spec.layer_dims = {8};
    spec.rois = {{"noise", 0, 0, 2000, 0, 0}};
    const SyntheticDataset data = generate_synthetic(spec);
    const Matrix pred = oracle::gaussian(120, 2000, 77);
    const Matrix test = data.dataset.responses[0].bottomRows(120);
    const SignificanceResult r = randomization_threshold(test, pred, 1000, 0.001, 3);
    const auto own = std::count(r.significant_per_voxel.begin(), r.significant_per_voxel.end(), true);
    const auto global = std::count(r.significant.begin(), r.significant.end(), true);
    CHECK(own < 10);  // < 0.5% of 2000
    CHECK(global < 10);
}

TEST_CASE("manifest validation rejects row-count disagreement") {
    TempDir tmp("manifest");
    const fs::path manifest = write_synthetic(generate_synthetic(small_spec()), tmp.path);
    const Dataset d = load_dataset(manifest);
    CHECK(d.sample_count() == 150);
    CHECK(d.manifest_path == fs::absolute(manifest).lexically_normal());

    const DatasetManifest m = read_manifest(manifest);
    const fs::path responses = m.resolve(m.rois[0].responses);
    const Matrix r = read_matrix(responses);
    write_matrix(r.topRows(r.rows() - 1), responses);
    CHECK_THROWS_AS(load_dataset(manifest), SizeMismatch);

    Json j = read_json_file(manifest);
    j.erase("name");
    write_json_file(j, tmp.path / "broken.json");
    CHECK_THROWS_AS(read_manifest(tmp.path / "broken.json"), DataError);
    CHECK_THROWS_AS(read_manifest(tmp.path / "absent.json"), MissingFile);
}

TEST_CASE("bundle round-trip preserves predictions") {
    TempDir tmp("bundle");
    const SyntheticDataset data = generate_synthetic(small_spec());
    PipelineConfig cfg;
    cfg.train.hidden_size = 8;
    cfg.train.max_epochs = 3;
    cfg.validation_size = 30;
    cfg.max_feature_dim = 6;  // forces a projection record
    for (ModelKind kind : {ModelKind::DnnTl, ModelKind::DnnLinear}) {
        const ModelBundle b = train_full_model(data.dataset, kind, cfg, 31);
        const fs::path dir = tmp.path / to_string(kind);
        save_bundle(b, dir);
        const ModelBundle back = load_bundle(dir);
        CHECK(back.kind == kind);
        CHECK(back.seed == 31);
        CHECK(back.split.train_indices == b.split.train_indices);
        CHECK(back.split.validation_indices == b.split.validation_indices);
        CHECK(back.split.test_indices == b.split.test_indices);
        CHECK(back.projections.size() == b.projections.size());
        CHECK(to_json(back.config) == to_json(b.config));
        CHECK(back.test_signature == b.test_signature);
        for (std::size_t r = 0; r < b.rois.size(); ++r) CHECK(back.rois[r].layer_map == b.rois[r].layer_map);

        const auto p0 = predict_bundle(b, data.dataset, b.split.test_indices);
        const auto p1 = predict_bundle(back, data.dataset, b.split.test_indices);
        for (std::size_t r = 0; r < p0.size(); ++r) {
            const double scale = p0[r].cwiseAbs().maxCoeff() + 1.0;
            CHECK((p0[r] - p1[r]).cwiseAbs().maxCoeff() <= 1e-5 * scale);
        }
    }
}

TEST_CASE("bundle errors and forward compatibility") {
    TempDir tmp("bundle_err");
    const SyntheticDataset data = generate_synthetic(small_spec());
    PipelineConfig cfg;
    cfg.validation_size = 30;
    const ModelBundle b = train_full_model(data.dataset, ModelKind::DnnLinear, cfg, 2);
    save_bundle(b, tmp.path / "b");

    Json m = read_json_file(tmp.path / "b" / "manifest.json");
    m["future_field"] = {{"x", 1}};
    write_json_file(m, tmp.path / "b" / "manifest.json");
    const ModelBundle extra = load_bundle(tmp.path / "b");
    REQUIRE(extra.warnings.size() == 1);
    CHECK(extra.warnings[0].find("future_field") != std::string::npos);
    save_bundle(extra, tmp.path / "c");
    CHECK(read_json_file(tmp.path / "c" / "manifest.json")["future_field"]["x"] == 1);

    m["version"] = 2;
    write_json_file(m, tmp.path / "b" / "manifest.json");
    CHECK_THROWS_AS(load_bundle(tmp.path / "b"), SchemaMismatch);

    fs::remove(tmp.path / "c" / "split.json");
    try {
        load_bundle(tmp.path / "c");
        FAIL("expected MissingFile");
    } catch (const MissingFile& e) {
        CHECK(std::string(e.what()).find("split.json") != std::string::npos);
    }
    CHECK_THROWS_AS(load_bundle(tmp.path / "nowhere"), MissingFile);
}

TEST_CASE("report round-trip is field-for-field") {
    const SyntheticDataset data = generate_synthetic(small_spec());
    PipelineConfig cfg;
    cfg.validation_size = 30;
    const ModelBundle a = train_full_model(data.dataset, ModelKind::DnnLinear, cfg, 2);
    ModelBundle b = a;
    EvalConfig ec;
    ec.shuffles = 1000;
    const EvaluationReport rep = comparison_report({a, b}, data.dataset, ec);
    const EvaluationReport back = report_from_json(to_json(rep));
    CHECK(reports_equal(rep, back));
    CHECK(to_json(back).dump() == to_json(rep).dump());
    // a bundle against itself: every scatter point on the diagonal
    for (const auto& c : rep.comparisons) {
        for (const auto& [x, y] : c.scatter) CHECK(x == y);
        if (c.advantage_defined) CHECK(c.advantage.advantage_fraction == 0.5);
    }
    b.test_signature = "other:1:1";
    CHECK_THROWS_AS(comparison_report({a, b}, data.dataset, ec), PartitionMismatch);
}
