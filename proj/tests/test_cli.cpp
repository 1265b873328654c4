#include "voxelforge/cli.hpp"
#include "voxelforge/data_io.hpp"

#include <doctest.h>

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
        path = fs::temp_directory_path() / ("voxelforge_cli_" + tag + "_" + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// 500 estimation samples, 2 layers, 60 voxels
fs::path write_spec(const fs::path& dir) {
    SyntheticSpec s;
    s.samples = 500;
    s.test_samples = 100;
    s.layer_dims = {24, 24};
    s.noise_sigma = 0.3;
    s.rois = {{"alpha", 15, 15, 5, 0, 0}, {"beta", 20, 0, 5, 0, 0}};
    const fs::path p = dir / "spec.json";
    write_json_file(to_json(s), p);
    return p;
}

fs::path write_train_config(const fs::path& dir) {
    PipelineConfig cfg;
    cfg.train.hidden_size = 16;
    cfg.train.max_epochs = 15;
    cfg.train.learning_rate = 1e-2;
    cfg.romp.max_sparsity = 8;
    cfg.validation_size = 100;
    Json j = to_json(cfg);
    j["eval"] = {{"shuffles", 1000}, {"permutations", 500}};
    const fs::path p = dir / "train.json";
    write_json_file(j, p);
    return p;
}

// synth -> train x2 -> compare; returns the report path
fs::path pipeline(const fs::path& root, const std::string& seed) {
    const fs::path spec = write_spec(root);
    const fs::path cfg = write_train_config(root);
    const std::string data = (root / "data").string();
    REQUIRE(run({"synth", "--spec", spec.string(), "--seed", seed, "--out", data}).code == 0);
    const std::string manifest = (root / "data" / "manifest.json").string();
    for (const char* kind : {"dnn-tl", "dnn-linear"}) {
        const Outcome o = run({"train", "--dataset", manifest, "--model", kind, "--config", cfg.string(),
                               "--seed", seed, "--out", (root / kind).string()});
        REQUIRE_MESSAGE(o.code == 0, o.err);
    }
    const fs::path report = root / "report.json";
    const Outcome o = run({"compare", "--bundle-a", (root / "dnn-tl").string(), "--bundle-b",
                           (root / "dnn-linear").string(), "--config", cfg.string(), "--seed", seed,
                           "--out", report.string()});
    REQUIRE_MESSAGE(o.code == 0, o.err);
    return report;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
    const Outcome o = run({"train"});
    CHECK(o.code == cli::kUsage);
    CHECK(o.err.find("--dataset") != std::string::npos);
    CHECK(run({}).code == cli::kUsage);
    CHECK(run({"frobnicate"}).code == cli::kUsage);
    CHECK(run({"train", "--dataset", "x", "--out", "y", "--seed", "abc"}).code == cli::kUsage);
    CHECK(run({"compare", "--model", "only-one", "--out", "r.json"}).code == cli::kUsage);
    CHECK(run({"--help"}).code == cli::kOk);
}

TEST_CASE("data errors exit 2 with key=value diagnostics") {
    TempDir tmp("data");
    const Outcome missing = run({"train", "--dataset", (tmp.path / "nope.json").string(), "--out",
                                 (tmp.path / "b").string()});
    CHECK(missing.code == cli::kDataError);
    CHECK(missing.err.find("level=error") != std::string::npos);
    CHECK(missing.err.find("event=") != std::string::npos);
    CHECK(missing.out.empty());

    std::ofstream(tmp.path / "bad.json") << "{ not json";
    CHECK(run({"synth", "--spec", (tmp.path / "bad.json").string(), "--out", (tmp.path / "d").string()}).code ==
          cli::kDataError);
    CHECK(run({"evaluate", "--model", (tmp.path / "none").string(), "--out", (tmp.path / "r.json").string()})
              .code == cli::kDataError);
    CHECK(run({"report", (tmp.path / "none.json").string(), "--out", (tmp.path / "p").string()}).code ==
          cli::kDataError);
}

TEST_CASE("synth writes only under --out") {
    TempDir tmp("synth");
    const fs::path spec = write_spec(tmp.path);
    REQUIRE(run({"synth", "--spec", spec.string(), "--out", (tmp.path / "d").string()}).code == 0);
    std::vector<std::string> entries;
    for (const auto& e : fs::directory_iterator(tmp.path)) entries.push_back(e.path().filename().string());
    std::sort(entries.begin(), entries.end());
    CHECK(entries == std::vector<std::string>{"d", "spec.json"});
    CHECK(fs::exists(tmp.path / "d" / "manifest.json"));
    CHECK(fs::exists(tmp.path / "d" / "ground_truth.json"));
}

TEST_CASE("full pipeline produces a report, plots and identical reruns") {
    TempDir a("run_a"), b("run_b");
    const fs::path ra = pipeline(a.path, "77");
    const fs::path rb = pipeline(b.path, "77");
    const std::string text = slurp(ra);
    CHECK(text == slurp(rb));

    const Json j = Json::parse(text);
    CHECK(j["format"] == "voxelforge-report");
    CHECK(j["models"].size() == 2);
    CHECK(j["comparisons"].size() == 2);  // one per ROI

    const Outcome plots = run({"report", ra.string(), "--out", (a.path / "plots").string()});
    CHECK(plots.code == 0);
    int svg = 0;
    for (const auto& e : fs::directory_iterator(a.path / "plots")) svg += e.path().extension() == ".svg";
    CHECK(svg == 6);

    const Outcome eval = run({"evaluate", "--model", (a.path / "dnn-tl").string(), "--shuffles", "1000",
                              "--out", (a.path / "single.json").string()});
    CHECK(eval.code == 0);
    CHECK(eval.err.find("event=accuracy") != std::string::npos);
    CHECK(Json::parse(slurp(a.path / "single.json"))["models"].size() == 1);

    // shuffles below 1/p is a validation error
    CHECK(run({"evaluate", "--model", (a.path / "dnn-tl").string(), "--shuffles", "200", "--out",
               (a.path / "x.json").string()})
              .code == cli::kDataError);

    // a different seed changes the report
    TempDir c("run_c");
    CHECK(slurp(pipeline(c.path, "78")) != text);
}
