#include "voxelforge/cli.hpp"

#include "voxelforge/data_io.hpp"
#include "voxelforge/errors.hpp"
#include "voxelforge/gabor.hpp"
#include "voxelforge/parallel.hpp"
#include "voxelforge/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <optional>
#include <sstream>

namespace voxelforge::cli {

namespace {

class Logger {
public:
    explicit Logger(std::ostream& err) : err_(err) {}
    void operator()(const std::string& level, const std::string& fields) const {
        err_ << "level=" << level << ' ' << fields << '\n';
        err_.flush();
    }
    void info(const std::string& fields) const { (*this)("info", fields); }
    void warn(const std::string& fields) const { (*this)("warn", fields); }
    void error(const std::string& fields) const { (*this)("error", fields); }

private:
    std::ostream& err_;
};

std::string kv_quote(const std::string& s) {
    if (s.find_first_of(" \t\"=") == std::string::npos && !s.empty()) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c == '\n' ? ' ' : c);
    }
    return out + "\"";
}

// values shared by several subcommands; unset optionals fall back to the
// config file, then to the defaults
struct Common {
    std::string dataset;
    std::string config;
    std::optional<Seed> seed;
    std::string out;
    std::vector<std::string> models;
    std::optional<double> threshold;
    std::optional<int> shuffles;
    std::optional<int> permutations;
    std::string plots;
    std::string input;
    std::string images;
    bool dc_channel = false;
    std::string bundle_a, bundle_b;
};

Json load_config(const std::string& path) {
    if (path.empty()) return Json::object();
    if (!fs::exists(path)) throw MissingFile("config file " + path + " does not exist");
    Json j = read_json_file(path);
    if (!j.is_object()) throw SchemaMismatch("config file must hold a JSON object");
    return j;
}

Seed resolve_seed(const Common& c, const Json& cfg) {
    if (c.seed) return *c.seed;
    try {
        if (cfg.contains("seed")) return cfg["seed"].get<Seed>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaMismatch("config seed must be a non-negative integer");
    }
    return kDefaultSeed;
}

EvalConfig resolve_eval(const Common& c, const Json& cfg, Seed seed) {
    EvalConfig e;
    e.seed = seed;
    if (cfg.contains("eval")) {
        const Json& j = cfg["eval"];
        try {
            e.shuffles = j.value("shuffles", e.shuffles);
            e.permutations = j.value("permutations", e.permutations);
            e.p_level = j.value("p_level", e.p_level);
            e.histogram_bins = j.value("histogram_bins", e.histogram_bins);
            if (j.contains("threshold") && !j["threshold"].is_null()) e.threshold = j["threshold"].get<double>();
        } catch (const nlohmann::json::exception& ex) {
            throw SchemaMismatch(std::string("config eval section: ") + ex.what());
        }
    }
    if (c.shuffles) e.shuffles = *c.shuffles;
    if (c.permutations) e.permutations = *c.permutations;
    if (c.threshold) e.threshold = *c.threshold;
    if (e.shuffles < 1) throw InvalidConfig("shuffles must be >= 1");
    if (e.permutations < 1) throw InvalidConfig("permutations must be >= 1");
    if (e.threshold && !(*e.threshold >= -1 && *e.threshold <= 1)) {
        throw InvalidConfig("threshold must lie in [-1, 1]");
    }
    return e;
}

Dataset dataset_for(const Common& c, const ModelBundle& first, const Logger& log) {
    std::string path = c.dataset.empty() ? first.dataset_manifest : c.dataset;
    if (path.empty()) throw MissingFile("no dataset given and the model does not record one");
    log.info("event=load_dataset path=" + kv_quote(path));
    return load_dataset(path);
}

void write_report(const EvaluationReport& rep, const Common& c, const Logger& log) {
    write_json_file(to_json(rep), c.out);
    log.info("event=report_written path=" + kv_quote(c.out));
    if (!c.plots.empty()) {
        const auto files = write_report_plots(rep, c.plots);
        log.info("event=plots_written dir=" + kv_quote(c.plots) + " files=" + std::to_string(files.size()));
    }
    for (const auto& m : rep.models) {
        for (const auto& e : m.rois) {
            std::ostringstream s;
            s << "event=accuracy model=" << m.label << " roi=" << kv_quote(e.roi)
              << " mean_c=" << e.accuracy.mean_defined() << " threshold=" << e.significance.threshold
              << " significant_fraction=" << e.curve.significant_fraction;
            log.info(s.str());
        }
    }
    for (const auto& cmp : rep.comparisons) {
        std::ostringstream s;
        s << "event=comparison roi=" << kv_quote(cmp.roi) << " a=" << cmp.model_a << " b=" << cmp.model_b
          << " threshold=" << cmp.threshold << " a_higher=" << cmp.fraction_a_higher
          << " b_higher=" << cmp.fraction_b_higher << " advantage=" << cmp.advantage.advantage_fraction
          << " band=" << cmp.advantage.significance_band
          << " significant=" << (cmp.advantage.significant ? "true" : "false");
        log.info(s.str());
    }
}

int cmd_synth(const Common& c, const Logger& log) {
    const Json cfg = load_config(c.config);
    SyntheticSpec spec = synthetic_spec_from_json(cfg);
    spec.seed = resolve_seed(c, cfg);
    if (c.out.empty()) throw InvalidConfig("synth needs --out");
    spec.validate();
    const auto data = generate_synthetic(spec);
    const fs::path manifest = write_synthetic(data, c.out);
    // pipeline config matching the generated stimuli
    PipelineConfig pc;
    pc.gabor = spec.gabor;
    pc.validation_size = std::min<Index>(pc.validation_size, spec.samples / 4);
    Json pj = to_json(pc);
    pj["seed"] = spec.seed;
    write_json_file(pj, fs::path(c.out) / "pipeline_config.json");
    log.info("event=synth_done manifest=" + kv_quote(manifest.string()) + " seed=" + std::to_string(spec.seed) +
             " samples=" + std::to_string(spec.samples + spec.test_samples));
    return kOk;
}

int cmd_gabor(const Common& c, const Logger& log) {
    const Json cfg = load_config(c.config);
    if (c.dataset.empty() == c.images.empty()) throw InvalidConfig("gabor-extract needs one of --dataset or --images");
    if (c.out.empty()) throw InvalidConfig("gabor-extract needs --out");
    PipelineConfig pc = pipeline_config_from_json(cfg);
    if (c.dc_channel) pc.gabor.dc_channel = true;
    pc.gabor.validate();
    const std::vector<StimulusImage> images =
        c.images.empty() ? load_dataset(c.dataset).stimuli : load_images(c.images);
    if (images.empty()) throw EmptyInput("no stimulus images to process");
    const GaborBank bank = build_bank(pc.gabor);
    log.info("event=gabor_bank features=" + std::to_string(bank.feature_dim()) +
             " images=" + std::to_string(images.size()) + " threads=" + std::to_string(thread_budget()));
    const FeatureMatrix f = extract_batch(images, bank);
    write_matrix(f, c.out);
    log.info("event=gabor_written path=" + kv_quote(c.out) + " rows=" + std::to_string(f.rows()) +
             " cols=" + std::to_string(f.cols()));
    return kOk;
}

int cmd_train(const Common& c, const Logger& log) {
    const Json cfg = load_config(c.config);
    if (c.dataset.empty()) throw InvalidConfig("train needs --dataset");
    if (c.out.empty()) throw InvalidConfig("train needs --out");
    if (c.models.size() > 1) throw InvalidConfig("train takes a single --model");
    std::string kind_text = cfg.value("model", std::string("dnn-tl"));
    if (!c.models.empty()) kind_text = c.models.front();
    const ModelKind kind = parse_model_kind(kind_text);
    const Seed seed = resolve_seed(c, cfg);
    const PipelineConfig pc = pipeline_config_from_json(cfg);
    const Dataset d = load_dataset(c.dataset);
    log.info("event=train_start model=" + to_string(kind) + " seed=" + std::to_string(seed) +
             " dataset=" + kv_quote(d.manifest.name) + " threads=" + std::to_string(thread_budget()));
    const auto t0 = std::chrono::steady_clock::now();
    const ModelBundle b = train_full_model(d, kind, pc, seed, [&](const std::string& s) { log.info(s); });
    for (const auto& w : b.warnings) log.warn("event=training_warning message=" + kv_quote(w));
    save_bundle(b, c.out);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.info("event=train_done bundle=" + kv_quote(c.out) + " seconds=" + std::to_string(secs));
    return kOk;
}

std::vector<ModelBundle> load_models(const Common& c, const Logger& log) {
    std::vector<ModelBundle> bundles;
    for (const auto& m : c.models) {
        bundles.push_back(load_bundle(m));
        for (const auto& w : bundles.back().warnings) log.warn("event=bundle_warning model=" + kv_quote(m) + " message=" + kv_quote(w));
    }
    return bundles;
}

int cmd_evaluate(const Common& c, const Logger& log) {
    const Json cfg = load_config(c.config);
    if (c.models.size() != 1) throw InvalidConfig("evaluate needs exactly one --model");
    const auto bundles = load_models(c, log);
    const Dataset d = dataset_for(c, bundles.front(), log);
    const EvalConfig e = resolve_eval(c, cfg, resolve_seed(c, cfg));
    write_report(evaluate_bundle(bundles.front(), d, e), c, log);
    return kOk;
}

int cmd_compare(const Common& c, const Logger& log) {
    const Json cfg = load_config(c.config);
    if (c.models.size() < 2) throw InvalidConfig("compare needs at least two --model bundles");
    const auto bundles = load_models(c, log);
    const Dataset d = dataset_for(c, bundles.front(), log);
    const EvalConfig e = resolve_eval(c, cfg, resolve_seed(c, cfg));
    write_report(comparison_report(bundles, d, e), c, log);
    return kOk;
}

int cmd_report(const Common& c, const Logger& log) {
    if (c.input.empty()) throw InvalidConfig("report needs a report file");
    const std::string dir = !c.plots.empty() ? c.plots : c.out;
    if (dir.empty()) throw InvalidConfig("report needs --out (plot directory)");
    if (!fs::exists(c.input)) throw MissingFile("report " + c.input + " does not exist");
    const EvaluationReport rep = report_from_json(read_json_file(c.input));
    const auto files = write_report_plots(rep, dir);
    log.info("event=plots_written dir=" + kv_quote(dir) + " files=" + std::to_string(files.size()));
    return kOk;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    const Logger log(err);
    CLI::App app{"voxelforge: encoding models for voxel responses", "voxelforge"};
    app.require_subcommand(1);
    Common c;

    auto add_config = [&](CLI::App* s) { s->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile); };
    auto add_seed = [&](CLI::App* s) { s->add_option("--seed", c.seed, "random seed (default 1750)"); };
    auto add_eval = [&](CLI::App* s) {
        s->add_option("--shuffles", c.shuffles, "randomization shuffles per voxel");
        s->add_option("--permutations", c.permutations, "sign-flip permutations");
        s->add_option("--threshold", c.threshold, "accuracy threshold for comparisons");
        s->add_option("--plots", c.plots, "directory for SVG plots");
        s->add_option("--dataset", c.dataset, "dataset manifest (defaults to the one the model records)");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config,--spec", c.config, "synthetic spec (JSON)")->check(CLI::ExistingFile);
    add_seed(synth);
    synth->add_option("--out", c.out, "output directory")->required();

    auto* gabor = app.add_subcommand("gabor-extract", "compute Gabor energies for the dataset stimuli");
    gabor->add_option("--dataset", c.dataset, "dataset manifest with a stimulus directory");
    gabor->add_option("--images", c.images, "image directory or list file (.pgm / .nenc)");
    add_config(gabor);
    gabor->add_flag("--dc-channel", c.dc_channel, "append mean luminance as one extra feature");
    gabor->add_option("--out", c.out, "output .nenc matrix")->required();

    auto* train = app.add_subcommand("train", "train a model bundle");
    train->add_option("--dataset", c.dataset, "dataset manifest")->required();
    train->add_option("--model", c.models, "gwp | dnn-linear | dnn-tl");
    add_config(train);
    add_seed(train);
    train->add_option("--out", c.out, "bundle directory")->required();

    auto* evaluate = app.add_subcommand("evaluate", "score one bundle on the test block");
    evaluate->add_option("--model,--bundle", c.models, "bundle directory")->required();
    add_eval(evaluate);
    add_config(evaluate);
    add_seed(evaluate);
    evaluate->add_option("--out", c.out, "report JSON")->required();

    auto* compare = app.add_subcommand("compare", "compare bundles voxel by voxel");
    compare->add_option("--model", c.models, "bundle directories (two or more)");
    compare->add_option("--bundle-a", c.bundle_a, "first bundle");
    compare->add_option("--bundle-b", c.bundle_b, "second bundle");
    add_eval(compare);
    add_config(compare);
    add_seed(compare);
    compare->add_option("--out", c.out, "report JSON")->required();

    auto* report = app.add_subcommand("report", "render plots from a saved report");
    report->add_option("report", c.input, "report JSON")->required();
    report->add_option("--out,--plots", c.out, "plot directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        log.error("event=usage message=" + kv_quote(e.what()));
        err << app.help();
        return kUsage;
    }

    try {
        if (*synth) return cmd_synth(c, log);
        if (*gabor) return cmd_gabor(c, log);
        if (*train) return cmd_train(c, log);
        if (*evaluate) return cmd_evaluate(c, log);
        if (*compare) {
            if (!c.bundle_b.empty()) c.models.insert(c.models.begin(), c.bundle_b);
            if (!c.bundle_a.empty()) c.models.insert(c.models.begin(), c.bundle_a);
            if (c.models.size() < 2) {
                log.error("event=usage message=\"compare needs at least two bundles\"");
                err << compare->help();
                return kUsage;
            }
            return cmd_compare(c, log);
        }
        if (*report) return cmd_report(c, log);
    } catch (const InvalidConfig& e) {
        log.error("event=invalid_config message=" + kv_quote(e.what()));
        return kDataError;
    } catch (const DataError& e) {
        log.error("event=data_error message=" + kv_quote(e.what()));
        return kDataError;
    } catch (const std::exception& e) {
        log.error("event=runtime_error message=" + kv_quote(e.what()));
        return kRuntimeError;
    }
    return kUsage;
}

}  // namespace voxelforge::cli
