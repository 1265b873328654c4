#include "voxelforge/errors.hpp"
#include "voxelforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace voxelforge {

namespace {

constexpr const char* kReportFormat = "voxelforge-report";
constexpr std::uint64_t kSignificanceStream = 0x5160;
constexpr std::uint64_t kAdvantageStream = 0xAD00;

Json num(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }
double num_or_nan(const Json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}
Json nums(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}
std::vector<double> nums_from(const Json& j) {
    std::vector<double> v;
    for (const auto& x : j) v.push_back(num_or_nan(x));
    return v;
}

double global_threshold(const SignificanceResult& s) {
    // every voxel excluded: nothing can pass
    return std::isnan(s.threshold) ? 1.0 : s.threshold;
}

ModelEvaluation evaluate_model(const ModelBundle& bundle, const Dataset& dataset,
                               const EvalConfig& config, const std::string& label) {
    if (bundle.test_signature != dataset.manifest.test_signature()) {
        throw PartitionMismatch("bundle was trained on test block '" + bundle.test_signature +
                                "' but the dataset declares '" + dataset.manifest.test_signature() + "'");
    }
    if (bundle.split.test_indices.empty()) throw EmptyInput("dataset has no test samples");
    const auto preds = predict_bundle(bundle, dataset, bundle.split.test_indices);
    ModelEvaluation m;
    m.label = label;
    m.kind = to_string(bundle.kind);
    for (std::size_t r = 0; r < preds.size(); ++r) {
        ResponseMatrix measured(static_cast<Index>(bundle.split.test_indices.size()), dataset.responses[r].cols());
        for (std::size_t i = 0; i < bundle.split.test_indices.size(); ++i) {
            measured.row(static_cast<Index>(i)) = dataset.responses[r].row(bundle.split.test_indices[i]);
        }
        RoiEvaluation e;
        e.roi = bundle.rois[r].name;
        e.accuracy = accuracy(measured, preds[r]);
        e.significance = randomization_threshold(measured, preds[r], config.shuffles, config.p_level,
                                                 derive_seed(config.seed, kSignificanceStream + r));
        e.curve = sorted_curves({{label, e.accuracy}}, global_threshold(e.significance)).at(label);
        m.rois.push_back(std::move(e));
    }
    return m;
}

std::vector<std::string> unique_labels(const std::vector<ModelBundle>& bundles) {
    std::vector<std::string> labels;
    for (const auto& b : bundles) {
        std::string base = to_string(b.kind);
        std::string label = base;
        int k = 1;
        while (std::find(labels.begin(), labels.end(), label) != labels.end()) {
            label = base + "#" + std::to_string(++k);
        }
        labels.push_back(label);
    }
    return labels;
}

Histogram histogram(const std::vector<double>& values, int bins) {
    Histogram h;
    for (int i = 0; i <= bins; ++i) h.edges.push_back(-1.0 + 2.0 * i / bins);
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    for (double x : values) {
        int b = static_cast<int>(std::floor((x + 1.0) / 2.0 * bins));
        b = std::clamp(b, 0, bins - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

RoiComparison compare_roi(const RoiEvaluation& a, const RoiEvaluation& b, const std::string& la,
                          const std::string& lb, const EvalConfig& config, std::size_t roi_index) {
    RoiComparison c;
    c.roi = a.roi;
    c.model_a = la;
    c.model_b = lb;
    c.threshold = config.threshold.value_or(
        std::max(global_threshold(a.significance), global_threshold(b.significance)));
    int a_higher = 0, b_higher = 0;
    for (std::size_t v = 0; v < a.accuracy.size(); ++v) {
        const double ca = a.accuracy.values[v], cb = b.accuracy.values[v];
        if (std::isnan(ca) || std::isnan(cb)) continue;
        c.scatter.emplace_back(ca, cb);
        if (ca > c.threshold && cb > c.threshold) {
            c.differences.push_back(ca - cb);
            if (ca > cb) ++a_higher;
            if (cb > ca) ++b_higher;
        }
    }
    c.histogram = histogram(c.differences, config.histogram_bins);
    if (!c.differences.empty()) {
        c.fraction_a_higher = static_cast<double>(a_higher) / c.differences.size();
        c.fraction_b_higher = static_cast<double>(b_higher) / c.differences.size();
    }
    try {
        c.advantage = model_advantage(a.accuracy, b.accuracy, c.threshold, config.permutations,
                                      derive_seed(config.seed, kAdvantageStream + roi_index));
    } catch (const NoEligibleVoxels&) {
        c.advantage_defined = false;
        c.advantage = AdvantageResult{};
    }
    c.curves = sorted_curves({{la, a.accuracy}, {lb, b.accuracy}}, c.threshold);
    return c;
}

Json curve_json(const AccuracyCurve& c) {
    return {{"accuracies", nums(c.accuracies)},
            {"significant_fraction", num(c.significant_fraction)},
            {"voxel_count", c.voxel_count}};
}
AccuracyCurve curve_from(const Json& j) {
    return {nums_from(j.at("accuracies")), num_or_nan(j.at("significant_fraction")),
            j.at("voxel_count").get<int>()};
}

Json bools(const std::vector<bool>& v) {
    Json a = Json::array();
    for (bool b : v) a.push_back(b);
    return a;
}

}  // namespace

EvaluationReport evaluate_bundle(const ModelBundle& bundle, const Dataset& dataset, const EvalConfig& config) {
    return comparison_report({bundle}, dataset, config);
}

EvaluationReport comparison_report(const std::vector<ModelBundle>& bundles, const Dataset& dataset,
                                   const EvalConfig& config) {
    if (bundles.empty()) throw EmptyInput("no models to evaluate");
    if (config.shuffles < 1 || config.permutations < 1) throw InvalidConfig("shuffles and permutations must be >= 1");
    if (!(config.p_level > 0 && config.p_level < 1)) throw InvalidConfig("p level must lie in (0, 1)");
    if (config.histogram_bins < 1) throw InvalidConfig("histogram bins must be >= 1");
    for (const auto& b : bundles) {
        if (b.test_signature != bundles.front().test_signature) {
            throw PartitionMismatch("models were trained on different test blocks ('" +
                                    bundles.front().test_signature + "' vs '" + b.test_signature + "')");
        }
        if (b.split.test_indices != bundles.front().split.test_indices) {
            throw PartitionMismatch("models hold out different test samples");
        }
    }
    EvaluationReport rep;
    rep.dataset = dataset.manifest.name;
    rep.test_signature = dataset.manifest.test_signature();
    rep.config = config;
    const auto labels = unique_labels(bundles);
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        rep.models.push_back(evaluate_model(bundles[i], dataset, config, labels[i]));
    }
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        for (std::size_t j = i + 1; j < bundles.size(); ++j) {
            for (std::size_t r = 0; r < rep.models[i].rois.size(); ++r) {
                rep.comparisons.push_back(compare_roi(rep.models[i].rois[r], rep.models[j].rois[r],
                                                      labels[i], labels[j], config, r));
            }
        }
    }
    return rep;
}

Json to_json(const EvaluationReport& rep) {
    Json j;
    j["format"] = kReportFormat;
    j["version"] = rep.version;
    j["dataset"] = rep.dataset;
    j["test_signature"] = rep.test_signature;
    j["config"] = {{"shuffles", rep.config.shuffles},
                   {"p_level", rep.config.p_level},
                   {"permutations", rep.config.permutations},
                   {"threshold", rep.config.threshold ? Json(*rep.config.threshold) : Json(nullptr)},
                   {"seed", rep.config.seed},
                   {"histogram_bins", rep.config.histogram_bins}};
    Json models = Json::array();
    for (const auto& m : rep.models) {
        Json rois = Json::array();
        for (const auto& e : m.rois) {
            const auto& s = e.significance;
            rois.push_back({{"roi", e.roi},
                            {"accuracy", nums(e.accuracy.values)},
                            {"defined", bools(e.accuracy.defined)},
                            {"voxel_ids", e.accuracy.voxel_ids},
                            {"significance",
                             {{"threshold", num(s.threshold)},
                              {"p_level", s.p_level},
                              {"null_samples_per_voxel", s.null_samples_per_voxel},
                              {"per_voxel_threshold", nums(s.per_voxel_threshold)},
                              {"significant", bools(s.significant)},
                              {"significant_per_voxel", bools(s.significant_per_voxel)},
                              {"excluded_voxels", s.excluded_voxels}}},
                            {"curve", curve_json(e.curve)}});
        }
        models.push_back({{"label", m.label}, {"kind", m.kind}, {"rois", rois}});
    }
    j["models"] = models;
    Json comps = Json::array();
    for (const auto& c : rep.comparisons) {
        Json scatter = Json::array();
        for (const auto& [a, b] : c.scatter) scatter.push_back({num(a), num(b)});
        Json curves = Json::object();
        for (const auto& [k, v] : c.curves) curves[k] = curve_json(v);
        comps.push_back({{"roi", c.roi},
                         {"model_a", c.model_a},
                         {"model_b", c.model_b},
                         {"threshold", num(c.threshold)},
                         {"scatter", scatter},
                         {"differences", nums(c.differences)},
                         {"histogram", {{"edges", nums(c.histogram.edges)}, {"counts", c.histogram.counts}}},
                         {"fraction_a_higher", num(c.fraction_a_higher)},
                         {"fraction_b_higher", num(c.fraction_b_higher)},
                         {"advantage",
                          {{"defined", c.advantage_defined},
                           {"advantage_fraction", num(c.advantage.advantage_fraction)},
                           {"significance_band", num(c.advantage.significance_band)},
                           {"significant", c.advantage.significant},
                           {"eligible_voxel_count", c.advantage.eligible_voxel_count}}},
                         {"curves", curves}});
    }
    j["comparisons"] = comps;
    return j;
}

EvaluationReport report_from_json(const Json& j) {
    if (j.value("format", std::string{}) != kReportFormat) throw SchemaMismatch("not an evaluation report");
    if (j.value("version", 0) != 1) throw SchemaMismatch("unsupported report version");
    EvaluationReport rep;
    try {
        rep.version = j.at("version").get<int>();
        rep.dataset = j.at("dataset").get<std::string>();
        rep.test_signature = j.at("test_signature").get<std::string>();
        const Json& c = j.at("config");
        rep.config.shuffles = c.at("shuffles").get<int>();
        rep.config.p_level = c.at("p_level").get<double>();
        rep.config.permutations = c.at("permutations").get<int>();
        if (!c.at("threshold").is_null()) rep.config.threshold = c.at("threshold").get<double>();
        rep.config.seed = c.at("seed").get<Seed>();
        rep.config.histogram_bins = c.at("histogram_bins").get<int>();
        for (const auto& jm : j.at("models")) {
            ModelEvaluation m;
            m.label = jm.at("label").get<std::string>();
            m.kind = jm.at("kind").get<std::string>();
            for (const auto& je : jm.at("rois")) {
                RoiEvaluation e;
                e.roi = je.at("roi").get<std::string>();
                e.accuracy.values = nums_from(je.at("accuracy"));
                e.accuracy.defined = je.at("defined").get<std::vector<bool>>();
                e.accuracy.voxel_ids = je.at("voxel_ids").get<std::vector<int>>();
                const Json& s = je.at("significance");
                e.significance.threshold = num_or_nan(s.at("threshold"));
                e.significance.p_level = s.at("p_level").get<double>();
                e.significance.null_samples_per_voxel = s.at("null_samples_per_voxel").get<int>();
                e.significance.per_voxel_threshold = nums_from(s.at("per_voxel_threshold"));
                e.significance.significant = s.at("significant").get<std::vector<bool>>();
                e.significance.significant_per_voxel = s.at("significant_per_voxel").get<std::vector<bool>>();
                e.significance.excluded_voxels = s.at("excluded_voxels").get<std::vector<int>>();
                e.curve = curve_from(je.at("curve"));
                m.rois.push_back(std::move(e));
            }
            rep.models.push_back(std::move(m));
        }
        for (const auto& jc : j.at("comparisons")) {
            RoiComparison c;
            c.roi = jc.at("roi").get<std::string>();
            c.model_a = jc.at("model_a").get<std::string>();
            c.model_b = jc.at("model_b").get<std::string>();
            c.threshold = num_or_nan(jc.at("threshold"));
            for (const auto& p : jc.at("scatter")) c.scatter.emplace_back(num_or_nan(p.at(0)), num_or_nan(p.at(1)));
            c.differences = nums_from(jc.at("differences"));
            c.histogram.edges = nums_from(jc.at("histogram").at("edges"));
            c.histogram.counts = jc.at("histogram").at("counts").get<std::vector<int>>();
            c.fraction_a_higher = num_or_nan(jc.at("fraction_a_higher"));
            c.fraction_b_higher = num_or_nan(jc.at("fraction_b_higher"));
            const Json& a = jc.at("advantage");
            c.advantage_defined = a.at("defined").get<bool>();
            c.advantage.advantage_fraction = num_or_nan(a.at("advantage_fraction"));
            c.advantage.significance_band = num_or_nan(a.at("significance_band"));
            c.advantage.significant = a.at("significant").get<bool>();
            c.advantage.eligible_voxel_count = a.at("eligible_voxel_count").get<int>();
            for (const auto& [k, v] : jc.at("curves").items()) c.curves[k] = curve_from(v);
            rep.comparisons.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaMismatch(std::string("report: ") + e.what());
    }
    return rep;
}

bool reports_equal(const EvaluationReport& a, const EvaluationReport& b) {
    // the JSON form covers every field and maps NaN to null on both sides
    return to_json(a) == to_json(b);
}

// --- SVG ------------------------------------------------------------------

namespace {

struct Svg {
    std::ostringstream body;
    double w = 420, h = 420, pad = 50;

    double sx(double x, double lo, double hi) const { return pad + (x - lo) / (hi - lo) * (w - 2 * pad); }
    double sy(double y, double lo, double hi) const { return h - pad - (y - lo) / (hi - lo) * (h - 2 * pad); }

    void line(double x1, double y1, double x2, double y2, const char* stroke, bool dashed = false) {
        body << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2 << "\" y2=\"" << y2
             << "\" stroke=\"" << stroke << "\"" << (dashed ? " stroke-dasharray=\"4 3\"" : "") << "/>\n";
    }
    void text(double x, double y, const std::string& t, const char* anchor = "middle") {
        body << "<text x=\"" << x << "\" y=\"" << y << "\" font-size=\"12\" text-anchor=\"" << anchor
             << "\">" << t << "</text>\n";
    }
    void frame(const std::string& title, const std::string& xl, const std::string& yl) {
        line(pad, h - pad, w - pad, h - pad, "black");
        line(pad, pad, pad, h - pad, "black");
        text(w / 2, 20, title);
        text(w / 2, h - 12, xl);
        body << "<text x=\"14\" y=\"" << h / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
             << h / 2 << ")\">" << yl << "</text>\n";
    }
    void save(const fs::path& p) const {
        std::ofstream out(p);
        if (!out) throw RuntimeFailure("cannot write " + p.string());
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << body.str() << "</svg>\n";
    }
};

std::string pct(double x) {
    std::ostringstream o;
    o.precision(3);
    o << 100.0 * x << "%";
    return o.str();
}

std::string safe(std::string s) {
    for (char& ch : s) {
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
    }
    return s;
}

void curve_plot(const std::map<std::string, AccuracyCurve>& curves, const std::string& title, const fs::path& p) {
    static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};
    Svg svg;
    std::size_t most = 1;
    for (const auto& [k, c] : curves) most = std::max(most, c.accuracies.size());
    svg.frame(title, "voxel rank", "accuracy");
    int i = 0;
    for (const auto& [k, c] : curves) {
        const char* color = colors[i % 4];
        svg.body << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
        for (std::size_t r = 0; r < c.accuracies.size(); ++r) {
            svg.body << svg.sx(static_cast<double>(r), 0, static_cast<double>(most)) << ","
                     << svg.sy(c.accuracies[r], 0, 1) << " ";
        }
        svg.body << "\"/>\n";
        svg.body << "<text x=\"" << svg.w - svg.pad << "\" y=\"" << svg.pad + 14 * i
                 << "\" font-size=\"12\" text-anchor=\"end\" fill=\"" << color << "\">" << k << " ("
                 << pct(c.significant_fraction) << ")</text>\n";
        ++i;
    }
    svg.save(p);
}

}  // namespace

std::vector<fs::path> write_report_plots(const EvaluationReport& report, const fs::path& dir) {
    fs::create_directories(dir);
    std::vector<fs::path> written;
    if (report.comparisons.empty()) {
        for (const auto& m : report.models) {
            for (const auto& e : m.rois) {
                const fs::path p = dir / ("curve_" + safe(m.label) + "_" + safe(e.roi) + ".svg");
                curve_plot({{m.label, e.curve}}, m.label + " " + e.roi, p);
                written.push_back(p);
            }
        }
        return written;
    }
    for (const auto& c : report.comparisons) {
        const std::string stem = safe(c.model_a) + "_vs_" + safe(c.model_b) + "_" + safe(c.roi);

        Svg sc;
        sc.frame(c.roi + ": " + c.model_a + " vs " + c.model_b, c.model_a, c.model_b);
        const double lo = -0.5, hi = 1.0;
        sc.line(sc.sx(lo, lo, hi), sc.sy(lo, lo, hi), sc.sx(hi, lo, hi), sc.sy(hi, lo, hi), "gray");
        sc.line(sc.sx(c.threshold, lo, hi), sc.pad, sc.sx(c.threshold, lo, hi), sc.h - sc.pad, "gray", true);
        sc.line(sc.pad, sc.sy(c.threshold, lo, hi), sc.w - sc.pad, sc.sy(c.threshold, lo, hi), "gray", true);
        for (const auto& [a, b] : c.scatter) {
            const char* color = "black";
            if (a > c.threshold || b > c.threshold) color = a > b ? "#d62728" : "#17becf";
            sc.body << "<circle cx=\"" << sc.sx(std::clamp(a, lo, hi), lo, hi) << "\" cy=\""
                    << sc.sy(std::clamp(b, lo, hi), lo, hi) << "\" r=\"2\" fill=\"" << color << "\"/>\n";
        }
        written.push_back(dir / ("scatter_" + stem + ".svg"));
        sc.save(written.back());

        Svg hs;
        hs.frame(c.roi + ": " + c.model_a + " - " + c.model_b, "accuracy difference", "voxels");
        const int peak = c.histogram.counts.empty()
                             ? 1
                             : std::max(1, *std::max_element(c.histogram.counts.begin(), c.histogram.counts.end()));
        for (std::size_t i = 0; i < c.histogram.counts.size(); ++i) {
            const double x0 = hs.sx(c.histogram.edges[i], -1, 1), x1 = hs.sx(c.histogram.edges[i + 1], -1, 1);
            const double y = hs.sy(c.histogram.counts[i], 0, peak);
            const char* color = c.histogram.edges[i + 1] <= 0 ? "#17becf" : "#d62728";
            hs.body << "<rect x=\"" << x0 << "\" y=\"" << y << "\" width=\"" << std::max(0.0, x1 - x0 - 1)
                    << "\" height=\"" << hs.h - hs.pad - y << "\" fill=\"" << color << "\"/>\n";
        }
        hs.text(hs.w - hs.pad, hs.pad, c.model_a + " higher: " + pct(c.fraction_a_higher), "end");
        hs.text(hs.pad + 4, hs.pad, c.model_b + " higher: " + pct(c.fraction_b_higher), "start");
        written.push_back(dir / ("histogram_" + stem + ".svg"));
        hs.save(written.back());

        written.push_back(dir / ("curves_" + stem + ".svg"));
        curve_plot(c.curves, c.roi + " sorted accuracy", written.back());
    }
    return written;
}

}  // namespace voxelforge
