#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperdet/core/fft.hpp"
#include "hyperdet/core/log.hpp"
#include "hyperdet/dataset.hpp"
#include "hyperdet/detector.hpp"
#include "hyperdet/filterbank.hpp"
#include "hyperdet/io/plot.hpp"

namespace hyperdet {

// -- metrics ------------------------------------------------------------------

// Rank-based average precision with fakes (label 1) as positives: mean of the
// precision at each positive hit, walking scores in descending order. Ties
// break on the original index so the statistic is deterministic.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
    require(scores.size() == labels.size() && !scores.empty(), errc::shape,
            "average_precision: size mismatch");
    std::size_t positives = 0;
    for (int y : labels) {
        require(y == 0 || y == 1, errc::label, "labels must be 0 or 1");
        positives += std::size_t(y);
    }
    require(positives > 0 && positives < labels.size(), errc::degenerate_ap,
            "average precision needs at least one positive and one negative");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 1; rank <= order.size(); ++rank) {
        if (labels[order[rank - 1]] == 1) {
            hits += 1;
            sum += double(hits) / double(rank);
        }
    }
    return sum / double(positives);
}

struct GeneratorMetrics {
    std::string generator;
    std::size_t count = 0;
    double accuracy = 0.0;          // percent
    std::optional<double> ap;       // percent; empty when the class is degenerate
};

struct Perturbation {
    enum class Kind { none, blur, jpeg };
    Kind kind = Kind::none;
    double param = 0.0;

    std::string descriptor() const {
        switch (kind) {
            case Kind::none: return "none";
            case Kind::blur: return "blur:" + format_param(param);
            case Kind::jpeg: return "jpeg:" + format_param(param);
        }
        return "none";
    }

    static std::string format_param(double v) {
        char buf[32];
        if (v == std::floor(v))
            std::snprintf(buf, sizeof buf, "%.0f", v);
        else
            std::snprintf(buf, sizeof buf, "%g", v);
        return buf;
    }
};

// The published robustness grids.
inline const std::vector<double>& default_blur_sigmas() {
    static const std::vector<double> v = {1, 2, 3, 4};
    return v;
}
inline const std::vector<double>& default_jpeg_qualities() {
    static const std::vector<double> v = {90, 80, 70, 60, 50, 40, 30};
    return v;
}

struct MetricsReport {
    std::vector<GeneratorMetrics> per_generator;
    double avg_acc = 0.0;  // unweighted mean of per-generator accuracies
    double mAP = 0.0;      // unweighted mean of per-generator APs present
    std::string config_hash;
    Perturbation perturbation;

    nlohmann::json to_json() const {
        nlohmann::json gens = nlohmann::json::array();
        for (const auto& g : per_generator) {
            nlohmann::json jg{{"generator", g.generator},
                              {"count", g.count},
                              {"accuracy", g.accuracy}};
            if (g.ap)
                jg["ap"] = *g.ap;
            else
                jg["ap"] = nullptr;
            gens.push_back(std::move(jg));
        }
        return nlohmann::json{{"avg_acc", avg_acc},
                              {"mAP", mAP},
                              {"perturbation", perturbation.descriptor()},
                              {"config_hash", config_hash},
                              {"per_generator", std::move(gens)}};
    }

    std::string csv_text() const {
        std::ostringstream os;
        os << "# config_hash = " << config_hash << "\n";
        os << "generator,count,accuracy,ap,perturbation\n";
        char line[160];
        for (const auto& g : per_generator) {
            if (g.ap)
                std::snprintf(line, sizeof line, "%s,%zu,%.4f,%.4f,%s\n", g.generator.c_str(),
                              g.count, g.accuracy, *g.ap, perturbation.descriptor().c_str());
            else
                std::snprintf(line, sizeof line, "%s,%zu,%.4f,,%s\n", g.generator.c_str(),
                              g.count, g.accuracy, perturbation.descriptor().c_str());
            os << line;
        }
        char total[160];
        std::snprintf(total, sizeof total, "TOTAL,,%.4f,%.4f,%s\n", avg_acc, mAP,
                      perturbation.descriptor().c_str());
        os << total;
        return os.str();
    }

    std::string table_text() const {
        std::ostringstream os;
        os << "generator            count    acc      ap\n";
        char line[128];
        for (const auto& g : per_generator) {
            if (g.ap)
                std::snprintf(line, sizeof line, "%-20s %5zu  %6.2f  %6.2f\n",
                              g.generator.c_str(), g.count, g.accuracy, *g.ap);
            else
                std::snprintf(line, sizeof line, "%-20s %5zu  %6.2f  degenerate\n",
                              g.generator.c_str(), g.count, g.accuracy);
            os << line;
        }
        std::snprintf(line, sizeof line, "%-20s %5s  %6.2f  %6.2f   (avg acc / mAP, %s)\n",
                      "TOTAL", "", avg_acc, mAP, perturbation.descriptor().c_str());
        os << line;
        return os.str();
    }
};

// -- perturbations -------------------------------------------------------------

inline Image perturb(const Image& image, const Perturbation& p) {
    switch (p.kind) {
        case Perturbation::Kind::none:
            return image;
        case Perturbation::Kind::blur: {
            const auto& grid = default_blur_sigmas();
            if (std::find(grid.begin(), grid.end(), p.param) == grid.end())
                log_warn("blur sigma %g is outside the documented grid {1,2,3,4}", p.param);
            require(p.param >= 0.0, errc::config, "blur sigma must be non-negative");
            return gaussian_blur(image, p.param);
        }
        case Perturbation::Kind::jpeg: {
            const auto& grid = default_jpeg_qualities();
            if (std::find(grid.begin(), grid.end(), p.param) == grid.end())
                log_warn("jpeg quality %g is outside the documented grid {90..30}", p.param);
            try {
                return io::decode_jpeg(io::encode_jpeg(to_channels(image, 3), int(p.param)));
            } catch (const Error& e) {
                fail(errc::perturb_codec, std::string("jpeg perturbation failed: ") + e.what());
            }
        }
    }
    return image;
}

inline Perturbation parse_perturbation(const std::string& text) {
    if (text.empty() || text == "none") return Perturbation{};
    const auto colon = text.find(':');
    require(colon != std::string::npos, errc::config,
            "perturbation must look like blur:2 or jpeg:70, got " + text);
    const std::string kind = text.substr(0, colon);
    const double param = std::stod(text.substr(colon + 1));
    if (kind == "blur") return Perturbation{Perturbation::Kind::blur, param};
    if (kind == "jpeg") return Perturbation{Perturbation::Kind::jpeg, param};
    fail(errc::config, "unknown perturbation kind: " + kind);
}

// -- evaluation ----------------------------------------------------------------

// A scorer maps an image to (normalized score in [0,1], predicted-fake flag).
// The production scorer wraps DetectorModel::detect; tests plug in stubs.
struct ScoredPrediction {
    double score = 0.0;
    bool fake = false;
};
using Scorer = std::function<ScoredPrediction(const Image&)>;

inline MetricsReport evaluate_scores(const std::vector<LabeledSample>& samples,
                                     const Scorer& scorer, const Perturbation& perturbation,
                                     const std::string& cfg_hash = "") {
    require(!samples.empty(), errc::ingestion, "evaluate: empty dataset");
    MetricsReport report;
    report.perturbation = perturbation;
    report.config_hash = cfg_hash;

    std::map<std::string, std::vector<std::pair<double, int>>> scored;  // gen -> (score,label)
    std::map<std::string, std::size_t> correct;
    for (const auto& s : samples) {
        Image img = perturb(load_sample_image(s), perturbation);
        const ScoredPrediction pred = scorer(img);
        scored[s.generator].emplace_back(pred.score, s.label);
        if (int(pred.fake) == s.label) correct[s.generator] += 1;
    }

    double acc_sum = 0.0, ap_sum = 0.0;
    std::size_t ap_count = 0;
    for (const auto& [gen, rows] : scored) {
        GeneratorMetrics gm;
        gm.generator = gen;
        gm.count = rows.size();
        gm.accuracy = 100.0 * double(correct[gen]) / double(rows.size());
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& [sc, lb] : rows) {
            scores.push_back(sc);
            labels.push_back(lb);
        }
        try {
            gm.ap = 100.0 * average_precision(scores, labels);
            ap_sum += *gm.ap;
            ap_count += 1;
        } catch (const Error& e) {
            if (e.code() != errc::degenerate_ap) throw;
            log_warn("generator %s has a single class; AP marked degenerate", gen.c_str());
        }
        acc_sum += gm.accuracy;
        report.per_generator.push_back(std::move(gm));
    }
    report.avg_acc = acc_sum / double(report.per_generator.size());
    report.mAP = ap_count ? ap_sum / double(ap_count) : 0.0;
    return report;
}

inline MetricsReport evaluate(DetectorModel& model, const std::vector<LabeledSample>& samples,
                              const Perturbation& perturbation = {},
                              const DetectOptions& opts = {}) {
    return evaluate_scores(
        samples,
        [&](const Image& img) {
            const Verdict v = model.detect(img, opts);
            return ScoredPrediction{v.normalized_score(), v.fake};
        },
        perturbation, config_hash(model.config()));
}

// -- robustness sweep -----------------------------------------------------------

struct SweepPoint {
    Perturbation perturbation;
    MetricsReport report;
};

// One report per grid point. When out_dir is non-empty, writes sweep.csv and
// one line-plot image per metric and perturbation kind.
inline std::vector<SweepPoint> robustness_sweep(DetectorModel& model,
                                                const std::vector<LabeledSample>& samples,
                                                const std::vector<Perturbation>& grid,
                                                const std::filesystem::path& out_dir = {}) {
    std::vector<SweepPoint> points;
    for (const auto& p : grid) {
        log_info("sweep: evaluating %s", p.descriptor().c_str());
        points.push_back(SweepPoint{p, evaluate(model, samples, p)});
    }
    if (!out_dir.empty() && !points.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream csv(out_dir / "sweep.csv");
        require(bool(csv), errc::io, "cannot write sweep.csv");
        csv << "# config_hash = " << points.front().report.config_hash << "\n";
        csv << "kind,param,avg_acc,mAP\n";
        char line[128];
        for (const auto& pt : points) {
            const char* kind = pt.perturbation.kind == Perturbation::Kind::none ? "none"
                               : pt.perturbation.kind == Perturbation::Kind::blur ? "blur"
                                                                                  : "jpeg";
            std::snprintf(line, sizeof line, "%s,%g,%.4f,%.4f\n", kind, pt.perturbation.param,
                          pt.report.avg_acc, pt.report.mAP);
            csv << line;
        }

        for (auto kind : {Perturbation::Kind::blur, Perturbation::Kind::jpeg}) {
            io::PlotSeries acc, ap;
            for (const auto& pt : points) {
                if (pt.perturbation.kind != kind) continue;
                acc.x.push_back(pt.perturbation.param);
                acc.y.push_back(pt.report.avg_acc);
                ap.x.push_back(pt.perturbation.param);
                ap.y.push_back(pt.report.mAP);
            }
            if (acc.x.empty()) continue;
            const std::string kname = kind == Perturbation::Kind::blur ? "blur" : "jpeg";
            const std::string xlabel =
                kind == Perturbation::Kind::blur ? "SIGMA" : "JPEG QUALITY";
            acc.label = "AVG ACC";
            ap.label = "MAP";
            io::render_line_plot(out_dir / ("sweep_acc_" + kname + ".png"), {acc},
                                 "ACCURACY VS " + xlabel, xlabel, "AVG ACC");
            io::render_line_plot(out_dir / ("sweep_map_" + kname + ".png"), {ap},
                                 "MAP VS " + xlabel, xlabel, "MAP");
        }
    }
    return points;
}

// -- averaged spectrum -----------------------------------------------------------

struct SpectrumResult {
    std::size_t size = 0;
    std::vector<double> log_magnitude;  // mean over images of log(1+|F|), DC centered
    std::vector<double> power;          // mean over images of |F|^2, DC centered
    double low_band_fraction = 0.0;     // power in the central size/8 box / total power

    // normalized to [0,1] for display
    std::vector<double> display_map() const {
        double mx = 0.0;
        for (double v : log_magnitude) mx = std::max(mx, v);
        std::vector<double> out(log_magnitude.size());
        if (mx > 0.0)
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_magnitude[i] / mx;
        return out;
    }
};

// Mean log-magnitude spectrum of (optionally group-filtered) images, resized
// to a square analysis size. group == nullptr analyzes the raw images.
inline SpectrumResult average_spectrum(const std::vector<Image>& images,
                                       const FilterGroup* group, const FilterBank& bank,
                                       std::size_t analysis_size = 128) {
    require(!images.empty(), errc::ingestion, "average_spectrum: no images");
    require(analysis_size >= 8, errc::config, "analysis size must be >= 8");
    const std::size_t n = analysis_size;
    SpectrumResult res;
    res.size = n;
    res.log_magnitude.assign(n * n, 0.0);
    res.power.assign(n * n, 0.0);

    for (const auto& raw : images) {
        Image img = resize_bilinear(to_channels(raw, 3), n, n);
        std::vector<double> field;
        if (group) {
            field = luminance(group_residual(img, *group, bank).pixels);
        } else {
            field = luminance(img);
        }
        const auto spec = fft2d(field, n, n);
        for (std::size_t i = 0; i < n * n; ++i) {
            const double mag = std::abs(spec[i]);
            res.log_magnitude[i] += std::log1p(mag);
            res.power[i] += mag * mag;
        }
    }
    const double inv = 1.0 / double(images.size());
    for (auto& v : res.log_magnitude) v *= inv;
    for (auto& v : res.power) v *= inv;
    res.log_magnitude = fftshift2d(res.log_magnitude, n, n);
    res.power = fftshift2d(res.power, n, n);

    // central low-frequency box of side n/8 around DC at (n/2, n/2)
    const std::size_t side = std::max<std::size_t>(1, n / 8);
    const std::size_t lo = n / 2 - side / 2;
    double box = 0.0, total = 0.0;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            total += res.power[y * n + x];
            if (y >= lo && y < lo + side && x >= lo && x < lo + side)
                box += res.power[y * n + x];
        }
    res.low_band_fraction = total > 0.0 ? box / total : 0.0;
    return res;
}

}  // namespace hyperdet
