// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each criterion pins its tolerance in code.

#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "../testdata.hpp"
#include "../unit/gradcheck.hpp"
#include "hyperdet/detector.hpp"
#include "hyperdet/evalkit.hpp"
#include "hyperdet/trainer.hpp"

using namespace hyperdet;
namespace fs = std::filesystem;

static const char* kKernelPath = HYPERDET_SOURCE_DIR "/data/srm_kernels_v1.txt";

namespace {

void expect(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

std::string fmt(const char* f, ...) {
    char buf[256];
    std::va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

struct Harness {
    int failures = 0;
    int index = 0;

    // budget_secs <= 0 means no runtime requirement
    void run(const std::string& name, const std::function<std::string()>& body,
             double budget_secs = 0.0) {
        ++index;
        const auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = true;
        try {
            detail = body();
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (ok && budget_secs > 0.0 && secs > budget_secs) {
            ok = false;
            detail = fmt("runtime %.1fs exceeds the %.0fs budget", secs, budget_secs);
        }
        std::printf("[%s] C%-2d %-28s (%.1fs) %s\n", ok ? "PASS" : "FAIL", index,
                    name.c_str(), secs, detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
};

fs::path work_dir() {
    const auto dir = fs::temp_directory_path() / "hyperdet_acceptance";
    fs::create_directories(dir);
    return dir;
}

// naive cross-correlation oracle, independent arithmetic path
Image conv_oracle(const Image& img, const FilterKernel& k) {
    Image out(img.height, img.width, img.channels);
    const long h = long(img.height), w = long(img.width);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (std::size_t c = 0; c < img.channels; ++c) {
                double acc = 0.0;
                for (long u = 0; u < 5; ++u)
                    for (long v = 0; v < 5; ++v)
                        acc += k.w(std::size_t(u), std::size_t(v)) *
                               img.at(reflect_index(y + u - 2, h),
                                      reflect_index(x + v - 2, w), c);
                out.at(std::size_t(y), std::size_t(x), c) = acc / k.normalizer;
            }
    return out;
}

TrainConfig desk_scale_config() {
    TrainConfig cfg;  // toy backbone defaults: depth 4, width 64, patch 4, 32x32
    cfg.kernels_path = kKernelPath;
    return cfg;
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.backbone.image_size = 16;
    cfg.backbone.patch_size = 4;
    cfg.backbone.depth = 2;
    cfg.backbone.width = 32;
    cfg.backbone.heads = 2;
    cfg.backbone.feature_dim = 32;
    cfg.fine_tuned_blocks = 2;
    cfg.rank = 2;
    cfg.embed_dim = 4;
    cfg.hidden_dim = 8;
    cfg.kernels_path = kKernelPath;
    return cfg;
}

// ---------------------------------------------------------------------------

std::string c1_filter_oracle() {
    const FilterBank bank = load_kernels(kKernelPath);
    Rng rng(1001);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t h = std::size_t(rng.uniform_int(1, 32));
        const std::size_t w = std::size_t(rng.uniform_int(1, 32));
        Image img(h, w, 3);
        for (auto& v : img.px) v = rng.uniform();
        for (int g = 1; g <= 5; ++g) {
            const FilterGroup& group = bank.group(g);
            ResidualView got = group_residual(img, group, bank);
            Image want(h, w, 3);
            for (int id : group.kernel_ids) {
                Image r = conv_oracle(img, bank.kernel(id));
                for (std::size_t i = 0; i < want.px.size(); ++i) want.px[i] += r.px[i];
            }
            for (auto& v : want.px) v /= double(group.kernel_ids.size());
            double scale = 1e-30;
            for (double v : want.px) scale = std::max(scale, std::fabs(v));
            worst = std::max(worst, max_abs_diff_img(got.pixels, want) / scale);
        }
    }
    expect(worst < 1e-12, fmt("relative error %.3e exceeds 1e-12", worst));

    for (double level : {0.0, 0.25, 0.713, 1.0}) {
        Image flat(9, 11, 3);
        for (auto& v : flat.px) v = level;
        for (const auto& k : bank.kernels()) {
            Image r = apply_kernel(flat, k);
            for (double v : r.px)
                expect(v == 0.0, fmt("constant image residual %g != 0 (kernel %d)", v, k.id));
        }
    }
    return fmt("100 images x 5 groups, worst rel err %.2e; constants exactly zero", worst);
}

std::string c2_lora_identity() {
    TrainConfig cfg = desk_scale_config();
    Model model(cfg.backbone_spec(), cfg.hyper_config(), 2002);
    Rng rng(2003);
    Image img = testdata::natural_image(32, rng);
    ResidualView view{ResidualView::kOriginalView, img};
    const double frozen = model.forward_frozen(view);
    double worst = 0.0;
    for (int expert = 1; expert <= 6; ++expert)
        worst = std::max(worst, std::fabs(model.forward(view, expert) - frozen));
    expect(worst <= 1e-12, fmt("expert/frozen deviation %.3e exceeds 1e-12", worst));

    HyperNetConfig hcfg = cfg.hyper_config();
    auto count_with_tasks = [&](std::size_t n) {
        HyperNetConfig h = hcfg;
        h.num_tasks = n;
        HyperNetwork net(h, cfg.backbone_spec().fine_tuned_block_ids(),
                         cfg.backbone_spec().position_shapes(), Rng(7));
        return net.trainable_parameter_count();
    };
    const std::size_t delta = count_with_tasks(7) - count_with_tasks(6);
    expect(delta == hcfg.embed_dim,
           fmt("adding an expert added %zu params, expected e = %zu", delta, hcfg.embed_dim));
    return fmt("max |expert - frozen| = %.1e; +1 expert adds exactly e = %zu params", worst,
               hcfg.embed_dim);
}

std::string c3_gradient_check() {
    // toy instance: e = 4, h_dim = 8, d = 6, r = 2, 8x8 input
    TrainConfig cfg;
    cfg.backbone.image_size = 8;
    cfg.backbone.patch_size = 4;
    cfg.backbone.depth = 2;
    cfg.backbone.width = 6;
    cfg.backbone.heads = 2;
    cfg.backbone.feature_dim = 6;
    cfg.fine_tuned_blocks = 2;
    cfg.rank = 2;
    cfg.embed_dim = 4;
    cfg.hidden_dim = 8;
    cfg.kernels_path = kKernelPath;
    Model model(cfg.backbone_spec(), cfg.hyper_config(), 3003);
    Rng rng(3004);
    for (auto* p : model.trainable_parameters())
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.normal(0, 0.2);

    Image img = testdata::natural_image(8, rng);
    Tensor tokens = tokens_from_view(ResidualView{0, img}, model.spec());
    const Tensor label = Tensor::from({1}, {1.0});
    auto build = [&] {
        auto adapters = model.generate_adapters(2);
        return ad::bce_with_logits(model.logit_var(tokens, &adapters), label);
    };
    auto res = testutil::gradcheck(build, model.trainable_parameters(), 1e-4, 1e-4, 1e-6);
    expect(res.fraction() >= 0.99,
           fmt("only %.2f%% of %zu coordinates agree (worst rel %.2e)",
               100.0 * res.fraction(), res.total, res.worst_rel));
    return fmt("%zu coordinates, %.2f%% within 1e-4 (worst rel %.2e)", res.total,
               100.0 * res.fraction(), res.worst_rel);
}

std::string c4_loss_endpoints() {
    LossConfig cfg;
    cfg.alpha = 0.1;
    expect(std::fabs(total_loss(1.0, 0.0, cfg) - 0.1) <= 1e-15, "alpha endpoint failed");
    cfg.alpha = 0.25;
    expect(std::fabs(total_loss(2.0, 4.0, cfg) - 3.5) <= 1e-15, "hand case (2,4,0.25) failed");
    for (double a : {0.0, 0.37, 1.0}) {
        cfg.alpha = a;
        expect(std::fabs(total_loss(0.8, 0.8, cfg) - 0.8) <= 1e-15, "idempotence failed");
    }

    Rng rng(4004);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> scores, labels;
        for (int i = 0; i < 16; ++i) {
            scores.push_back(rng.uniform(0.001, 0.999));
            labels.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
        }
        double oracle = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            oracle += -(labels[i] * std::log(scores[i]) +
                        (1.0 - labels[i]) * std::log(1.0 - scores[i]));
        oracle /= double(scores.size());
        worst = std::max(worst, std::fabs(bce_loss(scores, labels) - oracle));
    }
    expect(worst < 1e-12, fmt("bce oracle deviation %.3e exceeds 1e-12", worst));
    return fmt("Eq endpoints exact; bce vs elementwise oracle worst %.1e", worst);
}

std::string c5_frozen_invariance() {
    TrainConfig cfg = small_config();
    cfg.learning_rate = 1e-2;
    Model model(cfg.backbone_spec(), cfg.hyper_config(), 5005);
    FilterBank bank = load_kernels(kKernelPath);
    Adam opt(model.trainable_parameters(), cfg.learning_rate);
    const std::uint64_t before = model.frozen_hash();

    Rng rng(5006);
    TrainBatch batch;
    for (int i = 0; i < 2; ++i) {
        Image img = testdata::natural_image(16, rng);
        if (i % 2) img = testdata::add_checker(img, 0.1);
        batch.images.push_back(img);
        batch.labels.push_back(double(i % 2));
    }
    for (int step = 0; step < 100; ++step)
        (void)train_step(model, opt, bank, batch, step % 5 + 1, cfg);
    expect(model.frozen_hash() == before, "frozen tensor hash changed");
    return fmt("hash %s unchanged across 100 optimizer steps", hex64(before).c_str());
}

std::string c6_end_to_end_separability() {
    const auto root = work_dir() / "separable";
    if (!fs::exists(root / "done.marker")) {
        fs::remove_all(root);
        testdata::write_checker_dataset(root, "train", 100, 32, 60601, 0.1);
        testdata::write_checker_dataset(root, "test", 30, 32, 60602, 0.1);
        std::ofstream(root / "done.marker") << "ok";
    }

    TrainConfig cfg = desk_scale_config();  // toy backbone at spec defaults
    cfg.data_root = root.string();
    cfg.out_dir = (root / "ckpt").string();
    cfg.expert_schedule = TrainConfig::Schedule::full;  // full per-view schedule
    cfg.epochs = 5;
    cfg.batch_size = 10;
    cfg.learning_rate = 2e-3;
    cfg.seed = 606;

    TrainResult res = train(cfg);
    expect(res.epoch_mean_loss.back() < res.epoch_mean_loss.front(),
           "epoch-mean loss did not decrease");
    expect(res.train_accuracy >= 95.0,
           fmt("train accuracy %.2f%% below 95%%", res.train_accuracy));

    DetectorModel det = DetectorModel::load(res.checkpoint_dir);
    auto held_out = load_dataset(root, "test");
    MetricsReport report = evaluate(det, held_out);
    expect(report.avg_acc >= 90.0, fmt("held-out accuracy %.2f%% below 90%%", report.avg_acc));
    return fmt("train acc %.1f%% (>=95), held-out acc %.1f%% (>=90), 5 epochs, seed %llu",
               res.train_accuracy, report.avg_acc,
               static_cast<unsigned long long>(cfg.seed));
}

std::string c7_detection_fidelity() {
    TrainConfig cfg = small_config();
    Model model(cfg.backbone_spec(), cfg.hyper_config(), 7007);
    Rng rng(7008);
    for (auto* p : model.trainable_parameters())
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.normal(0, 0.15);
    FilterBank bank = load_kernels(kKernelPath);
    DetectorModel det(std::move(model), std::move(bank), cfg, Manifest{});

    Image img = testdata::natural_image(16, rng);
    Verdict base = det.detect(img);
    expect(base.per_expert_scores.size() == 6, "expected six merged scores");

    auto views = make_views(img, det.bank());
    double independent = 0.0;
    for (int expert = 1; expert <= 6; ++expert)
        independent += det.model().forward(
            preprocess_view(views[std::size_t(expert - 1)], det.model().spec()), expert);
    const double dev = std::fabs(base.merged_score - independent);
    expect(dev <= 1e-10, fmt("merged vs independent sum deviates by %.3e", dev));

    DetectOptions inf_opts;
    inf_opts.early_exit_threshold = std::numeric_limits<double>::infinity();
    Verdict early = det.detect(img, inf_opts);
    expect(early.experts_evaluated == 1 && early.per_expert_scores.size() == 2,
           "threshold +inf did not stop after one iteration");

    double worst_perm = 0.0;
    for (const std::array<int, 4>& order :
         {std::array<int, 4>{5, 4, 3, 2}, {3, 5, 2, 4}, {2, 5, 3, 4}}) {
        DetectOptions opts;
        opts.tail_order = order;
        Verdict v = det.detect(img, opts);
        worst_perm = std::max(worst_perm, std::fabs(v.merged_score - base.merged_score));
        expect(v.fake == base.fake, "permutation changed the label");
    }
    expect(worst_perm <= 1e-10, fmt("permutation deviation %.3e", worst_perm));
    return fmt("sum dev %.1e; +inf stops at 1 iteration / 2 scores; permutation dev %.1e",
               dev, worst_perm);
}

std::string c8_metrics_oracle() {
    // brute-force precision-recall integration over all distinct thresholds
    auto oracle = [](const std::vector<double>& scores, const std::vector<int>& labels) {
        std::set<double, std::greater<double>> thresholds(scores.begin(), scores.end());
        std::size_t positives = 0;
        for (int y : labels) positives += std::size_t(y);
        double ap = 0.0, prev_recall = 0.0;
        for (double t : thresholds) {
            std::size_t tp = 0, fp = 0;
            for (std::size_t i = 0; i < scores.size(); ++i)
                if (scores[i] >= t) (labels[i] == 1 ? tp : fp) += 1;
            const double precision = double(tp) / double(tp + fp);
            const double recall = double(tp) / double(positives);
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        return ap;
    };

    Rng rng(8008);
    double worst = 0.0;
    int checked = 0;
    while (checked < 200) {
        const std::size_t n = std::size_t(rng.uniform_int(4, 60));
        std::vector<double> scores;
        std::vector<int> labels;
        std::size_t pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
            scores.push_back(rng.uniform());
            labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
            pos += std::size_t(labels.back());
        }
        if (pos == 0 || pos == n) continue;
        worst = std::max(worst,
                         std::fabs(average_precision(scores, labels) - oracle(scores, labels)));
        ++checked;
    }
    expect(worst < 1e-9, fmt("AP oracle deviation %.3e exceeds 1e-9", worst));

    const double hand = average_precision({0.9, 0.8, 0.2, 0.1}, {0, 1, 1, 0});
    expect(std::fabs(hand - 7.0 / 12.0) < 1e-12, fmt("hand case AP = %.6f != 7/12", hand));

    // mAP equals the unweighted mean of per-generator APs
    const auto root = work_dir() / "metrics";
    if (!fs::exists(root / "done.marker")) {
        fs::remove_all(root);
        testdata::write_checker_dataset(root, "test", 4, 16, 8009);
        fs::create_directories(root / "test" / "second" / "real");
        fs::create_directories(root / "test" / "second" / "fake");
        Rng r2(8010);
        for (int i = 0; i < 3; ++i) {
            Image im = testdata::natural_image(16, r2);
            io::save_png(root / "test" / "second" / "real" / (std::to_string(i) + ".png"), im);
            io::save_png(root / "test" / "second" / "fake" / (std::to_string(i) + ".png"),
                         testdata::add_checker(im, 0.08));
        }
        std::ofstream(root / "done.marker") << "ok";
    }
    auto samples = load_dataset(root, "test");
    Rng score_rng(8011);
    auto report = evaluate_scores(
        samples,
        [&](const Image&) {
            const double s = score_rng.uniform();
            return ScoredPrediction{s, s >= 0.5};
        },
        {});
    expect(report.per_generator.size() == 2, "expected two generators");
    double mean_ap = 0.0;
    for (const auto& g : report.per_generator) mean_ap += *g.ap;
    mean_ap /= double(report.per_generator.size());
    expect(std::fabs(report.mAP - mean_ap) < 1e-12, "mAP is not the mean of per-generator APs");
    return fmt("200 sets worst dev %.1e; hand case %.4f; mAP = mean(APs)", worst, hand);
}

std::string c9_robustness_protocol() {
    expect(default_blur_sigmas() == std::vector<double>{1, 2, 3, 4},
           "blur grid differs from the published protocol");
    expect(default_jpeg_qualities() == std::vector<double>{90, 80, 70, 60, 50, 40, 30},
           "jpeg grid differs from the published protocol");

    // identity grid point reproduces the unperturbed report exactly
    const auto root = work_dir() / "robust";
    if (!fs::exists(root / "done.marker")) {
        fs::remove_all(root);
        testdata::write_checker_dataset(root, "test", 3, 16, 9009);
        std::ofstream(root / "done.marker") << "ok";
    }
    TrainConfig cfg = small_config();
    Model model(cfg.backbone_spec(), cfg.hyper_config(), 9010);
    Rng rng(9011);
    for (auto* p : model.trainable_parameters())
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.normal(0, 0.1);
    FilterBank bank = load_kernels(kKernelPath);
    DetectorModel det(std::move(model), std::move(bank), cfg, Manifest{});
    auto samples = load_dataset(root, "test");
    auto sweep_points = robustness_sweep(det, samples, {Perturbation{}});
    auto direct = evaluate(det, samples);
    expect(sweep_points.size() == 1, "identity sweep should have one point");
    expect(sweep_points[0].report.avg_acc == direct.avg_acc &&
               sweep_points[0].report.mAP == direct.mAP,
           "identity grid point deviates from the unperturbed report");

    // blur sigma = 2 impulse response vs the analytic truncated gaussian
    const double sigma = 2.0;
    Image impulse(32, 32, 1);
    impulse.at(16, 16, 0) = 1.0;
    Image blurred = perturb(impulse, Perturbation{Perturbation::Kind::blur, sigma});
    const long radius = long(std::ceil(3.0 * sigma));
    double z = 0.0;
    for (long i = -radius; i <= radius; ++i)
        z += std::exp(-0.5 * double(i * i) / (sigma * sigma));
    double worst = 0.0;
    for (long dy = -radius; dy <= radius; ++dy)
        for (long dx = -radius; dx <= radius; ++dx) {
            const double want = std::exp(-0.5 * double(dy * dy) / (sigma * sigma)) *
                                std::exp(-0.5 * double(dx * dx) / (sigma * sigma)) / (z * z);
            worst = std::max(worst, std::fabs(blurred.at(std::size_t(16 + dy),
                                                         std::size_t(16 + dx), 0) -
                                              want));
        }
    expect(worst < 1e-6, fmt("impulse response deviation %.3e exceeds 1e-6", worst));
    return fmt("grids match {1,2,3,4}/{90..30}; identity exact; impulse dev %.1e", worst);
}

std::string c10_spectrum_claim() {
    const FilterBank bank = load_kernels(kKernelPath);
    auto corpus = testdata::natural_corpus(20, 64, 10010);
    auto original = average_spectrum(corpus, nullptr, bank, 64);
    std::string detail = fmt("original %.4f vs", original.low_band_fraction);
    for (int g = 1; g <= 5; ++g) {
        auto filtered = average_spectrum(corpus, &bank.group(g), bank, 64);
        expect(filtered.low_band_fraction < original.low_band_fraction,
               fmt("group %d low-band fraction %.4f not below original %.4f", g,
                   filtered.low_band_fraction, original.low_band_fraction));
        detail += fmt(" g%d=%.4f", g, filtered.low_band_fraction);
    }
    return detail;
}

std::string c11_reproducibility() {
    const auto root = work_dir() / "repro";
    if (!fs::exists(root / "done.marker")) {
        fs::remove_all(root);
        testdata::write_checker_dataset(root, "train", 10, 16, 11011);
        testdata::write_checker_dataset(root, "test", 4, 16, 11012);
        std::ofstream(root / "done.marker") << "ok";
    }
    TrainConfig cfg = small_config();
    cfg.data_root = root.string();
    cfg.epochs = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 1111;

    cfg.out_dir = (root / "ckpt_a").string();
    (void)train(cfg);
    cfg.out_dir = (root / "ckpt_b").string();
    (void)train(cfg);

    for (const char* file : {"manifest.txt", "kernels.txt", "backbone.bin", "hyperlora.bin",
                             "head.bin", "optimizer.bin"}) {
        const auto a = io::read_file(root / "ckpt_a" / file);
        const auto b = io::read_file(root / "ckpt_b" / file);
        expect(a == b, fmt("%s differs between identical runs", file));
    }

    DetectorModel det_a = DetectorModel::load(root / "ckpt_a");
    DetectorModel det_b = DetectorModel::load(root / "ckpt_b");
    auto samples = load_dataset(root, "test");
    const std::string report_a = evaluate(det_a, samples).to_json().dump();
    const std::string report_b = evaluate(det_b, samples).to_json().dump();
    expect(report_a == report_b, "eval reports differ between identical runs");
    return "checkpoint files bitwise identical; eval reports identical";
}

}  // namespace

int main() {
    log_level() = LogLevel::warn;
    Harness h;
    h.run("filter-oracle", c1_filter_oracle, 30.0);
    h.run("lora-identity", c2_lora_identity);
    h.run("gradient-check", c3_gradient_check, 120.0);
    h.run("loss-endpoints", c4_loss_endpoints);
    h.run("frozen-invariance", c5_frozen_invariance);
    h.run("end-to-end-separability", c6_end_to_end_separability, 600.0);
    h.run("detection-fidelity", c7_detection_fidelity);
    h.run("metrics-oracle", c8_metrics_oracle);
    h.run("robustness-protocol", c9_robustness_protocol);
    h.run("spectrum-claim", c10_spectrum_claim);
    h.run("reproducibility", c11_reproducibility);

    if (h.failures == 0) {
        std::printf("acceptance: all %d criteria passed\n", h.index);
        return 0;
    }
    std::printf("acceptance: %d of %d criteria FAILED\n", h.failures, h.index);
    return 1;
}
