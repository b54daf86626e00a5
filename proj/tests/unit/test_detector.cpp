#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>

#include "../testdata.hpp"
#include "hyperdet/detector.hpp"

using namespace hyperdet;
namespace fs = std::filesystem;

static const char* kKernelPath = HYPERDET_SOURCE_DIR "/data/srm_kernels_v1.txt";

static TrainConfig tiny_config() {
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

// detector over a model whose trainable parameters are seeded away from the
// identity start, so per-expert scores genuinely differ
static DetectorModel seeded_detector(std::uint64_t seed) {
    TrainConfig cfg = tiny_config();
    Model model(cfg.backbone_spec(), cfg.hyper_config(), seed);
    Rng rng(seed ^ 0xabcdef);
    for (auto* p : model.trainable_parameters())
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.normal(0, 0.15);
    FilterBank bank = load_kernels(kKernelPath);
    return DetectorModel(std::move(model), std::move(bank), cfg, Manifest{});
}

static Image test_image(std::uint64_t seed, std::size_t size = 16) {
    Rng rng(seed);
    return testdata::natural_image(size, rng);
}

TEST_CASE("untrained model with zeroed head scores 0.5 everywhere") {
    TrainConfig cfg = tiny_config();
    Model model(cfg.backbone_spec(), cfg.hyper_config(), 1);
    model.head().weight.value.fill(0.0);
    model.head().bias.value.fill(0.0);
    FilterBank bank = load_kernels(kKernelPath);
    DetectorModel det(std::move(model), std::move(bank), cfg, Manifest{});

    Verdict v = det.detect(test_image(2));
    REQUIRE(v.per_expert_scores.size() == 6);
    for (const auto& s : v.per_expert_scores) CHECK(s.score == 0.5);
    CHECK(v.merged_score == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(v.normalized_score() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(v.fake);  // ties resolve to fake
    CHECK(v.experts_evaluated == 5);
}

TEST_CASE("threshold +inf breaks after the first iteration with exactly two scores") {
    DetectorModel det = seeded_detector(3);
    DetectOptions opts;
    opts.early_exit_threshold = std::numeric_limits<double>::infinity();
    Verdict v = det.detect(test_image(4), opts);
    CHECK(v.experts_evaluated == 1);
    CHECK(v.per_expert_scores.size() == 2);
    CHECK(v.per_expert_scores[0].expert == 1);
    CHECK(v.per_expert_scores[1].expert == 6);
}

TEST_CASE("merged score equals the sum of six independent forward passes") {
    DetectorModel det = seeded_detector(5);
    Image img = test_image(6);
    Verdict v = det.detect(img);
    REQUIRE(v.per_expert_scores.size() == 6);

    Model& model = det.model();
    auto views = make_views(img, det.bank());
    double want = 0.0;
    for (int expert = 1; expert <= 6; ++expert)
        want += model.forward(preprocess_view(views[std::size_t(expert - 1)], model.spec()),
                              expert);
    CHECK(std::fabs(v.merged_score - want) < 1e-10);
}

TEST_CASE("permuting experts 2..5 leaves the verdict unchanged") {
    DetectorModel det = seeded_detector(7);
    Image img = test_image(8);
    Verdict base = det.detect(img);
    for (const std::array<int, 4>& order :
         {std::array<int, 4>{5, 4, 3, 2}, {3, 5, 2, 4}, {4, 2, 5, 3}}) {
        DetectOptions opts;
        opts.tail_order = order;
        Verdict v = det.detect(img, opts);
        CHECK(std::fabs(v.merged_score - base.merged_score) < 1e-10);
        CHECK(v.fake == base.fake);
        CHECK(v.per_expert_scores.size() == base.per_expert_scores.size());
    }
}

TEST_CASE("a threshold the running sum never crosses is a no-op") {
    DetectorModel det = seeded_detector(9);
    Image img = test_image(10);
    Verdict base = det.detect(img);
    DetectOptions opts;
    opts.early_exit_threshold = 0.0;  // scores are positive, sum only grows
    Verdict v = det.detect(img, opts);
    CHECK(v.merged_score == base.merged_score);
    CHECK(v.experts_evaluated == base.experts_evaluated);
    CHECK(v.fake == base.fake);
}

TEST_CASE("per-expert scores stay in (0,1), merged in (0,6)") {
    DetectorModel det = seeded_detector(11);
    for (std::uint64_t s = 0; s < 4; ++s) {
        Verdict v = det.detect(test_image(20 + s));
        for (const auto& e : v.per_expert_scores) {
            CHECK(e.score > 0.0);
            CHECK(e.score < 1.0);
        }
        CHECK(v.merged_score > 0.0);
        CHECK(v.merged_score < 6.0);
    }
}

TEST_CASE("checkpoint round-trip preserves verdicts exactly") {
    const auto dir = fs::temp_directory_path() / "hyperdet_test_detector" / "ckpt";
    fs::remove_all(dir);

    TrainConfig cfg = tiny_config();
    Model model(cfg.backbone_spec(), cfg.hyper_config(), 13);
    Rng rng(131);
    for (auto* p : model.trainable_parameters())
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.normal(0, 0.15);
    FilterBank bank = load_kernels(kKernelPath);
    save_checkpoint(dir, model, bank, cfg, 0, {});

    DetectorModel in_memory(std::move(model), std::move(bank), cfg, Manifest{});
    DetectorModel loaded_a = DetectorModel::load(dir);
    DetectorModel loaded_b = DetectorModel::load(dir);

    Image img = test_image(14);
    Verdict v0 = in_memory.detect(img);
    Verdict v1 = loaded_a.detect(img);
    Verdict v2 = loaded_b.detect(img);
    CHECK(v0.merged_score == v1.merged_score);
    CHECK(v1.merged_score == v2.merged_score);
    CHECK(v1.fake == v0.fake);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(v1.per_expert_scores[i].score == v2.per_expert_scores[i].score);
}

TEST_CASE("detect_batch preserves order and reports per-file errors inline") {
    DetectorModel det = seeded_detector(15);
    const auto dir = fs::temp_directory_path() / "hyperdet_test_detector" / "batch";
    fs::remove_all(dir);
    fs::create_directories(dir);

    std::vector<fs::path> paths;
    for (int i = 0; i < 3; ++i) {
        const auto p = dir / ("img" + std::to_string(i) + ".png");
        io::save_png(p, test_image(std::uint64_t(30 + i)));
        paths.push_back(p);
    }
    BatchResult all_ok = detect_batch(det, paths);
    REQUIRE(all_ok.entries.size() == 3);
    CHECK(all_ok.ok == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(all_ok.entries[i].path == paths[i]);
        CHECK(all_ok.entries[i].verdict.has_value());
        // batch detection matches one-by-one detection
        Verdict single = det.detect(io::load_image(paths[i]));
        CHECK(all_ok.entries[i].verdict->merged_score == single.merged_score);
    }

    const auto corrupt = dir / "corrupt.png";
    {
        std::ofstream os(corrupt);
        os << "not a png";
    }
    auto mixed_paths = paths;
    mixed_paths.insert(mixed_paths.begin() + 1, corrupt);
    BatchResult mixed = detect_batch(det, mixed_paths);
    REQUIRE(mixed.entries.size() == 4);
    CHECK(mixed.ok == 3);
    CHECK(mixed.failed == 1);
    CHECK(!mixed.entries[1].verdict.has_value());
    CHECK(!mixed.entries[1].error.empty());

    try {
        (void)detect_batch(det, {corrupt, corrupt});
        FAIL("expected empty-result error");
    } catch (const Error& e) {
        CHECK(e.code() == errc::empty_result);
    }
}

TEST_CASE("logit merging is available as a config alternative") {
    DetectorModel det = seeded_detector(17);
    Image img = test_image(18);
    DetectOptions opts;
    opts.merge_logits = true;
    Verdict v = det.detect(img, opts);
    REQUIRE(v.per_expert_scores.size() == 6);
    double sum_logits = 0.0;
    for (const auto& s : v.per_expert_scores) sum_logits += s.logit;
    CHECK(v.merged_score == doctest::Approx(sum_logits).epsilon(1e-12));
    CHECK(v.fake == (v.normalized_score() >= 0.0));
}

TEST_CASE("verdict serializes to the documented json schema") {
    DetectorModel det = seeded_detector(19);
    Verdict v = det.detect(test_image(21));
    nlohmann::json j = v;
    CHECK(j.at("per_expert").size() == 6);
    CHECK(j.at("label").is_string());
    CHECK(j.at("merged_score").get<double>() == v.merged_score);
    CHECK(j.at("normalized_score").get<double>() == v.normalized_score());
}
