// hyperdet: train / detect / eval / sweep / spectrum / filters / export-features
//
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hyperdet/config.hpp"
#include "hyperdet/core/log.hpp"
#include "hyperdet/dataset.hpp"
#include "hyperdet/detector.hpp"
#include "hyperdet/evalkit.hpp"
#include "hyperdet/filterbank.hpp"
#include "hyperdet/trainer.hpp"

namespace fs = std::filesystem;
using namespace hyperdet;

#ifndef HYPERDET_DEFAULT_KERNELS
#define HYPERDET_DEFAULT_KERNELS "data/srm_kernels_v1.txt"
#endif

namespace {

std::string resolve_kernels(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("HYPERDET_KERNELS"); env && *env) return env;
    return HYPERDET_DEFAULT_KERNELS;
}

std::vector<fs::path> collect_inputs(const std::string& input) {
    fs::path p(input);
    require(fs::exists(p), errc::ingestion, "input not found: " + input);
    if (fs::is_regular_file(p)) return {p};
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(p))
        if (entry.is_regular_file() && io::is_image_path(entry.path()))
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    require(!files.empty(), errc::ingestion, "no images under " + input);
    return files;
}

void write_text(const std::string& out, const std::string& text) {
    if (out == "-") {
        std::fputs(text.c_str(), stdout);
        return;
    }
    std::ofstream os(out, std::ios::trunc);
    require(bool(os), errc::io, "cannot write " + out);
    os << text;
}

nlohmann::json config_echo_json(const TrainConfig& cfg) {
    Manifest m;
    config_to_manifest(cfg, m);
    nlohmann::json j;
    for (const auto& [k, v] : m.entries()) j[k] = v;
    j["config_hash"] = config_hash(cfg);
    return j;
}

// ---------------------------------------------------------------------------

void add_train_options(CLI::App* sub, TrainConfig& cfg, std::string& kernels_flag) {
    auto env = [](const char* name) { return std::string("HYPERDET_") + name; };
    sub->add_option("--data", cfg.data_root, "dataset root (<split>/<generator>/<real|fake>)")
        ->envname(env("DATA"));
    sub->add_option("--split", cfg.train_split, "training split name")->envname(env("SPLIT"));
    sub->add_option("--kernels", kernels_flag, "SRM kernel file")->envname(env("KERNELS"));
    sub->add_option("--out", cfg.out_dir, "checkpoint output directory")->envname(env("OUT"));
    sub->add_option("--resume", cfg.resume_from, "checkpoint to resume from");
    sub->add_option("--seed", cfg.seed, "master seed")->envname(env("SEED"));
    sub->add_option("--lr", cfg.learning_rate, "learning rate")->envname(env("LR"));
    sub->add_option("--epochs", cfg.epochs, "training epochs")->envname(env("EPOCHS"));
    sub->add_option("--batch-size", cfg.batch_size, "batch size")->envname(env("BATCH_SIZE"));
    sub->add_option("--rank", cfg.rank, "LoRA rank")->envname(env("RANK"));
    sub->add_option("--blocks", cfg.fine_tuned_blocks, "fine-tuned block count")
        ->envname(env("BLOCKS"));
    sub->add_option("--alpha", cfg.alpha, "original-view loss weight")->envname(env("ALPHA"));
    sub->add_option("--p-blur", cfg.p_blur, "blur augmentation probability");
    sub->add_option("--p-jpeg", cfg.p_jpeg, "jpeg augmentation probability");
    sub->add_option("--blur-sigma-min", cfg.blur_sigma_min, "augmentation sigma lower bound");
    sub->add_option("--blur-sigma-max", cfg.blur_sigma_max, "augmentation sigma upper bound");
    sub->add_option("--jpeg-quality-min", cfg.jpeg_quality_min,
                    "augmentation quality lower bound");
    sub->add_option("--jpeg-quality-max", cfg.jpeg_quality_max,
                    "augmentation quality upper bound");
    sub->add_option_function<std::string>(
           "--schedule",
           [&cfg](const std::string& v) { cfg.expert_schedule = cfgio::schedule_from(v); },
           "expert schedule: round-robin|full")
        ->envname(env("SCHEDULE"));
    sub->add_flag("--accumulate-views,!--step-per-view", cfg.accumulate_views,
                  "full schedule: one step per batch vs one per view");
    sub->add_option_function<std::string>(
        "--backbone",
        [&cfg](const std::string& v) { cfg.backbone.variant = cfgio::variant_from(v); },
        "backbone variant: toy|pretrained-adapter");
    sub->add_option("--image-size", cfg.backbone.image_size, "backbone input size");
    sub->add_option("--patch-size", cfg.backbone.patch_size, "patch size");
    sub->add_option("--depth", cfg.backbone.depth, "transformer depth");
    sub->add_option("--width", cfg.backbone.width, "token width");
    sub->add_option("--heads", cfg.backbone.heads, "attention heads");
    sub->add_option("--mlp-ratio", cfg.backbone.mlp_ratio, "MLP expansion ratio");
    sub->add_option("--feature-dim", cfg.backbone.feature_dim, "pooled feature width");
    sub->add_option_function<std::string>(
        "--pooling",
        [&cfg](const std::string& v) { cfg.backbone.pooling = cfgio::pooling_from(v); },
        "feature pooling: cls|mean");
    sub->add_option("--embed-dim", cfg.embed_dim, "hypernetwork embedding width");
    sub->add_option("--hidden-dim", cfg.hidden_dim, "hypernetwork combiner width");
    sub->add_option("--lora-scale", cfg.lora_scale, "bypass scale");
    sub->add_flag("--combiner-nonlinearity,!--affine-combiner", cfg.combiner_nonlinearity,
                  "tanh after the combiner (or purely affine)");
    sub->add_flag("--freeze-embeddings", cfg.freeze_embeddings,
                  "keep embedding tables fixed");
    sub->add_option("--backbone-weights", cfg.backbone_weights,
                    "tensor blob with frozen backbone weights (pretrained seam)");
}

int run_train(TrainConfig cfg, const std::string& kernels_flag) {
    cfg.kernels_path = resolve_kernels(kernels_flag);
    Manifest echo;
    config_to_manifest(cfg, echo);
    log_info("effective config (hash %s):\n%s", config_hash(cfg).c_str(),
             echo.text().c_str());
    TrainResult res = train(cfg);
    std::printf("checkpoint: %s\n", res.checkpoint_dir.c_str());
    std::printf("train_accuracy: %.2f\n", res.train_accuracy);
    return 0;
}

int run_detect(const std::string& checkpoint, const std::string& input,
               std::optional<double> threshold, bool merge_logits,
               const std::string& json_out) {
    DetectorModel det = DetectorModel::load(checkpoint);
    DetectOptions opts;
    if (threshold) opts.early_exit_threshold = *threshold;
    opts.merge_logits = merge_logits;

    BatchResult batch = detect_batch(det, collect_inputs(input), opts);

    const std::string hash = config_hash(det.config());
    std::string json_text;
    for (const auto& entry : batch.entries) {
        nlohmann::json record;
        record["path"] = entry.path.string();
        record["config_hash"] = hash;
        if (entry.verdict) {
            nlohmann::json v = *entry.verdict;
            record.update(v);
        } else {
            record["error"] = entry.error;
        }
        json_text += record.dump() + "\n";
        if (json_out.empty() && entry.verdict) {
            std::printf("%-8s %.4f  %s\n", entry.verdict->fake ? "fake" : "real",
                        entry.verdict->normalized_score(), entry.path.c_str());
        } else if (json_out.empty()) {
            std::printf("error    -       %s (%s)\n", entry.path.c_str(),
                        entry.error.c_str());
        }
    }
    if (!json_out.empty()) write_text(json_out, json_text);
    return 0;
}

int run_eval(const std::string& checkpoint, const std::string& dataset,
             const std::string& split, const std::string& perturb_text,
             const std::string& out, const std::string& csv) {
    DetectorModel det = DetectorModel::load(checkpoint);
    auto samples = load_dataset(dataset, split);
    Perturbation p = parse_perturbation(perturb_text);
    MetricsReport report = evaluate(det, samples, p);
    std::fputs(report.table_text().c_str(), stdout);
    if (!out.empty()) {
        nlohmann::json j = report.to_json();
        j["config"] = config_echo_json(det.config());
        write_text(out, j.dump(2) + "\n");
    }
    if (!csv.empty()) write_text(csv, report.csv_text());
    return 0;
}

std::vector<Perturbation> parse_grid(const std::vector<std::string>& grid_args) {
    std::vector<Perturbation> grid;
    auto add_kind = [&grid](Perturbation::Kind kind, const std::string& list) {
        std::istringstream is(list);
        std::string tok;
        while (std::getline(is, tok, ','))
            if (!tok.empty()) grid.push_back(Perturbation{kind, std::stod(tok)});
    };
    if (grid_args.empty()) {
        for (double s : default_blur_sigmas())
            grid.push_back(Perturbation{Perturbation::Kind::blur, s});
        for (double q : default_jpeg_qualities())
            grid.push_back(Perturbation{Perturbation::Kind::jpeg, q});
        return grid;
    }
    for (const auto& arg : grid_args) {
        const auto eq = arg.find('=');
        require(eq != std::string::npos, errc::config,
                "grid entries look like blur=1,2,3,4 or jpeg=90,80; got " + arg);
        const std::string kind = arg.substr(0, eq);
        if (kind == "blur")
            add_kind(Perturbation::Kind::blur, arg.substr(eq + 1));
        else if (kind == "jpeg")
            add_kind(Perturbation::Kind::jpeg, arg.substr(eq + 1));
        else if (kind == "none")
            grid.push_back(Perturbation{});
        else
            fail(errc::config, "unknown grid kind: " + kind);
    }
    return grid;
}

int run_sweep(const std::string& checkpoint, const std::string& dataset,
              const std::string& split, const std::vector<std::string>& grid_args,
              const std::string& out_dir) {
    DetectorModel det = DetectorModel::load(checkpoint);
    auto samples = load_dataset(dataset, split);
    auto points = robustness_sweep(det, samples, parse_grid(grid_args), out_dir);
    for (const auto& pt : points)
        std::printf("%-10s avg_acc %6.2f  mAP %6.2f\n", pt.perturbation.descriptor().c_str(),
                    pt.report.avg_acc, pt.report.mAP);
    std::printf("artifacts: %s\n", out_dir.c_str());
    return 0;
}

int run_spectrum(const std::string& input, int group_id, const std::string& out,
                 std::size_t size, const std::string& kernels_flag) {
    FilterBank bank = load_kernels(resolve_kernels(kernels_flag));
    std::vector<Image> images;
    for (const auto& path : collect_inputs(input)) images.push_back(io::load_image(path));
    const FilterGroup* group = group_id == 0 ? nullptr : &bank.group(group_id);
    SpectrumResult res = average_spectrum(images, group, bank, size);
    io::save_gray_map(out, res.display_map(), res.size);

    const std::string group_name = group_id == 0 ? "original" : std::to_string(group_id);
    nlohmann::json j{{"images", images.size()},
                     {"group", group_name},
                     {"analysis_size", res.size},
                     {"kernels", resolve_kernels(kernels_flag)},
                     {"low_band_fraction", res.low_band_fraction},
                     {"map", out}};
    write_text(out + ".json", j.dump(2) + "\n");
    std::printf("group %s: low-band fraction %.6f (map: %s)\n", group_name.c_str(),
                res.low_band_fraction, out.c_str());
    return 0;
}

int run_filters(int id, const std::string& kernels_flag) {
    FilterBank bank = load_kernels(resolve_kernels(kernels_flag));
    auto print_kernel = [&](const FilterKernel& k) {
        int group_id = 0;
        std::string desc;
        for (const auto& g : bank.groups())
            for (int kid : g.kernel_ids)
                if (kid == k.id) {
                    group_id = g.group_id;
                    desc = g.description;
                }
        std::printf("kernel %d (group %d: %s), normalizer %g\n", k.id, group_id, desc.c_str(),
                    k.normalizer);
        for (std::size_t r = 0; r < 5; ++r) {
            for (std::size_t c = 0; c < 5; ++c) std::printf("%6.1f", k.w(r, c));
            std::printf("\n");
        }
    };
    if (id != 0) {
        print_kernel(bank.kernel(id));
    } else {
        for (const auto& g : bank.groups()) {
            std::printf("group %d: %s (kernels", g.group_id, g.description.c_str());
            for (int kid : g.kernel_ids) std::printf(" %d", kid);
            std::printf(")\n");
        }
    }
    return 0;
}

int run_export_features(const std::string& checkpoint, const std::string& input, int expert,
                        const std::string& out) {
    DetectorModel det = DetectorModel::load(checkpoint);
    Model& model = det.model();
    std::string text;
    for (const auto& path : collect_inputs(input)) {
        Image img = io::load_image(path);
        auto views = make_views(img, det.bank());
        for (int e = 1; e <= 6; ++e) {
            if (expert != 0 && e != expert) continue;
            const ResidualView& view = views[std::size_t(e - 1)];
            Tensor f = model.extract_features(preprocess_view(view, model.spec()), e);
            nlohmann::json rec{
                {"path", path.string()},
                {"expert", e},
                {"view", e == 6 ? "original" : "group-" + std::to_string(e)},
                {"features", std::vector<double>(f.data(), f.data() + f.size())}};
            text += rec.dump() + "\n";
        }
    }
    write_text(out, text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"HyperDet synthetic-image detector"};
    app.require_subcommand(0, 1);
    std::string log_level_name = "info";
    app.add_option("--log-level", log_level_name, "debug|info|warn|error|off")
        ->envname("HYPERDET_LOG_LEVEL");
    app.set_config("--config", "",
                   "key = value file; train options live in a [train] section");

    // train
    TrainConfig train_cfg;
    std::string train_kernels;
    CLI::App* train_sub = app.add_subcommand("train", "train a detector");
    train_sub->fallthrough();
    add_train_options(train_sub, train_cfg, train_kernels);

    // detect
    std::string det_checkpoint, det_input, det_json;
    double det_threshold = 0.0;
    bool det_merge_logits = false;
    CLI::App* detect_sub = app.add_subcommand("detect", "classify images as real or fake");
    detect_sub->fallthrough();
    detect_sub->add_option("--checkpoint", det_checkpoint, "checkpoint directory")
        ->required();
    detect_sub->add_option("--input", det_input, "image file or directory")->required();
    detect_sub->add_option("--threshold", det_threshold,
                           "early-exit threshold on the running score sum");
    detect_sub->add_flag("--merge-logits", det_merge_logits,
                         "merge pre-sigmoid logits instead of scores");
    detect_sub->add_option("--json", det_json,
                           "write one JSON record per image ('-' = stdout)");

    // eval
    std::string eval_checkpoint, eval_dataset, eval_split = "test", eval_perturb, eval_out,
                eval_csv;
    CLI::App* eval_sub = app.add_subcommand("eval", "per-generator accuracy / AP report");
    eval_sub->fallthrough();
    eval_sub->add_option("--checkpoint", eval_checkpoint, "checkpoint directory")->required();
    eval_sub->add_option("--dataset", eval_dataset, "dataset root")->required();
    eval_sub->add_option("--split", eval_split, "dataset split");
    eval_sub->add_option("--perturb", eval_perturb, "blur:SIGMA or jpeg:QUALITY");
    eval_sub->add_option("--out", eval_out, "write the JSON report here");
    eval_sub->add_option("--csv", eval_csv, "write a per-generator CSV here");

    // sweep
    std::string sweep_checkpoint, sweep_dataset, sweep_split = "test",
                sweep_out = "sweep_out";
    std::vector<std::string> sweep_grid;
    CLI::App* sweep_sub = app.add_subcommand("sweep", "robustness sweep over perturbations");
    sweep_sub->fallthrough();
    sweep_sub->add_option("--checkpoint", sweep_checkpoint, "checkpoint directory")
        ->required();
    sweep_sub->add_option("--dataset", sweep_dataset, "dataset root")->required();
    sweep_sub->add_option("--split", sweep_split, "dataset split");
    sweep_sub->add_option("--grid", sweep_grid,
                          "grid spec, e.g. blur=1,2,3,4 jpeg=90,80,70,60,50,40,30");
    sweep_sub->add_option("--out", sweep_out, "artifact directory (CSV + plots)");

    // spectrum
    std::string spec_input, spec_out = "spectrum.png", spec_kernels;
    int spec_group = 0;
    std::size_t spec_size = 128;
    CLI::App* spectrum_sub =
        app.add_subcommand("spectrum", "averaged Fourier log-magnitude analysis");
    spectrum_sub->fallthrough();
    spectrum_sub->add_option("--input", spec_input, "image file or directory")->required();
    spectrum_sub->add_option("--group", spec_group, "filter group 1..5 (omit for original)")
        ->check(CLI::Range(0, 5));
    spectrum_sub->add_option("--out", spec_out, "output PNG path");
    spectrum_sub->add_option("--size", spec_size, "analysis size");
    spectrum_sub->add_option("--kernels", spec_kernels, "SRM kernel file");

    // filters
    int filters_id = 0;
    std::string filters_kernels;
    CLI::App* filters_sub = app.add_subcommand("filters", "inspect the SRM kernel bank");
    filters_sub->fallthrough();
    filters_sub->add_option("--id", filters_id, "kernel id 1..30 (omit for the group table)")
        ->check(CLI::Range(0, 30));
    filters_sub->add_option("--kernels", filters_kernels, "SRM kernel file");

    // export-features
    std::string feat_checkpoint, feat_input, feat_out = "-";
    int feat_expert = 0;
    CLI::App* feat_sub =
        app.add_subcommand("export-features", "dump pooled feature vectors per expert");
    feat_sub->fallthrough();
    feat_sub->add_option("--checkpoint", feat_checkpoint, "checkpoint directory")->required();
    feat_sub->add_option("--input", feat_input, "image file or directory")->required();
    feat_sub->add_option("--expert", feat_expert, "expert 1..6 (omit for all)")
        ->check(CLI::Range(0, 6));
    feat_sub->add_option("--out", feat_out, "output file ('-' = stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    log_level() = log_level_from_string(log_level_name);

    try {
        if (app.got_subcommand(train_sub)) return run_train(train_cfg, train_kernels);
        if (app.got_subcommand(detect_sub))
            return run_detect(det_checkpoint, det_input,
                              detect_sub->count("--threshold")
                                  ? std::optional<double>(det_threshold)
                                  : std::nullopt,
                              det_merge_logits, det_json);
        if (app.got_subcommand(eval_sub))
            return run_eval(eval_checkpoint, eval_dataset, eval_split, eval_perturb,
                            eval_out, eval_csv);
        if (app.got_subcommand(sweep_sub))
            return run_sweep(sweep_checkpoint, sweep_dataset, sweep_split, sweep_grid,
                             sweep_out);
        if (app.got_subcommand(spectrum_sub))
            return run_spectrum(spec_input, spec_group, spec_out, spec_size, spec_kernels);
        if (app.got_subcommand(filters_sub)) return run_filters(filters_id, filters_kernels);
        if (app.got_subcommand(feat_sub))
            return run_export_features(feat_checkpoint, feat_input, feat_expert, feat_out);
    } catch (const Error& e) {
        log_error("%s", e.what());
        return e.code() == errc::config ? 1 : 2;
    } catch (const std::exception& e) {
        log_error("%s", e.what());
        return 2;
    }

    std::fputs(app.help().c_str(), stderr);
    return 1;
}
