#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hyperdet/checkpoint.hpp"
#include "hyperdet/config.hpp"
#include "hyperdet/core/log.hpp"
#include "hyperdet/core/optim.hpp"
#include "hyperdet/dataset.hpp"
#include "hyperdet/detector.hpp"
#include "hyperdet/objective.hpp"

namespace hyperdet {

// Gaussian blur and/or JPEG re-encode, each firing with its configured
// probability. Both draws are consumed every call so the random stream does
// not depend on which branches fire.
inline Image augment(const Image& image, const TrainConfig& cfg, Rng& rng) {
    const bool do_blur = rng.bernoulli(cfg.p_blur);
    const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    const bool do_jpeg = rng.bernoulli(cfg.p_jpeg);
    const int quality = int(rng.uniform_int(cfg.jpeg_quality_min, cfg.jpeg_quality_max));

    Image out = image;
    if (do_blur) out = gaussian_blur(out, sigma);
    if (do_jpeg) {
        try {
            out = io::decode_jpeg(io::encode_jpeg(to_channels(out, 3), quality));
        } catch (const Error& e) {
            fail(errc::augment_codec, std::string("jpeg augmentation failed: ") + e.what());
        }
    }
    return out;
}

struct TrainBatch {
    std::vector<Image> images;  // already augmented
    std::vector<double> labels;
};

struct StepReport {
    double loss_total = 0.0;
    double loss_original = 0.0;
    double loss_filtered = 0.0;
    double grad_norm = 0.0;
};

namespace detail_train {

// Builds one per-sample loss term, backpropagates weight * loss, returns the
// raw loss value. Terms with zero weight are skipped entirely, so neither
// their forward pass nor their gradients ever run.
inline double accumulate_term(Model& model, const Tensor& tokens, double label, int expert,
                              double weight) {
    if (weight == 0.0) return 0.0;
    auto adapters = model.generate_adapters(expert);
    ad::Var loss = ad::bce_with_logits(model.logit_var(tokens, &adapters),
                                       Tensor::from({1}, {label}));
    ad::backward(ad::scale(loss, weight));
    return loss.value()[0];
}

inline Tensor view_tokens(const Image& image, int group, const FilterBank& bank,
                          const BackboneSpec& spec) {
    ResidualView view = group == ResidualView::kOriginalView
                            ? ResidualView{ResidualView::kOriginalView, image}
                            : group_residual(image, bank.group(group), bank);
    return tokens_from_view(preprocess_view(view, spec), spec);
}

}  // namespace detail_train

// One optimizer step on alpha * L_original(expert 6) + (1-alpha) *
// L_filtered(expert_i): the round-robin unit of HyperDet training.
inline StepReport train_step(Model& model, Adam& optimizer, const FilterBank& bank,
                             const TrainBatch& batch, int expert_i, const TrainConfig& cfg) {
    require(expert_i >= 1 && expert_i <= 5, errc::unknown_expert,
            "train_step expert must be in 1..5");
    require(!batch.images.empty() && batch.images.size() == batch.labels.size(), errc::shape,
            "train_step: empty or mismatched batch");
    const double n = double(batch.images.size());
    const LossConfig loss_cfg = cfg.loss_config();
    loss_cfg.validate();

    optimizer.zero_grad();
    double sum_orig = 0.0, sum_filt = 0.0;
    for (std::size_t s = 0; s < batch.images.size(); ++s) {
        const Image& img = batch.images[s];
        const double label = batch.labels[s];
        Tensor orig = detail_train::view_tokens(img, ResidualView::kOriginalView, bank,
                                                model.spec());
        Tensor filt = detail_train::view_tokens(img, expert_i, bank, model.spec());
        sum_orig += detail_train::accumulate_term(model, orig, label, 6, loss_cfg.alpha / n);
        sum_filt += detail_train::accumulate_term(model, filt, label, expert_i,
                                                  (1.0 - loss_cfg.alpha) / n);
    }

    StepReport report;
    report.loss_original = sum_orig / n;
    report.loss_filtered = sum_filt / n;
    report.loss_total = loss_cfg.alpha * report.loss_original +
                        (1.0 - loss_cfg.alpha) * report.loss_filtered;
    report.grad_norm = optimizer.grad_norm();
    require(std::isfinite(report.loss_total), errc::divergence,
            "non-finite loss in train_step");
    optimizer.step();
    return report;
}

// Full schedule: all five filtered views of every batch image.
// Accumulate mode folds the five per-view totals into a single optimizer
// step; otherwise five sequential steps are taken, one per view.
inline StepReport train_step_all(Model& model, Adam& optimizer, const FilterBank& bank,
                                 const TrainBatch& batch, const TrainConfig& cfg) {
    require(!batch.images.empty() && batch.images.size() == batch.labels.size(), errc::shape,
            "train_step_all: empty or mismatched batch");
    const double n = double(batch.images.size());
    const LossConfig loss_cfg = cfg.loss_config();
    loss_cfg.validate();

    StepReport report;
    if (cfg.accumulate_views) {
        optimizer.zero_grad();
        double sum_orig = 0.0, sum_filt = 0.0;
        for (std::size_t s = 0; s < batch.images.size(); ++s) {
            const Image& img = batch.images[s];
            const double label = batch.labels[s];
            Tensor orig = detail_train::view_tokens(img, ResidualView::kOriginalView, bank,
                                                    model.spec());
            // the original-view term appears in all five per-view totals
            sum_orig += detail_train::accumulate_term(model, orig, label, 6,
                                                      5.0 * loss_cfg.alpha / n);
            for (int expert = 1; expert <= 5; ++expert) {
                Tensor filt = detail_train::view_tokens(img, expert, bank, model.spec());
                sum_filt += detail_train::accumulate_term(model, filt, label, expert,
                                                          (1.0 - loss_cfg.alpha) / n);
            }
        }
        report.loss_original = sum_orig / n;
        report.loss_filtered = sum_filt / (5.0 * n);
        report.grad_norm = optimizer.grad_norm();
        report.loss_total = loss_cfg.alpha * report.loss_original +
                            (1.0 - loss_cfg.alpha) * report.loss_filtered;
        require(std::isfinite(report.loss_total), errc::divergence,
                "non-finite loss in train_step_all");
        optimizer.step();
    } else {
        double total = 0.0, orig = 0.0, filt = 0.0;
        for (int expert = 1; expert <= 5; ++expert) {
            StepReport r = train_step(model, optimizer, bank, batch, expert, cfg);
            total += r.loss_total;
            orig += r.loss_original;
            filt += r.loss_filtered;
            report.grad_norm = r.grad_norm;
        }
        report.loss_total = total / 5.0;
        report.loss_original = orig / 5.0;
        report.loss_filtered = filt / 5.0;
    }
    return report;
}

struct TrainResult {
    std::filesystem::path checkpoint_dir;
    std::vector<double> epoch_mean_loss;
    double train_accuracy = 0.0;  // merged-detector accuracy on the train split
    std::size_t steps = 0;
};

namespace detail_train {

inline void dump_divergence(const std::filesystem::path& out_dir, Model& model,
                            std::size_t epoch, std::size_t step, const StepReport& report) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    std::ofstream os(out_dir / "divergence_dump.txt", std::ios::trunc);
    os << "epoch " << epoch << " step " << step << "\n"
       << "loss_total " << report.loss_total << "\n"
       << "loss_original " << report.loss_original << "\n"
       << "loss_filtered " << report.loss_filtered << "\n"
       << "grad_norm " << report.grad_norm << "\n";
    for (auto* p : model.trainable_parameters())
        os << p->name << " max_abs " << p->value.max_abs() << "\n";
}

}  // namespace detail_train

// Full training run per the published recipe: shuffled batches, blur/JPEG
// augmentation, the configured expert schedule, a checkpoint with manifest
// and per-group tensor blobs at the end. Deterministic for a fixed config.
inline TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    require(!cfg.data_root.empty(), errc::config, "data_root is required");
    require(!cfg.kernels_path.empty() || !cfg.resume_from.empty(), errc::config,
            "kernels_path is required (or resume from a checkpoint)");

    // resume adopts the checkpoint's model geometry and filter bank; the
    // fresh config contributes schedule, epochs target, data and output paths
    std::optional<Model> model_storage;
    std::optional<FilterBank> bank_storage;
    TrainConfig effective = cfg;
    std::size_t start_epoch = 0;
    if (!cfg.resume_from.empty()) {
        LoadedCheckpoint ck = load_checkpoint(cfg.resume_from);
        model_storage.emplace(std::move(ck.model));
        bank_storage.emplace(std::move(ck.bank));
        effective = ck.config;
        effective.data_root = cfg.data_root;
        effective.train_split = cfg.train_split;
        effective.out_dir = cfg.out_dir;
        effective.expert_schedule = cfg.expert_schedule;
        effective.accumulate_views = cfg.accumulate_views;
        start_epoch = std::size_t(ck.manifest.get_int("epochs_completed"));
        effective.epochs = std::max(cfg.epochs, start_epoch);
        log_info("resuming from %s at epoch %zu", cfg.resume_from.c_str(), start_epoch);
    } else {
        bank_storage.emplace(load_kernels(cfg.kernels_path));
        model_storage.emplace(cfg.backbone_spec(), cfg.hyper_config(), cfg.seed);
        if (!cfg.backbone_weights.empty()) {
            // pretrained seam: swap the frozen backbone for externally supplied
            // tensors (same blob format as checkpoints)
            detail_ckpt::restore_params(cfg.backbone_weights,
                                        model_storage->backbone().parameters());
            log_info("loaded frozen backbone weights from %s",
                     cfg.backbone_weights.c_str());
        }
    }
    Model& model = *model_storage;
    FilterBank& bank = *bank_storage;

    const auto samples = load_dataset(effective.data_root, effective.train_split);
    log_info("training on %zu samples from %s", samples.size(), effective.data_root.c_str());

    Adam optimizer(model.trainable_parameters(), effective.learning_rate);
    if (!cfg.resume_from.empty()) restore_optimizer(cfg.resume_from, optimizer);

    const std::uint64_t frozen_before = model.frozen_hash();
    const Rng master(effective.seed);

    TrainResult result;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = start_epoch + 1; epoch <= effective.epochs; ++epoch) {
        Rng shuffle_rng = master.fork("shuffle/" + std::to_string(epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(shuffle_rng.uniform_int(0, long(i) - 1))]);

        double epoch_loss = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += effective.batch_size) {
            const std::size_t end = std::min(order.size(), start + effective.batch_size);
            TrainBatch batch;
            for (std::size_t i = start; i < end; ++i) {
                const LabeledSample& s = samples[order[i]];
                Rng aug_rng = master.fork("augment/" + std::to_string(epoch) + "/" +
                                          std::to_string(order[i]));
                batch.images.push_back(augment(load_sample_image(s), effective, aug_rng));
                batch.labels.push_back(double(s.label));
            }

            StepReport report;
            try {
                if (effective.expert_schedule == TrainConfig::Schedule::full) {
                    report = train_step_all(model, optimizer, bank, batch, effective);
                } else {
                    const int expert = int(result.steps % 5) + 1;
                    report = train_step(model, optimizer, bank, batch, expert, effective);
                }
            } catch (const Error& e) {
                if (e.code() == errc::divergence) {
                    detail_train::dump_divergence(effective.out_dir, model, epoch,
                                                  result.steps, report);
                    log_error("divergence at epoch %zu step %zu; dump written to %s",
                              epoch, result.steps,
                              (effective.out_dir + "/divergence_dump.txt").c_str());
                }
                throw;
            }
            epoch_loss += report.loss_total;
            epoch_steps += 1;
            result.steps += 1;
        }
        const double mean_loss = epoch_steps ? epoch_loss / double(epoch_steps) : 0.0;
        result.epoch_mean_loss.push_back(mean_loss);
        log_info("epoch %zu/%zu: mean total loss %.6f over %zu steps", epoch,
                 effective.epochs, mean_loss, epoch_steps);
    }

    require(model.frozen_hash() == frozen_before, errc::divergence,
            "frozen backbone weights changed during training");

    // merged-detector accuracy on the training split, recorded in the manifest
    {
        DetectorModel det(model, bank, effective, Manifest{});
        std::size_t correct = 0;
        for (const auto& s : samples) {
            const Verdict v = det.detect(load_sample_image(s));
            if (int(v.fake) == s.label) ++correct;
        }
        result.train_accuracy = 100.0 * double(correct) / double(samples.size());
    }

    std::vector<std::pair<std::string, double>> metrics;
    metrics.emplace_back("train_accuracy", result.train_accuracy);
    for (std::size_t i = 0; i < result.epoch_mean_loss.size(); ++i)
        metrics.emplace_back("epoch_mean_loss." + std::to_string(start_epoch + i + 1),
                             result.epoch_mean_loss[i]);
    save_checkpoint(effective.out_dir, model, bank, effective, effective.epochs, metrics,
                    &optimizer);
    result.checkpoint_dir = effective.out_dir;
    log_info("checkpoint written to %s (train accuracy %.2f%%)",
             effective.out_dir.c_str(), result.train_accuracy);
    return result;
}

}  // namespace hyperdet
