#pragma once

#include <cstdint>
#include <string>

#include "hyperdet/backbone.hpp"
#include "hyperdet/core/error.hpp"
#include "hyperdet/core/serialize.hpp"
#include "hyperdet/hyperlora.hpp"
#include "hyperdet/objective.hpp"

namespace hyperdet {

// Everything needed to reproduce a training run. All defaults mirror the
// published recipe: lr 1e-4, 5 epochs, rank 16, last 8 blocks, alpha 0.1,
// augmentation probabilities 0.1.
struct TrainConfig {
    enum class Schedule { round_robin, full };

    // optimization
    double learning_rate = 1e-4;
    std::size_t epochs = 5;
    std::size_t batch_size = 8;
    std::size_t rank = 16;
    std::size_t fine_tuned_blocks = 8;
    double alpha = 0.1;
    double p_blur = 0.1;
    double p_jpeg = 0.1;
    std::uint64_t seed = 0;

    // augmentation draw ranges
    double blur_sigma_min = 0.0;
    double blur_sigma_max = 2.0;
    int jpeg_quality_min = 60;
    int jpeg_quality_max = 95;

    // expert schedule: round-robin cycles one filtered expert per batch; full
    // trains all five per batch, either accumulated into one step or as five
    // sequential steps
    Schedule expert_schedule = Schedule::round_robin;
    bool accumulate_views = true;

    // model geometry
    BackboneSpec backbone = BackboneSpec::toy();
    std::size_t embed_dim = 64;
    std::size_t hidden_dim = 128;
    double lora_scale = 1.0;
    bool combiner_nonlinearity = true;
    bool freeze_embeddings = false;

    // data & artifacts
    std::string backbone_weights;  // optional tensor blob for the frozen backbone
    std::string data_root;
    std::string train_split = "train";
    std::string kernels_path;
    std::string out_dir = "checkpoint";
    std::string resume_from;

    LossConfig loss_config() const { return LossConfig{alpha, 1e-7}; }

    HyperNetConfig hyper_config() const {
        HyperNetConfig h;
        h.embed_dim = embed_dim;
        h.hidden_dim = hidden_dim;
        h.rank = rank;
        h.lora_scale = lora_scale;
        h.combiner_nonlinearity = combiner_nonlinearity;
        h.freeze_embeddings = freeze_embeddings;
        h.num_tasks = 6;
        return h;
    }

    BackboneSpec backbone_spec() const {
        BackboneSpec s = backbone;
        s.fine_tuned_blocks = fine_tuned_blocks;
        return s;
    }

    void validate() const {
        require(learning_rate > 0.0, errc::config, "learning_rate must be positive");
        require(epochs >= 1, errc::config, "epochs must be >= 1");
        require(batch_size >= 1, errc::config, "batch_size must be >= 1");
        require(rank >= 1, errc::config, "rank must be >= 1");
        require(fine_tuned_blocks >= 1, errc::config, "fine_tuned_blocks must be >= 1");
        require(alpha >= 0.0 && alpha <= 1.0, errc::config, "alpha must lie in [0, 1]");
        require(p_blur >= 0.0 && p_blur <= 1.0, errc::config, "p_blur must lie in [0, 1]");
        require(p_jpeg >= 0.0 && p_jpeg <= 1.0, errc::config, "p_jpeg must lie in [0, 1]");
        require(blur_sigma_min >= 0.0 && blur_sigma_max >= blur_sigma_min, errc::config,
                "blur sigma range must be non-negative and ordered");
        require(jpeg_quality_min >= 1 && jpeg_quality_max <= 100 &&
                    jpeg_quality_min <= jpeg_quality_max,
                errc::config, "jpeg quality range must lie in 1..100 and be ordered");
        backbone_spec().validate();
    }
};

namespace cfgio {

inline std::string variant_name(BackboneSpec::Variant v) {
    return v == BackboneSpec::Variant::toy ? "toy" : "pretrained-adapter";
}
inline BackboneSpec::Variant variant_from(const std::string& s) {
    if (s == "toy") return BackboneSpec::Variant::toy;
    if (s == "pretrained-adapter") return BackboneSpec::Variant::pretrained_adapter;
    fail(errc::config, "unknown backbone variant: " + s + " (expected toy|pretrained-adapter)");
}
inline std::string pooling_name(BackboneSpec::Pooling p) {
    return p == BackboneSpec::Pooling::cls ? "cls" : "mean";
}
inline BackboneSpec::Pooling pooling_from(const std::string& s) {
    if (s == "cls") return BackboneSpec::Pooling::cls;
    if (s == "mean") return BackboneSpec::Pooling::mean;
    fail(errc::config, "unknown pooling: " + s + " (expected cls|mean)");
}
inline std::string schedule_name(TrainConfig::Schedule s) {
    return s == TrainConfig::Schedule::round_robin ? "round-robin" : "full";
}
inline TrainConfig::Schedule schedule_from(const std::string& s) {
    if (s == "round-robin") return TrainConfig::Schedule::round_robin;
    if (s == "full") return TrainConfig::Schedule::full;
    fail(errc::config, "unknown expert schedule: " + s + " (expected round-robin|full)");
}

}  // namespace cfgio

inline void config_to_manifest(const TrainConfig& c, Manifest& m) {
    m.set("config.learning_rate", c.learning_rate);
    m.set("config.epochs", std::int64_t(c.epochs));
    m.set("config.batch_size", std::int64_t(c.batch_size));
    m.set("config.rank", std::int64_t(c.rank));
    m.set("config.fine_tuned_blocks", std::int64_t(c.fine_tuned_blocks));
    m.set("config.alpha", c.alpha);
    m.set("config.p_blur", c.p_blur);
    m.set("config.p_jpeg", c.p_jpeg);
    m.set("config.seed", std::uint64_t(c.seed));
    m.set("config.blur_sigma_min", c.blur_sigma_min);
    m.set("config.blur_sigma_max", c.blur_sigma_max);
    m.set("config.jpeg_quality_min", std::int64_t(c.jpeg_quality_min));
    m.set("config.jpeg_quality_max", std::int64_t(c.jpeg_quality_max));
    m.set("config.expert_schedule", cfgio::schedule_name(c.expert_schedule));
    m.set("config.accumulate_views", c.accumulate_views);
    m.set("config.backbone.variant", cfgio::variant_name(c.backbone.variant));
    m.set("config.backbone.image_size", std::int64_t(c.backbone.image_size));
    m.set("config.backbone.patch_size", std::int64_t(c.backbone.patch_size));
    m.set("config.backbone.depth", std::int64_t(c.backbone.depth));
    m.set("config.backbone.width", std::int64_t(c.backbone.width));
    m.set("config.backbone.heads", std::int64_t(c.backbone.heads));
    m.set("config.backbone.mlp_ratio", std::int64_t(c.backbone.mlp_ratio));
    m.set("config.backbone.feature_dim", std::int64_t(c.backbone.feature_dim));
    m.set("config.backbone.pooling", cfgio::pooling_name(c.backbone.pooling));
    for (int ch = 0; ch < 3; ++ch) {
        m.set("config.backbone.pixel_mean." + std::to_string(ch), c.backbone.pixel_mean[ch]);
        m.set("config.backbone.pixel_std." + std::to_string(ch), c.backbone.pixel_std[ch]);
    }
    m.set("config.embed_dim", std::int64_t(c.embed_dim));
    m.set("config.hidden_dim", std::int64_t(c.hidden_dim));
    m.set("config.lora_scale", c.lora_scale);
    m.set("config.combiner_nonlinearity", c.combiner_nonlinearity);
    m.set("config.freeze_embeddings", c.freeze_embeddings);
    m.set("config.backbone_weights", c.backbone_weights);
    m.set("config.data_root", c.data_root);
    m.set("config.train_split", c.train_split);
}

inline TrainConfig config_from_manifest(const Manifest& m) {
    TrainConfig c;
    c.learning_rate = m.get_double("config.learning_rate");
    c.epochs = std::size_t(m.get_int("config.epochs"));
    c.batch_size = std::size_t(m.get_int("config.batch_size"));
    c.rank = std::size_t(m.get_int("config.rank"));
    c.fine_tuned_blocks = std::size_t(m.get_int("config.fine_tuned_blocks"));
    c.alpha = m.get_double("config.alpha");
    c.p_blur = m.get_double("config.p_blur");
    c.p_jpeg = m.get_double("config.p_jpeg");
    c.seed = m.get_uint("config.seed");
    c.blur_sigma_min = m.get_double("config.blur_sigma_min");
    c.blur_sigma_max = m.get_double("config.blur_sigma_max");
    c.jpeg_quality_min = int(m.get_int("config.jpeg_quality_min"));
    c.jpeg_quality_max = int(m.get_int("config.jpeg_quality_max"));
    c.expert_schedule = cfgio::schedule_from(m.get("config.expert_schedule"));
    c.accumulate_views = m.get_bool("config.accumulate_views");
    c.backbone.variant = cfgio::variant_from(m.get("config.backbone.variant"));
    c.backbone.image_size = std::size_t(m.get_int("config.backbone.image_size"));
    c.backbone.patch_size = std::size_t(m.get_int("config.backbone.patch_size"));
    c.backbone.depth = std::size_t(m.get_int("config.backbone.depth"));
    c.backbone.width = std::size_t(m.get_int("config.backbone.width"));
    c.backbone.heads = std::size_t(m.get_int("config.backbone.heads"));
    c.backbone.mlp_ratio = std::size_t(m.get_int("config.backbone.mlp_ratio"));
    c.backbone.feature_dim = std::size_t(m.get_int("config.backbone.feature_dim"));
    c.backbone.pooling = cfgio::pooling_from(m.get("config.backbone.pooling"));
    for (int ch = 0; ch < 3; ++ch) {
        c.backbone.pixel_mean[ch] = m.get_double("config.backbone.pixel_mean." +
                                                  std::to_string(ch));
        c.backbone.pixel_std[ch] = m.get_double("config.backbone.pixel_std." +
                                                 std::to_string(ch));
    }
    c.backbone.fine_tuned_blocks = c.fine_tuned_blocks;
    c.embed_dim = std::size_t(m.get_int("config.embed_dim"));
    c.hidden_dim = std::size_t(m.get_int("config.hidden_dim"));
    c.lora_scale = m.get_double("config.lora_scale");
    c.combiner_nonlinearity = m.get_bool("config.combiner_nonlinearity");
    c.freeze_embeddings = m.get_bool("config.freeze_embeddings");
    c.backbone_weights = m.get_or("config.backbone_weights", "");
    c.data_root = m.get_or("config.data_root", "");
    c.train_split = m.get_or("config.train_split", "train");
    return c;
}

// Fingerprint of the effective configuration, echoed into every artifact.
inline std::string config_hash(const TrainConfig& c) {
    Manifest m;
    config_to_manifest(c, m);
    return hex64(fnv1a64(m.text()));
}

}  // namespace hyperdet
