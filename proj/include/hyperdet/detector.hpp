#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperdet/backbone.hpp"
#include "hyperdet/checkpoint.hpp"
#include "hyperdet/core/log.hpp"
#include "hyperdet/dataset.hpp"
#include "hyperdet/filterbank.hpp"

namespace hyperdet {

struct DetectOptions {
    // The running sum must stay >= threshold for the loop to continue; the
    // default never trips, so all six scores are merged.
    double early_exit_threshold = -std::numeric_limits<double>::infinity();
    // sum pre-sigmoid logits instead of sigmoid scores (decision at mean >= 0)
    bool merge_logits = false;
    // evaluation order of the tail experts; the first iteration is always
    // expert 1 plus expert 6 (the original image)
    std::array<int, 4> tail_order = {2, 3, 4, 5};
};

struct ExpertScore {
    int expert = 0;
    double score = 0.0;  // sigmoid probability
    double logit = 0.0;
};

struct Verdict {
    double merged_score = 0.0;             // running sum y over evaluated outputs
    std::vector<ExpertScore> per_expert_scores;
    int experts_evaluated = 0;             // loop iterations completed (1..5)
    bool fake = false;
    double threshold_used = 0.0;

    double normalized_score() const {
        return per_expert_scores.empty()
                   ? 0.0
                   : merged_score / double(per_expert_scores.size());
    }
};

inline void to_json(nlohmann::json& j, const Verdict& v) {
    j = nlohmann::json{{"merged_score", v.merged_score},
                       {"normalized_score", v.normalized_score()},
                       {"experts_evaluated", v.experts_evaluated},
                       {"label", v.fake ? "fake" : "real"},
                       {"threshold", v.threshold_used},
                       {"per_expert", nlohmann::json::array()}};
    for (const auto& s : v.per_expert_scores)
        j["per_expert"].push_back(
            {{"expert", s.expert}, {"score", s.score}, {"logit", s.logit}});
}

// Immutable inference bundle: model + filter bank + the manifest it was
// loaded from, with LoRA weights materialized once per expert.
class DetectorModel {
public:
    DetectorModel(Model model, FilterBank bank, TrainConfig cfg, Manifest manifest)
        : model_(std::move(model)), bank_(std::move(bank)), cfg_(std::move(cfg)),
          manifest_(std::move(manifest)) {
        rebuild_cache();
    }

    static DetectorModel load(const std::filesystem::path& dir) {
        LoadedCheckpoint ck = load_checkpoint(dir);
        return DetectorModel(std::move(ck.model), std::move(ck.bank), std::move(ck.config),
                             std::move(ck.manifest));
    }

    Model& model() { return model_; }
    const FilterBank& bank() const { return bank_; }
    const TrainConfig& config() const { return cfg_; }
    const Manifest& manifest() const { return manifest_; }

    // Call after mutating model parameters (e.g. tests poking weights).
    void rebuild_cache() {
        for (int expert = 1; expert <= 6; ++expert) {
            auto& slot = cache_[std::size_t(expert - 1)];
            slot.clear();
            for (const auto& site : model_.sites())
                slot.push_back(model_.hypernetwork().generate_values(expert, site));
        }
    }

    ExpertScore score_view(const ResidualView& view, int expert) {
        require(expert >= 1 && expert <= 6, errc::unknown_expert,
                "expert must be in 1..6");
        ad::NoGradGuard no_grad;
        const auto& cached = cache_[std::size_t(expert - 1)];
        std::vector<LoraVars> adapters;
        adapters.reserve(cached.size());
        for (const auto& lw : cached)
            adapters.push_back(LoraVars{lw.site, lw.expert, ad::Var::constant(lw.a),
                                        ad::Var::constant(lw.b)});
        const ResidualView ready = preprocess_view(view, model_.spec());
        ad::Var logit = model_.logit_var(tokens_from_view(ready, model_.spec()), &adapters);
        const double z = logit.value()[0];
        return ExpertScore{expert, Model::score_from_logit(z), z};
    }

    Verdict detect(const Image& image, const DetectOptions& opts = {}) {
        const auto views = make_views(image, bank_);  // groups 1..5 then original
        auto output_of = [&](const ExpertScore& s) {
            return opts.merge_logits ? s.logit : s.score;
        };

        Verdict v;
        v.threshold_used = opts.early_exit_threshold;

        // iteration 1 merges the first filtered view and the original image
        ExpertScore s1 = score_view(views[0], 1);
        ExpertScore s6 = score_view(views[5], 6);
        v.per_expert_scores = {s1, s6};
        v.merged_score = output_of(s1) + output_of(s6);
        v.experts_evaluated = 1;

        if (v.merged_score >= opts.early_exit_threshold) {
            for (int expert : opts.tail_order) {
                require(expert >= 2 && expert <= 5, errc::unknown_expert,
                        "tail order entries must be in 2..5");
                ExpertScore s = score_view(views[std::size_t(expert - 1)], expert);
                v.per_expert_scores.push_back(s);
                v.merged_score += output_of(s);
                v.experts_evaluated += 1;
                if (!(v.merged_score >= opts.early_exit_threshold)) break;
            }
        }

        const double boundary = opts.merge_logits ? 0.0 : 0.5;
        v.fake = v.normalized_score() >= boundary;
        return v;
    }

private:
    Model model_;
    FilterBank bank_;
    TrainConfig cfg_;
    Manifest manifest_;
    std::array<std::vector<LoraWeights>, 6> cache_;
};

struct BatchEntry {
    std::filesystem::path path;
    std::optional<Verdict> verdict;
    std::string error;  // empty on success
};

struct BatchResult {
    std::vector<BatchEntry> entries;
    std::size_t ok = 0;
    std::size_t failed = 0;
};

// Order-preserving batch detection; per-file failures are recorded inline and
// never abort the batch. Only a batch with zero successes is an error.
inline BatchResult detect_batch(DetectorModel& model,
                                const std::vector<std::filesystem::path>& paths,
                                const DetectOptions& opts = {}) {
    BatchResult result;
    result.entries.reserve(paths.size());
    for (const auto& path : paths) {
        BatchEntry entry;
        entry.path = path;
        try {
            Image img = io::load_image(path);
            entry.verdict = model.detect(img, opts);
            result.ok += 1;
        } catch (const Error& e) {
            entry.error = e.what();
            result.failed += 1;
            log_warn("detect: %s: %s", path.string().c_str(), e.what());
        }
        result.entries.push_back(std::move(entry));
    }
    require(result.ok > 0 || paths.empty(), errc::empty_result,
            "no readable images in batch of " + std::to_string(paths.size()));
    return result;
}

}  // namespace hyperdet
