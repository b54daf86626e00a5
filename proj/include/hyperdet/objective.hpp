#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "hyperdet/core/autodiff.hpp"
#include "hyperdet/core/error.hpp"
#include "hyperdet/core/tensor.hpp"

namespace hyperdet {

struct LossConfig {
    double alpha = 0.1;     // weight of the original-view term
    double epsilon = 1e-7;  // probability clamp when losses come from scores

    void validate() const {
        require(alpha >= 0.0 && alpha <= 1.0, errc::config, "alpha must lie in [0, 1]");
        require(epsilon > 0.0, errc::config, "epsilon must be positive");
    }
};

// Mean binary cross-entropy over probability scores; real = 0, fake = 1.
// Scores are clamped to [epsilon, 1 - epsilon] before the logs.
inline double bce_loss(const std::vector<double>& scores, const std::vector<double>& labels,
                       const LossConfig& cfg = {}) {
    cfg.validate();
    require(scores.size() == labels.size() && !scores.empty(), errc::shape,
            "bce_loss: scores and labels must be equal-length and non-empty");
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double y = labels[i];
        require(y == 0.0 || y == 1.0, errc::label, "labels must be 0 or 1");
        const double p = std::clamp(scores[i], cfg.epsilon, 1.0 - cfg.epsilon);
        total += -(y * std::log(p) + (1.0 - y) * std::log1p(-p));
    }
    return total / double(scores.size());
}

// L = alpha * L_original + (1 - alpha) * L_filtered
inline double total_loss(double loss_original, double loss_filtered, const LossConfig& cfg) {
    cfg.validate();
    require(std::isfinite(loss_original) && loss_original >= 0.0, errc::config,
            "loss_original must be finite and non-negative");
    require(std::isfinite(loss_filtered) && loss_filtered >= 0.0, errc::config,
            "loss_filtered must be finite and non-negative");
    return cfg.alpha * loss_original + (1.0 - cfg.alpha) * loss_filtered;
}

// Differentiable combination used by the trainer: the loss terms arrive as
// scalar graph nodes built with ad::bce_with_logits.
inline ad::Var total_loss_var(const ad::Var& loss_original, const ad::Var& loss_filtered,
                              const LossConfig& cfg) {
    cfg.validate();
    return ad::add(ad::scale(loss_original, cfg.alpha),
                   ad::scale(loss_filtered, 1.0 - cfg.alpha));
}

}  // namespace hyperdet
