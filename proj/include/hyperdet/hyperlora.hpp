#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hyperdet/core/autodiff.hpp"
#include "hyperdet/core/error.hpp"
#include "hyperdet/core/rng.hpp"
#include "hyperdet/core/tensor.hpp"

namespace hyperdet {

struct HyperNetConfig {
    std::size_t embed_dim = 64;   // width e of every embedding row
    std::size_t hidden_dim = 128; // combiner output width
    std::size_t rank = 16;
    double lora_scale = 1.0;
    bool combiner_nonlinearity = true;  // false = purely affine generator
    bool freeze_embeddings = false;
    std::size_t num_tasks = 6;  // 5 filtered views + the original image
};

// One injection site: transformer block `layer` (1-based global index) and
// MLP position k (1 = expansion linear, 2 = projection linear).
struct LoraSite {
    int layer = 0;
    int position = 0;

    bool operator==(const LoraSite&) const = default;
};

// Generated low-rank pair for one (expert, site): delta W = A * B.
struct LoraWeights {
    LoraSite site;
    int expert = 0;
    Tensor a;  // [d_out x r]
    Tensor b;  // [r x d_in]
};

struct LoraVars {
    LoraSite site;
    int expert = 0;
    ad::Var a;
    ad::Var b;
};

struct EmbeddingTables {
    Parameter task;      // [num_tasks x e]
    Parameter layer;     // [num_layers x e]
    Parameter position;  // [2 x e]
};

// Generates per-site LoRA pairs from (task, layer, position) embeddings via a
// shared combiner and two per-position linear heads whose output shapes match
// the site geometry. The whole path is differentiable, so training the
// hypernetwork trains every expert at once.
class HyperNetwork {
public:
    HyperNetwork() = default;  // empty shell; real instances come from the full ctor

    HyperNetwork(HyperNetConfig cfg, std::vector<int> layer_ids,
                 std::array<std::pair<std::size_t, std::size_t>, 2> position_shapes,
                 Rng rng)
        : cfg_(cfg), layer_ids_(std::move(layer_ids)), position_shapes_(position_shapes) {
        require(cfg_.num_tasks >= 1, errc::config, "num_tasks must be >= 1");
        require(!layer_ids_.empty(), errc::config, "at least one fine-tuned layer required");
        require(cfg_.rank >= 1, errc::config, "rank must be >= 1");
        for (const auto& [d_out, d_in] : position_shapes_) {
            require(cfg_.rank <= std::min(d_out, d_in) / 2, errc::config,
                    "rank must satisfy r <= min(d_out, d_in) / 2");
        }

        const std::size_t e = cfg_.embed_dim;
        const bool train_emb = !cfg_.freeze_embeddings;
        Rng r_task = rng.fork("task");
        Rng r_layer = rng.fork("layer");
        Rng r_pos = rng.fork("position");
        Rng r_comb = rng.fork("combiner");
        Rng r_heads = rng.fork("heads");

        tables_.task = Parameter("hyperlora.task_embed",
                                 Tensor::randn({cfg_.num_tasks, e}, r_task), train_emb);
        tables_.layer = Parameter("hyperlora.layer_embed",
                                  Tensor::randn({layer_ids_.size(), e}, r_layer), train_emb);
        tables_.position = Parameter("hyperlora.position_embed",
                                     Tensor::randn({2, e}, r_pos), train_emb);

        const double comb_std = 1.0 / std::sqrt(double(3 * e));
        combiner_w_ = Parameter("hyperlora.combiner.weight",
                                Tensor::randn({cfg_.hidden_dim, 3 * e}, r_comb, comb_std));
        combiner_b_ = Parameter("hyperlora.combiner.bias", Tensor::zeros({cfg_.hidden_dim}));

        for (std::size_t k = 0; k < 2; ++k) {
            const auto [d_out, d_in] = position_shapes_[k];
            const std::string tag = "hyperlora.head_p" + std::to_string(k + 1);
            // head_A small random, head_B zero: every expert starts as the
            // frozen backbone and training moves them away from it
            heads_[k].a_w = Parameter(tag + ".a.weight",
                                      Tensor::randn({d_out * cfg_.rank, cfg_.hidden_dim},
                                                    r_heads, 0.02));
            heads_[k].a_b = Parameter(tag + ".a.bias", Tensor::zeros({d_out * cfg_.rank}));
            heads_[k].b_w = Parameter(tag + ".b.weight",
                                      Tensor::zeros({cfg_.rank * d_in, cfg_.hidden_dim}));
            heads_[k].b_b = Parameter(tag + ".b.bias", Tensor::zeros({cfg_.rank * d_in}));
        }
    }

    const HyperNetConfig& config() const { return cfg_; }
    const std::vector<int>& layer_ids() const { return layer_ids_; }
    EmbeddingTables& tables() { return tables_; }
    const EmbeddingTables& tables() const { return tables_; }

    std::pair<std::size_t, std::size_t> site_shape(int position) const {
        require(position == 1 || position == 2, errc::unknown_site,
                "position must be 1 or 2, got " + std::to_string(position));
        return position_shapes_[std::size_t(position - 1)];
    }

    std::size_t layer_row(int layer) const {
        for (std::size_t i = 0; i < layer_ids_.size(); ++i)
            if (layer_ids_[i] == layer) return i;
        fail(errc::unknown_site, "layer " + std::to_string(layer) + " is not fine-tuned");
    }

    // Eq-style generation: concat(t_i, l_j, p_k) -> combiner -> two heads,
    // reshaped to (A, B). Deterministic for fixed parameters.
    LoraVars generate(int expert, LoraSite site) {
        require(expert >= 1 && expert <= int(cfg_.num_tasks), errc::unknown_expert,
                "expert must be in 1.." + std::to_string(cfg_.num_tasks) + ", got " +
                    std::to_string(expert));
        const std::size_t lrow = layer_row(site.layer);
        const auto [d_out, d_in] = site_shape(site.position);
        Head& head = heads_[std::size_t(site.position - 1)];

        using namespace ad;
        Var t = row(Var::leaf(tables_.task), std::size_t(expert - 1));
        Var l = row(Var::leaf(tables_.layer), lrow);
        Var p = row(Var::leaf(tables_.position), std::size_t(site.position - 1));
        Var z = concat_cols({t, l, p});
        Var h = linear(z, Var::leaf(combiner_w_), Var::leaf(combiner_b_));
        if (cfg_.combiner_nonlinearity) h = tanh_act(h);
        Var a = reshape(linear(h, Var::leaf(head.a_w), Var::leaf(head.a_b)),
                        {d_out, cfg_.rank});
        Var b = reshape(linear(h, Var::leaf(head.b_w), Var::leaf(head.b_b)),
                        {cfg_.rank, d_in});
        return LoraVars{site, expert, a, b};
    }

    LoraWeights generate_values(int expert, LoraSite site) {
        ad::NoGradGuard no_grad;
        LoraVars v = generate(expert, site);
        return LoraWeights{site, expert, v.a.value(), v.b.value()};
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out = {&tables_.task,  &tables_.layer, &tables_.position,
                                       &combiner_w_,   &combiner_b_};
        for (auto& h : heads_) {
            out.push_back(&h.a_w);
            out.push_back(&h.a_b);
            out.push_back(&h.b_w);
            out.push_back(&h.b_b);
        }
        return out;
    }

    std::size_t trainable_parameter_count() {
        std::size_t n = 0;
        for (auto* p : parameters())
            if (p->trainable) n += p->value.size();
        return n;
    }

private:
    struct Head {
        Parameter a_w, a_b, b_w, b_b;
    };

    HyperNetConfig cfg_;
    std::vector<int> layer_ids_;
    std::array<std::pair<std::size_t, std::size_t>, 2> position_shapes_;
    EmbeddingTables tables_;
    Parameter combiner_w_, combiner_b_;
    std::array<Head, 2> heads_;
};

// y = x W^T + bias + scale * (x B^T) A^T, the low-rank bypass around a frozen
// linear layer. x rows are samples/tokens.
inline ad::Var adapted_linear(const ad::Var& x, const ad::Var& w, const ad::Var& bias,
                              const LoraVars& lora, double scale) {
    require(x.cols() == w.cols(), errc::shape, "adapted_linear: input width mismatch");
    require(lora.b.cols() == x.cols(), errc::shape, "adapted_linear: B width mismatch");
    require(lora.a.rows() == w.rows(), errc::shape, "adapted_linear: A height mismatch");
    ad::Var frozen = ad::linear(x, w, bias);
    if (scale == 0.0) return frozen;
    ad::Var bypass = ad::matmul_nt(ad::matmul_nt(x, lora.b), lora.a);
    return ad::add(frozen, ad::scale(bypass, scale));
}

// Plain-tensor convenience form of the same computation.
inline Tensor adapted_forward(const Tensor& x_in, const Tensor& w, const Tensor& bias,
                              const LoraWeights& lora, double scale) {
    Tensor x = x_in.ndim() == 1 ? x_in.reshaped({1, x_in.size()}) : x_in;
    require(x.cols() == w.cols(), errc::shape, "adapted_forward: input width mismatch");
    require(!bias.defined() || bias.size() == w.rows(), errc::shape,
            "adapted_forward: bias size mismatch");
    require(lora.a.rows() == w.rows() && lora.b.cols() == w.cols() &&
                lora.a.cols() == lora.b.rows(),
            errc::shape, "adapted_forward: lora shape mismatch");
    ad::NoGradGuard no_grad;
    ad::Var xv = ad::Var::constant(x);
    LoraVars lv{lora.site, lora.expert, ad::Var::constant(lora.a), ad::Var::constant(lora.b)};
    ad::Var y = adapted_linear(xv, ad::Var::constant(w),
                               bias.defined() ? ad::Var::constant(bias) : ad::Var(), lv, scale);
    Tensor out = y.value();
    return x_in.ndim() == 1 ? out.reshaped({out.size()}) : out;
}

}  // namespace hyperdet
