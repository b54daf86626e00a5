#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hyperdet/core/autodiff.hpp"
#include "hyperdet/core/error.hpp"
#include "hyperdet/core/image.hpp"
#include "hyperdet/core/rng.hpp"
#include "hyperdet/core/tensor.hpp"
#include "hyperdet/filterbank.hpp"
#include "hyperdet/hyperlora.hpp"

namespace hyperdet {

struct BackboneSpec {
    enum class Variant { toy, pretrained_adapter };
    enum class Pooling { cls, mean };

    Variant variant = Variant::toy;
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t depth = 4;
    std::size_t width = 64;  // token width d
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t feature_dim = 64;
    std::size_t fine_tuned_blocks = 8;  // clamped to depth
    Pooling pooling = Pooling::cls;
    std::array<double, 3> pixel_mean{0.5, 0.5, 0.5};
    std::array<double, 3> pixel_std{0.5, 0.5, 0.5};

    static BackboneSpec toy() { return BackboneSpec{}; }

    // CLIP ViT-L/14 geometry; weights must be supplied externally.
    static BackboneSpec paper_scale() {
        BackboneSpec s;
        s.variant = Variant::pretrained_adapter;
        s.image_size = 224;
        s.patch_size = 14;
        s.depth = 24;
        s.width = 1024;
        s.heads = 16;
        s.feature_dim = 768;
        s.fine_tuned_blocks = 8;
        return s;
    }

    void validate() const {
        require(image_size > 0 && patch_size > 0 && image_size % patch_size == 0,
                errc::config, "image_size must be a positive multiple of patch_size");
        require(depth >= 1, errc::config, "depth must be >= 1");
        require(width >= 1 && width % heads == 0, errc::config,
                "width must be divisible by heads");
        require(mlp_ratio >= 1, errc::config, "mlp_ratio must be >= 1");
        require(fine_tuned_blocks >= 1, errc::config, "fine_tuned_blocks must be >= 1");
    }

    std::size_t tokens_per_side() const { return image_size / patch_size; }
    std::size_t num_patches() const { return tokens_per_side() * tokens_per_side(); }
    std::size_t effective_fine_tuned() const { return std::min(fine_tuned_blocks, depth); }

    // 1-based indices of the last B blocks
    std::vector<int> fine_tuned_block_ids() const {
        std::vector<int> ids;
        const std::size_t b = effective_fine_tuned();
        for (std::size_t j = depth - b + 1; j <= depth; ++j) ids.push_back(int(j));
        return ids;
    }

    // every (block, position) adapted by LoRA; k=1 expansion, k=2 projection
    std::vector<LoraSite> injection_sites() const {
        std::vector<LoraSite> sites;
        for (int j : fine_tuned_block_ids())
            for (int k : {1, 2}) sites.push_back(LoraSite{j, k});
        return sites;
    }

    std::array<std::pair<std::size_t, std::size_t>, 2> position_shapes() const {
        return {{{width * mlp_ratio, width}, {width, width * mlp_ratio}}};
    }
};

// Sigmoid head over the pooled feature vector.
struct ClassificationHead {
    Parameter weight;  // [1 x feature_dim]
    Parameter bias;    // [1]

    ClassificationHead() = default;
    ClassificationHead(std::size_t feature_dim, Rng rng)
        : weight("head.weight", Tensor::randn({1, feature_dim}, rng, 0.02)),
          bias("head.bias", Tensor::zeros({1})) {}

    std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

// Pre-norm vision transformer. All parameters are frozen; the only way its
// behavior changes is through LoRA adapters injected at the MLP linears of
// the fine-tuned blocks.
class VisionTransformer {
public:
    VisionTransformer() = default;

    VisionTransformer(const BackboneSpec& spec, Rng rng) : spec_(spec) {
        spec_.validate();
        const std::size_t d = spec_.width;
        const std::size_t pd = spec_.patch_size * spec_.patch_size * 3;
        const std::size_t hidden = d * spec_.mlp_ratio;
        auto frozen = [](std::string name, Tensor t) {
            return Parameter(std::move(name), std::move(t), /*trainable=*/false);
        };
        Rng r = rng.fork("vit");
        patch_w_ = frozen("backbone.patch.weight",
                          Tensor::randn({d, pd}, r, 1.0 / std::sqrt(double(pd))));
        patch_b_ = frozen("backbone.patch.bias", Tensor::zeros({d}));
        cls_ = frozen("backbone.cls", Tensor::randn({1, d}, r, 0.02));
        pos_ = frozen("backbone.pos", Tensor::randn({spec_.num_patches() + 1, d}, r, 0.02));
        const double attn_std = 1.0 / std::sqrt(double(d));
        blocks_.resize(spec_.depth);
        for (std::size_t i = 0; i < spec_.depth; ++i) {
            Block& b = blocks_[i];
            const std::string tag = "backbone.block" + std::to_string(i + 1);
            b.ln1_g = frozen(tag + ".ln1.gamma", Tensor::full({d}, 1.0));
            b.ln1_b = frozen(tag + ".ln1.beta", Tensor::zeros({d}));
            b.wq = frozen(tag + ".attn.q.weight", Tensor::randn({d, d}, r, attn_std));
            b.bq = frozen(tag + ".attn.q.bias", Tensor::zeros({d}));
            b.wk = frozen(tag + ".attn.k.weight", Tensor::randn({d, d}, r, attn_std));
            b.bk = frozen(tag + ".attn.k.bias", Tensor::zeros({d}));
            b.wv = frozen(tag + ".attn.v.weight", Tensor::randn({d, d}, r, attn_std));
            b.bv = frozen(tag + ".attn.v.bias", Tensor::zeros({d}));
            b.wo = frozen(tag + ".attn.out.weight", Tensor::randn({d, d}, r, attn_std));
            b.bo = frozen(tag + ".attn.out.bias", Tensor::zeros({d}));
            b.ln2_g = frozen(tag + ".ln2.gamma", Tensor::full({d}, 1.0));
            b.ln2_b = frozen(tag + ".ln2.beta", Tensor::zeros({d}));
            b.fc1_w = frozen(tag + ".fc1.weight",
                             Tensor::randn({hidden, d}, r, 1.0 / std::sqrt(double(d))));
            b.fc1_b = frozen(tag + ".fc1.bias", Tensor::zeros({hidden}));
            b.fc2_w = frozen(tag + ".fc2.weight",
                             Tensor::randn({d, hidden}, r, 1.0 / std::sqrt(double(hidden))));
            b.fc2_b = frozen(tag + ".fc2.bias", Tensor::zeros({d}));
        }
        lnf_g_ = frozen("backbone.lnf.gamma", Tensor::full({d}, 1.0));
        lnf_b_ = frozen("backbone.lnf.beta", Tensor::zeros({d}));
        if (spec_.feature_dim != d) {
            proj_ = frozen("backbone.proj.weight",
                           Tensor::randn({spec_.feature_dim, d}, r,
                                         1.0 / std::sqrt(double(d))));
        }
    }

    const BackboneSpec& spec() const { return spec_; }

    // pooled feature from patch tokens; adapters may be null (frozen path)
    // or hold one LoraVars per injection site in spec().injection_sites() order.
    ad::Var features(const Tensor& patch_tokens, const std::vector<LoraVars>* adapters,
                     double lora_scale) {
        using namespace ad;
        const std::size_t n = spec_.num_patches(), d = spec_.width;
        require(patch_tokens.rows() == n, errc::input_size,
                "expected " + std::to_string(n) + " patch tokens, got " +
                    std::to_string(patch_tokens.rows()));
        Var x = linear(Var::constant(patch_tokens), Var::leaf(patch_w_), Var::leaf(patch_b_));
        x = concat_rows(Var::leaf(cls_), x);
        x = add(x, Var::leaf(pos_));
        const auto sites = spec_.injection_sites();
        for (std::size_t i = 0; i < spec_.depth; ++i) {
            Block& b = blocks_[i];
            const int block_id = int(i + 1);
            Var h = layer_norm(x, Var::leaf(b.ln1_g), Var::leaf(b.ln1_b));
            x = add(x, attention(h, b));
            Var h2 = layer_norm(x, Var::leaf(b.ln2_g), Var::leaf(b.ln2_b));
            Var u = mlp_linear(h2, Var::leaf(b.fc1_w), Var::leaf(b.fc1_b),
                               find_adapter(sites, adapters, {block_id, 1}), lora_scale);
            u = gelu(u);
            Var u2 = mlp_linear(u, Var::leaf(b.fc2_w), Var::leaf(b.fc2_b),
                                find_adapter(sites, adapters, {block_id, 2}), lora_scale);
            x = add(x, u2);
        }
        x = layer_norm(x, Var::leaf(lnf_g_), Var::leaf(lnf_b_));
        Var pooled = spec_.pooling == BackboneSpec::Pooling::cls ? slice_rows(x, 0, 1)
                                                                 : mean_rows(x);
        if (proj_.value.defined()) pooled = linear(pooled, Var::leaf(proj_));
        return pooled;  // [1 x feature_dim]
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out = {&patch_w_, &patch_b_, &cls_, &pos_};
        for (auto& b : blocks_) {
            for (auto* p : {&b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv,
                            &b.wo, &b.bo, &b.ln2_g, &b.ln2_b, &b.fc1_w, &b.fc1_b, &b.fc2_w,
                            &b.fc2_b})
                out.push_back(p);
        }
        out.push_back(&lnf_g_);
        out.push_back(&lnf_b_);
        if (proj_.value.defined()) out.push_back(&proj_);
        return out;
    }

private:
    struct Block {
        Parameter ln1_g, ln1_b;
        Parameter wq, bq, wk, bk, wv, bv, wo, bo;
        Parameter ln2_g, ln2_b;
        Parameter fc1_w, fc1_b, fc2_w, fc2_b;
    };

    static const LoraVars* find_adapter(const std::vector<LoraSite>& sites,
                                        const std::vector<LoraVars>* adapters,
                                        LoraSite wanted) {
        if (!adapters) return nullptr;
        for (std::size_t i = 0; i < sites.size(); ++i)
            if (sites[i] == wanted) return &(*adapters)[i];
        return nullptr;
    }

    static ad::Var mlp_linear(const ad::Var& x, const ad::Var& w, const ad::Var& b,
                              const LoraVars* lora, double scale) {
        if (!lora) return ad::linear(x, w, b);
        return adapted_linear(x, w, b, *lora, scale);
    }

    ad::Var attention(const ad::Var& h, Block& b) {
        using namespace ad;
        const std::size_t d = spec_.width;
        const std::size_t nh = spec_.heads;
        const std::size_t hd = d / nh;
        Var q = linear(h, Var::leaf(b.wq), Var::leaf(b.bq));
        Var k = linear(h, Var::leaf(b.wk), Var::leaf(b.bk));
        Var v = linear(h, Var::leaf(b.wv), Var::leaf(b.bv));
        const double inv_sqrt = 1.0 / std::sqrt(double(hd));
        std::vector<Var> heads_out;
        heads_out.reserve(nh);
        for (std::size_t hh = 0; hh < nh; ++hh) {
            Var qh = slice_cols(q, hh * hd, hd);
            Var kh = slice_cols(k, hh * hd, hd);
            Var vh = slice_cols(v, hh * hd, hd);
            Var scores = scale(matmul_nt(qh, kh), inv_sqrt);
            Var probs = softmax_rows(scores);
            heads_out.push_back(matmul(probs, vh));
        }
        Var merged = concat_cols(heads_out);
        return linear(merged, Var::leaf(b.wo), Var::leaf(b.bo));
    }

    BackboneSpec spec_;
    Parameter patch_w_, patch_b_, cls_, pos_;
    std::vector<Block> blocks_;
    Parameter lnf_g_, lnf_b_;
    Parameter proj_;
};

// -- preprocessing -----------------------------------------------------------

// Resize any view to the backbone input size (bilinear, 3 channels).
inline ResidualView preprocess_view(const ResidualView& view, const BackboneSpec& spec) {
    Image rgb = to_channels(view.pixels, 3);
    return ResidualView{view.source_group,
                        resize_bilinear(rgb, spec.image_size, spec.image_size)};
}

// Standardize and cut into flattened patch tokens, row-major over the patch
// grid, (dy, dx, channel) within a patch. The view must already match the
// backbone input size.
inline Tensor tokens_from_view(const ResidualView& view, const BackboneSpec& spec) {
    const Image& img = view.pixels;
    require(img.height == spec.image_size && img.width == spec.image_size,
            errc::input_size,
            "view is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                ", backbone expects " + std::to_string(spec.image_size) + "x" +
                std::to_string(spec.image_size));
    require(img.channels == 3, errc::input_size, "view must have 3 channels");
    require(img.all_finite(), errc::invalid_image, "view contains non-finite values");
    const std::size_t p = spec.patch_size;
    const std::size_t side = spec.tokens_per_side();
    Tensor tokens({side * side, p * p * 3});
    for (std::size_t py = 0; py < side; ++py)
        for (std::size_t px = 0; px < side; ++px) {
            const std::size_t t = py * side + px;
            std::size_t off = 0;
            for (std::size_t dy = 0; dy < p; ++dy)
                for (std::size_t dx = 0; dx < p; ++dx)
                    for (std::size_t c = 0; c < 3; ++c)
                        tokens(t, off++) = (img.at(py * p + dy, px * p + dx, c) -
                                            spec.pixel_mean[c]) /
                                           spec.pixel_std[c];
        }
    return tokens;
}

// -- the assembled detector network -------------------------------------------

// Frozen backbone + trainable sigmoid head + trainable hypernetwork. One
// instance serves all six experts; the expert index only selects the task
// embedding used to generate adapters.
class Model {
public:
    Model() = default;

    Model(const BackboneSpec& bspec, HyperNetConfig hcfg, std::uint64_t seed)
        : seed_(seed) {
        bspec.validate();
        Rng rng(seed);
        vit_ = VisionTransformer(bspec, rng.fork("backbone"));
        head_ = ClassificationHead(bspec.feature_dim, rng.fork("head"));
        hcfg.num_tasks = 6;
        hnet_ = HyperNetwork(hcfg, bspec.fine_tuned_block_ids(), bspec.position_shapes(),
                             rng.fork("hyperlora"));
        sites_ = bspec.injection_sites();
    }

    const BackboneSpec& spec() const { return vit_.spec(); }
    VisionTransformer& backbone() { return vit_; }
    HyperNetwork& hypernetwork() { return hnet_; }
    ClassificationHead& head() { return head_; }
    const std::vector<LoraSite>& sites() const { return sites_; }
    std::uint64_t seed() const { return seed_; }

    // one LoRA pair per injection site, in sites() order
    std::vector<LoraVars> generate_adapters(int expert) {
        std::vector<LoraVars> out;
        out.reserve(sites_.size());
        for (const auto& s : sites_) out.push_back(hnet_.generate(expert, s));
        return out;
    }

    ad::Var feature_var(const Tensor& tokens, const std::vector<LoraVars>* adapters) {
        return vit_.features(tokens, adapters, hnet_.config().lora_scale);
    }

    ad::Var logit_var(const Tensor& tokens, const std::vector<LoraVars>* adapters) {
        ad::Var f = feature_var(tokens, adapters);
        return ad::linear(f, ad::Var::leaf(head_.weight), ad::Var::leaf(head_.bias));
    }

    // probability that the view is synthetic, via expert's adapters
    double forward(const ResidualView& view, int expert) {
        ad::NoGradGuard no_grad;
        auto adapters = generate_adapters(expert);
        ad::Var logit = logit_var(tokens_from_view(view, spec()), &adapters);
        return score_from_logit(logit.value()[0]);
    }

    double forward_frozen(const ResidualView& view) {
        ad::NoGradGuard no_grad;
        ad::Var logit = logit_var(tokens_from_view(view, spec()), nullptr);
        return score_from_logit(logit.value()[0]);
    }

    Tensor extract_features(const ResidualView& view, int expert) {
        ad::NoGradGuard no_grad;
        auto adapters = generate_adapters(expert);
        ad::Var f = feature_var(tokens_from_view(view, spec()), &adapters);
        return f.value().reshaped({f.value().size()});
    }

    Tensor extract_features_frozen(const ResidualView& view) {
        ad::NoGradGuard no_grad;
        ad::Var f = feature_var(tokens_from_view(view, spec()), nullptr);
        return f.value().reshaped({f.value().size()});
    }

    // keeps scores strictly inside (0,1) so downstream logs are finite
    static double score_from_logit(double logit) {
        const double p = 1.0 / (1.0 + std::exp(-logit));
        return std::clamp(p, 1e-12, 1.0 - 1e-12);
    }

    std::vector<Parameter*> trainable_parameters() {
        std::vector<Parameter*> out = hnet_.parameters();
        for (auto* p : head_.parameters()) out.push_back(p);
        std::vector<Parameter*> filtered;
        for (auto* p : out)
            if (p->trainable) filtered.push_back(p);
        return filtered;
    }

    std::vector<Parameter*> frozen_parameters() { return vit_.parameters(); }

    // every persistent tensor, used by checkpointing
    std::vector<Parameter*> all_parameters() {
        std::vector<Parameter*> out = vit_.parameters();
        for (auto* p : hnet_.parameters()) out.push_back(p);
        for (auto* p : head_.parameters()) out.push_back(p);
        return out;
    }

    std::uint64_t frozen_hash() {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (auto* p : frozen_parameters()) h = hash_frozen(h, p);
        return h;
    }

private:
    static std::uint64_t hash_frozen(std::uint64_t h, const Parameter* p) {
        h = fnv1a64(p->name, h);
        return fnv1a64(std::string_view(reinterpret_cast<const char*>(p->value.data()),
                                        p->value.size() * sizeof(double)),
                       h);
    }

    std::uint64_t seed_ = 0;
    VisionTransformer vit_;
    ClassificationHead head_;
    HyperNetwork hnet_;
    std::vector<LoraSite> sites_;
};

}  // namespace hyperdet
