#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hyperdet/core/error.hpp"
#include "hyperdet/core/image.hpp"

namespace hyperdet {

// One high-pass residual kernel: a zero-sum 5x5 matrix (negative center,
// positive prediction neighborhood) and its quantization constant.
struct FilterKernel {
    int id = 0;
    std::array<double, 25> weights{};
    double normalizer = 1.0;

    double w(std::size_t r, std::size_t c) const { return weights[r * 5 + c]; }

    double weight_sum() const {
        double s = 0.0;
        for (double v : weights) s += v;
        return s;
    }
};

struct FilterGroup {
    int group_id = 0;
    std::vector<int> kernel_ids;
    std::string description;
};

// A residual view of an image: group-averaged kernel responses, or the image
// itself for source_group == kOriginalView.
struct ResidualView {
    static constexpr int kOriginalView = 0;
    int source_group = kOriginalView;
    Image pixels;

    bool is_original() const { return source_group == kOriginalView; }
};

class FilterBank {
public:
    static constexpr int kKernelCount = 30;
    static constexpr int kGroupCount = 5;

    FilterBank(std::vector<FilterKernel> kernels, std::string source_text)
        : kernels_(std::move(kernels)), source_text_(std::move(source_text)) {
        validate();
        groups_ = standard_groups();
    }

    const std::vector<FilterKernel>& kernels() const { return kernels_; }
    const std::array<FilterGroup, kGroupCount>& groups() const { return groups_; }

    const FilterKernel& kernel(int id) const {
        for (const auto& k : kernels_)
            if (k.id == id) return k;
        fail(errc::group_resolution, "no kernel with id " + std::to_string(id));
    }

    bool has_kernel(int id) const {
        for (const auto& k : kernels_)
            if (k.id == id) return true;
        return false;
    }

    const FilterGroup& group(int group_id) const {
        require(group_id >= 1 && group_id <= kGroupCount, errc::group_resolution,
                "group id must be in 1..5, got " + std::to_string(group_id));
        return groups_[std::size_t(group_id - 1)];
    }

    // Verbatim text of the kernel file; embedded into checkpoints so a saved
    // model carries its own filter definitions.
    const std::string& source_text() const { return source_text_; }

    static std::array<FilterGroup, kGroupCount> standard_groups() {
        return {FilterGroup{1, {1, 2, 3, 4, 5, 6, 7, 8}, "first-order directional differences"},
                FilterGroup{2, {9, 10, 11, 12}, "second-order differences"},
                FilterGroup{3, {13, 14, 15, 16, 17, 18, 19, 20},
                            "third-order directional differences"},
                FilterGroup{4, {21, 22, 23, 24, 25}, "3x3 edge and square predictors"},
                FilterGroup{5, {26, 27, 28, 29, 30}, "5x5 edge and square predictors"}};
    }

private:
    void validate() const {
        require(kernels_.size() == kKernelCount, errc::kernel_manifest,
                "expected 30 kernels, found " + std::to_string(kernels_.size()));
        std::array<bool, kKernelCount + 1> seen{};
        for (const auto& k : kernels_) {
            require(k.id >= 1 && k.id <= kKernelCount, errc::kernel_manifest,
                    "kernel id out of range: " + std::to_string(k.id));
            require(!seen[std::size_t(k.id)], errc::kernel_manifest,
                    "duplicate kernel id " + std::to_string(k.id));
            seen[std::size_t(k.id)] = true;
            require(std::fabs(k.weight_sum()) < 1e-12, errc::kernel_invariant,
                    "kernel " + std::to_string(k.id) + " weights do not sum to zero");
            require(k.normalizer > 0.0, errc::kernel_invariant,
                    "kernel " + std::to_string(k.id) + " has non-positive normalizer");
        }
    }

    std::vector<FilterKernel> kernels_;
    std::array<FilterGroup, kGroupCount> groups_;
    std::string source_text_;
};

// -- loading -----------------------------------------------------------------

inline FilterBank parse_kernels(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::vector<double> tokens;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        double v;
        while (ls >> v) tokens.push_back(v);
    }
    require(tokens.size() % 27 == 0, errc::kernel_manifest,
            "kernel file must contain whole records of id + 25 weights + normalizer");
    std::vector<FilterKernel> kernels;
    for (std::size_t off = 0; off < tokens.size(); off += 27) {
        FilterKernel k;
        k.id = int(tokens[off]);
        for (std::size_t i = 0; i < 25; ++i) k.weights[i] = tokens[off + 1 + i];
        k.normalizer = tokens[off + 26];
        kernels.push_back(k);
    }
    return FilterBank(std::move(kernels), text);
}

inline FilterBank load_kernels(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(bool(is), errc::kernel_manifest, "cannot open kernel file: " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_kernels(buf.str());
}

// -- residual extraction ------------------------------------------------------

// Cross-correlation with the kernel under symmetric boundary reflection,
// divided by the normalizer, per channel. Computed as weighted differences
// against the center pixel, so constant inputs cancel term by term and the
// residual of a constant image is exactly zero.
inline Image apply_kernel(const Image& image, const FilterKernel& kernel) {
    require(!image.px.empty(), errc::invalid_image, "empty image");
    require(image.all_finite(), errc::invalid_image, "image contains non-finite pixels");
    const long h = long(image.height), w = long(image.width);
    const double inv_q = 1.0 / kernel.normalizer;
    Image out(image.height, image.width, image.channels);
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < image.channels; ++c) {
                const double center = image.at(std::size_t(y), std::size_t(x), c);
                double acc = 0.0;
                for (long u = 0; u < 5; ++u) {
                    for (long v = 0; v < 5; ++v) {
                        const double wt = kernel.w(std::size_t(u), std::size_t(v));
                        if (wt == 0.0) continue;
                        const std::size_t yy = reflect_index(y + u - 2, h);
                        const std::size_t xx = reflect_index(x + v - 2, w);
                        acc += wt * (image.at(yy, xx, c) - center);
                    }
                }
                out.at(std::size_t(y), std::size_t(x), c) = acc * inv_q;
            }
        }
    }
    return out;
}

// Mean of the per-kernel residuals over the group's kernels (they all share
// the image's shape, so this is an elementwise average).
inline ResidualView group_residual(const Image& image, const FilterGroup& group,
                                   const FilterBank& bank) {
    require(!group.kernel_ids.empty(), errc::group_resolution,
            "group " + std::to_string(group.group_id) + " has no kernels");
    for (int id : group.kernel_ids)
        require(bank.has_kernel(id), errc::group_resolution,
                "group " + std::to_string(group.group_id) + " references missing kernel " +
                    std::to_string(id));
    Image acc(image.height, image.width, image.channels);
    for (int id : group.kernel_ids) {
        Image r = apply_kernel(image, bank.kernel(id));
        for (std::size_t i = 0; i < acc.px.size(); ++i) acc.px[i] += r.px[i];
    }
    const double inv_n = 1.0 / double(group.kernel_ids.size());
    for (auto& v : acc.px) v *= inv_n;
    return ResidualView{group.group_id, std::move(acc)};
}

// The six model inputs: group residuals 1..5 followed by the untouched image.
inline std::vector<ResidualView> make_views(const Image& image, const FilterBank& bank) {
    std::vector<ResidualView> views;
    views.reserve(6);
    for (const auto& g : bank.groups()) views.push_back(group_residual(image, g, bank));
    views.push_back(ResidualView{ResidualView::kOriginalView, image});
    return views;
}

}  // namespace hyperdet
