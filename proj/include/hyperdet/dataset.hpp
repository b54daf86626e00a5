#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hyperdet/core/error.hpp"
#include "hyperdet/core/image.hpp"
#include "hyperdet/io/image_io.hpp"

namespace hyperdet {

// real = 0, fake = 1
struct LabeledSample {
    std::filesystem::path path;
    int label = 0;
    std::string generator;
};

// Walks <root>/<split>/<generator>/<real|fake>/*.png|jpg. If <root>/<split>
// does not exist, <root> itself is treated as the split directory. Paths are
// sorted so traversal order never depends on the filesystem.
inline std::vector<LabeledSample> load_dataset(const std::filesystem::path& root,
                                               const std::string& split) {
    namespace fs = std::filesystem;
    fs::path base = root / split;
    if (!fs::is_directory(base)) base = root;
    require(fs::is_directory(base), errc::ingestion,
            "dataset directory not found: " + (root / split).string());

    std::vector<LabeledSample> samples;
    std::vector<fs::path> generators;
    for (const auto& entry : fs::directory_iterator(base))
        if (entry.is_directory()) generators.push_back(entry.path());
    std::sort(generators.begin(), generators.end());

    for (const auto& gen : generators) {
        for (const auto& [sub, label] : {std::pair{std::string("real"), 0},
                                         std::pair{std::string("fake"), 1}}) {
            const fs::path dir = gen / sub;
            if (!fs::is_directory(dir)) continue;
            std::vector<fs::path> files;
            for (const auto& entry : fs::directory_iterator(dir))
                if (entry.is_regular_file() && io::is_image_path(entry.path()))
                    files.push_back(entry.path());
            std::sort(files.begin(), files.end());
            for (auto& f : files)
                samples.push_back(LabeledSample{f, label, gen.filename().string()});
        }
    }
    require(!samples.empty(), errc::ingestion,
            "no images found under " + base.string() +
                " (expected <generator>/<real|fake>/*.png|jpg)");
    return samples;
}

// generator name -> its samples, preserving the sorted global order
inline std::map<std::string, std::vector<LabeledSample>> group_by_generator(
    const std::vector<LabeledSample>& samples) {
    std::map<std::string, std::vector<LabeledSample>> by_gen;
    for (const auto& s : samples) by_gen[s.generator].push_back(s);
    return by_gen;
}

inline Image load_sample_image(const LabeledSample& sample) {
    try {
        return io::load_image(sample.path);
    } catch (const Error& e) {
        fail(errc::ingestion, "cannot load " + sample.path.string() + ": " + e.what());
    }
}

}  // namespace hyperdet
