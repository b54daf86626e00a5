#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hyperdet/backbone.hpp"
#include "hyperdet/config.hpp"
#include "hyperdet/core/optim.hpp"
#include "hyperdet/core/serialize.hpp"
#include "hyperdet/filterbank.hpp"

namespace hyperdet {

inline constexpr int kCheckpointFormatVersion = 1;

// Checkpoint directory layout:
//   manifest.txt    versioned config + seed + epoch + metric summary
//   kernels.txt     the filter bank the model was trained with
//   backbone.bin    frozen backbone tensors
//   hyperlora.bin   hypernetwork tensors
//   head.bin        classification head tensors
//   optimizer.bin   Adam moments + step counter (for resuming)
inline void save_checkpoint(const std::filesystem::path& dir, Model& model,
                            const FilterBank& bank, const TrainConfig& cfg,
                            std::size_t epochs_completed,
                            const std::vector<std::pair<std::string, double>>& metrics,
                            Adam* optimizer = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    Manifest m;
    m.set("format_version", std::int64_t(kCheckpointFormatVersion));
    m.set("config_hash", config_hash(cfg));
    m.set("seed", std::uint64_t(cfg.seed));
    m.set("epochs_completed", std::int64_t(epochs_completed));
    config_to_manifest(cfg, m);
    m.set("frozen_hash", hex64(model.frozen_hash()));
    for (const auto& [k, v] : metrics) m.set("metrics." + k, v);
    m.save(dir / "manifest.txt");

    {
        std::ofstream os(dir / "kernels.txt", std::ios::trunc);
        require(bool(os), errc::io, "cannot write kernels.txt");
        os << bank.source_text();
    }

    auto dump = [&](const char* file, std::vector<Parameter*> params) {
        std::vector<std::pair<std::string, Tensor>> tensors;
        tensors.reserve(params.size());
        for (auto* p : params) tensors.emplace_back(p->name, p->value);
        blob::write(dir / file, tensors);
    };
    dump("backbone.bin", model.backbone().parameters());
    dump("hyperlora.bin", model.hypernetwork().parameters());
    dump("head.bin", model.head().parameters());

    if (optimizer) {
        std::vector<std::pair<std::string, Tensor>> tensors;
        tensors.emplace_back("t", Tensor::scalar(double(optimizer->steps())));
        const auto& params = optimizer->params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            tensors.emplace_back("m." + params[i]->name, optimizer->moment1()[i]);
            tensors.emplace_back("v." + params[i]->name, optimizer->moment2()[i]);
        }
        blob::write(dir / "optimizer.bin", tensors);
    }
}

struct LoadedCheckpoint {
    Model model;
    FilterBank bank;
    TrainConfig config;
    Manifest manifest;
};

namespace detail_ckpt {

inline void restore_params(const std::filesystem::path& file, std::vector<Parameter*> params) {
    auto tensors = blob::read(file);
    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : tensors) by_name.emplace(std::move(name), std::move(t));
    for (auto* p : params) {
        auto it = by_name.find(p->name);
        require(it != by_name.end(), errc::checkpoint,
                "checkpoint is missing tensor " + p->name);
        require(it->second.same_shape(p->value), errc::checkpoint,
                "shape mismatch for " + p->name + ": checkpoint " + it->second.shape_str() +
                    " vs model " + p->value.shape_str());
        // copy into the existing buffer so optimizer/leaf aliases stay valid
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = it->second[i];
    }
}

}  // namespace detail_ckpt

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    require(fs::is_directory(dir), errc::checkpoint,
            "checkpoint directory not found: " + dir.string());
    Manifest m = Manifest::load(dir / "manifest.txt");
    require(m.get_int("format_version") == kCheckpointFormatVersion, errc::checkpoint,
            "unsupported checkpoint format version " + m.get("format_version"));
    TrainConfig cfg = config_from_manifest(m);

    std::ifstream kis(dir / "kernels.txt");
    require(bool(kis), errc::checkpoint, "checkpoint is missing kernels.txt");
    std::ostringstream kbuf;
    kbuf << kis.rdbuf();
    FilterBank bank = parse_kernels(kbuf.str());

    Model model(cfg.backbone_spec(), cfg.hyper_config(), cfg.seed);
    detail_ckpt::restore_params(dir / "backbone.bin", model.backbone().parameters());
    detail_ckpt::restore_params(dir / "hyperlora.bin", model.hypernetwork().parameters());
    detail_ckpt::restore_params(dir / "head.bin", model.head().parameters());

    return LoadedCheckpoint{std::move(model), std::move(bank), std::move(cfg), std::move(m)};
}

// Rebuilds Adam state from optimizer.bin; returns the restored step count or
// nullopt when the blob is absent.
inline std::optional<std::int64_t> restore_optimizer(const std::filesystem::path& dir,
                                                     Adam& optimizer) {
    const auto file = dir / "optimizer.bin";
    if (!std::filesystem::exists(file)) return std::nullopt;
    auto tensors = blob::read(file);
    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : tensors) by_name.emplace(std::move(name), std::move(t));
    const auto& params = optimizer.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto mit = by_name.find("m." + params[i]->name);
        auto vit = by_name.find("v." + params[i]->name);
        require(mit != by_name.end() && vit != by_name.end(), errc::checkpoint,
                "optimizer state missing for " + params[i]->name);
        optimizer.moment1()[i] = mit->second;
        optimizer.moment2()[i] = vit->second;
    }
    auto tit = by_name.find("t");
    require(tit != by_name.end(), errc::checkpoint, "optimizer state missing step counter");
    const auto t = std::int64_t(tit->second[0]);
    optimizer.set_steps(t);
    return t;
}

}  // namespace hyperdet
