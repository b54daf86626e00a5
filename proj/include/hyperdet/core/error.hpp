#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hyperdet {

// Stable error categories. The CLI maps `config` to exit code 1 and the rest
// to exit code 2; tests match on the code, not the message.
enum class errc {
    config,
    kernel_manifest,
    kernel_invariant,
    invalid_image,
    group_resolution,
    unknown_site,
    unknown_expert,
    shape,
    input_size,
    label,
    augment_codec,
    perturb_codec,
    divergence,
    degenerate_ap,
    ingestion,
    empty_result,
    checkpoint,
    io,
};

inline std::string_view to_string(errc c) {
    switch (c) {
        case errc::config: return "config";
        case errc::kernel_manifest: return "kernel-manifest";
        case errc::kernel_invariant: return "kernel-invariant";
        case errc::invalid_image: return "invalid-image";
        case errc::group_resolution: return "group-resolution";
        case errc::unknown_site: return "unknown-site";
        case errc::unknown_expert: return "unknown-expert";
        case errc::shape: return "shape";
        case errc::input_size: return "input-size";
        case errc::label: return "label";
        case errc::augment_codec: return "augment-codec";
        case errc::perturb_codec: return "perturb-codec";
        case errc::divergence: return "divergence";
        case errc::degenerate_ap: return "degenerate-ap";
        case errc::ingestion: return "ingestion";
        case errc::empty_result: return "empty-result";
        case errc::checkpoint: return "checkpoint";
        case errc::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& msg)
        : std::runtime_error(std::string(to_string(code)) + ": " + msg), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, errc code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

}  // namespace hyperdet
