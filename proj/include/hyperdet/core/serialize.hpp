#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "hyperdet/core/error.hpp"
#include "hyperdet/core/rng.hpp"
#include "hyperdet/core/tensor.hpp"

namespace hyperdet {

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are little-endian; big-endian hosts are unsupported");

// -- named-tensor blob format -----------------------------------------------
// magic "HDTB", u32 version, u32 count, then per tensor:
//   u32 name_len, name bytes, u8 dtype (0 = f64), u32 ndim, u64 dims[],
//   raw little-endian payload.

namespace blob {

inline constexpr char kMagic[4] = {'H', 'D', 'T', 'B'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(bool(is), errc::checkpoint, "truncated tensor blob");
    return v;
}

inline void write(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(bool(os), errc::io, "cannot open for write: " + path.string());
    os.write(kMagic, 4);
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint32_t>(os, std::uint32_t(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_pod<std::uint32_t>(os, std::uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        write_pod<std::uint8_t>(os, 0);  // f64
        write_pod<std::uint32_t>(os, std::uint32_t(t.ndim()));
        for (auto d : t.shape()) write_pod<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data()),
                 std::streamsize(t.size() * sizeof(double)));
    }
    require(bool(os), errc::io, "short write: " + path.string());
}

inline std::vector<std::pair<std::string, Tensor>> read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(bool(is), errc::checkpoint, "cannot open tensor blob: " + path.string());
    char magic[4];
    is.read(magic, 4);
    require(bool(is) && std::memcmp(magic, kMagic, 4) == 0, errc::checkpoint,
            "bad magic in " + path.string());
    const auto version = read_pod<std::uint32_t>(is);
    require(version == kVersion, errc::checkpoint, "unsupported blob version");
    const auto count = read_pod<std::uint32_t>(is);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto dtype = read_pod<std::uint8_t>(is);
        require(dtype == 0, errc::checkpoint, "unsupported dtype for " + name);
        const auto ndim = read_pod<std::uint32_t>(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = std::size_t(read_pod<std::uint64_t>(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(double)));
        require(bool(is), errc::checkpoint, "truncated payload for " + name);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace blob

// -- manifest: ordered key = value text file --------------------------------

class Manifest {
public:
    void set(const std::string& key, const std::string& value) {
        if (auto it = index_.find(key); it != index_.end()) {
            entries_[it->second].second = value;
        } else {
            index_[key] = entries_.size();
            entries_.emplace_back(key, value);
        }
    }
    void set(const std::string& key, double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        set(key, std::string(buf));
    }
    void set(const std::string& key, std::int64_t v) { set(key, std::to_string(v)); }
    void set(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }
    void set(const std::string& key, bool v) { set(key, std::string(v ? "true" : "false")); }

    bool has(const std::string& key) const { return index_.count(key) != 0; }

    const std::string& get(const std::string& key) const {
        auto it = index_.find(key);
        require(it != index_.end(), errc::checkpoint, "manifest key missing: " + key);
        return entries_[it->second].second;
    }
    std::string get_or(const std::string& key, const std::string& fallback) const {
        auto it = index_.find(key);
        return it == index_.end() ? fallback : entries_[it->second].second;
    }
    double get_double(const std::string& key) const { return std::stod(get(key)); }
    std::int64_t get_int(const std::string& key) const { return std::stoll(get(key)); }
    std::uint64_t get_uint(const std::string& key) const { return std::stoull(get(key)); }
    bool get_bool(const std::string& key) const { return get(key) == "true"; }

    std::string text() const {
        std::string out;
        for (const auto& [k, v] : entries_) {
            out += k;
            out += " = ";
            out += v;
            out += "\n";
        }
        return out;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::trunc);
        require(bool(os), errc::io, "cannot write manifest: " + path.string());
        os << text();
    }

    static Manifest load(const std::filesystem::path& path) {
        std::ifstream is(path);
        require(bool(is), errc::checkpoint, "cannot open manifest: " + path.string());
        Manifest m;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find(" = ");
            if (eq == std::string::npos) continue;
            m.set(line.substr(0, eq), line.substr(eq + 3));
        }
        return m;
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::map<std::string, std::size_t> index_;
};

inline std::uint64_t hash_tensor_bytes(const Tensor& t, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data()),
                                    t.size() * sizeof(double)),
                   h);
}

inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

}  // namespace hyperdet
