#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "skim/matrix.hpp"

// SKB1 tensor bundle, the container every stage reads and writes.
//
//   bytes 0..3   magic "SKB1"
//   bytes 4..7   u32 LE manifest byte length L
//   bytes 8..8+L UTF-8 JSON manifest
//   payload      raw little-endian element data
//
// Manifest: {"meta": {string: string}, "tensors": [{"name", "rows", "cols",
// "dtype", "offset"}]}. "dtype" is "f64" or "f32"; offsets are relative to the
// start of the payload. Elements are stored as LE bit patterns (8 bytes for
// f64, 4 for f32), so files are byte-identical across hosts.

namespace skim {

struct Bundle {
    std::vector<Matrix> tensors;
    std::map<std::string, std::string> meta;

    const Matrix& get(const std::string& name) const {
        for (const auto& t : tensors) {
            if (t.name == name) return t;
        }
        throw std::runtime_error("bundle: no tensor named '" + name + "'");
    }

    bool has(const std::string& name) const {
        for (const auto& t : tensors) {
            if (t.name == name) return true;
        }
        return false;
    }
};

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void put_u64le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline constexpr char kBundleMagic[4] = {'S', 'K', 'B', '1'};

inline void write_bundle(const std::filesystem::path& path,
                         const std::vector<Matrix>& tensors,
                         const std::map<std::string, std::string>& meta = {}) {
    // Validate everything before touching the filesystem.
    std::map<std::string, bool> seen;
    for (const auto& t : tensors) {
        detail::require(t.elems.size() == t.rows * t.cols,
                        "write_bundle: element count does not match shape for '" +
                            t.name + "'");
        detail::require_finite(t, "write_bundle");
        detail::require(!seen.count(t.name),
                        "write_bundle: duplicate tensor name '" + t.name + "'");
        seen[t.name] = true;
    }

    nlohmann::json manifest;
    manifest["meta"] = meta;
    manifest["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        nlohmann::json entry;
        entry["name"] = t.name;
        entry["rows"] = t.rows;
        entry["cols"] = t.cols;
        entry["dtype"] = "f64";
        entry["offset"] = offset;
        manifest["tensors"].push_back(entry);
        offset += t.elems.size() * 8;
    }
    const std::string mjson = manifest.dump();

    std::string out;
    out.reserve(8 + mjson.size() + offset);
    out.append(kBundleMagic, 4);
    detail::put_u32le(out, static_cast<std::uint32_t>(mjson.size()));
    out += mjson;
    for (const auto& t : tensors) {
        for (double v : t.elems) detail::put_u64le(out, std::bit_cast<std::uint64_t>(v));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_bundle: cannot open '" + path.string() + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_bundle: short write to '" + path.string() + "'");
}

inline Bundle read_bundle(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_bundle: cannot open '" + path.string() + "'");
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());

    if (raw.size() < 8 || std::memcmp(raw.data(), kBundleMagic, 4) != 0) {
        throw std::runtime_error("read_bundle: bad magic in '" + path.string() +
                                 "' (expected SKB1)");
    }
    const std::uint32_t mlen = detail::get_u32le(p + 4);
    if (raw.size() < 8u + mlen) {
        throw std::runtime_error("read_bundle: truncated manifest");
    }

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(raw.substr(8, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("read_bundle: manifest parse error: ") +
                                 e.what());
    }

    Bundle bundle;
    if (manifest.contains("meta")) {
        for (auto it = manifest["meta"].begin(); it != manifest["meta"].end(); ++it) {
            bundle.meta[it.key()] = it.value().get<std::string>();
        }
    }

    const std::uint64_t payload_off = 8u + mlen;
    const std::uint64_t payload_size = raw.size() - payload_off;
    std::uint64_t expected_end = 0;
    std::uint64_t cursor = 0;

    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::uint64_t rows = entry.at("rows").get<std::uint64_t>();
        const std::uint64_t cols = entry.at("cols").get<std::uint64_t>();
        const std::string dtype = entry.at("dtype").get<std::string>();
        const std::uint64_t off = entry.at("offset").get<std::uint64_t>();

        std::uint64_t esize = 0;
        if (dtype == "f64") {
            esize = 8;
        } else if (dtype == "f32") {
            esize = 4;
        } else {
            throw std::runtime_error("read_bundle: unknown dtype '" + dtype + "'");
        }
        if (off < cursor) {
            throw std::runtime_error("read_bundle: overlapping tensor '" + name + "'");
        }
        const std::uint64_t nbytes = rows * cols * esize;
        if (off + nbytes > payload_size) {
            throw std::runtime_error("read_bundle: truncated payload for tensor '" +
                                     name + "'");
        }
        cursor = off + nbytes;
        expected_end = std::max(expected_end, cursor);

        Matrix m(rows, cols, 0.0, name);
        const unsigned char* base = p + payload_off + off;
        if (dtype == "f64") {
            for (std::uint64_t i = 0; i < rows * cols; ++i) {
                m.elems[i] = std::bit_cast<double>(detail::get_u64le(base + 8 * i));
            }
        } else {
            for (std::uint64_t i = 0; i < rows * cols; ++i) {
                m.elems[i] = static_cast<double>(
                    std::bit_cast<float>(detail::get_u32le(base + 4 * i)));
            }
        }
        if (bundle.has(name)) {
            throw std::runtime_error("read_bundle: duplicate tensor name '" + name + "'");
        }
        detail::require_finite(m, "read_bundle");
        bundle.tensors.push_back(std::move(m));
    }

    if (payload_size != expected_end) {
        throw std::runtime_error("read_bundle: manifest/payload size mismatch (payload " +
                                 std::to_string(payload_size) + " bytes, manifest needs " +
                                 std::to_string(expected_end) + ")");
    }
    return bundle;
}

}  // namespace skim
