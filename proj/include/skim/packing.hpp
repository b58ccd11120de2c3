#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <zlib.h>

#include "skim/allocation.hpp"
#include "skim/half.hpp"
#include "skim/matrix.hpp"
#include "skim/scaling.hpp"

// SKQ1: bit-exact storage of a quantized layer. Rows are permuted so that
// equal-bit rows are contiguous (stable by original index) and each group's
// labels form one continuous LSB-first bit stream packed into little-endian
// u32 words; labels may straddle word boundaries.
//
//   magic "SKQ1" | version u16 | n u32 | m u32 | b_min u8 | b_max u8
//   | bits[n] u8 (original row order)
//   | permutation[n] u32 (packed position -> original row)
//   | alpha[m] f32
//   | per bit-group ascending:
//       group-row-count u32
//       codebooks: rows * 2^bit * f16 (packed row order)
//       label words: ceil(rows*m*bit/32) u32
//   | crc32 u32 over all prior bytes

namespace skim {

struct QuantizedLayer {
    std::size_t n = 0;
    std::size_t m = 0;
    BitAllocation bits;
    LabelMatrix labels;
    Codebooks codebooks;  // row i has exactly 2^{bits[i]} entries
    std::vector<double> alpha;
    std::map<std::string, std::string> meta;  // report-side only; not serialized
};

using PackedBlob = std::vector<std::uint8_t>;

struct SizeReport {
    std::uint64_t labels_bytes = 0;
    std::uint64_t codebooks_bytes = 0;
    std::uint64_t alpha_bytes = 0;
    std::uint64_t overhead_bytes = 0;
    std::uint64_t total_bytes = 0;
    double average_bits = 0.0;            // mean allocated label bits per row
    double label_bits_per_weight = 0.0;   // sum bits[i]*m / (n*m) == average_bits
    double effective_bits_per_weight = 0.0;  // total_bytes*8 / (n*m)
};

namespace detail {

inline void put_u16le(PackedBlob& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32le(PackedBlob& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

struct BlobReader {
    const PackedBlob& blob;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > blob.size()) {
            throw std::runtime_error(std::string("unpack: truncated ") + what);
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return blob[pos++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(blob[pos]) |
                          static_cast<std::uint16_t>(blob[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(blob[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
};

inline void validate_layer(const QuantizedLayer& layer) {
    require(layer.n >= 1 && layer.m >= 1, "pack: empty layer");
    require(layer.bits.bits.size() == layer.n, "pack: bit allocation size mismatch");
    require(layer.labels.rows == layer.n && layer.labels.cols == layer.m,
            "pack: label shape mismatch");
    require(layer.codebooks.rows.size() == layer.n, "pack: codebook row count mismatch");
    require(layer.alpha.size() == layer.m, "pack: alpha length mismatch");
    require(1 <= layer.bits.b_min && layer.bits.b_min <= layer.bits.b_max &&
                layer.bits.b_max <= 8,
            "pack: bits must satisfy 1 <= b_min <= b_max <= 8");
    for (std::size_t i = 0; i < layer.n; ++i) {
        const int b = layer.bits.bits[i];
        require(b >= layer.bits.b_min && b <= layer.bits.b_max,
                "pack: row bits outside [b_min, b_max]");
        require(layer.codebooks.rows[i].size() == (std::size_t{1} << b),
                "pack: codebook row must have exactly 2^bits entries");
        for (double c : layer.codebooks.rows[i]) {
            require(std::isfinite(round_f16(c)),
                    "pack: centroid does not fit binary16");
        }
        for (std::size_t j = 0; j < layer.m; ++j) {
            const int l = layer.labels.at(i, j);
            require(l >= 0 && l < (1 << b), "pack: label out of range for row bits");
        }
    }
    for (double a : layer.alpha) {
        require(std::isfinite(a), "pack: non-finite alpha entry");
    }
}

// Stable permutation grouping rows by ascending bit width.
inline std::vector<std::uint32_t> packing_permutation(const BitAllocation& bits) {
    std::vector<std::uint32_t> perm(bits.bits.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](std::uint32_t a, std::uint32_t b) {
        return bits.bits[a] < bits.bits[b];
    });
    return perm;
}

}  // namespace detail

inline constexpr char kPackMagic[4] = {'S', 'K', 'Q', '1'};
inline constexpr std::uint16_t kPackVersion = 1;

inline PackedBlob pack(const QuantizedLayer& layer) {
    detail::validate_layer(layer);
    const std::size_t n = layer.n;
    const std::size_t m = layer.m;

    PackedBlob out;
    out.insert(out.end(), kPackMagic, kPackMagic + 4);
    detail::put_u16le(out, kPackVersion);
    detail::put_u32le(out, static_cast<std::uint32_t>(n));
    detail::put_u32le(out, static_cast<std::uint32_t>(m));
    out.push_back(static_cast<std::uint8_t>(layer.bits.b_min));
    out.push_back(static_cast<std::uint8_t>(layer.bits.b_max));
    for (int b : layer.bits.bits) out.push_back(static_cast<std::uint8_t>(b));

    const std::vector<std::uint32_t> perm = detail::packing_permutation(layer.bits);
    for (std::uint32_t p : perm) detail::put_u32le(out, p);

    for (double a : layer.alpha) {
        detail::put_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(a)));
    }

    std::size_t g = 0;
    while (g < n) {
        const int bit = layer.bits.bits[perm[g]];
        std::size_t end = g;
        while (end < n && layer.bits.bits[perm[end]] == bit) ++end;
        detail::put_u32le(out, static_cast<std::uint32_t>(end - g));

        for (std::size_t r = g; r < end; ++r) {
            for (double c : layer.codebooks.rows[perm[r]]) {
                detail::put_u16le(out, f16_from_f64(c));
            }
        }

        // One continuous bit stream for the whole group, LSB-first.
        std::uint64_t acc = 0;
        int filled = 0;
        for (std::size_t r = g; r < end; ++r) {
            const std::size_t row = perm[r];
            for (std::size_t j = 0; j < m; ++j) {
                acc |= static_cast<std::uint64_t>(layer.labels.at(row, j)) << filled;
                filled += bit;
                while (filled >= 32) {
                    detail::put_u32le(out, static_cast<std::uint32_t>(acc & 0xFFFFFFFFu));
                    acc >>= 32;
                    filled -= 32;
                }
            }
        }
        if (filled > 0) {
            detail::put_u32le(out, static_cast<std::uint32_t>(acc & 0xFFFFFFFFu));
        }
        g = end;
    }

    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(out.data()),
              static_cast<uInt>(out.size())));
    detail::put_u32le(out, crc);
    return out;
}

inline QuantizedLayer unpack(const PackedBlob& blob) {
    detail::BlobReader rd{blob};
    rd.need(4, "magic");
    if (std::memcmp(blob.data(), kPackMagic, 4) != 0) {
        throw std::runtime_error("unpack: bad magic (expected SKQ1)");
    }
    rd.pos = 4;
    const std::uint16_t version = rd.u16("version");
    if (version != kPackVersion) {
        throw std::runtime_error("unpack: unknown version " + std::to_string(version));
    }

    QuantizedLayer layer;
    layer.n = rd.u32("row count");
    layer.m = rd.u32("column count");
    layer.bits.b_min = rd.u8("b_min");
    layer.bits.b_max = rd.u8("b_max");
    if (layer.n == 0 || layer.m == 0 || layer.bits.b_min < 1 ||
        layer.bits.b_min > layer.bits.b_max || layer.bits.b_max > 8) {
        throw std::runtime_error("unpack: invalid header fields");
    }

    layer.bits.bits.resize(layer.n);
    for (std::size_t i = 0; i < layer.n; ++i) {
        const int b = rd.u8("bit allocation");
        if (b < layer.bits.b_min || b > layer.bits.b_max) {
            throw std::runtime_error("unpack: row bits outside [b_min, b_max]");
        }
        layer.bits.bits[i] = b;
    }

    std::vector<std::uint32_t> perm(layer.n);
    std::vector<bool> seen(layer.n, false);
    for (std::size_t i = 0; i < layer.n; ++i) {
        perm[i] = rd.u32("permutation");
        if (perm[i] >= layer.n || seen[perm[i]]) {
            throw std::runtime_error("unpack: invalid permutation");
        }
        seen[perm[i]] = true;
    }
    if (perm != detail::packing_permutation(layer.bits)) {
        throw std::runtime_error("unpack: permutation does not match bit allocation");
    }

    layer.alpha.resize(layer.m);
    for (std::size_t j = 0; j < layer.m; ++j) {
        layer.alpha[j] = static_cast<double>(std::bit_cast<float>(rd.u32("alpha")));
    }

    layer.labels = LabelMatrix(layer.n, layer.m);
    layer.codebooks.rows.resize(layer.n);
    std::size_t g = 0;
    while (g < layer.n) {
        const int bit = layer.bits.bits[perm[g]];
        std::size_t run = g;
        while (run < layer.n && layer.bits.bits[perm[run]] == bit) ++run;
        const std::uint32_t rows = rd.u32("group row count");
        if (rows != run - g) {
            throw std::runtime_error("unpack: group row count does not match bit allocation");
        }
        for (std::size_t r = g; r < g + rows; ++r) {
            auto& row = layer.codebooks.rows[perm[r]];
            row.resize(std::size_t{1} << bit);
            for (double& c : row) c = f64_from_f16(rd.u16("codebook"));
        }

        const std::uint64_t total_bits = static_cast<std::uint64_t>(rows) * layer.m * bit;
        const std::uint64_t words = (total_bits + 31) / 32;
        std::uint64_t acc = 0;
        int avail = 0;
        std::uint64_t consumed = 0;
        const std::uint32_t mask = (1u << bit) - 1;
        for (std::size_t r = g; r < g + rows; ++r) {
            const std::size_t row = perm[r];
            for (std::size_t j = 0; j < layer.m; ++j) {
                while (avail < bit) {
                    acc |= static_cast<std::uint64_t>(rd.u32("label words")) << avail;
                    avail += 32;
                    ++consumed;
                }
                const auto l = static_cast<int>(acc & mask);
                acc >>= bit;
                avail -= bit;
                layer.labels.at(row, j) = l;
            }
        }
        if (consumed != words) {
            throw std::runtime_error("unpack: label section length mismatch");
        }
        if (avail > 0 && (acc & ((1ull << avail) - 1)) != 0) {
            throw std::runtime_error("unpack: nonzero label padding");
        }
        g += rows;
    }

    const std::uint32_t stored_crc = rd.u32("crc32");
    if (rd.pos != blob.size()) {
        throw std::runtime_error("unpack: trailing bytes after crc32");
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(blob.data()),
              static_cast<uInt>(blob.size() - 4)));
    if (crc != stored_crc) {
        throw std::runtime_error("unpack: crc32 mismatch");
    }
    return layer;
}

// W^q_ij = widen(f16 codebook) * widen(f32 alpha), in f64.
inline Matrix dequantize(const QuantizedLayer& layer) {
    detail::validate_layer(layer);
    Matrix out(layer.n, layer.m, 0.0, "Wq");
    for (std::size_t i = 0; i < layer.n; ++i) {
        const auto& row = layer.codebooks.rows[i];
        for (std::size_t j = 0; j < layer.m; ++j) {
            out.at(i, j) = round_f16(row[layer.labels.at(i, j)]) * round_f32(layer.alpha[j]);
        }
    }
    return out;
}

inline SizeReport size_report(const QuantizedLayer& layer) {
    detail::validate_layer(layer);
    SizeReport rep;
    const std::vector<std::uint32_t> perm = detail::packing_permutation(layer.bits);
    std::size_t groups = 0;
    std::size_t g = 0;
    while (g < layer.n) {
        const int bit = layer.bits.bits[perm[g]];
        std::size_t end = g;
        while (end < layer.n && layer.bits.bits[perm[end]] == bit) ++end;
        const std::uint64_t rows = end - g;
        rep.labels_bytes += 4 * ((rows * layer.m * bit + 31) / 32);
        rep.codebooks_bytes += rows * (std::uint64_t{1} << bit) * 2;
        ++groups;
        g = end;
    }
    rep.alpha_bytes = 4 * layer.m;
    rep.overhead_bytes = 4 + 2 + 4 + 4 + 1 + 1          // fixed header
                         + layer.n + 4 * layer.n        // bits + permutation
                         + 4 * groups                   // group row counts
                         + 4;                           // crc32
    rep.total_bytes =
        rep.labels_bytes + rep.codebooks_bytes + rep.alpha_bytes + rep.overhead_bytes;
    rep.average_bits = layer.bits.average_bits();
    rep.label_bits_per_weight = rep.average_bits;
    rep.effective_bits_per_weight = static_cast<double>(rep.total_bytes) * 8.0 /
                                    (static_cast<double>(layer.n) * static_cast<double>(layer.m));
    return rep;
}

inline void save_packed(const std::filesystem::path& path, const PackedBlob& blob) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_packed: cannot open '" + path.string() + "'");
    f.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size()));
    if (!f) throw std::runtime_error("save_packed: short write");
}

inline PackedBlob load_packed(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_packed: cannot open '" + path.string() + "'");
    PackedBlob blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return blob;
}

// The layer as it will read back after a pack/unpack roundtrip: codebooks
// rounded through binary16, alpha through binary32.
inline QuantizedLayer storage_rounded(QuantizedLayer layer) {
    for (auto& row : layer.codebooks.rows) {
        for (double& c : row) c = round_f16(c);
    }
    for (double& a : layer.alpha) a = round_f32(a);
    return layer;
}

}  // namespace skim
