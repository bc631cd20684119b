#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ortk/grid.hpp"
#include "ortk/kernel.hpp"

namespace ortk {

inline constexpr std::uint32_t kernel_cache_version = 1;

inline std::uint64_t fnv1a64(const unsigned char* bytes, std::size_t len) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

/* On-disk kernel snapshot, little-endian throughout:
 *   "ORTK" | version u32 | node count u64 | step count u64 | a f64 | T f64 |
 *   eps f64 | row-major payload f64[nodes^2] | FNV-1a checksum of the payload
 * The file pins the grid/time identity; the surrounding code is responsible
 * for only reading a cache whose configuration hash it trusts. */
struct KernelCacheMeta {
    std::uint64_t nodes = 0;
    std::uint64_t steps = 0;
    double half_width = 0.0;
    double final_time = 0.0;
    double eps = 0.0;
};

namespace detail {

template <typename T>
void put_raw(std::ofstream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get_raw(std::ifstream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return static_cast<bool>(is);
}

}  // namespace detail

inline void write_kernel_cache(const std::filesystem::path& path, const KernelMatrix& K,
                               const TimeGrid& tg, double eps) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot open cache file for writing: " + path.string());
    os.write("ORTK", 4);
    detail::put_raw(os, kernel_cache_version);
    detail::put_raw(os, static_cast<std::uint64_t>(K.n()));
    detail::put_raw(os, static_cast<std::uint64_t>(tg.steps));
    detail::put_raw(os, K.grid.half_width);
    detail::put_raw(os, tg.final_time);
    detail::put_raw(os, eps);
    os.write(reinterpret_cast<const char*>(K.data.data()),
             static_cast<std::streamsize>(K.data.size() * sizeof(double)));
    const std::uint64_t sum = fnv1a64(
        reinterpret_cast<const unsigned char*>(K.data.data()), K.data.size() * sizeof(double));
    detail::put_raw(os, sum);
    if (!os) throw ConfigError("failed while writing cache file: " + path.string());
}

/* Load a cached kernel; any structural mismatch or corruption yields nullopt
 * with the reason filled in, so the caller can warn and rebuild. */
inline std::optional<KernelMatrix> read_kernel_cache(const std::filesystem::path& path,
                                                     KernelCacheMeta* meta_out,
                                                     std::string* why) {
    auto reject = [&](const std::string& r) -> std::optional<KernelMatrix> {
        if (why) *why = r;
        return std::nullopt;
    };
    std::ifstream is(path, std::ios::binary);
    if (!is) return reject("cache file not readable");
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ORTK", 4) != 0) return reject("bad magic");
    std::uint32_t version = 0;
    if (!detail::get_raw(is, version)) return reject("truncated header");
    if (version != kernel_cache_version)
        return reject("format version " + std::to_string(version) + ", expected " +
                      std::to_string(kernel_cache_version));
    KernelCacheMeta meta;
    if (!detail::get_raw(is, meta.nodes) || !detail::get_raw(is, meta.steps) ||
        !detail::get_raw(is, meta.half_width) || !detail::get_raw(is, meta.final_time) ||
        !detail::get_raw(is, meta.eps))
        return reject("truncated header");
    if (meta.nodes < 3 || meta.nodes % 2 != 1 || !(meta.half_width > 0.0))
        return reject("implausible grid metadata");
    std::vector<double> payload(meta.nodes * meta.nodes);
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!is) return reject("truncated payload");
    std::uint64_t stored = 0;
    if (!detail::get_raw(is, stored)) return reject("missing checksum");
    const std::uint64_t sum = fnv1a64(reinterpret_cast<const unsigned char*>(payload.data()),
                                      payload.size() * sizeof(double));
    if (sum != stored) return reject("checksum mismatch");
    if (meta_out) *meta_out = meta;
    const UniformGrid1D grid = build_grid(meta.half_width, meta.nodes - 1);
    return KernelMatrix{grid, simpson_weights(grid), std::move(payload)};
}

}  // namespace ortk
