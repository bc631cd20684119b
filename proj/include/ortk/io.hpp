#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ortk/config.hpp"
#include "ortk/errors.hpp"

namespace ortk {

/* Column-oriented CSV with full-precision doubles.  No locale surprises:
 * formatting goes through snprintf("%.17g"), which round-trips exactly. */
inline void write_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& columns) {
    if (header.size() != columns.size())
        throw ShapeError("write_csv: header count vs column count");
    const std::size_t rows = columns.empty() ? 0 : columns.front().size();
    for (const auto& c : columns)
        if (c.size() != rows) throw ShapeError("write_csv: ragged columns");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    for (std::size_t k = 0; k < header.size(); ++k) os << (k ? "," : "") << header[k];
    os << "\n";
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < columns.size(); ++k)
            os << (k ? "," : "") << format_double(columns[k][r]);
        os << "\n";
    }
    if (!os) throw ConfigError("failed while writing: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read: " + path.string());
    std::string out((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot open for writing: " + path.string());
    os << text;
    if (!os) throw ConfigError("failed while writing: " + path.string());
}

}  // namespace ortk
