#pragma once

// Minimal CSV tables. Floating-point cells use 17 significant digits so that
// files round-trip exactly and compare byte for byte across runs.

#include "sharp_bridge/errors.hpp"

#include <fmt/format.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

namespace sharp_bridge {

using CsvCell = std::variant<double, std::int64_t, std::uint64_t, bool, std::string>;

inline std::string format_cell(const CsvCell& cell) {
    struct {
        std::string operator()(double v) const { return fmt::format("{:.17g}", v); }
        std::string operator()(std::int64_t v) const { return fmt::format("{}", v); }
        std::string operator()(std::uint64_t v) const { return fmt::format("{}", v); }
        std::string operator()(bool v) const { return v ? "1" : "0"; }
        std::string operator()(const std::string& v) const {
            if (v.find_first_of(",\"\n") == std::string::npos) return v;
            std::string out = "\"";
            for (char c : v) {
                if (c == '"') out += '"';
                out += c;
            }
            return out + "\"";
        }
    } visitor;
    return std::visit(visitor, cell);
}

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(std::vector<CsvCell> row) {
        if (row.size() != header_.size()) throw Error("CSV row width does not match the header");
        rows_.push_back(std::move(row));
    }

    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<CsvCell>>& rows() const { return rows_; }

    std::string str() const {
        std::string out;
        auto line = [&out](const auto& cells, auto fmt_one) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out += ',';
                out += fmt_one(cells[i]);
            }
            out += '\n';
        };
        line(header_, [](const std::string& h) { return h; });
        for (const auto& r : rows_) line(r, [](const CsvCell& c) { return format_cell(c); });
        return out;
    }

    /// Writes the table, creating parent directories.
    void write(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + path.string());
        out << str();
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<CsvCell>> rows_;
};

}  // namespace sharp_bridge
