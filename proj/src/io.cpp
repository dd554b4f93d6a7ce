#include "penning/io.hpp"

#include <cstdio>
#include <fstream>

#include "penning/errors.hpp"

namespace penning {

std::string csv_cell(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw ConfigError("output: cannot write " + path.string());
    return out;
}

} // namespace

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
    if (table.columns.empty())
        throw ConfigError("csv: table needs at least one column");
    std::ofstream out = open_for_write(path);
    for (std::size_t c = 0; c < table.columns.size(); ++c)
        out << (c ? "," : "") << table.columns[c];
    out << '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.columns.size())
            throw ConfigError("csv: row width does not match the header in " + path.string());
        for (std::size_t c = 0; c < row.size(); ++c)
            out << (c ? "," : "") << csv_cell(row[c]);
        out << '\n';
    }
    out.flush();
    if (!out)
        throw ConfigError("output: write failed for " + path.string());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    std::ofstream out = open_for_write(path);
    out << doc.dump(2) << '\n';
    out.flush();
    if (!out)
        throw ConfigError("output: write failed for " + path.string());
}

} // namespace penning
