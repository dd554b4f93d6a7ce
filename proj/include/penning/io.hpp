#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

// Output plumbing: CSV tables whose column names carry the units, and JSON
// documents (manifests, reports). All numbers are written with %.17g so a
// rerun of a deterministic pipeline is bit-comparable with `diff`.

namespace penning {

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows; // each row matches columns.size()
};

// Shortest round-trippable decimal form of v (printf %.17g).
std::string csv_cell(double v);

// Creates parent directories as needed; throws ConfigError when the path
// cannot be written or a row width disagrees with the header.
void write_csv(const std::filesystem::path& path, const CsvTable& table);

// Pretty-printed, trailing newline; same directory/error behavior.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

} // namespace penning
