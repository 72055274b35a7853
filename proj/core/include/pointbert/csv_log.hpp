#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

namespace pointbert {

using CsvValue = std::variant<std::int64_t, std::uint64_t, double, std::string>;

/// Shortest round-trip formatting, so identical values give identical bytes.
std::string format_csv_value(const CsvValue& v);

/// Append-only CSV file with a fixed header; flushed after every row.
class CsvLog {
public:
    CsvLog(const std::filesystem::path& path, std::vector<std::string> columns);

    void row(const std::vector<CsvValue>& values);
    const std::vector<std::string>& columns() const { return columns_; }

private:
    std::ofstream out_;
    std::vector<std::string> columns_;
};

}  // namespace pointbert
