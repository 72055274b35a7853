#include "pointbert/csv_log.hpp"

#include <charconv>
#include <cmath>

#include "pointbert/error.hpp"

namespace pointbert {

namespace {

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string format_csv_value(const CsvValue& v) {
    if (const auto* s = std::get_if<std::string>(&v)) return quote(*s);
    char buf[64];
    std::to_chars_result r{};
    if (const auto* i = std::get_if<std::int64_t>(&v)) {
        r = std::to_chars(buf, buf + sizeof buf, *i);
    } else if (const auto* u = std::get_if<std::uint64_t>(&v)) {
        r = std::to_chars(buf, buf + sizeof buf, *u);
    } else {
        const double d = std::get<double>(v);
        if (std::isnan(d)) return "nan";
        r = std::to_chars(buf, buf + sizeof buf, d == 0.0 ? 0.0 : d);
    }
    return std::string(buf, r.ptr);
}

CsvLog::CsvLog(const std::filesystem::path& path, std::vector<std::string> columns)
    : out_(path, std::ios::binary | std::ios::trunc), columns_(std::move(columns)) {
    if (!out_) throw FormatError("cannot open '" + path.string() + "' for writing");
    for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << quote(columns_[i]);
    out_ << '\n';
    out_.flush();
}

void CsvLog::row(const std::vector<CsvValue>& values) {
    if (values.size() != columns_.size()) throw ShapeError("csv row width does not match header");
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_csv_value(values[i]);
    out_ << '\n';
    out_.flush();
}

}  // namespace pointbert
