#include "pointbert/cloud_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pointbert/error.hpp"

namespace pointbert::geometry {

namespace {

constexpr char kMagic[8] = {'P', 'B', 'C', 'L', 'O', 'U', 'D', '1'};

template <typename T>
void put_le(std::string& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw FormatError("cloud: truncated record");
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    pos += sizeof(T);
    return value;
}

std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

}  // namespace

std::string encode_cloud(const PointCloud& cloud) {
    cloud.validate();
    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint64_t>(out, cloud.size());
    out.push_back(cloud.has_labels() ? 1 : 0);
    for (const auto& p : cloud.points) {
        for (double c : p) put_le<double>(out, c);
    }
    for (auto l : cloud.labels) out.push_back(static_cast<char>(l));
    return out;
}

PointCloud decode_cloud(const std::string& bytes, std::size_t& offset) {
    if (offset + sizeof(kMagic) > bytes.size() || std::memcmp(bytes.data() + offset, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("cloud: bad magic at offset " + std::to_string(offset));
    }
    offset += sizeof(kMagic);
    const auto n = get_le<std::uint64_t>(bytes, offset);
    const auto flag = get_le<std::uint8_t>(bytes, offset);
    if (flag > 1) throw FormatError("cloud: bad label flag");
    PointCloud cloud;
    cloud.points.resize(n);
    for (auto& p : cloud.points) {
        for (auto& c : p) c = get_le<double>(bytes, offset);
    }
    if (flag == 1) {
        cloud.labels.resize(n);
        for (auto& l : cloud.labels) l = get_le<std::uint8_t>(bytes, offset);
    }
    cloud.validate();
    return cloud;
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
    const std::string bytes = encode_cloud(cloud);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cloud: cannot open " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

PointCloud read_cloud(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cloud: cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    std::size_t offset = 0;
    return decode_cloud(ss.str(), offset);
}

std::string cloud_to_csv(const PointCloud& cloud) {
    std::string out = cloud.has_labels() ? "x,y,z,label\n" : "x,y,z\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        out += format_double(p[0]) + ',' + format_double(p[1]) + ',' + format_double(p[2]);
        if (cloud.has_labels()) out += ',' + std::to_string(cloud.labels[i]);
        out += '\n';
    }
    return out;
}

PointCloud cloud_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("csv: empty input");
    const bool labelled = line.find("label") != std::string::npos;
    PointCloud cloud;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (fields.size() != (labelled ? 4u : 3u)) {
            throw FormatError("csv: wrong field count on line " + std::to_string(lineno));
        }
        Vec3 p;
        for (int c = 0; c < 3; ++c) {
            const auto& s = fields[static_cast<std::size_t>(c)];
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), p[static_cast<std::size_t>(c)]);
            if (ec != std::errc()) throw FormatError("csv: bad number on line " + std::to_string(lineno));
        }
        cloud.points.push_back(p);
        if (labelled) cloud.labels.push_back(static_cast<std::uint8_t>(std::stoi(fields[3])));
    }
    cloud.validate();
    return cloud;
}

}  // namespace pointbert::geometry
