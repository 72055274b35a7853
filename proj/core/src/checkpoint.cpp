#include "pointbert/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pointbert/error.hpp"

namespace pointbert {

namespace {

constexpr char kMagic[8] = {'P', 'B', 'C', 'K', 'P', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
    if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint: truncated data");
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json header;
    header["format"] = "pointbert-checkpoint";
    header["version"] = 1;
    header["metadata"] = ckpt.metadata;
    auto records = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        records.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.numel()}});
        offset += t.numel();
    }
    header["records"] = std::move(records);
    const std::string text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint64_t>(out, text.size());
    out += text;
    out.reserve(out.size() + offset * sizeof(double));
    for (const auto& [name, t] : ckpt.tensors) {
        for (double v : t.data()) put_le<double>(out, v);
    }
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("checkpoint: bad magic");
    }
    const auto hlen = get_le<std::uint64_t>(bytes, 8);
    if (16 + hlen > bytes.size()) throw FormatError("checkpoint: header exceeds file");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(16, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    if (header.value("format", "") != "pointbert-checkpoint" || header.value("version", 0) != 1) {
        throw FormatError("checkpoint: unsupported format/version");
    }
    Checkpoint ckpt;
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
    const std::size_t base = 16 + hlen;
    for (const auto& rec : header.at("records")) {
        Shape shape = rec.at("shape").get<Shape>();
        const auto offset = rec.at("offset").get<std::size_t>();
        const auto count = rec.at("count").get<std::size_t>();
        if (shape_numel(shape) != count) throw FormatError("checkpoint: record shape/count mismatch");
        std::vector<double> values(count);
        for (std::size_t i = 0; i < count; ++i) {
            values[i] = get_le<double>(bytes, base + (offset + i) * sizeof(double));
        }
        ckpt.tensors.emplace_back(rec.at("name").get<std::string>(), Tensor::from(std::move(shape), std::move(values)));
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::string bytes = encode_checkpoint(ckpt);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw FormatError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return decode_checkpoint(ss.str());
}

std::size_t load_into(const NamedTensors& targets, const Checkpoint& source, bool strict,
                      const std::string& source_prefix) {
    std::size_t copied = 0;
    for (const auto& [name, target] : targets) {
        const Tensor* src = source.find(source_prefix + name);
        if (!src) {
            if (strict) throw FormatError("checkpoint: missing tensor " + source_prefix + name);
            continue;
        }
        if (src->shape() != target.shape()) {
            throw ShapeError("checkpoint: shape mismatch for " + name + ": " + shape_str(src->shape()) + " vs " +
                             shape_str(target.shape()));
        }
        Tensor dst = target;
        std::copy(src->data().begin(), src->data().end(), dst.mutable_data().begin());
        ++copied;
    }
    return copied;
}

}  // namespace pointbert
