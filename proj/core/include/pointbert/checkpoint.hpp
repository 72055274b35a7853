#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "pointbert/optim.hpp"

namespace pointbert {

/// Flat parameter manifest.
///
/// Binary layout (all integers and reals little-endian):
///
///     offset 0   8 bytes   magic "PBCKPT01"
///     offset 8   u64       header length H in bytes
///     offset 16  H bytes   UTF-8 JSON header
///     offset 16+H          f64 payload, records concatenated in header order
///
/// The header is `{"format": "pointbert-checkpoint", "version": 1,
/// "records": [{"name", "shape", "offset", "count"}...], "metadata": {...}}`
/// where `offset` and `count` are in elements of the payload.
struct Checkpoint {
    NamedTensors tensors;
    nlohmann::json metadata = nlohmann::json::object();

    const Tensor* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies values from `source` records into same-named `targets`. With
/// `strict`, every target must be present. Returns the number of tensors copied.
std::size_t load_into(const NamedTensors& targets, const Checkpoint& source, bool strict,
                      const std::string& source_prefix = "");

}  // namespace pointbert
