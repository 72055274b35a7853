#pragma once

#include <filesystem>
#include <string>

#include "pointbert/geometry.hpp"

namespace pointbert::geometry {

// Binary cloud record, little-endian:
//
//     8 bytes   magic "PBCLOUD1"
//     u64       point count n
//     u8        1 if labels follow, else 0
//     n*3 f64   x, y, z per point
//     n u8      part labels (only when flagged)
//
// Records can be concatenated; corpus split blobs are sequences of them.

std::string encode_cloud(const PointCloud& cloud);
/// Decodes one record starting at `offset`; advances `offset` past it.
PointCloud decode_cloud(const std::string& bytes, std::size_t& offset);

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_cloud(const std::filesystem::path& path);

/// "x,y,z[,label]" lines after a header row.
std::string cloud_to_csv(const PointCloud& cloud);
PointCloud cloud_from_csv(const std::string& text);

}  // namespace pointbert::geometry
