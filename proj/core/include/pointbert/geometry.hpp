#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pointbert/tensor.hpp"

namespace pointbert::geometry {

using Vec3 = std::array<double, 3>;

/// Raw point set with optional per-point part labels.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<std::uint8_t> labels;  // empty or one per point

    std::size_t size() const noexcept { return points.size(); }
    bool has_labels() const noexcept { return !labels.empty(); }
    /// Throws SizeError if empty, DomainError on non-finite coordinates,
    /// ShapeError on a label count mismatch.
    void validate() const;
};

/// g centers plus g normalized sub-clouds of n points each, stored flat
/// (patch-major).
struct PatchSet {
    std::size_t groups = 0;
    std::size_t patch_size = 0;
    std::vector<Vec3> centers;                // g
    std::vector<Vec3> patches;                // g*n, point minus its center
    std::vector<std::size_t> source_indices;  // g*n, into the parent cloud
    std::vector<std::size_t> center_indices;  // g, into the parent cloud

    const Vec3& patch_point(std::size_t patch, std::size_t j) const { return patches[patch * patch_size + j]; }
    std::span<const Vec3> patch(std::size_t i) const {
        return std::span<const Vec3>(patches).subspan(i * patch_size, patch_size);
    }
    /// [g, n, 3]
    Tensor patches_tensor() const;
    /// [g, 3]
    Tensor centers_tensor() const;
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

/// Greedy farthest point sampling. Each pick maximizes the minimum distance
/// to the picks so far; ties go to the lowest index.
std::vector<std::size_t> sample_fps(std::span<const Vec3> points, std::size_t count, std::size_t start_index = 0);

/// k nearest reference indices per query, flat [query][k], ascending by
/// distance with ties toward the lowest index.
std::vector<std::size_t> knn(std::span<const Vec3> query, std::span<const Vec3> reference, std::size_t k);

/// kNN over arbitrary-width row vectors (`dim` values per row).
std::vector<std::size_t> knn_rows(std::span<const double> query, std::span<const double> reference, std::size_t dim,
                                  std::size_t k);

/// FPS centers, kNN membership, and per-patch translation to the origin.
PatchSet group_patches(const PointCloud& cloud, std::size_t groups, std::size_t patch_size,
                       std::size_t start_index = 0);

/// Row-major |a| x |b| matrix of squared Euclidean distances.
std::vector<double> pairwise_sqdist(std::span<const Vec3> a, std::span<const Vec3> b);

/// Mean nearest-neighbour Euclidean distance in both directions.
double chamfer_l1(std::span<const Vec3> predicted, std::span<const Vec3> target);

/// Differentiable form. [n,3] x [m,3] -> [1]; batched [B,n,3] x [B,m,3] -> [B].
/// The gradient follows the current nearest-neighbour assignment and is zero
/// for coincident pairs.
Tensor chamfer_l1(const Tensor& predicted, const Tensor& target);

std::vector<Vec3> to_points(const Tensor& t);
Tensor to_tensor(std::span<const Vec3> points);

}  // namespace pointbert::geometry
