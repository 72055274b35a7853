#include "pointbert/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pointbert/error.hpp"

namespace pointbert::geometry {

void PointCloud::validate() const {
    if (points.empty()) throw SizeError("PointCloud: empty cloud");
    for (const auto& p : points) {
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
            throw DomainError("PointCloud: non-finite coordinate");
        }
    }
    if (!labels.empty() && labels.size() != points.size()) {
        throw ShapeError("PointCloud: label count does not match point count");
    }
}

Tensor PatchSet::patches_tensor() const {
    std::vector<double> v;
    v.reserve(patches.size() * 3);
    for (const auto& p : patches) v.insert(v.end(), p.begin(), p.end());
    return Tensor::from({groups, patch_size, 3}, std::move(v));
}

Tensor PatchSet::centers_tensor() const { return to_tensor(centers); }

std::vector<std::size_t> sample_fps(std::span<const Vec3> points, std::size_t count, std::size_t start_index) {
    const std::size_t n = points.size();
    if (count < 1 || count > n) {
        throw SizeError("sample_fps: requested " + std::to_string(count) + " of " + std::to_string(n) + " points");
    }
    if (start_index >= n) throw SizeError("sample_fps: start index out of range");
    std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> picked;
    picked.reserve(count);
    std::size_t current = start_index;
    for (std::size_t s = 0; s < count; ++s) {
        picked.push_back(current);
        min_d[current] = -1.0;
        std::size_t best = n;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (min_d[i] < 0.0) continue;
            const double d = squared_distance(points[i], points[current]);
            if (d < min_d[i]) min_d[i] = d;
            if (min_d[i] > best_d) {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    return picked;
}

std::vector<std::size_t> knn_rows(std::span<const double> query, std::span<const double> reference, std::size_t dim,
                                  std::size_t k) {
    if (dim == 0) throw ShapeError("knn_rows: zero dimension");
    const std::size_t q = query.size() / dim;
    const std::size_t r = reference.size() / dim;
    if (k > r || k == 0) {
        throw SizeError("knn: k=" + std::to_string(k) + " with " + std::to_string(r) + " reference points");
    }
    std::vector<std::size_t> out(q * k);
    std::vector<double> d(r);
    std::vector<std::size_t> order(r);
    for (std::size_t i = 0; i < q; ++i) {
        const double* qi = query.data() + i * dim;
        for (std::size_t j = 0; j < r; ++j) {
            const double* rj = reference.data() + j * dim;
            double s = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double t = qi[c] - rj[c];
                s += t * t;
            }
            d[j] = s;
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); });
        std::copy_n(order.begin(), k, out.begin() + static_cast<std::ptrdiff_t>(i * k));
    }
    return out;
}

std::vector<std::size_t> knn(std::span<const Vec3> query, std::span<const Vec3> reference, std::size_t k) {
    const std::span<const double> q(query.empty() ? nullptr : query.front().data(), query.size() * 3);
    const std::span<const double> r(reference.empty() ? nullptr : reference.front().data(), reference.size() * 3);
    return knn_rows(q, r, 3, k);
}

PatchSet group_patches(const PointCloud& cloud, std::size_t groups, std::size_t patch_size, std::size_t start_index) {
    cloud.validate();
    if (patch_size > cloud.size()) throw SizeError("group_patches: patch size exceeds cloud size");
    PatchSet ps;
    ps.groups = groups;
    ps.patch_size = patch_size;
    ps.center_indices = sample_fps(cloud.points, groups, start_index);
    for (auto idx : ps.center_indices) ps.centers.push_back(cloud.points[idx]);
    ps.source_indices = knn(ps.centers, cloud.points, patch_size);
    ps.patches.resize(groups * patch_size);
    for (std::size_t i = 0; i < groups; ++i) {
        const Vec3& c = ps.centers[i];
        for (std::size_t j = 0; j < patch_size; ++j) {
            const Vec3& p = cloud.points[ps.source_indices[i * patch_size + j]];
            ps.patches[i * patch_size + j] = {p[0] - c[0], p[1] - c[1], p[2] - c[2]};
        }
    }
    return ps;
}

std::vector<double> pairwise_sqdist(std::span<const Vec3> a, std::span<const Vec3> b) {
    std::vector<double> out(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) out[i * b.size() + j] = squared_distance(a[i], b[j]);
    }
    return out;
}

namespace {

// For each row of `from`, the index of its nearest row in `to` (ties low).
void nearest(const double* from, std::size_t nf, const double* to, std::size_t nt, std::size_t* idx, double* dist) {
    for (std::size_t i = 0; i < nf; ++i) {
        const double* p = from + 3 * i;
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        for (std::size_t j = 0; j < nt; ++j) {
            const double* q = to + 3 * j;
            const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
            const double d = dx * dx + dy * dy + dz * dz;
            if (d < best) {
                best = d;
                bi = j;
            }
        }
        idx[i] = bi;
        dist[i] = std::sqrt(best);
    }
}

}  // namespace

double chamfer_l1(std::span<const Vec3> predicted, std::span<const Vec3> target) {
    if (predicted.empty() || target.empty()) throw SizeError("chamfer_l1: empty point set");
    std::vector<std::size_t> idx(std::max(predicted.size(), target.size()));
    std::vector<double> dist(idx.size());
    nearest(predicted.front().data(), predicted.size(), target.front().data(), target.size(), idx.data(), dist.data());
    double a = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) a += dist[i];
    nearest(target.front().data(), target.size(), predicted.front().data(), predicted.size(), idx.data(), dist.data());
    double b = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) b += dist[i];
    return a / static_cast<double>(predicted.size()) + b / static_cast<double>(target.size());
}

Tensor chamfer_l1(const Tensor& predicted, const Tensor& target) {
    const bool batched = predicted.rank() == 3;
    if (predicted.rank() != target.rank() || !(predicted.rank() == 2 || batched) || predicted.dim(-1) != 3 ||
        target.dim(-1) != 3) {
        throw ShapeError("chamfer_l1: expected [n,3]/[m,3] or [B,n,3]/[B,m,3], got " + shape_str(predicted.shape()) +
                         " and " + shape_str(target.shape()));
    }
    const std::size_t batch = batched ? predicted.dim(0) : 1;
    if (batched && target.dim(0) != batch) throw ShapeError("chamfer_l1: batch mismatch");
    const std::size_t np = predicted.dim(-2), nt = target.dim(-2);
    std::vector<std::size_t> p2t(batch * np), t2p(batch * nt);
    std::vector<double> dp(batch * np), dt(batch * nt);
    std::vector<double> out(batch);
    const double* P = predicted.data().data();
    const double* G = target.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
        nearest(P + b * np * 3, np, G + b * nt * 3, nt, p2t.data() + b * np, dp.data() + b * np);
        nearest(G + b * nt * 3, nt, P + b * np * 3, np, t2p.data() + b * nt, dt.data() + b * nt);
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < np; ++i) sa += dp[b * np + i];
        for (std::size_t i = 0; i < nt; ++i) sb += dt[b * nt + i];
        out[b] = sa / static_cast<double>(np) + sb / static_cast<double>(nt);
    }
    auto pi = predicted.impl_ptr();
    auto ti = target.impl_ptr();
    return detail::make_result(
        {batch}, std::move(out), {predicted, target}, "chamfer_l1",
        [pi, ti, batch, np, nt, p2t = std::move(p2t), t2p = std::move(t2p), dp = std::move(dp),
         dt = std::move(dt)](detail::TensorImpl& o) {
            auto* gp = detail::grad_sink(pi);
            auto* gt = detail::grad_sink(ti);
            const double* P = pi->data.data();
            const double* G = ti->data.data();
            auto push = [](std::vector<double>* g, std::size_t row, const double* v, double f) {
                if (!g) return;
                for (int c = 0; c < 3; ++c) (*g)[row * 3 + static_cast<std::size_t>(c)] += f * v[c];
            };
            for (std::size_t b = 0; b < batch; ++b) {
                const double go = o.grad[b];
                for (std::size_t i = 0; i < np; ++i) {
                    const double d = dp[b * np + i];
                    if (d == 0.0) continue;
                    const std::size_t pr = b * np + i, tr = b * nt + p2t[b * np + i];
                    const double diff[3] = {P[pr * 3] - G[tr * 3], P[pr * 3 + 1] - G[tr * 3 + 1],
                                            P[pr * 3 + 2] - G[tr * 3 + 2]};
                    const double f = go / (static_cast<double>(np) * d);
                    push(gp, pr, diff, f);
                    push(gt, tr, diff, -f);
                }
                for (std::size_t i = 0; i < nt; ++i) {
                    const double d = dt[b * nt + i];
                    if (d == 0.0) continue;
                    const std::size_t tr = b * nt + i, pr = b * np + t2p[b * nt + i];
                    const double diff[3] = {G[tr * 3] - P[pr * 3], G[tr * 3 + 1] - P[pr * 3 + 1],
                                            G[tr * 3 + 2] - P[pr * 3 + 2]};
                    const double f = go / (static_cast<double>(nt) * d);
                    push(gt, tr, diff, f);
                    push(gp, pr, diff, -f);
                }
            }
        });
}

std::vector<Vec3> to_points(const Tensor& t) {
    if (t.dim(-1) != 3) throw ShapeError("to_points: last axis must be 3");
    std::vector<Vec3> out(t.numel() / 3);
    const auto d = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = {d[3 * i], d[3 * i + 1], d[3 * i + 2]};
    return out;
}

Tensor to_tensor(std::span<const Vec3> points) {
    if (points.empty()) throw SizeError("to_tensor: empty point set");
    std::vector<double> v;
    v.reserve(points.size() * 3);
    for (const auto& p : points) v.insert(v.end(), p.begin(), p.end());
    return Tensor::from({points.size(), 3}, std::move(v));
}

}  // namespace pointbert::geometry
