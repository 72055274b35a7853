#include <doctest.h>

#include <algorithm>

#include "pointbert/cloud_io.hpp"
#include "pointbert/error.hpp"
#include "pointbert/geometry.hpp"
#include "pointbert/ops.hpp"
#include "support.hpp"

using namespace pointbert;
using namespace pointbert::geometry;
using testing::random_points;

namespace {

// Greedy max-min selection straight from the definition, O(g N^2).
std::vector<std::size_t> brute_fps(const std::vector<Vec3>& pts, std::size_t g, std::size_t start) {
    std::vector<std::size_t> chosen{start};
    while (chosen.size() < g) {
        double best = -1;
        std::size_t pick = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
            double nearest = 1e300;
            for (auto c : chosen) nearest = std::min(nearest, squared_distance(pts[i], pts[c]));
            if (nearest > best) best = nearest, pick = i;
        }
        chosen.push_back(pick);
    }
    return chosen;
}

std::vector<std::size_t> brute_knn(const std::vector<Vec3>& q, const std::vector<Vec3>& r, std::size_t k) {
    std::vector<std::size_t> out;
    for (const auto& p : q) {
        std::vector<std::pair<double, std::size_t>> d;
        for (std::size_t j = 0; j < r.size(); ++j) d.emplace_back(squared_distance(p, r[j]), j);
        std::sort(d.begin(), d.end());
        for (std::size_t j = 0; j < k; ++j) out.push_back(d[j].second);
    }
    return out;
}

double brute_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    auto side = [](const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
        double total = 0;
        for (const auto& p : x) {
            double best = 1e300;
            for (const auto& q : y) best = std::min(best, std::sqrt(squared_distance(p, q)));
            total += best;
        }
        return total / static_cast<double>(x.size());
    };
    return side(a, b) + side(b, a);
}

PointCloud cloud_of(std::vector<Vec3> pts) { return PointCloud{std::move(pts), {}}; }

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("point cloud validation") {
    CHECK_THROWS_AS(PointCloud{}.validate(), SizeError);
    CHECK_THROWS_AS(cloud_of({{0, std::nan(""), 0}}).validate(), DomainError);
    PointCloud labelled = cloud_of({{0, 0, 0}, {1, 0, 0}});
    labelled.labels = {1};
    CHECK_THROWS_AS(labelled.validate(), ShapeError);
}

TEST_CASE("fps examples") {
    const std::vector<Vec3> line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {10, 0, 0}};
    CHECK(sample_fps(line, 2, 0) == std::vector<std::size_t>{0, 3});
    CHECK(sample_fps(line, 4, 0) == std::vector<std::size_t>{0, 3, 2, 1});
    CHECK_THROWS_AS(sample_fps(line, 5, 0), SizeError);
}

TEST_CASE("fps matches brute force greedy oracle") {
    Rng rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const auto pts = random_points(1 + rng.randint(64), rng);
        const std::size_t g = 1 + rng.randint(pts.size());
        const std::size_t start = rng.randint(pts.size());
        CHECK(sample_fps(pts, g, start) == brute_fps(pts, g, start));
    }
}

TEST_CASE("knn examples") {
    const std::vector<Vec3> ref{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
    const std::vector<Vec3> q{{0.9, 0, 0}};
    CHECK(knn(q, ref, 2) == std::vector<std::size_t>{1, 0});
    const std::vector<Vec3> exact{{3, 0, 0}};
    CHECK(knn(exact, ref, 1)[0] == 2);
    CHECK_THROWS_AS(knn(q, ref, 4), SizeError);
}

TEST_CASE("knn matches brute force sort oracle") {
    Rng rng(22);
    for (int trial = 0; trial < 40; ++trial) {
        auto ref = random_points(1 + rng.randint(128), rng);
        // Duplicates exercise the index tie-break.
        if (trial % 4 == 0 && ref.size() > 2) ref[1] = ref[0];
        const auto q = random_points(1 + rng.randint(16), rng);
        const std::size_t k = 1 + rng.randint(ref.size());
        CHECK(knn(q, ref, k) == brute_knn(q, ref, k));
    }
}

TEST_CASE("knn over feature rows agrees with the 3-D form") {
    Rng rng(23);
    const auto ref = random_points(30, rng), q = random_points(5, rng);
    std::vector<double> rf, qf;
    for (const auto& p : ref) rf.insert(rf.end(), p.begin(), p.end());
    for (const auto& p : q) qf.insert(qf.end(), p.begin(), p.end());
    CHECK(knn_rows(qf, rf, 3, 4) == knn(q, ref, 4));
}

TEST_CASE("patch grouping contract") {
    Rng rng(24);
    const PointCloud cloud = cloud_of(random_points(1024, rng));
    const PatchSet ps = group_patches(cloud, 64, 32);
    CHECK(ps.groups == 64);
    CHECK(ps.patch_size == 32);
    CHECK(ps.patches.size() == 64 * 32);
    CHECK(ps.patches_tensor().shape() == Shape{64, 32, 3});
    CHECK(ps.centers_tensor().shape() == Shape{64, 3});
    for (std::size_t i = 0; i < ps.groups; ++i) {
        CHECK(ps.centers[i] == cloud.points[ps.center_indices[i]]);
        bool has_origin = false;
        for (std::size_t j = 0; j < ps.patch_size; ++j) {
            const Vec3& local = ps.patch_point(i, j);
            const Vec3& orig = cloud.points[ps.source_indices[i * 32 + j]];
            has_origin |= local == Vec3{0, 0, 0};
            for (int d = 0; d < 3; ++d) CHECK(local[d] == orig[d] - ps.centers[i][d]);
            for (int d = 0; d < 3; ++d) CHECK(local[d] + ps.centers[i][d] == doctest::Approx(orig[d]).epsilon(1e-15));
        }
        CHECK(has_origin);
    }
    CHECK_THROWS_AS(group_patches(cloud, 2000, 4), SizeError);
    CHECK_THROWS_AS(group_patches(cloud, 4, 2000), SizeError);
}

TEST_CASE("chamfer examples") {
    Rng rng(25);
    const auto a = random_points(17, rng), b = random_points(9, rng);
    CHECK(chamfer_l1(a, a) == 0.0);
    const std::vector<Vec3> p{{0, 0, 0}}, g{{1, 0, 0}};
    CHECK(chamfer_l1(p, g) == 2.0);
    CHECK(chamfer_l1(a, b) == chamfer_l1(b, a));
    CHECK(chamfer_l1(a, b) == doctest::Approx(brute_chamfer(a, b)).epsilon(1e-12));
    CHECK_THROWS_AS(chamfer_l1(std::vector<Vec3>{}, g), SizeError);
}

TEST_CASE("differentiable chamfer agrees with the value form and its gradient") {
    Rng rng(26);
    const auto a = random_points(6, rng), b = random_points(5, rng);
    Tensor ta = to_tensor(a);
    ta.set_requires_grad(true);
    const Tensor tb = to_tensor(b);
    CHECK(chamfer_l1(ta, tb).item() == doctest::Approx(chamfer_l1(a, b)).epsilon(1e-14));
    CHECK(testing::grad_error([&] { return chamfer_l1(ta, tb); }, {ta}) < 1e-6);

    Tensor batched = testing::randn({2, 4, 3}, rng);
    const Tensor target = testing::randn({2, 5, 3}, rng, false);
    CHECK(chamfer_l1(batched, target).shape() == Shape{2});
    CHECK(testing::grad_error([&] { return sum_all(chamfer_l1(batched, target)); }, {batched}) < 1e-6);
}

TEST_CASE("pairwise squared distances") {
    const std::vector<Vec3> o{{0, 0, 0}}, t{{3, 4, 0}};
    CHECK(pairwise_sqdist(o, o) == std::vector<double>{0});
    CHECK(pairwise_sqdist(o, t) == std::vector<double>{25});
    Rng rng(27);
    const auto a = random_points(7, rng), b = random_points(4, rng);
    const auto d = pairwise_sqdist(a, b);
    for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            double naive = 0;
            for (int c = 0; c < 3; ++c) naive += (a[i][c] - b[j][c]) * (a[i][c] - b[j][c]);
            CHECK(std::abs(d[i * 4 + j] - naive) <= 1e-12);
        }
    }
}

TEST_CASE("cloud serialization round trips") {
    Rng rng(28);
    PointCloud c = cloud_of(random_points(10, rng));
    c.labels.assign(10, 3);
    const std::string bytes = encode_cloud(c) + encode_cloud(cloud_of({{1, 2, 3}}));
    std::size_t offset = 0;
    const PointCloud first = decode_cloud(bytes, offset);
    const PointCloud second = decode_cloud(bytes, offset);
    CHECK(offset == bytes.size());
    CHECK(first.points == c.points);
    CHECK(first.labels == c.labels);
    CHECK(second.points == std::vector<Vec3>{{1, 2, 3}});
    CHECK_FALSE(second.has_labels());

    const PointCloud csv = cloud_from_csv(cloud_to_csv(c));
    CHECK(csv.points == c.points);
    CHECK(csv.labels == c.labels);

    const auto dir = testing::temp_dir("geometry");
    write_cloud(dir / "c.pbcloud", c);
    CHECK(read_cloud(dir / "c.pbcloud").points == c.points);
}

}
