#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointbert/geometry.hpp"
#include "pointbert/rng.hpp"

namespace pointbert::datasets {

using geometry::PointCloud;
using geometry::Vec3;

enum class Family { sphere, cube, cylinder, torus, cone, plane };

const std::vector<Family>& all_families();
std::string family_name(Family f);
Family parse_family(const std::string& name);

// Global part ids owned by each family.
const std::vector<std::uint8_t>& family_parts(Family f);
std::size_t total_part_count();

// size meaning per family:
//   sphere   {radius}
//   cube     {x, y, z side lengths}
//   cylinder {radius, height}
//   torus    {major radius, minor radius}
//   cone     {base radius, height}
//   plane    {width, depth}
struct ShapeSpec {
    Family family = Family::sphere;
    std::array<double, 3> size{1.0, 1.0, 1.0};
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
    Vec3 translation{0.0, 0.0, 0.0};
    std::size_t point_count = 1024;
    double noise_sigma = 0.0;

    void validate() const;
    nlohmann::json to_json() const;
    static ShapeSpec from_json(const nlohmann::json& j);
};

// Canonical-frame surface samples with part labels (no pose, noise or normalization).
PointCloud sample_surface(const ShapeSpec& spec, Rng& rng);

// Full pipeline: surface sample, pose, jitter, then centroid/unit-ball normalization.
PointCloud generate_shape(const ShapeSpec& spec, Rng& rng);

// Random size parameters and pose for a family.
ShapeSpec random_spec(Family family, std::size_t point_count, double noise_sigma, Rng& rng);

void normalize_unit_ball(PointCloud& cloud);

struct ScaleTranslateRanges {
    double scale_lo = 2.0 / 3.0;
    double scale_hi = 1.5;
    double translate = 0.2;
};

struct ScaleTranslate {
    Vec3 scale{1.0, 1.0, 1.0};
    Vec3 shift{0.0, 0.0, 0.0};

    PointCloud apply(const PointCloud& cloud) const;
    PointCloud invert(const PointCloud& cloud) const;
};

ScaleTranslate sample_scale_translate(Rng& rng, const ScaleTranslateRanges& ranges = {});
PointCloud augment_scale_translate(const PointCloud& cloud, Rng& rng, const ScaleTranslateRanges& ranges = {},
                                   ScaleTranslate* applied = nullptr);

struct LabeledCloud {
    PointCloud cloud;  // labels hold global part ids
    std::size_t label = 0;
};

struct CorpusConfig {
    std::vector<Family> families = all_families();
    std::size_t train_per_class = 30;
    std::size_t val_per_class = 5;
    std::size_t test_per_class = 5;
    std::size_t points = 1024;
    double noise_sigma = 0.01;

    void validate() const;
};

struct Corpus {
    std::uint64_t seed = 0;
    CorpusConfig config;
    std::vector<std::string> class_names;
    std::vector<ShapeSpec> train_specs, val_specs, test_specs;
    std::vector<LabeledCloud> train, val, test;

    const std::vector<LabeledCloud>& split(const std::string& name) const;
    std::vector<LabeledCloud> all() const;
    // class index -> valid part ids
    std::map<std::size_t, std::vector<std::uint8_t>> part_taxonomy() const;
    nlohmann::json manifest() const;
};

Corpus build_corpus(const CorpusConfig& config, std::uint64_t seed);

// Directory layout: manifest.json plus <split>.bin (concatenated clouds).
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

std::vector<PointCloud> clouds_of(const std::vector<LabeledCloud>& items);

// Leading points of a cloud; generated clouds are iid surface samples, so this is an unbiased subset.
PointCloud prefix_subsample(const PointCloud& cloud, std::size_t count);

}  // namespace pointbert::datasets
