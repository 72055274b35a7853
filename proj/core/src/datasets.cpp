#include "pointbert/datasets.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pointbert/cloud_io.hpp"
#include "pointbert/error.hpp"

namespace pointbert::datasets {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr const char* kCorpusVersion = "pointbert-corpus/1";

Vec3 rotate(const std::array<double, 9>& r, const Vec3& p) {
    return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2], r[3] * p[0] + r[4] * p[1] + r[5] * p[2],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2]};
}

// Uniform random rotation from a normalized Gaussian quaternion.
std::array<double, 9> random_rotation(Rng& rng) {
    double w = rng.normal(), x = rng.normal(), y = rng.normal(), z = rng.normal();
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    w /= n, x /= n, y /= n, z /= n;
    return {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
            2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
            2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
}

Vec3 disk_point(double radius, double z, Rng& rng) {
    const double rad = radius * std::sqrt(rng.uniform());
    const double t = rng.uniform(0.0, kTwoPi);
    return {rad * std::cos(t), rad * std::sin(t), z};
}

}  // namespace

const std::vector<Family>& all_families() {
    static const std::vector<Family> v{Family::sphere, Family::cube, Family::cylinder,
                                       Family::torus,  Family::cone, Family::plane};
    return v;
}

std::string family_name(Family f) {
    switch (f) {
        case Family::sphere: return "sphere";
        case Family::cube: return "cube";
        case Family::cylinder: return "cylinder";
        case Family::torus: return "torus";
        case Family::cone: return "cone";
        case Family::plane: return "plane";
    }
    return "?";
}

Family parse_family(const std::string& name) {
    for (auto f : all_families()) {
        if (family_name(f) == name) return f;
    }
    throw SpecError("unknown shape family '" + name + "'");
}

const std::vector<std::uint8_t>& family_parts(Family f) {
    static const std::vector<std::uint8_t> parts[] = {{0, 1}, {2, 3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}};
    return parts[static_cast<int>(f)];
}

std::size_t total_part_count() { return 13; }

void ShapeSpec::validate() const {
    auto positive = [&](std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            if (!(size[i] > 0.0) || !std::isfinite(size[i])) {
                throw SpecError(family_name(family) + ": size parameters must be positive and finite");
            }
        }
    };
    switch (family) {
        case Family::sphere: positive(1); break;
        case Family::cube: positive(3); break;
        case Family::cylinder:
        case Family::cone:
        case Family::plane: positive(2); break;
        case Family::torus:
            positive(2);
            if (size[1] >= size[0]) throw SpecError("torus: minor radius must be below major radius");
            break;
    }
    if (point_count < 8) throw SpecError("shape: point_count must be at least 8");
    if (!(noise_sigma >= 0.0)) throw SpecError("shape: noise_sigma must be non-negative");
}

nlohmann::json ShapeSpec::to_json() const {
    return {{"family", family_name(family)}, {"size", size},
            {"rotation", rotation},          {"translation", translation},
            {"points", point_count},         {"noise_sigma", noise_sigma}};
}

ShapeSpec ShapeSpec::from_json(const nlohmann::json& j) {
    ShapeSpec s;
    s.family = parse_family(j.at("family").get<std::string>());
    s.size = j.at("size").get<std::array<double, 3>>();
    s.rotation = j.at("rotation").get<std::array<double, 9>>();
    s.translation = j.at("translation").get<Vec3>();
    s.point_count = j.at("points").get<std::size_t>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    return s;
}

PointCloud sample_surface(const ShapeSpec& spec, Rng& rng) {
    spec.validate();
    PointCloud out;
    out.points.reserve(spec.point_count);
    out.labels.reserve(spec.point_count);
    const auto& parts = family_parts(spec.family);
    const auto& s = spec.size;
    for (std::size_t i = 0; i < spec.point_count; ++i) {
        Vec3 p{};
        std::uint8_t part = parts[0];
        switch (spec.family) {
            case Family::sphere: {
                double x, y, z, n;
                do {
                    x = rng.normal(), y = rng.normal(), z = rng.normal();
                    n = std::sqrt(x * x + y * y + z * z);
                } while (n == 0.0);
                p = {s[0] * x / n, s[0] * y / n, s[0] * z / n};
                part = p[2] >= 0.0 ? parts[0] : parts[1];
                break;
            }
            case Family::cube: {
                const double ax = s[1] * s[2], ay = s[0] * s[2], az = s[0] * s[1];
                const double u = rng.uniform() * (ax + ay + az);
                const int axis = u < ax ? 0 : (u < ax + ay ? 1 : 2);
                const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
                for (int a = 0; a < 3; ++a) p[a] = rng.uniform(-0.5, 0.5) * s[a];
                p[axis] = 0.5 * sign * s[axis];
                part = parts[axis];
                break;
            }
            case Family::cylinder: {
                const double r = s[0], h = s[1];
                const double body = r * h, caps = r * r;
                if (rng.uniform() * (body + caps) < body) {
                    const double t = rng.uniform(0.0, kTwoPi);
                    p = {r * std::cos(t), r * std::sin(t), rng.uniform(-0.5, 0.5) * h};
                    part = parts[0];
                } else {
                    p = disk_point(r, rng.bernoulli(0.5) ? 0.5 * h : -0.5 * h, rng);
                    part = parts[1];
                }
                break;
            }
            case Family::torus: {
                const double big = s[0], small = s[1];
                double theta;
                do {
                    theta = rng.uniform(0.0, kTwoPi);
                } while (rng.uniform() * (big + small) > big + small * std::cos(theta));
                const double phi = rng.uniform(0.0, kTwoPi);
                const double rad = big + small * std::cos(theta);
                p = {rad * std::cos(phi), rad * std::sin(phi), small * std::sin(theta)};
                part = std::cos(theta) < 0.0 ? parts[0] : parts[1];
                break;
            }
            case Family::cone: {
                const double r = s[0], h = s[1];
                const double slant = std::sqrt(r * r + h * h);
                const double base = r * r, lateral = r * slant;
                if (rng.uniform() * (base + lateral) < base) {
                    p = disk_point(r, 0.0, rng);
                    part = parts[0];
                } else {
                    const double t = std::sqrt(rng.uniform());
                    const double phi = rng.uniform(0.0, kTwoPi);
                    p = {t * r * std::cos(phi), t * r * std::sin(phi), h * (1.0 - t)};
                    part = parts[1];
                }
                break;
            }
            case Family::plane: {
                p = {rng.uniform(-0.5, 0.5) * s[0], rng.uniform(-0.5, 0.5) * s[1], 0.0};
                part = p[0] < 0.0 ? parts[0] : parts[1];
                break;
            }
        }
        out.points.push_back(p);
        out.labels.push_back(part);
    }
    return out;
}

void normalize_unit_ball(PointCloud& cloud) {
    if (cloud.points.empty()) return;
    Vec3 c{0.0, 0.0, 0.0};
    for (const auto& p : cloud.points) {
        for (int a = 0; a < 3; ++a) c[a] += p[a];
    }
    for (auto& v : c) v /= static_cast<double>(cloud.size());
    double r = 0.0;
    for (auto& p : cloud.points) {
        for (int a = 0; a < 3; ++a) p[a] -= c[a];
        r = std::max(r, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    }
    if (r > 0.0) {
        for (auto& p : cloud.points) {
            for (auto& v : p) v /= r;
        }
    }
}

PointCloud generate_shape(const ShapeSpec& spec, Rng& rng) {
    PointCloud cloud = sample_surface(spec, rng);
    for (auto& p : cloud.points) {
        p = rotate(spec.rotation, p);
        for (int a = 0; a < 3; ++a) p[a] += spec.translation[a];
        if (spec.noise_sigma > 0.0) {
            for (auto& v : p) v += spec.noise_sigma * rng.normal();
        }
    }
    normalize_unit_ball(cloud);
    cloud.validate();
    return cloud;
}

ShapeSpec random_spec(Family family, std::size_t point_count, double noise_sigma, Rng& rng) {
    ShapeSpec s;
    s.family = family;
    s.point_count = point_count;
    s.noise_sigma = noise_sigma;
    switch (family) {
        case Family::sphere: s.size = {rng.uniform(0.8, 1.2), 0.0, 0.0}; break;
        case Family::cube: s.size = {rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.4)}; break;
        case Family::cylinder: s.size = {rng.uniform(0.3, 0.6), rng.uniform(1.0, 2.0), 0.0}; break;
        case Family::torus: s.size = {rng.uniform(0.6, 0.9), rng.uniform(0.15, 0.35), 0.0}; break;
        case Family::cone: s.size = {rng.uniform(0.4, 0.8), rng.uniform(0.8, 1.6), 0.0}; break;
        case Family::plane: s.size = {rng.uniform(0.8, 1.6), rng.uniform(0.8, 1.6), 0.0}; break;
    }
    s.rotation = random_rotation(rng);
    s.translation = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    return s;
}

PointCloud ScaleTranslate::apply(const PointCloud& cloud) const {
    PointCloud out = cloud;
    for (auto& p : out.points) {
        for (int a = 0; a < 3; ++a) p[a] = p[a] * scale[a] + shift[a];
    }
    return out;
}

PointCloud ScaleTranslate::invert(const PointCloud& cloud) const {
    PointCloud out = cloud;
    for (auto& p : out.points) {
        for (int a = 0; a < 3; ++a) p[a] = (p[a] - shift[a]) / scale[a];
    }
    return out;
}

ScaleTranslate sample_scale_translate(Rng& rng, const ScaleTranslateRanges& ranges) {
    if (!(ranges.scale_lo > 0.0) || ranges.scale_hi < ranges.scale_lo || ranges.translate < 0.0) {
        throw DomainError("scale/translate: invalid ranges");
    }
    ScaleTranslate t;
    for (auto& v : t.scale) v = rng.uniform(ranges.scale_lo, ranges.scale_hi);
    for (auto& v : t.shift) v = rng.uniform(-ranges.translate, ranges.translate);
    return t;
}

PointCloud augment_scale_translate(const PointCloud& cloud, Rng& rng, const ScaleTranslateRanges& ranges,
                                   ScaleTranslate* applied) {
    const auto t = sample_scale_translate(rng, ranges);
    if (applied) *applied = t;
    return t.apply(cloud);
}

void CorpusConfig::validate() const {
    if (families.empty()) throw SpecError("corpus: no families");
    if (train_per_class + val_per_class + test_per_class == 0) throw SpecError("corpus: zero instances per class");
    if (points < 8) throw SpecError("corpus: points must be at least 8");
    if (!(noise_sigma >= 0.0)) throw SpecError("corpus: noise_sigma must be non-negative");
}

const std::vector<LabeledCloud>& Corpus::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw SpecError("unknown split '" + name + "'");
}

std::vector<LabeledCloud> Corpus::all() const {
    std::vector<LabeledCloud> out = train;
    out.insert(out.end(), val.begin(), val.end());
    out.insert(out.end(), test.begin(), test.end());
    return out;
}

std::map<std::size_t, std::vector<std::uint8_t>> Corpus::part_taxonomy() const {
    std::map<std::size_t, std::vector<std::uint8_t>> tax;
    for (std::size_t c = 0; c < config.families.size(); ++c) tax[c] = family_parts(config.families[c]);
    return tax;
}

nlohmann::json Corpus::manifest() const {
    nlohmann::json j;
    j["version"] = kCorpusVersion;
    j["seed"] = seed;
    j["classes"] = class_names;
    nlohmann::json parts = nlohmann::json::object();
    for (const auto& [c, p] : part_taxonomy()) parts[class_names[c]] = p;
    j["parts"] = parts;
    j["config"] = {{"train_per_class", config.train_per_class},
                   {"val_per_class", config.val_per_class},
                   {"test_per_class", config.test_per_class},
                   {"points", config.points},
                   {"noise_sigma", config.noise_sigma}};
    auto dump_split = [&](const std::vector<ShapeSpec>& specs, const std::vector<LabeledCloud>& items) {
        nlohmann::json arr = nlohmann::json::array();
        std::size_t offset = 0;
        for (std::size_t i = 0; i < items.size(); ++i) {
            nlohmann::json e = specs[i].to_json();
            e["class"] = items[i].label;
            e["offset"] = offset;
            offset += geometry::encode_cloud(items[i].cloud).size();
            arr.push_back(std::move(e));
        }
        return arr;
    };
    j["splits"] = {{"train", dump_split(train_specs, train)},
                   {"val", dump_split(val_specs, val)},
                   {"test", dump_split(test_specs, test)}};
    return j;
}

Corpus build_corpus(const CorpusConfig& config, std::uint64_t seed) {
    config.validate();
    Corpus corpus;
    corpus.seed = seed;
    corpus.config = config;
    for (auto f : config.families) corpus.class_names.push_back(family_name(f));
    const std::size_t per_class = config.train_per_class + config.val_per_class + config.test_per_class;
    for (std::size_t c = 0; c < config.families.size(); ++c) {
        const Family f = config.families[c];
        for (std::size_t i = 0; i < per_class; ++i) {
            Rng rng = Rng::substream(seed, "corpus/" + family_name(f) + "/" + std::to_string(i));
            ShapeSpec spec = random_spec(f, config.points, config.noise_sigma, rng);
            LabeledCloud item{generate_shape(spec, rng), c};
            auto* specs = &corpus.test_specs;
            auto* items = &corpus.test;
            if (i < config.train_per_class) {
                specs = &corpus.train_specs, items = &corpus.train;
            } else if (i < config.train_per_class + config.val_per_class) {
                specs = &corpus.val_specs, items = &corpus.val;
            }
            specs->push_back(spec);
            items->push_back(std::move(item));
        }
    }
    return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream m(dir / "manifest.json", std::ios::binary);
        m << corpus.manifest().dump(2) << '\n';
        if (!m) throw FormatError("write_corpus: cannot write manifest in " + dir.string());
    }
    for (const char* name : {"train", "val", "test"}) {
        std::ofstream out(dir / (std::string(name) + ".bin"), std::ios::binary);
        for (const auto& item : corpus.split(name)) out << geometry::encode_cloud(item.cloud);
        if (!out) throw FormatError("write_corpus: cannot write split " + std::string(name));
    }
}

Corpus read_corpus(const std::filesystem::path& dir) {
    std::ifstream m(dir / "manifest.json", std::ios::binary);
    if (!m) throw FormatError("read_corpus: no manifest in " + dir.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(m);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("read_corpus: bad manifest: ") + e.what());
    }
    if (j.value("version", "") != kCorpusVersion) throw FormatError("read_corpus: unsupported corpus version");
    Corpus corpus;
    corpus.seed = j.at("seed").get<std::uint64_t>();
    corpus.class_names = j.at("classes").get<std::vector<std::string>>();
    corpus.config.families.clear();
    for (const auto& n : corpus.class_names) corpus.config.families.push_back(parse_family(n));
    const auto& cfg = j.at("config");
    corpus.config.train_per_class = cfg.at("train_per_class");
    corpus.config.val_per_class = cfg.at("val_per_class");
    corpus.config.test_per_class = cfg.at("test_per_class");
    corpus.config.points = cfg.at("points");
    corpus.config.noise_sigma = cfg.at("noise_sigma");
    for (const char* name : {"train", "val", "test"}) {
        std::ifstream in(dir / (std::string(name) + ".bin"), std::ios::binary);
        if (!in) throw FormatError("read_corpus: missing split file " + std::string(name) + ".bin");
        std::stringstream ss;
        ss << in.rdbuf();
        const std::string bytes = ss.str();
        const std::string split = name;
        auto& specs = split == "train" ? corpus.train_specs : split == "val" ? corpus.val_specs : corpus.test_specs;
        auto& items = split == "train" ? corpus.train : split == "val" ? corpus.val : corpus.test;
        for (const auto& e : j.at("splits").at(name)) {
            std::size_t offset = e.at("offset").get<std::size_t>();
            if (offset >= bytes.size()) throw FormatError("read_corpus: offset past end of split file");
            specs.push_back(ShapeSpec::from_json(e));
            items.push_back({geometry::decode_cloud(bytes, offset), e.at("class").get<std::size_t>()});
        }
    }
    return corpus;
}

std::vector<PointCloud> clouds_of(const std::vector<LabeledCloud>& items) {
    std::vector<PointCloud> out;
    out.reserve(items.size());
    for (const auto& i : items) out.push_back(i.cloud);
    return out;
}

PointCloud prefix_subsample(const PointCloud& cloud, std::size_t count) {
    if (cloud.size() <= count) return cloud;
    PointCloud out;
    out.points.assign(cloud.points.begin(), cloud.points.begin() + static_cast<std::ptrdiff_t>(count));
    if (cloud.has_labels()) {
        out.labels.assign(cloud.labels.begin(), cloud.labels.begin() + static_cast<std::ptrdiff_t>(count));
    }
    return out;
}

}  // namespace pointbert::datasets
