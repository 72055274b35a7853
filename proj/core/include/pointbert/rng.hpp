#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace pointbert {

/// Seeded generator with platform-independent draws.
///
/// All distributions are computed from raw 64-bit engine output so runs are
/// reproducible across standard libraries. Named substreams let independent
/// consumers (corpus, mask, gumbel, dropout, ...) share one root seed without
/// perturbing each other.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    /// Deterministic child stream for `name` under `root_seed`.
    static Rng substream(std::uint64_t root_seed, std::string_view name);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in (0, 1); never returns 0.
    double uniform_open();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    double gumbel();
    /// Uniform integer in [0, n).
    std::size_t randint(std::size_t n);
    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[randint(i)]);
        }
    }

    /// k distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t hash_name(std::string_view name);

}  // namespace pointbert
