// Acceptance runner: one PASS/FAIL line per criterion.
// Usage: acceptance [--only N]...

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "cli.hpp"
#include "pointbert/checkpoint.hpp"
#include "pointbert/config.hpp"
#include "pointbert/gradsuite.hpp"

using namespace pointbert;
namespace fs = std::filesystem;
using geometry::PointCloud;
using geometry::Vec3;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Vec3> random_cloud(std::size_t n, Rng& rng, bool with_duplicates) {
    std::vector<Vec3> pts(n);
    for (auto& p : pts) {
        if (with_duplicates) {
            // Coarse lattice: many exact distance ties.
            p = {double(rng.randint(4)), double(rng.randint(4)), double(rng.randint(3))};
        } else {
            p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        }
    }
    return pts;
}

double sqdist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

// --- oracles ----------------------------------------------------------------------

std::vector<std::size_t> fps_oracle(const std::vector<Vec3>& pts, std::size_t count, std::size_t start) {
    std::vector<std::size_t> chosen{start};
    while (chosen.size() < count) {
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
            double d = INFINITY;
            for (auto c : chosen) d = std::min(d, sqdist(pts[i], pts[c]));
            if (d > best_d) {
                best_d = d;
                best = i;
            }
        }
        chosen.push_back(best);
    }
    return chosen;
}

std::vector<std::size_t> knn_oracle(const std::vector<Vec3>& q, const std::vector<Vec3>& ref, std::size_t k) {
    std::vector<std::size_t> out;
    for (const auto& p : q) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < ref.size(); ++j) all.emplace_back(sqdist(p, ref[j]), j);
        std::sort(all.begin(), all.end());
        for (std::size_t j = 0; j < k; ++j) out.push_back(all[j].second);
    }
    return out;
}

double chamfer_oracle(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    auto one_way = [](const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
        double total = 0.0;
        for (const auto& p : x) {
            double best = INFINITY;
            for (const auto& r : y) best = std::min(best, std::sqrt(sqdist(p, r)));
            total += best;
        }
        return total / static_cast<double>(x.size());
    };
    return one_way(a, b) + one_way(b, a);
}

// --- shared training helpers --------------------------------------------------------

dvae::Dvae train_toy_dvae(const config::RunConfig& cfg, const std::vector<PointCloud>& clouds, std::uint64_t seed,
                          std::vector<dvae::DvaeStepLog>* logs = nullptr) {
    Rng init = Rng::substream(seed, "dvae/init");
    dvae::Dvae model(cfg.dvae, init);
    dvae::DvaeStreams streams{Rng::substream(seed, "corpus"), Rng::substream(seed, "gumbel")};
    auto l = dvae::train_dvae(model, clouds, cfg.dvae_train, streams);
    if (logs) *logs = std::move(l);
    return model;
}

// --- criteria -------------------------------------------------------------------------

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto entries = run_gradient_suite(5, 2024);
    const double secs = seconds_since(t0);
    const std::set<std::string> required{"mini_pointnet", "edgeconv",  "attention", "transformer_block",
                                         "folding_layer", "dvae_loss", "mpm_loss",  "moco_loss"};
    double worst = 0.0;
    std::string worst_name;
    std::set<std::string> seen;
    bool seeds_ok = true;
    for (const auto& e : entries) {
        seen.insert(e.family);
        seeds_ok = seeds_ok && e.seeds >= 5;
        if (e.max_relative_error >= worst) {
            worst = e.max_relative_error;
            worst_name = e.family;
        }
    }
    const bool covered = std::includes(seen.begin(), seen.end(), required.begin(), required.end());
    return {covered && seeds_ok && worst < 1e-4 && secs < 120.0,
            fmt("%zu families x 5 seeds, worst rel err %.2e (%s), %.1f s", entries.size(), worst, worst_name.c_str(),
                secs)};
}

Outcome geometry_oracles() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(77);
    std::size_t fps_bad = 0, knn_bad = 0;
    double chamfer_err = 0.0;
    for (int c = 0; c < 200; ++c) {
        const std::size_t n = 1 + rng.randint(128);
        const auto pts = random_cloud(n, rng, c % 4 == 0);
        const std::size_t count = 1 + rng.randint(n);
        const std::size_t start = rng.randint(n);
        if (geometry::sample_fps(pts, count, start) != fps_oracle(pts, count, start)) ++fps_bad;

        const auto queries = random_cloud(1 + rng.randint(32), rng, c % 4 == 0);
        const std::size_t k = 1 + rng.randint(n);
        if (geometry::knn(queries, pts, k) != knn_oracle(queries, pts, k)) ++knn_bad;

        const auto other = random_cloud(1 + rng.randint(128), rng, false);
        chamfer_err = std::max(chamfer_err, std::abs(geometry::chamfer_l1(pts, other) - chamfer_oracle(pts, other)));
        const double tensor_form =
            geometry::chamfer_l1(geometry::to_tensor(pts), geometry::to_tensor(other)).item();
        chamfer_err = std::max(chamfer_err, std::abs(tensor_form - chamfer_oracle(pts, other)));
    }
    const double secs = seconds_since(t0);
    return {fps_bad == 0 && knn_bad == 0 && chamfer_err <= 1e-10 && secs < 30.0,
            fmt("200 clouds: fps mismatches %zu, knn mismatches %zu, chamfer max err %.1e, %.1f s", fps_bad, knn_bad,
                chamfer_err, secs)};
}

Outcome masking_contracts() {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t size_bad = 0, block_bad = 0, draws = 0;
    for (std::size_t g : {16u, 64u}) {
        Rng rng(1000 + g);
        for (int i = 0; i < 1000; ++i, ++draws) {
            const double r = rng.uniform(0.25, 0.45);
            const auto centers = random_cloud(g, rng, i % 5 == 0);
            const std::size_t seed = rng.randint(g);
            const auto expected = static_cast<std::size_t>(std::floor(r * static_cast<double>(g)));

            const auto block = pretrain::make_block_mask(centers, r, seed);
            Rng mask_rng(rng.next_u64());
            const auto rand = pretrain::make_rand_mask(g, r, mask_rng);
            if (block.masked.size() != expected || rand.masked.size() != expected) ++size_bad;
            std::set<std::size_t> rand_set(rand.masked.begin(), rand.masked.end());
            if (rand_set.size() != expected || *rand_set.rbegin() >= g) ++size_bad;

            // Seed patch plus its nearest others, ties to the lower index.
            std::vector<std::pair<double, std::size_t>> others;
            for (std::size_t j = 0; j < g; ++j) {
                if (j != seed) others.emplace_back(sqdist(centers[j], centers[seed]), j);
            }
            std::sort(others.begin(), others.end());
            std::vector<std::size_t> oracle{seed};
            for (std::size_t j = 0; j + 1 < expected; ++j) oracle.push_back(others[j].second);
            std::sort(oracle.begin(), oracle.end());
            if (block.masked != oracle) ++block_bad;
        }
    }
    const double secs = seconds_since(t0);
    return {size_bad == 0 && block_bad == 0 && secs < 10.0,
            fmt("%zu draws: size violations %zu, block-vs-oracle mismatches %zu, %.2f s", draws, size_bad, block_bad,
                secs)};
}

Outcome dvae_sanity() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = config::preset("toy");
    datasets::CorpusConfig cc = cfg.corpus;
    cc.train_per_class = 2;
    cc.val_per_class = 1;
    cc.test_per_class = 1;
    cc.points = cfg.dvae.num_points;
    auto clouds = datasets::clouds_of(datasets::build_corpus(cc, 7).train);
    clouds.resize(8);
    std::vector<dvae::DvaeStepLog> logs;
    const auto model = train_toy_dvae(cfg, clouds, 2, &logs);
    const double secs = seconds_since(t0);

    const auto& s = cfg.dvae_train.schedules;
    const std::uint64_t alpha_end = s.kl_zero_steps + s.kl_ramp_steps;
    bool schedule_ok = logs.size() == cfg.dvae_train.steps;
    for (const auto& l : logs) {
        if (l.step <= s.kl_zero_steps) schedule_ok = schedule_ok && l.alpha == 0.0;
        if (l.step > s.kl_zero_steps && l.step < alpha_end) schedule_ok = schedule_ok && l.alpha > 0.0 && l.alpha < s.kl_max;
        if (l.step >= alpha_end) schedule_ok = schedule_ok && l.alpha == s.kl_max;
        if (l.step == 0) schedule_ok = schedule_ok && l.tau == s.tau_start;
        if (l.step > 0 && l.step < s.tau_steps) schedule_ok = schedule_ok && l.tau > s.tau_end && l.tau < s.tau_start;
        if (l.step >= s.tau_steps) schedule_ok = schedule_ok && l.tau == s.tau_end;
    }
    schedule_ok = schedule_ok && alpha_end < cfg.dvae_train.steps && s.tau_steps < cfg.dvae_train.steps;

    double tail = 0.0;
    const std::size_t window = std::min<std::size_t>(10, logs.size());
    for (std::size_t i = logs.size() - window; i < logs.size(); ++i) tail += logs[i].chamfer_fine;
    tail /= static_cast<double>(window);
    const double initial = logs.front().chamfer_fine;
    const auto hist = dvae::token_histogram(model, clouds);
    const auto used = static_cast<std::size_t>(std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; }));
    return {tail <= 0.5 * initial && schedule_ok && used >= 2 && secs < 180.0,
            fmt("fine chamfer %.4f -> %.4f (ratio %.2f), schedule endpoints %s (alpha at %llu, tau at %llu), "
                "%zu tokens used, %.1f s",
                initial, tail, tail / initial, schedule_ok ? "exact" : "WRONG", (unsigned long long)alpha_end,
                (unsigned long long)s.tau_steps, used, secs)};
}

Outcome contrastive_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(5);
    double worst = 0.0;
    auto unit_rows = [&](std::size_t rows, std::size_t dim) {
        std::vector<double> v(rows * dim);
        for (auto& x : v) x = rng.normal();
        return l2_normalize(Tensor::from({rows, dim}, std::move(v)));
    };
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t b = 1 + rng.randint(6), d = 2 + rng.randint(10), K = 1 + rng.randint(40);
        const double tau = rng.uniform(0.05, 1.0);
        const Tensor q = unit_rows(b, d), k1 = unit_rows(b, d), k2 = unit_rows(b, d), bank = unit_rows(K, d);
        const std::vector<double> ones(b, 1.0);
        const double got = pretrain::moco_loss(q, k1, k2, bank, ones, tau).item();
        const auto Q = q.data(), P = k1.data(), B = bank.data();
        double total = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            auto dot = [&](const double* x, const double* y) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) s += x[j] * y[j];
                return s;
            };
            const double pos = std::exp(dot(&Q[i * d], &P[i * d]) / tau);
            double denom = pos;
            for (std::size_t j = 0; j < K; ++j) denom += std::exp(dot(&Q[i * d], &B[j * d]) / tau);
            total += -std::log(pos / denom);
        }
        worst = std::max(worst, std::abs(got - total / static_cast<double>(b)));
    }

    // Momentum update: shadow' = m shadow + (1-m) online; online untouched.
    std::size_t momentum_bad = 0;
    {
        Tensor online = Tensor::from({3, 4}, std::vector<double>(12, 0.0));
        Tensor shadow = Tensor::from({3, 4}, std::vector<double>(12, 0.0));
        auto o = online.mutable_data(), s = shadow.mutable_data();
        for (std::size_t j = 0; j < 12; ++j) {
            o[j] = rng.normal();
            s[j] = rng.normal();
        }
        const NamedTensors on{{"w", online}}, sh{{"w", shadow}};
        for (int op = 0; op < 10000; ++op) {
            const double m = op % 100 == 0 ? 1.0 : op % 100 == 1 ? 0.0 : rng.uniform(0.9, 1.0);
            const std::vector<double> before_o(o.begin(), o.end()), before_s(s.begin(), s.end());
            pretrain::momentum_update(on, sh, m);
            for (std::size_t j = 0; j < 12; ++j) {
                if (o[j] != before_o[j] || s[j] != m * before_s[j] + (1.0 - m) * before_o[j]) ++momentum_bad;
            }
            if (op % 7 == 0) o[rng.randint(12)] = rng.normal();
        }
    }

    // FIFO bank against a reference ring.
    std::size_t bank_bad = 0;
    {
        const std::size_t K = 37, d = 5;
        Rng bank_rng(9);
        pretrain::MemoryBank bank(K, d, bank_rng);
        std::vector<std::vector<double>> ref(K);
        for (std::size_t i = 0; i < K; ++i) {
            ref[i].assign(bank.entries().data().begin() + i * d, bank.entries().data().begin() + (i + 1) * d);
        }
        std::size_t cursor = 0;
        for (int op = 0; op < 10000; ++op) {
            const std::size_t b = 1 + rng.randint(K);
            std::vector<double> keys(b * d);
            for (auto& x : keys) x = rng.normal() * 3.0;
            bank.enqueue(Tensor::from({b, d}, keys));
            for (std::size_t r = 0; r < b; ++r) {
                double norm = 0.0;
                for (std::size_t j = 0; j < d; ++j) norm += keys[r * d + j] * keys[r * d + j];
                norm = std::sqrt(norm);
                for (std::size_t j = 0; j < d; ++j) ref[cursor][j] = keys[r * d + j] / norm;
                cursor = (cursor + 1) % K;
            }
            const auto e = bank.entries().data();
            if (bank.cursor() != cursor || e.size() != K * d) ++bank_bad;
            for (std::size_t i = 0; i < K; ++i) {
                double norm = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    if (std::abs(e[i * d + j] - ref[i][j]) > 1e-10) ++bank_bad;
                    norm += e[i * d + j] * e[i * d + j];
                }
                if (std::abs(norm - 1.0) > 1e-10) ++bank_bad;
            }
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-10 && momentum_bad == 0 && bank_bad == 0 && secs < 10.0,
            fmt("moco vs oracle max err %.1e on 100 instances; momentum violations %zu, bank violations %zu over 1e4 "
                "ops; %.2f s",
                worst, momentum_bad, bank_bad, secs)};
}

Outcome mpm_learnability() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = config::preset("toy");
    const std::uint64_t seed = 0;
    const auto corpus = datasets::build_corpus(cfg.corpus, seed);
    const auto train = datasets::clouds_of(corpus.train);
    const auto tokenizer = train_toy_dvae(cfg, train, seed);
    const double dvae_secs = seconds_since(t0);

    auto run = [&](std::vector<pretrain::StepLog>& logs) {
        Rng init = Rng::substream(seed, "pretrain/init");
        pretrain::Pretrainer trainer(cfg.pretrain, tokenizer, init);
        auto streams = pretrain::PretrainStreams::from_seed(seed);
        logs = pretrain::run_pretraining(trainer, train, streams);
        const double acc = trainer.masked_accuracy(datasets::clouds_of(corpus.val), seed);
        return std::make_pair(acc, encode_checkpoint(trainer.checkpoint(&streams)));
    };
    const auto t1 = std::chrono::steady_clock::now();
    std::vector<pretrain::StepLog> logs_a, logs_b;
    const auto [acc, bytes_a] = run(logs_a);
    const double pretrain_secs = seconds_since(t1);
    const auto [acc_b, bytes_b] = run(logs_b);
    bool identical = bytes_a == bytes_b && acc == acc_b && logs_a.size() == logs_b.size();
    for (std::size_t i = 0; identical && i < logs_a.size(); ++i) {
        identical = logs_a[i].mpm_loss == logs_b[i].mpm_loss && logs_a[i].moco_loss == logs_b[i].moco_loss &&
                    logs_a[i].masked_acc == logs_b[i].masked_acc;
    }
    const double chance = 1.0 / static_cast<double>(cfg.dvae.vocab_size);
    return {acc >= 3.0 * chance && identical && dvae_secs + pretrain_secs < 300.0,
            fmt("held-out masked acc %.4f vs 3x chance %.4f after %llu steps; rerun %s; tokenizer %.1f s + pretrain "
                "%.1f s",
                acc, 3.0 * chance, (unsigned long long)cfg.pretrain.steps, identical ? "bit-identical" : "DIFFERS",
                dvae_secs, pretrain_secs)};
}

Outcome transfer_ordering() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = config::preset("toy");
    double cls_pre = 0.0, cls_scr = 0.0, fs_pre = 0.0, fs_scr = 0.0;
    const std::vector<std::uint64_t> seeds{0, 1, 2};
    for (auto seed : seeds) {
        const auto corpus = datasets::build_corpus(cfg.corpus, seed);
        const auto train = datasets::clouds_of(corpus.train);
        const auto tokenizer = train_toy_dvae(cfg, train, seed);
        Rng init = Rng::substream(seed, "pretrain/init");
        pretrain::Pretrainer trainer(cfg.pretrain, tokenizer, init);
        auto streams = pretrain::PretrainStreams::from_seed(seed);
        pretrain::run_pretraining(trainer, train, streams);
        const Checkpoint ck = trainer.checkpoint();

        for (bool pretrained : {false, true}) {
            Rng cls_init = Rng::substream(seed, "cls/init");
            downstream::Classifier model(cfg.classifier, cls_init);
            if (pretrained) downstream::load_pretrained_backbone(model.backbone, ck);
            auto fs = downstream::FinetuneStreams::from_seed(seed);
            const auto logs = downstream::finetune_classification(model, corpus.train, corpus.val, cfg.finetune, fs);
            // Mean over the learning curve (epochs 1..E).
            double curve = 0.0;
            for (std::size_t e = 1; e < logs.size(); ++e) curve += logs[e].val_acc;
            curve = 100.0 * curve / static_cast<double>(logs.size() - 1);
            (pretrained ? cls_pre : cls_scr) += curve / static_cast<double>(seeds.size());

            const auto few = downstream::fewshot_eval(corpus.all(), cfg.fewshot, cfg.classifier,
                                                      pretrained ? &ck : nullptr, seed);
            (pretrained ? fs_pre : fs_scr) += few.mean / static_cast<double>(seeds.size());
        }
    }
    const double secs = seconds_since(t0);
    return {cls_pre >= cls_scr - 2.0 && fs_pre >= fs_scr - 2.0 && secs < 900.0,
            fmt("3 seeds: fine-tune val acc pretrained %.1f vs scratch %.1f; %zu-way %zu-shot pretrained %.1f vs "
                "scratch %.1f; %.0f s",
                cls_pre, cls_scr, cfg.fewshot.way, cfg.fewshot.shot, fs_pre, fs_scr, secs)};
}

Outcome segmentation_pipeline() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(31);
    double sum_err = 0.0, limit_err = 0.0;
    for (int t = 0; t < 200; ++t) {
        const auto sparse = random_cloud(3 + rng.randint(40), rng, false);
        const auto dense = random_cloud(1 + rng.randint(80), rng, false);
        const std::size_t k = 1 + rng.randint(std::min<std::size_t>(5, sparse.size()));
        const auto nb = downstream::idw_neighbours(dense, sparse, k);
        for (std::size_t i = 0; i < dense.size(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += nb.weight[i * k + j];
            sum_err = std::max(sum_err, std::abs(s - 1.0));
        }
        // Query on a sparse point versus a query displaced by a tiny offset.
        const std::size_t c = rng.randint(sparse.size());
        std::vector<double> feats(sparse.size() * 4);
        for (auto& x : feats) x = rng.uniform(-1, 1);
        const Tensor f = Tensor::from({sparse.size(), 4}, feats);
        const std::vector<Vec3> exact{sparse[c]};
        const std::vector<Vec3> near{{sparse[c][0] + 1e-8, sparse[c][1], sparse[c][2]}};
        const Tensor ta = downstream::interpolate_features(exact, sparse, f, k);
        const Tensor tb = downstream::interpolate_features(near, sparse, f, k);
        const auto a = ta.data(), b = tb.data();
        for (std::size_t j = 0; j < 4; ++j) limit_err = std::max(limit_err, std::abs(a[j] - b[j]));
    }

    const auto cfg = config::preset("toy");
    const auto& seg = cfg.segmentation;
    Rng data = Rng::substream(0, "seg/train");
    std::vector<datasets::LabeledCloud> items;
    for (std::size_t i = 0; i < seg.train_items; ++i) {
        const auto family = seg.families[i % seg.families.size()];
        const auto spec = datasets::random_spec(family, seg.model.num_points, cfg.corpus.noise_sigma, data);
        items.push_back({datasets::generate_shape(spec, data), static_cast<std::size_t>(family)});
    }
    std::set<std::uint8_t> parts;
    for (const auto& it : items) parts.insert(it.cloud.labels.begin(), it.cloud.labels.end());
    Rng init = Rng::substream(0, "seg/init");
    downstream::SegmentationModel model(seg.model, init);
    Rng dropout = Rng::substream(0, "dropout");
    downstream::train_segmentation(model, items, seg.train, dropout);
    const double train_acc = downstream::point_accuracy(model, items);

    std::map<std::size_t, std::vector<std::uint8_t>> taxonomy;
    for (auto fam : datasets::all_families()) taxonomy[static_cast<std::size_t>(fam)] = datasets::family_parts(fam);
    std::vector<std::vector<std::uint8_t>> labels;
    std::vector<std::size_t> classes;
    for (int i = 0; i < 30; ++i) {
        const std::size_t cls = rng.randint(taxonomy.size());
        const auto& allowed = taxonomy[cls];
        std::vector<std::uint8_t> l(1 + rng.randint(200));
        for (auto& x : l) x = allowed[rng.randint(allowed.size())];
        labels.push_back(l);
        classes.push_back(cls);
    }
    const auto perfect = downstream::miou(labels, labels, classes, taxonomy);
    const double secs = seconds_since(t0);
    const bool ok = sum_err <= 1e-9 && limit_err <= 1e-6 && parts.size() == 2 && train_acc >= 0.9 &&
                    perfect.miou_c == 100.0 && perfect.miou_i == 100.0 && secs < 300.0;
    return {ok, fmt("weight-sum err %.1e, coincident-vs-limit err %.1e, %zu-part overfit train acc %.3f, perfect mIoU "
                    "%.1f/%.1f, %.1f s",
                    sum_err, limit_err, parts.size(), train_acc, perfect.miou_c, perfect.miou_i, secs)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome reproducibility() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path base = fs::temp_directory_path() / ("pointbert-accept-" + std::to_string(::getpid()));
    fs::remove_all(base);
    fs::create_directories(base);
    const fs::path cfg_path = base / "small.json";
    {
        std::ofstream f(cfg_path);
        f << R"({
  "preset": "toy",
  "corpus": {"train_per_class": 4, "val_per_class": 2, "test_per_class": 2, "points": 512},
  "dvae": {"steps": 6, "kl_zero_steps": 1, "kl_ramp_steps": 3, "tau_steps": 4, "warmup_steps": 2},
  "pretrain": {"steps": 4, "batch_size": 4, "warmup_steps": 1},
  "finetune": {"epochs": 1, "batch_size": 8},
  "segmentation": {"epochs": 2, "train_items": 2},
  "fewshot": {"way": 3, "shot": 2, "queries": 2, "episodes": 2, "finetune": {"epochs": 1}}
})";
    }
    const std::vector<std::string> commands{"build-corpus", "train-dvae", "pretrain",    "finetune-cls", "finetune-seg",
                                            "fewshot",      "eval",       "reconstruct", "gradcheck"};
    std::vector<std::string> failed_commands;
    for (const char* run : {"a", "b"}) {
        for (const auto& c : commands) {
            std::ostringstream out, err;
            const int code = cli::run({c, "--config", cfg_path.string(), "--seed", "11", "--out", (base / run).string()},
                                      out, err);
            if (code != 0) failed_commands.push_back(std::string(run) + ":" + c + " (" + err.str() + ")");
        }
    }
    std::size_t compared = 0, differing = 0;
    std::string first_diff;
    for (const auto& entry : fs::recursive_directory_iterator(base / "a")) {
        if (!entry.is_regular_file()) continue;
        const auto ext = entry.path().extension().string();
        if (ext != ".csv" && ext != ".ckpt" && ext != ".json" && ext != ".bin" && ext != ".pbcloud") continue;
        const fs::path twin = base / "b" / fs::relative(entry.path(), base / "a");
        ++compared;
        if (!fs::exists(twin) || slurp(entry.path()) != slurp(twin)) {
            ++differing;
            if (first_diff.empty()) first_diff = fs::relative(entry.path(), base / "a").string();
        }
    }
    const double secs = seconds_since(t0);
    fs::remove_all(base);
    std::string detail = fmt("%zu commands twice, %zu artifacts compared, %zu differ", commands.size(), compared,
                             differing);
    if (!first_diff.empty()) detail += " (first: " + first_diff + ")";
    if (!failed_commands.empty()) detail += "; failed: " + failed_commands.front();
    detail += fmt(", %.1f s", secs);
    return {failed_commands.empty() && differing == 0 && compared >= 20, detail};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"geometry oracles", geometry_oracles},
        {"masking contracts", masking_contracts},
        {"dvae sanity", dvae_sanity},
        {"contrastive loss equivalence", contrastive_equivalence},
        {"masked point modeling learnability", mpm_learnability},
        {"transfer ordering", transfer_ordering},
        {"segmentation pipeline", segmentation_pipeline},
        {"reproducibility", reproducibility},
    };
    std::set<std::size_t> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only.insert(std::stoul(argv[++i]));
    }
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && !only.count(i + 1)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%s] %zu. %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
        failures += !o.pass;
    }
    return failures == 0 ? 0 : 1;
}
