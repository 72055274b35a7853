#include "pointbert/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pointbert/error.hpp"

namespace pointbert::pretrain {

MaskStrategy parse_mask_strategy(const std::string& name) {
    if (name == "block") return MaskStrategy::block;
    if (name == "random" || name == "rand") return MaskStrategy::random;
    throw DomainError("unknown mask strategy '" + name + "'");
}

std::string mask_strategy_name(MaskStrategy s) { return s == MaskStrategy::block ? "block" : "random"; }

bool MaskSpec::contains(std::size_t i) const { return std::binary_search(masked.begin(), masked.end(), i); }

std::vector<bool> MaskSpec::flags(std::size_t groups) const {
    std::vector<bool> f(groups, false);
    for (auto i : masked) {
        if (i >= groups) throw ShapeError("MaskSpec: index out of range");
        f[i] = true;
    }
    return f;
}

std::size_t mask_count(std::size_t groups, double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw RatioError("mask ratio must lie in (0, 1)");
    const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(groups)));
    if (count < 1) {
        throw RatioError("mask ratio " + std::to_string(ratio) + " masks no patch of " + std::to_string(groups));
    }
    return count;
}

MaskSpec make_block_mask(std::span<const Vec3> centers, double ratio, std::size_t seed_index) {
    const std::size_t g = centers.size();
    const std::size_t count = mask_count(g, ratio);
    if (seed_index >= g) throw ShapeError("make_block_mask: seed index out of range");
    std::vector<double> d(g);
    for (std::size_t i = 0; i < g; ++i) d[i] = geometry::squared_distance(centers[i], centers[seed_index]);
    std::vector<std::size_t> order(g);
    std::iota(order.begin(), order.end(), 0);
    // The seed sorts first even when another center coincides with it.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (a == seed_index || b == seed_index) return a == seed_index && b != seed_index;
        return d[a] < d[b];
    });
    MaskSpec m;
    m.strategy = MaskStrategy::block;
    m.ratio = ratio;
    m.seed_index = seed_index;
    m.neighbor_count = count - 1;
    m.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(m.masked.begin(), m.masked.end());
    return m;
}

MaskSpec make_block_mask(std::span<const Vec3> centers, double ratio, Rng& rng) {
    if (centers.empty()) throw ShapeError("make_block_mask: no centers");
    return make_block_mask(centers, ratio, rng.randint(centers.size()));
}

MaskSpec make_rand_mask(std::size_t groups, double ratio, Rng& rng) {
    const std::size_t count = mask_count(groups, ratio);
    MaskSpec m;
    m.strategy = MaskStrategy::random;
    m.ratio = ratio;
    m.masked = rng.sample_without_replacement(groups, count);
    std::sort(m.masked.begin(), m.masked.end());
    return m;
}

double MixSpec::fraction_from_a() const {
    if (from_a.empty()) return 1.0;
    return static_cast<double>(std::count(from_a.begin(), from_a.end(), true)) / static_cast<double>(from_a.size());
}

MixResult point_patch_mix(const PatchSet& a, const PatchSet& b, double r_mix, Rng& rng) {
    if (a.groups != b.groups || a.patch_size != b.patch_size) {
        throw ShapeError("point_patch_mix: patch sets differ in g or n");
    }
    if (!(r_mix >= 0.0 && r_mix <= 1.0)) throw RatioError("point_patch_mix: r_mix must lie in [0, 1]");
    const std::size_t g = a.groups, n = a.patch_size;
    const auto take = static_cast<std::size_t>(std::llround(r_mix * static_cast<double>(g)));
    MixResult out;
    out.spec.mix_ratio = r_mix;
    out.spec.from_a.assign(g, false);
    for (auto i : rng.sample_without_replacement(g, take)) out.spec.from_a[i] = true;
    PatchSet& v = out.patches;
    v.groups = g;
    v.patch_size = n;
    v.centers.resize(g);
    v.patches.resize(g * n);
    for (std::size_t i = 0; i < g; ++i) {
        const PatchSet& src = out.spec.from_a[i] ? a : b;
        v.centers[i] = src.centers[i];
        std::copy_n(src.patches.begin() + static_cast<std::ptrdiff_t>(i * n), n,
                    v.patches.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
}

// --- Backbone -------------------------------------------------------------------

void BackboneConfig::validate() const {
    transformer.validate();
    if (embed_hidden1 == 0 || embed_hidden2 == 0 || embed_dim == 0 || pos_hidden == 0) {
        throw ShapeError("backbone: embedding widths must be positive");
    }
}

namespace {

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

Backbone::Backbone(const BackboneConfig& cfg, Rng& rng)
    : config((cfg.validate(), cfg)),
      pointnet(cfg.embed_hidden1, cfg.embed_hidden2, cfg.embed_dim, rng),
      embed_proj(cfg.embed_dim, cfg.transformer.model_dim, rng),
      position(cfg.pos_hidden, cfg.transformer.model_dim, rng),
      cls_token(normal_param({1, cfg.transformer.model_dim}, 0.02, rng)),
      cls_pos(normal_param({1, cfg.transformer.model_dim}, 0.02, rng)),
      encoder(cfg.transformer, rng) {}

EmbeddingBundle Backbone::embed(const PatchSet& patches) const {
    return {embed_proj.forward(pointnet.forward(patches.patches_tensor())), position.forward(patches.centers_tensor())};
}

Tensor Backbone::sequence(const EmbeddingBundle& bundle) const {
    return concat({add(cls_token, cls_pos), add(bundle.tokens, bundle.positions)}, 0);
}

Tensor Backbone::encode(const Tensor& seq, const nn::ForwardContext& ctx, std::vector<Tensor>* layer_outputs) const {
    return encoder.forward(seq, ctx, layer_outputs);
}

Tensor Backbone::global_feature(const Tensor& encoded) {
    const std::size_t rows = encoded.dim(0);
    if (rows < 2) throw ShapeError("global_feature: need a class token and at least one patch");
    const Tensor cls = slice(encoded, 0, 0, 1);
    const Tensor pooled = reshape(reduce(slice(encoded, 0, 1, rows - 1), ReduceKind::max, 0), {1, encoded.dim(1)});
    return concat({cls, pooled}, 1);
}

void Backbone::collect(NamedTensors& out, const std::string& prefix) const {
    pointnet.collect(out, prefix + "embed.");
    embed_proj.collect(out, prefix + "embed_proj.");
    position.collect(out, prefix + "pos.");
    out.emplace_back(prefix + "cls_token", cls_token);
    out.emplace_back(prefix + "cls_pos", cls_pos);
    encoder.collect(out, prefix + "encoder.");
}

Tensor corrupt_embeddings(const Backbone& backbone, const EmbeddingBundle& bundle, const Tensor& mask_token,
                          const MaskSpec& mask) {
    const std::size_t g = bundle.tokens.dim(0);
    if (mask.masked.empty()) return backbone.sequence(bundle);
    const auto flags = mask.flags(g);
    std::vector<std::size_t> rows(g);
    for (std::size_t i = 0; i < g; ++i) rows[i] = flags[i] ? g : i;
    const Tensor tokens = gather_rows(concat({bundle.tokens, mask_token}, 0), rows);
    return backbone.sequence({tokens, bundle.positions});
}

// --- Losses ---------------------------------------------------------------------

Tensor mpm_loss(const Tensor& masked_logits, std::span<const std::size_t> targets) {
    if (masked_logits.rank() != 2 || masked_logits.dim(0) == 0 || targets.empty()) {
        throw RatioError("mpm_loss: empty mask");
    }
    return cross_entropy_logits(masked_logits, targets);
}

namespace {

void check_unit_rows(const Tensor& t, const char* what) {
    const std::size_t rows = t.dim(0), d = t.dim(1);
    const auto v = t.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += v[r * d + j] * v[r * d + j];
        if (std::abs(std::sqrt(s) - 1.0) > 1e-4) {
            throw NormError(std::string("moco_loss: ") + what + " row " + std::to_string(r) + " is not unit norm");
        }
    }
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
    return reshape(reduce(mul(a, b), ReduceKind::sum, 1), {a.dim(0), 1});
}

}  // namespace

Tensor moco_loss(const Tensor& q, const Tensor& k1, const Tensor& k2, const Tensor& bank,
                 std::span<const double> mix_ratios, double temperature) {
    if (!(temperature > 0.0)) throw DomainError("moco_loss: temperature must be positive");
    if (q.rank() != 2 || k1.shape() != q.shape() || k2.shape() != q.shape() || bank.rank() != 2 ||
        bank.dim(1) != q.dim(1)) {
        throw ShapeError("moco_loss: expected q, k1, k2 as [B,d] and bank as [K,d]");
    }
    const std::size_t b = q.dim(0);
    if (mix_ratios.size() != b) throw ShapeError("moco_loss: one mixing ratio per query required");
    check_unit_rows(q, "q");
    check_unit_rows(k1, "k1");
    check_unit_rows(k2, "k2");
    check_unit_rows(bank, "bank");
    const Tensor negatives = matmul(q, transpose(bank.detach()));  // [B,K]
    const double inv_t = 1.0 / temperature;
    const Tensor l1 = scale(concat({row_dot(q, k1), negatives}, 1), inv_t);
    const Tensor l2 = scale(concat({row_dot(q, k2), negatives}, 1), inv_t);
    std::vector<double> weights(2 * b);
    for (std::size_t i = 0; i < b; ++i) {
        if (!(mix_ratios[i] >= 0.0 && mix_ratios[i] <= 1.0)) throw RatioError("moco_loss: r_mix outside [0, 1]");
        weights[i] = mix_ratios[i];
        weights[b + i] = 1.0 - mix_ratios[i];
    }
    // Weighted mean over 2B rows with weights summing to B: mean over queries of r*L1 + (1-r)*L2.
    const std::vector<std::size_t> targets(2 * b, 0);
    return cross_entropy_logits(concat({l1, l2}, 0), targets, weights);
}

// --- Momentum encoder and bank --------------------------------------------------

void momentum_update(const NamedTensors& online, const NamedTensors& shadow, double m) {
    if (!(m >= 0.0 && m <= 1.0)) throw DomainError("momentum_update: momentum must lie in [0, 1]");
    if (online.size() != shadow.size()) throw ShapeError("momentum_update: parameter count mismatch");
    for (std::size_t i = 0; i < online.size(); ++i) {
        if (online[i].second.shape() != shadow[i].second.shape() || online[i].first != shadow[i].first) {
            throw ShapeError("momentum_update: mismatch at " + online[i].first);
        }
        Tensor dst = shadow[i].second;
        auto s = dst.mutable_data();
        const auto o = online[i].second.data();
        for (std::size_t j = 0; j < s.size(); ++j) s[j] = m * s[j] + (1.0 - m) * o[j];
    }
}

MemoryBank::MemoryBank(std::size_t capacity, std::size_t dim, Rng& rng) : capacity_(capacity), dim_(dim) {
    if (capacity == 0 || dim == 0) throw SizeError("MemoryBank: capacity and dim must be positive");
    std::vector<double> v(capacity * dim);
    for (auto& x : v) x = rng.normal();
    entries_ = l2_normalize(Tensor::from({capacity, dim}, std::move(v))).detach();
}

void MemoryBank::enqueue(const Tensor& keys) {
    if (keys.rank() != 2 || keys.dim(1) != dim_) throw ShapeError("MemoryBank::enqueue: expected [b, dim] keys");
    const std::size_t b = keys.dim(0);
    if (b > capacity_) throw SizeError("MemoryBank::enqueue: batch larger than capacity");
    const Tensor unit = l2_normalize(keys.detach());
    auto dst = entries_.mutable_data();
    const auto src = unit.data();
    for (std::size_t r = 0; r < b; ++r) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * dim_), dim_,
                    dst.begin() + static_cast<std::ptrdiff_t>(cursor_ * dim_));
        cursor_ = (cursor_ + 1) % capacity_;
    }
}

void MemoryBank::restore(const Tensor& entries, std::size_t cursor) {
    if (entries.shape() != Shape{capacity_, dim_} || cursor >= capacity_) {
        throw ShapeError("MemoryBank::restore: shape or cursor mismatch");
    }
    entries_ = entries.clone();
    cursor_ = cursor;
}

// --- Model ----------------------------------------------------------------------

void PretrainConfig::validate() const {
    backbone.validate();
    if (groups == 0 || patch_size == 0 || groups > num_points || patch_size > num_points) {
        throw SizeError("pretrain: invalid groups/patch_size for num_points");
    }
    if (vocab_size < 2 || proj_dim == 0) throw ShapeError("pretrain: vocab_size and proj_dim must be positive");
    if (batch_size == 0) throw SizeError("pretrain: batch size must be positive");
    if (batch_size > bank_size) throw SizeError("pretrain: batch size exceeds memory bank capacity");
    if (!(mask_ratio_min > 0.0 && mask_ratio_min <= mask_ratio_max && mask_ratio_max < 1.0)) {
        throw RatioError("pretrain: mask ratio range must satisfy 0 < min <= max < 1");
    }
    mask_count(groups, mask_ratio_min);
    if (!(mix_ratio_min >= 0.0 && mix_ratio_min <= mix_ratio_max && mix_ratio_max <= 1.0)) {
        throw RatioError("pretrain: mix ratio range must lie in [0, 1]");
    }
    if (!(contrast_temperature > 0.0)) throw DomainError("pretrain: contrast temperature must be positive");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw DomainError("pretrain: momentum must lie in [0, 1]");
    if (lambda < 0.0) throw DomainError("pretrain: lambda must be non-negative");
}

PointBert::PointBert(const PretrainConfig& cfg, Rng& rng)
    : backbone(cfg.backbone, rng),
      projection({2 * cfg.backbone.transformer.model_dim, 2 * cfg.backbone.transformer.model_dim, cfg.proj_dim},
                 nn::Activation::relu, rng),
      mpm_head(cfg.backbone.transformer.model_dim, cfg.vocab_size, rng, nn::InitKind::normal_002),
      mask_token(normal_param({1, cfg.backbone.transformer.model_dim}, 0.02, rng)) {}

Tensor PointBert::project(const Tensor& encoded) const {
    return l2_normalize(projection.forward(Backbone::global_feature(encoded)));
}

Tensor PointBert::token_logits(const Tensor& encoded) const {
    return mpm_head.forward(slice(encoded, 0, 1, encoded.dim(0) - 1));
}

void PointBert::collect(NamedTensors& out, const std::string& prefix) const {
    backbone.collect(out, prefix + "backbone.");
    projection.collect(out, prefix + "projection.");
    mpm_head.collect(out, prefix + "mpm_head.");
    out.emplace_back(prefix + "mask_token", mask_token);
}

NamedTensors PointBert::contrast_parameters() const {
    NamedTensors out;
    backbone.collect(out, "backbone.");
    projection.collect(out, "projection.");
    return out;
}

MomentumEncoder::MomentumEncoder(const PretrainConfig& cfg, const PointBert& online) {
    Rng scratch(0);
    PointBert shell(cfg, scratch);
    backbone = shell.backbone;
    projection = shell.projection;
    const auto mine = named_parameters();
    nn::copy_parameters(mine, online.contrast_parameters());
    for (const auto& [name, t] : mine) {
        Tensor p = t;
        p.set_requires_grad(false);
    }
}

Tensor MomentumEncoder::keys(const PatchSet& patches) const {
    NoGradGuard no_grad;
    const Tensor encoded = backbone.encode(backbone.sequence(backbone.embed(patches)), nn::ForwardContext{});
    return l2_normalize(projection.forward(Backbone::global_feature(encoded)));
}

void MomentumEncoder::collect(NamedTensors& out, const std::string& prefix) const {
    backbone.collect(out, prefix + "backbone.");
    projection.collect(out, prefix + "projection.");
}

// --- Trainer --------------------------------------------------------------------

PretrainStreams PretrainStreams::from_seed(std::uint64_t seed) {
    return {Rng::substream(seed, "corpus"), Rng::substream(seed, "mask"), Rng::substream(seed, "mix"),
            Rng::substream(seed, "dropout")};
}

Pretrainer::Pretrainer(const PretrainConfig& cfg, const dvae::Dvae& tok, Rng& init_rng)
    : config((cfg.validate(), cfg)),
      tokenizer(&tok),
      online(cfg, init_rng),
      momentum(cfg, online),
      bank(cfg.bank_size, cfg.proj_dim, init_rng),
      optimizer(online.parameters(), cfg.optimizer) {
    if (tok.config.vocab_size != cfg.vocab_size || tok.config.groups != cfg.groups ||
        tok.config.patch_size != cfg.patch_size) {
        throw ShapeError("Pretrainer: tokenizer geometry or vocabulary differs from the pretraining config");
    }
    if (cfg.share_embedder) {
        nn::copy_parameters(online.backbone.pointnet.named_parameters(), tok.embedder.named_parameters());
        nn::copy_parameters(momentum.backbone.pointnet.named_parameters(), tok.embedder.named_parameters());
    }
}

PretrainSample Pretrainer::prepare(const PointCloud& cloud) const {
    PretrainSample s;
    s.patches = geometry::group_patches(cloud, config.groups, config.patch_size);
    s.tokens = tokenizer->hard_tokens(s.patches);
    return s;
}

PretrainBatch Pretrainer::make_batch(const std::vector<PointCloud>& corpus, PretrainStreams& streams) const {
    if (corpus.empty()) throw SizeError("pretrain: empty corpus");
    PretrainBatch batch;
    const std::size_t b = config.batch_size;
    for (std::size_t i = 0; i < b; ++i) {
        const auto& source = corpus[streams.sampling.randint(corpus.size())];
        PointCloud cloud = dvae::random_subsample(source, config.num_points, streams.sampling);
        if (config.augment) cloud = datasets::augment_scale_translate(cloud, streams.sampling);
        batch.real.push_back(prepare(cloud));
    }
    if (!config.mixing) return batch;
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t partner = b == 1 ? 0 : (i + 1 + streams.mix.randint(b - 1)) % b;
        const double r = streams.mix.uniform(config.mix_ratio_min, config.mix_ratio_max);
        auto mixed = point_patch_mix(batch.real[i].patches, batch.real[partner].patches, r, streams.mix);
        mixed.spec.partner_index = partner;
        PretrainSample v;
        v.patches = std::move(mixed.patches);
        v.tokens.resize(config.groups);
        for (std::size_t p = 0; p < config.groups; ++p) {
            v.tokens[p] = mixed.spec.from_a[p] ? batch.real[i].tokens[p] : batch.real[partner].tokens[p];
        }
        batch.virtual_samples.push_back(std::move(v));
        batch.mixes.push_back(std::move(mixed.spec));
    }
    return batch;
}

StepLosses Pretrainer::losses(const PretrainBatch& batch, PretrainStreams& streams) const {
    const std::size_t b = batch.real.size();
    const nn::ForwardContext ctx{true, &streams.dropout};
    std::vector<Tensor> masked_logits, queries;
    std::vector<std::size_t> targets;
    StepLosses out;

    auto run = [&](const PretrainSample& s, bool want_query) {
        const double ratio = streams.mask.uniform(config.mask_ratio_min, config.mask_ratio_max);
        const MaskSpec mask = config.mask_strategy == MaskStrategy::block
                                  ? make_block_mask(s.patches.centers, ratio, streams.mask)
                                  : make_rand_mask(config.groups, ratio, streams.mask);
        const Tensor encoded =
            online.backbone.encode(corrupt_embeddings(online.backbone, online.backbone.embed(s.patches),
                                                      online.mask_token, mask),
                                   ctx);
        const Tensor rows = gather_rows(online.token_logits(encoded), mask.masked);
        masked_logits.push_back(rows);
        const auto d = rows.data();
        const std::size_t n = rows.dim(1);
        for (std::size_t r = 0; r < mask.masked.size(); ++r) {
            const std::size_t target = s.tokens[mask.masked[r]];
            targets.push_back(target);
            const auto best = std::max_element(d.begin() + static_cast<std::ptrdiff_t>(r * n),
                                               d.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
            if (static_cast<std::size_t>(best - (d.begin() + static_cast<std::ptrdiff_t>(r * n))) == target) {
                ++out.correct;
            }
        }
        if (want_query) queries.push_back(online.project(encoded));
    };

    for (const auto& s : batch.real) run(s, !config.mixing);
    for (const auto& s : batch.virtual_samples) run(s, true);
    out.masked = targets.size();
    out.mpm = mpm_loss(concat(masked_logits, 0), targets);

    std::vector<Tensor> keys;
    for (const auto& s : batch.real) keys.push_back(momentum.keys(s.patches));
    out.keys = concat(keys, 0);

    std::vector<std::size_t> first(b), second(b);
    std::vector<double> ratios(b, 1.0);
    for (std::size_t i = 0; i < b; ++i) {
        first[i] = i;
        second[i] = config.mixing ? batch.mixes[i].partner_index : i;
        if (config.mixing) ratios[i] = batch.mixes[i].fraction_from_a();
    }
    out.moco = moco_loss(concat(queries, 0), gather_rows(out.keys, first), gather_rows(out.keys, second),
                         bank.entries(), ratios, config.contrast_temperature);
    out.total = add(out.mpm, scale(out.moco, config.lambda));
    return out;
}

StepLog Pretrainer::step(const std::vector<PointCloud>& corpus, PretrainStreams& streams) {
    const PretrainBatch batch = make_batch(corpus, streams);
    optimizer.zero_grad();
    const StepLosses l = losses(batch, streams);
    StepLog log;
    log.step = steps_done;
    log.lr = lr_at(config.lr, steps_done);
    log.mpm_loss = l.mpm.item();
    log.moco_loss = l.moco.item();
    log.masked_acc = l.masked ? static_cast<double>(l.correct) / static_cast<double>(l.masked) : 0.0;
    if (!std::isfinite(l.total.item())) {
        throw NumericsError("pretrain: non-finite loss at step " + std::to_string(steps_done));
    }
    l.total.backward();
    optimizer.step(log.lr);
    momentum_update(online.contrast_parameters(), momentum.named_parameters(), config.momentum);
    bank.enqueue(l.keys);
    ++steps_done;
    return log;
}

double Pretrainer::masked_accuracy(const std::vector<PointCloud>& clouds, std::uint64_t seed) const {
    NoGradGuard no_grad;
    Rng rng = Rng::substream(seed, "eval-mask");
    std::size_t total = 0, correct = 0;
    for (const auto& cloud : clouds) {
        const PretrainSample s = prepare(datasets::prefix_subsample(cloud, config.num_points));
        const double ratio = rng.uniform(config.mask_ratio_min, config.mask_ratio_max);
        const MaskSpec mask = config.mask_strategy == MaskStrategy::block
                                  ? make_block_mask(s.patches.centers, ratio, rng)
                                  : make_rand_mask(config.groups, ratio, rng);
        const Tensor encoded = online.backbone.encode(
            corrupt_embeddings(online.backbone, online.backbone.embed(s.patches), online.mask_token, mask),
            nn::ForwardContext{});
        const Tensor logits = online.token_logits(encoded);
        const std::size_t n = logits.dim(1);
        const auto d = logits.data();
        for (auto i : mask.masked) {
            const auto row = d.begin() + static_cast<std::ptrdiff_t>(i * n);
            const auto best = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(n)) - row);
            correct += best == s.tokens[i];
            ++total;
        }
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

namespace {

std::vector<std::string> names_of(const NamedTensors& t) {
    std::vector<std::string> out;
    for (const auto& [n, x] : t) out.push_back(n);
    return out;
}

}  // namespace

Checkpoint Pretrainer::checkpoint(const PretrainStreams* streams) const {
    Checkpoint ck;
    const auto on = online.named_parameters("online.");
    ck.tensors = on;
    for (auto& t : momentum.named_parameters("momentum.")) ck.tensors.push_back(t);
    ck.tensors.emplace_back("bank.entries", bank.entries());
    for (auto& t : optimizer.export_state(names_of(on))) ck.tensors.push_back(t);
    ck.metadata["kind"] = "pretrain";
    ck.metadata["step"] = steps_done;
    ck.metadata["optimizer_step"] = optimizer.state().step;
    ck.metadata["bank_cursor"] = bank.cursor();
    if (streams) {
        ck.metadata["rng"] = {{"sampling", streams->sampling.state()},
                              {"mask", streams->mask.state()},
                              {"mix", streams->mix.state()},
                              {"dropout", streams->dropout.state()}};
    }
    return ck;
}

void Pretrainer::restore(const Checkpoint& ck, PretrainStreams* streams) {
    const auto on = online.named_parameters("online.");
    load_into(on, ck, true);
    load_into(momentum.named_parameters("momentum."), ck, true);
    const Tensor* entries = ck.find("bank.entries");
    if (!entries) throw FormatError("pretrain checkpoint: missing bank.entries");
    bank.restore(*entries, ck.metadata.at("bank_cursor").get<std::size_t>());
    optimizer.import_state(ck.tensors, names_of(on), ck.metadata.at("optimizer_step").get<std::uint64_t>());
    steps_done = ck.metadata.at("step").get<std::uint64_t>();
    if (streams && ck.metadata.contains("rng")) {
        const auto& r = ck.metadata["rng"];
        streams->sampling.set_state(r.at("sampling"));
        streams->mask.set_state(r.at("mask"));
        streams->mix.set_state(r.at("mix"));
        streams->dropout.set_state(r.at("dropout"));
    }
}

std::vector<StepLog> run_pretraining(Pretrainer& trainer, const std::vector<PointCloud>& corpus,
                                     PretrainStreams& streams, const std::function<void(const StepLog&)>& on_step) {
    std::vector<StepLog> logs;
    while (trainer.steps_done < trainer.config.steps) {
        logs.push_back(trainer.step(corpus, streams));
        if (on_step) on_step(logs.back());
    }
    return logs;
}

}  // namespace pointbert::pretrain
