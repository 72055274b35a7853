#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pointbert/checkpoint.hpp"
#include "pointbert/datasets.hpp"
#include "pointbert/dvae.hpp"
#include "pointbert/geometry.hpp"
#include "pointbert/nn.hpp"

namespace pointbert::pretrain {

using geometry::PatchSet;
using geometry::PointCloud;
using geometry::Vec3;

// ---------------------------------------------------------------------------
// Masking

enum class MaskStrategy { block, random };
MaskStrategy parse_mask_strategy(const std::string& name);
std::string mask_strategy_name(MaskStrategy s);

struct MaskSpec {
    std::vector<std::size_t> masked;  // sorted ascending
    MaskStrategy strategy = MaskStrategy::block;
    double ratio = 0.0;
    std::optional<std::size_t> seed_index;
    std::optional<std::size_t> neighbor_count;

    bool contains(std::size_t i) const;
    std::vector<bool> flags(std::size_t groups) const;
};

// floor(r * g); RatioError when the ratio is outside (0, 1) or the count is zero.
std::size_t mask_count(std::size_t groups, double ratio);

MaskSpec make_block_mask(std::span<const Vec3> centers, double ratio, std::size_t seed_index);
MaskSpec make_block_mask(std::span<const Vec3> centers, double ratio, Rng& rng);
MaskSpec make_rand_mask(std::size_t groups, double ratio, Rng& rng);

// ---------------------------------------------------------------------------
// Point patch mixing

struct MixSpec {
    std::size_t partner_index = 0;
    double mix_ratio = 1.0;
    std::vector<bool> from_a;  // per patch

    double fraction_from_a() const;
};

struct MixResult {
    PatchSet patches;
    MixSpec spec;
};

// round(r_mix * g) patches are taken from A (chosen at random), the rest from B.
MixResult point_patch_mix(const PatchSet& a, const PatchSet& b, double r_mix, Rng& rng);

// ---------------------------------------------------------------------------
// Backbone

struct BackboneConfig {
    nn::TransformerConfig transformer;
    std::size_t embed_hidden1 = 32;
    std::size_t embed_hidden2 = 64;
    std::size_t embed_dim = 64;
    std::size_t pos_hidden = 64;

    void validate() const;
};

struct EmbeddingBundle {
    Tensor tokens;     // [g, d] point embeddings
    Tensor positions;  // [g, d]
};

class Backbone : public nn::Module {
public:
    Backbone() = default;
    Backbone(const BackboneConfig& cfg, Rng& rng);

    EmbeddingBundle embed(const PatchSet& patches) const;
    // [g+1, d]: class token row followed by f_i + pos_i.
    Tensor sequence(const EmbeddingBundle& bundle) const;
    Tensor encode(const Tensor& sequence, const nn::ForwardContext& ctx,
                  std::vector<Tensor>* layer_outputs = nullptr) const;
    // concat(class-token output, max over patch outputs) -> [1, 2d]
    static Tensor global_feature(const Tensor& encoded);

    std::size_t dim() const { return config.transformer.model_dim; }
    void collect(NamedTensors& out, const std::string& prefix) const override;

    BackboneConfig config;
    nn::MiniPointNet pointnet;
    nn::Linear embed_proj;
    nn::PositionalEmbed position;
    Tensor cls_token;  // [1, d]
    Tensor cls_pos;    // [1, d]
    nn::TransformerEncoder encoder;
};

// [g+1, d]: rows of masked patches replaced by E[M] + pos_i, class token prepended.
Tensor corrupt_embeddings(const Backbone& backbone, const EmbeddingBundle& bundle, const Tensor& mask_token,
                          const MaskSpec& mask);

// ---------------------------------------------------------------------------
// Losses

Tensor mpm_loss(const Tensor& masked_logits, std::span<const std::size_t> targets);

// Rows of q, k1, k2 are unit vectors; bank is [K, dp]. mix_ratios has one entry per row.
Tensor moco_loss(const Tensor& q, const Tensor& k1, const Tensor& k2, const Tensor& bank,
                 std::span<const double> mix_ratios, double temperature);

// ---------------------------------------------------------------------------
// Momentum encoder and memory bank

void momentum_update(const NamedTensors& online, const NamedTensors& shadow, double momentum);

class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(std::size_t capacity, std::size_t dim, Rng& rng);

    void enqueue(const Tensor& keys);  // [b, dim]
    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return dim_; }
    std::size_t cursor() const { return cursor_; }
    const Tensor& entries() const { return entries_; }

    void restore(const Tensor& entries, std::size_t cursor);

private:
    std::size_t capacity_ = 0, dim_ = 0, cursor_ = 0;
    Tensor entries_;
};

// ---------------------------------------------------------------------------
// Model and trainer

struct PretrainConfig {
    BackboneConfig backbone;
    std::size_t num_points = 256;
    std::size_t groups = 16;
    std::size_t patch_size = 16;
    std::size_t vocab_size = 128;
    std::size_t proj_dim = 128;

    std::uint64_t steps = 200;
    std::size_t batch_size = 8;
    LrSchedule lr{5e-4, 20, 200, 1e-6};
    AdamWOptions optimizer{5e-4, 0.9, 0.999, 1e-8, 0.05, false};

    double lambda = 1.0;
    MaskStrategy mask_strategy = MaskStrategy::block;
    double mask_ratio_min = 0.25;
    double mask_ratio_max = 0.45;
    bool mixing = true;
    double mix_ratio_min = 0.25;
    double mix_ratio_max = 0.75;
    std::size_t bank_size = 256;
    double contrast_temperature = 0.07;
    double momentum = 0.999;
    bool augment = true;
    bool share_embedder = false;

    void validate() const;
};

class PointBert : public nn::Module {
public:
    PointBert() = default;
    PointBert(const PretrainConfig& cfg, Rng& rng);

    // [1, proj_dim], unit norm.
    Tensor project(const Tensor& encoded) const;
    // [g, N] token logits for the patch rows.
    Tensor token_logits(const Tensor& encoded) const;

    void collect(NamedTensors& out, const std::string& prefix) const override;
    // Subset mirrored by the momentum encoder.
    NamedTensors contrast_parameters() const;

    Backbone backbone;
    nn::Mlp projection;
    nn::Linear mpm_head;
    Tensor mask_token;  // [1, d]
};

class MomentumEncoder : public nn::Module {
public:
    MomentumEncoder() = default;
    MomentumEncoder(const PretrainConfig& cfg, const PointBert& online);

    Tensor keys(const PatchSet& patches) const;  // [1, proj_dim], no graph
    void collect(NamedTensors& out, const std::string& prefix) const override;

    Backbone backbone;
    nn::Mlp projection;
};

struct PretrainStreams {
    Rng sampling, mask, mix, dropout;
    static PretrainStreams from_seed(std::uint64_t seed);
};

struct PretrainSample {
    PatchSet patches;
    std::vector<std::size_t> tokens;
};

struct PretrainBatch {
    std::vector<PretrainSample> real;
    std::vector<PretrainSample> virtual_samples;
    std::vector<MixSpec> mixes;  // one per virtual sample; partner indexes into `real`
};

struct StepLosses {
    Tensor total, mpm, moco;
    Tensor keys;  // [B, proj_dim] momentum keys of the originals
    std::size_t masked = 0, correct = 0;
};

struct StepLog {
    std::uint64_t step = 0;
    double lr = 0.0;
    double mpm_loss = 0.0;
    double moco_loss = 0.0;
    double masked_acc = 0.0;
};

class Pretrainer {
public:
    Pretrainer(const PretrainConfig& cfg, const dvae::Dvae& tokenizer, Rng& init_rng);

    PretrainBatch make_batch(const std::vector<PointCloud>& corpus, PretrainStreams& streams) const;
    StepLosses losses(const PretrainBatch& batch, PretrainStreams& streams) const;
    StepLog step(const std::vector<PointCloud>& corpus, PretrainStreams& streams);

    // Fraction of masked patches whose token is predicted exactly.
    double masked_accuracy(const std::vector<PointCloud>& clouds, std::uint64_t seed) const;

    Checkpoint checkpoint(const PretrainStreams* streams = nullptr) const;
    void restore(const Checkpoint& ckpt, PretrainStreams* streams = nullptr);

    PretrainConfig config;
    const dvae::Dvae* tokenizer;
    PointBert online;
    MomentumEncoder momentum;
    MemoryBank bank;
    AdamW optimizer;
    std::uint64_t steps_done = 0;

private:
    PretrainSample prepare(const PointCloud& cloud) const;
};

std::vector<StepLog> run_pretraining(Pretrainer& trainer, const std::vector<PointCloud>& corpus,
                                     PretrainStreams& streams,
                                     const std::function<void(const StepLog&)>& on_step = {});

}  // namespace pointbert::pretrain
