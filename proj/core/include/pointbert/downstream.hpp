#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "pointbert/checkpoint.hpp"
#include "pointbert/datasets.hpp"
#include "pointbert/pretrain.hpp"

namespace pointbert::downstream {

using datasets::LabeledCloud;
using geometry::PatchSet;
using geometry::PointCloud;
using geometry::Vec3;
using pretrain::Backbone;
using pretrain::BackboneConfig;

// ---------------------------------------------------------------------------
// Classification

struct ClassifierConfig {
    BackboneConfig backbone;
    std::size_t num_points = 256;
    std::size_t groups = 16;
    std::size_t patch_size = 16;
    std::size_t num_classes = 6;
    std::size_t head_hidden = 128;
    double head_dropout = 0.5;

    void validate() const;
};

class ClsHead : public nn::Module {
public:
    ClsHead() = default;
    ClsHead(std::size_t model_dim, std::size_t hidden, std::size_t classes, double dropout, Rng& rng);

    Tensor forward(const Tensor& global, const nn::ForwardContext& ctx) const;  // [1,2d] -> [1,C]
    void collect(NamedTensors& out, const std::string& prefix) const override;

    nn::Linear fc1, fc2;
    double dropout = 0.5;
};

class Classifier : public nn::Module {
public:
    Classifier() = default;
    Classifier(const ClassifierConfig& cfg, Rng& rng);

    PatchSet patches_for(const PointCloud& cloud) const;
    Tensor forward(const PatchSet& patches, const nn::ForwardContext& ctx) const;  // [1, C]
    std::size_t predict(const PointCloud& cloud) const;

    void collect(NamedTensors& out, const std::string& prefix) const override;

    ClassifierConfig config;
    Backbone backbone;
    ClsHead head;
};

// Copies "online.backbone.*" tensors from a pretraining checkpoint; returns the count.
std::size_t load_pretrained_backbone(Backbone& backbone, const Checkpoint& ckpt);

struct FinetuneConfig {
    std::size_t epochs = 8;
    std::size_t batch_size = 8;
    double lr = 1e-3;
    std::size_t warmup_epochs = 1;
    double weight_decay = 0.05;
    bool augment = true;
    bool freeze_backbone = false;  // linear-probe mode
};

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct FinetuneStreams {
    Rng sampling, dropout;
    static FinetuneStreams from_seed(std::uint64_t seed);
};

double evaluate_accuracy(const Classifier& model, const std::vector<LabeledCloud>& items);

// Epoch 0 reports the untrained model; epochs 1..E follow each training pass.
std::vector<EpochLog> finetune_classification(Classifier& model, const std::vector<LabeledCloud>& train,
                                              const std::vector<LabeledCloud>& val, const FinetuneConfig& config,
                                              FinetuneStreams& streams,
                                              const std::function<void(const EpochLog&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// Segmentation

struct IdwNeighbours {
    std::vector<std::size_t> index;  // [n, k]
    std::vector<double> weight;      // [n, k], rows sum to 1
    std::size_t k = 0;
};

// Inverse-distance weights over the k nearest sparse points; a query closer than 1e-9
// to a source takes that source's feature exactly.
IdwNeighbours idw_neighbours(std::span<const Vec3> dense, std::span<const Vec3> sparse, std::size_t k);
Tensor interpolate_features(std::span<const Vec3> dense, std::span<const Vec3> sparse, const Tensor& features,
                            std::size_t k);

class UpsampleLayer : public nn::Module {
public:
    UpsampleLayer() = default;
    UpsampleLayer(std::size_t in_dim, std::size_t out_dim, std::size_t k, Rng& rng);

    // MLP(concat(idw(features), dense coordinates))
    Tensor forward(std::span<const Vec3> dense, std::span<const Vec3> sparse, const Tensor& features) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    nn::Mlp mlp;
    std::size_t k = 3;
};

Tensor upsample_features(std::span<const Vec3> dense, std::span<const Vec3> sparse, const Tensor& features,
                         const UpsampleLayer& layer);

class PropagationStage : public nn::Module {
public:
    PropagationStage() = default;
    PropagationStage(std::size_t dim, std::size_t k, Rng& rng);

    // Each fine point aggregates its k nearest coarse points with an edge convolution.
    Tensor forward(std::span<const Vec3> fine_points, const Tensor& fine_features,
                   std::span<const Vec3> coarse_points, const Tensor& coarse_features) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    nn::EdgeConv conv;
};

struct SegLevels {
    std::vector<std::size_t> layers{1, 2, 4};       // 1-based backbone layers, shallow to deep
    std::vector<std::size_t> resolutions{128, 64};  // points per non-final level

    void validate(std::size_t depth, std::size_t groups, std::size_t num_points) const;
};

struct SegConfig {
    BackboneConfig backbone;
    SegLevels levels;
    std::size_t num_points = 512;
    std::size_t groups = 32;
    std::size_t patch_size = 16;
    std::size_t feature_dim = 32;
    std::size_t upsample_k = 3;
    std::size_t edge_k = 4;
    std::size_t num_parts = 13;

    void validate() const;
};

struct LevelInputs {
    std::vector<std::vector<Vec3>> points;  // shallow to deep; last entry is the patch centers
    std::vector<Tensor> features;           // backbone features at the patch centers, same order
};

// Coarse-to-fine propagation ending at `targets`; returns [targets, feature_dim].
Tensor propagate_features(const std::vector<UpsampleLayer>& upsample, const std::vector<PropagationStage>& stages,
                          const nn::Linear& deep_proj, const LevelInputs& levels, std::span<const Vec3> targets,
                          std::size_t final_k);

class SegmentationModel : public nn::Module {
public:
    SegmentationModel() = default;
    SegmentationModel(const SegConfig& cfg, Rng& rng);

    Tensor forward(const PointCloud& cloud, const nn::ForwardContext& ctx) const;  // [points, parts]
    void collect(NamedTensors& out, const std::string& prefix) const override;

    SegConfig config;
    Backbone backbone;
    std::vector<UpsampleLayer> upsample;
    std::vector<PropagationStage> stages;  // one per non-final level plus the full-resolution stage
    nn::Linear deep_proj;
    nn::Mlp head;
};

// Argmax restricted to the allowed part ids (all parts when empty).
std::vector<std::uint8_t> predict_parts(const Tensor& logits, const std::vector<std::uint8_t>& allowed = {});

struct SegTrainConfig {
    std::size_t epochs = 60;
    double lr = 2e-3;
    std::size_t warmup_epochs = 2;
    double weight_decay = 0.0;
};

struct SegEpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    double point_acc = 0.0;
};

std::vector<SegEpochLog> train_segmentation(SegmentationModel& model, const std::vector<LabeledCloud>& items,
                                            const SegTrainConfig& config, Rng& dropout_rng,
                                            const std::function<void(const SegEpochLog&)>& on_epoch = {});

double point_accuracy(const SegmentationModel& model, const std::vector<LabeledCloud>& items);

struct MiouResult {
    double miou_c = 0.0;  // percent
    double miou_i = 0.0;  // percent
    std::map<std::size_t, double> per_category;
    std::vector<double> per_instance;
};

MiouResult miou(const std::vector<std::vector<std::uint8_t>>& predictions,
                const std::vector<std::vector<std::uint8_t>>& labels, const std::vector<std::size_t>& classes,
                const std::map<std::size_t, std::vector<std::uint8_t>>& taxonomy);

// ---------------------------------------------------------------------------
// Few-shot

struct Episode {
    std::vector<std::size_t> classes;
    std::vector<std::size_t> support;  // item indices, grouped by class
    std::vector<std::size_t> query;
};

Episode sample_episode(const std::vector<LabeledCloud>& items, std::size_t way, std::size_t shot,
                       std::size_t queries, Rng& rng);

struct FewShotConfig {
    std::size_t way = 5;
    std::size_t shot = 10;
    std::size_t queries = 20;
    std::size_t episodes = 10;
    FinetuneConfig finetune;
};

struct FewShotResult {
    double mean = 0.0;  // percent
    double stddev = 0.0;
    std::vector<double> accuracies;
    std::vector<Episode> episodes;
};

FewShotResult fewshot_eval(const std::vector<LabeledCloud>& items, const FewShotConfig& config,
                           const ClassifierConfig& model_config, const Checkpoint* pretrained, std::uint64_t seed,
                           const std::function<void(std::size_t, double)>& on_episode = {});

}  // namespace pointbert::downstream
