#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pointbert/geometry.hpp"
#include "pointbert/nn.hpp"

namespace pointbert::dvae {

struct DvaeConfig {
    std::size_t num_points = 256;  // points drawn per cloud before grouping
    std::size_t groups = 16;
    std::size_t patch_size = 16;
    std::size_t embed_hidden1 = 32;
    std::size_t embed_hidden2 = 64;
    std::size_t embed_dim = 64;
    std::size_t vocab_size = 128;
    std::size_t code_dim = 64;
    std::size_t graph_k = 4;
    std::size_t graph_in = 32;
    std::vector<std::size_t> graph_channels{32, 64, 64, 64};
    std::size_t decoder_feature = 64;
    std::size_t decoder_hidden = 128;
    std::size_t coarse_points = 8;

    void validate() const;
};

/// The learned vocabulary: N x d_code embedding rows.
class Codebook : public nn::Module {
public:
    Codebook() = default;
    Codebook(std::size_t vocab, std::size_t dim, Rng& rng);
    void collect(NamedTensors& out, const std::string& prefix) const override;

    std::size_t size() const { return embeddings.dim(0); }
    Tensor embeddings;
};

/// Edge-conv stack over patch embeddings producing per-patch vocabulary logits.
class Tokenizer : public nn::Module {
public:
    Tokenizer() = default;
    Tokenizer(const DvaeConfig& cfg, Rng& rng);
    /// [g, embed_dim] -> [g, N]
    Tensor logits(const Tensor& patch_embeddings) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    nn::Linear input;
    std::vector<nn::EdgeConv> convs;
    nn::Linear head;
};

struct Reconstruction {
    Tensor coarse;  // [g, n_c, 3], absolute coordinates
    Tensor fine;    // [g, n, 3], absolute coordinates
};

/// Edge-conv stack over token embeddings, then a coarse MLP and a folding
/// layer; outputs are translated by the patch centers.
class Decoder : public nn::Module {
public:
    Decoder() = default;
    Decoder(const DvaeConfig& cfg, Rng& rng);
    Reconstruction forward(const Tensor& token_embeddings, const Tensor& centers) const;
    void collect(NamedTensors& out, const std::string& prefix) const override;

    nn::Linear input;
    std::vector<nn::EdgeConv> convs;
    nn::Linear merge;
    nn::Mlp coarse_mlp;
    nn::FoldingLayer folding;
    std::size_t coarse_points = 8;
};

enum class TokenizeMode { soft, hard };

struct TokenSequence {
    std::vector<std::size_t> tokens;  // g ids in [0, N)
    Tensor logits;                    // [g, N]
    Tensor soft_assignments;          // [g, N] in soft mode, undefined in hard mode
    Tensor embeddings;                // [g, d_code]
};

/// Soft mode relaxes with Gumbel-softmax (zero noise when `rng` is null) and
/// mixes codebook rows; hard mode takes the argmax row.
TokenSequence tokenize(const Tensor& logits, const Codebook& codebook, double temperature, TokenizeMode mode,
                       Rng* rng);

/// Mean over rows of KL(q || uniform) = sum_j q_j log q_j + log N.
Tensor kl_to_uniform(const Tensor& soft_assignments);

struct LossTerms {
    Tensor total;
    double chamfer_fine = 0.0;
    double chamfer_coarse = 0.0;
    double kl = 0.0;
};

/// Chamfer(fine) + Chamfer(coarse) averaged over patches, plus alpha * KL.
/// `posterior` may be undefined when alpha == 0.
LossTerms dvae_loss(const Tensor& coarse, const Tensor& fine, const Tensor& ground_truth, const Tensor& posterior,
                    double alpha);

/// KL weight: zero for `kl_zero_steps`, then a cosine ramp to `kl_max` over
/// `kl_ramp_steps`. Temperature: cosine decay from tau_start to tau_end over
/// `tau_steps`. Both clamp at their endpoints.
struct DvaeSchedules {
    std::uint64_t kl_zero_steps = 10000;
    std::uint64_t kl_ramp_steps = 100000;
    double kl_max = 0.1;
    double tau_start = 1.0;
    double tau_end = 0.0625;
    std::uint64_t tau_steps = 100000;
};

struct ScheduleValue {
    double alpha = 0.0;
    double tau = 1.0;
};

ScheduleValue schedule_at(const DvaeSchedules& schedules, std::uint64_t step);

class Dvae : public nn::Module {
public:
    Dvae() = default;
    Dvae(const DvaeConfig& cfg, Rng& rng);

    /// [g, embed_dim] patch embeddings.
    Tensor embed(const geometry::PatchSet& patches) const;
    Tensor logits(const geometry::PatchSet& patches) const { return tokenizer.logits(embed(patches)); }
    /// Frozen tokenizer path (no graph): argmax token ids.
    std::vector<std::size_t> hard_tokens(const geometry::PatchSet& patches) const;
    Reconstruction decode(const Tensor& token_embeddings, const Tensor& centers) const {
        return decoder.forward(token_embeddings, centers);
    }
    void collect(NamedTensors& out, const std::string& prefix) const override;

    DvaeConfig config;
    nn::MiniPointNet embedder;
    Tokenizer tokenizer;
    Codebook codebook;
    Decoder decoder;
};

struct DvaeTrainConfig {
    std::uint64_t steps = 300;
    std::size_t batch_size = 8;
    LrSchedule lr{2e-3, 30, 300, 0.0};
    AdamWOptions optimizer{2e-3, 0.9, 0.999, 1e-8, 5e-4, false};
    DvaeSchedules schedules{20, 200, 0.1, 1.0, 0.0625, 200};
    bool fps_random_start = false;
};

struct DvaeStepLog {
    std::uint64_t step = 0;
    double lr = 0.0;
    double alpha = 0.0;
    double tau = 0.0;
    double chamfer_fine = 0.0;
    double chamfer_coarse = 0.0;
    double kl = 0.0;
    std::size_t tokens_used = 0;
};

/// Random subset of `count` points (all points if the cloud is smaller).
geometry::PointCloud random_subsample(const geometry::PointCloud& cloud, std::size_t count, Rng& rng);

struct DvaeStreams {
    Rng sampling;
    Rng gumbel;
};

/// group -> embed -> soft tokenize -> decode -> loss -> AdamW, once per step.
/// Throws NumericsError on a non-finite loss; parameters then still hold the
/// last good state.
std::vector<DvaeStepLog> train_dvae(Dvae& model, const std::vector<geometry::PointCloud>& corpus,
                                    const DvaeTrainConfig& config, DvaeStreams& streams,
                                    const std::function<void(const DvaeStepLog&)>& on_step = {});

/// Hard-token histogram over `clouds` (length N).
std::vector<std::size_t> token_histogram(const Dvae& model, const std::vector<geometry::PointCloud>& clouds);

}  // namespace pointbert::dvae
