#include "pointbert/dvae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pointbert/error.hpp"

namespace pointbert::dvae {

using geometry::PatchSet;
using geometry::PointCloud;

void DvaeConfig::validate() const {
    if (vocab_size < 2) throw ShapeError("dvae: vocab_size must be at least 2");
    if (groups == 0 || patch_size == 0 || embed_dim == 0 || code_dim == 0 || graph_k == 0) {
        throw ShapeError("dvae: sizes must be positive");
    }
    if (graph_channels.empty()) throw ShapeError("dvae: need at least one graph layer");
    if (groups > num_points || patch_size > num_points) throw SizeError("dvae: groups/patch_size exceed num_points");
}

Codebook::Codebook(std::size_t vocab, std::size_t dim, Rng& rng) {
    std::vector<double> v(vocab * dim);
    for (auto& x : v) x = rng.normal();
    embeddings = Tensor::from({vocab, dim}, std::move(v), true);
}

void Codebook::collect(NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + "embeddings", embeddings);
}

namespace {

std::vector<nn::EdgeConv> make_graph_stack(const DvaeConfig& cfg, Rng& rng) {
    std::vector<nn::EdgeConv> convs;
    std::size_t in = cfg.graph_in;
    for (auto out : cfg.graph_channels) {
        convs.emplace_back(in, out, cfg.graph_k, rng);
        convs.back().clamp_k = true;
        in = out;
    }
    return convs;
}

std::size_t stack_width(const DvaeConfig& cfg) {
    std::size_t w = 0;
    for (auto c : cfg.graph_channels) w += c;
    return w;
}

// Runs the edge-conv stack and concatenates every layer's output.
Tensor run_graph_stack(const std::vector<nn::EdgeConv>& convs, const Tensor& x0) {
    std::vector<Tensor> outputs;
    Tensor x = x0;
    for (const auto& conv : convs) {
        x = conv.forward(x);
        outputs.push_back(x);
    }
    return outputs.size() == 1 ? outputs.front() : concat(outputs, 1);
}

void collect_stack(const std::vector<nn::EdgeConv>& convs, NamedTensors& out, const std::string& prefix) {
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].collect(out, prefix + std::to_string(i) + ".");
}

std::vector<std::size_t> row_argmax(const Tensor& t) {
    const std::size_t rows = t.dim(0), n = t.dim(1);
    const auto d = t.data();
    std::vector<std::size_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j) {
            if (d[r * n + j] > d[r * n + best]) best = j;
        }
        out[r] = best;
    }
    return out;
}

}  // namespace

Tokenizer::Tokenizer(const DvaeConfig& cfg, Rng& rng)
    : input(cfg.embed_dim, cfg.graph_in, rng),
      convs(make_graph_stack(cfg, rng)),
      head(stack_width(cfg), cfg.vocab_size, rng) {}

Tensor Tokenizer::logits(const Tensor& patch_embeddings) const {
    return head.forward(run_graph_stack(convs, input.forward(patch_embeddings)));
}

void Tokenizer::collect(NamedTensors& out, const std::string& prefix) const {
    input.collect(out, prefix + "input.");
    collect_stack(convs, out, prefix + "graph.");
    head.collect(out, prefix + "head.");
}

Decoder::Decoder(const DvaeConfig& cfg, Rng& rng)
    : input(cfg.code_dim, cfg.graph_in, rng),
      convs(make_graph_stack(cfg, rng)),
      merge(stack_width(cfg), cfg.decoder_feature, rng),
      coarse_mlp({cfg.decoder_feature, cfg.decoder_hidden, cfg.coarse_points * 3}, nn::Activation::relu, rng),
      folding(cfg.decoder_feature, cfg.decoder_hidden, cfg.patch_size, rng),
      coarse_points(cfg.coarse_points) {}

Reconstruction Decoder::forward(const Tensor& token_embeddings, const Tensor& centers) const {
    if (token_embeddings.rank() != 2 || centers.rank() != 2 || centers.dim(1) != 3 ||
        centers.dim(0) != token_embeddings.dim(0)) {
        throw ShapeError("Decoder: expected [g,d_code] embeddings and [g,3] centers");
    }
    const std::size_t g = token_embeddings.dim(0);
    const Tensor feature = merge.forward(run_graph_stack(convs, input.forward(token_embeddings)));
    const Tensor coarse_local = reshape(coarse_mlp.forward(feature), {g, coarse_points, 3});
    const Tensor fine_local = folding.forward(feature);
    const Tensor anchor = centers.detach();
    auto anchored = [&](const Tensor& local, std::size_t per_patch) {
        const Tensor offsets = reshape(gather_rows(anchor, nn::repeat_each(g, per_patch)), {g, per_patch, 3});
        return add(local, offsets);
    };
    return {anchored(coarse_local, coarse_points), anchored(fine_local, folding.points())};
}

void Decoder::collect(NamedTensors& out, const std::string& prefix) const {
    input.collect(out, prefix + "input.");
    collect_stack(convs, out, prefix + "graph.");
    merge.collect(out, prefix + "merge.");
    coarse_mlp.collect(out, prefix + "coarse.");
    folding.collect(out, prefix + "folding.");
}

TokenSequence tokenize(const Tensor& logits, const Codebook& codebook, double temperature, TokenizeMode mode,
                       Rng* rng) {
    if (!(temperature > 0.0)) throw DomainError("tokenize: temperature must be positive");
    if (logits.rank() != 2 || logits.dim(1) != codebook.size()) {
        throw ShapeError("tokenize: logits must be [g, N] with N = codebook size");
    }
    TokenSequence seq;
    seq.logits = logits;
    if (mode == TokenizeMode::hard) {
        seq.tokens = row_argmax(logits);
        seq.embeddings = gather_rows(codebook.embeddings, seq.tokens);
        return seq;
    }
    const Tensor noise = rng ? nn::sample_gumbel(logits.shape(), *rng) : Tensor{};
    seq.soft_assignments = nn::gumbel_softmax(logits, temperature, noise);
    seq.tokens = row_argmax(seq.soft_assignments);
    seq.embeddings = matmul(seq.soft_assignments, codebook.embeddings);
    return seq;
}

Tensor kl_to_uniform(const Tensor& q) {
    const std::size_t n = q.dim(-1);
    const std::size_t rows = q.numel() / n;
    const auto d = q.data();
    const double log_n = std::log(static_cast<double>(n));
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0, ent = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double v = d[r * n + j];
            if (v < 0.0) throw SimplexError("kl_to_uniform: negative probability");
            sum += v;
            if (v > 0.0) ent += v * std::log(v);
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw SimplexError("kl_to_uniform: row " + std::to_string(r) + " sums to " + std::to_string(sum));
        }
        total += ent + log_n;
    }
    const double value = std::max(0.0, total / static_cast<double>(rows));
    auto qi = q.impl_ptr();
    return detail::make_result({1}, {value}, {q}, "kl_to_uniform", [qi, rows](detail::TensorImpl& o) {
        auto* g = detail::grad_sink(qi);
        if (!g) return;
        const double f = o.grad[0] / static_cast<double>(rows);
        for (std::size_t i = 0; i < qi->data.size(); ++i) {
            const double v = qi->data[i];
            if (v > 0.0) (*g)[i] += f * (std::log(v) + 1.0);
        }
    });
}

LossTerms dvae_loss(const Tensor& coarse, const Tensor& fine, const Tensor& ground_truth, const Tensor& posterior,
                    double alpha) {
    if (alpha < 0.0) throw DomainError("dvae_loss: alpha must be non-negative");
    LossTerms terms;
    const Tensor cd_fine = mean_all(geometry::chamfer_l1(fine, ground_truth));
    const Tensor cd_coarse = mean_all(geometry::chamfer_l1(coarse, ground_truth));
    terms.chamfer_fine = cd_fine.item();
    terms.chamfer_coarse = cd_coarse.item();
    terms.total = add(cd_fine, cd_coarse);
    if (posterior.defined()) {
        const Tensor kl = kl_to_uniform(posterior);
        terms.kl = kl.item();
        if (alpha > 0.0) terms.total = add(terms.total, scale(kl, alpha));
    } else if (alpha > 0.0) {
        throw DomainError("dvae_loss: alpha > 0 needs a posterior");
    }
    return terms;
}

ScheduleValue schedule_at(const DvaeSchedules& s, std::uint64_t step) {
    ScheduleValue v;
    if (step < s.kl_zero_steps) {
        v.alpha = 0.0;
    } else if (step >= s.kl_zero_steps + s.kl_ramp_steps) {
        v.alpha = s.kl_max;
    } else {
        const double p = static_cast<double>(step - s.kl_zero_steps) / static_cast<double>(s.kl_ramp_steps);
        v.alpha = s.kl_max * 0.5 * (1.0 - std::cos(std::numbers::pi * p));
    }
    if (step >= s.tau_steps) {
        v.tau = s.tau_end;
    } else {
        const double p = static_cast<double>(step) / static_cast<double>(s.tau_steps);
        v.tau = s.tau_end + (s.tau_start - s.tau_end) * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
    }
    return v;
}

Dvae::Dvae(const DvaeConfig& cfg, Rng& rng)
    : config(cfg),
      embedder((cfg.validate(), cfg.embed_hidden1), cfg.embed_hidden2, cfg.embed_dim, rng),
      tokenizer(cfg, rng),
      codebook(cfg.vocab_size, cfg.code_dim, rng),
      decoder(cfg, rng) {}

Tensor Dvae::embed(const PatchSet& patches) const { return embedder.forward(patches.patches_tensor()); }

std::vector<std::size_t> Dvae::hard_tokens(const PatchSet& patches) const {
    NoGradGuard no_grad;
    return row_argmax(logits(patches));
}

void Dvae::collect(NamedTensors& out, const std::string& prefix) const {
    embedder.collect(out, prefix + "embedder.");
    tokenizer.collect(out, prefix + "tokenizer.");
    codebook.collect(out, prefix + "codebook.");
    decoder.collect(out, prefix + "decoder.");
}

PointCloud random_subsample(const PointCloud& cloud, std::size_t count, Rng& rng) {
    if (cloud.size() <= count) return cloud;
    auto idx = rng.sample_without_replacement(cloud.size(), count);
    std::sort(idx.begin(), idx.end());
    PointCloud out;
    out.points.reserve(count);
    for (auto i : idx) {
        out.points.push_back(cloud.points[i]);
        if (cloud.has_labels()) out.labels.push_back(cloud.labels[i]);
    }
    return out;
}

std::vector<DvaeStepLog> train_dvae(Dvae& model, const std::vector<PointCloud>& corpus, const DvaeTrainConfig& config,
                                    DvaeStreams& streams, const std::function<void(const DvaeStepLog&)>& on_step) {
    if (corpus.empty()) throw SizeError("train_dvae: empty corpus");
    if (config.batch_size == 0) throw SizeError("train_dvae: batch size must be positive");
    const auto& cfg = model.config;
    AdamW optimizer(model.parameters(), config.optimizer);
    std::vector<DvaeStepLog> log;
    log.reserve(config.steps);
    for (std::uint64_t step = 0; step < config.steps; ++step) {
        const auto sched = schedule_at(config.schedules, step);
        const double lr = lr_at(config.lr, step);
        DvaeStepLog entry;
        entry.step = step;
        entry.lr = lr;
        entry.alpha = sched.alpha;
        entry.tau = sched.tau;

        optimizer.zero_grad();
        Tensor total;
        std::vector<bool> used(cfg.vocab_size, false);
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const auto& source = corpus[streams.sampling.randint(corpus.size())];
            const PointCloud cloud = random_subsample(source, cfg.num_points, streams.sampling);
            const std::size_t start = config.fps_random_start ? streams.sampling.randint(cloud.size()) : 0;
            const PatchSet patches = geometry::group_patches(cloud, cfg.groups, cfg.patch_size, start);

            const Tensor logits = model.logits(patches);
            const auto seq = tokenize(logits, model.codebook, sched.tau, TokenizeMode::soft, &streams.gumbel);
            const auto recon = model.decode(seq.embeddings, patches.centers_tensor());

            std::vector<double> gt;
            gt.reserve(patches.patches.size() * 3);
            for (std::size_t i = 0; i < patches.groups; ++i) {
                for (std::size_t j = 0; j < patches.patch_size; ++j) {
                    const auto& p = patches.patch_point(i, j);
                    const auto& c = patches.centers[i];
                    gt.insert(gt.end(), {p[0] + c[0], p[1] + c[1], p[2] + c[2]});
                }
            }
            const Tensor truth = Tensor::from({patches.groups, patches.patch_size, 3}, std::move(gt));
            const Tensor posterior = softmax(logits, -1);
            auto terms = dvae_loss(recon.coarse, recon.fine, truth, posterior, sched.alpha);
            entry.chamfer_fine += terms.chamfer_fine;
            entry.chamfer_coarse += terms.chamfer_coarse;
            entry.kl += terms.kl;
            for (auto t : row_argmax(logits)) used[t] = true;
            total = total.defined() ? add(total, terms.total) : terms.total;
        }
        const double inv_b = 1.0 / static_cast<double>(config.batch_size);
        total = scale(total, inv_b);
        entry.chamfer_fine *= inv_b;
        entry.chamfer_coarse *= inv_b;
        entry.kl *= inv_b;
        entry.tokens_used = static_cast<std::size_t>(std::count(used.begin(), used.end(), true));
        if (!std::isfinite(total.item())) {
            throw NumericsError("train_dvae: non-finite loss at step " + std::to_string(step));
        }
        total.backward();
        optimizer.step(lr);
        log.push_back(entry);
        if (on_step) on_step(entry);
    }
    return log;
}

std::vector<std::size_t> token_histogram(const Dvae& model, const std::vector<PointCloud>& clouds) {
    std::vector<std::size_t> hist(model.config.vocab_size, 0);
    for (const auto& cloud : clouds) {
        const PointCloud sub = cloud.size() > model.config.num_points ? [&] {
            // Deterministic evenly spaced subset for evaluation.
            PointCloud s;
            const std::size_t step = cloud.size() / model.config.num_points;
            for (std::size_t i = 0; i < model.config.num_points; ++i) s.points.push_back(cloud.points[i * step]);
            return s;
        }()
                                                                     : cloud;
        const auto patches = geometry::group_patches(sub, model.config.groups, model.config.patch_size);
        for (auto t : model.hard_tokens(patches)) ++hist[t];
    }
    return hist;
}

}  // namespace pointbert::dvae
