#include "pointbert/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "pointbert/error.hpp"

namespace pointbert::downstream {

// --- Classification -------------------------------------------------------------

void ClassifierConfig::validate() const {
    backbone.validate();
    if (num_classes < 2) throw ShapeError("classifier: need at least two classes");
    if (groups == 0 || patch_size == 0 || groups > num_points || patch_size > num_points) {
        throw SizeError("classifier: invalid groups/patch_size for num_points");
    }
    if (!(head_dropout >= 0.0 && head_dropout < 1.0)) throw DomainError("classifier: dropout must lie in [0, 1)");
}

ClsHead::ClsHead(std::size_t model_dim, std::size_t hidden, std::size_t classes, double rate, Rng& rng)
    : fc1(2 * model_dim, hidden, rng, nn::InitKind::he_uniform), fc2(hidden, classes, rng), dropout(rate) {}

Tensor ClsHead::forward(const Tensor& global, const nn::ForwardContext& ctx) const {
    if (global.rank() != 2 || global.dim(1) != fc1.in_features()) {
        throw ShapeError("ClsHead: input must be [1, 2d]");
    }
    Tensor h = relu(fc1.forward(global));
    if (ctx.training && dropout > 0.0) {
        if (!ctx.dropout_rng) throw DomainError("ClsHead: training mode needs a dropout generator");
        h = pointbert::dropout(h, dropout, *ctx.dropout_rng, true);
    }
    return fc2.forward(h);
}

void ClsHead::collect(NamedTensors& out, const std::string& prefix) const {
    fc1.collect(out, prefix + "fc1.");
    fc2.collect(out, prefix + "fc2.");
}

Classifier::Classifier(const ClassifierConfig& cfg, Rng& rng)
    : config((cfg.validate(), cfg)),
      backbone(cfg.backbone, rng),
      head(cfg.backbone.transformer.model_dim, cfg.head_hidden, cfg.num_classes, cfg.head_dropout, rng) {}

PatchSet Classifier::patches_for(const PointCloud& cloud) const {
    return geometry::group_patches(datasets::prefix_subsample(cloud, config.num_points), config.groups,
                                   config.patch_size);
}

Tensor Classifier::forward(const PatchSet& patches, const nn::ForwardContext& ctx) const {
    const Tensor encoded = backbone.encode(backbone.sequence(backbone.embed(patches)), ctx);
    return head.forward(Backbone::global_feature(encoded), ctx);
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

std::size_t Classifier::predict(const PointCloud& cloud) const {
    NoGradGuard no_grad;
    const Tensor logits = forward(patches_for(cloud), nn::ForwardContext{});
    return argmax_row(logits.data());
}

void Classifier::collect(NamedTensors& out, const std::string& prefix) const {
    backbone.collect(out, prefix + "backbone.");
    head.collect(out, prefix + "head.");
}

std::size_t load_pretrained_backbone(Backbone& backbone, const Checkpoint& ckpt) {
    return load_into(backbone.named_parameters(), ckpt, true, "online.backbone.");
}

FinetuneStreams FinetuneStreams::from_seed(std::uint64_t seed) {
    return {Rng::substream(seed, "corpus"), Rng::substream(seed, "dropout")};
}

double evaluate_accuracy(const Classifier& model, const std::vector<LabeledCloud>& items) {
    if (items.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& item : items) correct += model.predict(item.cloud) == item.label;
    return static_cast<double>(correct) / static_cast<double>(items.size());
}

std::vector<EpochLog> finetune_classification(Classifier& model, const std::vector<LabeledCloud>& train,
                                              const std::vector<LabeledCloud>& val, const FinetuneConfig& config,
                                              FinetuneStreams& streams,
                                              const std::function<void(const EpochLog&)>& on_epoch) {
    if (train.empty()) throw SizeError("finetune: empty training set");
    if (config.batch_size == 0) throw SizeError("finetune: batch size must be positive");
    for (const auto& item : train) {
        if (item.label >= model.config.num_classes) throw LabelError("finetune: label outside class range");
    }
    const std::size_t batches = (train.size() + config.batch_size - 1) / config.batch_size;
    const LrSchedule schedule{config.lr, config.warmup_epochs * batches, std::max<std::size_t>(1, config.epochs * batches),
                              0.0};
    const std::vector<Tensor> params =
        config.freeze_backbone ? model.head.parameters() : model.parameters();
    AdamW optimizer(params, AdamWOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay, false});
    const nn::ForwardContext train_ctx{true, &streams.dropout};

    std::vector<EpochLog> logs;
    EpochLog initial;
    initial.train_acc = evaluate_accuracy(model, train);
    initial.val_acc = evaluate_accuracy(model, val);
    logs.push_back(initial);
    if (on_epoch) on_epoch(initial);

    std::uint64_t step = 0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        streams.sampling.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        EpochLog log;
        log.epoch = epoch;
        log.lr = lr_at(schedule, step);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<Tensor> rows;
            std::vector<std::size_t> targets;
            for (std::size_t i = start; i < end; ++i) {
                const auto& item = train[order[i]];
                PointCloud cloud = dvae::random_subsample(item.cloud, model.config.num_points, streams.sampling);
                if (config.augment) cloud = datasets::augment_scale_translate(cloud, streams.sampling);
                const PatchSet patches =
                    geometry::group_patches(cloud, model.config.groups, model.config.patch_size);
                Tensor logits;
                if (config.freeze_backbone) {
                    Tensor global;
                    {
                        NoGradGuard no_grad;
                        global = Backbone::global_feature(
                            model.backbone.encode(model.backbone.sequence(model.backbone.embed(patches)),
                                                  nn::ForwardContext{}));
                    }
                    logits = model.head.forward(global, train_ctx);
                } else {
                    logits = model.forward(patches, train_ctx);
                }
                correct += argmax_row(logits.data()) == item.label;
                rows.push_back(logits);
                targets.push_back(item.label);
            }
            optimizer.zero_grad();
            const Tensor loss = cross_entropy_logits(concat(rows, 0), targets);
            if (!std::isfinite(loss.item())) throw NumericsError("finetune: non-finite loss");
            loss.backward();
            optimizer.step(lr_at(schedule, step));
            ++step;
            loss_sum += loss.item() * static_cast<double>(end - start);
        }
        log.train_loss = loss_sum / static_cast<double>(train.size());
        log.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
        log.val_acc = evaluate_accuracy(model, val);
        logs.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return logs;
}

// --- Segmentation ---------------------------------------------------------------

IdwNeighbours idw_neighbours(std::span<const Vec3> dense, std::span<const Vec3> sparse, std::size_t k) {
    if (k == 0 || k > sparse.size()) throw SizeError("idw: k must lie in [1, sparse count]");
    IdwNeighbours out;
    out.k = k;
    out.index = geometry::knn(dense, sparse, k);
    out.weight.assign(dense.size() * k, 0.0);
    for (std::size_t i = 0; i < dense.size(); ++i) {
        const std::size_t* idx = out.index.data() + i * k;
        double* w = out.weight.data() + i * k;
        double total = 0.0;
        bool exact = false;
        for (std::size_t j = 0; j < k; ++j) {
            const double d = std::sqrt(geometry::squared_distance(dense[i], sparse[idx[j]]));
            if (d < 1e-9) {
                std::fill(w, w + k, 0.0);
                w[j] = 1.0;
                exact = true;
                break;
            }
            w[j] = 1.0 / d;
            total += w[j];
        }
        if (!exact) {
            for (std::size_t j = 0; j < k; ++j) w[j] /= total;
        }
    }
    return out;
}

Tensor interpolate_features(std::span<const Vec3> dense, std::span<const Vec3> sparse, const Tensor& features,
                            std::size_t k) {
    if (features.rank() != 2 || features.dim(0) != sparse.size()) {
        throw ShapeError("interpolate_features: features must be [sparse count, c]");
    }
    const auto nb = idw_neighbours(dense, sparse, k);
    std::vector<double> w(dense.size() * sparse.size(), 0.0);
    for (std::size_t i = 0; i < dense.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) w[i * sparse.size() + nb.index[i * k + j]] += nb.weight[i * k + j];
    }
    return matmul(Tensor::from({dense.size(), sparse.size()}, std::move(w)), features);
}

UpsampleLayer::UpsampleLayer(std::size_t in_dim, std::size_t out_dim, std::size_t k_, Rng& rng)
    : mlp({in_dim + 3, out_dim, out_dim}, nn::Activation::relu, rng), k(k_) {}

Tensor UpsampleLayer::forward(std::span<const Vec3> dense, std::span<const Vec3> sparse,
                              const Tensor& features) const {
    const Tensor interp = interpolate_features(dense, sparse, features, k);
    return mlp.forward(concat({interp, geometry::to_tensor(dense)}, 1));
}

void UpsampleLayer::collect(NamedTensors& out, const std::string& prefix) const { mlp.collect(out, prefix + "mlp."); }

Tensor upsample_features(std::span<const Vec3> dense, std::span<const Vec3> sparse, const Tensor& features,
                         const UpsampleLayer& layer) {
    return layer.forward(dense, sparse, features);
}

PropagationStage::PropagationStage(std::size_t dim, std::size_t k, Rng& rng) : conv(dim, dim, k, rng) {}

Tensor PropagationStage::forward(std::span<const Vec3> fine_points, const Tensor& fine_features,
                                 std::span<const Vec3> coarse_points, const Tensor& coarse_features) const {
    if (fine_features.dim(0) != fine_points.size() || coarse_features.dim(0) != coarse_points.size()) {
        throw ShapeError("PropagationStage: feature rows must match point counts");
    }
    const std::size_t k = std::min(conv.k(), coarse_points.size());
    if (k != conv.k()) throw SizeError("PropagationStage: fewer coarse points than neighbours");
    return conv.forward_bipartite(fine_features, coarse_features, geometry::knn(fine_points, coarse_points, k));
}

void PropagationStage::collect(NamedTensors& out, const std::string& prefix) const {
    conv.collect(out, prefix + "conv.");
}

void SegLevels::validate(std::size_t depth, std::size_t groups, std::size_t num_points) const {
    if (layers.size() < 2) throw ShapeError("seg levels: need at least two backbone layers");
    if (resolutions.size() + 1 != layers.size()) {
        throw ShapeError("seg levels: one resolution per level except the deepest");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i] == 0 || layers[i] > depth) throw ShapeError("seg levels: layer index outside backbone depth");
        if (i > 0 && layers[i] <= layers[i - 1]) throw ShapeError("seg levels: layers must increase");
    }
    std::size_t prev = num_points + 1;
    for (auto r : resolutions) {
        if (r >= prev) throw ShapeError("seg levels: resolutions must strictly decrease with depth");
        prev = r;
    }
    if (resolutions.back() <= groups) throw ShapeError("seg levels: resolutions must exceed the group count");
}

void SegConfig::validate() const {
    backbone.validate();
    levels.validate(backbone.transformer.depth, groups, num_points);
    if (patch_size > num_points) throw SizeError("segmentation: patch size exceeds point count");
    if (upsample_k == 0 || upsample_k > groups || edge_k == 0 || edge_k > groups) {
        throw SizeError("segmentation: neighbour counts must lie in [1, groups]");
    }
    if (num_parts < 2 || feature_dim == 0) throw ShapeError("segmentation: need parts and a feature width");
}

Tensor propagate_features(const std::vector<UpsampleLayer>& upsample, const std::vector<PropagationStage>& stages,
                          const nn::Linear& deep_proj, const LevelInputs& levels, std::span<const Vec3> targets,
                          std::size_t final_k) {
    const std::size_t n_levels = levels.points.size();
    if (n_levels < 2 || levels.features.size() != n_levels || upsample.size() + 1 != n_levels ||
        stages.size() != n_levels) {
        throw ShapeError("propagate_features: level/stage count mismatch");
    }
    const auto& centers = levels.points.back();
    Tensor current = deep_proj.forward(levels.features.back());
    const std::vector<Vec3>* current_points = &centers;
    for (std::size_t l = n_levels - 1; l-- > 0;) {
        const auto& pts = levels.points[l];
        const Tensor lifted = upsample[l].forward(pts, centers, levels.features[l]);
        current = stages[l].forward(pts, lifted, *current_points, current);
        current_points = &pts;
    }
    const Tensor query = interpolate_features(targets, *current_points, current, final_k);
    return stages.back().forward(targets, query, *current_points, current);
}

SegmentationModel::SegmentationModel(const SegConfig& cfg, Rng& rng) : config((cfg.validate(), cfg)) {
    backbone = Backbone(cfg.backbone, rng);
    const std::size_t d = cfg.backbone.transformer.model_dim;
    for (std::size_t i = 0; i + 1 < cfg.levels.layers.size(); ++i) {
        upsample.emplace_back(d, cfg.feature_dim, cfg.upsample_k, rng);
    }
    for (std::size_t i = 0; i < cfg.levels.layers.size(); ++i) stages.emplace_back(cfg.feature_dim, cfg.edge_k, rng);
    deep_proj = nn::Linear(d, cfg.feature_dim, rng);
    head = nn::Mlp({cfg.feature_dim + 3, cfg.feature_dim, cfg.num_parts}, nn::Activation::relu, rng);
}

Tensor SegmentationModel::forward(const PointCloud& input, const nn::ForwardContext& ctx) const {
    const PointCloud cloud = datasets::prefix_subsample(input, config.num_points);
    const PatchSet patches = geometry::group_patches(cloud, config.groups, config.patch_size);
    std::vector<Tensor> layer_outputs;
    backbone.encode(backbone.sequence(backbone.embed(patches)), ctx, &layer_outputs);

    // Level point sets are nested prefixes of one farthest-point ordering.
    const auto order = geometry::sample_fps(cloud.points, config.levels.resolutions.front());
    LevelInputs levels;
    for (std::size_t l = 0; l < config.levels.layers.size(); ++l) {
        const std::size_t count = l < config.levels.resolutions.size() ? config.levels.resolutions[l] : config.groups;
        std::vector<Vec3> pts;
        pts.reserve(count);
        for (std::size_t i = 0; i < count; ++i) pts.push_back(cloud.points[order[i]]);
        levels.points.push_back(std::move(pts));
        const Tensor& h = layer_outputs[config.levels.layers[l] - 1];
        levels.features.push_back(slice(h, 0, 1, config.groups));  // patch tokens only
    }
    const Tensor features =
        propagate_features(upsample, stages, deep_proj, levels, cloud.points, config.upsample_k);
    return head.forward(concat({features, geometry::to_tensor(cloud.points)}, 1));
}

void SegmentationModel::collect(NamedTensors& out, const std::string& prefix) const {
    backbone.collect(out, prefix + "backbone.");
    for (std::size_t i = 0; i < upsample.size(); ++i) upsample[i].collect(out, prefix + "up." + std::to_string(i) + ".");
    for (std::size_t i = 0; i < stages.size(); ++i) stages[i].collect(out, prefix + "prop." + std::to_string(i) + ".");
    deep_proj.collect(out, prefix + "deep_proj.");
    head.collect(out, prefix + "head.");
}

std::vector<std::uint8_t> predict_parts(const Tensor& logits, const std::vector<std::uint8_t>& allowed) {
    const std::size_t rows = logits.dim(0), n = logits.dim(1);
    const auto d = logits.data();
    std::vector<std::uint8_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = d.data() + r * n;
        if (allowed.empty()) {
            out[r] = static_cast<std::uint8_t>(std::max_element(row, row + n) - row);
            continue;
        }
        std::uint8_t best = allowed.front();
        for (auto p : allowed) {
            if (p >= n) throw LabelError("predict_parts: allowed part outside logit range");
            if (row[p] > row[best]) best = p;
        }
        out[r] = best;
    }
    return out;
}

namespace {

std::vector<std::size_t> labels_of(const PointCloud& cloud, std::size_t num_points, std::size_t parts) {
    if (!cloud.has_labels()) throw LabelError("segmentation: cloud carries no part labels");
    std::vector<std::size_t> out;
    const std::size_t n = std::min(num_points, cloud.size());
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (cloud.labels[i] >= parts) throw LabelError("segmentation: part label outside model range");
        out.push_back(cloud.labels[i]);
    }
    return out;
}

}  // namespace

std::vector<SegEpochLog> train_segmentation(SegmentationModel& model, const std::vector<LabeledCloud>& items,
                                            const SegTrainConfig& config, Rng& dropout_rng,
                                            const std::function<void(const SegEpochLog&)>& on_epoch) {
    if (items.empty()) throw SizeError("segmentation: empty training set");
    const LrSchedule schedule{config.lr, config.warmup_epochs * items.size(),
                              std::max<std::size_t>(1, config.epochs * items.size()), 0.0};
    AdamW optimizer(model.parameters(), AdamWOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay, false});
    const nn::ForwardContext ctx{true, &dropout_rng};
    std::vector<SegEpochLog> logs;
    std::uint64_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        SegEpochLog log;
        log.epoch = epoch;
        std::size_t correct = 0, total = 0;
        for (const auto& item : items) {
            const auto targets = labels_of(item.cloud, model.config.num_points, model.config.num_parts);
            optimizer.zero_grad();
            const Tensor logits = model.forward(item.cloud, ctx);
            const Tensor loss = cross_entropy_logits(logits, targets);
            if (!std::isfinite(loss.item())) throw NumericsError("segmentation: non-finite loss");
            loss.backward();
            optimizer.step(lr_at(schedule, step++));
            const auto pred = predict_parts(logits);
            for (std::size_t i = 0; i < targets.size(); ++i) correct += pred[i] == targets[i];
            total += targets.size();
            log.loss += loss.item();
        }
        log.loss /= static_cast<double>(items.size());
        log.point_acc = static_cast<double>(correct) / static_cast<double>(total);
        logs.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return logs;
}

double point_accuracy(const SegmentationModel& model, const std::vector<LabeledCloud>& items) {
    NoGradGuard no_grad;
    std::size_t correct = 0, total = 0;
    for (const auto& item : items) {
        const auto targets = labels_of(item.cloud, model.config.num_points, model.config.num_parts);
        const auto pred = predict_parts(model.forward(item.cloud, nn::ForwardContext{}));
        for (std::size_t i = 0; i < targets.size(); ++i) correct += pred[i] == targets[i];
        total += targets.size();
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

MiouResult miou(const std::vector<std::vector<std::uint8_t>>& predictions,
                const std::vector<std::vector<std::uint8_t>>& labels, const std::vector<std::size_t>& classes,
                const std::map<std::size_t, std::vector<std::uint8_t>>& taxonomy) {
    if (predictions.size() != labels.size() || labels.size() != classes.size()) {
        throw ShapeError("miou: predictions, labels and classes must have one entry per instance");
    }
    MiouResult out;
    std::map<std::size_t, std::pair<double, std::size_t>> per_cat;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        const auto it = taxonomy.find(classes[n]);
        if (it == taxonomy.end()) throw LabelError("miou: class " + std::to_string(classes[n]) + " not in taxonomy");
        const auto& parts = it->second;
        if (parts.empty()) throw LabelError("miou: class without parts");
        if (predictions[n].size() != labels[n].size()) throw ShapeError("miou: prediction/label length mismatch");
        const std::set<std::uint8_t> valid(parts.begin(), parts.end());
        for (auto l : labels[n]) {
            if (!valid.count(l)) throw LabelError("miou: label " + std::to_string(l) + " outside class taxonomy");
        }
        double sum = 0.0;
        for (auto p : parts) {
            std::size_t inter = 0, uni = 0;
            for (std::size_t i = 0; i < labels[n].size(); ++i) {
                const bool in_pred = predictions[n][i] == p, in_gt = labels[n][i] == p;
                inter += in_pred && in_gt;
                uni += in_pred || in_gt;
            }
            sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
        }
        const double iou = 100.0 * sum / static_cast<double>(parts.size());
        out.per_instance.push_back(iou);
        auto& cat = per_cat[classes[n]];
        cat.first += iou;
        ++cat.second;
    }
    if (!out.per_instance.empty()) {
        out.miou_i = std::accumulate(out.per_instance.begin(), out.per_instance.end(), 0.0) /
                     static_cast<double>(out.per_instance.size());
        double total = 0.0;
        for (const auto& [c, v] : per_cat) {
            out.per_category[c] = v.first / static_cast<double>(v.second);
            total += out.per_category[c];
        }
        out.miou_c = total / static_cast<double>(per_cat.size());
    }
    return out;
}

// --- Few-shot -------------------------------------------------------------------

Episode sample_episode(const std::vector<LabeledCloud>& items, std::size_t way, std::size_t shot,
                       std::size_t queries, Rng& rng) {
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < items.size(); ++i) by_class[items[i].label].push_back(i);
    std::vector<std::size_t> eligible;
    for (const auto& [c, idx] : by_class) {
        if (idx.size() >= shot + queries) eligible.push_back(c);
    }
    if (way == 0 || shot == 0 || eligible.size() < way) {
        throw SizeError("few-shot: fewer than " + std::to_string(way) + " classes with " +
                        std::to_string(shot + queries) + " items each");
    }
    Episode ep;
    for (auto i : rng.sample_without_replacement(eligible.size(), way)) ep.classes.push_back(eligible[i]);
    for (auto c : ep.classes) {
        const auto& pool = by_class[c];
        const auto pick = rng.sample_without_replacement(pool.size(), shot + queries);
        for (std::size_t j = 0; j < pick.size(); ++j) (j < shot ? ep.support : ep.query).push_back(pool[pick[j]]);
    }
    return ep;
}

FewShotResult fewshot_eval(const std::vector<LabeledCloud>& items, const FewShotConfig& config,
                           const ClassifierConfig& model_config, const Checkpoint* pretrained, std::uint64_t seed,
                           const std::function<void(std::size_t, double)>& on_episode) {
    FewShotResult out;
    Rng episode_rng = Rng::substream(seed, "fewshot/episodes");
    for (std::size_t e = 0; e < config.episodes; ++e) {
        Episode ep = sample_episode(items, config.way, config.shot, config.queries, episode_rng);
        auto relabel = [&](const std::vector<std::size_t>& idx) {
            std::vector<LabeledCloud> v;
            for (auto i : idx) {
                const auto pos = std::find(ep.classes.begin(), ep.classes.end(), items[i].label) - ep.classes.begin();
                v.push_back({items[i].cloud, static_cast<std::size_t>(pos)});
            }
            return v;
        };
        const auto support = relabel(ep.support);
        const auto query = relabel(ep.query);
        ClassifierConfig mc = model_config;
        mc.num_classes = config.way;
        Rng init = Rng::substream(seed, "fewshot/init/" + std::to_string(e));
        Classifier model(mc, init);
        if (pretrained) load_pretrained_backbone(model.backbone, *pretrained);
        FinetuneStreams streams{Rng::substream(seed, "fewshot/corpus/" + std::to_string(e)),
                                Rng::substream(seed, "fewshot/dropout/" + std::to_string(e))};
        finetune_classification(model, support, {}, config.finetune, streams);
        const double acc = 100.0 * evaluate_accuracy(model, query);
        out.accuracies.push_back(acc);
        out.episodes.push_back(std::move(ep));
        if (on_episode) on_episode(e, acc);
    }
    if (!out.accuracies.empty()) {
        const double n = static_cast<double>(out.accuracies.size());
        out.mean = std::accumulate(out.accuracies.begin(), out.accuracies.end(), 0.0) / n;
        double var = 0.0;
        for (auto a : out.accuracies) var += (a - out.mean) * (a - out.mean);
        out.stddev = out.accuracies.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    }
    return out;
}

}  // namespace pointbert::downstream
