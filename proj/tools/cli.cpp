#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pointbert/checkpoint.hpp"
#include "pointbert/cloud_io.hpp"
#include "pointbert/config.hpp"
#include "pointbert/csv_log.hpp"
#include "pointbert/error.hpp"
#include "pointbert/gradsuite.hpp"

#ifndef POINTBERT_VERSION
#define POINTBERT_VERSION "0.0.0"
#endif
#ifndef POINTBERT_REVISION
#define POINTBERT_REVISION "unknown"
#endif

namespace pointbert::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using config::RunConfig;

namespace {

class MissingInput : public Error {
public:
    using Error::Error;
};

struct Context {
    std::string command;
    RunConfig cfg;
    fs::path root;
    fs::path run_dir;
    std::ostream& out;

    fs::path resolve(const std::string& p) const {
        const fs::path path(p);
        return path.is_absolute() ? path : root / path;
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot write '" + path.string() + "'");
    f << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_run_metadata(const Context& ctx) {
    fs::create_directories(ctx.run_dir);
    write_json(ctx.run_dir / "config.json", config::to_json(ctx.cfg));
    write_text(ctx.run_dir / "VERSION", version_stamp() + "\n");
    write_text(ctx.run_dir / "seed", std::to_string(ctx.cfg.seed) + "\n");
}

Checkpoint require_checkpoint(const Context& ctx, const std::string& key, const std::string& value) {
    if (value.empty()) throw MissingInput(key + ": no checkpoint path configured");
    const fs::path p = ctx.resolve(value);
    if (!fs::is_regular_file(p)) throw MissingInput(key + ": no checkpoint at '" + p.string() + "'");
    return load_checkpoint(p);
}

datasets::Corpus require_corpus(const Context& ctx) {
    const fs::path p = ctx.resolve(ctx.cfg.paths.corpus);
    if (!fs::is_regular_file(p / "manifest.json")) {
        throw MissingInput("paths.corpus: no corpus at '" + p.string() + "' (run build-corpus first)");
    }
    return datasets::read_corpus(p);
}

// Checkpoint/config mismatches are configuration errors.
template <class F>
auto matching(const std::string& key, F&& load) {
    try {
        return load();
    } catch (const ShapeError& e) {
        throw ConfigError(key, std::string("checkpoint does not match the configured model: ") + e.what());
    } catch (const FormatError& e) {
        throw ConfigError(key, std::string("checkpoint does not match the configured model: ") + e.what());
    }
}

Checkpoint module_checkpoint(const nn::Module& m, const std::string& kind, const Context& ctx) {
    Checkpoint ck;
    ck.tensors = m.named_parameters();
    ck.metadata = {{"kind", kind}, {"seed", ctx.cfg.seed}, {"version", version_stamp()}};
    return ck;
}

dvae::Dvae load_dvae(const Context& ctx) {
    const Checkpoint ck = require_checkpoint(ctx, "paths.dvae", ctx.cfg.paths.dvae);
    Rng unused(0);
    dvae::Dvae dv(ctx.cfg.dvae, unused);
    matching("paths.dvae", [&] { return load_into(dv.named_parameters(), ck, true); });
    return dv;
}

// --- commands -------------------------------------------------------------------

int cmd_build_corpus(Context& ctx) {
    const auto corpus = datasets::build_corpus(ctx.cfg.corpus, ctx.cfg.seed);
    const fs::path dir = ctx.resolve(ctx.cfg.paths.corpus);
    fs::create_directories(dir);
    datasets::write_corpus(corpus, dir);
    CsvLog log(ctx.run_dir / "corpus_counts.csv", {"split", "class", "count"});
    for (const std::string split : {"train", "val", "test"}) {
        std::map<std::size_t, std::size_t> counts;
        for (const auto& item : corpus.split(split)) ++counts[item.label];
        for (const auto& [c, n] : counts) log.row({split, corpus.class_names[c], std::uint64_t{n}});
    }
    ctx.out << "corpus: " << corpus.train.size() << " train, " << corpus.val.size() << " val, "
            << corpus.test.size() << " test clouds in " << dir.string() << "\n";
    return exit_ok;
}

int cmd_train_dvae(Context& ctx) {
    const auto corpus = require_corpus(ctx);
    const auto clouds = datasets::clouds_of(corpus.train);
    Rng init = Rng::substream(ctx.cfg.seed, "dvae/init");
    dvae::Dvae model(ctx.cfg.dvae, init);
    dvae::DvaeStreams streams{Rng::substream(ctx.cfg.seed, "corpus"), Rng::substream(ctx.cfg.seed, "gumbel")};
    CsvLog log(ctx.run_dir / "dvae_log.csv",
               {"step", "lr", "alpha", "tau", "chamfer_fine", "chamfer_coarse", "kl", "tokens_used"});
    const auto logs = dvae::train_dvae(model, clouds, ctx.cfg.dvae_train, streams, [&](const dvae::DvaeStepLog& s) {
        log.row({s.step, s.lr, s.alpha, s.tau, s.chamfer_fine, s.chamfer_coarse, s.kl, std::uint64_t{s.tokens_used}});
    });
    Checkpoint ck = module_checkpoint(model, "dvae", ctx);
    ck.metadata["steps"] = ctx.cfg.dvae_train.steps;
    save_checkpoint(ctx.run_dir / "dvae.ckpt", ck);

    const auto hist = dvae::token_histogram(model, clouds);
    CsvLog hist_log(ctx.run_dir / "token_histogram.csv", {"token", "count"});
    std::size_t distinct = 0;
    for (std::size_t t = 0; t < hist.size(); ++t) {
        hist_log.row({std::uint64_t{t}, std::uint64_t{hist[t]}});
        distinct += hist[t] > 0;
    }
    json summary = {{"steps", ctx.cfg.dvae_train.steps}, {"distinct_tokens", distinct}};
    if (!logs.empty()) {
        summary["initial_chamfer_fine"] = logs.front().chamfer_fine;
        summary["final_chamfer_fine"] = logs.back().chamfer_fine;
        summary["final_tokens_used"] = logs.back().tokens_used;
    }
    write_json(ctx.run_dir / "summary.json", summary);
    ctx.out << "dvae: " << summary.dump() << "\n";
    return exit_ok;
}

int cmd_pretrain(Context& ctx) {
    const auto corpus = require_corpus(ctx);
    const dvae::Dvae tokenizer = load_dvae(ctx);
    Rng init = Rng::substream(ctx.cfg.seed, "pretrain/init");
    pretrain::Pretrainer trainer(ctx.cfg.pretrain, tokenizer, init);
    auto streams = pretrain::PretrainStreams::from_seed(ctx.cfg.seed);
    CsvLog log(ctx.run_dir / "pretrain_log.csv", {"step", "lr", "mpm_loss", "moco_loss", "masked_acc"});
    pretrain::run_pretraining(trainer, datasets::clouds_of(corpus.train), streams, [&](const pretrain::StepLog& s) {
        log.row({s.step, s.lr, s.mpm_loss, s.moco_loss, s.masked_acc});
    });
    save_checkpoint(ctx.run_dir / "pretrain.ckpt", trainer.checkpoint(&streams));
    const double acc = trainer.masked_accuracy(datasets::clouds_of(corpus.val), ctx.cfg.seed);
    const json summary = {{"steps", trainer.steps_done},
                          {"heldout_masked_accuracy", acc},
                          {"chance", 1.0 / static_cast<double>(ctx.cfg.pretrain.vocab_size)}};
    write_json(ctx.run_dir / "summary.json", summary);
    ctx.out << "pretrain: " << summary.dump() << "\n";
    return exit_ok;
}

downstream::Classifier make_classifier(const Context& ctx, const std::string& init_mode) {
    Rng init = Rng::substream(ctx.cfg.seed, "cls/init");
    downstream::Classifier model(ctx.cfg.classifier, init);
    if (init_mode == "pretrained") {
        const Checkpoint ck = require_checkpoint(ctx, "paths.pretrain", ctx.cfg.paths.pretrain);
        matching("paths.pretrain", [&] { return downstream::load_pretrained_backbone(model.backbone, ck); });
    }
    return model;
}

int cmd_finetune_cls(Context& ctx) {
    const auto corpus = require_corpus(ctx);
    auto model = make_classifier(ctx, ctx.cfg.finetune_init);
    auto streams = downstream::FinetuneStreams::from_seed(ctx.cfg.seed);
    CsvLog log(ctx.run_dir / "finetune_log.csv", {"epoch", "lr", "train_loss", "train_acc", "val_acc"});
    const auto logs = downstream::finetune_classification(
        model, corpus.train, corpus.val, ctx.cfg.finetune, streams, [&](const downstream::EpochLog& e) {
            log.row({std::uint64_t{e.epoch}, e.lr, e.train_loss, e.train_acc, e.val_acc});
        });
    Checkpoint ck = module_checkpoint(model, "classifier", ctx);
    ck.metadata["init"] = ctx.cfg.finetune_init;
    save_checkpoint(ctx.run_dir / "classifier.ckpt", ck);
    const json summary = {{"init", ctx.cfg.finetune_init},
                          {"final_val_accuracy", logs.back().val_acc},
                          {"test_accuracy", downstream::evaluate_accuracy(model, corpus.test)}};
    write_json(ctx.run_dir / "summary.json", summary);
    ctx.out << "finetune-cls: " << summary.dump() << "\n";
    return exit_ok;
}

std::vector<datasets::LabeledCloud> seg_items(const Context& ctx, const std::string& stream) {
    const auto& s = ctx.cfg.segmentation;
    Rng rng = Rng::substream(ctx.cfg.seed, stream);
    std::vector<datasets::LabeledCloud> items;
    for (std::size_t i = 0; i < s.train_items; ++i) {
        const auto family = s.families[i % s.families.size()];
        const auto spec = datasets::random_spec(family, s.model.num_points, ctx.cfg.corpus.noise_sigma, rng);
        items.push_back({datasets::generate_shape(spec, rng), static_cast<std::size_t>(family)});
    }
    return items;
}

json seg_metrics(const downstream::SegmentationModel& model, const std::vector<datasets::LabeledCloud>& items) {
    NoGradGuard no_grad;
    std::map<std::size_t, std::vector<std::uint8_t>> taxonomy;
    for (auto f : datasets::all_families()) taxonomy[static_cast<std::size_t>(f)] = datasets::family_parts(f);
    std::vector<std::vector<std::uint8_t>> preds, labels;
    std::vector<std::size_t> classes;
    std::size_t correct = 0, total = 0;
    for (const auto& item : items) {
        const auto cloud = datasets::prefix_subsample(item.cloud, model.config.num_points);
        const auto pred = downstream::predict_parts(model.forward(cloud, nn::ForwardContext{}), taxonomy[item.label]);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == cloud.labels[i];
        total += pred.size();
        preds.push_back(pred);
        labels.push_back(cloud.labels);
        classes.push_back(item.label);
    }
    const auto m = downstream::miou(preds, labels, classes, taxonomy);
    return {{"point_accuracy", total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0},
            {"miou_c", m.miou_c},
            {"miou_i", m.miou_i}};
}

int cmd_finetune_seg(Context& ctx) {
    const auto& s = ctx.cfg.segmentation;
    Rng init = Rng::substream(ctx.cfg.seed, "seg/init");
    downstream::SegmentationModel model(s.model, init);
    if (s.init == "pretrained") {
        const Checkpoint ck = require_checkpoint(ctx, "paths.pretrain", ctx.cfg.paths.pretrain);
        matching("paths.pretrain", [&] { return downstream::load_pretrained_backbone(model.backbone, ck); });
    }
    const auto train = seg_items(ctx, "seg/train");
    const auto test = seg_items(ctx, "seg/test");
    Rng dropout = Rng::substream(ctx.cfg.seed, "dropout");
    CsvLog log(ctx.run_dir / "segmentation_log.csv", {"epoch", "loss", "point_acc"});
    downstream::train_segmentation(model, train, s.train, dropout, [&](const downstream::SegEpochLog& e) {
        log.row({std::uint64_t{e.epoch}, e.loss, e.point_acc});
    });
    save_checkpoint(ctx.run_dir / "segmentation.ckpt", module_checkpoint(model, "segmentation", ctx));
    const json summary = {{"train", seg_metrics(model, train)}, {"test", seg_metrics(model, test)}};
    write_json(ctx.run_dir / "summary.json", summary);
    ctx.out << "finetune-seg: " << summary.dump() << "\n";
    return exit_ok;
}

int cmd_fewshot(Context& ctx) {
    const auto corpus = require_corpus(ctx);
    std::optional<Checkpoint> ck;
    if (ctx.cfg.fewshot_init == "pretrained") ck = require_checkpoint(ctx, "paths.pretrain", ctx.cfg.paths.pretrain);
    CsvLog log(ctx.run_dir / "fewshot_log.csv", {"episode", "accuracy"});
    const auto result = matching("paths.pretrain", [&] {
        return downstream::fewshot_eval(corpus.all(), ctx.cfg.fewshot, ctx.cfg.classifier, ck ? &*ck : nullptr,
                                        ctx.cfg.seed, [&](std::size_t e, double acc) {
                                            log.row({std::uint64_t{e}, acc});
                                        });
    });
    const json summary = {{"init", ctx.cfg.fewshot_init},
                          {"way", ctx.cfg.fewshot.way},
                          {"shot", ctx.cfg.fewshot.shot},
                          {"episodes", ctx.cfg.fewshot.episodes},
                          {"mean_accuracy", result.mean},
                          {"stddev", result.stddev}};
    write_json(ctx.run_dir / "summary.json", summary);
    ctx.out << "fewshot: " << summary.dump() << "\n";
    return exit_ok;
}

int cmd_reconstruct(Context& ctx) {
    const auto& cfg = ctx.cfg;
    if (cfg.dvae.patch_size != cfg.pretrain.patch_size) {
        throw ConfigError("dvae.patch_size", "must equal pretrain.patch_size for reconstruction");
    }
    const auto corpus = require_corpus(ctx);
    const auto& split = corpus.split(cfg.reconstruct.split);
    if (cfg.reconstruct.index >= split.size()) {
        throw ConfigError("reconstruct.index", "exceeds the size of split '" + cfg.reconstruct.split + "'");
    }
    const dvae::Dvae tokenizer = load_dvae(ctx);
    const Checkpoint ck = require_checkpoint(ctx, "paths.pretrain", cfg.paths.pretrain);
    Rng unused(0);
    pretrain::PointBert model(cfg.pretrain, unused);
    matching("paths.pretrain", [&] { return load_into(model.named_parameters(), ck, true, "online."); });

    const auto cloud = datasets::prefix_subsample(split[cfg.reconstruct.index].cloud, cfg.pretrain.num_points);
    const auto patches = geometry::group_patches(cloud, cfg.pretrain.groups, cfg.pretrain.patch_size);
    Rng mask_rng = Rng::substream(cfg.seed, "reconstruct/mask");
    const auto mask = cfg.reconstruct.mask_strategy == pretrain::MaskStrategy::block
                          ? pretrain::make_block_mask(patches.centers, cfg.reconstruct.mask_ratio, mask_rng)
                          : pretrain::make_rand_mask(patches.groups, cfg.reconstruct.mask_ratio, mask_rng);

    NoGradGuard no_grad;
    const auto truth = tokenizer.hard_tokens(patches);
    const auto bundle = model.backbone.embed(patches);
    const Tensor encoded =
        model.backbone.encode(pretrain::corrupt_embeddings(model.backbone, bundle, model.mask_token, mask),
                              nn::ForwardContext{});
    const Tensor logits = model.token_logits(encoded);
    const std::size_t vocab = logits.dim(1);
    std::vector<std::size_t> tokens = truth;
    std::size_t correct = 0;
    CsvLog token_log(ctx.run_dir / "tokens.csv", {"patch", "masked", "target", "predicted"});
    for (std::size_t i = 0; i < patches.groups; ++i) {
        const auto row = logits.data().subspan(i * vocab, vocab);
        const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        const bool masked = mask.contains(i);
        if (masked) {
            tokens[i] = pred;
            correct += pred == truth[i];
        }
        token_log.row({std::uint64_t{i}, std::uint64_t{masked}, std::uint64_t{truth[i]}, std::uint64_t{pred}});
    }
    const Tensor embeddings = gather_rows(tokenizer.codebook.embeddings, tokens);
    const auto recon = tokenizer.decode(embeddings, patches.centers_tensor());
    const auto decoded = geometry::to_points(reshape(recon.fine, {recon.fine.dim(0) * recon.fine.dim(1), 3}));

    // Visible patches keep their input points; masked patches take the decoder output.
    geometry::PointCloud merged, visible;
    const std::size_t n = patches.patch_size;
    for (std::size_t i = 0; i < patches.groups; ++i) {
        const bool masked = mask.contains(i);
        for (std::size_t j = 0; j < n; ++j) {
            const geometry::Vec3 p = masked ? decoded[i * n + j] : cloud.points[patches.source_indices[i * n + j]];
            merged.points.push_back(p);
            merged.labels.push_back(masked ? 1 : 0);
            if (!masked) {
                visible.points.push_back(p);
                visible.labels.push_back(0);
            }
        }
    }
    write_cloud(ctx.run_dir / "input.pbcloud", cloud);
    write_cloud(ctx.run_dir / "masked_input.pbcloud", visible);
    write_cloud(ctx.run_dir / "reconstruction.pbcloud", merged);
    write_text(ctx.run_dir / "reconstruction.csv", cloud_to_csv(merged));
    const json summary = {{"split", cfg.reconstruct.split},
                          {"index", cfg.reconstruct.index},
                          {"mask_strategy", pretrain::mask_strategy_name(mask.strategy)},
                          {"masked_patches", mask.masked.size()},
                          {"masked_token_accuracy",
                           mask.masked.empty() ? 0.0
                                               : static_cast<double>(correct) / static_cast<double>(mask.masked.size())},
                          {"points", merged.size()},
                          {"chamfer_to_input", geometry::chamfer_l1(merged.points, cloud.points)}};
    write_json(ctx.run_dir / "summary.json", summary);
    ctx.out << "reconstruct: " << summary.dump() << "\n";
    return exit_ok;
}

int cmd_gradcheck(Context& ctx) {
    constexpr double tolerance = 1e-4;
    CsvLog log(ctx.run_dir / "gradcheck.csv", {"family", "seeds", "elements", "max_relative_error", "pass"});
    bool ok = true;
    run_gradient_suite(5, ctx.cfg.seed, [&](const GradSuiteEntry& e) {
        const bool pass = e.max_relative_error < tolerance;
        ok = ok && pass;
        log.row({e.family, std::uint64_t{e.seeds}, std::uint64_t{e.elements_checked}, e.max_relative_error,
                 std::uint64_t{pass}});
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-22s max rel err %.3e  %s\n", e.family.c_str(), e.max_relative_error,
                      pass ? "ok" : "FAIL");
        ctx.out << buf;
    });
    if (!ok) throw NumericsError("gradient check exceeded tolerance");
    return exit_ok;
}

int cmd_eval(Context& ctx) {
    const auto corpus = require_corpus(ctx);
    const Checkpoint ck = require_checkpoint(ctx, "paths.classifier", ctx.cfg.paths.classifier);
    Rng unused(0);
    downstream::Classifier model(ctx.cfg.classifier, unused);
    matching("paths.classifier", [&] { return load_into(model.named_parameters(), ck, true); });
    CsvLog log(ctx.run_dir / "predictions.csv", {"split", "index", "label", "predicted"});
    json summary = json::object();
    for (const std::string split : {"val", "test"}) {
        const auto& items = corpus.split(split);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto pred = model.predict(items[i].cloud);
            correct += pred == items[i].label;
            log.row({split, std::uint64_t{i}, std::uint64_t{items[i].label}, std::uint64_t{pred}});
        }
        summary[split + "_accuracy"] =
            items.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(items.size());
    }
    write_json(ctx.run_dir / "summary.json", summary);
    ctx.out << "eval: " << summary.dump() << "\n";
    return exit_ok;
}

const std::map<std::string, std::function<int(Context&)>>& commands() {
    static const std::map<std::string, std::function<int(Context&)>> table{
        {"build-corpus", cmd_build_corpus}, {"train-dvae", cmd_train_dvae},
        {"pretrain", cmd_pretrain},         {"finetune-cls", cmd_finetune_cls},
        {"finetune-seg", cmd_finetune_seg}, {"fewshot", cmd_fewshot},
        {"reconstruct", cmd_reconstruct},   {"gradcheck", cmd_gradcheck},
        {"eval", cmd_eval},
    };
    return table;
}

// Key overridden by --steps for each command.
std::optional<std::string> steps_key(const std::string& command) {
    if (command == "train-dvae") return "dvae.steps";
    if (command == "pretrain") return "pretrain.steps";
    if (command == "finetune-cls") return "finetune.epochs";
    if (command == "finetune-seg") return "segmentation.epochs";
    if (command == "fewshot") return "fewshot.episodes";
    return std::nullopt;
}

}  // namespace

std::string version_stamp() { return std::string("pointbert ") + POINTBERT_VERSION + " (" + POINTBERT_REVISION + ")"; }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Masked point modeling toolkit", "pointbert"};
    std::string command, config_path, out_dir = "runs";
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed, steps;
    std::vector<std::string> names;
    for (const auto& [name, _] : commands()) names.push_back(name);
    app.add_option("command", command, "Command to run")->required()->check(CLI::IsMember(names));
    app.add_option("--config", config_path, "JSON config file (defaults to the toy preset)");
    app.add_option("--set", overrides, "Override key=value (repeatable)")->take_all();
    app.add_option("--seed", seed, "Root seed");
    app.add_option("--steps", steps, "Step/epoch/episode count for the command");
    app.add_option("--out", out_dir, "Output root; each command writes to <out>/<command>");
    app.set_version_flag("--version", version_stamp());

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_bad_config;
    }

    try {
        if (seed) overrides.push_back("seed=" + std::to_string(*seed));
        if (steps) {
            const auto key = steps_key(command);
            if (!key) throw ConfigError("--steps", "not applicable to '" + command + "'");
            overrides.push_back(*key + "=" + std::to_string(*steps));
        }
        Context ctx{command, config::parse_config(config_path, overrides), fs::path(out_dir), {}, out};
        ctx.run_dir = ctx.root / command;
        write_run_metadata(ctx);
        const auto start = std::chrono::steady_clock::now();
        const int code = commands().at(command)(ctx);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out << command << " finished in " << secs << " s; artifacts in " << ctx.run_dir.string() << "\n";
        return code;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return exit_bad_config;
    } catch (const MissingInput& e) {
        err << "missing input: " << e.what() << "\n";
        return exit_missing_input;
    } catch (const NumericsError& e) {
        err << "numerics failure: " << e.what() << "\n";
        return exit_numerics;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_failure;
    }
}

}  // namespace pointbert::cli
