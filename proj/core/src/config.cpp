#include "pointbert/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pointbert/error.hpp"

namespace pointbert::config {

using nlohmann::json;

namespace {

// One field list drives both serialization and strict parsing.
template <class Visitor>
void visit_backbone(pretrain::BackboneConfig& b, Visitor& v) {
    v.field("depth", b.transformer.depth);
    v.field("dim", b.transformer.model_dim);
    v.field("heads", b.transformer.heads);
    v.field("ffn_dim", b.transformer.ffn_dim);
    v.field("drop_path", b.transformer.drop_path_rate);
    v.field("dropout", b.transformer.dropout);
    v.field("ffn_activation", b.transformer.ffn_activation);
    v.field("embed_hidden1", b.embed_hidden1);
    v.field("embed_hidden2", b.embed_hidden2);
    v.field("embed_dim", b.embed_dim);
    v.field("pos_hidden", b.pos_hidden);
}

template <class Visitor>
void visit_lr(LrSchedule& lr, Visitor& v) {
    v.field("lr", lr.base_lr);
    v.field("warmup_steps", lr.warmup_steps);
    v.field("min_lr", lr.floor_lr);
}

template <class Visitor>
void visit_finetune(downstream::FinetuneConfig& f, Visitor& v) {
    v.field("epochs", f.epochs);
    v.field("batch_size", f.batch_size);
    v.field("lr", f.lr);
    v.field("warmup_epochs", f.warmup_epochs);
    v.field("weight_decay", f.weight_decay);
    v.field("augment", f.augment);
    v.field("freeze_backbone", f.freeze_backbone);
}

template <class Visitor>
void visit_config(RunConfig& c, Visitor& v) {
    v.field("preset", c.preset);
    v.field("seed", c.seed);
    v.section("corpus", [&] {
        v.field("families", c.corpus.families);
        v.field("train_per_class", c.corpus.train_per_class);
        v.field("val_per_class", c.corpus.val_per_class);
        v.field("test_per_class", c.corpus.test_per_class);
        v.field("points", c.corpus.points);
        v.field("noise_sigma", c.corpus.noise_sigma);
    });
    v.section("model", [&] { visit_backbone(c.model, v); });
    v.section("dvae", [&] {
        auto& d = c.dvae;
        auto& t = c.dvae_train;
        v.field("num_points", d.num_points);
        v.field("groups", d.groups);
        v.field("patch_size", d.patch_size);
        v.field("embed_hidden1", d.embed_hidden1);
        v.field("embed_hidden2", d.embed_hidden2);
        v.field("embed_dim", d.embed_dim);
        v.field("vocab_size", d.vocab_size);
        v.field("code_dim", d.code_dim);
        v.field("graph_k", d.graph_k);
        v.field("graph_in", d.graph_in);
        v.field("graph_channels", d.graph_channels);
        v.field("decoder_feature", d.decoder_feature);
        v.field("decoder_hidden", d.decoder_hidden);
        v.field("coarse_points", d.coarse_points);
        v.field("steps", t.steps);
        v.field("batch_size", t.batch_size);
        visit_lr(t.lr, v);
        v.field("weight_decay", t.optimizer.weight_decay);
        v.field("kl_zero_steps", t.schedules.kl_zero_steps);
        v.field("kl_ramp_steps", t.schedules.kl_ramp_steps);
        v.field("kl_max", t.schedules.kl_max);
        v.field("tau_start", t.schedules.tau_start);
        v.field("tau_end", t.schedules.tau_end);
        v.field("tau_steps", t.schedules.tau_steps);
        v.field("fps_random_start", t.fps_random_start);
    });
    v.section("pretrain", [&] {
        auto& p = c.pretrain;
        v.field("num_points", p.num_points);
        v.field("groups", p.groups);
        v.field("patch_size", p.patch_size);
        v.field("proj_dim", p.proj_dim);
        v.field("steps", p.steps);
        v.field("batch_size", p.batch_size);
        visit_lr(p.lr, v);
        v.field("weight_decay", p.optimizer.weight_decay);
        v.field("lambda", p.lambda);
        v.field("mask_strategy", p.mask_strategy);
        v.field("mask_ratio_min", p.mask_ratio_min);
        v.field("mask_ratio_max", p.mask_ratio_max);
        v.field("mixing", p.mixing);
        v.field("mix_ratio_min", p.mix_ratio_min);
        v.field("mix_ratio_max", p.mix_ratio_max);
        v.field("bank_size", p.bank_size);
        v.field("temperature", p.contrast_temperature);
        v.field("momentum", p.momentum);
        v.field("augment", p.augment);
        v.field("share_embedder", p.share_embedder);
    });
    v.section("finetune", [&] {
        v.field("num_points", c.classifier.num_points);
        v.field("groups", c.classifier.groups);
        v.field("patch_size", c.classifier.patch_size);
        v.field("head_hidden", c.classifier.head_hidden);
        v.field("head_dropout", c.classifier.head_dropout);
        visit_finetune(c.finetune, v);
        v.field("init", c.finetune_init);
    });
    v.section("segmentation", [&] {
        auto& s = c.segmentation;
        v.field("num_points", s.model.num_points);
        v.field("groups", s.model.groups);
        v.field("patch_size", s.model.patch_size);
        v.field("layers", s.model.levels.layers);
        v.field("resolutions", s.model.levels.resolutions);
        v.field("feature_dim", s.model.feature_dim);
        v.field("upsample_k", s.model.upsample_k);
        v.field("edge_k", s.model.edge_k);
        v.field("epochs", s.train.epochs);
        v.field("lr", s.train.lr);
        v.field("warmup_epochs", s.train.warmup_epochs);
        v.field("weight_decay", s.train.weight_decay);
        v.field("train_items", s.train_items);
        v.field("families", s.families);
        v.field("init", s.init);
    });
    v.section("fewshot", [&] {
        v.field("way", c.fewshot.way);
        v.field("shot", c.fewshot.shot);
        v.field("queries", c.fewshot.queries);
        v.field("episodes", c.fewshot.episodes);
        v.section("finetune", [&] { visit_finetune(c.fewshot.finetune, v); });
        v.field("init", c.fewshot_init);
    });
    v.section("reconstruct", [&] {
        v.field("mask_ratio", c.reconstruct.mask_ratio);
        v.field("mask_strategy", c.reconstruct.mask_strategy);
        v.field("split", c.reconstruct.split);
        v.field("index", c.reconstruct.index);
    });
    v.section("paths", [&] {
        v.field("corpus", c.paths.corpus);
        v.field("dvae", c.paths.dvae);
        v.field("pretrain", c.paths.pretrain);
        v.field("classifier", c.paths.classifier);
    });
}

class Writer {
public:
    json root = json::object();

    template <class F>
    void section(const char* name, F&& body) {
        json* saved = cur_;
        (*cur_)[name] = json::object();
        cur_ = &(*cur_)[name];
        body();
        cur_ = saved;
    }

    void field(const char* name, std::uint64_t& x) { (*cur_)[name] = x; }
    void field(const char* name, double& x) { (*cur_)[name] = x; }
    void field(const char* name, bool& x) { (*cur_)[name] = x; }
    void field(const char* name, std::string& x) { (*cur_)[name] = x; }
    void field(const char* name, std::vector<std::size_t>& x) { (*cur_)[name] = x; }
    void field(const char* name, nn::Activation& x) { (*cur_)[name] = nn::activation_name(x); }
    void field(const char* name, pretrain::MaskStrategy& x) { (*cur_)[name] = pretrain::mask_strategy_name(x); }
    void field(const char* name, std::vector<datasets::Family>& x) {
        json arr = json::array();
        for (auto f : x) arr.push_back(datasets::family_name(f));
        (*cur_)[name] = arr;
    }

private:
    json* cur_ = &root;
};

class Reader {
public:
    explicit Reader(const json& patch) : cur_(&patch) {
        if (!patch.is_object()) throw ConfigError("", "top level must be a JSON object");
        known_.emplace_back();
    }

    template <class F>
    void section(const char* name, F&& body) {
        known_.back().insert(name);
        const json* child = find(name);
        if (!child) return;
        const std::string key = path(name);
        if (!child->is_object()) throw ConfigError(key, "expected an object");
        const json* saved = cur_;
        prefix_.push_back(name);
        cur_ = child;
        known_.emplace_back();
        body();
        check_keys();
        known_.pop_back();
        prefix_.pop_back();
        cur_ = saved;
    }

    void field(const char* name, std::uint64_t& x) {
        if (const json* j = take(name)) x = as_unsigned(*j, path(name));
    }
    void field(const char* name, double& x) {
        if (const json* j = take(name)) {
            if (!j->is_number()) throw ConfigError(path(name), "expected a number");
            x = j->get<double>();
        }
    }
    void field(const char* name, bool& x) {
        if (const json* j = take(name)) {
            if (!j->is_boolean()) throw ConfigError(path(name), "expected true or false");
            x = j->get<bool>();
        }
    }
    void field(const char* name, std::string& x) {
        if (const json* j = take(name)) x = as_string(*j, path(name));
    }
    void field(const char* name, std::vector<std::size_t>& x) {
        if (const json* j = take(name)) {
            const std::string key = path(name);
            if (!j->is_array()) throw ConfigError(key, "expected an array of non-negative integers");
            std::vector<std::size_t> out;
            for (const auto& e : *j) out.push_back(as_unsigned(e, key));
            x = std::move(out);
        }
    }
    void field(const char* name, nn::Activation& x) {
        if (const json* j = take(name)) x = convert(name, *j, nn::parse_activation);
    }
    void field(const char* name, pretrain::MaskStrategy& x) {
        if (const json* j = take(name)) x = convert(name, *j, pretrain::parse_mask_strategy);
    }
    void field(const char* name, std::vector<datasets::Family>& x) {
        if (const json* j = take(name)) {
            if (!j->is_array()) throw ConfigError(path(name), "expected an array of family names");
            std::vector<datasets::Family> out;
            for (const auto& e : *j) out.push_back(convert(name, e, datasets::parse_family));
            x = std::move(out);
        }
    }

private:
    std::string path(const std::string& name) const {
        std::string p;
        for (const auto& s : prefix_) p += s + ".";
        return p + name;
    }
    const json* find(const char* name) const {
        const auto it = cur_->find(name);
        return it == cur_->end() ? nullptr : &*it;
    }
    const json* take(const char* name) {
        known_.back().insert(name);
        return find(name);
    }
    template <class Parse>
    auto convert(const char* name, const json& j, Parse parse) -> decltype(parse(std::string{})) {
        const std::string key = path(name);
        try {
            return parse(as_string(j, key));
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            throw ConfigError(key, e.what());
        }
    }
    static std::uint64_t as_unsigned(const json& j, const std::string& key) {
        if (!j.is_number_unsigned()) {
            if (j.is_number_integer()) throw ConfigError(key, "must be non-negative");
            throw ConfigError(key, "expected a non-negative integer");
        }
        return j.get<std::uint64_t>();
    }
    static std::string as_string(const json& j, const std::string& key) {
        if (!j.is_string()) throw ConfigError(key, "expected a string");
        return j.get<std::string>();
    }
    // Called once every field of the current object has been visited.
    void check_keys() const {
        for (const auto& [k, _] : cur_->items()) {
            if (!known_.back().count(k)) throw ConfigError(path(k), "unknown key");
        }
    }

public:
    /// Rejects unknown top-level keys.
    void finish() const { check_keys(); }

private:
    const json* cur_;
    std::vector<std::string> prefix_;
    std::vector<std::set<std::string>> known_;
};

template <class F>
void guard(const std::string& key, F&& check) {
    try {
        check();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(key, e.what());
    }
}

RunConfig toy_preset() {
    RunConfig c;
    c.preset = "toy";
    c.corpus.train_per_class = 30;
    c.corpus.val_per_class = 10;
    c.corpus.test_per_class = 10;
    c.corpus.points = 1024;
    c.fewshot.queries = 20;
    c.fewshot.finetune.epochs = 10;
    c.fewshot.finetune.batch_size = 10;
    c.fewshot.finetune.warmup_epochs = 1;
    c.paths.corpus = "build-corpus";
    c.paths.dvae = "train-dvae/dvae.ckpt";
    c.paths.pretrain = "pretrain/pretrain.ckpt";
    c.paths.classifier = "finetune-cls/classifier.ckpt";
    return c;
}

RunConfig paper_preset() {
    RunConfig c = toy_preset();
    c.preset = "paper";
    c.corpus.points = 8192;
    c.corpus.train_per_class = 1000;
    c.corpus.val_per_class = 100;
    c.corpus.test_per_class = 100;

    auto& t = c.model.transformer;
    t.depth = 12;
    t.model_dim = 384;
    t.heads = 6;
    t.ffn_dim = 1536;
    t.drop_path_rate = 0.1;
    c.model.embed_hidden1 = 128;
    c.model.embed_hidden2 = 256;
    c.model.embed_dim = 384;
    c.model.pos_hidden = 128;

    auto& d = c.dvae;
    d.num_points = 1024;
    d.groups = 64;
    d.patch_size = 32;
    d.embed_hidden1 = 128;
    d.embed_hidden2 = 256;
    d.embed_dim = 256;
    d.vocab_size = 8192;
    d.code_dim = 256;
    d.graph_k = 4;
    d.graph_in = 128;
    d.graph_channels = {128, 256, 512, 512};
    d.decoder_feature = 256;
    d.decoder_hidden = 1024;
    d.coarse_points = 8;
    auto& dt = c.dvae_train;
    dt.steps = 150000;
    dt.batch_size = 64;
    dt.lr = LrSchedule{5e-4, 10000, 150000, 0.0};
    dt.optimizer.weight_decay = 5e-4;
    dt.schedules = dvae::DvaeSchedules{10000, 100000, 0.1, 1.0, 0.0625, 100000};

    auto& p = c.pretrain;
    p.num_points = 1024;
    p.groups = 64;
    p.patch_size = 32;
    p.proj_dim = 256;
    p.steps = 120000;
    p.batch_size = 128;
    p.lr = LrSchedule{5e-4, 4000, 120000, 1e-6};
    p.optimizer.weight_decay = 0.05;
    p.bank_size = 16384;
    p.contrast_temperature = 0.07;
    p.momentum = 0.999;

    c.classifier.num_points = 1024;
    c.classifier.groups = 64;
    c.classifier.patch_size = 32;
    c.classifier.head_hidden = 256;
    c.finetune = downstream::FinetuneConfig{300, 32, 5e-4, 10, 0.05, true, false};

    auto& s = c.segmentation;
    s.model.num_points = 2048;
    s.model.groups = 128;
    s.model.patch_size = 32;
    s.model.levels = downstream::SegLevels{{4, 8, 12}, {512, 256}};
    s.model.feature_dim = 128;
    s.train = downstream::SegTrainConfig{300, 2e-4, 10, 0.05};
    s.families = datasets::all_families();
    s.train_items = 1000;

    c.fewshot.queries = 20;
    c.fewshot.finetune = downstream::FinetuneConfig{100, 32, 5e-4, 10, 0.05, true, false};
    return c;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("", "cannot read config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void merge_into(json& dst, const json& src) {
    for (const auto& [k, v] : src.items()) {
        if (v.is_object() && dst.contains(k) && dst[k].is_object()) {
            merge_into(dst[k], v);
        } else {
            dst[k] = v;
        }
    }
}

}  // namespace

void RunConfig::resolve() {
    pretrain.backbone = model;
    pretrain.vocab_size = dvae.vocab_size;
    pretrain.lr.total_steps = std::max<std::uint64_t>(1, pretrain.steps);
    pretrain.optimizer.lr = pretrain.lr.base_lr;
    dvae_train.lr.total_steps = std::max<std::uint64_t>(1, dvae_train.steps);
    dvae_train.optimizer.lr = dvae_train.lr.base_lr;
    classifier.backbone = model;
    classifier.num_classes = corpus.families.size();
    segmentation.model.backbone = model;
    segmentation.model.num_parts = datasets::total_part_count();
}

void RunConfig::validate() const {
    if (preset != "toy" && preset != "paper") throw ConfigError("preset", "unknown preset '" + preset + "'");
    guard("corpus", [&] { corpus.validate(); });
    guard("model", [&] { model.validate(); });
    guard("dvae", [&] { dvae.validate(); });
    if (dvae_train.batch_size == 0) throw ConfigError("dvae.batch_size", "must be positive");
    if (dvae_train.schedules.tau_end <= 0.0 || dvae_train.schedules.tau_start < dvae_train.schedules.tau_end) {
        throw ConfigError("dvae.tau_end", "temperatures must satisfy 0 < tau_end <= tau_start");
    }
    if (dvae_train.schedules.kl_max < 0.0) throw ConfigError("dvae.kl_max", "must be non-negative");
    if (dvae_train.lr.base_lr <= 0.0) throw ConfigError("dvae.lr", "must be positive");
    guard("pretrain", [&] { pretrain.validate(); });
    guard("finetune", [&] { classifier.validate(); });
    if (finetune.batch_size == 0) throw ConfigError("finetune.batch_size", "must be positive");
    if (finetune.lr < 0.0) throw ConfigError("finetune.lr", "must be non-negative");
    guard("segmentation", [&] { segmentation.model.validate(); });
    if (segmentation.families.empty()) throw ConfigError("segmentation.families", "must not be empty");
    if (fewshot.way < 2 || fewshot.shot == 0 || fewshot.queries == 0) {
        throw ConfigError("fewshot", "way >= 2, shot >= 1 and queries >= 1 required");
    }
    if (fewshot.way > corpus.families.size()) throw ConfigError("fewshot.way", "exceeds the number of classes");
    if (fewshot.finetune.batch_size == 0) throw ConfigError("fewshot.finetune.batch_size", "must be positive");
    for (const auto& [key, value] : {std::pair{"finetune.init", &finetune_init},
                                     std::pair{"fewshot.init", &fewshot_init},
                                     std::pair{"segmentation.init", &segmentation.init}}) {
        if (*value != "scratch" && *value != "pretrained") {
            throw ConfigError(key, "must be \"scratch\" or \"pretrained\"");
        }
    }
    if (!(reconstruct.mask_ratio > 0.0 && reconstruct.mask_ratio < 1.0)) {
        throw ConfigError("reconstruct.mask_ratio", "must lie in (0, 1)");
    }
    if (reconstruct.split != "train" && reconstruct.split != "val" && reconstruct.split != "test") {
        throw ConfigError("reconstruct.split", "must be train, val or test");
    }
}

RunConfig preset(const std::string& name) {
    RunConfig c;
    if (name == "toy") {
        c = toy_preset();
    } else if (name == "paper") {
        c = paper_preset();
    } else {
        throw ConfigError("preset", "unknown preset '" + name + "'");
    }
    c.resolve();
    return c;
}

std::vector<std::string> preset_names() { return {"toy", "paper"}; }

json to_json(const RunConfig& cfg) {
    RunConfig copy = cfg;
    Writer w;
    visit_config(copy, w);
    return w.root;
}

RunConfig apply_json(const RunConfig& base, const json& patch) {
    RunConfig out = base;
    Reader r(patch);
    visit_config(out, r);
    r.finish();
    return out;
}

void add_override(json& patch, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(assignment, "override must have the form key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &patch;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(key, "empty path component");
        if (!node->is_object()) throw ConfigError(key, "conflicts with a non-object value");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json patch = json::object();
    if (!path.empty()) {
        try {
            patch = json::parse(read_text(path));
        } catch (const json::parse_error& e) {
            throw ConfigError("", path.string() + ": " + e.what());
        }
        if (!patch.is_object()) throw ConfigError("", path.string() + ": top level must be a JSON object");
    }
    json extra = json::object();
    for (const auto& o : overrides) add_override(extra, o);
    merge_into(patch, extra);

    std::string base = "toy";
    if (patch.contains("preset")) {
        if (!patch["preset"].is_string()) throw ConfigError("preset", "expected a string");
        base = patch["preset"].get<std::string>();
    }
    RunConfig cfg = apply_json(preset(base), patch);
    cfg.resolve();
    cfg.validate();
    return cfg;
}

}  // namespace pointbert::config
