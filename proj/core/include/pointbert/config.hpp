#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointbert/datasets.hpp"
#include "pointbert/downstream.hpp"
#include "pointbert/dvae.hpp"
#include "pointbert/pretrain.hpp"

namespace pointbert::config {

struct ReconstructConfig {
    double mask_ratio = 0.45;
    pretrain::MaskStrategy mask_strategy = pretrain::MaskStrategy::block;
    std::string split = "test";
    std::size_t index = 0;
};

struct SegRunConfig {
    downstream::SegConfig model;
    downstream::SegTrainConfig train;
    std::size_t train_items = 4;   // instances overfit per run
    std::vector<datasets::Family> families{datasets::Family::sphere};
    std::string init = "scratch";
};

/// Relative paths are resolved against the run output root.
struct PathsConfig {
    std::string corpus;
    std::string dvae;
    std::string pretrain;
    std::string classifier;
};

/// Fully resolved run parameters. Shared pieces (backbone, vocabulary size)
/// live in one place and are copied into the per-stage configs by `resolve`.
struct RunConfig {
    std::string preset = "toy";
    std::uint64_t seed = 0;
    datasets::CorpusConfig corpus;
    pretrain::BackboneConfig model;
    dvae::DvaeConfig dvae;
    dvae::DvaeTrainConfig dvae_train;
    pretrain::PretrainConfig pretrain;
    downstream::ClassifierConfig classifier;
    downstream::FinetuneConfig finetune;
    std::string finetune_init = "pretrained";  // or "scratch"
    SegRunConfig segmentation;
    downstream::FewShotConfig fewshot;
    std::string fewshot_init = "pretrained";
    ReconstructConfig reconstruct;
    PathsConfig paths;

    /// Copies shared fields into the stage configs.
    void resolve();
    /// Throws ConfigError naming the section of the first violation.
    void validate() const;
};

/// Named presets: "toy" and "paper".
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json to_json(const RunConfig& cfg);

/// Overlays `patch` onto `base`. Unknown keys and type mismatches raise
/// ConfigError with the dotted key.
RunConfig apply_json(const RunConfig& base, const nlohmann::json& patch);

/// "a.b.c=value" into `patch`; the value is parsed as JSON, falling back to a
/// plain string.
void add_override(nlohmann::json& patch, const std::string& assignment);

/// Reads `path` (empty means the toy preset), applies overrides, resolves and
/// validates. A "preset" key selects the base preset before anything else.
RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace pointbert::config
