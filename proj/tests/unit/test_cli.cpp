#include <doctest.h>

#include <fstream>
#include <sstream>

#include "../../tools/cli.hpp"
#include "pointbert/cloud_io.hpp"
#include "pointbert/config.hpp"
#include "pointbert/error.hpp"
#include "pointbert/gradsuite.hpp"
#include "support.hpp"

using namespace pointbert;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

constexpr const char* kSmall = R"({
  "preset": "toy",
  "corpus": {"train_per_class": 3, "val_per_class": 1, "test_per_class": 1, "points": 512},
  "dvae": {"steps": 4, "kl_zero_steps": 1, "kl_ramp_steps": 2, "tau_steps": 3, "warmup_steps": 1},
  "pretrain": {"steps": 2, "batch_size": 2, "warmup_steps": 1}
})";

// Corpus and tokenizer shared by the tests that need trained inputs.
const fs::path& pipeline() {
    static const fs::path dir = [] {
        const fs::path d = testing::temp_dir("cli_pipeline");
        std::ofstream(d / "small.json") << kSmall;
        for (const char* c : {"build-corpus", "train-dvae"}) {
            const auto r = run({c, "--config", (d / "small.json").string(), "--out", d.string()});
            REQUIRE_MESSAGE(r.code == 0, r.err);
        }
        return d;
    }();
    return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("override is echoed in the effective config") {
    const auto cfg = config::parse_config("", {"model.dim=48", "model.heads=4", "pretrain.lambda=0.5"});
    const auto j = config::to_json(cfg);
    CHECK(j["model"]["dim"] == 48);
    CHECK(cfg.pretrain.backbone.transformer.model_dim == 48);
    CHECK(cfg.classifier.backbone.transformer.model_dim == 48);
    CHECK(j["pretrain"]["lambda"] == 0.5);

    const auto dir = testing::temp_dir("cli_echo");
    const auto r = run({"gradcheck", "--set", "model.dim=32", "--seed", "5", "--out", dir.string()});
    REQUIRE(r.code == 0);
    const auto echoed = nlohmann::json::parse(slurp(dir / "gradcheck" / "config.json"));
    CHECK(echoed["model"]["dim"] == 32);
    CHECK(echoed["seed"] == 5);
    CHECK(slurp(dir / "gradcheck" / "seed") == "5\n");
    CHECK(slurp(dir / "gradcheck" / "VERSION") == cli::version_stamp() + "\n");
}

TEST_CASE("unknown keys and type mismatches name the key") {
    try {
        config::parse_config("", {"model.dmi=48"});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "model.dmi");
    }
    try {
        config::parse_config("", {"pretrain.temperature=\"warm\""});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "pretrain.temperature");
    }
    CHECK_THROWS_AS(config::parse_config("", {"pretrain.mask_ratio_min=0.6"}), ConfigError);
    CHECK_THROWS_AS(config::parse_config("", {"preset=huge"}), ConfigError);
    CHECK_THROWS_AS(config::parse_config("", {"novalue"}), ConfigError);
}

TEST_CASE("paper preset values") {
    const auto j = config::to_json(config::preset("paper"));
    CHECK(j["dvae"]["vocab_size"] == 8192);
    CHECK(j["model"]["depth"] == 12);
    CHECK(j["model"]["dim"] == 384);
    CHECK(j["model"]["heads"] == 6);
    CHECK(j["pretrain"]["bank_size"] == 16384);
    CHECK(j["pretrain"]["temperature"] == 0.07);
    CHECK(j["pretrain"]["momentum"] == 0.999);
    CHECK(j["dvae"]["groups"] == 64);
    CHECK(j["dvae"]["patch_size"] == 32);
    CHECK_NOTHROW(config::preset("paper").validate());
}

TEST_CASE("shipped config files match the built-in presets") {
    for (const auto& name : config::preset_names()) {
        const fs::path file = fs::path(POINTBERT_SOURCE_DIR) / "configs" / (name + ".json");
        REQUIRE(fs::exists(file));
        CHECK(config::to_json(config::parse_config(file)) == config::to_json(config::preset(name)));
    }
}

TEST_CASE("exit codes") {
    const auto dir = testing::temp_dir("cli_codes");
    CHECK(run({"--version"}).code == cli::exit_ok);
    CHECK(run({"--version"}).out.find(cli::version_stamp()) != std::string::npos);
    CHECK(run({"frobnicate"}).code == cli::exit_bad_config);
    CHECK(run({"gradcheck", "--set", "model.dmi=48", "--out", dir.string()}).code == cli::exit_bad_config);
    CHECK(run({"gradcheck", "--steps", "3", "--out", dir.string()}).code == cli::exit_bad_config);

    std::ofstream(dir / "broken.json") << "{\n  \"seed\": 1,\n  \"model\": {\n}";
    const auto broken = run({"gradcheck", "--config", (dir / "broken.json").string(), "--out", dir.string()});
    CHECK(broken.code == cli::exit_bad_config);
    CHECK(broken.err.find("line 4") != std::string::npos);

    CHECK(run({"train-dvae", "--out", (dir / "empty").string()}).code == cli::exit_missing_input);
    CHECK(run({"pretrain", "--config", (pipeline() / "small.json").string(), "--set",
               "paths.dvae=" + (dir / "none.ckpt").string(), "--out", pipeline().string()})
              .code == cli::exit_missing_input);
    CHECK(run({"finetune-cls", "--set", "paths.corpus=nowhere", "--out", dir.string()}).code ==
          cli::exit_missing_input);
}

TEST_CASE("pretrain with zero steps writes the fresh initialization") {
    const fs::path& d = pipeline();
    const auto out = d / "zero";
    const auto r = run({"pretrain", "--config", (d / "small.json").string(), "--steps", "0", "--set",
                        "paths.corpus=" + (d / "build-corpus").string(), "--set",
                        "paths.dvae=" + (d / "train-dvae" / "dvae.ckpt").string(), "--out", out.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);

    const auto cfg = config::parse_config(d / "small.json", {"pretrain.steps=0"});
    Rng unused(0);
    dvae::Dvae tok(cfg.dvae, unused);
    load_into(tok.named_parameters(), load_checkpoint(d / "train-dvae" / "dvae.ckpt"), true);
    Rng init = Rng::substream(cfg.seed, "pretrain/init");
    pretrain::Pretrainer fresh(cfg.pretrain, tok, init);
    auto streams = pretrain::PretrainStreams::from_seed(cfg.seed);
    CHECK(slurp(out / "pretrain" / "pretrain.ckpt") == encode_checkpoint(fresh.checkpoint(&streams)));
}

TEST_CASE("reconstruction merges visible and decoded patches") {
    const fs::path& d = pipeline();
    const auto small = (d / "small.json").string();
    REQUIRE(run({"pretrain", "--config", small, "--out", d.string()}).code == 0);
    const auto r = run({"reconstruct", "--config", small, "--out", d.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto cfg = config::parse_config(d / "small.json");
    const auto dir = d / "reconstruct";
    const auto rec = geometry::read_cloud(dir / "reconstruction.pbcloud");
    const auto input = geometry::read_cloud(dir / "input.pbcloud");
    CHECK(rec.size() == cfg.pretrain.groups * cfg.pretrain.patch_size);
    CHECK(input.size() == rec.size());
    const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
    CHECK(summary["masked_patches"] == pretrain::mask_count(cfg.pretrain.groups, cfg.reconstruct.mask_ratio));
}

TEST_CASE("gradcheck command reports every family") {
    const auto dir = testing::temp_dir("cli_grad");
    const auto r = run({"gradcheck", "--out", dir.string()});
    CHECK(r.code == cli::exit_ok);
    for (const auto& family : gradient_suite_families()) CHECK(r.out.find(family) != std::string::npos);
    CHECK(fs::exists(dir / "gradcheck" / "gradcheck.csv"));
}

}
