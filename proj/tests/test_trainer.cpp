#include <doctest.h>

#include <cstdlib>

#include "calli/common.hpp"
#include "calli/trainer.hpp"
#include "test_util.hpp"

using namespace calli;

namespace {

std::filesystem::path data_dir() {
    if (const char* env = std::getenv("CALLI_DATA")) return env;
    return std::filesystem::path(__FILE__).parent_path().parent_path() / "data";
}

// Renders a small naive-conditioned corpus and returns a ready config.
RunConfig tiny_run(const testutil::TempDir& dir, int steps, std::uint64_t seed) {
    const StrokeDictionary dict = StrokeDictionary::load(data_dir() / "stroke_dict.tsv");
    SynthFontSpec spec;
    spec.name = "trainer-face";
    const VectorFont font = synthesize_font(dict, spec);
    const auto font_path = dir / "face.json";
    font.save(font_path);
    render_corpus({U'一', U'二', U'三', U'十'}, FontRef{font_path, false}, 8, Style::Regular,
                  SplitTag::Pretrain, dir / "corpus");

    RunConfig config;
    config.stage = Stage::Pretrain;
    config.manifest = dir / "corpus" / "manifest.tsv";
    config.conditioner = ProviderKind::Naive;
    config.naive_dim = 8;
    config.timesteps = 10;
    config.beta_start = 1e-3;
    config.beta_end = 0.05;
    config.unet.resolution = 8;
    config.unet.base_channels = 8;
    config.unet.channel_multipliers = {1, 2};
    config.unet.res_blocks = 1;
    config.unet.time_embed_dim = 16;
    config.unet.norm_groups = 4;
    config.lr = 1e-3;
    config.batch_size = 4;
    config.steps = steps;
    config.seed = seed;
    config.out_ckpt = dir / "model.ckpt";
    config.loss_log = dir / "loss.tsv";
    return config;
}

}  // namespace

TEST_CASE("config file parsing") {
    testutil::TempDir dir("cfg");
    atomic_write_file(dir / "run.cfg",
                      std::string("# comment\nstage = pretrain\nmanifest = m.tsv\n"
                                  "conditioner = naive\nsteps= 5\n"));
    const auto kv = parse_config_file(dir / "run.cfg");
    CHECK(kv.at("stage") == "pretrain");
    CHECK(kv.at("steps") == "5");

    SUBCASE("strict mode requires every applicable key") {
        CHECK_THROWS_AS(run_config_from_map(kv, /*strict=*/true), ParseError);
    }
    SUBCASE("lenient mode reports defaults") {
        std::vector<std::string> defaulted;
        auto full = kv;
        full["out_ckpt"] = "out.ckpt";
        const RunConfig c = run_config_from_map(full, false, &defaulted);
        CHECK(c.steps == 5);
        CHECK(c.unet.resolution == 64);
        CHECK_FALSE(defaulted.empty());
    }
    SUBCASE("unknown keys are rejected") {
        auto bad = kv;
        bad["turbo"] = "yes";
        CHECK_THROWS_AS(run_config_from_map(bad, false), ParseError);
    }
    SUBCASE("round trip through text") {
        auto full = kv;
        full["out_ckpt"] = "out.ckpt";
        const RunConfig c = run_config_from_map(full, false);
        testutil::TempDir dir2("cfg2");
        atomic_write_file(dir2 / "full.cfg", run_config_to_text(c));
        const RunConfig c2 = run_config_from_map(parse_config_file(dir2 / "full.cfg"), true);
        CHECK(c2.steps == c.steps);
        CHECK(c2.unet.channel_multipliers == c.unet.channel_multipliers);
        CHECK(c2.seed == c.seed);
    }
}

TEST_CASE("pretrain trains, logs, and checkpoints deterministically") {
    testutil::TempDir dir("pre");
    RunConfig config = tiny_run(dir, 30, 5);
    const ModelCheckpoint ckpt = pretrain(config);
    CHECK(ckpt.meta.stage == "pretrain");
    CHECK(ckpt.meta.loss_curve.size() == 30);
    REQUIRE(ckpt.naive != nullptr);

    // loss log format: step<TAB>loss
    const std::string log = read_text_file(dir / "loss.tsv");
    CHECK(std::count(log.begin(), log.end(), '\n') == 30);
    CHECK(log.find("0\t") == 0);

    SUBCASE("identical seeds give identical loss curves and parameters") {
        testutil::TempDir dir2("pre2");
        RunConfig config2 = tiny_run(dir2, 30, 5);
        ModelCheckpoint ckpt2 = pretrain(config2);
        CHECK(ckpt2.meta.loss_curve == ckpt.meta.loss_curve);
        ModelCheckpoint reloaded = load_checkpoint(dir / "model.ckpt");
        CHECK(nn::params_equal(reloaded.all_parameters(), ckpt2.all_parameters()));
    }
    SUBCASE("empty split is rejected") {
        RunConfig bad = tiny_run(dir, 5, 1);
        bad.stage = Stage::Finetune;  // corpus has no finetune-train records
        bad.init_ckpt = dir / "model.ckpt";
        bad.out_ckpt = dir / "ft.ckpt";
        CHECK_THROWS_AS(finetune(bad), ValueError);
    }
}

TEST_CASE("finetune with zero steps preserves the init parameters") {
    testutil::TempDir dir("ft0");
    RunConfig config = tiny_run(dir, 10, 7);
    ModelCheckpoint base = pretrain(config);

    // make a finetune-train corpus with the same labels
    render_corpus({U'一', U'二'}, FontRef{dir / "face.json", false}, 8, Style::SemiCursive,
                  SplitTag::FinetuneTrain, dir / "ft_corpus");
    RunConfig ft = config;
    ft.stage = Stage::Finetune;
    ft.manifest = dir / "ft_corpus" / "manifest.tsv";
    ft.init_ckpt = dir / "model.ckpt";
    ft.out_ckpt = dir / "ft.ckpt";
    ft.loss_log = dir / "ft_loss.tsv";
    ft.steps = 0;

    ModelCheckpoint fted = finetune(ft);
    CHECK(fted.meta.stage == "finetune");
    CHECK(fted.meta.init_provenance == (dir / "model.ckpt").string());
    ModelCheckpoint base_reloaded = load_checkpoint(dir / "model.ckpt");
    CHECK(nn::params_equal(fted.all_parameters(), base_reloaded.all_parameters()));

    SUBCASE("finetuning does not change the parameter count") {
        ft.steps = 3;
        ModelCheckpoint moved = finetune(ft);
        CHECK(moved.model->parameter_count() == base_reloaded.model->parameter_count());
        CHECK_FALSE(nn::params_equal(moved.all_parameters(), base_reloaded.all_parameters()));
    }
}

TEST_CASE("finetune rejects incompatible init checkpoints naming the field") {
    testutil::TempDir dir("ftbad");
    RunConfig config = tiny_run(dir, 5, 3);
    pretrain(config);
    render_corpus({U'一'}, FontRef{dir / "face.json", false}, 8, Style::Regular,
                  SplitTag::FinetuneTrain, dir / "ft_corpus");

    RunConfig ft = config;
    ft.stage = Stage::Finetune;
    ft.manifest = dir / "ft_corpus" / "manifest.tsv";
    ft.init_ckpt = dir / "model.ckpt";
    ft.out_ckpt = dir / "ft.ckpt";
    ft.steps = 1;

    SUBCASE("unet field mismatch") {
        ft.unet.base_channels = 16;
        try {
            finetune(ft);
            FAIL("expected ValueError");
        } catch (const ValueError& e) {
            CHECK(std::string(e.what()).find("base_channels") != std::string::npos);
        }
    }
    SUBCASE("schedule mismatch") {
        ft.timesteps = 20;
        CHECK_THROWS_AS(finetune(ft), ValueError);
    }
    SUBCASE("conditioner mismatch") {
        ft.conditioner = ProviderKind::None;
        CHECK_THROWS_AS(finetune(ft), ValueError);
    }
}

TEST_CASE("checkpoint save/load round trip is parameter identical") {
    testutil::TempDir dir("ckpt");
    RunConfig config = tiny_run(dir, 8, 9);
    ModelCheckpoint ckpt = pretrain(config);

    save_checkpoint(ckpt, dir / "a.ckpt");
    ModelCheckpoint loaded = load_checkpoint(dir / "a.ckpt");
    save_checkpoint(loaded, dir / "b.ckpt");
    CHECK(read_text_file(dir / "a.ckpt") == read_text_file(dir / "b.ckpt"));
    CHECK(nn::params_equal(ckpt.all_parameters(), loaded.all_parameters()));
    CHECK(loaded.unet_config == ckpt.unet_config);
    CHECK(loaded.meta.loss_curve == ckpt.meta.loss_curve);
    REQUIRE(loaded.naive != nullptr);
    CHECK(loaded.naive->labels() == ckpt.naive->labels());

    SUBCASE("wrong version is reported as such") {
        std::string bytes = read_text_file(dir / "a.ckpt");
        bytes[4] = 42;
        atomic_write_file(dir / "bad.ckpt", bytes);
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), VersionError);
    }
    SUBCASE("truncated files fail loudly, nothing partial escapes") {
        const std::string bytes = read_text_file(dir / "a.ckpt");
        atomic_write_file(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 100));
        CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), CorruptFileError);
    }
    SUBCASE("not a checkpoint") {
        atomic_write_file(dir / "noise.ckpt", std::string("PNG?definitely not"));
        CHECK_THROWS_AS(load_checkpoint(dir / "noise.ckpt"), CorruptFileError);
    }
}

TEST_CASE("unconditional training works with provider none") {
    testutil::TempDir dir("uncond");
    RunConfig config = tiny_run(dir, 10, 13);
    config.conditioner = ProviderKind::None;
    const ModelCheckpoint ckpt = pretrain(config);
    CHECK(ckpt.naive == nullptr);
    CHECK(ckpt.unet_config.cond_input_dim == 0);
    CHECK(ckpt.meta.loss_curve.size() == 10);
}
