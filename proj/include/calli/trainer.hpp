#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "calli/conditioners.hpp"
#include "calli/denoiser.hpp"
#include "calli/diffusion.hpp"
#include "calli/glyph_corpus.hpp"

namespace calli {

enum class Stage { Pretrain, Finetune };
std::string to_string(Stage s);

struct RunConfig {
    Stage stage = Stage::Pretrain;
    std::filesystem::path manifest;
    ProviderKind conditioner = ProviderKind::Naive;

    // provider-specific
    std::filesystem::path font_path;    // font provider (holdout face)
    std::filesystem::path stroke_dict;  // stroke provider
    std::filesystem::path stroke_ckpt;
    int naive_dim = 128;
    int font_cond_resolution = 0;  // 0 = follow the model resolution

    // schedule
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    UNetConfig unet;  // cond_input_dim is derived from the provider

    double lr = 1e-4;
    int batch_size = 16;
    int steps = 1000;
    std::uint64_t seed = 0;

    std::filesystem::path init_ckpt;  // finetune only
    std::filesystem::path out_ckpt;
    std::filesystem::path loss_log;  // optional: step<TAB>loss lines

    int cond_dim() const;
    void validate() const;
};

// Flat `key = value` config files. Strict parsing requires every key; the
// lenient mode backfills documented defaults (the CLI prints the resolved
// values so nothing is silently defaulted).
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);
RunConfig run_config_from_map(const std::map<std::string, std::string>& kv, bool strict,
                              std::vector<std::string>* defaulted = nullptr);
std::vector<std::string> run_config_keys();
std::string run_config_to_text(const RunConfig& config);

struct TrainMeta {
    std::string stage;
    std::uint64_t steps = 0;
    std::vector<double> loss_curve;  // one entry per step
    std::string init_provenance;     // finetune: path of the init checkpoint
};

// A trained diffusion model plus everything needed to sample from it again.
struct ModelCheckpoint {
    UNetConfig unet_config;
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    ProviderKind provider = ProviderKind::Naive;
    std::string font_path;  // provider provenance, overridable at load
    std::string stroke_dict;
    std::string stroke_ckpt;
    int font_cond_resolution = 0;
    TrainMeta meta;

    std::unique_ptr<UNet> model;
    std::unique_ptr<NaiveTable> naive;  // provider == Naive only

    Schedule schedule() const { return make_schedule(timesteps, beta_start, beta_end); }
    nn::ParamList all_parameters();
};

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

// In-memory corpus ready for batching: per-sample pixel columns plus labels.
struct TrainingSet {
    Matrix x0;  // [res*res x N]
    std::vector<char32_t> labels;
};
TrainingSet load_training_set(const Manifest& manifest, const std::filesystem::path& base_dir,
                              int resolution, SplitTag split);

// Builds the provider named by the config (labels feed the naive table).
std::unique_ptr<Conditioner> make_conditioner(const RunConfig& config,
                                              const std::vector<char32_t>& labels);
// Rebuilds the provider recorded in a checkpoint, honoring overrides.
std::unique_ptr<Conditioner> conditioner_from_checkpoint(
    ModelCheckpoint& ckpt, const std::map<std::string, std::string>& overrides = {});

ModelCheckpoint pretrain(const RunConfig& config);
ModelCheckpoint finetune(const RunConfig& config);

}  // namespace calli
