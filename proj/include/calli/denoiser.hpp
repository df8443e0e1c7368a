#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "calli/diffusion.hpp"
#include "calli/nn/layers.hpp"

namespace calli {

struct UNetConfig {
    int in_channels = 1;
    int base_channels = 32;
    std::vector<int> channel_multipliers = {1, 2, 4};
    int res_blocks = 2;
    int time_embed_dim = 128;
    int cond_input_dim = 0;  // 0 = unconditional
    int resolution = 64;
    int norm_groups = 8;

    int stages() const { return static_cast<int>(channel_multipliers.size()); }
    int stage_channels(int s) const { return base_channels * channel_multipliers[static_cast<std::size_t>(s)]; }
    void validate() const;
    bool operator==(const UNetConfig&) const = default;
};

// Names the first differing field, if any; used for checkpoint compatibility
// diagnostics.
std::optional<std::string> config_mismatch(const UNetConfig& a, const UNetConfig& b);

// Sinusoidal timestep embedding: [sin(w_i t) ... cos(w_i t)] with dim/2
// geometric frequencies. Defined for t >= 0.
Vector time_embedding(int t, int dim);
void time_embedding_batch(std::span<const int> ts, int dim, Matrix& out);

// block_output + broadcast(projection(cond_pre_embedding)): the projected
// per-sample vector is added across all spatial positions of that sample.
Matrix inject_condition(const Matrix& block_output, const Matrix& cond_pre_embedding,
                        const nn::Linear& block_projection, int batch);

// U-Net noise predictor with per-block additive time conditioning and one
// condition projection per resolution stage shared by that stage's blocks.
class UNet : public NoiseModel {
public:
    UNet(const UNetConfig& config, std::uint64_t seed);
    ~UNet() override;

    const UNetConfig& config() const { return config_; }
    int sample_dim() const override;
    int cond_dim() const override { return config_.cond_input_dim; }

    void forward(const Matrix& z, std::span<const int> ts, const Matrix& cond, Matrix& eps_hat,
                 bool train) override;
    void backward(const Matrix& deps_hat, Matrix* dcond) override;
    nn::ParamList parameters() override;
    std::size_t parameter_count();

private:
    struct ResBlock;

    UNetConfig config_;

    std::unique_ptr<nn::Conv2d> stem_;
    std::vector<std::unique_ptr<nn::Conv2d>> down_convs_;  // stage s -> s+1, stride 2
    std::vector<std::vector<std::unique_ptr<ResBlock>>> rb_down_;
    std::unique_ptr<ResBlock> mid_;
    std::vector<std::vector<std::unique_ptr<ResBlock>>> rb_up_;
    std::vector<std::unique_ptr<nn::Conv2d>> up_convs_;  // stage s+1 -> s, after 2x upsample
    std::unique_ptr<nn::GroupNorm> head_norm_;
    std::unique_ptr<nn::Conv2d> head_conv_;
    std::unique_ptr<nn::Linear> time_trunk_;
    std::vector<std::unique_ptr<nn::Linear>> stage_cond_;  // cond_input_dim -> C_s

    // per-forward state
    int batch_ = 0;
    bool train_mode_ = false;
    Matrix cond_in_;
    Matrix t_sin_, t_lin_, t_hid_, dt_hid_;
    std::vector<Matrix> cond_proj_, dcond_proj_;
    Matrix x_in_, stem_out_;
    std::vector<Matrix> skip_;     // post-block activation per stage
    std::vector<Matrix> up_pre_;   // input to 2x upsample (stage s+1 resolution)
    std::vector<Matrix> up_mid_;   // upsampled, input to up conv
    Matrix head_in_, head_a_, head_s_, out_;
    std::vector<Matrix> dskip_;
};

}  // namespace calli
