#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "calli/nn/layers.hpp"
#include "calli/stroke_codec.hpp"

namespace calli {

struct EncoderConfig {
    int vocab_size = vocab::kSize;
    int hidden_dim = 128;
    int layers = 4;
    int heads = 4;
    int max_len = kMaxTokenLen;
    double dropout = 0.0;

    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

struct EncoderMeta {
    std::uint64_t steps = 0;
    double final_loss = 0.0;
    std::vector<double> loss_curve;
};

// Decoder-only autoregressive model over stroke-code token sequences. The
// condition embedding is the normalized final-layer hidden state at the
// [EOS] position.
class StrokeEncoder {
public:
    StrokeEncoder(const EncoderConfig& config, std::uint64_t seed);
    StrokeEncoder(StrokeEncoder&&) noexcept;
    StrokeEncoder& operator=(StrokeEncoder&&) noexcept;
    ~StrokeEncoder();

    const EncoderConfig& config() const { return config_; }
    nn::ParamList parameters();
    std::size_t parameter_count();

    // Per-position next-token logits for one prefix; logits(i, v) depends
    // only on prefix[0..i]. Shape [|prefix| x vocab].
    Matrix next_token_logits(std::span<const int> prefix);

    // Mean next-token cross-entropy over a batch of token sequences.
    double evaluate_loss(const std::vector<std::vector<int>>& sequences);

    // One optimizer step on a batch; returns the loss before the update.
    double train_step(const std::vector<std::vector<int>>& batch, nn::Adam& opt, Rng& rng);

    Vector embed(const StrokeCode& code);
    Vector embed_tokens(std::span<const int> tokens);

private:
    struct Block;

    // Forward over padded batch columns (col = b*T + t); targets use -1 to
    // mask padding. Returns loss and, when train is set, leaves gradients in
    // the parameters.
    double batch_loss(const std::vector<std::vector<int>>& batch, bool train, Rng* rng);
    void forward_tokens(const std::vector<int>& tokens_flat, int batch, int seq, bool train,
                        Rng* rng);

    EncoderConfig config_;
    nn::Param tok_emb_;  // [hidden x vocab]
    nn::Param pos_emb_;  // [hidden x max_len]
    std::vector<std::unique_ptr<Block>> blocks_;
    std::unique_ptr<nn::LayerNorm> ln_f_;
    std::unique_ptr<nn::Linear> head_;

    Matrix x0_, stack_out_, lnf_out_, logits_;
    Matrix dlogits_, dlnf_, dstack_, dx0_;
    std::vector<int> tokens_flat_;
};

StrokeEncoder train_encoder(const std::vector<StrokeCode>& corpus, const EncoderConfig& config,
                            std::uint64_t seed, int steps, EncoderMeta* meta_out = nullptr,
                            int batch_size = 8, double lr = 3e-4);

void save_encoder_checkpoint(const std::filesystem::path& path, StrokeEncoder& model,
                             const EncoderMeta& meta);
struct LoadedEncoder {
    std::unique_ptr<StrokeEncoder> model;
    EncoderMeta meta;
};
LoadedEncoder load_encoder_checkpoint(const std::filesystem::path& path);

}  // namespace calli
