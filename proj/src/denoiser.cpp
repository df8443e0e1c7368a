#include "calli/denoiser.hpp"

#include <cmath>

#include "calli/common.hpp"

namespace calli {

void UNetConfig::validate() const {
    if (in_channels < 1 || base_channels < 1 || resolution < 1)
        throw ValueError("channels and resolution must be positive");
    if (channel_multipliers.empty()) throw ValueError("need at least one channel multiplier");
    for (int m : channel_multipliers)
        if (m < 1) throw ValueError("channel multipliers must be positive");
    if (res_blocks < 1) throw ValueError("need at least one residual block per stage");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw ValueError("time_embed_dim must be even and >= 2");
    if (cond_input_dim < 0) throw ValueError("cond_input_dim must be non-negative");
    if (norm_groups < 1) throw ValueError("norm_groups must be positive");
    const int down_factor = 1 << (stages() - 1);
    if (resolution % down_factor != 0)
        throw ValueError("resolution " + std::to_string(resolution) + " not divisible by 2^" +
                         std::to_string(stages() - 1));
    if ((resolution / down_factor) < 1) throw ValueError("too many stages for this resolution");
    for (int s = 0; s < stages(); ++s)
        if (stage_channels(s) % norm_groups != 0)
            throw ValueError("stage " + std::to_string(s) + " channels " +
                             std::to_string(stage_channels(s)) + " not divisible by norm_groups " +
                             std::to_string(norm_groups));
}

std::optional<std::string> config_mismatch(const UNetConfig& a, const UNetConfig& b) {
    if (a.in_channels != b.in_channels) return "in_channels";
    if (a.base_channels != b.base_channels) return "base_channels";
    if (a.channel_multipliers != b.channel_multipliers) return "channel_multipliers";
    if (a.res_blocks != b.res_blocks) return "res_blocks";
    if (a.time_embed_dim != b.time_embed_dim) return "time_embed_dim";
    if (a.cond_input_dim != b.cond_input_dim) return "cond_input_dim";
    if (a.resolution != b.resolution) return "resolution";
    if (a.norm_groups != b.norm_groups) return "norm_groups";
    return std::nullopt;
}

Vector time_embedding(int t, int dim) {
    if (t < 0) throw ValueError("timestep must be non-negative");
    if (dim < 2 || dim % 2 != 0) throw ValueError("embedding dim must be even and >= 2");
    const int half = dim / 2;
    Vector out(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        out(i) = std::sin(t * freq);
        out(half + i) = std::cos(t * freq);
    }
    return out;
}

void time_embedding_batch(std::span<const int> ts, int dim, Matrix& out) {
    out.resize(dim, static_cast<Eigen::Index>(ts.size()));
    for (std::size_t b = 0; b < ts.size(); ++b) out.col(static_cast<Eigen::Index>(b)) = time_embedding(ts[b], dim);
}

Matrix inject_condition(const Matrix& block_output, const Matrix& cond_pre_embedding,
                        const nn::Linear& block_projection, int batch) {
    if (block_projection.in_dim() != cond_pre_embedding.rows())
        throw ShapeError("condition projection expects dim " +
                         std::to_string(block_projection.in_dim()) + ", got " +
                         std::to_string(cond_pre_embedding.rows()));
    if (block_projection.out_dim() != block_output.rows())
        throw ShapeError("condition projection output does not match block channels");
    if (block_output.cols() % batch != 0 || cond_pre_embedding.cols() != batch)
        throw ShapeError("batch layout mismatch in inject_condition");
    Matrix proj;
    block_projection.forward(cond_pre_embedding, proj);
    Matrix out = block_output;
    nn::add_per_sample(out, proj, batch);
    return out;
}

// --- residual block ------------------------------------------------------------

struct UNet::ResBlock {
    nn::GroupNorm gn1, gn2;
    nn::Conv2d conv1, conv2;
    nn::Linear time_proj;
    int channels;

    Matrix x, a1, s1, h1, h2, a2, s2, h3, y;
    Matrix tp_, dtp_, ds2_, da2_, dh2_, ds1_, da1_, dthid_;

    ResBlock(const std::string& name, int ch, const UNetConfig& cfg, Rng& rng)
        : gn1(name + ".gn1", ch, cfg.norm_groups),
          gn2(name + ".gn2", ch, cfg.norm_groups),
          conv1(name + ".conv1", ch, ch, 1, rng),
          conv2(name + ".conv2", ch, ch, 1, rng),
          time_proj(name + ".time_proj", cfg.time_embed_dim, ch, rng, 0.02),
          channels(ch) {}

    void collect(nn::ParamList& out) {
        gn1.collect(out);
        conv1.collect(out);
        time_proj.collect(out);
        gn2.collect(out);
        conv2.collect(out);
    }

    const Matrix& forward(const Matrix& x_in, const Matrix& t_hid, const Matrix* cond_proj,
                          int batch, int hw_side) {
        x = x_in;
        gn1.forward(x, batch, a1);
        nn::silu_forward(a1, s1);
        conv1.forward(s1, batch, hw_side, hw_side, h1);
        time_proj.forward(t_hid, tp_);
        h2 = h1;
        nn::add_per_sample(h2, tp_, batch);
        if (cond_proj) nn::add_per_sample(h2, *cond_proj, batch);
        gn2.forward(h2, batch, a2);
        nn::silu_forward(a2, s2);
        conv2.forward(s2, batch, hw_side, hw_side, h3);
        y = x + h3;
        return y;
    }

    // dy -> dx; accumulates dt_hid and (optionally) the stage's dcond_proj.
    void backward(const Matrix& t_hid, const Matrix& dy, int batch, int hw_side,
                  Matrix& dt_hid_accum, Matrix* dcond_proj_accum, Matrix& dx) {
        conv2.backward(s2, batch, hw_side, hw_side, dy, ds2_);
        nn::silu_backward(a2, ds2_, da2_);
        gn2.backward(h2, batch, da2_, dh2_);
        if (dcond_proj_accum)
            nn::reduce_per_sample(dh2_, batch, *dcond_proj_accum, /*accumulate=*/true);
        nn::reduce_per_sample(dh2_, batch, dtp_, /*accumulate=*/false);
        time_proj.backward(t_hid, dtp_, dthid_);
        dt_hid_accum += dthid_;
        conv1.backward(s1, batch, hw_side, hw_side, dh2_, ds1_);
        nn::silu_backward(a1, ds1_, da1_);
        gn1.backward(x, batch, da1_, dx);
        dx += dy;  // residual path
    }
};

// --- UNet ------------------------------------------------------------------------

UNet::UNet(const UNetConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int S = config_.stages();

    stem_ = std::make_unique<nn::Conv2d>("stem", config_.in_channels, config_.stage_channels(0), 1,
                                         rng);
    for (int s = 0; s + 1 < S; ++s)
        down_convs_.push_back(std::make_unique<nn::Conv2d>(
            "down" + std::to_string(s), config_.stage_channels(s), config_.stage_channels(s + 1),
            2, rng));
    rb_down_.resize(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s)
        for (int b = 0; b < config_.res_blocks; ++b)
            rb_down_[static_cast<std::size_t>(s)].push_back(std::make_unique<ResBlock>(
                "down" + std::to_string(s) + ".block" + std::to_string(b),
                config_.stage_channels(s), config_, rng));
    mid_ = std::make_unique<ResBlock>("mid", config_.stage_channels(S - 1), config_, rng);
    rb_up_.resize(static_cast<std::size_t>(S));
    for (int s = S - 1; s >= 0; --s)
        for (int b = 0; b < config_.res_blocks; ++b)
            rb_up_[static_cast<std::size_t>(s)].push_back(std::make_unique<ResBlock>(
                "up" + std::to_string(s) + ".block" + std::to_string(b),
                config_.stage_channels(s), config_, rng));
    for (int s = 0; s + 1 < S; ++s)
        up_convs_.push_back(std::make_unique<nn::Conv2d>(
            "up" + std::to_string(s) + ".reduce", config_.stage_channels(s + 1),
            config_.stage_channels(s), 1, rng));
    head_norm_ = std::make_unique<nn::GroupNorm>("head.norm", config_.stage_channels(0),
                                                 config_.norm_groups);
    // zero-initialized output conv: the fresh model predicts zero noise
    head_conv_ = std::make_unique<nn::Conv2d>("head.conv", config_.stage_channels(0),
                                              config_.in_channels, 1, rng, /*zero_init=*/true);
    time_trunk_ = std::make_unique<nn::Linear>("time_trunk", config_.time_embed_dim,
                                               config_.time_embed_dim, rng, 0.02);
    if (config_.cond_input_dim > 0)
        for (int s = 0; s < S; ++s)
            stage_cond_.push_back(std::make_unique<nn::Linear>(
                "cond_stage" + std::to_string(s), config_.cond_input_dim,
                config_.stage_channels(s), rng, 0.02));

    skip_.resize(static_cast<std::size_t>(S));
    dskip_.resize(static_cast<std::size_t>(S));
    up_pre_.resize(static_cast<std::size_t>(S));
    up_mid_.resize(static_cast<std::size_t>(S));
    cond_proj_.resize(static_cast<std::size_t>(S));
    dcond_proj_.resize(static_cast<std::size_t>(S));
}

UNet::~UNet() = default;

int UNet::sample_dim() const {
    return config_.in_channels * config_.resolution * config_.resolution;
}

nn::ParamList UNet::parameters() {
    nn::ParamList out;
    stem_->collect(out);
    for (auto& c : down_convs_) c->collect(out);
    for (auto& stage : rb_down_)
        for (auto& b : stage) b->collect(out);
    mid_->collect(out);
    for (auto& stage : rb_up_)
        for (auto& b : stage) b->collect(out);
    for (auto& c : up_convs_) c->collect(out);
    head_norm_->collect(out);
    head_conv_->collect(out);
    time_trunk_->collect(out);
    for (auto& c : stage_cond_) c->collect(out);
    return out;
}

std::size_t UNet::parameter_count() {
    return nn::total_size(parameters());
}

void UNet::forward(const Matrix& z, std::span<const int> ts, const Matrix& cond, Matrix& eps_hat,
                   bool train) {
    const int S = config_.stages();
    const int R = config_.resolution;
    const int C_in = config_.in_channels;
    const int hw = R * R;
    if (z.rows() != sample_dim()) throw ShapeError("input does not match configured resolution");
    if (static_cast<Eigen::Index>(ts.size()) != z.cols())
        throw ShapeError("one timestep per sample required");
    batch_ = static_cast<int>(z.cols());
    train_mode_ = train;
    for (int t : ts)
        if (t < 1) throw ValueError("timesteps must be >= 1");

    if (config_.cond_input_dim > 0) {
        if (cond.rows() != config_.cond_input_dim || cond.cols() != z.cols())
            throw ShapeError("condition batch must be [cond_input_dim x batch]");
        cond_in_ = cond;
        for (int s = 0; s < S; ++s)
            stage_cond_[static_cast<std::size_t>(s)]->forward(cond_in_,
                                                              cond_proj_[static_cast<std::size_t>(s)]);
    }

    time_embedding_batch(ts, config_.time_embed_dim, t_sin_);
    time_trunk_->forward(t_sin_, t_lin_);
    nn::silu_forward(t_lin_, t_hid_);

    // [C*HW x B] -> [C x B*HW]
    x_in_.resize(C_in, static_cast<Eigen::Index>(batch_) * hw);
    for (int b = 0; b < batch_; ++b)
        for (int c = 0; c < C_in; ++c)
            x_in_.row(c).segment(static_cast<Eigen::Index>(b) * hw, hw) =
                z.col(b).segment(static_cast<Eigen::Index>(c) * hw, hw);

    stem_->forward(x_in_, batch_, R, R, stem_out_);
    const Matrix* x = &stem_out_;
    Matrix down_tmp;

    for (int s = 0; s < S; ++s) {
        const int side = R >> s;
        if (s > 0) {
            down_convs_[static_cast<std::size_t>(s - 1)]->forward(*x, batch_, side * 2, side * 2,
                                                                  down_tmp);
            x = &down_tmp;
        }
        const Matrix* cp =
            config_.cond_input_dim > 0 ? &cond_proj_[static_cast<std::size_t>(s)] : nullptr;
        for (auto& blk : rb_down_[static_cast<std::size_t>(s)])
            x = &blk->forward(*x, t_hid_, cp, batch_, side);
        skip_[static_cast<std::size_t>(s)] = *x;
    }

    const Matrix* cp_mid =
        config_.cond_input_dim > 0 ? &cond_proj_[static_cast<std::size_t>(S - 1)] : nullptr;
    x = &mid_->forward(*x, t_hid_, cp_mid, batch_, R >> (S - 1));

    Matrix up_cur;
    for (int s = S - 1; s >= 0; --s) {
        const int side = R >> s;
        up_cur = *x + skip_[static_cast<std::size_t>(s)];
        x = &up_cur;
        const Matrix* cp =
            config_.cond_input_dim > 0 ? &cond_proj_[static_cast<std::size_t>(s)] : nullptr;
        for (auto& blk : rb_up_[static_cast<std::size_t>(s)])
            x = &blk->forward(*x, t_hid_, cp, batch_, side);
        if (s > 0) {
            up_pre_[static_cast<std::size_t>(s - 1)] = *x;
            nn::upsample2x_forward(*x, batch_, side, side, up_mid_[static_cast<std::size_t>(s - 1)]);
            up_convs_[static_cast<std::size_t>(s - 1)]->forward(
                up_mid_[static_cast<std::size_t>(s - 1)], batch_, side * 2, side * 2, up_cur);
            x = &up_cur;
        }
    }

    head_in_ = *x;
    head_norm_->forward(head_in_, batch_, head_a_);
    nn::silu_forward(head_a_, head_s_);
    head_conv_->forward(head_s_, batch_, R, R, out_);

    eps_hat.resize(sample_dim(), batch_);
    for (int b = 0; b < batch_; ++b)
        for (int c = 0; c < C_in; ++c)
            eps_hat.col(b).segment(static_cast<Eigen::Index>(c) * hw, hw) =
                out_.row(c).segment(static_cast<Eigen::Index>(b) * hw, hw);
}

void UNet::backward(const Matrix& deps_hat, Matrix* dcond) {
    if (!train_mode_) throw ValueError("backward requires a training-mode forward pass");
    const int S = config_.stages();
    const int R = config_.resolution;
    const int C_in = config_.in_channels;
    const int hw = R * R;
    if (deps_hat.rows() != sample_dim() || deps_hat.cols() != batch_)
        throw ShapeError("gradient shape does not match the last forward pass");

    dt_hid_ = Matrix::Zero(config_.time_embed_dim, batch_);
    for (int s = 0; s < S; ++s)
        if (config_.cond_input_dim > 0)
            dcond_proj_[static_cast<std::size_t>(s)] =
                Matrix::Zero(config_.stage_channels(s), batch_);

    Matrix dy(C_in, static_cast<Eigen::Index>(batch_) * hw);
    for (int b = 0; b < batch_; ++b)
        for (int c = 0; c < C_in; ++c)
            dy.row(c).segment(static_cast<Eigen::Index>(b) * hw, hw) =
                deps_hat.col(b).segment(static_cast<Eigen::Index>(c) * hw, hw);

    Matrix dx, tmp;
    head_conv_->backward(head_s_, batch_, R, R, dy, tmp);
    nn::silu_backward(head_a_, tmp, dy);
    head_norm_->backward(head_in_, batch_, dy, dx);

    // up path, reversed
    for (int s = 0; s < S; ++s) {
        const int side = R >> s;
        if (s > 0) {
            up_convs_[static_cast<std::size_t>(s - 1)]->backward(
                up_mid_[static_cast<std::size_t>(s - 1)], batch_, side * 2, side * 2, dx, tmp);
            nn::upsample2x_backward(tmp, batch_, side, side, dx);
        }
        Matrix* dcp = config_.cond_input_dim > 0 ? &dcond_proj_[static_cast<std::size_t>(s)]
                                                 : nullptr;
        auto& stage = rb_up_[static_cast<std::size_t>(s)];
        for (auto it = stage.rbegin(); it != stage.rend(); ++it) {
            (*it)->backward(t_hid_, dx, batch_, side, dt_hid_, dcp, tmp);
            dx.swap(tmp);
        }
        dskip_[static_cast<std::size_t>(s)] = dx;
    }

    {
        Matrix* dcp = config_.cond_input_dim > 0 ? &dcond_proj_[static_cast<std::size_t>(S - 1)]
                                                 : nullptr;
        mid_->backward(t_hid_, dx, batch_, R >> (S - 1), dt_hid_, dcp, tmp);
        dx.swap(tmp);
    }

    // down path, reversed
    for (int s = S - 1; s >= 0; --s) {
        const int side = R >> s;
        dx += dskip_[static_cast<std::size_t>(s)];
        Matrix* dcp = config_.cond_input_dim > 0 ? &dcond_proj_[static_cast<std::size_t>(s)]
                                                 : nullptr;
        auto& stage = rb_down_[static_cast<std::size_t>(s)];
        for (auto it = stage.rbegin(); it != stage.rend(); ++it) {
            (*it)->backward(t_hid_, dx, batch_, side, dt_hid_, dcp, tmp);
            dx.swap(tmp);
        }
        if (s > 0) {
            down_convs_[static_cast<std::size_t>(s - 1)]->backward(
                skip_[static_cast<std::size_t>(s - 1)], batch_, side * 2, side * 2, dx, tmp);
            dx.swap(tmp);
        }
    }

    stem_->backward(x_in_, batch_, R, R, dx, tmp);

    // time trunk
    nn::silu_backward(t_lin_, dt_hid_, tmp);
    Matrix dt_sin;
    time_trunk_->backward(t_sin_, tmp, dt_sin);

    // condition projections and (optionally) the condition gradient itself
    if (config_.cond_input_dim > 0) {
        if (dcond) *dcond = Matrix::Zero(config_.cond_input_dim, batch_);
        for (int s = 0; s < S; ++s) {
            if (dcond) {
                stage_cond_[static_cast<std::size_t>(s)]->backward(
                    cond_in_, dcond_proj_[static_cast<std::size_t>(s)], tmp);
                *dcond += tmp;
            } else {
                stage_cond_[static_cast<std::size_t>(s)]->backward_params_only(
                    cond_in_, dcond_proj_[static_cast<std::size_t>(s)]);
            }
        }
    }
}

}  // namespace calli
