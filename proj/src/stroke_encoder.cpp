#include "calli/stroke_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "calli/common.hpp"

namespace calli {

void EncoderConfig::validate() const {
    if (vocab_size <= 0 || hidden_dim <= 0 || layers <= 0 || heads <= 0 || max_len <= 0)
        throw ValueError("encoder config fields must be positive");
    if (hidden_dim % heads != 0)
        throw ValueError("hidden_dim must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ValueError("dropout must lie in [0, 1)");
}

struct StrokeEncoder::Block {
    nn::LayerNorm ln1, ln2;
    nn::CausalSelfAttention attn;
    nn::Linear fc1, fc2;
    double dropout;

    // activations (owned here so layers do not cache twice)
    Matrix x_in, ln1_out, attn_out, res1, ln2_out, fc1_out, act_out, mlp_out, y;
    Matrix drop_mask_attn, drop_mask_mlp;
    Matrix d1, d2, d3, d4, d5;

    Block(const std::string& name, const EncoderConfig& cfg, Rng& rng)
        : ln1(name + ".ln1", cfg.hidden_dim),
          ln2(name + ".ln2", cfg.hidden_dim),
          attn(name + ".attn", cfg.hidden_dim, cfg.heads, rng),
          fc1(name + ".mlp.fc1", cfg.hidden_dim, 4 * cfg.hidden_dim, rng, 0.02),
          fc2(name + ".mlp.fc2", 4 * cfg.hidden_dim, cfg.hidden_dim, rng, 0.02),
          dropout(cfg.dropout) {}

    void collect(nn::ParamList& out) {
        ln1.collect(out);
        attn.collect(out);
        ln2.collect(out);
        fc1.collect(out);
        fc2.collect(out);
    }

    static void apply_dropout(Matrix& x, Matrix& mask, double rate, Rng* rng) {
        mask.resize(x.rows(), x.cols());
        const double keep = 1.0 - rate;
        for (Eigen::Index i = 0; i < x.size(); ++i)
            mask.data()[i] = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
        x.array() *= mask.array();
    }

    const Matrix& forward(const Matrix& x, int batch, int seq, bool train, Rng* rng) {
        x_in = x;
        ln1.forward(x_in, ln1_out);
        attn.forward(ln1_out, batch, seq, attn_out);
        if (train && dropout > 0.0) apply_dropout(attn_out, drop_mask_attn, dropout, rng);
        res1 = x_in + attn_out;
        ln2.forward(res1, ln2_out);
        fc1.forward(ln2_out, fc1_out);
        nn::gelu_forward(fc1_out, act_out);
        fc2.forward(act_out, mlp_out);
        if (train && dropout > 0.0) apply_dropout(mlp_out, drop_mask_mlp, dropout, rng);
        y = res1 + mlp_out;
        return y;
    }

    void backward(const Matrix& dy, int batch, int seq, bool used_dropout, Matrix& dx) {
        Matrix dmlp = dy;
        if (used_dropout && dropout > 0.0) dmlp.array() *= drop_mask_mlp.array();
        fc2.backward(act_out, dmlp, d1);
        nn::gelu_backward(fc1_out, d1, d2);
        fc1.backward(ln2_out, d2, d3);
        ln2.backward(res1, d3, d4);
        Matrix dres1 = dy + d4;

        Matrix dattn = dres1;
        if (used_dropout && dropout > 0.0) dattn.array() *= drop_mask_attn.array();
        attn.backward(ln1_out, batch, seq, dattn, d5);
        ln1.backward(x_in, d5, dx);
        dx += dres1;
    }
};

StrokeEncoder::~StrokeEncoder() = default;
StrokeEncoder::StrokeEncoder(StrokeEncoder&&) noexcept = default;
StrokeEncoder& StrokeEncoder::operator=(StrokeEncoder&&) noexcept = default;

StrokeEncoder::StrokeEncoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    tok_emb_ = nn::Param("tok_emb", config_.hidden_dim, config_.vocab_size);
    pos_emb_ = nn::Param("pos_emb", config_.hidden_dim, config_.max_len);
    nn::init_gaussian(tok_emb_, rng, 0.02);
    nn::init_gaussian(pos_emb_, rng, 0.02);
    for (int l = 0; l < config_.layers; ++l)
        blocks_.push_back(std::make_unique<Block>("block" + std::to_string(l), config_, rng));
    ln_f_ = std::make_unique<nn::LayerNorm>("ln_f", config_.hidden_dim);
    head_ = std::make_unique<nn::Linear>("head", config_.hidden_dim, config_.vocab_size, rng, 0.02);
}

nn::ParamList StrokeEncoder::parameters() {
    nn::ParamList out;
    out.push_back(&tok_emb_);
    out.push_back(&pos_emb_);
    for (auto& b : blocks_) b->collect(out);
    ln_f_->collect(out);
    head_->collect(out);
    return out;
}

std::size_t StrokeEncoder::parameter_count() {
    return nn::total_size(parameters());
}

void StrokeEncoder::forward_tokens(const std::vector<int>& tokens_flat, int batch, int seq,
                                   bool train, Rng* rng) {
    x0_.resize(config_.hidden_dim, static_cast<Eigen::Index>(batch) * seq);
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < seq; ++t) {
            const int tok = tokens_flat[static_cast<std::size_t>(b) * seq + t];
            const Eigen::Index col = static_cast<Eigen::Index>(b) * seq + t;
            x0_.col(col) = tok_emb_.w.col(tok) + pos_emb_.w.col(t);
        }
    }
    const Matrix* x = &x0_;
    for (auto& blk : blocks_) x = &blk->forward(*x, batch, seq, train, rng);
    stack_out_ = *x;
    ln_f_->forward(stack_out_, lnf_out_);
    head_->forward(lnf_out_, logits_);
}

Matrix StrokeEncoder::next_token_logits(std::span<const int> prefix) {
    if (prefix.empty()) throw ValueError("prefix must be non-empty");
    if (static_cast<int>(prefix.size()) > config_.max_len)
        throw ValueError("prefix length " + std::to_string(prefix.size()) + " exceeds max_len " +
                         std::to_string(config_.max_len));
    for (int tok : prefix)
        if (tok < 0 || tok >= config_.vocab_size)
            throw ValueError("token id out of range: " + std::to_string(tok));
    tokens_flat_.assign(prefix.begin(), prefix.end());
    forward_tokens(tokens_flat_, 1, static_cast<int>(prefix.size()), false, nullptr);
    return logits_.transpose();  // [len x vocab]
}

double StrokeEncoder::batch_loss(const std::vector<std::vector<int>>& batch, bool train, Rng* rng) {
    if (batch.empty()) throw ValueError("empty batch");
    int seq = 0;
    for (const auto& s : batch) {
        if (s.size() < 2) throw ValueError("sequences must hold at least [BOS][EOS]");
        if (static_cast<int>(s.size()) > config_.max_len)
            throw ValueError("sequence exceeds max_len");
        seq = std::max(seq, static_cast<int>(s.size()) - 1);
    }
    const int B = static_cast<int>(batch.size());
    tokens_flat_.assign(static_cast<std::size_t>(B) * seq, vocab::kPad);
    std::vector<int> targets(static_cast<std::size_t>(B) * seq, -1);
    for (int b = 0; b < B; ++b) {
        const auto& s = batch[static_cast<std::size_t>(b)];
        for (std::size_t t = 0; t + 1 < s.size(); ++t) {
            tokens_flat_[static_cast<std::size_t>(b) * seq + t] = s[t];
            targets[static_cast<std::size_t>(b) * seq + t] = s[t + 1];
        }
    }

    forward_tokens(tokens_flat_, B, seq, train, rng);
    const double loss = nn::cross_entropy(logits_, targets, dlogits_);
    if (!train) return loss;

    head_->backward(lnf_out_, dlogits_, dlnf_);
    ln_f_->backward(stack_out_, dlnf_, dstack_);
    Matrix* dy = &dstack_;
    Matrix dx;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
        (*it)->backward(*dy, B, seq, train, dx);
        dstack_ = dx;
        dy = &dstack_;
    }
    // embedding gradients: scatter column gradients to token/position rows
    for (int b = 0; b < B; ++b) {
        for (int t = 0; t < seq; ++t) {
            const Eigen::Index col = static_cast<Eigen::Index>(b) * seq + t;
            const int tok = tokens_flat_[static_cast<std::size_t>(b) * seq + t];
            tok_emb_.g.col(tok) += dstack_.col(col);
            pos_emb_.g.col(t) += dstack_.col(col);
        }
    }
    return loss;
}

double StrokeEncoder::evaluate_loss(const std::vector<std::vector<int>>& sequences) {
    return batch_loss(sequences, false, nullptr);
}

double StrokeEncoder::train_step(const std::vector<std::vector<int>>& batch, nn::Adam& opt,
                                 Rng& rng) {
    const auto params = parameters();
    nn::zero_grads(params);
    const double loss = batch_loss(batch, true, &rng);
    opt.step(params);
    return loss;
}

Vector StrokeEncoder::embed_tokens(std::span<const int> tokens) {
    if (tokens.empty()) throw ValueError("cannot embed an empty token sequence");
    if (static_cast<int>(tokens.size()) > config_.max_len)
        throw ValueError("token sequence exceeds max_len");
    tokens_flat_.assign(tokens.begin(), tokens.end());
    forward_tokens(tokens_flat_, 1, static_cast<int>(tokens.size()), false, nullptr);
    return lnf_out_.col(lnf_out_.cols() - 1);  // final-layer state at the [EOS] slot
}

Vector StrokeEncoder::embed(const StrokeCode& code) {
    const auto tokens = tokenize(code);
    return embed_tokens(tokens);
}

StrokeEncoder train_encoder(const std::vector<StrokeCode>& corpus, const EncoderConfig& config,
                            std::uint64_t seed, int steps, EncoderMeta* meta_out, int batch_size,
                            double lr) {
    if (corpus.empty()) throw ValueError("encoder training corpus is empty");
    std::vector<std::vector<int>> sequences;
    sequences.reserve(corpus.size());
    for (const auto& code : corpus) sequences.push_back(tokenize(code));

    StrokeEncoder model(config, seed);
    nn::Adam opt({lr, 0.9, 0.999, 1e-8});
    Rng rng(seed ^ 0x5EedF00dull);

    EncoderMeta meta;
    for (int step = 0; step < steps; ++step) {
        std::vector<std::vector<int>> batch;
        const int bs = std::min<int>(batch_size, static_cast<int>(sequences.size()));
        for (int i = 0; i < bs; ++i) {
            const auto idx = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(sequences.size()) - 1));
            batch.push_back(sequences[idx]);
        }
        const double loss = model.train_step(batch, opt, rng);
        meta.loss_curve.push_back(loss);
        meta.final_loss = loss;
    }
    meta.steps = static_cast<std::uint64_t>(steps);
    if (meta_out) *meta_out = std::move(meta);
    return model;
}

// --- checkpoint ----------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'C', 'S', 'E', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw CorruptFileError("encoder checkpoint truncated");
    return v;
}
}  // namespace

void save_encoder_checkpoint(const std::filesystem::path& path, StrokeEncoder& model,
                             const EncoderMeta& meta) {
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, 4);
    put(out, kVersion);
    const auto& c = model.config();
    put(out, static_cast<std::int32_t>(c.vocab_size));
    put(out, static_cast<std::int32_t>(c.hidden_dim));
    put(out, static_cast<std::int32_t>(c.layers));
    put(out, static_cast<std::int32_t>(c.heads));
    put(out, static_cast<std::int32_t>(c.max_len));
    put(out, c.dropout);
    put(out, meta.steps);
    put(out, meta.final_loss);
    nn::write_params(out, model.parameters());
    atomic_write_file(path, out.str());
}

LoadedEncoder load_encoder_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw CorruptFileError(path.string() + " is not an encoder checkpoint");
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion)
        throw VersionError(path.string() + ": unsupported encoder checkpoint version " +
                           std::to_string(version));
    EncoderConfig c;
    c.vocab_size = get<std::int32_t>(in);
    c.hidden_dim = get<std::int32_t>(in);
    c.layers = get<std::int32_t>(in);
    c.heads = get<std::int32_t>(in);
    c.max_len = get<std::int32_t>(in);
    c.dropout = get<double>(in);
    LoadedEncoder result;
    result.meta.steps = get<std::uint64_t>(in);
    result.meta.final_loss = get<double>(in);
    result.model = std::make_unique<StrokeEncoder>(c, 0);
    nn::read_params(in, result.model->parameters());
    return result;
}

}  // namespace calli
