#include "calli/nn/layers.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "calli/common.hpp"

namespace calli::nn {

// --- core --------------------------------------------------------------------

std::size_t total_size(const ParamList& params) {
    std::size_t n = 0;
    for (const auto* p : params) n += p->size();
    return n;
}

void zero_grads(const ParamList& params) {
    for (auto* p : params) p->zero_grad();
}

bool params_equal(const ParamList& a, const ParamList& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i]->w.rows() != b[i]->w.rows() || a[i]->w.cols() != b[i]->w.cols()) return false;
        if (std::memcmp(a[i]->w.data(), b[i]->w.data(), a[i]->size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

void init_gaussian(Param& p, Rng& rng, double stddev) {
    for (Eigen::Index i = 0; i < p.w.size(); ++i) p.w.data()[i] = rng.gaussian() * stddev;
}

void Adam::step(const ParamList& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto* p : params) {
        p->m.array() = cfg_.beta1 * p->m.array() + (1.0 - cfg_.beta1) * p->g.array();
        p->v.array() = cfg_.beta2 * p->v.array() + (1.0 - cfg_.beta2) * p->g.array().square();
        p->w.array() -=
            cfg_.lr * (p->m.array() / bc1) / ((p->v.array() / bc2).sqrt() + cfg_.eps);
    }
}

void write_params(std::ostream& out, const ParamList& params) {
    const auto write_u64 = [&out](std::uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    write_u64(params.size());
    for (const auto* p : params) {
        write_u64(p->name.size());
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_u64(static_cast<std::uint64_t>(p->w.rows()));
        write_u64(static_cast<std::uint64_t>(p->w.cols()));
        out.write(reinterpret_cast<const char*>(p->w.data()),
                  static_cast<std::streamsize>(p->size() * sizeof(double)));
    }
}

void read_params(std::istream& in, const ParamList& params) {
    const auto read_u64 = [&in]() {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw CorruptFileError("parameter blob truncated");
        return v;
    };
    const std::uint64_t count = read_u64();
    if (count != params.size())
        throw CorruptFileError("parameter count mismatch: file has " + std::to_string(count) +
                               ", model has " + std::to_string(params.size()));
    for (auto* p : params) {
        const std::uint64_t name_len = read_u64();
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t rows = read_u64();
        const std::uint64_t cols = read_u64();
        if (!in) throw CorruptFileError("parameter blob truncated");
        if (name != p->name || rows != static_cast<std::uint64_t>(p->w.rows()) ||
            cols != static_cast<std::uint64_t>(p->w.cols()))
            throw CorruptFileError("parameter mismatch at '" + p->name + "' (file has '" + name +
                                   "' " + std::to_string(rows) + "x" + std::to_string(cols) + ")");
        in.read(reinterpret_cast<char*>(p->w.data()),
                static_cast<std::streamsize>(p->size() * sizeof(double)));
        if (!in) throw CorruptFileError("parameter blob truncated");
    }
}

// --- Linear ------------------------------------------------------------------

Linear::Linear(std::string name, int in_dim, int out_dim, Rng& rng, double init_std)
    : W_(name + ".weight", out_dim, in_dim), b_(name + ".bias", out_dim, 1) {
    const double std = init_std >= 0 ? init_std : std::sqrt(1.0 / in_dim);
    init_gaussian(W_, rng, std);
}

void Linear::forward(const Matrix& x, Matrix& y) const {
    gemm(y, W_.w, x);
    y.colwise() += b_.w.col(0);
}

void Linear::backward_params_only(const Matrix& x, const Matrix& dy) {
    gemm(W_.g, dy, x.transpose(), /*accumulate=*/true);
    b_.g.col(0) += dy.rowwise().sum();
}

void Linear::backward(const Matrix& x, const Matrix& dy, Matrix& dx) {
    backward_params_only(x, dy);
    gemm(dx, W_.w.transpose(), dy);
}

// --- LayerNorm ---------------------------------------------------------------

LayerNorm::LayerNorm(std::string name, int dim)
    : gamma_(name + ".gamma", dim, 1), beta_(name + ".beta", dim, 1) {
    gamma_.w.setOnes();
}

void LayerNorm::forward(const Matrix& x, Matrix& y) {
    const auto n = x.rows();
    const auto cols = x.cols();
    xhat_.resize(n, cols);
    inv_std_.resize(cols);
    y.resize(n, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        const double mean = x.col(c).mean();
        const double var = (x.col(c).array() - mean).square().sum() / static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + kEps);
        inv_std_(c) = inv;
        xhat_.col(c) = (x.col(c).array() - mean) * inv;
        y.col(c) = xhat_.col(c).cwiseProduct(gamma_.w.col(0)) + beta_.w.col(0);
    }
}

void LayerNorm::backward(const Matrix& x, const Matrix& dy, Matrix& dx) {
    (void)x;
    const auto n = static_cast<double>(dy.rows());
    dx.resize(dy.rows(), dy.cols());
    for (Eigen::Index c = 0; c < dy.cols(); ++c) {
        const Vector dxhat = dy.col(c).cwiseProduct(gamma_.w.col(0));
        const double mean_dxhat = dxhat.mean();
        const double mean_dxhat_xhat = dxhat.cwiseProduct(xhat_.col(c)).mean();
        dx.col(c) = inv_std_(c) * (dxhat.array() - mean_dxhat -
                                   xhat_.col(c).array() * mean_dxhat_xhat);
        gamma_.g.col(0) += dy.col(c).cwiseProduct(xhat_.col(c));
        beta_.g.col(0) += dy.col(c);
    }
    (void)n;
}

// --- GroupNorm ---------------------------------------------------------------

GroupNorm::GroupNorm(std::string name, int channels, int groups)
    : gamma_(name + ".gamma", channels, 1),
      beta_(name + ".beta", channels, 1),
      channels_(channels),
      groups_(groups) {
    if (channels % groups != 0)
        throw ValueError("group norm: " + std::to_string(channels) + " channels not divisible by " +
                         std::to_string(groups) + " groups");
    gamma_.w.setOnes();
}

void GroupNorm::forward(const Matrix& x, int batch, Matrix& y) {
    const auto hw = x.cols() / batch;
    const int cg = channels_ / groups_;
    xhat_.resize(x.rows(), x.cols());
    inv_std_.resize(groups_, batch);
    y.resize(x.rows(), x.cols());
    for (int b = 0; b < batch; ++b) {
        for (int g = 0; g < groups_; ++g) {
            auto slab = x.block(g * cg, b * hw, cg, hw);
            const double mean = slab.mean();
            const double var = (slab.array() - mean).square().sum() /
                               static_cast<double>(slab.size());
            const double inv = 1.0 / std::sqrt(var + kEps);
            inv_std_(g, b) = inv;
            xhat_.block(g * cg, b * hw, cg, hw) = (slab.array() - mean) * inv;
        }
        for (int c = 0; c < channels_; ++c)
            y.row(c).segment(b * hw, hw) =
                gamma_.w(c, 0) * xhat_.row(c).segment(b * hw, hw).array() + beta_.w(c, 0);
    }
}

void GroupNorm::backward(const Matrix& x, int batch, const Matrix& dy, Matrix& dx) {
    (void)x;
    const auto hw = dy.cols() / batch;
    const int cg = channels_ / groups_;
    dx.resize(dy.rows(), dy.cols());
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < channels_; ++c) {
            gamma_.g(c, 0) += dy.row(c)
                                  .segment(b * hw, hw)
                                  .cwiseProduct(xhat_.row(c).segment(b * hw, hw))
                                  .sum();
            beta_.g(c, 0) += dy.row(c).segment(b * hw, hw).sum();
        }
        for (int g = 0; g < groups_; ++g) {
            auto dy_slab = dy.block(g * cg, b * hw, cg, hw);
            auto xhat_slab = xhat_.block(g * cg, b * hw, cg, hw);
            Matrix dxhat(cg, hw);
            for (int r = 0; r < cg; ++r)
                dxhat.row(r) = dy_slab.row(r) * gamma_.w(g * cg + r, 0);
            const double n = static_cast<double>(dxhat.size());
            const double mean_dxhat = dxhat.sum() / n;
            const double mean_dxhat_xhat = dxhat.cwiseProduct(xhat_slab).sum() / n;
            dx.block(g * cg, b * hw, cg, hw) =
                inv_std_(g, b) *
                (dxhat.array() - mean_dxhat - xhat_slab.array() * mean_dxhat_xhat);
        }
    }
}

// --- Conv2d ------------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int stride, Rng& rng, bool zero_init)
    : W_(name + ".weight", out_ch, in_ch * 9),
      b_(name + ".bias", out_ch, 1),
      in_ch_(in_ch),
      out_ch_(out_ch),
      stride_(stride) {
    if (!zero_init) init_gaussian(W_, rng, std::sqrt(2.0 / (in_ch * 9)));
}

void Conv2d::im2col(const Matrix& x, int batch, int h, int w, Matrix& cols) const {
    const int ho = out_size(h, stride_);
    const int wo = out_size(w, stride_);
    cols.resize(static_cast<Eigen::Index>(in_ch_) * 9,
                static_cast<Eigen::Index>(batch) * ho * wo);
    parallel_for(static_cast<std::size_t>(batch), [&](std::size_t b) {
        const auto in_base = static_cast<Eigen::Index>(b) * h * w;
        const auto out_base = static_cast<Eigen::Index>(b) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const Eigen::Index col = out_base + static_cast<Eigen::Index>(oy) * wo + ox;
                double* dst = cols.data() + col * cols.rows();
                for (int ci = 0; ci < in_ch_; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * stride_ + ky - 1;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * stride_ + kx - 1;
                            double v = 0.0;
                            if (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                v = x(ci, in_base + static_cast<Eigen::Index>(iy) * w + ix);
                            dst[ci * 9 + ky * 3 + kx] = v;
                        }
                    }
                }
            }
        }
    });
}

void Conv2d::forward(const Matrix& x, int batch, int h, int w, Matrix& y) {
    im2col(x, batch, h, w, cols_);
    gemm(y, W_.w, cols_);
    y.colwise() += b_.w.col(0);
}

void Conv2d::backward(const Matrix& x, int batch, int h, int w, const Matrix& dy, Matrix& dx) {
    const int ho = out_size(h, stride_);
    const int wo = out_size(w, stride_);

    im2col(x, batch, h, w, cols_);
    gemm(W_.g, dy, cols_.transpose(), /*accumulate=*/true);
    b_.g.col(0) += dy.rowwise().sum();

    gemm(dcols_, W_.w.transpose(), dy);
    dx = Matrix::Zero(x.rows(), x.cols());
    parallel_for(static_cast<std::size_t>(batch), [&](std::size_t b) {
        const auto in_base = static_cast<Eigen::Index>(b) * h * w;
        const auto out_base = static_cast<Eigen::Index>(b) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const Eigen::Index col = out_base + static_cast<Eigen::Index>(oy) * wo + ox;
                const double* src = dcols_.data() + col * dcols_.rows();
                for (int ci = 0; ci < in_ch_; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * stride_ + ky - 1;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * stride_ + kx - 1;
                            if (ix < 0 || ix >= w) continue;
                            dx(ci, in_base + static_cast<Eigen::Index>(iy) * w + ix) +=
                                src[ci * 9 + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    });
}

// --- activations --------------------------------------------------------------

void silu_forward(const Matrix& x, Matrix& y) {
    y = x.array() / (1.0 + (-x.array()).exp());
}

void silu_backward(const Matrix& x, const Matrix& dy, Matrix& dx) {
    const auto sig = 1.0 / (1.0 + (-x.array()).exp());
    dx = dy.array() * sig * (1.0 + x.array() * (1.0 - sig));
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

void gelu_forward(const Matrix& x, Matrix& y) {
    const auto u = kGeluC * (x.array() + kGeluA * x.array().cube());
    y = 0.5 * x.array() * (1.0 + u.tanh());
}

void gelu_backward(const Matrix& x, const Matrix& dy, Matrix& dx) {
    const auto u = kGeluC * (x.array() + kGeluA * x.array().cube());
    const auto t = u.tanh();
    const auto du = kGeluC * (1.0 + 3.0 * kGeluA * x.array().square());
    dx = dy.array() * (0.5 * (1.0 + t) + 0.5 * x.array() * (1.0 - t.square()) * du);
}

// --- resampling ----------------------------------------------------------------

void upsample2x_forward(const Matrix& x, int batch, int h, int w, Matrix& y) {
    const int h2 = h * 2, w2 = w * 2;
    y.resize(x.rows(), static_cast<Eigen::Index>(batch) * h2 * w2);
    for (int b = 0; b < batch; ++b) {
        const auto in_base = static_cast<Eigen::Index>(b) * h * w;
        const auto out_base = static_cast<Eigen::Index>(b) * h2 * w2;
        for (int y2 = 0; y2 < h2; ++y2)
            for (int x2 = 0; x2 < w2; ++x2)
                y.col(out_base + static_cast<Eigen::Index>(y2) * w2 + x2) =
                    x.col(in_base + static_cast<Eigen::Index>(y2 / 2) * w + (x2 / 2));
    }
}

void upsample2x_backward(const Matrix& dy, int batch, int h, int w, Matrix& dx) {
    const int h2 = h * 2, w2 = w * 2;
    dx = Matrix::Zero(dy.rows(), static_cast<Eigen::Index>(batch) * h * w);
    for (int b = 0; b < batch; ++b) {
        const auto in_base = static_cast<Eigen::Index>(b) * h * w;
        const auto out_base = static_cast<Eigen::Index>(b) * h2 * w2;
        for (int y2 = 0; y2 < h2; ++y2)
            for (int x2 = 0; x2 < w2; ++x2)
                dx.col(in_base + static_cast<Eigen::Index>(y2 / 2) * w + (x2 / 2)) +=
                    dy.col(out_base + static_cast<Eigen::Index>(y2) * w2 + x2);
    }
}

// --- broadcast helpers ----------------------------------------------------------

void add_per_sample(Matrix& y, const Matrix& v, int batch) {
    const auto hw = y.cols() / batch;
    for (int b = 0; b < batch; ++b)
        y.middleCols(static_cast<Eigen::Index>(b) * hw, hw).colwise() += v.col(b);
}

void reduce_per_sample(const Matrix& dy, int batch, Matrix& dv, bool accumulate) {
    const auto hw = dy.cols() / batch;
    if (!accumulate) dv = Matrix::Zero(dy.rows(), batch);
    for (int b = 0; b < batch; ++b)
        dv.col(b) += dy.middleCols(static_cast<Eigen::Index>(b) * hw, hw).rowwise().sum();
}

// --- attention -------------------------------------------------------------------

CausalSelfAttention::CausalSelfAttention(std::string name, int dim, int heads, Rng& rng)
    : qkv_(name + ".qkv", dim, 3 * dim, rng, 0.02),
      proj_(name + ".proj", dim, dim, rng, 0.02),
      dim_(dim),
      heads_(heads) {
    if (dim % heads != 0) throw ValueError("attention dim must be divisible by heads");
}

void CausalSelfAttention::collect(ParamList& out) {
    qkv_.collect(out);
    proj_.collect(out);
}

void CausalSelfAttention::forward(const Matrix& x, int batch, int seq, Matrix& y) {
    const int hd = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    qkv_.forward(x, qkv_out_);
    head_out_.resize(dim_, x.cols());
    att_.resize(seq, static_cast<Eigen::Index>(batch) * heads_ * seq);

    parallel_for(static_cast<std::size_t>(batch) * heads_, [&](std::size_t bh) {
        const int b = static_cast<int>(bh) / heads_;
        const int h = static_cast<int>(bh) % heads_;
        const auto col0 = static_cast<Eigen::Index>(b) * seq;
        auto q = qkv_out_.block(h * hd, col0, hd, seq);
        auto k = qkv_out_.block(dim_ + h * hd, col0, hd, seq);
        auto v = qkv_out_.block(2 * dim_ + h * hd, col0, hd, seq);

        Matrix scores = (q.transpose() * k) * scale;  // [T x T], row = query
        auto att = att_.block(0, static_cast<Eigen::Index>(bh) * seq, seq, seq);
        for (int i = 0; i < seq; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j));
            double sum = 0;
            for (int j = 0; j <= i; ++j) {
                const double e = std::exp(scores(i, j) - mx);
                att(i, j) = e;
                sum += e;
            }
            for (int j = 0; j <= i; ++j) att(i, j) /= sum;
            for (int j = i + 1; j < seq; ++j) att(i, j) = 0.0;
        }
        head_out_.block(h * hd, col0, hd, seq).noalias() = v * att.transpose();
    });
    proj_.forward(head_out_, y);
}

void CausalSelfAttention::backward(const Matrix& x, int batch, int seq, const Matrix& dy,
                                   Matrix& dx) {
    const int hd = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    proj_.backward(head_out_, dy, dhead_);
    dqkv_ = Matrix::Zero(3 * dim_, x.cols());

    parallel_for(static_cast<std::size_t>(batch) * heads_, [&](std::size_t bh) {
        const int b = static_cast<int>(bh) / heads_;
        const int h = static_cast<int>(bh) % heads_;
        const auto col0 = static_cast<Eigen::Index>(b) * seq;
        auto q = qkv_out_.block(h * hd, col0, hd, seq);
        auto k = qkv_out_.block(dim_ + h * hd, col0, hd, seq);
        auto v = qkv_out_.block(2 * dim_ + h * hd, col0, hd, seq);
        auto att = att_.block(0, static_cast<Eigen::Index>(bh) * seq, seq, seq);
        auto dO = dhead_.block(h * hd, col0, hd, seq);

        Matrix dP = dO.transpose() * v;  // [T x T]
        Matrix dS(seq, seq);
        for (int i = 0; i < seq; ++i) {
            const double dot = dP.row(i).cwiseProduct(att.row(i)).sum();
            dS.row(i) = att.row(i).array() * (dP.row(i).array() - dot);
        }
        dqkv_.block(h * hd, col0, hd, seq).noalias() = (k * dS.transpose()) * scale;
        dqkv_.block(dim_ + h * hd, col0, hd, seq).noalias() = (q * dS) * scale;
        dqkv_.block(2 * dim_ + h * hd, col0, hd, seq).noalias() = dO * att;
    });
    qkv_.backward(x, dqkv_, dx);
}

// --- loss -----------------------------------------------------------------------

double cross_entropy(const Matrix& logits, const std::vector<int>& targets, Matrix& dlogits) {
    if (static_cast<Eigen::Index>(targets.size()) != logits.cols())
        throw ShapeError("cross_entropy: one target per logit column required");
    dlogits = Matrix::Zero(logits.rows(), logits.cols());
    double loss = 0;
    std::size_t count = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const int t = targets[static_cast<std::size_t>(c)];
        if (t < 0) continue;
        if (t >= logits.rows()) throw ValueError("cross_entropy: target out of range");
        const double mx = logits.col(c).maxCoeff();
        const auto ex = (logits.col(c).array() - mx).exp();
        const double sum = ex.sum();
        loss += std::log(sum) - (logits(t, c) - mx);
        dlogits.col(c) = ex / sum;
        dlogits(t, c) -= 1.0;
        ++count;
    }
    if (count == 0) throw ValueError("cross_entropy: no unmasked positions");
    dlogits /= static_cast<double>(count);
    return loss / static_cast<double>(count);
}

}  // namespace calli::nn
