#pragma once

#include <string>
#include <vector>

#include "calli/nn/core.hpp"

namespace calli::nn {

// Layers follow the convention: forward(x, y) writes y; backward(x, dy, dx)
// writes dx and *accumulates* parameter gradients, with the caller passing
// the same x it used in forward. Activations between layers are owned by the
// enclosing model, so nothing is cached twice.

class Linear {
public:
    Linear(std::string name, int in_dim, int out_dim, Rng& rng, double init_std = -1.0);

    // x: [in x N] -> y: [out x N]
    void forward(const Matrix& x, Matrix& y) const;
    void backward(const Matrix& x, const Matrix& dy, Matrix& dx);
    void backward_params_only(const Matrix& x, const Matrix& dy);

    void collect(ParamList& out) { out.push_back(&W_); out.push_back(&b_); }
    const Matrix& weight() const { return W_.w; }
    Matrix& weight_mut() { return W_.w; }
    Matrix& bias_mut() { return b_.w; }
    int in_dim() const { return static_cast<int>(W_.w.cols()); }
    int out_dim() const { return static_cast<int>(W_.w.rows()); }

private:
    Param W_;  // [out x in]
    Param b_;  // [out x 1]
};

// Column-wise layer norm with per-row affine. x: [dim x N].
class LayerNorm {
public:
    LayerNorm(std::string name, int dim);

    void forward(const Matrix& x, Matrix& y);
    void backward(const Matrix& x, const Matrix& dy, Matrix& dx);
    void collect(ParamList& out) { out.push_back(&gamma_); out.push_back(&beta_); }

private:
    Param gamma_, beta_;
    Matrix xhat_;
    Vector inv_std_;
    static constexpr double kEps = 1e-5;
};

// Group norm over [C x B*HW] activations laid out as per-sample column
// blocks of HW. Normalizes each (sample, group) slab; per-channel affine.
class GroupNorm {
public:
    GroupNorm(std::string name, int channels, int groups);

    void forward(const Matrix& x, int batch, Matrix& y);
    void backward(const Matrix& x, int batch, const Matrix& dy, Matrix& dx);
    void collect(ParamList& out) { out.push_back(&gamma_); out.push_back(&beta_); }
    int groups() const { return groups_; }

private:
    Param gamma_, beta_;
    int channels_, groups_;
    Matrix xhat_;
    Matrix inv_std_;  // [groups x batch]
    static constexpr double kEps = 1e-5;
};

// 3x3 convolution on [C x B*H*W] activations (stride 1 keeps the size;
// stride 2 halves it). Uses im2col + GEMM; the patch matrix is rebuilt in
// backward rather than cached.
class Conv2d {
public:
    Conv2d(std::string name, int in_ch, int out_ch, int stride, Rng& rng,
           bool zero_init = false);

    void forward(const Matrix& x, int batch, int h, int w, Matrix& y);
    void backward(const Matrix& x, int batch, int h, int w, const Matrix& dy, Matrix& dx);
    void collect(ParamList& out) { out.push_back(&W_); out.push_back(&b_); }

    static int out_size(int in_size, int stride) { return (in_size + 2 - 3) / stride + 1; }

private:
    void im2col(const Matrix& x, int batch, int h, int w, Matrix& cols) const;

    Param W_;  // [out_ch x in_ch*9]
    Param b_;  // [out_ch x 1]
    int in_ch_, out_ch_, stride_;
    Matrix cols_;   // scratch
    Matrix dcols_;  // scratch
};

// Elementwise activations; backward recomputes from the passed-in x.
void silu_forward(const Matrix& x, Matrix& y);
void silu_backward(const Matrix& x, const Matrix& dy, Matrix& dx);
void gelu_forward(const Matrix& x, Matrix& y);
void gelu_backward(const Matrix& x, const Matrix& dy, Matrix& dx);

// Nearest-neighbor 2x upsampling on [C x B*H*W] activations.
void upsample2x_forward(const Matrix& x, int batch, int h, int w, Matrix& y);
void upsample2x_backward(const Matrix& dy, int batch, int h, int w, Matrix& dx);

// y[:, b*HW + p] += v[:, b]: per-sample channel bias broadcast over pixels.
void add_per_sample(Matrix& y, const Matrix& v, int batch);
// dv[:, b] = sum_p dy[:, b*HW + p]
void reduce_per_sample(const Matrix& dy, int batch, Matrix& dv, bool accumulate);

// Causal multi-head self-attention over [d x B*T] (column = b*T + t).
class CausalSelfAttention {
public:
    CausalSelfAttention(std::string name, int dim, int heads, Rng& rng);

    void forward(const Matrix& x, int batch, int seq, Matrix& y);
    void backward(const Matrix& x, int batch, int seq, const Matrix& dy, Matrix& dx);
    void collect(ParamList& out);

private:
    Linear qkv_;
    Linear proj_;
    int dim_, heads_;
    Matrix qkv_out_;
    Matrix att_;      // concatenated softmax matrices, [T x B*heads*T]
    Matrix head_out_; // [d x B*T] pre-projection
    Matrix dqkv_, dhead_;
};

// Mean cross-entropy over masked columns of logits [V x N]. Targets use -1
// for masked-out positions. dlogits is scaled so it backpropagates the mean.
double cross_entropy(const Matrix& logits, const std::vector<int>& targets, Matrix& dlogits);

}  // namespace calli::nn
