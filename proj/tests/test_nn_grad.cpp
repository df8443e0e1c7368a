// Finite-difference validation of every layer's backward pass, plus the
// assembled U-Net and sequence encoder. Loss is a fixed random linear
// functional of the output so dL/dy is a constant matrix.

#include <doctest.h>

#include "calli/denoiser.hpp"
#include "calli/nn/layers.hpp"
#include "calli/stroke_encoder.hpp"
#include "test_util.hpp"

using namespace calli;
using testutil::check_input_grads;
using testutil::check_param_grads;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian() * scale;
    return m;
}

}  // namespace

TEST_CASE("linear gradients") {
    Rng rng(1);
    nn::Linear lin("lin", 5, 7, rng);
    Matrix x = random_matrix(5, 3, rng);
    const Matrix c = random_matrix(7, 3, rng);
    const auto loss = [&] {
        Matrix y;
        lin.forward(x, y);
        return (y.array() * c.array()).sum();
    };
    nn::ParamList params;
    lin.collect(params);
    nn::zero_grads(params);
    Matrix y, dx;
    lin.forward(x, y);
    lin.backward(x, c, dx);
    CHECK(check_param_grads(params, loss).max_rel_err < 1e-6);
    CHECK(check_input_grads(x, dx, loss).max_rel_err < 1e-6);
}

TEST_CASE("layer norm gradients") {
    Rng rng(2);
    nn::LayerNorm ln("ln", 6);
    nn::ParamList params;
    ln.collect(params);
    params[0]->w = random_matrix(6, 1, rng, 0.5).array() + 1.0;
    params[1]->w = random_matrix(6, 1, rng, 0.5);
    Matrix x = random_matrix(6, 4, rng);
    const Matrix c = random_matrix(6, 4, rng);
    const auto loss = [&] {
        Matrix y;
        ln.forward(x, y);
        return (y.array() * c.array()).sum();
    };
    nn::zero_grads(params);
    Matrix y, dx;
    ln.forward(x, y);
    ln.backward(x, c, dx);
    CHECK(check_param_grads(params, loss).max_rel_err < 1e-5);
    CHECK(check_input_grads(x, dx, loss).max_rel_err < 1e-5);
}

TEST_CASE("group norm gradients") {
    Rng rng(3);
    const int batch = 2, channels = 6, hw = 4;
    nn::GroupNorm gn("gn", channels, 3);
    nn::ParamList params;
    gn.collect(params);
    params[0]->w = random_matrix(channels, 1, rng, 0.3).array() + 1.0;
    params[1]->w = random_matrix(channels, 1, rng, 0.3);
    Matrix x = random_matrix(channels, batch * hw, rng);
    const Matrix c = random_matrix(channels, batch * hw, rng);
    const auto loss = [&] {
        Matrix y;
        gn.forward(x, batch, y);
        return (y.array() * c.array()).sum();
    };
    nn::zero_grads(params);
    Matrix y, dx;
    gn.forward(x, batch, y);
    gn.backward(x, batch, c, dx);
    CHECK(check_param_grads(params, loss).max_rel_err < 1e-5);
    CHECK(check_input_grads(x, dx, loss).max_rel_err < 1e-5);
}

TEST_CASE("conv2d gradients at stride 1 and 2") {
    for (int stride : {1, 2}) {
        CAPTURE(stride);
        Rng rng(4);
        const int batch = 2, h = 4, w = 4, cin = 3, cout = 2;
        nn::Conv2d conv("conv", cin, cout, stride, rng);
        Matrix x = random_matrix(cin, batch * h * w, rng);
        const int ho = nn::Conv2d::out_size(h, stride), wo = nn::Conv2d::out_size(w, stride);
        const Matrix c = random_matrix(cout, batch * ho * wo, rng);
        const auto loss = [&] {
            Matrix y;
            conv.forward(x, batch, h, w, y);
            return (y.array() * c.array()).sum();
        };
        nn::ParamList params;
        conv.collect(params);
        nn::zero_grads(params);
        Matrix y, dx;
        conv.forward(x, batch, h, w, y);
        conv.backward(x, batch, h, w, c, dx);
        CHECK(check_param_grads(params, loss).max_rel_err < 1e-6);
        CHECK(check_input_grads(x, dx, loss).max_rel_err < 1e-6);
    }
}

TEST_CASE("activation gradients") {
    Rng rng(5);
    Matrix x = random_matrix(4, 6, rng);
    const Matrix c = random_matrix(4, 6, rng);
    SUBCASE("silu") {
        const auto loss = [&] {
            Matrix y;
            nn::silu_forward(x, y);
            return (y.array() * c.array()).sum();
        };
        Matrix dx;
        nn::silu_backward(x, c, dx);
        CHECK(check_input_grads(x, dx, loss).max_rel_err < 1e-7);
    }
    SUBCASE("gelu") {
        const auto loss = [&] {
            Matrix y;
            nn::gelu_forward(x, y);
            return (y.array() * c.array()).sum();
        };
        Matrix dx;
        nn::gelu_backward(x, c, dx);
        CHECK(check_input_grads(x, dx, loss).max_rel_err < 1e-7);
    }
}

TEST_CASE("attention gradients") {
    Rng rng(6);
    const int dim = 6, heads = 2, batch = 2, seq = 3;
    nn::CausalSelfAttention attn("attn", dim, heads, rng);
    Matrix x = random_matrix(dim, batch * seq, rng);
    const Matrix c = random_matrix(dim, batch * seq, rng);
    const auto loss = [&] {
        Matrix y;
        attn.forward(x, batch, seq, y);
        return (y.array() * c.array()).sum();
    };
    nn::ParamList params;
    attn.collect(params);
    nn::zero_grads(params);
    Matrix y, dx;
    attn.forward(x, batch, seq, y);
    attn.backward(x, batch, seq, c, dx);
    CHECK(check_param_grads(params, loss).max_rel_err < 1e-5);
    CHECK(check_input_grads(x, dx, loss).max_rel_err < 1e-5);
}

TEST_CASE("cross entropy gradient") {
    Rng rng(7);
    Matrix logits = random_matrix(5, 4, rng);
    const std::vector<int> targets = {1, -1, 4, 0};
    Matrix dlogits;
    nn::cross_entropy(logits, targets, dlogits);
    const auto loss = [&] {
        Matrix d;
        return nn::cross_entropy(logits, targets, d);
    };
    CHECK(check_input_grads(logits, dlogits, loss).max_rel_err < 1e-6);
    // masked column gets zero gradient
    CHECK(dlogits.col(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("upsample2x adjointness") {
    Rng rng(8);
    const int batch = 2, h = 3, w = 3, ch = 2;
    Matrix x = random_matrix(ch, batch * h * w, rng);
    Matrix y;
    nn::upsample2x_forward(x, batch, h, w, y);
    Matrix dy = random_matrix(ch, batch * 4 * h * w, rng);
    Matrix dx;
    nn::upsample2x_backward(dy, batch, h, w, dx);
    // <y, dy> == <x, dx> for a linear operator and its adjoint
    CHECK((x.array() * dx.array()).sum() ==
          doctest::Approx((y.array() * dy.array()).sum()).epsilon(1e-12));
}

TEST_CASE("full unet gradients incl condition path") {
    Rng rng(9);
    UNetConfig cfg;
    cfg.in_channels = 1;
    cfg.base_channels = 4;
    cfg.channel_multipliers = {1, 2};
    cfg.res_blocks = 1;
    cfg.time_embed_dim = 8;
    cfg.cond_input_dim = 3;
    cfg.resolution = 8;
    cfg.norm_groups = 2;
    UNet unet(cfg, 17);

    const int batch = 2;
    Matrix z = random_matrix(unet.sample_dim(), batch, rng);
    Matrix cond = random_matrix(cfg.cond_input_dim, batch, rng);
    const std::vector<int> ts = {3, 11};
    const Matrix c = random_matrix(unet.sample_dim(), batch, rng);

    const auto loss = [&] {
        Matrix eps;
        unet.forward(z, ts, cond, eps, true);
        return (eps.array() * c.array()).sum();
    };
    const auto params = unet.parameters();
    nn::zero_grads(params);
    Matrix eps, dcond;
    unet.forward(z, ts, cond, eps, true);
    unet.backward(c, &dcond);

    const auto pres = check_param_grads(params, loss);
    CAPTURE(pres.worst);
    CHECK(pres.max_rel_err < 2e-5);
    const auto cres = check_input_grads(cond, dcond, loss);
    CAPTURE(cres.worst);
    CHECK(cres.max_rel_err < 2e-5);

    // the condition projections receive gradient on a random batch
    double cond_grad_norm = 0;
    for (auto* p : params)
        if (p->name.rfind("cond_stage", 0) == 0) cond_grad_norm += p->g.cwiseAbs().sum();
    CHECK(cond_grad_norm > 0.0);
}

TEST_CASE("stroke encoder gradients") {
    EncoderConfig cfg;
    cfg.hidden_dim = 8;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.max_len = 8;
    StrokeEncoder model(cfg, 5);

    const std::vector<std::vector<int>> batch = {{1, 5, 4, 3, 2}, {1, 30, 2}};
    const auto params = model.parameters();
    nn::zero_grads(params);
    model.evaluate_loss(batch);  // warm the shapes
    // run a training-style pass without the optimizer step
    nn::Adam opt({0.0, 0.9, 0.999, 1e-8});
    Rng rng(0);
    model.train_step(batch, opt, rng);  // lr 0: params unchanged, grads filled

    const auto loss = [&] { return model.evaluate_loss(batch); };
    const auto res = check_param_grads(params, loss, 1e-5);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-4);
}
