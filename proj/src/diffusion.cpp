#include "calli/diffusion.hpp"

#include <cmath>

#include "calli/common.hpp"

namespace calli {

void Schedule::validate() const {
    if (T <= 0 || betas.size() != static_cast<std::size_t>(T) ||
        alphas.size() != static_cast<std::size_t>(T) ||
        alpha_bars.size() != static_cast<std::size_t>(T))
        throw ValueError("schedule arrays must all have length T");
    double prev_beta = 0.0;
    double running = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = beta(t);
        if (b <= 0.0 || b >= 1.0) throw ValueError("beta_t must lie in (0, 1)");
        if (b < prev_beta) throw ValueError("beta_t must be non-decreasing");
        prev_beta = b;
        if (std::abs(alpha(t) - (1.0 - b)) > 1e-15)
            throw ValueError("alpha_t must equal 1 - beta_t");
        running *= alpha(t);
        const double rel = std::abs(alpha_bar(t) - running) / running;
        if (rel > 1e-12) throw ValueError("alpha_bar_t drifted from the running product");
        if (t > 1 && alpha_bar(t) >= alpha_bar(t - 1))
            throw ValueError("alpha_bar must be strictly decreasing");
    }
}

Schedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
    if (T < 1) throw ValueError("schedule needs T >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ValueError("betas must satisfy 0 < beta_start <= beta_end < 1");
    if (kind != ScheduleKind::Linear) throw ValueError("unknown schedule kind");

    Schedule s;
    s.T = T;
    s.betas.resize(static_cast<std::size_t>(T));
    s.alphas.resize(static_cast<std::size_t>(T));
    s.alpha_bars.resize(static_cast<std::size_t>(T));
    double running = 1.0;
    for (int i = 0; i < T; ++i) {
        const double frac = (T == 1) ? 0.0 : static_cast<double>(i) / (T - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        s.betas[static_cast<std::size_t>(i)] = b;
        s.alphas[static_cast<std::size_t>(i)] = 1.0 - b;
        running *= 1.0 - b;
        s.alpha_bars[static_cast<std::size_t>(i)] = running;
    }
    s.validate();
    return s;
}

Matrix forward_sample(const Matrix& x0, std::span<const int> ts, const Matrix& eps,
                      const Schedule& schedule) {
    if (eps.rows() != x0.rows() || eps.cols() != x0.cols())
        throw ShapeError("eps must match x0's shape");
    if (static_cast<Eigen::Index>(ts.size()) != x0.cols())
        throw ShapeError("one timestep per sample required");
    Matrix z(x0.rows(), x0.cols());
    for (Eigen::Index b = 0; b < x0.cols(); ++b) {
        const int t = ts[static_cast<std::size_t>(b)];
        if (t < 1 || t > schedule.T) throw ValueError("timestep out of [1, T]");
        const double abar = schedule.alpha_bar(t);
        z.col(b) = std::sqrt(abar) * x0.col(b) + std::sqrt(1.0 - abar) * eps.col(b);
    }
    return z;
}

std::vector<double> forward_sample(const std::vector<double>& x0, int t,
                                   const std::vector<double>& eps, const Schedule& schedule) {
    if (eps.size() != x0.size()) throw ShapeError("eps must match x0's shape");
    if (t < 1 || t > schedule.T) throw ValueError("timestep out of [1, T]");
    const double abar = schedule.alpha_bar(t);
    const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
    std::vector<double> z(x0.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x0[i] + b * eps[i];
    return z;
}

LossDraw draw_loss_noise(int dim, int batch, const Schedule& schedule, Rng& rng) {
    LossDraw draw;
    draw.ts.resize(static_cast<std::size_t>(batch));
    for (auto& t : draw.ts) t = static_cast<int>(rng.uniform_int(1, schedule.T));
    draw.eps.resize(dim, batch);
    rng.fill_gaussian(draw.eps.data(), static_cast<std::size_t>(draw.eps.size()));
    return draw;
}

double training_loss_with(NoiseModel& model, const DiffusionBatch& batch, const LossDraw& draw,
                          const Schedule& schedule, bool backprop, Matrix* dcond) {
    if (batch.x0.cols() == 0) throw ValueError("empty training batch");
    if (batch.x0.rows() != model.sample_dim())
        throw ShapeError("x0 dimensionality does not match the model");
    if (model.cond_dim() > 0 && batch.cond.rows() != model.cond_dim())
        throw ShapeError("condition dimensionality does not match the model");

    const Matrix z = forward_sample(batch.x0, draw.ts, draw.eps, schedule);
    Matrix eps_hat;
    model.forward(z, draw.ts, batch.cond, eps_hat, backprop);

    const Matrix diff = eps_hat - draw.eps;
    const double n = static_cast<double>(diff.size());
    const double loss = diff.array().square().sum() / n;
    if (backprop) {
        const Matrix deps_hat = diff * (2.0 / n);
        model.backward(deps_hat, dcond);
    }
    return loss;
}

double training_loss(NoiseModel& model, const DiffusionBatch& batch, const Schedule& schedule,
                     Rng& rng, Matrix* dcond) {
    const LossDraw draw =
        draw_loss_noise(static_cast<int>(batch.x0.rows()),
                        static_cast<int>(batch.x0.cols()), schedule, rng);
    return training_loss_with(model, batch, draw, schedule, /*backprop=*/true, dcond);
}

Matrix ancestral_sample_from(NoiseModel& model, const Matrix& cond, const Schedule& schedule,
                             Matrix z, Rng& rng) {
    if (z.rows() != model.sample_dim()) throw ShapeError("z dimensionality mismatch");
    const auto B = static_cast<int>(z.cols());
    Matrix cond_batch = cond;
    if (model.cond_dim() > 0 && cond.cols() == 1 && B > 1)
        cond_batch = cond.replicate(1, B);

    std::vector<int> ts(static_cast<std::size_t>(B));
    Matrix eps_hat, zeta(z.rows(), z.cols());
    for (int t = schedule.T; t >= 1; --t) {
        std::fill(ts.begin(), ts.end(), t);
        model.forward(z, ts, cond_batch, eps_hat, /*train=*/false);
        const double alpha = schedule.alpha(t);
        const double abar = schedule.alpha_bar(t);
        const double coef = (1.0 - alpha) / std::sqrt(1.0 - abar);
        z = (z - coef * eps_hat) / std::sqrt(alpha);
        if (t > 1) {
            rng.fill_gaussian(zeta.data(), static_cast<std::size_t>(zeta.size()));
            z += std::sqrt(schedule.beta(t)) * zeta;
        }
    }
    return z.cwiseMax(-1.0).cwiseMin(1.0);
}

Matrix ancestral_sample(NoiseModel& model, const Matrix& cond, const Schedule& schedule, Rng& rng,
                        int batch) {
    Matrix z(model.sample_dim(), batch);
    rng.fill_gaussian(z.data(), static_cast<std::size_t>(z.size()));
    return ancestral_sample_from(model, cond, schedule, std::move(z), rng);
}

}  // namespace calli
