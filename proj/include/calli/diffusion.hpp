#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "calli/linalg.hpp"
#include "calli/nn/core.hpp"
#include "calli/rng.hpp"

namespace calli {

// Variance schedule. Timesteps are 1-based in the API; index t-1 internally.
struct Schedule {
    int T = 0;
    std::vector<double> betas;       // beta_t in (0, 1), non-decreasing
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // cumulative product of alphas

    double beta(int t) const { return betas[static_cast<std::size_t>(t - 1)]; }
    double alpha(int t) const { return alphas[static_cast<std::size_t>(t - 1)]; }
    double alpha_bar(int t) const { return alpha_bars[static_cast<std::size_t>(t - 1)]; }

    void validate() const;
};

enum class ScheduleKind { Linear };

Schedule make_schedule(int T, double beta_start, double beta_end,
                       ScheduleKind kind = ScheduleKind::Linear);

// Interface the diffusion loop needs from a noise predictor. Batches are
// column-per-sample: z and eps_hat are [C*H*W x B], cond is [cond_dim x B]
// (ignored when cond_dim() == 0), ts holds one timestep per sample.
class NoiseModel {
public:
    virtual ~NoiseModel() = default;
    virtual int sample_dim() const = 0;  // C*H*W
    virtual int cond_dim() const = 0;    // 0 = unconditional

    virtual void forward(const Matrix& z, std::span<const int> ts, const Matrix& cond,
                         Matrix& eps_hat, bool train) = 0;
    // Backpropagates dL/d eps_hat; accumulates parameter gradients and, when
    // dcond is non-null, writes dL/d cond.
    virtual void backward(const Matrix& deps_hat, Matrix* dcond) = 0;
    virtual nn::ParamList parameters() = 0;
};

// One-shot forward corruption: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Matrix forward_sample(const Matrix& x0, std::span<const int> ts, const Matrix& eps,
                      const Schedule& schedule);
std::vector<double> forward_sample(const std::vector<double>& x0, int t,
                                   const std::vector<double>& eps, const Schedule& schedule);

struct DiffusionBatch {
    Matrix x0;    // [D x B]
    Matrix cond;  // [cond_dim x B]; may be empty for unconditional models
};

struct LossDraw {
    std::vector<int> ts;  // one uniform draw in [1, T] per sample
    Matrix eps;           // [D x B] standard normal
};

LossDraw draw_loss_noise(int dim, int batch, const Schedule& schedule, Rng& rng);

// Monte-Carlo estimate of the noise-prediction objective: per-element mean
// squared error between predicted and drawn noise. Gradients accumulate into
// the model parameters (and dcond when given).
double training_loss_with(NoiseModel& model, const DiffusionBatch& batch, const LossDraw& draw,
                          const Schedule& schedule, bool backprop = true,
                          Matrix* dcond = nullptr);
double training_loss(NoiseModel& model, const DiffusionBatch& batch, const Schedule& schedule,
                     Rng& rng, Matrix* dcond = nullptr);

// Ancestral DDPM sampling with sigma_t = sqrt(beta_t); the final step adds
// no noise and the result is clamped to [-1, 1]. `cond` may be empty for
// unconditional models; all samples share it otherwise.
Matrix ancestral_sample(NoiseModel& model, const Matrix& cond, const Schedule& schedule, Rng& rng,
                        int batch);
Matrix ancestral_sample_from(NoiseModel& model, const Matrix& cond, const Schedule& schedule,
                             Matrix z, Rng& rng);

}  // namespace calli
