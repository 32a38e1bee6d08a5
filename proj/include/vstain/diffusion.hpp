#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vstain/image.hpp"
#include "vstain/rng.hpp"

namespace vstain::diffusion {

/// Variance schedule beta_1..beta_T and cumulative signal retention
/// gamma_t = prod_{s<=t} (1 - beta_s), with gamma_0 = 1.
class NoiseSchedule {
public:
    NoiseSchedule(std::vector<double> betas, std::string kind = "custom");

    int steps() const { return static_cast<int>(betas_.size()); }
    /// 1-based, t in [1, T].
    double beta(int t) const;
    /// t in [0, T].
    double gamma(int t) const;
    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& gammas() const { return gammas_; }
    const std::string& kind() const { return kind_; }

    /// Stable identity over the exact beta values.
    std::string hash() const;

private:
    std::vector<double> betas_;
    std::vector<double> gammas_;
    std::string kind_;
};

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);
/// Cosine-of-time schedule with offset s = 0.008, betas capped at 0.999.
NoiseSchedule make_cosine_schedule(int steps);

struct PosteriorParams {
    ImageTensor mu;
    double sigma2 = 0.0;
};

/// One forward step: sqrt(1 - beta) * prev + sqrt(beta) * noise.
ImageTensor q_sample_step(const ImageTensor& prev, double beta, const ImageTensor& noise);

/// Closed-form marginal: sqrt(gamma_t) * x0 + sqrt(1 - gamma_t) * noise.
ImageTensor q_sample(const ImageTensor& x0, int t, const NoiseSchedule& schedule,
                     const ImageTensor& noise);

/// Exact Gaussian q(x_{t-1} | x_0, x_t).
PosteriorParams posterior_params(const ImageTensor& x0, const ImageTensor& xt, int t,
                                 const NoiseSchedule& schedule);

/// Inverts the marginal for x_0 given a noise estimate.
ImageTensor predict_x0_from_eps(const ImageTensor& xt, const ImageTensor& eps_hat, int t,
                                const NoiseSchedule& schedule, bool clamp = false);

/// Mean squared difference over all entries.
double eps_loss(const ImageTensor& eps, const ImageTensor& eps_hat);

using DenoiseFn = std::function<ImageTensor(const ImageTensor& condition, const ImageTensor& xt, int t)>;
/// Batched form: one noise estimate per state, all at the same step.
using BatchDenoiseFn = std::function<std::vector<ImageTensor>(const std::vector<ImageTensor>& xt, int t)>;

struct SamplerOptions {
    bool clamp_x0 = true;
};

/// Posterior step given a noise estimate. No noise is added at t = 1.
ImageTensor reverse_step(const ImageTensor& xt, const ImageTensor& eps_hat, int t,
                         const NoiseSchedule& schedule, Rng& rng, SamplerOptions options = {});

ImageTensor p_sample_step(const DenoiseFn& denoise, const ImageTensor& condition,
                          const ImageTensor& xt, int t, const NoiseSchedule& schedule, Rng& rng,
                          SamplerOptions options = {});

/// Ancestral sampling from x_T ~ N(0, I) down to x_0. The result is an
/// image-role tensor clamped to [-1, 1].
ImageTensor ddpm_sample(const DenoiseFn& denoise, const ImageTensor& condition, int height,
                        int width, int channels, const NoiseSchedule& schedule, Rng& rng,
                        SamplerOptions options = {});

/// Samples a batch; state i draws only from rngs[i], so each result equals
/// what ddpm_sample produces alone with that generator.
std::vector<ImageTensor> ddpm_sample_batch(const BatchDenoiseFn& denoise, std::size_t count,
                                           int height, int width, int channels,
                                           const NoiseSchedule& schedule, std::vector<Rng>& rngs,
                                           SamplerOptions options = {});

}  // namespace vstain::diffusion
