#include "vstain/diffusion.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "vstain/hash.hpp"

namespace vstain::diffusion {

namespace {

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* op) {
    if (!a.same_shape(b)) {
        std::ostringstream os;
        os << op << ": shape mismatch " << a.height() << "x" << a.width() << "x" << a.channels()
           << " vs " << b.height() << "x" << b.width() << "x" << b.channels();
        throw std::invalid_argument(os.str());
    }
}

void require_step(int t, const NoiseSchedule& s, const char* op) {
    if (t < 1 || t > s.steps())
        throw std::out_of_range(std::string(op) + ": step " + std::to_string(t) +
                                " outside [1, " + std::to_string(s.steps()) + "]");
}

ImageTensor axpby(double a, const ImageTensor& x, double b, const ImageTensor& y, TensorRole role) {
    ImageTensor out(x.height(), x.width(), x.channels(), role);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas, std::string kind)
    : betas_(std::move(betas)), kind_(std::move(kind)) {
    if (betas_.empty()) throw std::invalid_argument("NoiseSchedule: need at least one step");
    gammas_.resize(betas_.size() + 1);
    gammas_[0] = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
        const double b = betas_[i];
        if (!(b > 0.0 && b < 1.0))
            throw std::invalid_argument("NoiseSchedule: beta_" + std::to_string(i + 1) +
                                        " outside (0, 1)");
        gammas_[i + 1] = gammas_[i] * (1.0 - b);
    }
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > steps()) throw std::out_of_range("NoiseSchedule::beta: step out of range");
    return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::gamma(int t) const {
    if (t < 0 || t > steps()) throw std::out_of_range("NoiseSchedule::gamma: step out of range");
    return gammas_[static_cast<std::size_t>(t)];
}

std::string NoiseSchedule::hash() const {
    std::string bytes(betas_.size() * sizeof(double), '\0');
    std::memcpy(bytes.data(), betas_.data(), bytes.size());
    return hash_hex(bytes);
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("make_linear_schedule: steps must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw std::invalid_argument(
            "make_linear_schedule: require 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double f = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        betas[static_cast<std::size_t>(i)] = beta_start + f * (beta_end - beta_start);
    }
    return NoiseSchedule(std::move(betas), "linear");
}

NoiseSchedule make_cosine_schedule(int steps) {
    if (steps < 1) throw std::invalid_argument("make_cosine_schedule: steps must be >= 1");
    constexpr double s = 0.008;
    auto f = [&](double t) {
        const double x = (t / steps + s) / (1.0 + s) * std::numbers::pi / 2.0;
        return std::cos(x) * std::cos(x);
    };
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int t = 1; t <= steps; ++t)
        betas[static_cast<std::size_t>(t - 1)] = std::min(1.0 - f(t) / f(t - 1), 0.999);
    return NoiseSchedule(std::move(betas), "cosine");
}

ImageTensor q_sample_step(const ImageTensor& prev, double beta, const ImageTensor& noise) {
    require_same_shape(prev, noise, "q_sample_step");
    if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("q_sample_step: beta outside (0, 1)");
    return axpby(std::sqrt(1.0 - beta), prev, std::sqrt(beta), noise, TensorRole::noise);
}

ImageTensor q_sample(const ImageTensor& x0, int t, const NoiseSchedule& schedule,
                     const ImageTensor& noise) {
    require_step(t, schedule, "q_sample");
    require_same_shape(x0, noise, "q_sample");
    const double g = schedule.gamma(t);
    return axpby(std::sqrt(g), x0, std::sqrt(1.0 - g), noise, TensorRole::noise);
}

PosteriorParams posterior_params(const ImageTensor& x0, const ImageTensor& xt, int t,
                                 const NoiseSchedule& schedule) {
    require_step(t, schedule, "posterior_params");
    require_same_shape(x0, xt, "posterior_params");
    const double beta = schedule.beta(t);
    const double g_prev = schedule.gamma(t - 1);
    const double g = schedule.gamma(t);
    const double coef_x0 = std::sqrt(g_prev) * beta / (1.0 - g);
    const double coef_xt = std::sqrt(1.0 - beta) * (1.0 - g_prev) / (1.0 - g);
    PosteriorParams p;
    p.mu = axpby(coef_x0, x0, coef_xt, xt, TensorRole::noise);
    p.sigma2 = beta * (1.0 - g_prev) / (1.0 - g);
    return p;
}

ImageTensor predict_x0_from_eps(const ImageTensor& xt, const ImageTensor& eps_hat, int t,
                                const NoiseSchedule& schedule, bool clamp) {
    require_step(t, schedule, "predict_x0_from_eps");
    require_same_shape(xt, eps_hat, "predict_x0_from_eps");
    const double g = schedule.gamma(t);
    if (!(g > 1e-300) || !std::isfinite(1.0 / std::sqrt(g)))
        throw std::domain_error("predict_x0_from_eps: gamma_" + std::to_string(t) + " = " +
                                std::to_string(g) + " underflows; cannot invert the marginal");
    const double inv = 1.0 / std::sqrt(g);
    ImageTensor out = axpby(inv, xt, -std::sqrt(1.0 - g) * inv, eps_hat, TensorRole::noise);
    if (clamp) {
        out.clamp(-1.0, 1.0);
        out.set_role(TensorRole::image);
    }
    return out;
}

double eps_loss(const ImageTensor& eps, const ImageTensor& eps_hat) {
    require_same_shape(eps, eps_hat, "eps_loss");
    double acc = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = eps[i] - eps_hat[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps.size());
}

ImageTensor reverse_step(const ImageTensor& xt, const ImageTensor& eps_hat, int t,
                         const NoiseSchedule& schedule, Rng& rng, SamplerOptions options) {
    const ImageTensor x0 = predict_x0_from_eps(xt, eps_hat, t, schedule, options.clamp_x0);
    PosteriorParams post = posterior_params(x0, xt, t, schedule);
    if (t > 1) {
        const double sigma = std::sqrt(post.sigma2);
        for (std::size_t i = 0; i < post.mu.size(); ++i) post.mu[i] += sigma * rng.normal();
    }
    return std::move(post.mu);
}

ImageTensor p_sample_step(const DenoiseFn& denoise, const ImageTensor& condition,
                          const ImageTensor& xt, int t, const NoiseSchedule& schedule, Rng& rng,
                          SamplerOptions options) {
    require_step(t, schedule, "p_sample_step");
    const ImageTensor eps_hat = denoise(condition, xt, t);
    return reverse_step(xt, eps_hat, t, schedule, rng, options);
}

namespace {

ImageTensor finish(ImageTensor x) {
    x.clamp(-1.0, 1.0);
    x.set_role(TensorRole::image);
    return x;
}

}  // namespace

ImageTensor ddpm_sample(const DenoiseFn& denoise, const ImageTensor& condition, int height,
                        int width, int channels, const NoiseSchedule& schedule, Rng& rng,
                        SamplerOptions options) {
    ImageTensor x = ImageTensor::gaussian(height, width, channels, rng);
    for (int t = schedule.steps(); t >= 1; --t)
        x = p_sample_step(denoise, condition, x, t, schedule, rng, options);
    return finish(std::move(x));
}

std::vector<ImageTensor> ddpm_sample_batch(const BatchDenoiseFn& denoise, std::size_t count,
                                           int height, int width, int channels,
                                           const NoiseSchedule& schedule, std::vector<Rng>& rngs,
                                           SamplerOptions options) {
    if (rngs.size() != count)
        throw std::invalid_argument("ddpm_sample_batch: need one generator per sample");
    std::vector<ImageTensor> xs;
    xs.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        xs.push_back(ImageTensor::gaussian(height, width, channels, rngs[i]));
    for (int t = schedule.steps(); t >= 1; --t) {
        const auto eps = denoise(xs, t);
        if (eps.size() != count)
            throw std::runtime_error("ddpm_sample_batch: denoiser returned wrong batch size");
        for (std::size_t i = 0; i < count; ++i)
            xs[i] = reverse_step(xs[i], eps[i], t, schedule, rngs[i], options);
    }
    for (auto& x : xs) x = finish(std::move(x));
    return xs;
}

}  // namespace vstain::diffusion
