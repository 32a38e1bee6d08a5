#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vstain/image.hpp"
#include "vstain/nn.hpp"
#include "vstain/rng.hpp"

namespace vstain::denoiser {

/// How attention-filtered condition features reach the denoiser features.
enum class Fusion {
    gate,  ///< h * A
    add,   ///< h + c * A
};

struct UNetConfig {
    int image_size = 64;
    int in_channels = 3;
    int out_channels = 3;
    int cond_channels = 3;
    int base_channels = 32;
    std::vector<int> channel_multipliers{1, 2, 2, 4};
    int time_embed_dim = 64;
    std::vector<int> fft_attention_levels{1, 2};
    int norm_groups = 8;
    Fusion fusion = Fusion::gate;

    int num_levels() const { return static_cast<int>(channel_multipliers.size()); }
    int channels(int level) const { return base_channels * channel_multipliers.at(static_cast<std::size_t>(level)); }
    int level_size(int level) const { return image_size >> level; }
    bool attends(int level) const;
    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
    /// Group count actually used for `channels` channels.
    int groups_for(int channels) const;

    bool operator==(const UNetConfig&) const = default;
};

std::string to_string(Fusion f);
Fusion fusion_from_string(std::string_view s);

/// Ordered named weight arrays.
class ParamSet {
public:
    nn::Tensor& add(std::string name, std::vector<int> shape);
    nn::Tensor& get(std::string_view name);
    const nn::Tensor& get(std::string_view name) const;
    bool contains(std::string_view name) const;

    struct Entry {
        std::string name;
        nn::Tensor value;
    };
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    /// Total scalar count (complex spectral weights count as two).
    std::size_t scalar_count() const;
    bool all_finite() const;

    bool operator==(const ParamSet& other) const;

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Copyable call counter for instrumenting network evaluations.
class CallCounter {
public:
    CallCounter() = default;
    CallCounter(const CallCounter& o) : n_(o.n_.load()) {}
    CallCounter& operator=(const CallCounter& o) {
        n_ = o.n_.load();
        return *this;
    }
    void bump() { ++n_; }
    long value() const { return n_.load(); }
    void reset() { n_ = 0; }

private:
    std::atomic<long> n_{0};
};

/// Sinusoidal step embedding: first half sin(t * w_i), second half
/// cos(t * w_i), with w_i = 10000^(-2i/dim) for i = 1..dim/2.
std::vector<double> time_embed(double t, int dim);

/// Frequency-domain attention.
///   A = sigmoid(Re(IFFT2(W * FFT2(c))))
///   gate: out = h * A        add: out = h + c * A
/// h, c: (N, C, H, W). w_re, w_im: (C, H, W) spectral weights.
nn::Var fft_attend(nn::Tape& tape, nn::Var h, nn::Var c, nn::Var w_re, nn::Var w_im, Fusion fusion,
                   const std::string& name);

/// Per-level condition features, each (N, C_l, S/2^l, S/2^l).
struct FeaturePyramid {
    std::vector<nn::Tensor> levels;
};

/// Strided convolutional pyramid over the condition image. Time-independent.
class ConditionEncoder {
public:
    ConditionEncoder(const UNetConfig& config, Rng& rng);
    ConditionEncoder(const UNetConfig& config, ParamSet params);

    const UNetConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    std::vector<nn::Var> forward(nn::Tape& tape, nn::Var x) const;

private:
    UNetConfig config_;
    ParamSet params_;
};

/// UNet noise predictor with sinusoidal time conditioning and FFT attention
/// onto condition features on the encoder path.
class UNetDenoiser {
public:
    UNetDenoiser(const UNetConfig& config, Rng& rng);
    UNetDenoiser(const UNetConfig& config, ParamSet params);

    const UNetConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    /// `cond` is the encoder output for the same batch; `steps` holds one
    /// diffusion step per batch element.
    nn::Var forward(nn::Tape& tape, std::span<const nn::Var> cond, nn::Var x_t,
                    std::span<const int> steps) const;

    long forward_calls() const { return calls_.value(); }
    void reset_calls() { calls_.reset(); }

private:
    nn::Var res_block(nn::Tape& tape, nn::Var x, nn::Var temb, const std::string& prefix) const;

    UNetConfig config_;
    ParamSet params_;
    mutable CallCounter calls_;
};

/// Parameters the two networks own for a config, in creation order.
ParamSet make_encoder_params(const UNetConfig& config, Rng& rng);
ParamSet make_denoiser_params(const UNetConfig& config, Rng& rng);

// Single-image conveniences over the batched tape API -----------------------

nn::Tensor to_batch(std::span<const ImageTensor> images);
std::vector<ImageTensor> from_batch(const nn::Tensor& batch, TensorRole role);

FeaturePyramid encode_condition(const ConditionEncoder& encoder, const ImageTensor& condition);
FeaturePyramid encode_condition(const ConditionEncoder& encoder, std::span<const ImageTensor> conditions);

/// eps_hat for one noisy target.
ImageTensor denoise(const UNetDenoiser& net, const ConditionEncoder& encoder,
                    const ImageTensor& condition, const ImageTensor& x_t, int t);

/// eps_hat for a batch sharing a step, against precomputed condition features.
std::vector<ImageTensor> denoise_batch(const UNetDenoiser& net, const FeaturePyramid& features,
                                       const std::vector<ImageTensor>& x_t, int t);

}  // namespace vstain::denoiser
