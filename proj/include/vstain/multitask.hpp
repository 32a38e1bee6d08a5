#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vstain/archive.hpp"
#include "vstain/denoiser.hpp"
#include "vstain/diffusion.hpp"
#include "vstain/image.hpp"
#include "vstain/rng.hpp"

namespace vstain::multitask {

enum class ModelKind {
    mtdd,   ///< shared encoder, generation branch, segmentation branch
    msd,    ///< shared encoder, generation branch
    sdwos,  ///< one encoder and one branch used in both translation directions
};

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);

nlohmann::json config_to_json(const denoiser::UNetConfig& c);
denoiser::UNetConfig config_from_json(const nlohmann::json& j);

/// Foreground -> +1, background -> -1, one channel.
ImageTensor mask_to_tensor(const Mask& mask);
/// Thresholds the first channel at 0.
Mask tensor_to_mask(const ImageTensor& x);

struct Model {
    ModelKind kind;
    denoiser::ConditionEncoder encoder;
    denoiser::UNetDenoiser gen;                 // phi; the only branch for msd and sdwos
    std::optional<denoiser::UNetDenoiser> seg;  // theta; mtdd only

    struct ParamRef {
        std::string name;  // "<block>/<param>"
        nn::Tensor* value;
    };
    std::vector<ParamRef> parameters();
    std::size_t parameter_count() const;
    std::size_t denoiser_blocks() const { return seg ? 2 : 1; }
};

/// The segmentation branch reuses the generation config with a 1-channel target.
denoiser::UNetConfig seg_config(const denoiser::UNetConfig& gen);

/// Parameters are drawn encoder, then generation, then segmentation, so an
/// msd and an mtdd model built from the same seed share encoder and phi.
Model make_model(ModelKind kind, const denoiser::UNetConfig& config, Rng& rng);

enum class LrSchedule { constant, cosine };

std::string to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(std::string_view s);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    LrSchedule schedule = LrSchedule::constant;
    long decay_steps = 0;  // cosine: lr reaches 0 after this many steps

    /// Learning rate for the update that completes step + 1. A function of the
    /// step alone, so a resumed run sees the same rates.
    double lr_at(long step) const;
};

struct LossAverages {
    double seg = 0.0;
    double gen = 0.0;
    double rev = 0.0;
    double total = 0.0;
};

struct TrainState {
    Model model;
    AdamConfig adam;
    std::vector<nn::Tensor> m;  // first moments, aligned with model.parameters()
    std::vector<nn::Tensor> v;  // second moments
    long step = 0;              // completed optimizer steps
    std::uint64_t seed = 0;     // per-step generators derive from (seed, step)
    LossAverages avg;

    TrainState(Model model, AdamConfig adam, std::uint64_t seed);
};

struct Batch {
    std::vector<ImageTensor> he;
    std::vector<ImageTensor> ihc;
    std::vector<Mask> mask;  // unused by sdwos
};

struct StepLosses {
    double seg = 0.0;  // mtdd only
    double gen = 0.0;  // H&E -> IHC
    double rev = 0.0;  // IHC -> H&E, sdwos only
    double total = 0.0;
};

struct LossWeights {
    double gen = 1.0;
    double seg = 1.0;
};

/// One joint step. The step generator forks a generation substream and then a
/// segmentation substream; each branch draws (t, eps) per example from its own.
StepLosses train_step_mtdd(TrainState& state, const Batch& batch, const diffusion::NoiseSchedule& schedule,
                           Rng& rng, LossWeights weights = {});
/// Generation branch only. Forks the same two substreams as mtdd.
StepLosses train_step_msd(TrainState& state, const Batch& batch, const diffusion::NoiseSchedule& schedule,
                          Rng& rng);
/// Both directions every step; forward substream first, reverse second.
StepLosses train_step_sdwos(TrainState& state, const Batch& batch, const diffusion::NoiseSchedule& schedule,
                            Rng& rng);
/// Dispatches on the model kind.
StepLosses train_step(TrainState& state, const Batch& batch, const diffusion::NoiseSchedule& schedule, Rng& rng,
                      LossWeights weights = {});

/// The two sdwos direction losses without an update.
std::pair<double, double> sdwos_losses(const Model& model, std::span<const ImageTensor> a,
                                       std::span<const ImageTensor> b, const diffusion::NoiseSchedule& schedule,
                                       Rng forward_rng, Rng reverse_rng);

/// Gradients of the joint loss before the optimizer step, keyed like
/// Model::parameters(). Used by structural tests.
struct JointGradients {
    std::vector<nn::Tensor> seg;    // d L_seg
    std::vector<nn::Tensor> gen;    // d L_gen
    std::vector<nn::Tensor> total;  // d L_final
    StepLosses losses;
};
JointGradients mtdd_gradients(Model& model, const Batch& batch, const diffusion::NoiseSchedule& schedule, Rng& rng);

std::vector<ImageTensor> infer_stain_batch(const Model& model, std::span<const ImageTensor> he,
                                           const diffusion::NoiseSchedule& schedule, std::vector<Rng>& rngs,
                                           diffusion::SamplerOptions options = {});
ImageTensor infer_stain(const Model& model, const ImageTensor& he, const diffusion::NoiseSchedule& schedule,
                        Rng& rng, diffusion::SamplerOptions options = {});
std::vector<Mask> infer_seg_batch(const Model& model, std::span<const ImageTensor> he,
                                  const diffusion::NoiseSchedule& schedule, std::vector<Rng>& rngs,
                                  diffusion::SamplerOptions options = {});
Mask infer_seg(const Model& model, const ImageTensor& he, const diffusion::NoiseSchedule& schedule, Rng& rng,
               diffusion::SamplerOptions options = {});

// Training loop ---------------------------------------------------------------

struct TrainingData {
    std::vector<ImageTensor> he;
    std::vector<ImageTensor> ihc;
    std::vector<Mask> mask;
    std::size_t size() const { return he.size(); }
};

/// Example indices for a step: the concatenation of per-epoch permutations
/// derived from (seed, epoch), read batch_size at a time.
std::vector<std::size_t> batch_indices(std::uint64_t seed, long step, int batch_size, std::size_t n);

struct TrainOptions {
    long steps = 2000;
    int batch_size = 8;
    LossWeights weights;
    long checkpoint_every = 0;  // 0: final only
    /// Stop (as if killed) after this many steps of this invocation; < 0: never.
    long stop_after = -1;
    std::filesystem::path log_csv;  // appended; header written when new
    std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs from state.step up to options.steps. Returns false when stopped early.
bool train(TrainState& state, const TrainingData& data, const diffusion::NoiseSchedule& schedule,
           const TrainOptions& options);

// Persistence -------------------------------------------------------------------

struct CheckpointInfo {
    ModelKind kind;
    denoiser::UNetConfig config;
    std::string schedule_hash;
    std::string config_hash;
    long step = 0;
};

/// Weights only, f32 payloads.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointInfo& info);
std::pair<Model, CheckpointInfo> load_checkpoint(const std::filesystem::path& path);
CheckpointInfo read_checkpoint_info(const archive::Archive& a);

/// Full resumable state, f64 payloads.
void save_train_state(const std::filesystem::path& path, const TrainState& state, const std::string& config_hash);
TrainState load_train_state(const std::filesystem::path& path, std::string* config_hash = nullptr);

}  // namespace vstain::multitask
