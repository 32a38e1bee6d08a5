#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vstain/data.hpp"
#include "vstain/denoiser.hpp"
#include "vstain/diffusion.hpp"
#include "vstain/multitask.hpp"

namespace vstain {

struct ScheduleConfig {
    std::string kind = "linear";  // linear | cosine
    int steps = 200;
    double beta_start = 2.5e-4;
    double beta_end = 0.05;

    diffusion::NoiseSchedule make() const;
};

struct TrainConfig {
    long steps = 2000;
    /// When positive, steps = epochs * ceil(train patches / batch_size).
    int epochs = 0;
    int batch_size = 8;
    long checkpoint_every = 500;
    multitask::LossWeights weights;
};

struct EvalSection {
    std::string extractor = "randproj";
    std::string fid_extractor = "handcrafted";
    int projection_dim = 64;
    int fd_inf_reps = 10;
};

/// Everything a run depends on. Defaults are the desk profile.
struct RunConfig {
    multitask::ModelKind model = multitask::ModelKind::mtdd;
    std::uint64_t seed = 0;
    std::string manifest;
    denoiser::UNetConfig unet = desk_unet();
    ScheduleConfig schedule;
    multitask::AdamConfig adam = desk_adam();
    TrainConfig train;
    bool clamp_x0 = true;
    data::DatasetSpec dataset;
    EvalSection eval;

    static denoiser::UNetConfig desk_unet();
    static multitask::AdamConfig desk_adam();
    /// adam with the decay horizon set to a run of total_steps.
    multitask::AdamConfig adam_for(long total_steps) const;

    /// "section.key" -> canonical value text, for every key.
    std::map<std::string, std::string> canonical() const;
    /// Sorted INI text of canonical(); parses back to an equal config.
    std::string canonical_ini() const;
    /// FNV-1a 64 of canonical_ini(), hex.
    std::string hash() const;

    /// Throws std::invalid_argument for unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    void validate() const;

    static std::vector<std::string> keys();
    static RunConfig from_ini(const std::string& text);
    static RunConfig from_file(const std::filesystem::path& path);
};

}  // namespace vstain
