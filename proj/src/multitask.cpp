#include "vstain/multitask.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace vstain::multitask {

using denoiser::ConditionEncoder;
using denoiser::UNetConfig;
using denoiser::UNetDenoiser;
using diffusion::NoiseSchedule;
using nn::Tape;
using nn::Tensor;
using nn::Var;

std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::mtdd: return "mtdd";
        case ModelKind::msd: return "msd";
        case ModelKind::sdwos: return "sdwos";
    }
    return "?";
}

std::string to_string(LrSchedule s) {
    return s == LrSchedule::cosine ? "cosine" : "constant";
}

LrSchedule lr_schedule_from_string(std::string_view s) {
    if (s == "constant") return LrSchedule::constant;
    if (s == "cosine") return LrSchedule::cosine;
    throw std::invalid_argument("unknown lr schedule '" + std::string(s) + "' (constant|cosine)");
}

double AdamConfig::lr_at(long step) const {
    if (schedule == LrSchedule::constant || decay_steps <= 0) return lr;
    const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(decay_steps));
    return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
}

ModelKind model_kind_from_string(std::string_view s) {
    if (s == "mtdd") return ModelKind::mtdd;
    if (s == "msd") return ModelKind::msd;
    if (s == "sdwos") return ModelKind::sdwos;
    throw std::invalid_argument("unknown model kind '" + std::string(s) + "' (expected mtdd, msd or sdwos)");
}

nlohmann::json config_to_json(const UNetConfig& c) {
    return {{"image_size", c.image_size},
            {"in_channels", c.in_channels},
            {"out_channels", c.out_channels},
            {"cond_channels", c.cond_channels},
            {"base_channels", c.base_channels},
            {"channel_multipliers", c.channel_multipliers},
            {"time_embed_dim", c.time_embed_dim},
            {"fft_attention_levels", c.fft_attention_levels},
            {"norm_groups", c.norm_groups},
            {"fusion", denoiser::to_string(c.fusion)}};
}

UNetConfig config_from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.cond_channels = j.at("cond_channels").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
    c.time_embed_dim = j.at("time_embed_dim").get<int>();
    c.fft_attention_levels = j.at("fft_attention_levels").get<std::vector<int>>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.fusion = denoiser::fusion_from_string(j.at("fusion").get<std::string>());
    c.validate();
    return c;
}

ImageTensor mask_to_tensor(const Mask& mask) {
    ImageTensor out(mask.height, mask.width, 1);
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
        const auto b = mask.bits[i];
        if (b > 1) throw std::invalid_argument("mask_to_tensor: mask value " + std::to_string(b) + " is not 0/1");
        out[i] = b ? 1.0 : -1.0;
    }
    return out;
}

Mask tensor_to_mask(const ImageTensor& x) {
    Mask m(x.width(), x.height());
    for (int y = 0; y < x.height(); ++y)
        for (int xx = 0; xx < x.width(); ++xx) m.at(y, xx) = x.at(y, xx, 0) > 0.0 ? 1 : 0;
    return m;
}

// Model ------------------------------------------------------------------------

std::vector<Model::ParamRef> Model::parameters() {
    std::vector<ParamRef> out;
    for (auto& e : encoder.params().entries()) out.push_back({"encoder/" + e.name, &e.value});
    for (auto& e : gen.params().entries()) out.push_back({"gen/" + e.name, &e.value});
    if (seg)
        for (auto& e : seg->params().entries()) out.push_back({"seg/" + e.name, &e.value});
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = encoder.params().scalar_count() + gen.params().scalar_count();
    if (seg) n += seg->params().scalar_count();
    return n;
}

UNetConfig seg_config(const UNetConfig& gen) {
    UNetConfig c = gen;
    c.in_channels = 1;
    c.out_channels = 1;
    return c;
}

Model make_model(ModelKind kind, const UNetConfig& config, Rng& rng) {
    config.validate();
    if (config.in_channels != config.out_channels)
        throw std::invalid_argument("make_model: generation branch input and output channels differ");
    if (kind == ModelKind::sdwos && config.cond_channels != config.in_channels)
        throw std::invalid_argument("make_model: sdwos swaps target and condition, so their channels must match");
    ConditionEncoder enc(config, rng);
    UNetDenoiser gen(config, rng);
    std::optional<UNetDenoiser> seg;
    if (kind == ModelKind::mtdd) seg.emplace(seg_config(config), rng);
    return Model{kind, std::move(enc), std::move(gen), std::move(seg)};
}

TrainState::TrainState(Model mdl, AdamConfig a, std::uint64_t s) : model(std::move(mdl)), adam(a), seed(s) {
    for (const auto& p : model.parameters()) {
        m.emplace_back(p.value->shape());
        v.emplace_back(p.value->shape());
    }
}

// Losses -------------------------------------------------------------------------

namespace {

void check_batch(const Batch& b, bool need_masks) {
    if (b.he.empty()) throw std::invalid_argument("train step: empty batch");
    if (b.ihc.size() != b.he.size()) throw std::invalid_argument("train step: H&E and IHC counts differ");
    if (need_masks && b.mask.size() != b.he.size()) throw std::invalid_argument("train step: mask count differs");
    for (std::size_t i = 0; i < b.he.size(); ++i) {
        if (!b.he[i].same_shape(b.he[0]) || !b.ihc[i].same_shape(b.he[0]))
            throw std::invalid_argument("train step: batch images differ in size");
        if (need_masks && (b.mask[i].width != b.he[0].width() || b.mask[i].height != b.he[0].height()))
            throw std::invalid_argument("train step: mask size differs from image size");
    }
}

/// Draws (t, eps) per example in order and returns the branch's eps MSE node.
Var branch_loss(Tape& tape, const UNetDenoiser& net, std::span<const Var> features,
                const std::vector<ImageTensor>& targets, const NoiseSchedule& schedule, Rng& rng,
                const std::string& branch) {
    std::vector<ImageTensor> noisy, noise;
    std::vector<int> steps;
    for (const auto& x0 : targets) {
        const int t = rng.uniform_int(1, schedule.steps());
        ImageTensor eps = ImageTensor::gaussian(x0.height(), x0.width(), x0.channels(), rng);
        noisy.push_back(diffusion::q_sample(x0, t, schedule, eps));
        noise.push_back(std::move(eps));
        steps.push_back(t);
    }
    const Var xt = tape.constant(denoiser::to_batch(noisy), branch + ".x_t");
    const Var target = tape.constant(denoiser::to_batch(noise), branch + ".eps");
    const Var eps_hat = net.forward(tape, features, xt, steps);
    return nn::mse(tape, eps_hat, target, branch + ".loss");
}

std::vector<ImageTensor> mask_targets(const std::vector<Mask>& masks) {
    std::vector<ImageTensor> out;
    for (const auto& m : masks) out.push_back(mask_to_tensor(m));
    return out;
}

void adam_update(TrainState& s, const Tape& tape) {
    const double b1 = s.adam.beta1, b2 = s.adam.beta2;
    const double t = static_cast<double>(s.step + 1);
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    const double lr = s.adam.lr_at(s.step);
    auto params = s.model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor* g = tape.gradient_of(*params[i].value);
        Tensor& p = *params[i].value;
        Tensor& m = s.m[i];
        Tensor& v = s.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g ? (*g)[k] : 0.0;
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + s.adam.eps);
        }
    }
}

void finish_step(TrainState& s, const StepLosses& l) {
    for (double v : {l.seg, l.gen, l.rev, l.total})
        if (!std::isfinite(v))
            throw nn::NumericalError("non-finite loss at step " + std::to_string(s.step + 1));
    constexpr double a = 0.98;
    if (s.step == 0) {
        s.avg = {l.seg, l.gen, l.rev, l.total};
    } else {
        s.avg.seg = a * s.avg.seg + (1 - a) * l.seg;
        s.avg.gen = a * s.avg.gen + (1 - a) * l.gen;
        s.avg.rev = a * s.avg.rev + (1 - a) * l.rev;
        s.avg.total = a * s.avg.total + (1 - a) * l.total;
    }
    ++s.step;
}

template <class F>
auto labelled(long step, const char* branch, F&& f) {
    try {
        return f();
    } catch (const nn::NumericalError& e) {
        throw nn::NumericalError("step " + std::to_string(step) + ", " + branch + " branch: " + e.what());
    }
}

struct MtddTape {
    Var gen, seg;
};

/// Records both branch losses on `tape`. The seg node is invalid without theta.
MtddTape record_mtdd(Tape& tape, const Model& model, const Batch& batch, const NoiseSchedule& schedule, Rng& rng,
                     long step) {
    Rng gen_rng = rng.fork();
    Rng seg_rng = rng.fork();
    const Var he = tape.constant(denoiser::to_batch(batch.he), "he");
    const auto features = labelled(step, "encoder", [&] { return model.encoder.forward(tape, he); });
    MtddTape out;
    out.gen = labelled(step, "generation",
                       [&] { return branch_loss(tape, model.gen, features, batch.ihc, schedule, gen_rng, "gen"); });
    if (model.seg)
        out.seg = labelled(step, "segmentation", [&] {
            return branch_loss(tape, *model.seg, features, mask_targets(batch.mask), schedule, seg_rng, "seg");
        });
    return out;
}

}  // namespace

StepLosses train_step_mtdd(TrainState& state, const Batch& batch, const NoiseSchedule& schedule, Rng& rng,
                           LossWeights weights) {
    if (state.model.kind != ModelKind::mtdd) throw std::invalid_argument("train_step_mtdd: model is not mtdd");
    check_batch(batch, true);
    Tape tape;
    const auto [gen, seg] = record_mtdd(tape, state.model, batch, schedule, rng, state.step + 1);
    const Var total = nn::add(tape, nn::scale(tape, gen, weights.gen, "gen.weighted"),
                              nn::scale(tape, seg, weights.seg, "seg.weighted"), "loss.final");
    tape.backward(total);
    StepLosses l;
    l.gen = tape.value(gen)[0];
    l.seg = tape.value(seg)[0];
    l.total = tape.value(total)[0];
    adam_update(state, tape);
    finish_step(state, l);
    return l;
}

StepLosses train_step_msd(TrainState& state, const Batch& batch, const NoiseSchedule& schedule, Rng& rng) {
    if (state.model.kind != ModelKind::msd) throw std::invalid_argument("train_step_msd: model is not msd");
    check_batch(batch, false);
    Tape tape;
    const auto r = record_mtdd(tape, state.model, batch, schedule, rng, state.step + 1);
    tape.backward(r.gen);
    StepLosses l;
    l.gen = l.total = tape.value(r.gen)[0];
    adam_update(state, tape);
    finish_step(state, l);
    return l;
}

namespace {

std::pair<Var, Var> record_sdwos(Tape& tape, const Model& model, std::span<const ImageTensor> a,
                                 std::span<const ImageTensor> b, const NoiseSchedule& schedule, Rng& fwd, Rng& rev,
                                 long step) {
    const std::vector<ImageTensor> av(a.begin(), a.end()), bv(b.begin(), b.end());
    const Var ca = tape.constant(denoiser::to_batch(a), "cond.forward");
    const Var cb = tape.constant(denoiser::to_batch(b), "cond.reverse");
    const Var lf = labelled(step, "forward", [&] {
        const auto f = model.encoder.forward(tape, ca);
        return branch_loss(tape, model.gen, f, bv, schedule, fwd, "fwd");
    });
    const Var lr = labelled(step, "reverse", [&] {
        const auto f = model.encoder.forward(tape, cb);
        return branch_loss(tape, model.gen, f, av, schedule, rev, "rev");
    });
    return {lf, lr};
}

}  // namespace

std::pair<double, double> sdwos_losses(const Model& model, std::span<const ImageTensor> a,
                                       std::span<const ImageTensor> b, const NoiseSchedule& schedule,
                                       Rng forward_rng, Rng reverse_rng) {
    Tape tape(false);
    const auto [lf, lr] = record_sdwos(tape, model, a, b, schedule, forward_rng, reverse_rng, 0);
    return {tape.value(lf)[0], tape.value(lr)[0]};
}

StepLosses train_step_sdwos(TrainState& state, const Batch& batch, const NoiseSchedule& schedule, Rng& rng) {
    if (state.model.kind != ModelKind::sdwos) throw std::invalid_argument("train_step_sdwos: model is not sdwos");
    check_batch(batch, false);
    Rng fwd = rng.fork();
    Rng rev = rng.fork();
    Tape tape;
    const auto [lf, lr] = record_sdwos(tape, state.model, batch.he, batch.ihc, schedule, fwd, rev, state.step + 1);
    const Var total = nn::add(tape, lf, lr, "loss.final");
    tape.backward(total);
    StepLosses l;
    l.gen = tape.value(lf)[0];
    l.rev = tape.value(lr)[0];
    l.total = tape.value(total)[0];
    adam_update(state, tape);
    finish_step(state, l);
    return l;
}

StepLosses train_step(TrainState& state, const Batch& batch, const NoiseSchedule& schedule, Rng& rng,
                      LossWeights weights) {
    switch (state.model.kind) {
        case ModelKind::mtdd: return train_step_mtdd(state, batch, schedule, rng, weights);
        case ModelKind::msd: return train_step_msd(state, batch, schedule, rng);
        case ModelKind::sdwos: return train_step_sdwos(state, batch, schedule, rng);
    }
    throw std::logic_error("train_step: bad model kind");
}

JointGradients mtdd_gradients(Model& model, const Batch& batch, const NoiseSchedule& schedule, Rng& rng) {
    if (model.kind != ModelKind::mtdd) throw std::invalid_argument("mtdd_gradients: model is not mtdd");
    check_batch(batch, true);
    auto params = model.parameters();
    auto collect = [&](const Tape& tape) {
        std::vector<Tensor> out;
        for (const auto& p : params) {
            const Tensor* g = tape.gradient_of(*p.value);
            out.push_back(g ? *g : Tensor(p.value->shape()));
        }
        return out;
    };
    JointGradients out;
    // Same substreams for all three passes.
    const Rng start = rng;
    for (int pass = 0; pass < 3; ++pass) {
        Rng r = start;
        Tape tape;
        const auto [gen, seg] = record_mtdd(tape, model, batch, schedule, r, 0);
        if (pass == 0) {
            tape.backward(seg);
            out.seg = collect(tape);
        } else if (pass == 1) {
            tape.backward(gen);
            out.gen = collect(tape);
        } else {
            const Var total = nn::add(tape, gen, seg, "loss.final");
            tape.backward(total);
            out.total = collect(tape);
            out.losses.gen = tape.value(gen)[0];
            out.losses.seg = tape.value(seg)[0];
            out.losses.total = tape.value(total)[0];
            rng = r;
        }
    }
    return out;
}

// Inference -------------------------------------------------------------------------

namespace {

std::vector<ImageTensor> sample_branch(const UNetDenoiser& net, const ConditionEncoder& encoder,
                                       std::span<const ImageTensor> he, const NoiseSchedule& schedule,
                                       std::vector<Rng>& rngs, diffusion::SamplerOptions options) {
    if (he.empty()) return {};
    const auto features = denoiser::encode_condition(encoder, he);
    const auto& cfg = net.config();
    auto fn = [&](const std::vector<ImageTensor>& xt, int t) { return denoiser::denoise_batch(net, features, xt, t); };
    return diffusion::ddpm_sample_batch(fn, he.size(), cfg.image_size, cfg.image_size, cfg.out_channels, schedule,
                                        rngs, options);
}

}  // namespace

std::vector<ImageTensor> infer_stain_batch(const Model& model, std::span<const ImageTensor> he,
                                           const NoiseSchedule& schedule, std::vector<Rng>& rngs,
                                           diffusion::SamplerOptions options) {
    return sample_branch(model.gen, model.encoder, he, schedule, rngs, options);
}

ImageTensor infer_stain(const Model& model, const ImageTensor& he, const NoiseSchedule& schedule, Rng& rng,
                        diffusion::SamplerOptions options) {
    std::vector<Rng> rngs{rng};
    auto out = infer_stain_batch(model, std::span<const ImageTensor>(&he, 1), schedule, rngs, options);
    rng = rngs[0];
    return std::move(out[0]);
}

std::vector<Mask> infer_seg_batch(const Model& model, std::span<const ImageTensor> he, const NoiseSchedule& schedule,
                                  std::vector<Rng>& rngs, diffusion::SamplerOptions options) {
    if (!model.seg) throw std::invalid_argument("infer_seg: model '" + to_string(model.kind) + "' has no segmentation branch");
    std::vector<Mask> out;
    for (const auto& x : sample_branch(*model.seg, model.encoder, he, schedule, rngs, options))
        out.push_back(tensor_to_mask(x));
    return out;
}

Mask infer_seg(const Model& model, const ImageTensor& he, const NoiseSchedule& schedule, Rng& rng,
               diffusion::SamplerOptions options) {
    std::vector<Rng> rngs{rng};
    auto out = infer_seg_batch(model, std::span<const ImageTensor>(&he, 1), schedule, rngs, options);
    rng = rngs[0];
    return std::move(out[0]);
}

// Training loop -------------------------------------------------------------------------

std::vector<std::size_t> batch_indices(std::uint64_t seed, long step, int batch_size, std::size_t n) {
    if (n == 0) throw std::invalid_argument("batch_indices: empty training set");
    std::vector<std::size_t> out;
    long cached_epoch = -1;
    std::vector<std::size_t> perm(n);
    const auto first = static_cast<unsigned long long>(step) * static_cast<unsigned long long>(batch_size);
    for (int i = 0; i < batch_size; ++i) {
        const unsigned long long pos = first + static_cast<unsigned long long>(i);
        const long epoch = static_cast<long>(pos / n);
        if (epoch != cached_epoch) {
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            Rng r = Rng::derive(seed, {1, static_cast<std::uint64_t>(epoch)});
            for (std::size_t k = n; k > 1; --k)
                std::swap(perm[k - 1], perm[static_cast<std::size_t>(r.uniform_int(0, static_cast<int>(k - 1)))]);
            cached_epoch = epoch;
        }
        out.push_back(perm[pos % n]);
    }
    return out;
}

bool train(TrainState& state, const TrainingData& data, const NoiseSchedule& schedule, const TrainOptions& options) {
    if (data.he.size() != data.ihc.size() || (state.model.kind == ModelKind::mtdd && data.mask.size() != data.he.size()))
        throw std::invalid_argument("train: inconsistent training data");
    std::ofstream log;
    if (!options.log_csv.empty()) {
        const bool fresh = !std::filesystem::exists(options.log_csv) || std::filesystem::file_size(options.log_csv) == 0;
        log.open(options.log_csv, std::ios::app);
        if (!log) throw std::runtime_error("cannot open loss log " + options.log_csv.string());
        if (fresh) log << "step,l_seg,l_gen,l_rev,l_final,wall_s\n";
        log.precision(17);
    }
    const auto t0 = std::chrono::steady_clock::now();
    long done = 0;
    while (state.step < options.steps) {
        if (options.stop_after >= 0 && done >= options.stop_after) return false;
        Batch b;
        for (std::size_t i : batch_indices(state.seed, state.step, options.batch_size, data.size())) {
            b.he.push_back(data.he[i]);
            b.ihc.push_back(data.ihc[i]);
            if (!data.mask.empty()) b.mask.push_back(data.mask[i]);
        }
        Rng rng = Rng::derive(state.seed, {2, static_cast<std::uint64_t>(state.step)});
        const StepLosses l = train_step(state, b, schedule, rng, options.weights);
        ++done;
        if (log.is_open()) {
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log << state.step << ',' << l.seg << ',' << l.gen << ',' << l.rev << ',' << l.total << ',' << wall << '\n';
            log.flush();
            if (!log) throw std::runtime_error("write failed for " + options.log_csv.string() + " (disk full?)");
        }
        const bool last = state.step == options.steps;
        if (options.on_checkpoint && (last || (options.checkpoint_every > 0 && state.step % options.checkpoint_every == 0)))
            options.on_checkpoint(state);
    }
    return true;
}

// Persistence -------------------------------------------------------------------------

namespace {

archive::Archive params_archive(Model& model, const std::string& prefix) {
    archive::Archive a;
    for (const auto& p : model.parameters()) a.tensors.push_back({prefix + p.name, *p.value});
    return a;
}

Model model_from_archive(ModelKind kind, const UNetConfig& cfg, const archive::Archive& a, const std::string& prefix) {
    auto block = [&](const std::string& name) {
        denoiser::ParamSet ps;
        const std::string pre = prefix + name + "/";
        for (const auto& t : a.tensors)
            if (t.name.compare(0, pre.size(), pre) == 0) ps.add(t.name.substr(pre.size()), t.value.shape()) = t.value;
        return ps;
    };
    ConditionEncoder enc(cfg, block("encoder"));
    UNetDenoiser gen(cfg, block("gen"));
    std::optional<UNetDenoiser> seg;
    if (kind == ModelKind::mtdd) seg.emplace(seg_config(cfg), block("seg"));
    Model m{kind, std::move(enc), std::move(gen), std::move(seg)};
    std::size_t expected = 0;
    for (const auto& t : a.tensors)
        if (t.name.compare(0, prefix.size(), prefix) == 0) ++expected;
    if (m.parameters().size() != expected)
        throw archive::IntegrityError("archive holds " + std::to_string(expected) + " parameter arrays, model '" +
                                      to_string(kind) + "' expects " + std::to_string(m.parameters().size()));
    return m;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const archive::Archive& a) {
    try {
        CheckpointInfo info{model_kind_from_string(a.header.at("model").get<std::string>()),
                            config_from_json(a.header.at("unet")), a.header.at("schedule_hash").get<std::string>(),
                            a.header.at("config_hash").get<std::string>(), a.header.at("step").get<long>()};
        return info;
    } catch (const nlohmann::json::exception& e) {
        throw archive::IntegrityError(std::string("checkpoint header incomplete: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const CheckpointInfo& info) {
    archive::Archive a = params_archive(const_cast<Model&>(model), "");
    a.header = {{"kind", "checkpoint"},
                {"model", to_string(info.kind)},
                {"unet", config_to_json(info.config)},
                {"schedule_hash", info.schedule_hash},
                {"config_hash", info.config_hash},
                {"step", info.step}};
    archive::write_file(path, a, archive::DType::f32);
}

std::pair<Model, CheckpointInfo> load_checkpoint(const std::filesystem::path& path) {
    const archive::Archive a = archive::read_file(path);
    if (a.header.value("kind", "") != "checkpoint")
        throw archive::IntegrityError(path.string() + " is not a model checkpoint");
    CheckpointInfo info = read_checkpoint_info(a);
    Model m = model_from_archive(info.kind, info.config, a, "");
    return {std::move(m), std::move(info)};
}

void save_train_state(const std::filesystem::path& path, const TrainState& state, const std::string& config_hash) {
    auto& model = const_cast<Model&>(state.model);
    archive::Archive a = params_archive(model, "param/");
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        a.tensors.push_back({"adam_m/" + params[i].name, state.m[i]});
        a.tensors.push_back({"adam_v/" + params[i].name, state.v[i]});
    }
    a.header = {{"kind", "train_state"},
                {"model", to_string(model.kind)},
                {"unet", config_to_json(model.gen.config())},
                {"config_hash", config_hash},
                {"step", state.step},
                {"seed", std::to_string(state.seed)},
                {"adam",
                 {{"lr", state.adam.lr},
                  {"beta1", state.adam.beta1},
                  {"beta2", state.adam.beta2},
                  {"eps", state.adam.eps},
                  {"schedule", to_string(state.adam.schedule)},
                  {"decay_steps", state.adam.decay_steps}}},
                {"avg", {{"seg", state.avg.seg}, {"gen", state.avg.gen}, {"rev", state.avg.rev}, {"total", state.avg.total}}}};
    archive::write_file(path, a, archive::DType::f64);
}

TrainState load_train_state(const std::filesystem::path& path, std::string* config_hash) {
    const archive::Archive a = archive::read_file(path);
    const auto& h = a.header;
    if (h.value("kind", "") != "train_state") throw archive::IntegrityError(path.string() + " is not a train state");
    try {
        const ModelKind kind = model_kind_from_string(h.at("model").get<std::string>());
        const UNetConfig cfg = config_from_json(h.at("unet"));
        Model m = model_from_archive(kind, cfg, a, "param/");
        const auto& ad = h.at("adam");
        const AdamConfig adam{ad.at("lr"),
                              ad.at("beta1"),
                              ad.at("beta2"),
                              ad.at("eps"),
                              lr_schedule_from_string(ad.at("schedule").get<std::string>()),
                              ad.at("decay_steps").get<long>()};
        TrainState s(std::move(m), adam, std::stoull(h.at("seed").get<std::string>()));
        const auto params = s.model.parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            s.m[i] = a.at("adam_m/" + params[i].name);
            s.v[i] = a.at("adam_v/" + params[i].name);
        }
        s.step = h.at("step").get<long>();
        const auto& avg = h.at("avg");
        s.avg = {avg.at("seg"), avg.at("gen"), avg.at("rev"), avg.at("total")};
        if (config_hash) *config_hash = h.at("config_hash").get<std::string>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw archive::IntegrityError("train state header incomplete: " + std::string(e.what()));
    } catch (const std::out_of_range& e) {
        throw archive::IntegrityError("train state incomplete: " + std::string(e.what()));
    }
}

}  // namespace vstain::multitask
