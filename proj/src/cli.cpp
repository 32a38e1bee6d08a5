#include "vstain/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vstain/archive.hpp"
#include "vstain/config.hpp"
#include "vstain/data.hpp"
#include "vstain/hash.hpp"
#include "vstain/metrics.hpp"
#include "vstain/multitask.hpp"
#include "vstain/png_io.hpp"

#ifndef VSTAIN_GIT_REVISION
#define VSTAIN_GIT_REVISION "unknown"
#endif

namespace vstain::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Input problems that map to exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Hash or lock conflicts that map to exit code 3.
class IntegrityFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string now_utc() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot open " + p.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw archive::IntegrityError(p.string() + " is not valid JSON: " + e.what());
    }
}

std::vector<std::string> list_pngs(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw UsageError(dir.string() + " is not a directory");
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

/// Area-downscales to `size` when the image is an integer multiple of it.
Image8 fit_size(const Image8& img, int size, const std::string& what) {
    if (img.width == size && img.height == size) return img;
    if (img.width != img.height || img.width % size)
        throw UsageError(what + ": " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                         " cannot be reduced to " + std::to_string(size) + "x" + std::to_string(size));
    return downscale_area(img, img.width / size);
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
    RunConfig cfg;
    try {
        if (!path.empty()) cfg = RunConfig::from_file(path);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + s + "'");
            cfg.set(s.substr(0, eq), s.substr(eq + 1));
        }
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

std::string seq_name(const char* prefix, long n) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s%06ld", prefix, n);
    return buf;
}

std::string patch_name(const data::PairedSample& s) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "scene_%04d_patch_%04d.png", s.meta.scene, s.meta.patch);
    return buf;
}

// gen-data ------------------------------------------------------------------------------

struct GenFlags {
    std::string out, config;
    std::vector<std::string> sets;
    std::optional<int> scenes;
    std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenFlags& f, std::ostream& out) {
    RunConfig cfg = load_config(f.config, f.sets);
    if (f.scenes) cfg.set("data.scenes", std::to_string(*f.scenes));
    if (f.seed) cfg.set("run.seed", std::to_string(*f.seed));
    data::DatasetSpec spec = cfg.dataset;
    spec.seed = cfg.seed;
    fs::create_directories(f.out);
    DirLock lock(f.out);
    const json m = data::build_dataset(spec, f.out);
    out << "dataset " << m.at("config_hash").get<std::string>() << " written to " << f.out << "\n";
    out << "train: " << m.at("counts").at("train") << " paired patches from " << m.at("splits").at("train").size()
        << " scenes\n";
    out << "test: " << m.at("counts").at("test") << " paired patches from " << m.at("splits").at("test").size()
        << " scenes\n";
    return ok;
}

// train ---------------------------------------------------------------------------------

struct TrainFlags {
    std::string out, config, manifest, model;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<long> steps;
    std::optional<long> stop_after;
    bool overwrite = false, resume = false;
};

multitask::TrainingData to_training(const std::vector<data::PairedSample>& patches) {
    multitask::TrainingData d;
    for (const auto& p : patches) {
        d.he.push_back(to_tensor(p.he));
        d.ihc.push_back(to_tensor(p.ihc));
        d.mask.push_back(p.coarse_mask);
    }
    return d;
}

/// Keeps the header and rows up to `step`.
void truncate_log(const fs::path& log, long step) {
    if (!fs::exists(log)) return;
    std::ifstream in(log);
    std::string line, kept;
    bool header = true;
    while (std::getline(in, line)) {
        if (header || (!line.empty() && std::stol(line.substr(0, line.find(','))) <= step)) kept += line + "\n";
        header = false;
    }
    in.close();
    write_atomic(log, kept);
}

int cmd_train(const TrainFlags& f, std::ostream& out) {
    RunConfig cfg = load_config(f.config, f.sets);
    if (f.seed) cfg.set("run.seed", std::to_string(*f.seed));
    if (!f.model.empty()) cfg.set("run.model", f.model);
    if (!f.manifest.empty()) cfg.set("run.manifest", f.manifest);
    if (f.steps) cfg.set("train.steps", std::to_string(*f.steps));
    if (cfg.manifest.empty()) throw UsageError("no dataset manifest: pass --manifest or set run.manifest");
    if (!fs::exists(cfg.manifest)) throw UsageError("dataset manifest " + cfg.manifest + " does not exist");
    if (f.overwrite && f.resume) throw UsageError("--overwrite and --resume are exclusive");

    const fs::path run(f.out);
    fs::create_directories(run);
    DirLock lock(run);
    const fs::path manifest_path = run / "run_manifest.json";
    const fs::path state_path = run / "state.bin";
    const fs::path log_path = run / "loss.csv";
    const fs::path ckpt_dir = run / "checkpoints";
    if (fs::exists(manifest_path) && !f.overwrite && !f.resume)
        throw IntegrityFailure("run directory " + run.string() + " already holds a run; pass --overwrite or --resume");
    if (f.overwrite)
        for (const char* name : {"checkpoints", "state.bin", "loss.csv", "config.ini", "run_manifest.json", "samples", "reports"})
            fs::remove_all(run / name);
    fs::create_directories(ckpt_dir);

    const std::string chash = cfg.hash();
    const json dmanifest = read_json(cfg.manifest);
    const auto schedule = cfg.schedule.make();
    const auto train_data = to_training(data::load_split(cfg.manifest, "train", cfg.unet.image_size));
    if (train_data.size() == 0) throw UsageError("dataset " + cfg.manifest + " has no training patches");
    long total = cfg.train.steps;
    if (cfg.train.epochs > 0)
        total = cfg.train.epochs * static_cast<long>((train_data.size() + cfg.train.batch_size - 1) / cfg.train.batch_size);

    json rm;
    std::optional<multitask::TrainState> state;
    if (f.resume) {
        if (!fs::exists(state_path)) throw UsageError("--resume: no train state in " + run.string());
        std::string saved_hash;
        state.emplace(multitask::load_train_state(state_path, &saved_hash));
        if (saved_hash != chash)
            throw IntegrityFailure("train state config hash " + saved_hash + " does not match config hash " + chash);
        rm = read_json(manifest_path);
        truncate_log(log_path, state->step);
    } else {
        Rng init = Rng::derive(cfg.seed, {0});
        state.emplace(multitask::make_model(cfg.model, cfg.unet, init), cfg.adam_for(total), cfg.seed);
        fs::remove(log_path);
        rm = {{"format", "vstain-run"}, {"version", 1}, {"started", now_utc()}, {"checkpoints", json::array()}};
    }
    rm["config_hash"] = chash;
    rm["revision"] = source_revision();
    rm["seed"] = std::to_string(cfg.seed);
    rm["model"] = multitask::to_string(cfg.model);
    rm["schedule_hash"] = schedule.hash();
    rm["dataset"] = {{"manifest", fs::absolute(cfg.manifest).string()},
                     {"config_hash", dmanifest.at("config_hash")}};
    rm["loss_log"] = "loss.csv";
    rm["train_state"] = "state.bin";
    rm["status"] = "running";
    rm["finished"] = nullptr;
    rm["steps_total"] = total;
    rm["steps_completed"] = state->step;
    write_atomic(run / "config.ini", cfg.canonical_ini());
    write_atomic(manifest_path, rm.dump(2) + "\n");

    const multitask::CheckpointInfo base{cfg.model, cfg.unet, schedule.hash(), chash, 0};
    multitask::TrainOptions opt;
    opt.steps = total;
    opt.batch_size = cfg.train.batch_size;
    opt.weights = cfg.train.weights;
    opt.checkpoint_every = cfg.train.checkpoint_every;
    opt.stop_after = f.stop_after.value_or(-1);
    opt.log_csv = log_path;
    opt.on_checkpoint = [&](const multitask::TrainState& s) {
        multitask::CheckpointInfo info = base;
        info.step = s.step;
        const std::string name = s.step == total ? "final.ckpt" : seq_name("step_", s.step) + ".ckpt";
        multitask::save_checkpoint(ckpt_dir / name, s.model, info);
        multitask::save_train_state(state_path, s, chash);
        const std::string rel = "checkpoints/" + name;
        auto& list = rm["checkpoints"];
        if (std::find(list.begin(), list.end(), rel) == list.end()) list.push_back(rel);
        rm["steps_completed"] = s.step;
        write_atomic(manifest_path, rm.dump(2) + "\n");
    };

    const bool done = multitask::train(*state, train_data, schedule, opt);
    if (!done) {
        multitask::save_train_state(state_path, *state, chash);
        rm["status"] = "stopped";
        rm["steps_completed"] = state->step;
        write_atomic(manifest_path, rm.dump(2) + "\n");
        out << "stopped after step " << state->step << " of " << total << "; continue with --resume\n";
        return ok;
    }
    if (!fs::exists(ckpt_dir / "final.ckpt")) opt.on_checkpoint(*state);
    rm["status"] = "complete";
    rm["finished"] = now_utc();
    write_atomic(manifest_path, rm.dump(2) + "\n");
    out << "trained " << multitask::to_string(cfg.model) << " for " << total << " steps; avg L_final "
        << state->avg.total << "; config " << chash << "\n";
    return ok;
}

// sample ----------------------------------------------------------------------------------

struct SampleFlags {
    std::string run, checkpoint, config, input, manifest, split = "test", out;
    std::optional<std::uint64_t> seed;
    std::size_t limit = 0;
    bool seg = false;
};

int cmd_sample(const SampleFlags& f, std::ostream& out, std::ostream& err) {
    fs::path ckpt = f.checkpoint, config = f.config, outdir = f.out;
    if (!f.run.empty()) {
        if (ckpt.empty()) ckpt = fs::path(f.run) / "checkpoints" / "final.ckpt";
        if (config.empty()) config = fs::path(f.run) / "config.ini";
        if (outdir.empty()) outdir = fs::path(f.run) / "samples";
    }
    if (ckpt.empty() || config.empty() || outdir.empty())
        throw UsageError("sample needs --run, or --checkpoint with --config and --out");
    if (f.input.empty() == f.manifest.empty()) throw UsageError("sample needs exactly one of --input or --manifest");
    const RunConfig cfg = load_config(config.string(), {});
    const auto schedule = cfg.schedule.make();
    auto [model, info] = multitask::load_checkpoint(ckpt);
    if (info.config_hash != cfg.hash()) {
        err << "checkpoint config hash " << info.config_hash << " does not match config hash " << cfg.hash() << "\n";
        return integrity;
    }
    if (info.schedule_hash != schedule.hash()) {
        err << "checkpoint schedule hash " << info.schedule_hash << " does not match schedule hash " << schedule.hash()
            << "\n";
        return integrity;
    }
    const int size = info.config.image_size;
    std::vector<std::string> names;
    std::vector<ImageTensor> inputs;
    if (!f.input.empty()) {
        for (const auto& n : list_pngs(f.input)) {
            if (f.limit && names.size() >= f.limit) break;
            inputs.push_back(to_tensor(fit_size(read_png(fs::path(f.input) / n), size, n)));
            names.push_back(n);
        }
    } else {
        for (const auto& p : data::load_split(f.manifest, f.split, size, f.limit)) {
            inputs.push_back(to_tensor(p.he));
            names.push_back(patch_name(p));
        }
    }
    if (inputs.empty()) throw UsageError("no input images");

    fs::create_directories(outdir);
    DirLock lock(outdir);
    if (f.seg) fs::create_directories(outdir / "seg");
    const std::uint64_t seed = f.seed.value_or(cfg.seed);
    const diffusion::SamplerOptions sopt{cfg.clamp_x0};
    constexpr std::size_t chunk = 16;
    for (std::size_t b = 0; b < inputs.size(); b += chunk) {
        const std::size_t e = std::min(inputs.size(), b + chunk);
        const std::span<const ImageTensor> he(inputs.data() + b, e - b);
        std::vector<Rng> rngs;
        for (std::size_t i = b; i < e; ++i) rngs.push_back(Rng::derive(seed, {fnv1a64(names[i]), 0}));
        const auto ihc = multitask::infer_stain_batch(model, he, schedule, rngs, sopt);
        for (std::size_t i = b; i < e; ++i) write_png(outdir / names[i], to_image8(ihc[i - b]));
        if (f.seg) {
            std::vector<Rng> srngs;
            for (std::size_t i = b; i < e; ++i) srngs.push_back(Rng::derive(seed, {fnv1a64(names[i]), 1}));
            const auto masks = multitask::infer_seg_batch(model, he, schedule, srngs, sopt);
            for (std::size_t i = b; i < e; ++i) write_png(outdir / "seg" / names[i], mask_to_gray(masks[i - b]));
        }
    }
    const json sj = {{"format", "vstain-samples"},
                     {"version", 1},
                     {"config_hash", info.config_hash},
                     {"schedule_hash", info.schedule_hash},
                     {"checkpoint", fs::absolute(ckpt).string()},
                     {"checkpoint_step", info.step},
                     {"model", multitask::to_string(info.kind)},
                     {"seed", std::to_string(seed)},
                     {"seg", f.seg},
                     {"files", names}};
    write_atomic(outdir / "samples.json", sj.dump(2) + "\n");
    out << "sampled " << names.size() << " images into " << outdir.string() << "\n";
    return ok;
}

// eval ------------------------------------------------------------------------------------

struct EvalFlags {
    std::string real, real_manifest, split = "test", fake, out, config, extractor, fid_extractor, external_real,
        external_fake;
    std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
    if (f.real.empty() == f.real_manifest.empty()) throw UsageError("eval needs exactly one of --real or --real-manifest");
    std::optional<RunConfig> cfg;
    if (!f.config.empty()) cfg = load_config(f.config, {});
    metrics::EvalConfig ec;
    if (cfg) {
        ec.extractor = cfg->eval.extractor;
        ec.fid_extractor = cfg->eval.fid_extractor;
        ec.projection_dim = cfg->eval.projection_dim;
        ec.fd_inf_reps = cfg->eval.fd_inf_reps;
        ec.seed = cfg->seed;
    }
    if (!f.extractor.empty()) ec.extractor = f.extractor;
    if (!f.fid_extractor.empty()) ec.fid_extractor = f.fid_extractor;
    if (f.seed) ec.seed = *f.seed;
    ec.external_real = f.external_real;
    ec.external_fake = f.external_fake;

    const auto fake_names = list_pngs(f.fake);
    if (fake_names.empty()) throw UsageError("no images in " + f.fake);
    std::map<std::string, Image8> fake, real;
    for (const auto& n : fake_names) fake[n] = read_png(fs::path(f.fake) / n);
    const int size = fake.begin()->second.width;
    if (!f.real.empty()) {
        for (const auto& n : list_pngs(f.real)) real[n] = read_png(fs::path(f.real) / n);
    } else {
        for (const auto& p : data::load_split(f.real_manifest, f.split, size)) real[patch_name(p)] = p.ihc;
    }
    std::vector<std::string> unpaired;
    for (const auto& [n, img] : fake)
        if (!real.count(n)) unpaired.push_back(n + " (no real image)");
    if (!f.real.empty())
        for (const auto& [n, img] : real)
            if (!fake.count(n)) unpaired.push_back(n + " (no fake image)");
    if (!unpaired.empty()) {
        std::string msg = "unpaired images:";
        for (const auto& u : unpaired) msg += "\n  " + u;
        throw UsageError(msg);
    }
    std::vector<ImageTensor> rt, ft;
    for (const auto& [n, img] : fake) {
        ft.push_back(to_tensor(img));
        rt.push_back(to_tensor(fit_size(real.at(n), img.width, n)));
    }
    const fs::path sj = fs::path(f.fake) / "samples.json";
    if (fs::exists(sj))
        ec.config_hash = read_json(sj).at("config_hash");
    else if (cfg)
        ec.config_hash = cfg->hash();
    try {
        const metrics::MetricReport report = metrics::evaluate_images(rt, ft, ec);
        out << report.table();
        if (!f.out.empty()) {
            if (fs::path(f.out).has_parent_path()) fs::create_directories(fs::path(f.out).parent_path());
            write_atomic(f.out, report.to_json().dump(2) + "\n");
        }
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return ok;
}

// seg-coarse ---------------------------------------------------------------------------------

struct SegFlags {
    std::string input, gt, manifest, split = "test", out, config;
    std::optional<double> threshold;
    std::optional<int> min_object_px;
    std::optional<std::uint64_t> seed;
};

int cmd_seg_coarse(const SegFlags& f, std::ostream& out, std::ostream& err) {
    if (f.input.empty() == f.manifest.empty()) throw UsageError("seg-coarse needs exactly one of --input or --manifest");
    const RunConfig cfg = load_config(f.config, {});
    data::CoarseMaskParams params = cfg.dataset.coarse;
    if (f.threshold) params.od_threshold = *f.threshold;
    if (f.min_object_px) params.min_object_px = *f.min_object_px;
    if (!(params.od_threshold > 0)) throw UsageError("--threshold must be positive");

    struct Item {
        std::string name;
        fs::path ihc, gt;
    };
    std::vector<Item> items;
    if (!f.input.empty()) {
        for (const auto& n : list_pngs(f.input))
            items.push_back({n, fs::path(f.input) / n, f.gt.empty() ? fs::path() : fs::path(f.gt) / n});
    } else {
        const json m = read_json(f.manifest);
        const fs::path root = fs::path(f.manifest).parent_path();
        for (const auto& p : m.at("patches")) {
            if (p.at("split") != f.split) continue;
            const std::string stem = p.at("stem");
            char buf[48];
            std::snprintf(buf, sizeof(buf), "scene_%04d_patch_%04d.png", p.at("scene").get<int>(), p.at("patch").get<int>());
            items.push_back({buf, root / (stem + "_ihc.png"), root / (stem + "_gt.png")});
        }
    }
    fs::create_directories(f.out);
    DirLock lock(f.out);
    std::size_t done = 0, skipped = 0, with_gt = 0;
    double area = 0, iou = 0;
    for (const auto& it : items) {
        Image8 ihc;
        try {
            ihc = read_png(it.ihc);
        } catch (const std::exception& e) {
            err << "warning: skipping " << it.ihc.string() << ": " << e.what() << "\n";
            ++skipped;
            continue;
        }
        const Mask m = data::dab_threshold_mask(ihc, params);
        write_png(fs::path(f.out) / it.name, mask_to_gray(m));
        area += static_cast<double>(m.count()) / static_cast<double>(m.bits.size());
        ++done;
        if (!it.gt.empty() && fs::exists(it.gt)) {
            iou += intersection_over_union(m, mask_from_gray(read_png(it.gt, true)));
            ++with_gt;
        }
    }
    json summary = {{"format", "vstain-coarse"},
                    {"version", 1},
                    {"config_hash", cfg.hash()},
                    {"od_threshold", params.od_threshold},
                    {"min_object_px", params.min_object_px},
                    {"masks", done},
                    {"skipped", skipped},
                    {"mean_area_fraction", done ? area / static_cast<double>(done) : 0.0}};
    out << "masks " << done << ", skipped " << skipped << ", mean area fraction "
        << summary["mean_area_fraction"].get<double>();
    if (with_gt) {
        summary["mean_iou"] = iou / static_cast<double>(with_gt);
        out << ", mean IoU vs gt " << summary["mean_iou"].get<double>() << " over " << with_gt;
    }
    out << "\n";
    write_atomic(fs::path(f.out) / "coarse.json", summary.dump(2) + "\n");
    return skipped ? partial : ok;
}

// verify ---------------------------------------------------------------------------------------

int cmd_verify(const std::string& run_dir, std::ostream& out) {
    const fs::path run(run_dir);
    if (!fs::exists(run / "config.ini")) throw UsageError(run.string() + " has no config.ini");
    const RunConfig cfg = load_config((run / "config.ini").string(), {});
    const std::string h = cfg.hash();
    const std::string sh = cfg.schedule.make().hash();
    int checked = 0, bad = 0;
    auto check = [&](const std::string& what, const std::string& expected, const std::string& actual) {
        ++checked;
        if (expected == actual) {
            out << "ok        " << what << "\n";
        } else {
            ++bad;
            out << "MISMATCH  " << what << ": expected " << expected << ", found " << actual << "\n";
        }
    };
    auto guarded = [&](const std::string& what, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            ++checked;
            ++bad;
            out << "MISMATCH  " << what << ": " << e.what() << "\n";
        }
    };
    out << "config " << h << "\n";
    if (fs::exists(run / "run_manifest.json")) {
        guarded("run_manifest.json", [&] {
            const json rm = read_json(run / "run_manifest.json");
            check("run_manifest.json", h, rm.at("config_hash"));
            const fs::path dm = rm.at("dataset").at("manifest").get<std::string>();
            if (fs::exists(dm))
                check("dataset " + dm.string(), rm.at("dataset").at("config_hash"), read_json(dm).at("config_hash"));
            else
                check("dataset " + dm.string(), "present", "missing");
        });
    }
    if (fs::exists(run / "checkpoints"))
        for (const auto& e : fs::directory_iterator(run / "checkpoints")) {
            if (e.path().extension() != ".ckpt") continue;
            const std::string what = "checkpoints/" + e.path().filename().string();
            guarded(what, [&] {
                const auto info = multitask::read_checkpoint_info(archive::read_file(e.path()));
                check(what, h, info.config_hash);
                check(what + " schedule", sh, info.schedule_hash);
            });
        }
    if (fs::exists(run / "state.bin"))
        guarded("state.bin", [&] { check("state.bin", h, archive::read_file(run / "state.bin").header.at("config_hash")); });
    for (const auto& e : fs::recursive_directory_iterator(run)) {
        const auto name = e.path().filename().string();
        const std::string rel = fs::relative(e.path(), run).string();
        if (name == "samples.json")
            guarded(rel, [&] { check(rel, h, read_json(e.path()).at("config_hash")); });
        else if (e.path().extension() == ".json" && e.path().parent_path().filename() == "reports")
            guarded(rel, [&] { check(rel, h, read_json(e.path()).at("config_hash")); });
    }
    out << checked << " checks, " << bad << " mismatches\n";
    return bad ? integrity : ok;
}

}  // namespace

// Public helpers ------------------------------------------------------------------------------

DirLock::DirLock(const fs::path& dir) : path_(dir / ".vstain.lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST)
            throw IntegrityFailure("output directory " + dir.string() + " is locked by another invocation (" +
                                   path_.string() + ")");
        throw std::runtime_error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

DirLock::~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

void write_atomic(const fs::path& path, const std::string& content) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f << content;
        f.flush();
        if (!f) throw std::runtime_error("write failed for " + tmp.string() + " (disk full?)");
    }
    fs::rename(tmp, path);
}

std::string source_revision() {
    return VSTAIN_GIT_REVISION;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Virtual staining with dual-branch conditional diffusion"};
    app.name("vstain");
    app.require_subcommand(1);

    GenFlags gen;
    auto* g = app.add_subcommand("gen-data", "Generate a synthetic paired H&E/IHC dataset");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--scenes", gen.scenes, "Number of synthetic scenes");
    g->add_option("--seed", gen.seed, "Master seed");
    g->add_option("--config", gen.config, "INI run config");
    g->add_option("--set", gen.sets, "Override section.key=value");

    TrainFlags tr;
    auto* t = app.add_subcommand("train", "Train a model");
    t->add_option("--out", tr.out, "Run directory")->required();
    t->add_option("--config", tr.config, "INI run config");
    t->add_option("--manifest", tr.manifest, "Dataset manifest.json");
    t->add_option("--model", tr.model, "mtdd | msd | sdwos");
    t->add_option("--seed", tr.seed, "Seed");
    t->add_option("--steps", tr.steps, "Optimizer steps");
    t->add_option("--set", tr.sets, "Override section.key=value");
    t->add_flag("--overwrite", tr.overwrite, "Replace an existing run");
    t->add_flag("--resume", tr.resume, "Continue an existing run from its train state");
    t->add_option("--stop-after", tr.stop_after, "Stop after N steps of this invocation")->group("");

    SampleFlags sa;
    auto* s = app.add_subcommand("sample", "Generate virtual IHC from H&E");
    s->add_option("--run", sa.run, "Run directory (checkpoint, config, default output)");
    s->add_option("--checkpoint", sa.checkpoint, "Checkpoint file");
    s->add_option("--config", sa.config, "Run config the checkpoint was trained with");
    s->add_option("--input", sa.input, "Directory of H&E PNGs");
    s->add_option("--manifest", sa.manifest, "Dataset manifest to read H&E patches from");
    s->add_option("--split", sa.split, "Split for --manifest");
    s->add_option("--limit", sa.limit, "Maximum number of inputs");
    s->add_option("--out", sa.out, "Output directory");
    s->add_option("--seed", sa.seed, "Sampling seed");
    s->add_flag("--seg", sa.seg, "Also sample diagnostic masks from the segmentation branch");

    EvalFlags ev;
    auto* e = app.add_subcommand("eval", "Compare real and generated images");
    e->add_option("--real", ev.real, "Directory of real images");
    e->add_option("--real-manifest", ev.real_manifest, "Dataset manifest providing real IHC");
    e->add_option("--split", ev.split, "Split for --real-manifest");
    e->add_option("--fake", ev.fake, "Directory of generated images")->required();
    e->add_option("--out", ev.out, "Report JSON path");
    e->add_option("--config", ev.config, "INI run config");
    e->add_option("--extractor", ev.extractor, "FD/FD∞/KID features: randproj | handcrafted | external");
    e->add_option("--fid-extractor", ev.fid_extractor, "FID features: randproj | handcrafted | external");
    e->add_option("--external-real", ev.external_real, "Feature file for real images");
    e->add_option("--external-fake", ev.external_fake, "Feature file for fake images");
    e->add_option("--seed", ev.seed, "Projection and subsampling seed");

    SegFlags sg;
    auto* c = app.add_subcommand("seg-coarse", "Coarse masks by DAB thresholding");
    c->add_option("--input", sg.input, "Directory of IHC PNGs");
    c->add_option("--gt", sg.gt, "Directory of ground-truth masks with matching names");
    c->add_option("--manifest", sg.manifest, "Dataset manifest (uses IHC and ground truth)");
    c->add_option("--split", sg.split, "Split for --manifest");
    c->add_option("--out", sg.out, "Output directory")->required();
    c->add_option("--config", sg.config, "INI run config");
    c->add_option("--threshold", sg.threshold, "DAB optical density threshold");
    c->add_option("--min-object-px", sg.min_object_px, "Smallest kept component");
    c->add_option("--seed", sg.seed, "Accepted for uniformity; the command is deterministic");

    std::string verify_run;
    auto* v = app.add_subcommand("verify", "Check config-hash consistency of a run directory");
    v->add_option("--run", verify_run, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? ok : usage;
    }

    try {
        if (*g) return cmd_gen_data(gen, out);
        if (*t) return cmd_train(tr, out);
        if (*s) return cmd_sample(sa, out, err);
        if (*e) return cmd_eval(ev, out);
        if (*c) return cmd_seg_coarse(sg, out, err);
        if (*v) return cmd_verify(verify_run, out);
    } catch (const UsageError& x) {
        err << "error: " << x.what() << "\n";
        return usage;
    } catch (const IntegrityFailure& x) {
        err << "error: " << x.what() << "\n";
        return integrity;
    } catch (const archive::IntegrityError& x) {
        err << "integrity error: " << x.what() << "\n";
        return integrity;
    } catch (const std::exception& x) {
        err << "error: " << x.what() << "\n";
        return partial;
    }
    return usage;
}

}  // namespace vstain::cli
