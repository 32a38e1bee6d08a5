// Acceptance gates. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Pass criterion numbers to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "oracles.hpp"
#include "vstain/cli.hpp"
#include "vstain/config.hpp"
#include "vstain/data.hpp"
#include "vstain/denoiser.hpp"
#include "vstain/diffusion.hpp"
#include "vstain/hash.hpp"
#include "vstain/metrics.hpp"
#include "vstain/multitask.hpp"

namespace fs = std::filesystem;
using namespace vstain;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("vstain_accept_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "vstain");
    std::ostringstream out, err;
    const int rc = cli::run(args, out, err);
    if (rc != 0) std::cerr << "  vstain " << args[1] << " exited " << rc << ": " << err.str();
    return rc;
}

// 1 -----------------------------------------------------------------------------

Outcome ddpm_math() {
    Rng rng = Rng::derive(101, {1});
    double worst = 0;
    for (int k = 0; k < 10; ++k) {
        const double g_prev = rng.uniform(0.05, 0.999), beta = rng.uniform(1e-4, 0.5);
        const diffusion::NoiseSchedule s({1.0 - g_prev, beta});
        ImageTensor x0(1, 1, 1), xt(1, 1, 1);
        x0.at(0, 0, 0) = rng.uniform(-1, 1);
        xt.at(0, 0, 0) = rng.normal();
        const auto p = diffusion::posterior_params(x0, xt, 2, s);
        const auto o = oracle::grid_posterior(x0.at(0, 0, 0), xt.at(0, 0, 0), g_prev, beta);
        worst = std::max({worst, std::abs(p.mu.at(0, 0, 0) - o.mean), std::abs(p.sigma2 - o.var)});
    }

    const int n = 100000;
    const auto s = diffusion::make_linear_schedule(5, 0.05, 0.3);
    ImageTensor x0(1, n, 1);
    for (int i = 0; i < n; ++i) x0.at(0, i, 0) = 0.7;
    Rng r = Rng::derive(101, {2});
    ImageTensor composed = x0;
    for (int t = 1; t <= 5; ++t)
        composed = diffusion::q_sample_step(composed, s.beta(t), ImageTensor::gaussian(1, n, 1, r));
    const ImageTensor marginal = diffusion::q_sample(x0, 5, s, ImageTensor::gaussian(1, n, 1, r));
    auto moments = [n](const ImageTensor& x) {
        double m = 0, v = 0;
        for (int i = 0; i < n; ++i) m += x.at(0, i, 0);
        m /= n;
        for (int i = 0; i < n; ++i) v += (x.at(0, i, 0) - m) * (x.at(0, i, 0) - m);
        return oracle::Moments{m, v / (n - 1)};
    };
    const auto a = moments(composed), b = moments(marginal);
    const double se_mean = std::sqrt(a.var / n + b.var / n);
    const double se_var = std::sqrt(2 * a.var * a.var / (n - 1) + 2 * b.var * b.var / (n - 1));
    const double zm = std::abs(a.mean - b.mean) / se_mean, zv = std::abs(a.var - b.var) / se_var;
    return {worst < 1e-6 && zm < 3 && zv < 3,
            fmt("posterior max |err| %.2e (tol 1e-6); composed vs marginal: mean %.2f SE, variance %.2f SE", worst, zm,
                zv)};
}

// 2 -----------------------------------------------------------------------------

denoiser::UNetConfig tiny_config(denoiser::Fusion fusion) {
    denoiser::UNetConfig c;
    c.image_size = 8;
    c.base_channels = 4;
    c.channel_multipliers = {1, 2};
    c.time_embed_dim = 8;
    c.fft_attention_levels = {0, 1};
    c.norm_groups = 2;
    c.fusion = fusion;
    return c;
}

Outcome gradient_gate() {
    double worst = 0;
    int checked = 0, fft_checked = 0;
    for (auto fusion : {denoiser::Fusion::gate, denoiser::Fusion::add}) {
        const auto cfg = tiny_config(fusion);
        Rng rng = Rng::derive(202, {static_cast<std::uint64_t>(fusion)});
        denoiser::ConditionEncoder enc(cfg, rng);
        denoiser::UNetDenoiser net(cfg, rng);
        // Move the spectral weights off their initial value so the check is generic.
        for (auto& e : net.params().entries())
            if (e.name.find(".fft.") != std::string::npos)
                for (auto& v : e.value.values()) v += 0.3 * rng.normal();
        std::vector<ImageTensor> cond, xt, eps;
        for (int i = 0; i < 2; ++i) {
            cond.push_back(ImageTensor::gaussian(8, 8, 3, rng));
            xt.push_back(ImageTensor::gaussian(8, 8, 3, rng));
            eps.push_back(ImageTensor::gaussian(8, 8, 3, rng));
        }
        const std::vector<int> steps{3, 17};
        auto loss = [&](nn::Tape& tape) {
            const auto feats = enc.forward(tape, tape.constant(denoiser::to_batch(cond)));
            const nn::Var out = net.forward(tape, feats, tape.constant(denoiser::to_batch(xt)), steps);
            return nn::mse(tape, out, tape.constant(denoiser::to_batch(eps)), "loss");
        };
        nn::Tape tape;
        tape.backward(loss(tape));

        std::vector<std::pair<std::string, nn::Tensor*>> params;
        for (auto& e : enc.params().entries()) params.push_back({"enc/" + e.name, &e.value});
        for (auto& e : net.params().entries()) params.push_back({"net/" + e.name, &e.value});
        for (auto& [name, t] : params) {
            const nn::Tensor* g = tape.gradient_of(*t);
            if (!g) return {false, "no gradient reached " + name};
            for (int k = 0; k < 3; ++k) {
                const std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(t->size()) - 1));
                const double h = 1e-5, keep = (*t)[i];
                (*t)[i] = keep + h;
                nn::Tape tp(false);
                const double up = tp.value(loss(tp))[0];
                (*t)[i] = keep - h;
                nn::Tape tm(false);
                const double dn = tm.value(loss(tm))[0];
                (*t)[i] = keep;
                const double fd = (up - dn) / (2 * h), an = (*g)[i];
                const double rel = std::abs(fd - an) / std::max(std::abs(fd) + std::abs(an), 1e-6);
                worst = std::max(worst, rel);
                ++checked;
                fft_checked += name.find(".fft.") != std::string::npos;
            }
        }
    }
    return {worst < 1e-3, fmt("%d coordinates (%d spectral), gate and add fusion; max rel err %.2e (tol 1e-3)", checked,
                              fft_checked, worst)};
}

// 3 -----------------------------------------------------------------------------

multitask::Batch tiny_batch(Rng& rng, int n) {
    multitask::Batch b;
    for (int i = 0; i < n; ++i) {
        b.he.push_back(ImageTensor::gaussian(8, 8, 3, rng));
        b.ihc.push_back(ImageTensor::gaussian(8, 8, 3, rng));
        Mask m(8, 8);
        for (auto& v : m.bits) v = rng.uniform() < 0.4;
        b.mask.push_back(m);
    }
    return b;
}

Outcome multitask_structure() {
    const auto cfg = tiny_config(denoiser::Fusion::gate);
    Rng init = Rng::derive(303, {0});
    multitask::Model model = multitask::make_model(multitask::ModelKind::mtdd, cfg, init);
    const auto sched = diffusion::make_linear_schedule(20, 1e-4, 0.2);
    Rng data_rng = Rng::derive(303, {1});
    const auto batch = tiny_batch(data_rng, 2);
    const Rng step_rng = Rng::derive(303, {2});

    Rng r0 = step_rng;
    const auto g = multitask::mtdd_gradients(model, batch, sched, r0);
    const auto refs = model.parameters();
    double seg_on_phi = 0, gen_on_theta = 0, additivity = 0;
    for (std::size_t p = 0; p < refs.size(); ++p) {
        const std::string& n = refs[p].name;
        for (std::size_t i = 0; i < g.total[p].size(); ++i) {
            if (n.starts_with("gen/")) seg_on_phi = std::max(seg_on_phi, std::abs(g.seg[p][i]));
            if (n.starts_with("seg/")) gen_on_theta = std::max(gen_on_theta, std::abs(g.gen[p][i]));
            if (n.starts_with("encoder/"))
                additivity = std::max(additivity, std::abs(g.total[p][i] - g.seg[p][i] - g.gen[p][i]));
        }
    }
    // Finite differences of the joint loss on encoder coordinates, same noise draws.
    Rng pick = Rng::derive(303, {3});
    double fd_worst = 0;
    int fd_checked = 0;
    for (std::size_t p = 0; p < refs.size(); ++p) {
        if (!refs[p].name.starts_with("encoder/")) continue;
        nn::Tensor& t = *refs[p].value;
        const std::size_t i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(t.size()) - 1));
        const double h = 1e-5, keep = t[i];
        t[i] = keep + h;
        Rng ru = step_rng;
        const double up = multitask::mtdd_gradients(model, batch, sched, ru).losses.total;
        t[i] = keep - h;
        Rng rd = step_rng;
        const double dn = multitask::mtdd_gradients(model, batch, sched, rd).losses.total;
        t[i] = keep;
        const double fd = (up - dn) / (2 * h), an = g.seg[p][i] + g.gen[p][i];
        fd_worst = std::max(fd_worst, std::abs(fd - an) / std::max(std::abs(fd) + std::abs(an), 1e-6));
        ++fd_checked;
    }

    model.gen.reset_calls();
    model.seg->reset_calls();
    Rng sr = Rng::derive(303, {4});
    multitask::infer_stain(model, batch.he[0], sched, sr);
    const long theta_calls = model.seg->forward_calls(), phi_calls = model.gen.forward_calls();

    const bool pass = seg_on_phi == 0 && gen_on_theta == 0 && additivity < 1e-12 && fd_worst < 1e-3 &&
                      theta_calls == 0 && phi_calls == sched.steps();
    return {pass, fmt("max|dLseg/dphi| %g, max|dLgen/dtheta| %g, additivity %.1e, encoder FD rel err %.2e over %d; "
                      "inference calls theta %ld phi %ld",
                      seg_on_phi, gen_on_theta, additivity, fd_worst, fd_checked, theta_calls, phi_calls)};
}

// 4 -----------------------------------------------------------------------------

Outcome toy_recovery() {
    denoiser::UNetConfig cfg;
    cfg.image_size = 8;
    cfg.in_channels = cfg.out_channels = cfg.cond_channels = 1;
    cfg.base_channels = 8;
    cfg.channel_multipliers = {1, 2};
    cfg.time_embed_dim = 16;
    cfg.fft_attention_levels = {0, 1};
    cfg.norm_groups = 1;
    const std::uint64_t seed = 404;
    const auto sched = diffusion::make_linear_schedule(150, 1e-4, 0.1);

    Rng data_rng = Rng::derive(seed, {9});
    multitask::TrainingData d;
    int positive = 0;
    const int n_train = 400;
    for (int i = 0; i < n_train; ++i) {
        const bool pos = data_rng.uniform() < 0.3;
        positive += pos;
        d.he.emplace_back(8, 8, 1);
        ImageTensor x(8, 8, 1);
        for (auto& v : x.values()) v = pos ? 0.8 : -0.8;
        d.ihc.push_back(x);
    }
    const double p_train = static_cast<double>(positive) / n_train;

    Rng init = Rng::derive(seed, {0});
    multitask::AdamConfig adam;
    adam.lr = 2e-3;
    adam.schedule = multitask::LrSchedule::cosine;
    adam.decay_steps = 2000;
    multitask::TrainState state(multitask::make_model(multitask::ModelKind::msd, cfg, init), adam, seed);
    multitask::TrainOptions opt;
    opt.steps = 2000;
    opt.batch_size = 64;
    multitask::train(state, d, sched, opt);

    const int n_samples = 500;
    std::vector<ImageTensor> cond(n_samples, ImageTensor(8, 8, 1));
    std::vector<Rng> rngs;
    for (int i = 0; i < n_samples; ++i) rngs.push_back(Rng::derive(seed, {10, static_cast<std::uint64_t>(i)}));
    const auto samples = multitask::infer_stain_batch(state.model, cond, sched, rngs);
    int pos = 0;
    for (const auto& s : samples) {
        double m = 0;
        for (double v : s.values()) m += v;
        pos += m > 0;
    }
    const double p_sample = static_cast<double>(pos) / n_samples;
    return {std::abs(p_sample - p_train) <= 0.05,
            fmt("positive mode: training %.3f, sampled %.3f over %d (tol 0.05); final avg loss %.4f", p_train,
                p_sample, n_samples, state.avg.total)};
}

// 5 -----------------------------------------------------------------------------

std::string patch_name(const data::PairedSample& s) {
    return fmt("scene_%04d_patch_%04d.png", s.meta.scene, s.meta.patch);
}

/// Pooled F1 of DAB positivity in sampled IHC against the target-cell mask.
double staining_f1(const multitask::Model& model, const std::vector<data::PairedSample>& test,
                   const diffusion::NoiseSchedule& sched, std::uint64_t seed, double od_threshold) {
    oracle::F1Counts counts;
    for (std::size_t b = 0; b < test.size(); b += 16) {
        const std::size_t e = std::min(test.size(), b + 16);
        std::vector<ImageTensor> he;
        std::vector<Rng> rngs;
        for (std::size_t i = b; i < e; ++i) {
            he.push_back(to_tensor(test[i].he));
            rngs.push_back(Rng::derive(seed, {fnv1a64(patch_name(test[i])), 0}));
        }
        const auto ihc = multitask::infer_stain_batch(model, he, sched, rngs);
        for (std::size_t i = b; i < e; ++i)
            counts.add(data::dab_positive(to_image8(ihc[i - b]), od_threshold), test[i].gt_mask);
    }
    return counts.f1();
}

struct StainRun {
    double f1 = 0;
    double seconds = 0;
};

StainRun train_and_score(multitask::ModelKind kind, double discriminability, const fs::path& dir) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg;
    cfg.seed = 505;
    cfg.model = kind;
    cfg.dataset.scenes = 64;
    cfg.dataset.seed = cfg.seed;
    cfg.dataset.scene.discriminability = discriminability;
    const fs::path data_dir = dir / fmt("data_d%g", discriminability);
    if (!fs::exists(data_dir / "manifest.json")) data::build_dataset(cfg.dataset, data_dir);
    const fs::path manifest = data_dir / "manifest.json";
    const auto sched = cfg.schedule.make();

    multitask::TrainingData d;
    for (const auto& p : data::load_split(manifest, "train", cfg.unet.image_size)) {
        d.he.push_back(to_tensor(p.he));
        d.ihc.push_back(to_tensor(p.ihc));
        d.mask.push_back(p.coarse_mask);
    }
    Rng init = Rng::derive(cfg.seed, {0});
    multitask::TrainState state(multitask::make_model(kind, cfg.unet, init), cfg.adam_for(cfg.train.steps), cfg.seed);
    multitask::TrainOptions opt;
    opt.steps = cfg.train.steps;
    opt.batch_size = cfg.train.batch_size;
    opt.weights = cfg.train.weights;
    multitask::train(state, d, sched, opt);
    const auto test = data::load_split(manifest, "test", cfg.unet.image_size);
    const double f1 = staining_f1(state.model, test, sched, cfg.seed, cfg.dataset.coarse.od_threshold);
    return {f1, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

Outcome staining_regression() {
    const fs::path dir = scratch("staining");
    const auto easy = train_and_score(multitask::ModelKind::mtdd, 1.0, dir);
    std::cout << fmt("  mtdd at discriminability 1: F1 %.4f (%.0f s)\n", easy.f1, easy.seconds) << std::flush;
    const auto hard_mt = train_and_score(multitask::ModelKind::mtdd, 0.0, dir);
    std::cout << fmt("  mtdd at discriminability 0: F1 %.4f (%.0f s)\n", hard_mt.f1, hard_mt.seconds) << std::flush;
    const auto hard_msd = train_and_score(multitask::ModelKind::msd, 0.0, dir);
    std::cout << fmt("  msd  at discriminability 0: F1 %.4f (%.0f s)\n", hard_msd.f1, hard_msd.seconds) << std::flush;
    fs::remove_all(dir);
    return {easy.f1 >= 0.7 && hard_mt.f1 >= hard_msd.f1 - 0.02,
            fmt("easy mtdd F1 %.4f (>= 0.7); hard mtdd %.4f vs msd %.4f (margin -0.02)", easy.f1, hard_mt.f1,
                hard_msd.f1)};
}

// 6 -----------------------------------------------------------------------------

Outcome coarse_masks() {
    const data::SceneConfig sc;
    const data::CoarseMaskParams params;
    double iou = 0;
    for (int i = 0; i < 100; ++i) {
        Rng r = Rng::derive(606, {static_cast<std::uint64_t>(i)});
        const auto scene = data::generate_scene(sc, r);
        iou += intersection_over_union(data::dab_threshold_mask(scene.ihc, params), scene.gt_mask);
    }
    iou /= 100;
    const auto m = data::hdab_matrix();
    const auto inv = data::invert(m);
    Rng r = Rng::derive(606, {1000});
    double worst = 0;
    for (int k = 0; k < 1000;) {
        const data::Vec3 od{r.uniform(0, 1.5), r.uniform(0, 1.5), r.uniform(0, 0.3)};
        // The residual row has a negative green component; skip pixels brighter than white.
        bool realizable = true;
        for (int c = 0; c < 3; ++c) realizable = realizable && od[0] * m[0][c] + od[1] * m[1][c] + od[2] * m[2][c] >= 0;
        if (!realizable) continue;
        ++k;
        const auto back = data::deconvolve_pixel(data::synthesize_rgb(od, m), inv);
        for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(back[c] - od[c]));
    }
    return {iou >= 0.8 && worst < 1e-3,
            fmt("mean IoU %.4f over 100 scenes (>= 0.8); deconvolution round-trip max err %.2e (< 1e-3)", iou, worst)};
}

// 7 -----------------------------------------------------------------------------

metrics::GaussianStats stats(const Eigen::VectorXd& m, const Eigen::MatrixXd& c) {
    return {m, c, 1000};
}

Outcome metric_oracles() {
    double analytic = 0;
    Rng r = Rng::derive(707, {0});
    for (int k = 0; k < 10; ++k) {
        const double m1 = r.normal(), m2 = r.normal(), v1 = r.uniform(0.1, 4), v2 = r.uniform(0.1, 4);
        const double got = metrics::frechet_distance(stats(Eigen::VectorXd::Constant(1, m1), Eigen::MatrixXd::Constant(1, 1, v1)),
                                                     stats(Eigen::VectorXd::Constant(1, m2), Eigen::MatrixXd::Constant(1, 1, v2)));
        analytic = std::max(analytic, std::abs(got - oracle::fd_1d(m1, v1, m2, v2)));
        Eigen::Matrix2d a, b;
        a << r.uniform(0.5, 3), 0, r.uniform(-1, 1), r.uniform(0.5, 3);
        b << r.uniform(0.5, 3), 0, r.uniform(-1, 1), r.uniform(0.5, 3);
        const Eigen::Matrix2d s1 = a * a.transpose(), s2 = b * b.transpose();
        const Eigen::Vector2d mu1(r.normal(), r.normal()), mu2(r.normal(), r.normal());
        const double got2 = metrics::frechet_distance(stats(mu1, s1), stats(mu2, s2));
        analytic = std::max(analytic, std::abs(got2 - oracle::fd_2d(mu1, s1, mu2, s2)));
    }

    const int d = 8, n = 5000;
    Eigen::MatrixXd l1 = Eigen::MatrixXd::Zero(d, d), l2 = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) {
            l1(i, j) = i == j ? r.uniform(0.5, 1.5) : 0.3 * r.normal();
            l2(i, j) = i == j ? r.uniform(0.5, 1.5) : 0.3 * r.normal();
        }
    Eigen::VectorXd mu1(d), mu2(d);
    for (int i = 0; i < d; ++i) {
        mu1(i) = r.normal();
        mu2(i) = mu1(i) + 0.7 * r.normal();
    }
    const double exact = oracle::fd_analytic(mu1, l1 * l1.transpose(), mu2, l2 * l2.transpose());
    const double sampled = metrics::frechet_distance(metrics::fit_gaussian(oracle::sample_gaussian(mu1, l1, n, r)),
                                                     metrics::fit_gaussian(oracle::sample_gaussian(mu2, l2, n, r)));
    const double sampled_rel = std::abs(sampled - exact) / exact;

    double kid_err = 0;
    for (int k = 0; k < 3; ++k) {
        Eigen::MatrixXd x(40 + k, 6), y(35, 6);
        for (auto& v : x.reshaped()) v = r.normal();
        for (auto& v : y.reshaped()) v = r.normal() + 0.3;
        kid_err = std::max(kid_err, std::abs(metrics::kid(x, y) - oracle::kid_triple_loop(x, y)));
    }

    double ssim_err = 0;
    for (int k = 0; k < 3; ++k) {
        ImageTensor a(24, 20, 3), b(24, 20, 3);
        for (auto& v : a.values()) v = r.uniform(-1, 1);
        for (std::size_t i = 0; i < b.values().size(); ++i) b.values()[i] = 0.6 * a.values()[i] + 0.3 * r.normal();
        ssim_err = std::max(ssim_err, std::abs(metrics::ssim(a, b) - oracle::ssim_naive(a, b)));
    }

    // Anisotropic pair: a small plain-FD sample carries a large positive bias.
    int wins = 0;
    const Eigen::Vector2d m_a(0, 0), m_b(1, 0);
    Eigen::Matrix2d chol = Eigen::Matrix2d::Zero();
    chol(0, 0) = 0.1;
    chol(1, 1) = 3.0;
    const double truth = oracle::fd_2d(m_a, chol * chol, m_b, chol * chol);
    for (int trial = 0; trial < 10; ++trial) {
        Rng tr = Rng::derive(707, {1, static_cast<std::uint64_t>(trial)});
        const auto pa = oracle::sample_gaussian(m_a, chol, 3200, tr), pb = oracle::sample_gaussian(m_b, chol, 3200, tr);
        const double plain =
            metrics::frechet_distance(metrics::fit_gaussian(pa.topRows(200)), metrics::fit_gaussian(pb.topRows(200)));
        const auto inf = metrics::fd_infinity(pa, pb, {400, 800, 1600, 3200}, 707 + trial, 10);
        wins += std::abs(inf.intercept - truth) < std::abs(plain - truth);
    }

    const bool pass = analytic < 1e-8 && sampled_rel < 0.05 && kid_err < 1e-10 && ssim_err < 1e-7 && wins >= 9;
    return {pass, fmt("analytic FD err %.1e; sampled FD rel err %.4f; KID err %.1e; SSIM err %.1e; FD-inf wins %d/10",
                      analytic, sampled_rel, kid_err, ssim_err, wins)};
}

// 8 -----------------------------------------------------------------------------

Outcome tiling_gate() {
    const data::TilingPolicy policy;
    const auto anchors = data::tile_anchors(256, policy);
    const bool enum_ok = anchors == std::vector<int>{0, 96, 128};

    // Tissue on columns [0, edge): patch x = 128 holds (edge - 128) / 128 tissue.
    auto slide_with_edge = [](int edge) {
        data::Slide s;
        s.he = Image8(256, 256, 3);
        s.ihc = Image8(256, 256, 3);
        s.coarse_mask = Mask(256, 256);
        s.gt_mask = Mask(256, 256);
        for (int y = 0; y < 256; ++y)
            for (int x = 0; x < 256; ++x)
                for (int c = 0; c < 3; ++c) {
                    s.he.at(y, x, c) = x < edge ? static_cast<std::uint8_t>(150 - 40 * (c == 1)) : 255;
                    s.ihc.at(y, x, c) = 255;
                }
        return s;
    };
    auto kept_columns = [&](int edge) {
        std::vector<int> xs;
        for (const auto& p : data::tile_patches(slide_with_edge(edge), policy))
            if (p.meta.y == 0) xs.push_back(p.meta.x);
        return xs;
    };
    const auto at_half = kept_columns(192), below_half = kept_columns(191);
    const bool filter_ok = at_half == std::vector<int>{0, 96, 128} && below_half == std::vector<int>{0, 96};

    bool cover_ok = true;
    for (int extent : {128, 129, 200, 256, 300, 384, 1000}) {
        std::vector<int> covered(static_cast<std::size_t>(extent), 0);
        for (int a : data::tile_anchors(extent, policy)) {
            if (a < 0 || a + policy.patch_size > extent) cover_ok = false;
            for (int x = a; x < std::min(extent, a + policy.patch_size); ++x) covered[static_cast<std::size_t>(x)] = 1;
        }
        cover_ok = cover_ok && std::all_of(covered.begin(), covered.end(), [](int v) { return v; });
    }
    return {enum_ok && filter_ok && cover_ok,
            fmt("anchors(256) %s; half-tissue filter %s; coverage %s", enum_ok ? "{0,96,128}" : "WRONG",
                filter_ok ? "keeps exactly-half, drops below-half" : "WRONG", cover_ok ? "complete" : "INCOMPLETE")};
}

// 9 -----------------------------------------------------------------------------

bool same_files(const fs::path& a, const fs::path& b, int& count) {
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file() || e.path().filename() == ".vstain.lock") continue;
        const fs::path other = b / fs::relative(e.path(), a);
        if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
        ++count;
    }
    return count > 0;
}

std::string loss_columns(const fs::path& csv) {
    std::ifstream f(csv);
    std::string line, out;
    while (std::getline(f, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
}

Outcome reproducibility() {
    const fs::path dir = scratch("repro");
    const std::string d1 = (dir / "data1").string(), d2 = (dir / "data2").string();
    if (cli({"gen-data", "--out", d1, "--scenes", "6", "--seed", "909"}) ||
        cli({"gen-data", "--out", d2, "--scenes", "6", "--seed", "909"}))
        return {false, "gen-data failed"};
    const bool manifest_eq = hash_hex(slurp(fs::path(d1) / "manifest.json")) == hash_hex(slurp(fs::path(d2) / "manifest.json"));
    int data_files = 0;
    const bool data_eq = same_files(d1, d2, data_files);

    const std::vector<std::string> common{"--manifest", d1 + "/manifest.json", "--seed", "909", "--steps", "12",
                                          "--set", "train.checkpoint_every=4", "--set", "schedule.steps=40"};
    auto train = [&](const std::string& out, std::vector<std::string> extra) {
        std::vector<std::string> a{"train", "--out", out};
        a.insert(a.end(), common.begin(), common.end());
        a.insert(a.end(), extra.begin(), extra.end());
        return cli(a);
    };
    const std::string full = (dir / "full").string(), split = (dir / "split").string();
    if (train(full, {}) || train(split, {"--stop-after", "6"}) || train(split, {"--resume"}))
        return {false, "train failed"};
    const bool loss_eq = loss_columns(fs::path(full) / "loss.csv") == loss_columns(fs::path(split) / "loss.csv");
    const bool ckpt_eq = slurp(fs::path(full) / "checkpoints/final.ckpt") == slurp(fs::path(split) / "checkpoints/final.ckpt");
    const bool state_eq = slurp(fs::path(full) / "state.bin") == slurp(fs::path(split) / "state.bin");

    const std::string s1 = (dir / "s1").string(), s2 = (dir / "s2").string();
    for (const auto& out : {s1, s2})
        if (cli({"sample", "--run", full, "--manifest", d1 + "/manifest.json", "--limit", "6", "--seed", "5", "--seg",
                 "--out", out}))
            return {false, "sample failed"};
    int sample_files = 0;
    const bool sample_eq = same_files(s1, s2, sample_files);
    fs::remove_all(dir);
    return {manifest_eq && data_eq && loss_eq && ckpt_eq && state_eq && sample_eq,
            fmt("manifest hash %s, %d dataset files %s; resume: losses %s, final checkpoint %s, state %s; "
                "%d sample files %s",
                manifest_eq ? "equal" : "DIFFERS", data_files, data_eq ? "identical" : "DIFFER",
                loss_eq ? "identical" : "DIFFER", ckpt_eq ? "identical" : "DIFFERS", state_eq ? "identical" : "DIFFERS",
                sample_files, sample_eq ? "identical" : "DIFFER")};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "DDPM math", 10, ddpm_math},
        {2, "gradient check", 60, gradient_gate},
        {3, "multitask structure", 60, multitask_structure},
        {4, "toy distribution recovery", 15 * 60, toy_recovery},
        {5, "virtual staining regression", 45 * 60, staining_regression},
        {6, "coarse masks", 30, coarse_masks},
        {7, "metric oracles", 120, metric_oracles},
        {8, "tiling", 10, tiling_gate},
        {9, "reproducibility", 5 * 60, reproducibility},
    };
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::stoi(argv[i]));
    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = s <= c.budget_s;
        const bool pass = o.pass && in_time;
        failed += !pass;
        std::cout << (pass ? "PASS" : "FAIL") << "  " << c.id << "  " << c.name << "  ("
                  << fmt("%.1f s of %.0f s%s", s, c.budget_s, in_time ? "" : ", over budget") << ")  " << o.detail
                  << std::endl;
    }
    fs::remove_all(fs::temp_directory_path() / ("vstain_accept_" + std::to_string(::getpid())));
    return failed ? 1 : 0;
}
