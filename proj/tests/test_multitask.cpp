#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "vstain/multitask.hpp"

using namespace vstain;
using namespace vstain::multitask;
namespace fs = std::filesystem;

namespace {

denoiser::UNetConfig tiny() {
    denoiser::UNetConfig c;
    c.image_size = 8;
    c.base_channels = 4;
    c.channel_multipliers = {1, 2};
    c.time_embed_dim = 8;
    c.fft_attention_levels = {0, 1};
    c.norm_groups = 2;
    return c;
}

Batch random_batch(Rng& rng, int n) {
    Batch b;
    for (int i = 0; i < n; ++i) {
        b.he.push_back(ImageTensor::gaussian(8, 8, 3, rng));
        b.ihc.push_back(ImageTensor::gaussian(8, 8, 3, rng));
        Mask m(8, 8);
        for (auto& v : m.bits) v = rng.uniform() < 0.5;
        b.mask.push_back(m);
    }
    return b;
}

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("vstain_mt_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

const auto kSchedule = diffusion::make_linear_schedule(20, 1e-4, 0.2);

}  // namespace

TEST_CASE("mask tensor mapping") {
    Mask m(2, 1);
    m.bits = {1, 0};
    const ImageTensor t = mask_to_tensor(m);
    CHECK(t.channels() == 1);
    CHECK(t.at(0, 0, 0) == 1.0);
    CHECK(t.at(0, 1, 0) == -1.0);
    CHECK(tensor_to_mask(t).bits == m.bits);
    Mask bad(1, 1);
    bad.bits = {2};
    CHECK_THROWS(mask_to_tensor(bad));
}

TEST_CASE("model kinds") {
    for (auto k : {ModelKind::mtdd, ModelKind::msd, ModelKind::sdwos}) CHECK(model_kind_from_string(to_string(k)) == k);
    CHECK_THROWS(model_kind_from_string("cyclegan"));
    Rng r1(0), r2(0), r3(0);
    const auto mt = make_model(ModelKind::mtdd, tiny(), r1);
    const auto msd = make_model(ModelKind::msd, tiny(), r2);
    CHECK(mt.denoiser_blocks() == 2);
    CHECK(msd.denoiser_blocks() == 1);
    CHECK(mt.seg->config().in_channels == 1);
    CHECK(mt.seg->config().cond_channels == 3);
    // Same seed: shared encoder and generation branch are drawn identically.
    CHECK(mt.encoder.params() == msd.encoder.params());
    CHECK(mt.gen.params() == msd.gen.params());
    auto sd_cfg = tiny();
    sd_cfg.cond_channels = 1;
    CHECK_THROWS(make_model(ModelKind::sdwos, sd_cfg, r3));
}

TEST_CASE("parameter names carry the block") {
    Rng r(0);
    auto m = make_model(ModelKind::mtdd, tiny(), r);
    std::set<std::string> blocks;
    for (const auto& p : m.parameters()) blocks.insert(p.name.substr(0, p.name.find('/')));
    CHECK(blocks == std::set<std::string>{"encoder", "gen", "seg"});
}

TEST_CASE("mtdd branch isolation and encoder additivity") {
    Rng init(1), data(2);
    auto model = make_model(ModelKind::mtdd, tiny(), init);
    const auto batch = random_batch(data, 2);
    Rng step(3);
    const auto g = mtdd_gradients(model, batch, kSchedule, step);
    const auto refs = model.parameters();
    bool encoder_nonzero = false;
    for (std::size_t p = 0; p < refs.size(); ++p)
        for (std::size_t i = 0; i < g.total[p].size(); ++i) {
            if (refs[p].name.starts_with("gen/")) CHECK(g.seg[p][i] == 0.0);
            if (refs[p].name.starts_with("seg/")) CHECK(g.gen[p][i] == 0.0);
            if (refs[p].name.starts_with("encoder/")) {
                CHECK(g.total[p][i] == doctest::Approx(g.seg[p][i] + g.gen[p][i]).epsilon(1e-12));
                encoder_nonzero = encoder_nonzero || (g.seg[p][i] != 0 && g.gen[p][i] != 0);
            }
        }
    CHECK(encoder_nonzero);
    CHECK(g.losses.total == doctest::Approx(g.losses.seg + g.losses.gen));
}

TEST_CASE("msd draws match the generation half of mtdd") {
    Rng i1(4), i2(4), data(5);
    TrainState mt(make_model(ModelKind::mtdd, tiny(), i1), {}, 0);
    TrainState msd(make_model(ModelKind::msd, tiny(), i2), {}, 0);
    const auto batch = random_batch(data, 2);
    Rng s1(6), s2(6);
    const auto a = train_step_mtdd(mt, batch, kSchedule, s1);
    const auto b = train_step_msd(msd, batch, kSchedule, s2);
    CHECK(a.gen == b.gen);
    CHECK(b.seg == 0.0);
    CHECK(b.total == b.gen);
}

TEST_CASE("sdwos trains both directions") {
    Rng init(7), data(8);
    TrainState s(make_model(ModelKind::sdwos, tiny(), init), {}, 0);
    const auto batch = random_batch(data, 2);
    Rng step(9);
    Rng probe = step;
    Rng fwd = probe.fork(), rev = probe.fork();
    const auto expected = sdwos_losses(s.model, batch.he, batch.ihc, kSchedule, fwd, rev);
    const auto l = train_step_sdwos(s, batch, kSchedule, step);
    CHECK(l.gen == doctest::Approx(expected.first).epsilon(1e-12));
    CHECK(l.rev == doctest::Approx(expected.second).epsilon(1e-12));
    CHECK(l.total == doctest::Approx(l.gen + l.rev));
    CHECK_FALSE(s.model.seg.has_value());
}

TEST_CASE("training updates parameters and the running average") {
    Rng init(10), data(11);
    TrainState s(make_model(ModelKind::mtdd, tiny(), init), {}, 3);
    const auto before = s.model.gen.params();
    const auto batch = random_batch(data, 2);
    Rng step(12);
    const auto l = train_step(s, batch, kSchedule, step);
    CHECK(s.step == 1);
    CHECK(s.avg.total == l.total);
    CHECK_FALSE(s.model.gen.params() == before);
    Batch bad = batch;
    bad.mask.pop_back();
    CHECK_THROWS(train_step(s, bad, kSchedule, step));
}

TEST_CASE("batch indices walk seeded epoch permutations") {
    const std::size_t n = 10;
    std::vector<std::size_t> seen;
    for (long step = 0; step < 5; ++step) {
        const auto b = batch_indices(42, step, 4, n);
        seen.insert(seen.end(), b.begin(), b.end());
    }
    for (int epoch = 0; epoch < 2; ++epoch) {
        std::vector<std::size_t> e(seen.begin() + epoch * 10, seen.begin() + epoch * 10 + 10);
        std::sort(e.begin(), e.end());
        for (std::size_t i = 0; i < n; ++i) CHECK(e[i] == i);
    }
    CHECK(batch_indices(42, 3, 4, n) == batch_indices(42, 3, 4, n));
    CHECK_FALSE(batch_indices(42, 0, 10, n) == batch_indices(43, 0, 10, n));
    CHECK_THROWS(batch_indices(1, 0, 4, 0));
}

TEST_CASE("inference touches only the generation branch") {
    Rng init(13), r(14);
    auto m = make_model(ModelKind::mtdd, tiny(), init);
    const auto he = ImageTensor::gaussian(8, 8, 3, r);
    const auto out = infer_stain(m, he, kSchedule, r);
    CHECK(out.channels() == 3);
    CHECK(out.in_range());
    CHECK(m.seg->forward_calls() == 0);
    CHECK(m.gen.forward_calls() == kSchedule.steps());
    const Mask seg = infer_seg(m, he, kSchedule, r);
    CHECK(seg.width == 8);
    CHECK(m.seg->forward_calls() == kSchedule.steps());
    Rng i2(0);
    const auto msd = make_model(ModelKind::msd, tiny(), i2);
    CHECK_THROWS(infer_seg(msd, he, kSchedule, r));
}

TEST_CASE("checkpoint round trip") {
    const fs::path dir = temp_dir("ckpt");
    Rng init(15);
    const auto m = make_model(ModelKind::mtdd, tiny(), init);
    const CheckpointInfo info{ModelKind::mtdd, tiny(), kSchedule.hash(), "abc", 7};
    save_checkpoint(dir / "a.ckpt", m, info);
    const auto [back, got] = load_checkpoint(dir / "a.ckpt");
    CHECK(got.config_hash == "abc");
    CHECK(got.schedule_hash == kSchedule.hash());
    CHECK(got.step == 7);
    CHECK(got.config == tiny());
    CHECK(back.seg.has_value());
    // Stored as f32.
    const auto& w = m.gen.params().entries().front().value;
    const auto& w2 = back.gen.params().entries().front().value;
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w2[i] == static_cast<double>(static_cast<float>(w[i])));
    std::string bytes;
    {
        std::ifstream f(dir / "a.ckpt", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(f), {});
    }
    bytes[bytes.size() - 20] ^= 1;
    std::ofstream(dir / "b.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir / "b.ckpt"), archive::IntegrityError);
    fs::remove_all(dir);
}

TEST_CASE("train state round trip is exact") {
    const fs::path dir = temp_dir("state");
    Rng init(16), data(17);
    AdamConfig adam;
    adam.schedule = LrSchedule::cosine;
    adam.decay_steps = 7;
    TrainState s(make_model(ModelKind::msd, tiny(), init), adam, 99);
    Rng step(18);
    train_step(s, random_batch(data, 2), kSchedule, step);
    save_train_state(dir / "s.bin", s, "hash1");
    std::string h;
    const TrainState back = load_train_state(dir / "s.bin", &h);
    CHECK(h == "hash1");
    CHECK(back.step == 1);
    CHECK(back.seed == 99);
    CHECK(back.avg.total == s.avg.total);
    CHECK(back.adam.schedule == LrSchedule::cosine);
    CHECK(back.adam.decay_steps == 7);
    CHECK(back.model.gen.params() == s.model.gen.params());
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        CHECK(back.m[i] == s.m[i]);
        CHECK(back.v[i] == s.v[i]);
    }
    fs::remove_all(dir);
}

TEST_CASE("train loop logs, checkpoints and stops early") {
    const fs::path dir = temp_dir("loop");
    Rng init(19), data(20);
    TrainingData d;
    const auto b = random_batch(data, 5);
    d.he = b.he;
    d.ihc = b.ihc;
    d.mask = b.mask;
    TrainState s(make_model(ModelKind::mtdd, tiny(), init), {}, 5);
    TrainOptions opt;
    opt.steps = 4;
    opt.batch_size = 2;
    opt.checkpoint_every = 2;
    opt.stop_after = 3;
    opt.log_csv = dir / "loss.csv";
    std::vector<long> saved;
    opt.on_checkpoint = [&](const TrainState& st) { saved.push_back(st.step); };
    CHECK_FALSE(train(s, d, kSchedule, opt));
    CHECK(s.step == 3);
    opt.stop_after = -1;
    CHECK(train(s, d, kSchedule, opt));
    CHECK(saved == std::vector<long>{2, 4});
    std::ifstream f(opt.log_csv);
    std::string header, line;
    std::getline(f, header);
    CHECK(header == "step,l_seg,l_gen,l_rev,l_final,wall_s");
    int rows = 0;
    while (std::getline(f, line)) ++rows;
    CHECK(rows == 4);
    fs::remove_all(dir);
}

TEST_CASE("cosine learning rate") {
    AdamConfig a;
    a.lr = 0.004;
    CHECK(a.lr_at(0) == 0.004);
    CHECK(a.lr_at(1000) == 0.004);
    a.schedule = LrSchedule::cosine;
    CHECK(a.lr_at(5) == 0.004);  // no horizon: constant
    a.decay_steps = 100;
    CHECK(a.lr_at(0) == doctest::Approx(0.004).epsilon(1e-15));
    CHECK(a.lr_at(50) == doctest::Approx(0.002).epsilon(1e-12));
    CHECK(a.lr_at(25) == doctest::Approx(0.002 * (1 + std::sqrt(0.5))).epsilon(1e-12));
    CHECK(a.lr_at(100) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(a.lr_at(150) == a.lr_at(100));
    CHECK(lr_schedule_from_string(to_string(LrSchedule::cosine)) == LrSchedule::cosine);
    CHECK_THROWS_AS(lr_schedule_from_string("step"), std::invalid_argument);
}

TEST_CASE("resume through saved state matches an uninterrupted cosine run") {
    const fs::path dir = temp_dir("resume");
    Rng data(21);
    TrainingData d;
    const auto b = random_batch(data, 5);
    d.he = b.he;
    d.ihc = b.ihc;
    d.mask = b.mask;
    AdamConfig adam;
    adam.lr = 1e-2;
    adam.schedule = LrSchedule::cosine;
    adam.decay_steps = 4;
    TrainOptions opt;
    opt.steps = 4;
    opt.batch_size = 2;
    Rng init_a(22), init_b(22);
    TrainState whole(make_model(ModelKind::mtdd, tiny(), init_a), adam, 6);
    CHECK(train(whole, d, kSchedule, opt));
    TrainState part(make_model(ModelKind::mtdd, tiny(), init_b), adam, 6);
    opt.stop_after = 2;
    CHECK_FALSE(train(part, d, kSchedule, opt));
    save_train_state(dir / "s.bin", part, "h");
    TrainState resumed = load_train_state(dir / "s.bin");
    opt.stop_after = -1;
    CHECK(train(resumed, d, kSchedule, opt));
    CHECK(resumed.model.gen.params() == whole.model.gen.params());
    CHECK(resumed.model.encoder.params() == whole.model.encoder.params());
    fs::remove_all(dir);
}
