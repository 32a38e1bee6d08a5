#include "vstain/denoiser.hpp"

#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

#include "vstain/fft.hpp"

namespace vstain::denoiser {

using nn::Tape;
using nn::Tensor;
using nn::Var;

// UNetConfig ------------------------------------------------------------------

bool UNetConfig::attends(int level) const {
    for (int l : fft_attention_levels)
        if (l == level) return true;
    return false;
}

int UNetConfig::groups_for(int channels) const {
    return std::gcd(norm_groups, channels);
}

void UNetConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("UNetConfig: " + what); };
    if (num_levels() < 2) fail("need at least 2 resolution levels");
    if (base_channels <= 0) fail("base_channels must be positive");
    for (int m : channel_multipliers)
        if (m <= 0) fail("channel multipliers must be positive");
    if (in_channels <= 0 || out_channels <= 0 || cond_channels <= 0) fail("channel counts must be positive");
    if (time_embed_dim <= 0 || time_embed_dim % 2) fail("time_embed_dim must be positive and even");
    if (norm_groups <= 0) fail("norm_groups must be positive");
    for (int l : fft_attention_levels)
        if (l < 0 || l >= num_levels())
            fail("fft attention level " + std::to_string(l) + " outside [0, " +
                 std::to_string(num_levels() - 1) + "]");
    const int div = 1 << (num_levels() - 1);
    if (image_size <= 0 || image_size % div)
        fail("image_size " + std::to_string(image_size) + " not divisible by " + std::to_string(div));
}

std::string to_string(Fusion f) {
    return f == Fusion::gate ? "gate" : "add";
}

Fusion fusion_from_string(std::string_view s) {
    if (s == "gate") return Fusion::gate;
    if (s == "add") return Fusion::add;
    throw std::invalid_argument("unknown fusion mode '" + std::string(s) + "'");
}

// ParamSet --------------------------------------------------------------------

Tensor& ParamSet::add(std::string name, std::vector<int> shape) {
    if (index_.count(name)) throw std::logic_error("ParamSet: duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), Tensor(std::move(shape))});
    return entries_.back().value;
}

Tensor& ParamSet::get(std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamSet: no parameter " + std::string(name));
    return entries_[it->second].value;
}

const Tensor& ParamSet::get(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamSet: no parameter " + std::string(name));
    return entries_[it->second].value;
}

bool ParamSet::contains(std::string_view name) const {
    return index_.find(name) != index_.end();
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

bool ParamSet::all_finite() const {
    for (const auto& e : entries_)
        if (!e.value.all_finite()) return false;
    return true;
}

bool ParamSet::operator==(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].name != other.entries_[i].name || !(entries_[i].value == other.entries_[i].value))
            return false;
    return true;
}

// Time embedding ---------------------------------------------------------------

std::vector<double> time_embed(double t, int dim) {
    if (dim <= 0 || dim % 2) throw std::invalid_argument("time_embed: dim must be positive and even");
    if (t < 0) throw std::invalid_argument("time_embed: negative step");
    const int half = dim / 2;
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int i = 1; i <= half; ++i) {
        const double arg = t / std::pow(10000.0, 2.0 * i / dim);
        out[static_cast<std::size_t>(i - 1)] = std::sin(arg);
        out[static_cast<std::size_t>(half + i - 1)] = std::cos(arg);
    }
    return out;
}

// FFT attention ----------------------------------------------------------------

Var fft_attend(Tape& tape, Var h, Var c, Var w_re, Var w_im, Fusion fusion, const std::string& name) {
    using fft::Complex;
    const Tensor& hv = tape.value(h);
    const Tensor& cv = tape.value(c);
    const Tensor& wr = tape.value(w_re);
    const Tensor& wi = tape.value(w_im);
    if (hv.rank() != 4 || !hv.same_shape(cv))
        throw std::invalid_argument("layer '" + name + "': feature shapes " + Tensor::shape_string(hv.shape()) +
                                    " and " + Tensor::shape_string(cv.shape()) + " differ");
    const int n = hv.dim(0), ch = hv.dim(1), rows = hv.dim(2), cols = hv.dim(3);
    const std::vector<int> wshape{ch, rows, cols};
    if (wr.shape() != wshape || wi.shape() != wshape)
        throw std::invalid_argument("layer '" + name + "': spectral weights " + Tensor::shape_string(wr.shape()) +
                                    " do not match features " + Tensor::shape_string(hv.shape()));
    const std::size_t plane = static_cast<std::size_t>(rows) * cols;
    const bool keep = tape.recording();

    Tensor out(hv.shape());
    std::vector<Complex> spectra(keep ? hv.size() : 0);
    std::vector<double> attn(keep ? hv.size() : 0);
    std::vector<Complex> buf(plane);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < ch; ++k) {
            const std::size_t off = (static_cast<std::size_t>(i) * ch + k) * plane;
            const std::size_t woff = static_cast<std::size_t>(k) * plane;
            for (std::size_t p = 0; p < plane; ++p) buf[p] = Complex(cv[off + p], 0.0);
            fft::transform2d(buf, rows, cols, false);
            if (keep) std::copy(buf.begin(), buf.end(), spectra.begin() + static_cast<std::ptrdiff_t>(off));
            for (std::size_t p = 0; p < plane; ++p) buf[p] *= Complex(wr[woff + p], wi[woff + p]);
            fft::transform2d(buf, rows, cols, true);
            for (std::size_t p = 0; p < plane; ++p) {
                const double a = 1.0 / (1.0 + std::exp(-buf[p].real()));
                if (keep) attn[off + p] = a;
                out[off + p] = fusion == Fusion::gate ? hv[off + p] * a : hv[off + p] + cv[off + p] * a;
            }
        }

    return tape.push(std::move(out), name, {h, c, w_re, w_im},
                     [=, spectra = std::move(spectra), attn = std::move(attn)](Tape& t, const Tensor& g) {
        const Tensor& hv = t.value(h);
        const Tensor& cv = t.value(c);
        const Tensor& wr = t.value(w_re);
        const Tensor& wi = t.value(w_im);
        const bool gh = nn::wants(t, h), gc = nn::wants(t, c);
        const bool gw = nn::wants(t, w_re) || nn::wants(t, w_im);
        std::vector<Complex> gx(plane);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < ch; ++k) {
                const std::size_t off = (static_cast<std::size_t>(i) * ch + k) * plane;
                const std::size_t woff = static_cast<std::size_t>(k) * plane;
                // d/dP of the pre-sigmoid map
                for (std::size_t p = 0; p < plane; ++p) {
                    const double a = attn[off + p];
                    const double ga = fusion == Fusion::gate ? g[off + p] * hv[off + p] : g[off + p] * cv[off + p];
                    gx[p] = Complex(ga * a * (1.0 - a), 0.0);
                }
                if (gh) {
                    Tensor& ghv = t.grad(h);
                    for (std::size_t p = 0; p < plane; ++p)
                        ghv[off + p] += fusion == Fusion::gate ? g[off + p] * attn[off + p] : g[off + p];
                }
                if (!gc && !gw) continue;
                // P = Re(IFFT2(X))  =>  dL/dX = FFT2(dL/dP) / (rows * cols)
                fft::transform2d(gx, rows, cols, false);
                const double inv = 1.0 / static_cast<double>(plane);
                for (auto& v : gx) v *= inv;
                if (gw) {
                    Tensor& gwr = t.grad(w_re);
                    Tensor& gwi = t.grad(w_im);
                    for (std::size_t p = 0; p < plane; ++p) {
                        const Complex d = gx[p] * std::conj(spectra[off + p]);
                        gwr[woff + p] += d.real();
                        gwi[woff + p] += d.imag();
                    }
                }
                if (gc) {
                    // X = W * FFT2(c)  =>  dL/dc = Re(unnormalized IFFT2(dL/dX * conj(W)))
                    for (std::size_t p = 0; p < plane; ++p) gx[p] *= std::conj(Complex(wr[woff + p], wi[woff + p]));
                    fft::transform2d(gx, rows, cols, true);
                    Tensor& gcv = t.grad(c);
                    for (std::size_t p = 0; p < plane; ++p) {
                        gcv[off + p] += gx[p].real() * static_cast<double>(plane);
                        if (fusion == Fusion::add) gcv[off + p] += g[off + p] * attn[off + p];
                    }
                }
            }
    });
}

// Parameter construction -------------------------------------------------------

namespace {

void init_uniform(Tensor& t, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
}

void add_conv(ParamSet& ps, const std::string& name, int cout, int cin, int k, Rng& rng) {
    init_uniform(ps.add(name + ".w", {cout, cin, k, k}), cin * k * k, rng);
    ps.add(name + ".b", {cout});
}

void add_linear(ParamSet& ps, const std::string& name, int out, int in, Rng& rng) {
    init_uniform(ps.add(name + ".w", {out, in}), in, rng);
    ps.add(name + ".b", {out});
}

void add_norm(ParamSet& ps, const std::string& name, int ch) {
    ps.add(name + ".g", {ch}).fill(1.0);
    ps.add(name + ".b", {ch});
}

void add_res_block(ParamSet& ps, const std::string& prefix, int cin, int cout, int temb, Rng& rng) {
    add_norm(ps, prefix + ".gn1", cin);
    add_conv(ps, prefix + ".conv1", cout, cin, 3, rng);
    add_linear(ps, prefix + ".temb", cout, temb, rng);
    add_norm(ps, prefix + ".gn2", cout);
    add_conv(ps, prefix + ".conv2", cout, cout, 3, rng);
    if (cin != cout) add_conv(ps, prefix + ".skip", cout, cin, 1, rng);
}

}  // namespace

ParamSet make_encoder_params(const UNetConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamSet ps;
    add_conv(ps, "enc.l0.conv_a", cfg.channels(0), cfg.cond_channels, 3, rng);
    add_conv(ps, "enc.l0.conv_b", cfg.channels(0), cfg.channels(0), 3, rng);
    for (int l = 1; l < cfg.num_levels(); ++l) {
        const std::string p = "enc.l" + std::to_string(l);
        add_conv(ps, p + ".down", cfg.channels(l), cfg.channels(l - 1), 3, rng);
        add_conv(ps, p + ".conv_b", cfg.channels(l), cfg.channels(l), 3, rng);
    }
    return ps;
}

ParamSet make_denoiser_params(const UNetConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamSet ps;
    const int d = cfg.time_embed_dim;
    const int levels = cfg.num_levels();
    add_linear(ps, "time.fc1", d, d, rng);
    add_linear(ps, "time.fc2", d, d, rng);
    add_conv(ps, "in.conv", cfg.channels(0), cfg.in_channels, 3, rng);
    for (int l = 0; l < levels; ++l) {
        const std::string p = "down" + std::to_string(l);
        add_res_block(ps, p + ".res", cfg.channels(l), cfg.channels(l), d, rng);
        if (cfg.attends(l)) {
            const int s = cfg.level_size(l);
            Tensor& re = ps.add(p + ".fft.re", {cfg.channels(l), s, s});
            ps.add(p + ".fft.im", {cfg.channels(l), s, s});
            // DC bin only: the gate starts spatially uniform.
            for (int k = 0; k < cfg.channels(l); ++k) re[static_cast<std::size_t>(k) * s * s] = 1.0;
        }
        if (l + 1 < levels) add_conv(ps, p + ".downsample", cfg.channels(l + 1), cfg.channels(l), 3, rng);
    }
    add_res_block(ps, "mid.res", cfg.channels(levels - 1), cfg.channels(levels - 1), d, rng);
    for (int l = levels - 1; l >= 0; --l) {
        const std::string p = "up" + std::to_string(l);
        add_res_block(ps, p + ".res", 2 * cfg.channels(l), cfg.channels(l), d, rng);
        if (l > 0) add_conv(ps, p + ".upsample", cfg.channels(l - 1), cfg.channels(l), 3, rng);
    }
    add_norm(ps, "out.gn", cfg.channels(0));
    add_conv(ps, "out.conv", cfg.out_channels, cfg.channels(0), 3, rng);
    return ps;
}

// Encoder ------------------------------------------------------------------------

namespace {

struct Binder {
    Tape& tape;
    const ParamSet& ps;
    Var operator()(const std::string& name) const { return tape.parameter(ps.get(name), name); }
};

void check_param_layout(const ParamSet& expected, const ParamSet& given, const char* what) {
    const auto& a = expected.entries();
    const auto& b = given.entries();
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(a.size()) +
                                    " parameter arrays, got " + std::to_string(b.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].name != b[i].name || a[i].value.shape() != b[i].value.shape())
            throw std::invalid_argument(std::string(what) + ": parameter '" + b[i].name + "' " +
                                        Tensor::shape_string(b[i].value.shape()) + " does not match '" +
                                        a[i].name + "' " + Tensor::shape_string(a[i].value.shape()));
}

Var conv(Tape& tape, const Binder& p, Var x, const std::string& name, int stride, int pad) {
    return nn::conv2d(tape, x, p(name + ".w"), p(name + ".b"), stride, pad, name);
}

}  // namespace

ConditionEncoder::ConditionEncoder(const UNetConfig& config, Rng& rng)
    : config_(config), params_(make_encoder_params(config, rng)) {}

ConditionEncoder::ConditionEncoder(const UNetConfig& config, ParamSet params)
    : config_(config), params_(std::move(params)) {
    Rng dummy;
    check_param_layout(make_encoder_params(config, dummy), params_, "ConditionEncoder");
}

std::vector<Var> ConditionEncoder::forward(Tape& tape, Var x) const {
    const Tensor& xv = tape.value(x);
    const int s = config_.image_size;
    if (xv.rank() != 4 || xv.dim(1) != config_.cond_channels || xv.dim(2) != s || xv.dim(3) != s)
        throw std::invalid_argument("ConditionEncoder: input " + Tensor::shape_string(xv.shape()) +
                                    " does not match config (N, " + std::to_string(config_.cond_channels) +
                                    ", " + std::to_string(s) + ", " + std::to_string(s) + ")");
    const Binder p{tape, params_};
    std::vector<Var> out;
    Var e = nn::silu(tape, conv(tape, p, x, "enc.l0.conv_a", 1, 1), "enc.l0.act_a");
    e = nn::silu(tape, conv(tape, p, e, "enc.l0.conv_b", 1, 1), "enc.l0.act_b");
    out.push_back(e);
    for (int l = 1; l < config_.num_levels(); ++l) {
        const std::string pre = "enc.l" + std::to_string(l);
        e = nn::silu(tape, conv(tape, p, e, pre + ".down", 2, 1), pre + ".act_a");
        e = nn::silu(tape, conv(tape, p, e, pre + ".conv_b", 1, 1), pre + ".act_b");
        out.push_back(e);
    }
    return out;
}

// UNet -----------------------------------------------------------------------------

UNetDenoiser::UNetDenoiser(const UNetConfig& config, Rng& rng)
    : config_(config), params_(make_denoiser_params(config, rng)) {}

UNetDenoiser::UNetDenoiser(const UNetConfig& config, ParamSet params)
    : config_(config), params_(std::move(params)) {
    Rng dummy;
    check_param_layout(make_denoiser_params(config, dummy), params_, "UNetDenoiser");
}

Var UNetDenoiser::res_block(Tape& tape, Var x, Var temb, const std::string& prefix) const {
    const Binder p{tape, params_};
    const int cin = tape.value(x).dim(1);
    const int cout = params_.get(prefix + ".conv1.w").dim(0);
    Var h = nn::group_norm(tape, x, p(prefix + ".gn1.g"), p(prefix + ".gn1.b"), config_.groups_for(cin), prefix + ".gn1");
    h = nn::silu(tape, h, prefix + ".act1");
    h = conv(tape, p, h, prefix + ".conv1", 1, 1);
    Var tb = nn::linear(tape, temb, p(prefix + ".temb.w"), p(prefix + ".temb.b"), prefix + ".temb");
    h = nn::add_channel_bias(tape, h, tb, prefix + ".temb_add");
    h = nn::group_norm(tape, h, p(prefix + ".gn2.g"), p(prefix + ".gn2.b"), config_.groups_for(cout), prefix + ".gn2");
    h = nn::silu(tape, h, prefix + ".act2");
    h = conv(tape, p, h, prefix + ".conv2", 1, 1);
    Var skip = cin == cout ? x : conv(tape, p, x, prefix + ".skip", 1, 0);
    return nn::add(tape, h, skip, prefix + ".out");
}

Var UNetDenoiser::forward(Tape& tape, std::span<const Var> cond, Var x_t, std::span<const int> steps) const {
    calls_.bump();
    const Tensor& xv = tape.value(x_t);
    const int s = config_.image_size;
    const int levels = config_.num_levels();
    if (xv.rank() != 4 || xv.dim(1) != config_.in_channels || xv.dim(2) != s || xv.dim(3) != s)
        throw std::invalid_argument("UNetDenoiser: input " + Tensor::shape_string(xv.shape()) +
                                    " does not match config (N, " + std::to_string(config_.in_channels) + ", " +
                                    std::to_string(s) + ", " + std::to_string(s) + ")");
    const int n = xv.dim(0);
    if (steps.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("UNetDenoiser: need one step per batch element");
    if (cond.size() != static_cast<std::size_t>(levels))
        throw std::invalid_argument("UNetDenoiser: condition pyramid has " + std::to_string(cond.size()) +
                                    " levels, config has " + std::to_string(levels));

    const Binder p{tape, params_};
    const int d = config_.time_embed_dim;
    Tensor emb({n, d});
    for (int i = 0; i < n; ++i) {
        const auto e = time_embed(steps[static_cast<std::size_t>(i)], d);
        std::copy(e.begin(), e.end(), emb.data() + static_cast<std::size_t>(i) * d);
    }
    Var temb = tape.constant(std::move(emb), "time.embed");
    temb = nn::linear(tape, temb, p("time.fc1.w"), p("time.fc1.b"), "time.fc1");
    temb = nn::silu(tape, temb, "time.act1");
    temb = nn::linear(tape, temb, p("time.fc2.w"), p("time.fc2.b"), "time.fc2");
    temb = nn::silu(tape, temb, "time.act2");

    Var h = conv(tape, p, x_t, "in.conv", 1, 1);
    std::vector<Var> skips;
    for (int l = 0; l < levels; ++l) {
        const std::string pre = "down" + std::to_string(l);
        h = res_block(tape, h, temb, pre + ".res");
        if (config_.attends(l)) {
            const Tensor& cv = tape.value(cond[static_cast<std::size_t>(l)]);
            if (cv.dim(0) != n)
                throw std::invalid_argument("UNetDenoiser: condition batch " + std::to_string(cv.dim(0)) +
                                            " differs from target batch " + std::to_string(n));
            h = fft_attend(tape, h, cond[static_cast<std::size_t>(l)], p(pre + ".fft.re"), p(pre + ".fft.im"),
                           config_.fusion, pre + ".fft");
        }
        skips.push_back(h);
        if (l + 1 < levels) h = conv(tape, p, h, pre + ".downsample", 2, 1);
    }
    h = res_block(tape, h, temb, "mid.res");
    for (int l = levels - 1; l >= 0; --l) {
        const std::string pre = "up" + std::to_string(l);
        h = nn::concat_channels(tape, h, skips[static_cast<std::size_t>(l)], pre + ".concat");
        h = res_block(tape, h, temb, pre + ".res");
        if (l > 0) {
            h = nn::upsample_nearest2(tape, h, pre + ".up");
            h = conv(tape, p, h, pre + ".upsample", 1, 1);
        }
    }
    h = nn::group_norm(tape, h, p("out.gn.g"), p("out.gn.b"), config_.groups_for(config_.channels(0)), "out.gn");
    h = nn::silu(tape, h, "out.act");
    return conv(tape, p, h, "out.conv", 1, 1);
}

// Single-image conveniences ----------------------------------------------------------

Tensor to_batch(std::span<const ImageTensor> images) {
    if (images.empty()) throw std::invalid_argument("to_batch: empty batch");
    const ImageTensor& f = images.front();
    const int h = f.height(), w = f.width(), c = f.channels();
    Tensor out({static_cast<int>(images.size()), c, h, w});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i].same_shape(f)) throw std::invalid_argument("to_batch: images differ in shape");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int k = 0; k < c; ++k)
                    out[((i * c + k) * h + y) * w + x] = images[i].at(y, x, k);
    }
    return out;
}

std::vector<ImageTensor> from_batch(const Tensor& batch, TensorRole role) {
    if (batch.rank() != 4) throw std::invalid_argument("from_batch: expects NCHW");
    const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    std::vector<ImageTensor> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ImageTensor img(h, w, c, role);
        for (int k = 0; k < c; ++k)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    img.at(y, x, k) = batch[((static_cast<std::size_t>(i) * c + k) * h + y) * w + x];
        out.push_back(std::move(img));
    }
    return out;
}

FeaturePyramid encode_condition(const ConditionEncoder& encoder, std::span<const ImageTensor> conditions) {
    Tape tape(false);
    const Var x = tape.constant(to_batch(conditions), "condition");
    FeaturePyramid out;
    for (Var v : encoder.forward(tape, x)) out.levels.push_back(tape.value(v));
    return out;
}

FeaturePyramid encode_condition(const ConditionEncoder& encoder, const ImageTensor& condition) {
    return encode_condition(encoder, std::span<const ImageTensor>(&condition, 1));
}

std::vector<ImageTensor> denoise_batch(const UNetDenoiser& net, const FeaturePyramid& features,
                                       const std::vector<ImageTensor>& x_t, int t) {
    Tape tape(false);
    std::vector<Var> cond;
    for (const auto& f : features.levels) cond.push_back(tape.constant(f, "condition.features"));
    const Var x = tape.constant(to_batch(x_t), "x_t");
    const std::vector<int> steps(x_t.size(), t);
    const Var eps = net.forward(tape, cond, x, steps);
    return from_batch(tape.value(eps), TensorRole::noise);
}

ImageTensor denoise(const UNetDenoiser& net, const ConditionEncoder& encoder, const ImageTensor& condition,
                    const ImageTensor& x_t, int t) {
    const FeaturePyramid f = encode_condition(encoder, condition);
    return denoise_batch(net, f, {x_t}, t).front();
}

}  // namespace vstain::denoiser
