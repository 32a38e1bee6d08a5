#include "vstain/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vstain/hash.hpp"
#include "vstain/png_io.hpp"
#include "vstain/rng.hpp"

namespace vstain::metrics {

double psnr(const ImageTensor& a, const ImageTensor& b, double max_value) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    if (!(max_value > 0)) throw std::invalid_argument("psnr: max_value must be positive");
    double mse = 0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(max_value * max_value / mse));
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double c = (size - 1) / 2.0;
    double s = 0;
    for (int i = 0; i < size; ++i) s += g[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    for (auto& v : g) v /= s;
    return g;
}

/// Valid separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& x, int h, int w, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int oh = h - k + 1, ow = w - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < h; ++y)
        for (int xo = 0; xo < ow; ++xo) {
            double s = 0;
            for (int j = 0; j < k; ++j) s += g[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>(y) * w + xo + j];
            tmp[static_cast<std::size_t>(y) * ow + xo] = s;
        }
    for (int yo = 0; yo < oh; ++yo)
        for (int xo = 0; xo < ow; ++xo) {
            double s = 0;
            for (int i = 0; i < k; ++i) s += g[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(yo + i) * ow + xo];
            out[static_cast<std::size_t>(yo) * ow + xo] = s;
        }
    return out;
}

}  // namespace

double ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opt) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    const int h = a.height(), w = a.width();
    if (h < opt.window || w < opt.window)
        throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                                    " smaller than the " + std::to_string(opt.window) + "-px window");
    const auto g = gaussian_window(opt.window, opt.sigma);
    const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2), c2 = std::pow(opt.k2 * opt.dynamic_range, 2);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    double total = 0;
    std::size_t count = 0;
    for (int c = 0; c < a.channels(); ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (int r = 0; r < h; ++r)
            for (int q = 0; q < w; ++q) {
                const std::size_t i = static_cast<std::size_t>(r) * w + q;
                x[i] = a.at(r, q, c);
                y[i] = b.at(r, q, c);
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
        const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
        const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g), sxy = filter_valid(xy, h, w, g);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
            total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
                     ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// Gaussian statistics -----------------------------------------------------------

GaussianStats fit_gaussian(const FeatureMatrix& f) {
    if (f.rows() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 feature vectors");
    GaussianStats s;
    s.n = static_cast<std::size_t>(f.rows());
    s.mean = f.colwise().mean().transpose();
    const FeatureMatrix centered = f.rowwise() - s.mean.transpose();
    s.cov = (centered.transpose() * centered) / static_cast<double>(f.rows() - 1);
    s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
    return s;
}

namespace {

bool near_singular(const Eigen::VectorXd& eig) {
    const double top = std::max(1.0, eig.cwiseAbs().maxCoeff());
    return eig.minCoeff() < 1e-9 * top;
}

Eigen::MatrixXd sqrt_psd(const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>& es) {
    const Eigen::VectorXd r = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * r.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

FdResult frechet(const GaussianStats& a, const GaussianStats& b) {
    if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows())
        throw std::invalid_argument("frechet_distance: dimension mismatch " + std::to_string(a.mean.size()) + " vs " +
                                    std::to_string(b.mean.size()));
    if (!a.mean.allFinite() || !b.mean.allFinite() || !a.cov.allFinite() || !b.cov.allFinite())
        throw std::invalid_argument("frechet_distance: non-finite statistics");
    const auto d = a.cov.rows();
    Eigen::MatrixXd s1 = a.cov, s2 = b.cov;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(s1), e2(s2);
    FdResult r;
    if (near_singular(e1.eigenvalues()) || near_singular(e2.eigenvalues())) {
        r.regularized = true;
        s1 += kFdRegularization * Eigen::MatrixXd::Identity(d, d);
        s2 += kFdRegularization * Eigen::MatrixXd::Identity(d, d);
        e1.compute(s1);
    }
    const Eigen::MatrixXd root1 = sqrt_psd(e1);
    Eigen::MatrixXd m = root1 * s2 * root1;
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
    const double tr_root = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    r.value = (a.mean - b.mean).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_root;
    r.value = std::max(0.0, r.value);
    return r;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    return frechet(a, b).value;
}

std::vector<int> default_fd_sizes(std::size_t n1, std::size_t n2) {
    const int n = static_cast<int>(std::min(n1, n2));
    return {n / 8, n / 4, n / 2, n};
}

namespace {

FeatureMatrix take_rows(const FeatureMatrix& f, const std::vector<std::size_t>& idx) {
    FeatureMatrix out(static_cast<Eigen::Index>(idx.size()), f.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = f.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

std::vector<std::size_t> subsample(std::size_t n, int k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (int i = 0; i < k; ++i) {
        const int j = rng.uniform_int(i, static_cast<int>(n) - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

}  // namespace

FdInfinity fd_infinity(const FeatureMatrix& f1, const FeatureMatrix& f2, const std::vector<int>& sizes,
                       std::uint64_t seed, int reps) {
    const std::set<int> distinct(sizes.begin(), sizes.end());
    if (distinct.size() < 3) throw std::invalid_argument("fd_infinity: need at least 3 distinct subsample sizes");
    if (*distinct.begin() < 2) throw std::invalid_argument("fd_infinity: subsample sizes must be at least 2");
    if (*distinct.rbegin() > std::min(f1.rows(), f2.rows()))
        throw std::invalid_argument("fd_infinity: subsample size " + std::to_string(*distinct.rbegin()) +
                                    " exceeds the smaller set (" + std::to_string(std::min(f1.rows(), f2.rows())) + ")");
    if (reps < 1) throw std::invalid_argument("fd_infinity: reps must be positive");
    FdInfinity out;
    for (int k : distinct) {
        double acc = 0;
        for (int r = 0; r < reps; ++r) {
            Rng rng1 = Rng::derive(seed, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(r)});
            Rng rng2 = rng1;
            const auto i1 = subsample(static_cast<std::size_t>(f1.rows()), k, rng1);
            const auto i2 = subsample(static_cast<std::size_t>(f2.rows()), k, rng2);
            const FdResult fd = frechet(fit_gaussian(take_rows(f1, i1)), fit_gaussian(take_rows(f2, i2)));
            out.regularized = out.regularized || fd.regularized;
            acc += fd.value;
        }
        out.sizes.push_back(k);
        out.mean_fd.push_back(acc / reps);
    }
    // Least squares fd = a + b / n.
    const double m = static_cast<double>(out.sizes.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < out.sizes.size(); ++i) {
        const double x = 1.0 / out.sizes[i], y = out.mean_fd[i];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    out.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    out.intercept = (sy - out.slope * sx) / m;
    return out;
}

double kid(const FeatureMatrix& f1, const FeatureMatrix& f2) {
    if (f1.rows() < 2 || f2.rows() < 2) throw std::invalid_argument("kid: each set needs at least 2 vectors");
    if (f1.cols() != f2.cols()) throw std::invalid_argument("kid: feature dimensions differ");
    const double d = static_cast<double>(f1.cols());
    auto kernel = [d](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        return ((a * b.transpose()).array() / d + 1.0).cube().matrix().eval();
    };
    const Eigen::MatrixXd kxx = kernel(f1, f1), kyy = kernel(f2, f2), kxy = kernel(f1, f2);
    // Shift by one kernel value; the three terms' shifts cancel exactly.
    const double ref = kxy(0, 0);
    const double m = static_cast<double>(f1.rows()), n = static_cast<double>(f2.rows());
    const double sxx = (kxx.array() - ref).sum() - (kxx.diagonal().array() - ref).sum();
    const double syy = (kyy.array() - ref).sum() - (kyy.diagonal().array() - ref).sum();
    const double sxy = (kxy.array() - ref).sum();
    return sxx / (m * (m - 1)) + syy / (n * (n - 1)) - 2.0 * sxy / (m * n);
}

// Extractors ---------------------------------------------------------------------------

FeatureMatrix FeatureExtractor::extract_all(const std::vector<ImageTensor>& imgs) const {
    FeatureMatrix out(static_cast<Eigen::Index>(imgs.size()), dim());
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        const auto v = extract(imgs[i]);
        for (int j = 0; j < dim(); ++j) out(static_cast<Eigen::Index>(i), j) = v[static_cast<std::size_t>(j)];
    }
    return out;
}

RandomProjectionExtractor::RandomProjectionExtractor(int height, int width, int channels, int dim, std::uint64_t seed)
    : h_(height), w_(width), c_(channels), dim_(dim), seed_(seed) {
    if (dim <= 0 || height <= 0 || width <= 0 || channels <= 0)
        throw std::invalid_argument("RandomProjectionExtractor: sizes must be positive");
    const Eigen::Index in = static_cast<Eigen::Index>(height) * width * channels;
    proj_.resize(dim, in);
    Rng rng = Rng::derive(seed, {0x70726f6aULL});
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < proj_.rows(); ++i)
        for (Eigen::Index j = 0; j < proj_.cols(); ++j) proj_(i, j) = rng.normal() * scale;
}

std::string RandomProjectionExtractor::name() const {
    std::ostringstream os;
    os << "randproj-" << dim_ << "-" << h_ << "x" << w_ << "x" << c_ << "-seed" << seed_;
    return os.str();
}

std::vector<double> RandomProjectionExtractor::extract(const ImageTensor& img) const {
    if (img.height() != h_ || img.width() != w_ || img.channels() != c_)
        throw std::invalid_argument("RandomProjectionExtractor: image shape differs from construction shape");
    const Eigen::Map<const Eigen::VectorXd> x(img.values().data(), static_cast<Eigen::Index>(img.size()));
    const Eigen::VectorXd y = proj_ * x;
    return {y.data(), y.data() + y.size()};
}

std::vector<double> HandcraftedExtractor::extract(const ImageTensor& img) const {
    if (img.channels() != c_) throw std::invalid_argument("HandcraftedExtractor: channel count differs");
    const int h = img.height(), w = img.width();
    const double n = static_cast<double>(h) * w;
    std::vector<double> out;
    for (int c = 0; c < c_; ++c) {
        double mean = 0, sq = 0, grad = 0;
        double hist[8] = {};
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = img.at(y, x, c);
                mean += v;
                sq += v * v;
                const int bin = std::clamp(static_cast<int>((v + 1.0) * 4.0), 0, 7);
                hist[bin] += 1.0;
                if (x + 1 < w) grad += std::pow(img.at(y, x + 1, c) - v, 2);
                if (y + 1 < h) grad += std::pow(img.at(y + 1, x, c) - v, 2);
            }
        mean /= n;
        out.push_back(mean);
        out.push_back(sq / n - mean * mean);
        out.push_back(grad / n);
        for (double b : hist) out.push_back(b / n);
    }
    return out;
}

namespace {
constexpr char kFeatMagic[8] = {'V', 'S', 'T', 'F', 'E', 'A', 'T', '\0'};
}

FeatureMatrix read_feature_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open feature file " + path.string());
    char magic[8];
    std::uint32_t version = 0, dim = 0;
    std::uint64_t count = 0;
    f.read(magic, 8);
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&dim), 4);
    f.read(reinterpret_cast<char*>(&count), 8);
    if (!f || std::memcmp(magic, kFeatMagic, 8) != 0) throw std::runtime_error(path.string() + ": not a feature file");
    if (version != 1) throw std::runtime_error(path.string() + ": unsupported feature file version " + std::to_string(version));
    if (dim == 0) throw std::runtime_error(path.string() + ": zero feature dimension");
    FeatureMatrix out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
    std::vector<float> row(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(dim * sizeof(float)));
        if (!f) throw std::runtime_error(path.string() + ": truncated at row " + std::to_string(i));
        for (std::uint32_t j = 0; j < dim; ++j) out(static_cast<Eigen::Index>(i), j) = row[j];
    }
    return out;
}

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& m) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write feature file " + path.string());
    const std::uint32_t version = 1, dim = static_cast<std::uint32_t>(m.cols());
    const std::uint64_t count = static_cast<std::uint64_t>(m.rows());
    f.write(kFeatMagic, 8);
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&dim), 4);
    f.write(reinterpret_cast<const char*>(&count), 8);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const float v = static_cast<float>(m(i, j));
            f.write(reinterpret_cast<const char*>(&v), 4);
        }
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

// Reports -------------------------------------------------------------------------------------

const std::vector<std::string>& MetricReport::schema() {
    static const std::vector<std::string> s{"PSNR", "SSIM", "FID", "FD", "FD∞", "KID"};
    return s;
}

const std::vector<std::string>& MetricReport::reserved() {
    static const std::vector<std::string> s{"FLS"};
    return s;
}

const MetricEntry& MetricReport::at(const std::string& name) const {
    for (const auto& e : metrics)
        if (e.name == name) return e;
    throw std::out_of_range("report has no metric " + name);
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : metrics) rows.push_back({{"name", e.name}, {"value", e.value}, {"extractor", e.extractor}});
    return {{"format", "vstain-metrics"},
            {"version", 1},
            {"config_hash", config_hash},
            {"timestamp", timestamp},
            {"counts", {{"pairs", pairs}, {"real", real_count}, {"fake", fake_count}}},
            {"metrics", rows},
            {"reserved", reserved()},
            {"diagnostics", diagnostics}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    if (j.at("format") != "vstain-metrics" || j.at("version") != 1)
        throw std::invalid_argument("not a version-1 metric report");
    MetricReport r;
    r.config_hash = j.at("config_hash");
    r.timestamp = j.at("timestamp");
    r.pairs = j.at("counts").at("pairs");
    r.real_count = j.at("counts").at("real");
    r.fake_count = j.at("counts").at("fake");
    for (const auto& e : j.at("metrics")) r.metrics.push_back({e.at("name"), e.at("value"), e.at("extractor")});
    r.diagnostics = j.at("diagnostics");
    return r;
}

std::string MetricReport::table() const {
    std::ostringstream os;
    os << std::left << std::setw(8) << "metric" << std::right << std::setw(14) << "value" << "  extractor\n";
    for (const auto& e : metrics) {
        // "FD∞" is 4 bytes for 3 columns.
        const int pad = e.name == "FD∞" ? 9 : 8;
        os << std::left << std::setw(pad) << e.name << std::right << std::setw(14) << std::fixed
           << std::setprecision(4) << e.value << "  " << e.extractor << '\n';
    }
    os << "pairs " << pairs << ", real " << real_count << ", fake " << fake_count << '\n';
    return os.str();
}

namespace {

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& kind, const ImageTensor& like, const EvalConfig& cfg) {
    if (kind == "randproj")
        return std::make_unique<RandomProjectionExtractor>(like.height(), like.width(), like.channels(),
                                                           cfg.projection_dim, cfg.seed);
    if (kind == "handcrafted") return std::make_unique<HandcraftedExtractor>(like.channels());
    throw std::invalid_argument("unknown feature extractor '" + kind + "' (expected randproj, handcrafted or external)");
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Features {
    FeatureMatrix real, fake;
    std::string name;
};

Features features_for(const std::string& kind, const std::vector<ImageTensor>& real,
                      const std::vector<ImageTensor>& fake, const EvalConfig& cfg) {
    if (kind == "external") {
        if (cfg.external_real.empty() || cfg.external_fake.empty())
            throw std::invalid_argument("external features need both feature files");
        Features f{read_feature_file(cfg.external_real), read_feature_file(cfg.external_fake),
                   "external:" + cfg.external_real.filename().string()};
        if (f.real.cols() != f.fake.cols()) throw std::invalid_argument("external feature files differ in dimension");
        return f;
    }
    const auto ex = make_extractor(kind, real.front(), cfg);
    return {ex->extract_all(real), ex->extract_all(fake), ex->name()};
}

}  // namespace

MetricReport evaluate_images(const std::vector<ImageTensor>& real, const std::vector<ImageTensor>& fake,
                             const EvalConfig& cfg) {
    if (real.empty() || fake.empty()) throw std::invalid_argument("evaluate: empty image set");
    if (real.size() != fake.size()) throw std::invalid_argument("evaluate: real and fake counts differ");
    if (real.size() < 16)
        throw std::invalid_argument("evaluate: FD∞ needs at least 16 pairs, got " + std::to_string(real.size()));
    MetricReport r;
    r.pairs = real.size();
    r.real_count = real.size();
    r.fake_count = fake.size();
    r.timestamp = utc_now();
    double ps = 0, ss = 0;
    for (std::size_t i = 0; i < real.size(); ++i) {
        ps += psnr(real[i], fake[i], 2.0);
        ss += ssim(real[i], fake[i]);
    }
    r.metrics.push_back({"PSNR", ps / static_cast<double>(real.size()), "pixel"});
    r.metrics.push_back({"SSIM", ss / static_cast<double>(real.size()), "pixel"});

    const Features fid = features_for(cfg.fid_extractor, real, fake, cfg);
    const FdResult fid_r = frechet(fit_gaussian(fid.real), fit_gaussian(fid.fake));
    r.metrics.push_back({"FID", fid_r.value, fid.name});

    const Features f = features_for(cfg.extractor, real, fake, cfg);
    const FdResult fd_r = frechet(fit_gaussian(f.real), fit_gaussian(f.fake));
    r.metrics.push_back({"FD", fd_r.value, f.name});
    const FdInfinity inf =
        fd_infinity(f.real, f.fake, default_fd_sizes(static_cast<std::size_t>(f.real.rows()),
                                                      static_cast<std::size_t>(f.fake.rows())),
                    cfg.seed, cfg.fd_inf_reps);
    r.metrics.push_back({"FD∞", inf.intercept, f.name});
    r.metrics.push_back({"KID", kid(f.real, f.fake), f.name});

    r.diagnostics = {{"fid_regularized", fid_r.regularized},
                     {"fd_regularized", fd_r.regularized || inf.regularized},
                     {"fd_inf_slope", inf.slope},
                     {"fd_inf_sizes", inf.sizes}};
    nlohmann::json cj = {{"extractor", cfg.extractor},
                         {"fid_extractor", cfg.fid_extractor},
                         {"projection_dim", cfg.projection_dim},
                         {"seed", std::to_string(cfg.seed)},
                         {"fd_inf_reps", cfg.fd_inf_reps}};
    r.config_hash = cfg.config_hash.empty() ? hash_hex(cj.dump()) : cfg.config_hash;
    for (const auto& e : r.metrics)
        if (!std::isfinite(e.value)) throw std::runtime_error("evaluate: metric " + e.name + " is not finite");
    return r;
}

MetricReport evaluate(const std::filesystem::path& real_dir, const std::filesystem::path& fake_dir,
                      const EvalConfig& cfg) {
    namespace fs = std::filesystem;
    auto list = [](const fs::path& dir) {
        if (!fs::is_directory(dir)) throw std::invalid_argument("evaluate: " + dir.string() + " is not a directory");
        std::set<std::string> names;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png") names.insert(e.path().filename().string());
        if (names.empty()) throw std::invalid_argument("evaluate: no .png images in " + dir.string());
        return names;
    };
    const auto rn = list(real_dir), fn = list(fake_dir);
    std::vector<std::string> missing;
    for (const auto& n : rn)
        if (!fn.count(n)) missing.push_back(n + " (no fake)");
    for (const auto& n : fn)
        if (!rn.count(n)) missing.push_back(n + " (no real)");
    if (!missing.empty()) {
        std::string msg = "evaluate: unpaired images:";
        for (const auto& m : missing) msg += " " + m;
        throw std::invalid_argument(msg);
    }
    std::vector<ImageTensor> real, fake;
    for (const auto& n : rn) {
        Image8 r = read_png(real_dir / n);
        const Image8 f = read_png(fake_dir / n);
        // Real tiles may be stored at an integer multiple of the sampled size.
        if (r.width != f.width && r.width % f.width == 0 && r.width / f.width == r.height / f.height &&
            r.height % f.height == 0)
            r = downscale_area(r, r.width / f.width);
        real.push_back(to_tensor(r));
        fake.push_back(to_tensor(f));
        if (!real.back().same_shape(fake.back())) throw std::invalid_argument("evaluate: " + n + " differs in size");
    }
    return evaluate_images(real, fake, cfg);
}

}  // namespace vstain::metrics
