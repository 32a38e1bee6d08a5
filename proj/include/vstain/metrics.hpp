#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vstain/image.hpp"

namespace vstain::metrics {

/// Returned for identical inputs instead of +inf.
inline constexpr double kPsnrCap = 99.0;

double psnr(const ImageTensor& a, const ImageTensor& b, double max_value);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 2.0;
};

/// Mean over valid windows and channels.
double ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opt = {});

// Distributional metrics -------------------------------------------------------

/// One feature vector per row.
using FeatureMatrix = Eigen::MatrixXd;

struct GaussianStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    std::size_t n = 0;
};

GaussianStats fit_gaussian(const FeatureMatrix& features);

inline constexpr double kFdRegularization = 1e-6;

struct FdResult {
    double value = 0.0;
    bool regularized = false;
};

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2). Adds eps*I to
/// both covariances when either is near singular.
FdResult frechet(const GaussianStats& a, const GaussianStats& b);
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct FdInfinity {
    double intercept = 0.0;
    double slope = 0.0;
    std::vector<int> sizes;
    std::vector<double> mean_fd;  // per size
    bool regularized = false;
};

/// Subsample sizes n/8, n/4, n/2, n for n = min(rows).
std::vector<int> default_fd_sizes(std::size_t n1, std::size_t n2);

/// FD on `reps` random subsets (without replacement) per size, then a least
/// squares fit of mean FD against 1/size. Subset indices for (size k, rep r)
/// come from a generator derived from (seed, k, r); equal-sized sets use the
/// same indices.
FdInfinity fd_infinity(const FeatureMatrix& f1, const FeatureMatrix& f2, const std::vector<int>& sizes,
                       std::uint64_t seed, int reps = 10);

/// Unbiased MMD^2 with k(x, y) = (x.y / d + 1)^3.
double kid(const FeatureMatrix& f1, const FeatureMatrix& f2);

// Feature extractors ------------------------------------------------------------

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual int dim() const = 0;
    virtual std::vector<double> extract(const ImageTensor& img) const = 0;

    FeatureMatrix extract_all(const std::vector<ImageTensor>& imgs) const;
};

/// Fixed Gaussian projection of raw pixels, entries N(0, 1/D_in).
class RandomProjectionExtractor : public FeatureExtractor {
public:
    RandomProjectionExtractor(int height, int width, int channels, int dim, std::uint64_t seed);
    std::string name() const override;
    int dim() const override { return dim_; }
    std::vector<double> extract(const ImageTensor& img) const override;

private:
    int h_, w_, c_, dim_;
    std::uint64_t seed_;
    Eigen::MatrixXd proj_;
};

/// Per channel: mean, variance, gradient energy and an 8-bin histogram over [-1, 1].
class HandcraftedExtractor : public FeatureExtractor {
public:
    explicit HandcraftedExtractor(int channels = 3) : c_(channels) {}
    std::string name() const override { return "handcrafted-v1"; }
    int dim() const override { return 11 * c_; }
    std::vector<double> extract(const ImageTensor& img) const override;

private:
    int c_;
};

/// External feature file: "VSTFEAT\0", u32 version (1), u32 dim, u64 count,
/// then count x dim little-endian f32, row-major.
FeatureMatrix read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& f);

// Reports ------------------------------------------------------------------------

struct MetricEntry {
    std::string name;
    double value = 0.0;
    std::string extractor;
};

struct MetricReport {
    std::vector<MetricEntry> metrics;  // schema order
    std::size_t pairs = 0, real_count = 0, fake_count = 0;
    std::string config_hash;
    std::string timestamp;
    nlohmann::json diagnostics = nlohmann::json::object();

    static const std::vector<std::string>& schema();  // PSNR, SSIM, FID, FD, FD∞, KID
    static const std::vector<std::string>& reserved();  // FLS

    const MetricEntry& at(const std::string& name) const;
    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
    std::string table() const;
};

struct EvalConfig {
    std::string extractor = "randproj";     // FD, FD∞, KID: randproj | handcrafted | external
    std::string fid_extractor = "handcrafted";  // FID: randproj | handcrafted | external
    int projection_dim = 64;
    std::uint64_t seed = 0;
    int fd_inf_reps = 10;
    std::filesystem::path external_real, external_fake;  // for "external"
    std::string config_hash;
};

/// Pairs files by name; every .png in either directory must have a partner.
MetricReport evaluate(const std::filesystem::path& real_dir, const std::filesystem::path& fake_dir,
                      const EvalConfig& config);
/// Same over in-memory paired lists.
MetricReport evaluate_images(const std::vector<ImageTensor>& real, const std::vector<ImageTensor>& fake,
                             const EvalConfig& config);

}  // namespace vstain::metrics
