#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vstain/image.hpp"
#include "vstain/rng.hpp"

namespace vstain::data {

using Vec3 = std::array<double, 3>;

/// Optical-density directions (R, G, B) of the stains, unit length.
struct StainPalette {
    // Ruifrok & Johnston, Anal. Quant. Cytol. Histol. 23 (2001).
    Vec3 hematoxylin{0.650, 0.704, 0.286};
    Vec3 eosin{0.072, 0.990, 0.105};
    Vec3 dab{0.268, 0.570, 0.776};
};

struct SceneConfig {
    int canvas = 384;
    int min_cells = 60;
    int max_cells = 90;
    double cell_radius_min = 9.0;
    double cell_radius_max = 14.0;
    double target_fraction = 0.35;
    /// 0: target cells render like the others in H&E; 1: clearly distinct.
    double discriminability = 1.0;
    double background_fraction = 0.25;
    StainPalette palette;

    void validate() const;
    nlohmann::json to_json() const;
    static SceneConfig from_json(const nlohmann::json& j);
    std::string hash() const;
};

struct Cell {
    double cx = 0, cy = 0;
    double rx = 0, ry = 0;
    double angle = 0;
    double nucleus_scale = 0.5;
    bool target = false;

    /// 0 outside, 1 in cytoplasm, 2 in nucleus.
    int classify(double x, double y) const;
};

struct Scene {
    Image8 he;
    Image8 ihc;
    Mask gt_mask;
    Mask tissue;
    std::vector<Cell> cells;
};

/// Raised when cells cannot be placed without overlap.
class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

Scene generate_scene(const SceneConfig& config, Rng& rng);

// Stain separation -------------------------------------------------------------

/// Rows hematoxylin, DAB, and their normalized cross product.
std::array<Vec3, 3> hdab_matrix(const StainPalette& p = {});

/// Real-valued RGB (0..255 scale) from per-stain optical densities:
/// channel = 256 * 10^(-sum od_s * v_s) - 1.
Vec3 synthesize_rgb(const Vec3& od, const std::array<Vec3, 3>& stains);
/// Per-stain densities for one real-valued RGB pixel, clamped at 0.
Vec3 deconvolve_pixel(const Vec3& rgb, const std::array<Vec3, 3>& inverse);
std::array<Vec3, 3> invert(const std::array<Vec3, 3>& m);

struct StainChannels {
    int width = 0, height = 0;
    std::vector<double> hematoxylin, dab, residual;
};

/// OD = -log10((p + 1) / 256), projected on the inverse H-DAB matrix.
StainChannels stain_deconvolve(const Image8& rgb);

struct CoarseMaskParams {
    double od_threshold = 0.25;
    int min_object_px = 20;
};

Mask morphological_open(const Mask& m);
Mask morphological_close(const Mask& m);
/// Drops 8-connected components smaller than min_px.
Mask remove_small_objects(const Mask& m, int min_px);

/// DAB OD threshold, 3x3 opening then closing, small-object removal.
Mask dab_threshold_mask(const Image8& ihc, const CoarseMaskParams& params);
/// Raw DAB OD > threshold, no cleanup.
Mask dab_positive(const Image8& ihc, double od_threshold);

/// Fraction of pixels whose smallest channel is below 220.
double tissue_fraction(const Image8& img);

// Tiling --------------------------------------------------------------------------

struct TilingPolicy {
    int patch_size = 128;
    int overlap = 32;
    double tissue_fraction_min = 0.5;

    int stride() const { return patch_size - overlap; }
    void validate() const;
};

/// 0, stride, 2*stride, ... plus a flush-to-border anchor when needed.
std::vector<int> tile_anchors(int extent, const TilingPolicy& policy);

struct Slide {
    Image8 he;
    Image8 ihc;
    Mask coarse_mask;
    Mask gt_mask;
};

struct SampleMeta {
    int scene = -1;
    int patch = -1;
    int x = 0, y = 0;
    std::uint64_t scene_seed = 0;
    std::string config_hash;
    double tissue_fraction = 0;
};

/// 8-bit images; conversion to [-1, 1] tensors happens at training time.
struct PairedSample {
    Image8 he;
    Image8 ihc;
    Mask coarse_mask;
    Mask gt_mask;
    SampleMeta meta;
};

std::vector<PairedSample> tile_patches(const Slide& slide, const TilingPolicy& policy);

// Datasets --------------------------------------------------------------------------

struct DatasetSpec {
    int scenes = 64;
    std::uint64_t seed = 0;
    SceneConfig scene;
    TilingPolicy tiling;
    CoarseMaskParams coarse;
    double test_fraction = 0.2;
};

/// Trailing scene ids form the test split.
int test_scene_count(int scenes, double test_fraction);
std::string dataset_hash(const DatasetSpec& spec);

/// Writes split/scene_XXXX/patch_YYYY_{he,ihc,mask,gt}.png and manifest.json.
nlohmann::json build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

/// Patches of one split, area-downscaled to image_size.
std::vector<PairedSample> load_split(const std::filesystem::path& manifest_path, const std::string& split,
                                     int image_size, std::size_t limit = 0);

}  // namespace vstain::data
