#include "vstain/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "vstain/hash.hpp"
#include "vstain/png_io.hpp"

namespace vstain::data {

namespace {

Vec3 normalized(Vec3 v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (!(n > 0)) throw std::invalid_argument("stain vector has zero length");
    return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double cosine(const Vec3& a, const Vec3& b) {
    const Vec3 x = normalized(a), y = normalized(b);
    return x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
}

constexpr double kLn10 = 2.302585092994046;

}  // namespace

// SceneConfig ----------------------------------------------------------------------

void SceneConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("SceneConfig: " + m); };
    if (canvas < 32) fail("canvas must be at least 32 px");
    if (min_cells < 0 || max_cells < min_cells) fail("need 0 <= min_cells <= max_cells");
    if (!(cell_radius_min > 1.0) || cell_radius_max < cell_radius_min) fail("bad cell radius range");
    for (double f : {target_fraction, discriminability, background_fraction})
        if (!(f >= 0.0 && f <= 1.0)) fail("fractions must lie in [0, 1]");
    if (background_fraction > 0.95) fail("background_fraction leaves no tissue");
    const std::array<Vec3, 3> cols{palette.hematoxylin, palette.eosin, palette.dab};
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (cosine(cols[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]) > 0.999)
                fail("palette colors must be distinct");
}

nlohmann::json SceneConfig::to_json() const {
    return {{"canvas", canvas},
            {"min_cells", min_cells},
            {"max_cells", max_cells},
            {"cell_radius_min", cell_radius_min},
            {"cell_radius_max", cell_radius_max},
            {"target_fraction", target_fraction},
            {"discriminability", discriminability},
            {"background_fraction", background_fraction},
            {"palette",
             {{"hematoxylin", palette.hematoxylin}, {"eosin", palette.eosin}, {"dab", palette.dab}}}};
}

SceneConfig SceneConfig::from_json(const nlohmann::json& j) {
    SceneConfig c;
    c.canvas = j.at("canvas");
    c.min_cells = j.at("min_cells");
    c.max_cells = j.at("max_cells");
    c.cell_radius_min = j.at("cell_radius_min");
    c.cell_radius_max = j.at("cell_radius_max");
    c.target_fraction = j.at("target_fraction");
    c.discriminability = j.at("discriminability");
    c.background_fraction = j.at("background_fraction");
    c.palette.hematoxylin = j.at("palette").at("hematoxylin");
    c.palette.eosin = j.at("palette").at("eosin");
    c.palette.dab = j.at("palette").at("dab");
    c.validate();
    return c;
}

std::string SceneConfig::hash() const {
    return hash_hex(to_json().dump());
}

// Scene rendering ----------------------------------------------------------------------

int Cell::classify(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    const double r2 = u * u + v * v;
    if (r2 > 1.0) return 0;
    return r2 <= nucleus_scale * nucleus_scale ? 2 : 1;
}

namespace {

/// Low-frequency cosine field thresholded at its background quantile.
Mask tissue_region(const SceneConfig& cfg, Rng& rng) {
    const int n = cfg.canvas;
    Mask tissue(n, n, 1);
    if (cfg.background_fraction <= 0.0) return tissue;
    struct Wave {
        double u, v, phase, amp;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 6; ++k) {
        const double f = rng.uniform(0.5, 2.0), th = rng.uniform(0.0, std::numbers::pi);
        waves.push_back({f * std::cos(th), f * std::sin(th), rng.uniform(0.0, 2 * std::numbers::pi), rng.uniform(0.5, 1.0)});
    }
    std::vector<double> field(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double s = 0;
            for (const auto& w : waves)
                s += w.amp * std::cos(2 * std::numbers::pi * (w.u * x + w.v * y) / n + w.phase);
            field[static_cast<std::size_t>(y) * n + x] = s;
        }
    std::vector<double> sorted = field;
    const auto k = static_cast<std::size_t>(cfg.background_fraction * static_cast<double>(sorted.size()));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    const double cut = sorted[k];
    for (std::size_t i = 0; i < field.size(); ++i) tissue.bits[i] = field[i] >= cut ? 1 : 0;
    return tissue;
}

struct CellLook {
    double nucleus_h;    // H&E nucleus hematoxylin OD
    double cytoplasm_e;  // H&E cytoplasm eosin OD
    double dab;          // IHC DAB OD, target cells only
    double counter_h;    // IHC nucleus hematoxylin OD
};

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

void put_pixel(Image8& img, int y, int x, const Vec3& od, const std::array<Vec3, 3>& stains) {
    const Vec3 rgb = synthesize_rgb(od, stains);
    for (int c = 0; c < 3; ++c) img.at(y, x, c) = to_byte(rgb[static_cast<std::size_t>(c)]);
}

}  // namespace

Scene generate_scene(const SceneConfig& cfg, Rng& rng) {
    cfg.validate();
    const int n = cfg.canvas;
    Scene sc;
    sc.tissue = tissue_region(cfg, rng);
    std::vector<std::pair<int, int>> tissue_px;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (sc.tissue.at(y, x)) tissue_px.emplace_back(x, y);

    // Cell placement by rejection; circles of the major radius must not touch.
    const int count = rng.uniform_int(cfg.min_cells, cfg.max_cells);
    const double delta = cfg.discriminability;
    std::vector<CellLook> looks;
    for (int i = 0; i < count; ++i) {
        Cell cell;
        cell.target = rng.uniform() < cfg.target_fraction;
        const double t = cell.target ? delta : 0.0;
        cell.rx = rng.uniform(cfg.cell_radius_min, cfg.cell_radius_max);
        cell.ry = cell.rx * rng.uniform(0.75, 1.0);
        cell.angle = rng.uniform(0.0, std::numbers::pi);
        cell.nucleus_scale = std::min(0.9, rng.uniform(0.45, 0.6) + 0.2 * t);
        CellLook look{rng.uniform(0.55, 0.85) + 0.5 * t, rng.uniform(0.35, 0.55) - 0.25 * t,
                      rng.uniform(0.55, 0.9), rng.uniform(0.3, 0.45)};
        bool placed = false;
        for (int attempt = 0; attempt < 400 && !placed && !tissue_px.empty(); ++attempt) {
            const auto [px, py] = tissue_px[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(tissue_px.size()) - 1))];
            cell.cx = px + rng.uniform();
            cell.cy = py + rng.uniform();
            placed = true;
            for (const auto& o : sc.cells) {
                const double d = std::hypot(o.cx - cell.cx, o.cy - cell.cy);
                if (d < o.rx + cell.rx + 1.0) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed)
            throw PlacementError("generate_scene: could not place cell " + std::to_string(i + 1) + " of " +
                                 std::to_string(count) + " without overlap; reduce the cell count or radius");
        sc.cells.push_back(cell);
        looks.push_back(look);
    }

    // Per-pixel owner lookup over cell bounding boxes.
    std::vector<int> owner(static_cast<std::size_t>(n) * n, -1);
    std::vector<std::uint8_t> part(owner.size(), 0);
    for (std::size_t i = 0; i < sc.cells.size(); ++i) {
        const Cell& c = sc.cells[i];
        const int x0 = std::max(0, static_cast<int>(std::floor(c.cx - c.rx))), x1 = std::min(n - 1, static_cast<int>(std::ceil(c.cx + c.rx)));
        const int y0 = std::max(0, static_cast<int>(std::floor(c.cy - c.rx))), y1 = std::min(n - 1, static_cast<int>(std::ceil(c.cy + c.rx)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const int k = c.classify(x + 0.5, y + 0.5);
                if (!k) continue;
                const std::size_t p = static_cast<std::size_t>(y) * n + x;
                owner[p] = static_cast<int>(i);
                part[p] = static_cast<std::uint8_t>(k);
            }
    }

    const StainPalette& pal = cfg.palette;
    const std::array<Vec3, 3> he_stains{normalized(pal.hematoxylin), normalized(pal.eosin), Vec3{0, 0, 0}};
    const std::array<Vec3, 3> ihc_stains{normalized(pal.hematoxylin), normalized(pal.dab), Vec3{0, 0, 0}};
    sc.he = Image8(n, n, 3);
    sc.ihc = Image8(n, n, 3);
    sc.gt_mask = Mask(n, n);
    constexpr double noise = 0.02;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * n + x;
            Vec3 he{0, 0, 0}, ihc{0, 0, 0};
            if (sc.tissue.bits[p] || owner[p] >= 0) {
                he = {0.03, 0.25, 0};
                ihc = {0.04, 0, 0};
            }
            if (owner[p] >= 0) {
                const auto& look = looks[static_cast<std::size_t>(owner[p])];
                const bool target = sc.cells[static_cast<std::size_t>(owner[p])].target;
                if (part[p] == 2) {
                    he = {look.nucleus_h, 0.10, 0};
                    ihc[0] = look.counter_h;
                } else {
                    he = {0.05, look.cytoplasm_e, 0};
                }
                if (target) {
                    ihc[1] = look.dab;
                    sc.gt_mask.bits[p] = 1;
                }
            }
            const bool stained = sc.tissue.bits[p] || owner[p] >= 0;
            for (int s = 0; s < 2; ++s) {
                const double a = rng.normal() * noise, b = rng.normal() * noise;
                if (stained) {
                    he[static_cast<std::size_t>(s)] = std::max(0.0, he[static_cast<std::size_t>(s)] + a);
                    ihc[static_cast<std::size_t>(s)] = std::max(0.0, ihc[static_cast<std::size_t>(s)] + b);
                }
            }
            put_pixel(sc.he, y, x, he, he_stains);
            put_pixel(sc.ihc, y, x, ihc, ihc_stains);
        }
    return sc;
}

// Stain separation ------------------------------------------------------------------------

std::array<Vec3, 3> hdab_matrix(const StainPalette& p) {
    const Vec3 h = normalized(p.hematoxylin), d = normalized(p.dab);
    return {h, d, normalized(cross(h, d))};
}

std::array<Vec3, 3> invert(const std::array<Vec3, 3>& m) {
    Eigen::Matrix3d a;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a(i, j) = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    const Eigen::Matrix3d inv = a.inverse();
    std::array<Vec3, 3> out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = inv(i, j);
    return out;
}

Vec3 synthesize_rgb(const Vec3& od, const std::array<Vec3, 3>& stains) {
    Vec3 rgb{};
    for (std::size_t c = 0; c < 3; ++c) {
        double total = 0;
        for (std::size_t s = 0; s < 3; ++s) total += od[s] * stains[s][c];
        rgb[c] = 256.0 * std::exp(-kLn10 * total) - 1.0;
    }
    return rgb;
}

Vec3 deconvolve_pixel(const Vec3& rgb, const std::array<Vec3, 3>& inverse) {
    Vec3 od{};
    for (std::size_t c = 0; c < 3; ++c) od[c] = std::max(0.0, -std::log10((std::max(rgb[c], 0.0) + 1.0) / 256.0));
    // row vector od * M^-1
    Vec3 out{};
    for (std::size_t s = 0; s < 3; ++s) {
        double v = 0;
        for (std::size_t c = 0; c < 3; ++c) v += od[c] * inverse[c][s];
        out[s] = std::max(0.0, v);
    }
    return out;
}

StainChannels stain_deconvolve(const Image8& rgb) {
    if (rgb.channels != 3) throw std::invalid_argument("stain_deconvolve: expects an RGB image");
    const auto inv = invert(hdab_matrix());
    StainChannels out;
    out.width = rgb.width;
    out.height = rgb.height;
    const std::size_t n = static_cast<std::size_t>(rgb.width) * rgb.height;
    out.hematoxylin.resize(n);
    out.dab.resize(n);
    out.residual.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 px{double(rgb.pixels[3 * i]), double(rgb.pixels[3 * i + 1]), double(rgb.pixels[3 * i + 2])};
        const Vec3 od = deconvolve_pixel(px, inv);
        out.hematoxylin[i] = od[0];
        out.dab[i] = od[1];
        out.residual[i] = od[2];
    }
    return out;
}

// Morphology ---------------------------------------------------------------------------------

namespace {

// Out-of-bounds neighbors are ignored, so borders neither erode nor grow.
Mask filter3x3(const Mask& m, bool dilate) {
    Mask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            bool v = !dilate;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width) continue;
                    if (dilate)
                        v = v || m.at(yy, xx);
                    else
                        v = v && m.at(yy, xx);
                }
            out.at(y, x) = v ? 1 : 0;
        }
    return out;
}

}  // namespace

Mask morphological_open(const Mask& m) {
    return filter3x3(filter3x3(m, false), true);
}

Mask morphological_close(const Mask& m) {
    return filter3x3(filter3x3(m, true), false);
}

Mask remove_small_objects(const Mask& m, int min_px) {
    Mask out = m;
    std::vector<int> label(m.bits.size(), 0);
    std::vector<std::size_t> comp;
    std::deque<std::size_t> queue;
    int next = 0;
    for (std::size_t start = 0; start < m.bits.size(); ++start) {
        if (!m.bits[start] || label[start]) continue;
        ++next;
        comp.clear();
        queue.push_back(start);
        label[start] = next;
        while (!queue.empty()) {
            const std::size_t p = queue.front();
            queue.pop_front();
            comp.push_back(p);
            const int y = static_cast<int>(p / m.width), x = static_cast<int>(p % m.width);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width) continue;
                    const std::size_t q = static_cast<std::size_t>(yy) * m.width + xx;
                    if (m.bits[q] && !label[q]) {
                        label[q] = next;
                        queue.push_back(q);
                    }
                }
        }
        if (static_cast<int>(comp.size()) < min_px)
            for (std::size_t p : comp) out.bits[p] = 0;
    }
    return out;
}

Mask dab_positive(const Image8& ihc, double od_threshold) {
    const StainChannels s = stain_deconvolve(ihc);
    Mask m(ihc.width, ihc.height);
    for (std::size_t i = 0; i < s.dab.size(); ++i) m.bits[i] = s.dab[i] > od_threshold ? 1 : 0;
    return m;
}

Mask dab_threshold_mask(const Image8& ihc, const CoarseMaskParams& params) {
    if (!(params.od_threshold > 0)) throw std::invalid_argument("dab_threshold_mask: threshold must be positive");
    Mask m = dab_positive(ihc, params.od_threshold);
    m = morphological_close(morphological_open(m));
    return remove_small_objects(m, params.min_object_px);
}

double tissue_fraction(const Image8& img) {
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    if (n == 0) return 0.0;
    std::size_t tissue = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::uint8_t lo = 255;
        for (int c = 0; c < img.channels; ++c) lo = std::min(lo, img.pixels[i * img.channels + c]);
        if (lo < 220) ++tissue;
    }
    return static_cast<double>(tissue) / static_cast<double>(n);
}

// Tiling ----------------------------------------------------------------------------------------

void TilingPolicy::validate() const {
    if (patch_size <= 0) throw std::invalid_argument("TilingPolicy: patch_size must be positive");
    if (overlap <= 0 || overlap >= patch_size) throw std::invalid_argument("TilingPolicy: need 0 < overlap < patch_size");
    if (!(tissue_fraction_min > 0.0 && tissue_fraction_min <= 1.0))
        throw std::invalid_argument("TilingPolicy: tissue_fraction_min must lie in (0, 1]");
}

std::vector<int> tile_anchors(int extent, const TilingPolicy& policy) {
    policy.validate();
    if (extent < policy.patch_size)
        throw std::invalid_argument("tile_anchors: extent " + std::to_string(extent) + " smaller than patch " +
                                    std::to_string(policy.patch_size));
    std::vector<int> out;
    for (int a = 0; a + policy.patch_size <= extent; a += policy.stride()) out.push_back(a);
    if (out.back() + policy.patch_size != extent) out.push_back(extent - policy.patch_size);
    return out;
}

std::vector<PairedSample> tile_patches(const Slide& slide, const TilingPolicy& policy) {
    const int w = slide.he.width, h = slide.he.height;
    if (slide.ihc.width != w || slide.ihc.height != h || slide.coarse_mask.width != w || slide.gt_mask.width != w ||
        slide.coarse_mask.height != h || slide.gt_mask.height != h)
        throw std::invalid_argument("tile_patches: slide layers differ in size");
    std::vector<PairedSample> out;
    int index = 0;
    for (int y : tile_anchors(h, policy))
        for (int x : tile_anchors(w, policy)) {
            const int p = policy.patch_size;
            Image8 he = crop(slide.he, x, y, p, p);
            const double frac = tissue_fraction(he);
            if (frac < policy.tissue_fraction_min) continue;
            PairedSample s{std::move(he), crop(slide.ihc, x, y, p, p), crop(slide.coarse_mask, x, y, p, p),
                           crop(slide.gt_mask, x, y, p, p), {}};
            s.meta.patch = index++;
            s.meta.x = x;
            s.meta.y = y;
            s.meta.tissue_fraction = frac;
            out.push_back(std::move(s));
        }
    return out;
}

// Datasets ----------------------------------------------------------------------------------------

int test_scene_count(int scenes, double test_fraction) {
    if (scenes < 2) return 0;
    const int k = static_cast<int>(std::lround(test_fraction * scenes));
    return std::clamp(k, 1, scenes - 1);
}

namespace {

nlohmann::json spec_json(const DatasetSpec& s) {
    return {{"scene", s.scene.to_json()},
            {"tiling",
             {{"patch_size", s.tiling.patch_size},
              {"overlap", s.tiling.overlap},
              {"tissue_fraction_min", s.tiling.tissue_fraction_min}}},
            {"coarse", {{"od_threshold", s.coarse.od_threshold}, {"min_object_px", s.coarse.min_object_px}}},
            {"test_fraction", s.test_fraction}};
}

std::string scene_dir(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04d", id);
    return buf;
}

std::string patch_stem(int id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "patch_%04d", id);
    return buf;
}

}  // namespace

std::string dataset_hash(const DatasetSpec& spec) {
    return hash_hex(spec_json(spec).dump());
}

nlohmann::json build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (spec.scenes < 1) throw std::invalid_argument("build_dataset: need at least one scene");
    spec.scene.validate();
    spec.tiling.validate();
    const int n_test = test_scene_count(spec.scenes, spec.test_fraction);
    const std::string chash = dataset_hash(spec);
    nlohmann::json manifest = {{"format", "vstain-dataset"},
                               {"version", 1},
                               {"seed", std::to_string(spec.seed)},
                               {"scenes", spec.scenes},
                               {"config_hash", chash},
                               {"spec", spec_json(spec)}};
    nlohmann::json patches = nlohmann::json::array();
    std::vector<int> train_ids, test_ids;
    int counts[2] = {0, 0};
    for (int id = 0; id < spec.scenes; ++id) {
        const bool test = id >= spec.scenes - n_test;
        (test ? test_ids : train_ids).push_back(id);
        const std::string split = test ? "test" : "train";
        Rng rng = Rng::derive(spec.seed, {static_cast<std::uint64_t>(id)});
        const std::uint64_t scene_seed = rng.next_u64();
        Rng scene_rng(scene_seed);
        Scene sc = generate_scene(spec.scene, scene_rng);
        Slide slide{sc.he, sc.ihc, dab_threshold_mask(sc.ihc, spec.coarse), sc.gt_mask};
        const fs::path dir = out_dir / split / scene_dir(id);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
        for (auto& p : tile_patches(slide, spec.tiling)) {
            const std::string stem = patch_stem(p.meta.patch);
            const std::string rel = split + "/" + scene_dir(id) + "/" + stem;
            write_png(out_dir / (rel + "_he.png"), p.he);
            write_png(out_dir / (rel + "_ihc.png"), p.ihc);
            write_png(out_dir / (rel + "_mask.png"), mask_to_gray(p.coarse_mask));
            write_png(out_dir / (rel + "_gt.png"), mask_to_gray(p.gt_mask));
            patches.push_back({{"scene", id},
                               {"patch", p.meta.patch},
                               {"split", split},
                               {"x", p.meta.x},
                               {"y", p.meta.y},
                               {"scene_seed", std::to_string(scene_seed)},
                               {"tissue_fraction", p.meta.tissue_fraction},
                               {"stem", rel}});
            ++counts[test ? 1 : 0];
        }
    }
    manifest["splits"] = {{"train", train_ids}, {"test", test_ids}};
    manifest["counts"] = {{"train", counts[0]}, {"test", counts[1]}};
    manifest["patches"] = std::move(patches);
    const fs::path path = out_dir / "manifest.json";
    const fs::path tmp = out_dir / "manifest.json.tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f << manifest.dump(2) << '\n';
        if (!f) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
    return manifest;
}

std::vector<PairedSample> load_split(const std::filesystem::path& manifest_path, const std::string& split,
                                     int image_size, std::size_t limit) {
    std::ifstream f(manifest_path);
    if (!f) throw std::runtime_error("cannot open manifest " + manifest_path.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
    }
    const auto root = manifest_path.parent_path();
    const int patch = m.at("spec").at("tiling").at("patch_size").get<int>();
    if (image_size <= 0 || patch % image_size)
        throw std::invalid_argument("load_split: patch size " + std::to_string(patch) + " is not a multiple of " +
                                    std::to_string(image_size));
    const int factor = patch / image_size;
    const std::string chash = m.at("config_hash");
    std::vector<PairedSample> out;
    for (const auto& p : m.at("patches")) {
        if (p.at("split") != split) continue;
        if (limit && out.size() >= limit) break;
        const std::string stem = p.at("stem");
        PairedSample s;
        s.he = downscale_area(read_png(root / (stem + "_he.png")), factor);
        s.ihc = downscale_area(read_png(root / (stem + "_ihc.png")), factor);
        s.coarse_mask = downscale_area(mask_from_gray(read_png(root / (stem + "_mask.png"), true)), factor);
        s.gt_mask = downscale_area(mask_from_gray(read_png(root / (stem + "_gt.png"), true)), factor);
        s.meta.scene = p.at("scene");
        s.meta.patch = p.at("patch");
        s.meta.x = p.at("x");
        s.meta.y = p.at("y");
        s.meta.scene_seed = std::stoull(p.at("scene_seed").get<std::string>());
        s.meta.config_hash = chash;
        s.meta.tissue_fraction = p.at("tissue_fraction");
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace vstain::data
