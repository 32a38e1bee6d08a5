#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "vstain/data.hpp"
#include "vstain/png_io.hpp"

using namespace vstain;
using namespace vstain::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("vstain_data_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Mask from_rows(const std::vector<std::string>& rows) {
    Mask m(static_cast<int>(rows[0].size()), static_cast<int>(rows.size()));
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) m.at(y, x) = rows[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] == '#';
    return m;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("stain matrix rows are unit length and invertible") {
    const auto m = hdab_matrix();
    for (const auto& row : m) CHECK(std::sqrt(row[0] * row[0] + row[1] * row[1] + row[2] * row[2]) == doctest::Approx(1.0));
    const auto inv = invert(m);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += m[i][k] * inv[k][j];
            CHECK(s == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
        }
}

TEST_CASE("deconvolution recovers densities of real-valued pixels") {
    const auto m = hdab_matrix();
    const auto inv = invert(m);
    const Vec3 od{0.8, 0.3, 0.0};
    const Vec3 back = deconvolve_pixel(synthesize_rgb(od, m), inv);
    for (int i = 0; i < 3; ++i) CHECK(back[i] == doctest::Approx(od[i]).epsilon(1e-12));
    const Vec3 white = deconvolve_pixel({255, 255, 255}, inv);
    for (double v : white) CHECK(v == 0.0);
}

TEST_CASE("deconvolution of 8-bit pixels is within quantization error") {
    const auto m = hdab_matrix();
    Image8 img(1, 1, 3);
    const Vec3 rgb = synthesize_rgb({0.5, 0.6, 0.0}, m);
    for (int c = 0; c < 3; ++c) img.at(0, 0, c) = static_cast<std::uint8_t>(std::lround(rgb[c]));
    const auto ch = stain_deconvolve(img);
    CHECK(std::abs(ch.hematoxylin[0] - 0.5) < 0.01);
    CHECK(std::abs(ch.dab[0] - 0.6) < 0.01);
}

TEST_CASE("morphology on hand masks") {
    const Mask speck = from_rows({".....", ".###.", ".###.", ".###.", "....#"});
    const Mask opened = morphological_open(speck);
    CHECK(opened.at(4, 4) == 0);  // isolated pixel removed
    CHECK(opened.at(2, 2) == 1);
    const Mask holey = from_rows({"#####", "#####", "##.##", "#####", "#####"});
    CHECK(morphological_close(holey).at(2, 2) == 1);
}

TEST_CASE("small objects are removed with 8-connectivity") {
    const Mask m = from_rows({"##...", "##...", "..#..", ".....", "....#"});
    const Mask kept = remove_small_objects(m, 5);
    CHECK(kept.count() == 5);  // the diagonal pixel joins the 2x2 block
    CHECK(kept.at(4, 4) == 0);
    CHECK(remove_small_objects(m, 6).count() == 0);
}

TEST_CASE("tissue fraction") {
    Image8 img(4, 1, 3, 255);
    img.at(0, 0, 1) = 219;
    img.at(0, 1, 0) = 220;
    CHECK(tissue_fraction(img) == doctest::Approx(0.25));
}

TEST_CASE("tile anchors") {
    const TilingPolicy p;
    CHECK(tile_anchors(256, p) == std::vector<int>{0, 96, 128});
    CHECK(tile_anchors(128, p) == std::vector<int>{0});
    CHECK(tile_anchors(224, p) == std::vector<int>{0, 96});
    CHECK_THROWS_AS(tile_anchors(100, p), std::invalid_argument);
    TilingPolicy bad;
    bad.overlap = 128;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("scene generation is seeded and consistent") {
    SceneConfig c;
    c.canvas = 192;
    c.min_cells = 15;
    c.max_cells = 20;
    Rng a(3), b(3), d(4);
    const Scene s1 = generate_scene(c, a), s2 = generate_scene(c, b), s3 = generate_scene(c, d);
    CHECK(s1.he == s2.he);
    CHECK(s1.ihc == s2.ihc);
    CHECK(s1.gt_mask.bits == s2.gt_mask.bits);
    CHECK_FALSE(s1.he == s3.he);
    CHECK(s1.cells.size() >= 15);
    CHECK(s1.cells.size() <= 20);
    bool any_target = false;
    for (const auto& cell : s1.cells) any_target = any_target || cell.target;
    CHECK(any_target);
    // Ground truth covers exactly the target cells.
    for (int y = 0; y < c.canvas; y += 7)
        for (int x = 0; x < c.canvas; x += 7) {
            bool inside = false;
            for (const auto& cell : s1.cells) inside = inside || (cell.target && cell.classify(x + 0.5, y + 0.5) > 0);
            CHECK(s1.gt_mask.at(y, x) == inside);
        }
}

TEST_CASE("scene config validation and hashing") {
    SceneConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(SceneConfig::from_json(c.to_json()).hash() == c.hash());
    SceneConfig d = c;
    d.discriminability = 0.0;
    CHECK(d.hash() != c.hash());
    d.min_cells = 100;
    d.max_cells = 50;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    SceneConfig crowded;
    crowded.canvas = 64;
    crowded.min_cells = 200;
    crowded.max_cells = 200;
    Rng r(1);
    CHECK_THROWS_AS(generate_scene(crowded, r), PlacementError);
}

TEST_CASE("tiling a half-tissue slide") {
    Slide s;
    s.he = Image8(256, 256, 3, 255);
    s.ihc = Image8(256, 256, 3, 255);
    s.coarse_mask = Mask(256, 256);
    s.gt_mask = Mask(256, 256);
    for (int y = 0; y < 256; ++y)
        for (int x = 0; x < 128; ++x) s.he.at(y, x, 0) = 100;
    const auto patches = tile_patches(s, TilingPolicy{});
    for (const auto& p : patches) {
        CHECK(p.meta.tissue_fraction >= 0.5);
        CHECK(p.he.width == 128);
    }
    // x = 0 full tissue; x = 96 holds a quarter; x = 128 none.
    CHECK(patches.size() == 3);
}

TEST_CASE("dataset build is deterministic and loadable") {
    const fs::path a = temp_dir("a"), b = temp_dir("b");
    DatasetSpec spec;
    spec.scenes = 3;
    spec.seed = 12;
    spec.scene.canvas = 256;
    spec.scene.min_cells = 25;
    spec.scene.max_cells = 30;
    const auto ma = build_dataset(spec, a);
    const auto mb = build_dataset(spec, b);
    CHECK(ma == mb);
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(ma.at("config_hash") == dataset_hash(spec));
    CHECK(test_scene_count(3, 0.2) == 1);
    const auto train = load_split(a / "manifest.json", "train", 32);
    const auto test = load_split(a / "manifest.json", "test", 64, 2);
    CHECK_FALSE(train.empty());
    CHECK(test.size() <= 2);
    CHECK(train[0].he.width == 32);
    CHECK(train[0].gt_mask.width == 32);
    CHECK(train[0].meta.config_hash == dataset_hash(spec));
    for (const auto& p : train) CHECK(p.meta.scene < 2);
    CHECK_THROWS(load_split(a / "manifest.json", "train", 48));
    // The seed is recorded beside the hash, not inside it.
    DatasetSpec reseeded = spec;
    reseeded.seed = 13;
    CHECK(dataset_hash(reseeded) == dataset_hash(spec));
    DatasetSpec other = spec;
    other.scene.discriminability = 0.5;
    CHECK(dataset_hash(other) != dataset_hash(spec));
    fs::remove_all(a);
    fs::remove_all(b);
}
