#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "vstain/config.hpp"

using namespace vstain;

TEST_CASE("defaults are the desk profile") {
    const RunConfig c;
    CHECK(c.unet.image_size == 32);
    CHECK(c.unet.base_channels == 8);
    CHECK(c.unet.channel_multipliers == std::vector<int>{1, 2, 2});
    CHECK(c.schedule.steps == 200);
    CHECK(c.train.steps == 2000);
    CHECK(c.unet.norm_groups == 1);
    CHECK(c.schedule.beta_end == 0.05);
    CHECK(c.adam.lr == 0.002);
    CHECK(c.adam.schedule == multitask::LrSchedule::cosine);
    CHECK(c.adam_for(2000).decay_steps == 2000);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("shipped profiles") {
    const std::filesystem::path dir = VSTAIN_CONFIG_DIR;
    const RunConfig desk = RunConfig::from_file(dir / "desk.ini");
    CHECK(desk.canonical_ini() == RunConfig().canonical_ini());
    const RunConfig paper = RunConfig::from_file(dir / "paper.ini");
    CHECK_NOTHROW(paper.validate());
    CHECK(paper.unet.image_size == 64);
    CHECK(paper.schedule.steps == 1000);
    CHECK(paper.adam.schedule == multitask::LrSchedule::constant);
}

TEST_CASE("canonical ini parses back to the same config") {
    RunConfig c;
    c.set("model.base_channels", "16");
    c.set("schedule.kind", "cosine");
    c.set("optim.lr", "0.00025");
    c.set("data.stain_dab", "0.27,0.57,0.78");
    c.set("run.manifest", "/data/manifest.json");
    const RunConfig back = RunConfig::from_ini(c.canonical_ini());
    CHECK(back.canonical_ini() == c.canonical_ini());
    CHECK(back.hash() == c.hash());
    CHECK(back.unet.base_channels == 16);
    CHECK(back.adam.lr == 0.00025);
}

TEST_CASE("every key appears in the canonical form") {
    const RunConfig c;
    const auto canon = c.canonical();
    const auto list = RunConfig::keys();
    const std::set<std::string> keys(list.begin(), list.end());
    CHECK(keys.size() == canon.size());
    for (const auto& [k, v] : canon) CHECK(keys.count(k) == 1);
}

TEST_CASE("unknown keys and bad values are rejected") {
    RunConfig c;
    CHECK_THROWS_AS(c.set("model.depth", "3"), std::invalid_argument);
    CHECK_THROWS_AS(c.set("train.steps", "many"), std::invalid_argument);
    CHECK_THROWS_AS(c.set("optim.lr_schedule", "step"), std::invalid_argument);
    CHECK_THROWS_AS(RunConfig::from_ini("[model]\nwidth = 3\n"), std::invalid_argument);
    c.set("model.image_size", "48");  // 128 is not a multiple
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("hash changes with any value") {
    const RunConfig base;
    for (const auto& [key, value] : std::vector<std::pair<std::string, std::string>>{
             {"run.seed", "1"}, {"schedule.steps", "201"}, {"train.gen_weight", "0.5"}, {"model.fusion", "add"}, {"optim.lr_schedule", "constant"}}) {
        RunConfig c;
        c.set(key, value);
        CHECK_MESSAGE(c.hash() != base.hash(), key);
    }
    CHECK(RunConfig().hash() == base.hash());
}
