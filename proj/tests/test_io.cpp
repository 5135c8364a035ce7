#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "skipfuse/bundle.hpp"
#include "skipfuse/checkpoint.hpp"
#include "skipfuse/config.hpp"
#include "skipfuse/dataset.hpp"
#include "skipfuse/error.hpp"
#include "skipfuse/experiment.hpp"
#include "skipfuse/sweep.hpp"

using namespace skipfuse;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("skipfuse_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

RunConfig tiny_config() {
    RunConfig c;
    c.merge_text(
        "synth.preset = easy\nsynth.scenes = 3\nsynth.test_scenes = 1\nsynth.cameras = 6\n"
        "net.levels = 2\nnet.widths = 8,8\nviews.train_count = 4\nviews.eval_count = 4\ntrain.steps = 4\n",
        "test");
    return c;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("config defaults, overrides and unknown keys") {
    RunConfig c;
    CHECK(c.get("net.injection") == "decoder_all");
    c.merge_text("# comment\nnet.levels = 3\n\nseed=9\n", "inline");
    CHECK(c.get_int("net.levels") == 3);
    CHECK(c.get_int("seed") == 9);
    CHECK_THROWS_AS(c.merge_text("net.depth = 3\n", "inline"), ConfigError);
    CHECK_THROWS_AS(c.merge_text("no equals sign\n", "inline"), ConfigError);
    CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
    CHECK(c.get_int_list("net.widths") == std::vector<int>{16, 32, 48, 64});
    // every key is documented and the dump parses back to the same values
    for (const auto& e : RunConfig::schema()) CHECK(!e.help.empty());
    RunConfig d;
    d.merge_text(c.dump(), "dump");
    CHECK(d.values() == c.values());
}

TEST_CASE("bundle round trip and byte-length checks") {
    const auto cfg = tiny_config();
    const auto bundles = experiment::synthesize(cfg);
    REQUIRE(bundles.size() == 3);
    const auto dir = scratch("bundle");
    bundle::write_bundle(dir / "a", bundles[0]);
    const auto back = bundle::read_bundle(dir / "a");
    CHECK(back.cloud.positions == bundles[0].cloud.positions);
    CHECK(*back.cloud.labels == *bundles[0].cloud.labels);
    CHECK(back.class_names == bundles[0].class_names);
    REQUIRE(back.views.size() == bundles[0].views.size());
    for (std::size_t k = 0; k < back.views.size(); ++k) {
        CHECK(back.views[k].extrinsics == bundles[0].views[k].extrinsics);
        CHECK(back.views[k].depth->values == bundles[0].views[k].depth->values);
        CHECK(back.features->maps[k].data == bundles[0].features->maps[k].data);
    }
    // writing the reloaded bundle reproduces every file byte for byte
    bundle::write_bundle(dir / "b", back);
    for (const auto& e : fs::directory_iterator(dir / "a"))
        CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));

    // truncated arrays are rejected with the file named
    fs::resize_file(dir / "a" / "points.bin", fs::file_size(dir / "a" / "points.bin") - 4);
    CHECK_THROWS_WITH_AS(bundle::read_bundle(dir / "a"), doctest::Contains("points.bin"), DataError);

    // a missing feature file leaves features unset and is named on demand
    fs::remove(dir / "b" / "feat_2.bin");
    const auto partial = bundle::read_bundle(dir / "b");
    CHECK_FALSE(partial.features);
    CHECK_THROWS_WITH_AS(bundle::require_features(partial), doctest::Contains("feat_2.bin"), DataError);
    fs::remove_all(dir);
}

TEST_CASE("schema version is checked") {
    const auto bundles = experiment::synthesize(tiny_config());
    const auto dir = scratch("schema");
    bundle::write_bundle(dir, bundles[0]);
    auto meta = slurp(dir / "meta.json");
    const auto pos = meta.find("\"schema_version\": 1");
    REQUIRE(pos != std::string::npos);
    meta.replace(pos, 19, "\"schema_version\": 9");
    std::ofstream(dir / "meta.json", std::ios::binary) << meta;
    CHECK_THROWS_AS(bundle::read_bundle(dir), DataError);
    fs::remove_all(dir);
}

TEST_CASE("collections are deterministic and split as declared") {
    const auto cfg = tiny_config();
    const auto a = scratch("coll_a"), b = scratch("coll_b");
    const auto ha = dataset::write_collection(a, experiment::synthesize(cfg), cfg);
    const auto hb = dataset::write_collection(b, experiment::synthesize(cfg), cfg);
    CHECK(ha == hb);
    const std::vector<fs::path> dirs{a};
    CHECK(dataset::load(dirs, dataset::Which::Train).size() == 2);
    CHECK(dataset::load(dirs, dataset::Which::Test).size() == 1);
    CHECK(dataset::load(dirs, dataset::Which::Test)[0].name == "scene_002");

    auto empty_cfg = cfg;
    empty_cfg.set("synth.scenes", "0");
    empty_cfg.set("synth.test_scenes", "0");
    const auto e = scratch("coll_empty");
    dataset::write_collection(e, experiment::synthesize(empty_cfg), empty_cfg);
    const std::vector<fs::path> edirs{e};
    CHECK(dataset::load(edirs, dataset::Which::All).empty());
    for (const auto& p : {a, b, e}) fs::remove_all(p);
}

TEST_CASE("projection dump reloads bit-identically") {
    dataset::ProjectionDump d;
    d.positions = Matrix::Random(5, 3).cast<float>().cast<double>();
    d.features = Matrix::Random(5, 4).cast<float>().cast<double>();
    d.source_view = {0, -1, 2, 1, -1};
    d.selected_views = {1, 4, 7};
    d.coverage = 0.6;
    const auto dir = scratch("proj");
    dataset::write_projection(dir / "x", d, "policy");
    const auto r = dataset::read_projection(dir / "x");
    CHECK(r.positions == d.positions);
    CHECK(r.features == d.features);
    CHECK(r.source_view == d.source_view);
    CHECK(r.selected_views == d.selected_views);
    CHECK(r.coverage == d.coverage);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip") {
    const auto cfg = tiny_config();
    const auto bundles = experiment::synthesize(cfg);
    std::vector<experiment::PreparedScene> scenes;
    for (const auto& b : bundles) scenes.push_back(experiment::prepare(b, 0.1, 2));
    const auto settings = experiment::Settings::from(cfg);
    auto ck = experiment::init_checkpoint(settings, experiment::Mode::Inject, scenes, cfg.dump());
    experiment::train(ck, scenes, settings, experiment::Mode::Inject, 2, nullptr);
    const auto dir = scratch("ckpt");
    save_checkpoint(dir / "a.ckpt", ck);
    const auto back = load_checkpoint(dir / "a.ckpt");
    CHECK(back.trainer.step == 2);
    CHECK(back.trainer.mode == "inject");
    CHECK(back.optimizer.step == ck.optimizer.step);
    CHECK(back.net.init_rng().state() == ck.net.init_rng().state());
    for (std::size_t k = 0; k < ck.net.parameters().size(); ++k)
        CHECK(back.net.parameters()[k].value == ck.net.parameters()[k].value);
    save_checkpoint(dir / "b.ckpt", back);
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));

    auto bytes = slurp(dir / "a.ckpt");
    bytes[0] = 'X';
    std::ofstream(dir / "c.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), DataError);
    std::ofstream(dir / "d.ckpt", std::ios::binary) << slurp(dir / "a.ckpt").substr(0, 100);
    CHECK_THROWS_AS(load_checkpoint(dir / "d.ckpt"), DataError);
    fs::remove_all(dir);
}

TEST_CASE("grid parsing and expansion order") {
    const auto g = sweep::parse_grid("seed = 1 | 2\nnet.injection = none | pre_head | decoder_all\ntrain.steps = 5\n", "grid");
    CHECK(g.cell_count() == 6);
    const auto cells = sweep::expand(g);
    REQUIRE(cells.size() == 6);
    CHECK(cells[0].get("seed") == "1");
    CHECK(cells[0].get("net.injection") == "none");
    CHECK(cells[1].get("net.injection") == "pre_head");
    CHECK(cells[3].get("seed") == "2");
    for (const auto& c : cells) CHECK(c.get("train.steps") == "5");
    CHECK_THROWS_AS(sweep::parse_grid("bogus.key = 1 | 2\n", "grid"), ConfigError);
}

}
