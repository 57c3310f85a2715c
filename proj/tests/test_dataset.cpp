// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "echoloc/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>

using namespace echoloc;
namespace fs = std::filesystem;

namespace {

Scene make_room(const Vec3& min, const Vec3& max) {
    FloorPlan plan;
    plan.rooms.push_back({"room", min, max});
    Receiver receiver;
    receiver.position = 0.5 * (min + max);
    return build_house(plan, Material{0.3, 0.3}, receiver);
}

PropagationConfig cheap_config() {
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 200;
    cfg.max_bounces = 4;
    cfg.rir_duration = 0.15;
    cfg.seed = 7;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("fnv64 known vectors") {
    // Standard 64-bit FNV-1a test vectors.
    CHECK(fnv64_hex("") == "cbf29ce484222325");
    CHECK(fnv64_hex("a") == "af63dc4c8601ec8c");
    CHECK(fnv64_hex("foobar") == "85944171f73967e8");

    SUBCASE("file checksum hashes the raw bytes") {
        TempDir dir("echoloc_fnv");
        const fs::path f = dir.path / "blob.bin";
        std::ofstream(f, std::ios::binary) << "foobar";
        CHECK(file_checksum(f.string()) == "85944171f73967e8");
        CHECK_THROWS_AS(file_checksum((dir.path / "absent").string()), UserError);
    }
}

TEST_CASE("coordinate grid") {
    Scene room = make_room(Vec3(0, 0, 0), Vec3(1, 2.5, 1));

    SUBCASE("unit floor at spacing 0.52 gives a centered 2x2 lattice") {
        auto grid = coordinate_grid(room, 0.52, 1.0);
        REQUIRE(grid.size() == 4);
        std::set<double> xs, zs;
        for (const auto& p : grid) {
            CHECK(p.region == "room");
            CHECK(p.split == Split::Train);
            CHECK(p.position.y() == 1.0);
            xs.insert(p.position.x());
            zs.insert(p.position.z());
        }
        CHECK(*xs.begin() == doctest::Approx(0.24).epsilon(1e-12));
        CHECK(*xs.rbegin() == doctest::Approx(0.76).epsilon(1e-12));
        CHECK(*zs.begin() == doctest::Approx(0.24).epsilon(1e-12));
        CHECK(*zs.rbegin() == doctest::Approx(0.76).epsilon(1e-12));
    }
    SUBCASE("spacing validation") {
        CHECK_THROWS_AS(coordinate_grid(room, 0.0, 1.0), UserError);
        CHECK_THROWS_AS(coordinate_grid(room, -1.0, 1.0), UserError);
        CHECK_THROWS_AS(coordinate_grid(room, 5.0, 1.0), UserError);
    }
    SUBCASE("house fixture points all carry their generating region label") {
        Scene house = build_house10();
        auto grid = coordinate_grid(house, 1.0, 1.2);
        CHECK(grid.size() > 50);
        for (const auto& p : grid) {
            auto label = region_of(house, p.position);
            REQUIRE(label.has_value());
            CHECK(*label == p.region);
        }
    }
}

TEST_CASE("region grid") {
    Scene room = make_room(Vec3(0, 0, 0), Vec3(2, 2.5, 4));

    SUBCASE("2x2 lattice sits at the shrunk corners") {
        auto grid = region_grid(room, 2, 2, 1.1, 0.5);
        REQUIRE(grid.size() == 4);
        std::set<std::pair<double, double>> got;
        for (const auto& p : grid) {
            CHECK(p.region == "room");
            CHECK(p.position.y() == 1.1);
            got.insert({p.position.x(), p.position.z()});
        }
        // Center (1, 2), half extents (1, 2) * 0.5 -> x in {0.5, 1.5}, z in {1, 3}.
        std::set<std::pair<double, double>> want = {
            {0.5, 1.0}, {0.5, 3.0}, {1.5, 1.0}, {1.5, 3.0}};
        CHECK(got == want);
    }
    SUBCASE("1x1 lands at the region center") {
        auto grid = region_grid(room, 1, 1, 1.0);
        REQUIRE(grid.size() == 1);
        CHECK(grid[0].position.x() == doctest::Approx(1.0));
        CHECK(grid[0].position.z() == doctest::Approx(2.0));
    }
    SUBCASE("house fixture yields rows*cols per region") {
        Scene house = build_house10();
        auto grid = region_grid(house, 8, 8, 1.2);
        CHECK(grid.size() == 64 * house.regions.size());
        std::map<std::string, int> per_region;
        for (const auto& p : grid) {
            per_region[p.region]++;
            auto label = region_of(house, p.position);
            REQUIRE(label.has_value());
            CHECK(*label == p.region);
        }
        for (const auto& [name, count] : per_region) CHECK(count == 64);
    }
    SUBCASE("validation") {
        CHECK_THROWS_AS(region_grid(room, 0, 2, 1.0), UserError);
        CHECK_THROWS_AS(region_grid(room, 2, 2, 1.0, 0.0), UserError);
        CHECK_THROWS_AS(region_grid(room, 2, 2, 1.0, 1.5), UserError);
    }
}

TEST_CASE("offset test grid") {
    Scene house = build_house10();
    auto base = region_grid(house, 2, 2, 1.2);

    SUBCASE("covers every region, keeps separation, is deterministic") {
        auto test_a = offset_test_grid(house, base, 25, 42);
        auto test_b = offset_test_grid(house, base, 25, 42);
        auto test_c = offset_test_grid(house, base, 25, 43);
        REQUIRE(test_a.size() == 25);
        REQUIRE(test_b.size() == 25);

        std::set<std::string> covered;
        for (const auto& p : test_a) {
            CHECK(p.split == Split::Test);
            covered.insert(p.region);
            auto label = region_of(house, p.position);
            REQUIRE(label.has_value());
            CHECK(*label == p.region);
            for (const auto& t : base)
                CHECK((t.position - p.position).norm() >= 1e-3);
        }
        CHECK(covered.size() == house.regions.size());
        for (size_t i = 0; i < test_a.size(); ++i) {
            CHECK(test_a[i].position == test_b[i].position);
            for (size_t j = i + 1; j < test_a.size(); ++j)
                CHECK((test_a[i].position - test_a[j].position).norm() >= 1e-3);
        }
        bool differs = false;
        for (size_t i = 0; i < test_a.size(); ++i)
            differs = differs || test_a[i].position != test_c[i].position;
        CHECK(differs);
    }
    SUBCASE("count below the region count is rejected") {
        CHECK_THROWS_AS(offset_test_grid(house, base, 3, 0), UserError);
    }
    SUBCASE("degenerate base is rejected") {
        std::vector<SourcePlacement> one = {base[0]};
        CHECK_THROWS_AS(offset_test_grid(house, one, 25, 0), UserError);
    }
}

TEST_CASE("render_dataset produces checked spectrograms and resumes") {
    TempDir dir("echoloc_render");
    Scene room = make_room(Vec3(0, 0, 0), Vec3(2, 2.5, 3));
    auto placements = region_grid(room, 2, 2, 1.0, 0.6);
    placements.push_back({Vec3(1.0, 1.3, 1.5), "room", Split::Test});
    AudioClip dry = synthetic_dry_clip(16000.0, 0.3);
    PropagationConfig cfg = cheap_config();
    StftConfig stft_cfg;

    DatasetManifest m =
        render_dataset(room, placements, dry, cfg, stft_cfg, dir.path.string());
    REQUIRE(m.entries.size() == 5);
    CHECK(m.scene_checksum == fnv64_hex(serialize_scene(room)));
    CHECK(m.train_indices() == std::vector<int>{0, 1, 2, 3});
    CHECK(m.test_indices() == std::vector<int>{4});

    std::vector<std::string> blobs;
    for (const auto& e : m.entries) {
        const fs::path bin = dir.path / e.spectrogram_path;
        REQUIRE(fs::exists(bin));
        CHECK(file_checksum(bin.string()) == e.checksum);
        CHECK(e.convolve_gain > 0.0);
        Spectrogram s = read_spectrogram(bin.string());
        CHECK(s.bins() == 257);
        CHECK(s.frames() > 0);
        blobs.push_back(slurp(bin));
    }

    SUBCASE("deleting one file regenerates only it, bit-identically") {
        const fs::path victim = dir.path / m.entries[2].spectrogram_path;
        fs::remove(victim);
        // Tag the survivors so we can prove they were not rewritten.
        for (int i : {0, 1, 3, 4}) {
            std::ofstream tag(dir.path / (m.entries[i].spectrogram_path + ".tag"));
            tag << "x";
        }
        DatasetManifest again =
            render_dataset(room, placements, dry, cfg, stft_cfg, dir.path.string());
        for (size_t i = 0; i < again.entries.size(); ++i) {
            CHECK(again.entries[i].checksum == m.entries[i].checksum);
            CHECK(again.entries[i].convolve_gain ==
                  doctest::Approx(m.entries[i].convolve_gain).epsilon(1e-15));
            CHECK(slurp(dir.path / again.entries[i].spectrogram_path) == blobs[i]);
        }
    }
    SUBCASE("stale sidecar config forces a re-render") {
        const fs::path sidecar =
            dir.path / (m.entries[0].spectrogram_path + ".json");
        REQUIRE(fs::exists(sidecar));
        StftConfig other;
        other.hop = 128;
        DatasetManifest again =
            render_dataset(room, placements, dry, cfg, other, dir.path.string());
        CHECK(again.entries[0].checksum != m.entries[0].checksum);
    }
    SUBCASE("out-of-bounds placement is rejected up front") {
        auto bad = placements;
        bad.push_back({Vec3(50, 1, 50), "room", Split::Train});
        CHECK_THROWS_AS(
            render_dataset(room, bad, dry, cfg, stft_cfg, dir.path.string()),
            UserError);
    }
}

TEST_CASE("fold assignment is a stratified partition") {
    DatasetManifest m;
    m.propagation = cheap_config();
    for (int i = 0; i < 10; ++i)
        m.entries.push_back({{Vec3(i, 1, 0), "a", Split::Train}, "", "", 1.0, -1});
    for (int i = 0; i < 12; ++i)
        m.entries.push_back({{Vec3(i, 1, 1), "b", Split::Train}, "", "", 1.0, -1});
    for (int i = 0; i < 3; ++i)
        m.entries.push_back({{Vec3(i, 1, 2), "a", Split::Test}, "", "", 1.0, -1});

    DatasetManifest folded = assign_folds(m, 5, 99);
    CHECK(folded.folds == 5);
    std::map<std::pair<std::string, int>, int> per_class_fold;
    std::map<int, int> per_fold;
    for (const auto& e : folded.entries) {
        if (e.placement.split == Split::Test) {
            CHECK(e.fold == -1);
            continue;
        }
        REQUIRE(e.fold >= 0);
        REQUIRE(e.fold < 5);
        per_class_fold[{e.placement.region, e.fold}]++;
        per_fold[e.fold]++;
    }
    // 10 samples of "a" over 5 folds: exactly 2 each. 12 of "b": 2 or 3.
    for (int f = 0; f < 5; ++f) {
        CHECK(per_class_fold[{"a", f}] == 2);
        CHECK(per_class_fold[{"b", f}] >= 2);
        CHECK(per_class_fold[{"b", f}] <= 3);
        CHECK(per_fold[f] >= 4);
        CHECK(per_fold[f] <= 5);
    }

    SUBCASE("deterministic in the seed") {
        DatasetManifest again = assign_folds(m, 5, 99);
        for (size_t i = 0; i < folded.entries.size(); ++i)
            CHECK(again.entries[i].fold == folded.entries[i].fold);
    }
    SUBCASE("validation") {
        CHECK_THROWS_AS(assign_folds(m, 1, 0), UserError);
        CHECK_THROWS_AS(assign_folds(m, 11, 0), UserError);  // class "a" too small
        DatasetManifest empty;
        CHECK_THROWS_AS(assign_folds(empty, 2, 0), UserError);
    }
}

TEST_CASE("manifest round trip") {
    TempDir dir("echoloc_manifest");
    DatasetManifest m;
    m.scene_checksum = "deadbeef";
    m.dry_checksum = "cafe";
    m.propagation = cheap_config();
    m.stft.window_length = 256;
    m.stft.hop = 128;
    m.folds = 3;
    m.entries.push_back(
        {{Vec3(0.25, 1.0, 0.75), "kitchen", Split::Train}, "spec/0.bin", "ab12", 0.7, 2});
    m.entries.push_back(
        {{Vec3(1.5, 1.0, 2.0), "hall", Split::Test}, "spec/1.bin", "cd34", 1.0, -1});

    const std::string path = (dir.path / "manifest.json").string();
    save_manifest(m, path);
    DatasetManifest back = load_manifest(path);
    CHECK(back.scene_checksum == m.scene_checksum);
    CHECK(back.dry_checksum == m.dry_checksum);
    CHECK(back.propagation.seed == m.propagation.seed);
    CHECK(back.propagation.rays_per_endpoint == m.propagation.rays_per_endpoint);
    CHECK(back.propagation.rir_duration == m.propagation.rir_duration);
    CHECK(back.stft.window_length == 256);
    CHECK(back.stft.hop == 128);
    CHECK(back.folds == 3);
    REQUIRE(back.entries.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(back.entries[i].placement.position == m.entries[i].placement.position);
        CHECK(back.entries[i].placement.region == m.entries[i].placement.region);
        CHECK((back.entries[i].placement.split == m.entries[i].placement.split));
        CHECK(back.entries[i].spectrogram_path == m.entries[i].spectrogram_path);
        CHECK(back.entries[i].checksum == m.entries[i].checksum);
        CHECK(back.entries[i].convolve_gain == m.entries[i].convolve_gain);
        CHECK(back.entries[i].fold == m.entries[i].fold);
    }

    SUBCASE("bad input") {
        CHECK_THROWS_AS(load_manifest((dir.path / "nope.json").string()), ParseError);
        std::ofstream((dir.path / "junk.json")) << "{\"format\": \"other/1\"}";
        CHECK_THROWS_AS(load_manifest((dir.path / "junk.json").string()), ParseError);
    }
}

TEST_CASE("synthetic dry clip") {
    AudioClip a = synthetic_dry_clip(16000.0, 1.5, 1);
    AudioClip b = synthetic_dry_clip(16000.0, 1.5, 1);
    AudioClip c = synthetic_dry_clip(16000.0, 1.5, 2);
    CHECK(a.samples.size() == 24000);
    CHECK(a.sample_rate == 16000.0);
    CHECK((a.samples == b.samples).all());
    CHECK(!(a.samples == c.samples).all());
    CHECK(a.samples.abs().maxCoeff() == doctest::Approx(0.5).epsilon(1e-12));
    // Loud enough to survive the loudness gate used by the pipeline.
    CHECK(measure_lufs(a).has_value());
}
