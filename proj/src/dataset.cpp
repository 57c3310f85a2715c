// SPDX-License-Identifier: Apache-2.0
#include "echoloc/dataset.hpp"

#include "echoloc/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace echoloc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fnv64_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot open file for checksum: " + path);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return fnv64_hex(data);
}

std::vector<int> DatasetManifest::train_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].placement.split == Split::Train)
            out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> DatasetManifest::test_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].placement.split == Split::Test)
            out.push_back(static_cast<int>(i));
    return out;
}

// ---- source grids ------------------------------------------------------------

std::vector<SourcePlacement> coordinate_grid(const Scene& scene, double spacing,
                                             double height) {
    if (!(spacing > 0.0)) throw UserError("grid spacing must be positive");
    const double extent_x = scene.bounds_max().x() - scene.bounds_min().x();
    const double extent_z = scene.bounds_max().z() - scene.bounds_min().z();
    if (spacing > extent_x || spacing > extent_z)
        throw UserError("grid spacing exceeds the scene extent");

    const int nx = static_cast<int>(std::floor(extent_x / spacing)) + 1;
    const int nz = static_cast<int>(std::floor(extent_z / spacing)) + 1;
    const double x0 =
        scene.bounds_min().x() + 0.5 * (extent_x - (nx - 1) * spacing);
    const double z0 =
        scene.bounds_min().z() + 0.5 * (extent_z - (nz - 1) * spacing);

    std::vector<SourcePlacement> out;
    for (int ix = 0; ix < nx; ++ix) {
        for (int iz = 0; iz < nz; ++iz) {
            const Vec3 p(x0 + ix * spacing, height, z0 + iz * spacing);
            auto label = region_of(scene, p);
            if (!label) continue;  // inside a wall or outside all rooms
            out.push_back({p, *label, Split::Train});
        }
    }
    return out;
}

std::vector<SourcePlacement> region_grid(const Scene& scene, int rows, int cols,
                                         double height, double shrink) {
    if (rows < 1 || cols < 1) throw UserError("region grid must be at least 1x1");
    if (!(shrink > 0.0 && shrink <= 1.0))
        throw UserError("shrink factor must be in (0, 1]");

    std::vector<SourcePlacement> out;
    for (const Region& region : scene.regions) {
        const Vec3 c = region.center();
        const Vec3 lo = c + shrink * (region.min - c);
        const Vec3 hi = c + shrink * (region.max - c);
        if (hi.x() - lo.x() < 1e-6 || hi.z() - lo.z() < 1e-6)
            throw UserError("region '" + region.name +
                            "' is too small after shrinking");
        for (int r = 0; r < rows; ++r) {
            for (int col = 0; col < cols; ++col) {
                const double fz = rows == 1 ? 0.5 : static_cast<double>(r) / (rows - 1);
                const double fx = cols == 1 ? 0.5 : static_cast<double>(col) / (cols - 1);
                const Vec3 p(lo.x() + fx * (hi.x() - lo.x()), height,
                             lo.z() + fz * (hi.z() - lo.z()));
                out.push_back({p, region.name, Split::Train});
            }
        }
    }
    return out;
}

namespace {

double horizontal_distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x() - b.x();
    const double dz = a.z() - b.z();
    return std::sqrt(dx * dx + dz * dz);
}

}  // namespace

std::vector<SourcePlacement> offset_test_grid(
    const Scene& scene, const std::vector<SourcePlacement>& base, int count,
    std::uint64_t seed) {
    if (base.size() < 2) throw UserError("base grid too small for a test set");
    if (count < static_cast<int>(scene.regions.size()))
        throw UserError("cannot cover all regions with the requested count");

    double spacing = std::numeric_limits<double>::infinity();
    for (size_t i = 1; i < base.size(); ++i)
        spacing = std::min(spacing,
                           horizontal_distance(base[0].position, base[i].position));

    RandomStream rng(seed);
    std::vector<SourcePlacement> chosen;
    constexpr double kMinSeparation = 1e-3;

    auto try_place = [&](const std::string* want_region) -> bool {
        for (int attempt = 0; attempt < 20000; ++attempt) {
            const auto idx = rng.next_below(base.size());
            Vec3 p = base[idx].position;
            p.x() += rng.uniform(-0.5 * spacing, 0.5 * spacing);
            p.z() += rng.uniform(-0.5 * spacing, 0.5 * spacing);
            const auto label = region_of(scene, p);
            if (!label) continue;
            if (want_region && *label != *want_region) continue;
            bool clash = false;
            for (const SourcePlacement& t : base)
                clash = clash || (t.position - p).norm() < kMinSeparation;
            for (const SourcePlacement& t : chosen)
                clash = clash || (t.position - p).norm() < kMinSeparation;
            if (clash) continue;
            chosen.push_back({p, *label, Split::Test});
            return true;
        }
        return false;
    };

    for (const Region& region : scene.regions) {
        if (!try_place(&region.name))
            throw UserError("cannot cover region '" + region.name +
                            "' with offset test points");
    }
    while (static_cast<int>(chosen.size()) < count) {
        if (!try_place(nullptr))
            throw UserError("cannot place the requested number of test points");
    }
    return chosen;
}

// ---- manifest serialization ---------------------------------------------------

namespace {

json config_to_json(const PropagationConfig& c) {
    return {{"sample_rate", c.sample_rate},
            {"speed_of_sound", c.speed_of_sound},
            {"rays_per_endpoint", c.rays_per_endpoint},
            {"max_bounces", c.max_bounces},
            {"rir_duration", c.rir_duration},
            {"seed", c.seed},
            {"russian_roulette_start", c.russian_roulette_start},
            {"max_specular_order", c.max_specular_order}};
}

PropagationConfig config_from_json(const json& j) {
    PropagationConfig c;
    c.sample_rate = j.at("sample_rate").get<double>();
    c.speed_of_sound = j.at("speed_of_sound").get<double>();
    c.rays_per_endpoint = j.at("rays_per_endpoint").get<int>();
    c.max_bounces = j.at("max_bounces").get<int>();
    c.rir_duration = j.at("rir_duration").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.russian_roulette_start = j.at("russian_roulette_start").get<int>();
    c.max_specular_order = j.at("max_specular_order").get<int>();
    return c;
}

json entry_to_json(const ManifestEntry& e) {
    return {{"position",
             {e.placement.position.x(), e.placement.position.y(),
              e.placement.position.z()}},
            {"region", e.placement.region},
            {"split", e.placement.split == Split::Train ? "train" : "test"},
            {"spectrogram", e.spectrogram_path},
            {"checksum", e.checksum},
            {"convolve_gain", e.convolve_gain},
            {"fold", e.fold}};
}

ManifestEntry entry_from_json(const json& j) {
    ManifestEntry e;
    const auto& p = j.at("position");
    e.placement.position = Vec3(p[0].get<double>(), p[1].get<double>(),
                                p[2].get<double>());
    e.placement.region = j.at("region").get<std::string>();
    e.placement.split =
        j.at("split").get<std::string>() == "train" ? Split::Train : Split::Test;
    e.spectrogram_path = j.at("spectrogram").get<std::string>();
    e.checksum = j.at("checksum").get<std::string>();
    e.convolve_gain = j.at("convolve_gain").get<double>();
    e.fold = j.at("fold").get<int>();
    return e;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
    json j;
    j["format"] = "echoloc-manifest/1";
    j["scene_checksum"] = manifest.scene_checksum;
    j["dry_checksum"] = manifest.dry_checksum;
    j["propagation"] = config_to_json(manifest.propagation);
    j["stft"] = {{"window", manifest.stft.window_length}, {"hop", manifest.stft.hop}};
    j["folds"] = manifest.folds;
    json entries = json::array();
    for (const ManifestEntry& e : manifest.entries) entries.push_back(entry_to_json(e));
    j["entries"] = std::move(entries);
    std::ofstream out(path);
    if (!out) throw UserError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest: " + path);
    json j;
    try {
        in >> j;
        if (j.value("format", "") != "echoloc-manifest/1")
            throw ParseError("unsupported manifest format tag");
        DatasetManifest m;
        m.scene_checksum = j.at("scene_checksum").get<std::string>();
        m.dry_checksum = j.at("dry_checksum").get<std::string>();
        m.propagation = config_from_json(j.at("propagation"));
        m.stft.window_length = j.at("stft").at("window").get<int>();
        m.stft.hop = j.at("stft").at("hop").get<int>();
        m.folds = j.at("folds").get<int>();
        for (const auto& e : j.at("entries")) m.entries.push_back(entry_from_json(e));
        return m;
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest parse failed: ") + e.what());
    }
}

// ---- rendering ------------------------------------------------------------------

DatasetManifest render_dataset(const Scene& scene,
                               const std::vector<SourcePlacement>& placements,
                               const AudioClip& dry,
                               const PropagationConfig& propagation,
                               const StftConfig& stft_config,
                               const std::string& out_dir, int threads) {
    for (size_t i = 0; i < placements.size(); ++i) {
        if (!scene.inside_bounds(placements[i].position))
            throw UserError("placement " + std::to_string(i) +
                            ": position outside scene bounds");
    }
    fs::create_directories(fs::path(out_dir) / "spec");

    DatasetManifest manifest;
    manifest.scene_checksum = fnv64_hex(serialize_scene(scene));
    manifest.dry_checksum = fnv64_hex(
        std::string(reinterpret_cast<const char*>(dry.samples.data()),
                    static_cast<size_t>(dry.samples.size()) * sizeof(double)));
    manifest.propagation = propagation;
    manifest.stft = stft_config;
    manifest.entries.resize(placements.size());

    std::mutex error_mutex;
    std::string first_error;

    auto render_one = [&](int i) {
        const SourcePlacement& placement = placements[static_cast<size_t>(i)];
        const std::string rel = "spec/" + std::to_string(i) + ".bin";
        const fs::path bin_path = fs::path(out_dir) / rel;
        const fs::path sidecar_path = bin_path.string() + ".json";

        ManifestEntry entry;
        entry.placement = placement;
        entry.spectrogram_path = rel;

        // Resumable: trust an existing file only if its sidecar checksum and
        // config echo still match.
        if (fs::exists(bin_path) && fs::exists(sidecar_path)) {
            try {
                std::ifstream sin(sidecar_path);
                json side;
                sin >> side;
                if (side.value("checksum", "") == file_checksum(bin_path.string()) &&
                    side.value("seed", std::uint64_t(0)) ==
                        derive_seed(propagation.seed, static_cast<std::uint64_t>(i)) &&
                    side.value("window", 0) == stft_config.window_length &&
                    side.value("hop", 0) == stft_config.hop) {
                    entry.checksum = side.at("checksum").get<std::string>();
                    entry.convolve_gain = side.at("convolve_gain").get<double>();
                    manifest.entries[static_cast<size_t>(i)] = entry;
                    return;
                }
            } catch (...) {
                // fall through and re-render
            }
        }

        PropagationConfig cfg = propagation;
        cfg.seed = derive_seed(propagation.seed, static_cast<std::uint64_t>(i));
        cfg.threads = 1;  // parallelism lives at the placement level
        const ImpulseResponse ir = simulate_rir(scene, placement.position, cfg);
        double gain = 1.0;
        const AudioClip wet = convolve(dry, ir, &gain);
        const Spectrogram spec =
            stft(wet, stft_config.window_length, stft_config.hop);
        write_spectrogram(bin_path.string(), spec);

        entry.checksum = file_checksum(bin_path.string());
        entry.convolve_gain = gain;
        json side = {{"format", "echoloc-spec-sidecar/1"},
                     {"window", stft_config.window_length},
                     {"hop", stft_config.hop},
                     {"sample_rate", propagation.sample_rate},
                     {"seed", cfg.seed},
                     {"position",
                      {placement.position.x(), placement.position.y(),
                       placement.position.z()}},
                     {"label", placement.region},
                     {"convolve_gain", gain},
                     {"checksum", entry.checksum}};
        std::ofstream sout(sidecar_path);
        sout << side.dump(2) << "\n";
        manifest.entries[static_cast<size_t>(i)] = entry;
    };

    const int n = static_cast<int>(placements.size());
    const int n_threads = std::min(resolve_thread_count(threads), std::max(1, n));
    auto worker = [&](int t) {
        for (int i = t; i < n; i += n_threads) {
            try {
                render_one(i);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (first_error.empty())
                    first_error = "placement " + std::to_string(i) + ": " + e.what();
            }
        }
    };
    if (n_threads <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
        for (auto& th : pool) th.join();
    }
    if (!first_error.empty()) throw UserError(first_error);
    return manifest;
}

DatasetManifest assign_folds(DatasetManifest manifest, int k, std::uint64_t seed) {
    if (k < 2) throw UserError("fold count must be at least 2");
    std::map<std::string, std::vector<int>> by_class;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        if (manifest.entries[i].placement.split == Split::Train)
            by_class[manifest.entries[i].placement.region].push_back(
                static_cast<int>(i));
    }
    if (by_class.empty()) throw UserError("manifest has no train entries");

    int class_index = 0;
    for (auto& [label, indices] : by_class) {
        if (static_cast<int>(indices.size()) < k)
            throw UserError("class '" + label + "' has fewer samples than folds");
        RandomStream rng(seed, static_cast<std::uint64_t>(class_index));
        for (size_t i = indices.size(); i > 1; --i)
            std::swap(indices[i - 1], indices[rng.next_below(i)]);
        // Rotate the starting fold per class so global fold sizes stay within 1.
        for (size_t i = 0; i < indices.size(); ++i) {
            manifest.entries[static_cast<size_t>(indices[i])].fold =
                static_cast<int>((i + static_cast<size_t>(class_index)) % k);
        }
        ++class_index;
    }
    manifest.folds = k;
    return manifest;
}

// ---- synthetic dry sound ---------------------------------------------------------

AudioClip synthetic_dry_clip(double sample_rate, double duration_s,
                             std::uint64_t seed) {
    const auto n = static_cast<Eigen::Index>(std::llround(sample_rate * duration_s));
    AudioClip clip;
    clip.sample_rate = sample_rate;
    clip.samples = Eigen::ArrayXd::Zero(n);
    RandomStream rng(seed);
    // Ring cadence: 0.35 s two-tone + noise bursts with 0.15 s gaps. The
    // sustained envelope keeps the crest factor low enough that the clip can
    // be loudness-normalized to -15 LUFS without clipping.
    for (Eigen::Index i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / sample_rate;
        const double noise = 2.0 * rng.next_double() - 1.0;
        const double in_cycle = std::fmod(t, 0.5);
        if (in_cycle >= 0.35) continue;
        const double envelope =
            std::min(1.0, in_cycle / 0.005) * std::exp(-in_cycle / 0.5);
        const double tones =
            std::sin(2.0 * std::numbers::pi * 440.0 * t) +
            std::sin(2.0 * std::numbers::pi * 480.0 * t);
        clip.samples[i] = envelope * (0.5 * noise + 0.25 * tones);
    }
    clip.samples *= 0.5 / clip.samples.abs().maxCoeff();
    return clip;
}

}  // namespace echoloc
