// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "echoloc/audio.hpp"
#include "echoloc/propagation.hpp"
#include "echoloc/scene.hpp"
#include "echoloc/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace echoloc {

enum class Split { Train, Test };

struct SourcePlacement {
    Vec3 position = Vec3::Zero();
    std::string region;  // empty for coordinate-mode samples outside any region
    Split split = Split::Train;
};

struct ManifestEntry {
    SourcePlacement placement;
    std::string spectrogram_path;  // relative to the manifest directory
    std::string checksum;          // fnv64 hex of the spectrogram file
    double convolve_gain = 1.0;
    int fold = -1;  // train samples only
};

struct StftConfig {
    int window_length = 512;
    int hop = 160;
};

struct DatasetManifest {
    std::string scene_checksum;
    std::string dry_checksum;
    PropagationConfig propagation;
    StftConfig stft;
    int folds = 0;
    std::vector<ManifestEntry> entries;

    std::vector<int> train_indices() const;
    std::vector<int> test_indices() const;
};

std::string fnv64_hex(const std::string& bytes);
std::string file_checksum(const std::string& path);

/// Centered lattice over the floor extent at the given height; keeps points
/// that fall inside some region.
std::vector<SourcePlacement> coordinate_grid(const Scene& scene, double spacing,
                                             double height);

/// rows x cols points per region, uniformly spaced inside the shrunk bounds,
/// labeled by the generating region.
std::vector<SourcePlacement> region_grid(const Scene& scene, int rows, int cols,
                                         double height, double shrink = 0.9);

/// Test placements jittered by half the base-grid spacing, rejected within
/// 1e-3 m of any train position, covering every region at least once.
std::vector<SourcePlacement> offset_test_grid(const Scene& scene,
                                              const std::vector<SourcePlacement>& base,
                                              int count, std::uint64_t seed);

/// Renders simulate_rir -> convolve -> stft for every placement and writes
/// spectrogram files under <out_dir>/spec/. Resumable: entries whose files
/// already validate against their sidecar checksum are skipped.
DatasetManifest render_dataset(const Scene& scene,
                               const std::vector<SourcePlacement>& placements,
                               const AudioClip& dry,
                               const PropagationConfig& propagation,
                               const StftConfig& stft_config,
                               const std::string& out_dir, int threads = 0);

/// Stratified k-fold assignment over train entries.
DatasetManifest assign_folds(DatasetManifest manifest, int k, std::uint64_t seed);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

/// Deterministic synthetic dry sound (percussive chirp burst), stand-in for a
/// bundled anechoic recording.
AudioClip synthetic_dry_clip(double sample_rate = 16000.0,
                             double duration_s = 1.5, std::uint64_t seed = 1);

}  // namespace echoloc
