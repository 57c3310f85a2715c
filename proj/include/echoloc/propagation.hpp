// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "echoloc/rng.hpp"
#include "echoloc/scene.hpp"
#include "echoloc/types.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace echoloc {

struct PropagationConfig {
    double sample_rate = 16000.0;
    double speed_of_sound = 343.0;
    int rays_per_endpoint = 100000;
    int max_bounces = 50;
    double rir_duration = 1.0;
    std::uint64_t seed = 0;
    int russian_roulette_start = 8;
    /// Specular wall sequences up to this length are resolved as exact
    /// deterministic arrivals; longer ones fall to the stochastic estimator.
    int max_specular_order = 8;
    /// Connections below this amplitude are Russian-rouletted (unbiased)
    /// before their visibility ray is cast. 0 disables the roulette.
    double connection_roulette_threshold = 1e-3;
    int threads = 0;  // 0: ECHOLOC_THREADS or hardware concurrency

    int rir_length() const {
        return static_cast<int>(std::llround(rir_duration * sample_rate));
    }
    void validate() const;
};

struct PathVertex {
    Vec3 position = Vec3::Zero();
    double weight = 1.0;       // estimator weight, includes roulette reweighting
    double attenuation = 1.0;  // raw product of (1 - absorption), non-increasing
    double path_length = 0.0;  // cumulative meters from the subpath origin
    int material_id = -1;      // -1 at the origin vertex
    bool specular_prefix = true;  // every bounce so far was specular
    // Plane of the hit surface (canonical orientation), for specular folding.
    Vec3 plane_normal = Vec3::Zero();
    double plane_offset = 0.0;
};

struct Subpath {
    std::vector<PathVertex> vertices;  // vertices[0] is the origin
};

struct ImpulseResponse {
    Eigen::ArrayXd samples;
    double sample_rate = 16000.0;
};

struct Contribution {
    double delay = 0.0;      // seconds
    double amplitude = 0.0;  // pressure, source normalized to 1/(4 pi) at 1 m
    bool deterministic = false;  // exact specular arrival, not averaged over rays
};

Subpath trace_subpath(const Scene& scene, const Vec3& origin,
                      const PropagationConfig& config, RandomStream& rng);

/// rays_per_endpoint subpaths; ray i draws from stream (seed, stream_salt + i).
std::vector<Subpath> trace_subpaths(const Scene& scene, const Vec3& origin,
                                    const PropagationConfig& config,
                                    std::uint64_t stream_salt = 0);

/// Connection stage: pairs subpaths by index, emits visibility-tested diffuse
/// contributions for every vertex pair, and exact deduplicated arrivals for
/// purely specular wall sequences (including the direct path).
std::vector<Contribution> connect(const Scene& scene,
                                  const std::vector<Subpath>& source_subpaths,
                                  const std::vector<Subpath>& receiver_subpaths,
                                  const PropagationConfig& config);

ImpulseResponse simulate_rir(const Scene& scene, const Vec3& source,
                             const PropagationConfig& config);

/// Analytic image-source RIR for an empty axis-aligned shoebox with uniform
/// absorption. Used as an oracle for simulate_rir; max_order <= 4.
ImpulseResponse image_source_rir(const Vec3& box_dims, const Vec3& source,
                                 const Vec3& receiver, double absorption,
                                 int max_order, const PropagationConfig& config);

/// Backward-integrated energy decay, normalized to 0 dB at t = 0.
/// Entries with zero remaining energy are -inf.
Eigen::ArrayXd schroeder_curve(const ImpulseResponse& ir);

int resolve_thread_count(int requested);

}  // namespace echoloc
