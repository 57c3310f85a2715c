// SPDX-License-Identifier: Apache-2.0
#include "echoloc/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <numbers>
#include <thread>

namespace echoloc {

namespace {

constexpr double kEnergyCutoff = 1e-6;
constexpr double kFourPi = 4.0 * std::numbers::pi;

Vec3 uniform_sphere(RandomStream& rng) {
    const double z = 1.0 - 2.0 * rng.next_double();
    const double phi = 2.0 * std::numbers::pi * rng.next_double();
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return Vec3(r * std::cos(phi), r * std::sin(phi), z);
}

Vec3 cosine_hemisphere(const Vec3& normal, RandomStream& rng) {
    const double u = rng.next_double();
    const double phi = 2.0 * std::numbers::pi * rng.next_double();
    const double r = std::sqrt(u);
    const double z = std::sqrt(std::max(0.0, 1.0 - u));
    Vec3 tangent = std::abs(normal.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    tangent = (tangent - tangent.dot(normal) * normal).normalized();
    const Vec3 bitangent = normal.cross(tangent);
    return (r * std::cos(phi) * tangent + r * std::sin(phi) * bitangent +
            z * normal)
        .normalized();
}

void canonical_plane(const Vec3& normal, const Vec3& point, Vec3* out_n,
                     double* out_d) {
    Vec3 n = normal;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(n[k]) > 1e-9) {
            if (n[k] < 0.0) n = -n;
            break;
        }
    }
    *out_n = n;
    *out_d = n.dot(point);
}

struct PlaneSpec {
    Vec3 n = Vec3::Zero();
    double d = 0.0;
    double absorption = 0.0;
    double scattering = 0.0;
};

struct SpecKey {
    std::uint64_t a = 0, b = 0;
    bool operator==(const SpecKey&) const = default;
    bool operator<(const SpecKey& o) const {
        return a != o.a ? a < o.a : b < o.b;
    }
};

std::uint64_t fnv64(std::uint64_t h, std::uint64_t v) {
    h ^= v;
    return h * 0x100000001b3ULL;
}

SpecKey hash_planes(const std::vector<PlaneSpec>& planes) {
    SpecKey key{0xcbf29ce484222325ULL, 0x9e3779b97f4a7c15ULL};
    for (const PlaneSpec& p : planes) {
        for (double v : {p.n.x(), p.n.y(), p.n.z(), p.d}) {
            const auto q = static_cast<std::uint64_t>(std::llround(v * 1e6));
            key.a = fnv64(key.a, q);
            key.b = fnv64(key.b, mix64(q));
        }
    }
    return key;
}

Vec3 reflect_point(const Vec3& p, const PlaneSpec& plane) {
    return p - 2.0 * (plane.n.dot(p) - plane.d) * plane.n;
}

/// Validates the exact specular path source -> planes[0..K) -> receiver by
/// unfolding and marching the folded legs through the actual scene geometry.
/// Returns (total length, amplitude product) on success.
std::optional<std::pair<double, double>> fold_specular_path(
    const Scene& scene, const Vec3& source, const Vec3& receiver,
    const std::vector<PlaneSpec>& planes) {
    const int order = static_cast<int>(planes.size());
    // targets[k] = receiver reflected through planes K-1 .. k
    std::vector<Vec3> targets(order + 1);
    targets[order] = receiver;
    for (int k = order - 1; k >= 0; --k)
        targets[k] = reflect_point(targets[k + 1], planes[k]);

    double amp_product = 1.0;
    Vec3 pos = source;
    double total_length = 0.0;
    for (int k = 0; k < order; ++k) {
        const Vec3 to_target = targets[k] - pos;
        const double seg_total = to_target.norm();
        if (seg_total < 1e-9) return std::nullopt;
        const Vec3 dir = to_target / seg_total;
        const double denom = planes[k].n.dot(dir);
        if (std::abs(denom) < 1e-12) return std::nullopt;
        const double s = (planes[k].d - planes[k].n.dot(pos)) / denom;
        if (s <= kIntersectEpsilon) return std::nullopt;
        auto hit = scene.bvh().intersect(pos, dir);
        if (!hit) return std::nullopt;
        // The march must reach this plane first, on real geometry.
        if (std::abs(hit->distance - s) > 1e-6 * std::max(1.0, s))
            return std::nullopt;
        if (std::abs(hit->normal.dot(planes[k].n)) < 1.0 - 1e-9)
            return std::nullopt;
        amp_product *= (1.0 - planes[k].absorption) * (1.0 - planes[k].scattering);
        total_length += s;
        pos = pos + s * dir;
    }
    const Vec3 to_receiver = receiver - pos;
    const double last = to_receiver.norm();
    if (last < 1e-9) return std::nullopt;
    if (scene.bvh().occluded(pos, to_receiver / last, last)) return std::nullopt;
    total_length += last;
    return std::make_pair(total_length, amp_product);
}

PlaneSpec plane_of_vertex(const Scene& scene, const PathVertex& v) {
    const Material& m = scene.materials[v.material_id];
    return PlaneSpec{v.plane_normal, v.plane_offset, m.absorption, m.scattering};
}

using CandidateMap = std::map<SpecKey, std::vector<PlaneSpec>>;

/// Register specular wall sequences suggested by a subpath's purely specular
/// prefixes. `from_receiver` flips the sequence into source-side order.
void collect_specular_candidates(const Scene& scene, const Subpath& sp,
                                 bool from_receiver, int max_order,
                                 CandidateMap& out) {
    std::vector<PlaneSpec> planes;
    for (size_t k = 1; k < sp.vertices.size(); ++k) {
        const PathVertex& v = sp.vertices[k];
        if (!v.specular_prefix) break;
        planes.push_back(plane_of_vertex(scene, v));
        if (static_cast<int>(planes.size()) > max_order) break;
        if (planes.back().scattering >= 1.0) break;  // no specular lobe
        std::vector<PlaneSpec> ordered = planes;
        if (from_receiver) std::reverse(ordered.begin(), ordered.end());
        out.try_emplace(hash_planes(ordered), std::move(ordered));
    }
}

double vertex_scatter_gate(const Scene& scene, const PathVertex& v) {
    if (v.material_id < 0) return 1.0;  // subpath origin radiates everywhere
    return scene.materials[v.material_id].scattering;
}

/// Diffuse vertex-pair connections for one subpath pair. Emits raw (delay,
/// amplitude) pairs; averaging over rays is the caller's job. Low-amplitude
/// connections are Russian-rouletted before the visibility test: a candidate
/// below the threshold survives with p = amplitude / threshold and is
/// reweighted by 1/p, which keeps the estimator unbiased while skipping most
/// occlusion rays in the diffuse tail.
template <typename Emit>
void connect_pair(const Scene& scene, const Subpath& spath,
                  const Subpath& rpath, const PropagationConfig& config,
                  RandomStream& rng, Emit&& emit) {
    const double threshold = config.connection_roulette_threshold;
    for (size_t ia = 0; ia < spath.vertices.size(); ++ia) {
        const PathVertex& va = spath.vertices[ia];
        const double gate_a = vertex_scatter_gate(scene, va);
        if (gate_a <= 0.0) continue;
        for (size_t ib = 0; ib < rpath.vertices.size(); ++ib) {
            if (ia == 0 && ib == 0) continue;  // direct path is deterministic
            const PathVertex& vb = rpath.vertices[ib];
            const double gate_b = vertex_scatter_gate(scene, vb);
            if (gate_b <= 0.0) continue;
            const Vec3 seg = vb.position - va.position;
            const double seg_len = seg.norm();
            if (seg_len < 1e-9) continue;
            const double total = va.path_length + seg_len + vb.path_length;
            // Uniform weight over the possible subpath splits of this length.
            const double strategies = static_cast<double>(ia + ib + 1);
            double amplitude =
                std::sqrt(va.weight * vb.weight * gate_a * gate_b) /
                (kFourPi * total) / strategies;
            if (threshold > 0.0 && amplitude < threshold) {
                const double survival = amplitude / threshold;
                if (rng.next_double() >= survival) continue;
                amplitude /= survival;
            }
            if (scene.bvh().occluded(va.position, seg / seg_len, seg_len))
                continue;
            emit(total / config.speed_of_sound, amplitude);
        }
    }
}

void trace_subpath_into(const Scene& scene, const Vec3& origin,
                        const PropagationConfig& config, RandomStream& rng,
                        Subpath& out) {
    out.vertices.clear();
    PathVertex v;
    v.position = origin;
    out.vertices.push_back(v);

    Vec3 pos = origin;
    Vec3 dir = uniform_sphere(rng);
    double weight = 1.0;
    double attenuation = 1.0;
    double length = 0.0;
    bool chain_specular = true;

    for (int bounce = 0; bounce < config.max_bounces; ++bounce) {
        auto hit = scene.bvh().intersect(pos, dir);
        if (!hit) break;
        const Material& mat = scene.materials[hit->material_id];
        weight *= 1.0 - mat.absorption;
        attenuation *= 1.0 - mat.absorption;
        length += hit->distance;

        PathVertex vert;
        vert.position = hit->point;
        vert.weight = weight;
        vert.attenuation = attenuation;
        vert.path_length = length;
        vert.material_id = hit->material_id;
        vert.specular_prefix = chain_specular;
        canonical_plane(hit->normal, hit->point, &vert.plane_normal,
                        &vert.plane_offset);
        out.vertices.push_back(vert);

        if (weight < kEnergyCutoff) break;
        if (bounce + 1 >= config.russian_roulette_start) {
            const double survival = std::clamp(weight, 0.1, 1.0);
            if (rng.next_double() >= survival) break;
            weight /= survival;
        }
        if (rng.next_double() < mat.scattering) {
            dir = cosine_hemisphere(hit->normal, rng);
            chain_specular = false;
        } else {
            dir = (dir - 2.0 * dir.dot(hit->normal) * hit->normal).normalized();
        }
        pos = hit->point;
    }
}

}  // namespace

void PropagationConfig::validate() const {
    if (!(sample_rate > 0.0)) throw UserError("sample_rate must be positive");
    if (rays_per_endpoint < 1) throw UserError("rays_per_endpoint must be >= 1");
    if (max_bounces < 0) throw UserError("max_bounces must be >= 0");
    if (!(rir_duration > 0.0)) throw UserError("rir_duration must be positive");
    if (!(speed_of_sound > 0.0)) throw UserError("speed_of_sound must be positive");
}

int resolve_thread_count(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("ECHOLOC_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

Subpath trace_subpath(const Scene& scene, const Vec3& origin,
                      const PropagationConfig& config, RandomStream& rng) {
    Subpath sp;
    trace_subpath_into(scene, origin, config, rng, sp);
    return sp;
}

std::vector<Subpath> trace_subpaths(const Scene& scene, const Vec3& origin,
                                    const PropagationConfig& config,
                                    std::uint64_t stream_salt) {
    config.validate();
    if (!scene.inside_bounds(origin))
        throw UserError("subpath origin outside scene bounds");
    std::vector<Subpath> paths(config.rays_per_endpoint);
    for (int i = 0; i < config.rays_per_endpoint; ++i) {
        RandomStream rng(config.seed, stream_salt + static_cast<std::uint64_t>(i));
        trace_subpath_into(scene, origin, config, rng, paths[i]);
    }
    return paths;
}

std::vector<Contribution> connect(const Scene& scene,
                                  const std::vector<Subpath>& source_subpaths,
                                  const std::vector<Subpath>& receiver_subpaths,
                                  const PropagationConfig& config) {
    std::vector<Contribution> out;
    const size_t pairs = std::min(source_subpaths.size(), receiver_subpaths.size());
    CandidateMap candidates;
    candidates.try_emplace(hash_planes({}), std::vector<PlaneSpec>{});  // direct
    for (size_t i = 0; i < pairs; ++i) {
        RandomStream conn_rng(config.seed,
                              0x8000000000000000ULL + static_cast<std::uint64_t>(i));
        connect_pair(scene, source_subpaths[i], receiver_subpaths[i], config,
                     conn_rng, [&](double delay, double amplitude) {
                         out.push_back({delay, amplitude, false});
                     });
        collect_specular_candidates(scene, source_subpaths[i], false,
                                    config.max_specular_order, candidates);
        collect_specular_candidates(scene, receiver_subpaths[i], true,
                                    config.max_specular_order, candidates);
    }
    const Vec3 source = source_subpaths.empty()
                            ? Vec3::Zero()
                            : source_subpaths.front().vertices.front().position;
    const Vec3 receiver = receiver_subpaths.empty()
                              ? Vec3::Zero()
                              : receiver_subpaths.front().vertices.front().position;
    for (const auto& [key, planes] : candidates) {
        auto folded = fold_specular_path(scene, source, receiver, planes);
        if (!folded) continue;
        const auto [length, amp_product] = *folded;
        out.push_back(
            {length / config.speed_of_sound, amp_product / (kFourPi * length), true});
    }
    return out;
}

ImpulseResponse simulate_rir(const Scene& scene, const Vec3& source,
                             const PropagationConfig& config) {
    config.validate();
    if (!scene.inside_bounds(source))
        throw UserError("source position outside scene bounds");
    const Vec3 receiver = scene.receiver.position;
    if ((source - receiver).norm() < 1e-3)
        throw UserError("source coincides with the receiver");

    const int n_rays = config.rays_per_endpoint;
    const int len = config.rir_length();
    const double fs = config.sample_rate;
    constexpr int kBlock = 2048;
    const int n_blocks = (n_rays + kBlock - 1) / kBlock;

    std::vector<Eigen::ArrayXd> block_acc(n_blocks);
    std::vector<CandidateMap> block_cands(n_blocks);

    auto run_block = [&](int b) {
        Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(len);
        CandidateMap& cands = block_cands[b];
        Subpath spath, rpath;
        const int begin = b * kBlock;
        const int end = std::min(n_rays, begin + kBlock);
        for (int i = begin; i < end; ++i) {
            RandomStream src_rng(config.seed, 2 * static_cast<std::uint64_t>(i));
            RandomStream rcv_rng(config.seed, 2 * static_cast<std::uint64_t>(i) + 1);
            trace_subpath_into(scene, source, config, src_rng, spath);
            trace_subpath_into(scene, receiver, config, rcv_rng, rpath);
            RandomStream conn_rng(config.seed,
                                  0x8000000000000000ULL +
                                      static_cast<std::uint64_t>(i));
            connect_pair(scene, spath, rpath, config, conn_rng,
                         [&](double delay, double amplitude) {
                             const auto bin =
                                 static_cast<int>(std::llround(delay * fs));
                             if (bin >= 0 && bin < len) acc[bin] += amplitude;
                         });
            collect_specular_candidates(scene, spath, false,
                                        config.max_specular_order, cands);
            collect_specular_candidates(scene, rpath, true,
                                        config.max_specular_order, cands);
        }
        block_acc[b] = std::move(acc);
    };

    const int n_threads = std::min(resolve_thread_count(config.threads), n_blocks);
    if (n_threads <= 1) {
        for (int b = 0; b < n_blocks; ++b) run_block(b);
    } else {
        std::vector<std::thread> workers;
        workers.reserve(n_threads);
        for (int t = 0; t < n_threads; ++t) {
            workers.emplace_back([&, t] {
                for (int b = t; b < n_blocks; b += n_threads) run_block(b);
            });
        }
        for (auto& w : workers) w.join();
    }

    ImpulseResponse ir;
    ir.sample_rate = fs;
    ir.samples = Eigen::ArrayXd::Zero(len);
    for (int b = 0; b < n_blocks; ++b) ir.samples += block_acc[b];
    ir.samples /= static_cast<double>(n_rays);

    CandidateMap merged;
    merged.try_emplace(hash_planes({}), std::vector<PlaneSpec>{});  // direct
    for (auto& cm : block_cands) merged.merge(cm);
    for (const auto& [key, planes] : merged) {
        auto folded = fold_specular_path(scene, source, receiver, planes);
        if (!folded) continue;
        const auto [length, amp_product] = *folded;
        const auto bin = static_cast<int>(std::llround(length / config.speed_of_sound * fs));
        if (bin >= 0 && bin < len)
            ir.samples[bin] += amp_product / (kFourPi * length);
    }
    return ir;
}

ImpulseResponse image_source_rir(const Vec3& box_dims, const Vec3& source,
                                 const Vec3& receiver, double absorption,
                                 int max_order, const PropagationConfig& config) {
    config.validate();
    if (max_order < 0 || max_order > 4)
        throw UserError("image_source_rir supports max_order in [0, 4]");
    if (!(absorption >= 0.0 && absorption <= 1.0))
        throw UserError("absorption must be in [0, 1]");
    for (int k = 0; k < 3; ++k) {
        if (source[k] <= 0.0 || source[k] >= box_dims[k])
            throw UserError("source outside the shoebox");
        if (receiver[k] <= 0.0 || receiver[k] >= box_dims[k])
            throw UserError("receiver outside the shoebox");
    }

    ImpulseResponse ir;
    ir.sample_rate = config.sample_rate;
    const int len = config.rir_length();
    ir.samples = Eigen::ArrayXd::Zero(len);
    const double reflectance = 1.0 - absorption;

    const int m_range = max_order;
    for (int mx = -m_range; mx <= m_range; ++mx)
        for (int my = -m_range; my <= m_range; ++my)
            for (int mz = -m_range; mz <= m_range; ++mz)
                for (int px = 0; px <= 1; ++px)
                    for (int py = 0; py <= 1; ++py)
                        for (int pz = 0; pz <= 1; ++pz) {
                            const int order = std::abs(mx - px) + std::abs(mx) +
                                              std::abs(my - py) + std::abs(my) +
                                              std::abs(mz - pz) + std::abs(mz);
                            if (order > max_order) continue;
                            const Vec3 image(
                                (1 - 2 * px) * source.x() + 2.0 * mx * box_dims.x(),
                                (1 - 2 * py) * source.y() + 2.0 * my * box_dims.y(),
                                (1 - 2 * pz) * source.z() + 2.0 * mz * box_dims.z());
                            const double d = (image - receiver).norm();
                            if (d < 1e-9) continue;
                            const double amp =
                                std::pow(reflectance, order) / (kFourPi * d);
                            const auto bin = static_cast<int>(std::llround(
                                d / config.speed_of_sound * config.sample_rate));
                            if (bin >= 0 && bin < len) ir.samples[bin] += amp;
                        }
    return ir;
}

Eigen::ArrayXd schroeder_curve(const ImpulseResponse& ir) {
    if (ir.samples.size() == 0) throw UserError("empty impulse response");
    const Eigen::ArrayXd energy = ir.samples.square();
    Eigen::ArrayXd tail(energy.size());
    double running = 0.0;
    for (Eigen::Index i = energy.size() - 1; i >= 0; --i) {
        running += energy[i];
        tail[i] = running;
    }
    const double total = tail[0];
    if (!(total > 0.0)) throw UserError("all-zero impulse response has no decay");
    Eigen::ArrayXd curve(energy.size());
    for (Eigen::Index i = 0; i < energy.size(); ++i) {
        curve[i] = tail[i] > 0.0
                       ? 10.0 * std::log10(tail[i] / total)
                       : -std::numeric_limits<double>::infinity();
    }
    return curve;
}

}  // namespace echoloc
