// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "echoloc/bvh.hpp"
#include "echoloc/types.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace echoloc {

/// Broadband acoustic surface behaviour. `absorption` is the fraction of
/// incident energy absorbed per reflection; of the reflected energy,
/// `scattering` goes to the diffuse lobe and the rest is specular.
struct Material {
    double absorption = 0.1;
    double scattering = 0.1;
};

struct Surface {
    std::vector<std::array<int, 3>> triangles;  // indices into Scene::vertices
    int material_id = 0;
};

/// Named axis-aligned box used for room labels and sampling.
struct Region {
    std::string name;
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();

    bool contains(const Vec3& p, double shrink = 1.0) const;
    Vec3 center() const { return 0.5 * (min + max); }
};

struct Receiver {
    Vec3 position = Vec3::Zero();
    Vec3 facing = Vec3::UnitX();  // stored for provenance; propagation is omni
};

/// Immutable after construction; all queries are read-only and thread-safe.
class Scene {
public:
    std::vector<Vec3> vertices;
    std::vector<Surface> surfaces;
    std::vector<Material> materials;
    std::vector<Region> regions;
    Receiver receiver;

    /// Validates invariants and builds the acceleration structure.
    /// Throws ValidationError on degenerate triangles, bad indices,
    /// duplicate region names or a receiver outside the bounds.
    void finalize();

    const Bvh& bvh() const { return bvh_; }
    const Vec3& bounds_min() const { return bounds_min_; }
    const Vec3& bounds_max() const { return bounds_max_; }
    bool inside_bounds(const Vec3& p) const;

private:
    Bvh bvh_;
    Vec3 bounds_min_ = Vec3::Zero();
    Vec3 bounds_max_ = Vec3::Zero();
};

using RayHit = TriangleHit;

/// Nearest surface hit beyond the self-hit epsilon, or nullopt for a miss.
std::optional<RayHit> intersect(const Scene& scene, const Vec3& origin,
                                const Vec3& direction);

/// Name of the unique region containing p (bounds shrunk about their centroid
/// by `shrink`). Throws ValidationError if two regions claim p.
std::optional<std::string> region_of(const Scene& scene, const Vec3& p,
                                     double shrink = 1.0);

// ---- scene file format ("echoloc-scene/1") --------------------------------

Scene load_scene(const std::string& path);
Scene parse_scene(const std::string& text);
std::string serialize_scene(const Scene& scene);
void save_scene(const Scene& scene, const std::string& path);

// ---- procedural house builder ---------------------------------------------

struct RoomBox {
    std::string name;
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();
};

/// Rectangular opening on the shared wall between two rooms. The hole is
/// centered along the wall's horizontal overlap with its sill on the floor.
struct Door {
    int room_a = 0;
    int room_b = 0;
    double width = 0.9;
    double height = 2.1;
};

struct FloorPlan {
    std::vector<RoomBox> rooms;
    std::vector<Door> doors;
};

/// Closed triangle mesh with door holes, one Region per room.
Scene build_house(const FloorPlan& plan, const Material& wall_material,
                  const Receiver& receiver);

/// The 10-room fixture plan: 15.6 m x 4.4 m x 8.3 m, two rows of five rooms,
/// receiver in a corner room at 1.7 m height.
FloorPlan house10_plan();
Scene build_house10();

}  // namespace echoloc
