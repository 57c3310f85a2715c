// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "echoloc/types.hpp"

#include <optional>
#include <vector>

namespace echoloc {

/// One flattened triangle of the scene mesh.
struct Triangle {
    Vec3 a, b, c;
    int material_id = 0;
    int surface_id = 0;
};

struct TriangleHit {
    double distance = 0.0;
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::Zero();  // unit, oriented against the ray
    int triangle = -1;
    int material_id = 0;
};

/// Moller-Trumbore, no backface culling. Returns distance along `dir`.
std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir,
                                   const Vec3& a, const Vec3& b, const Vec3& c);

/// Binary BVH over triangle bounding boxes, median split on the longest axis.
class Bvh {
public:
    Bvh() = default;
    explicit Bvh(std::vector<Triangle> triangles);

    /// Nearest hit with distance > min_t, or nullopt.
    std::optional<TriangleHit> intersect(const Vec3& origin, const Vec3& dir,
                                         double min_t = kIntersectEpsilon) const;

    /// True if some triangle blocks the open segment (origin, origin + dir * max_t).
    bool occluded(const Vec3& origin, const Vec3& dir, double max_t) const;

    const std::vector<Triangle>& triangles() const { return triangles_; }
    bool empty() const { return triangles_.empty(); }

private:
    struct Node {
        Vec3 box_min, box_max;
        int left = -1;   // internal: left child; leaf: first triangle
        int right = -1;  // internal: right child; unused for leaves
        int count = 0;   // leaf triangle count, 0 for internal nodes
    };

    int build(std::vector<int>& index, int begin, int end);

    std::vector<Triangle> triangles_;  // leaf order
    std::vector<Node> nodes_;
};

}  // namespace echoloc
