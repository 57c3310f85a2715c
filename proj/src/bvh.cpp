// SPDX-License-Identifier: Apache-2.0
#include "echoloc/bvh.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace echoloc {

std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir,
                                   const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 e1 = b - a;
    const Vec3 e2 = c - a;
    const Vec3 p = dir.cross(e2);
    const double det = e1.dot(p);
    if (std::abs(det) < 1e-12) return std::nullopt;
    const double inv_det = 1.0 / det;
    const Vec3 t = origin - a;
    const double u = t.dot(p) * inv_det;
    if (u < 0.0 || u > 1.0) return std::nullopt;
    const Vec3 q = t.cross(e1);
    const double v = dir.dot(q) * inv_det;
    if (v < 0.0 || u + v > 1.0) return std::nullopt;
    const double dist = e2.dot(q) * inv_det;
    if (dist <= 0.0) return std::nullopt;
    return dist;
}

namespace {

struct Box {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());
    void grow(const Vec3& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    void grow(const Triangle& t) {
        grow(t.a);
        grow(t.b);
        grow(t.c);
    }
};

bool ray_box(const Vec3& origin, const Vec3& inv_dir, const Vec3& lo,
             const Vec3& hi, double max_t) {
    double t0 = 0.0, t1 = max_t;
    for (int k = 0; k < 3; ++k) {
        double near = (lo[k] - origin[k]) * inv_dir[k];
        double far = (hi[k] - origin[k]) * inv_dir[k];
        if (near > far) std::swap(near, far);
        t0 = std::max(t0, near);
        t1 = std::min(t1, far);
        if (t0 > t1) return false;
    }
    return true;
}

}  // namespace

Bvh::Bvh(std::vector<Triangle> triangles) {
    std::vector<int> index(triangles.size());
    std::iota(index.begin(), index.end(), 0);
    triangles_ = std::move(triangles);
    if (!triangles_.empty()) {
        nodes_.reserve(2 * triangles_.size());
        build(index, 0, static_cast<int>(index.size()));
        // Reorder so leaves reference contiguous runs of triangles_.
        std::vector<Triangle> ordered(triangles_.size());
        for (size_t i = 0; i < index.size(); ++i) ordered[i] = triangles_[index[i]];
        triangles_ = std::move(ordered);
    }
}

int Bvh::build(std::vector<int>& index, int begin, int end) {
    Box box;
    for (int i = begin; i < end; ++i) box.grow(triangles_[index[i]]);
    const int node_id = static_cast<int>(nodes_.size());
    nodes_.push_back({box.lo, box.hi, begin, -1, end - begin});
    if (end - begin <= 4) return node_id;

    const Vec3 extent = box.hi - box.lo;
    int axis = 0;
    if (extent[1] > extent[axis]) axis = 1;
    if (extent[2] > extent[axis]) axis = 2;
    const int mid = (begin + end) / 2;
    std::nth_element(index.begin() + begin, index.begin() + mid,
                     index.begin() + end, [&](int l, int r) {
                         const Triangle& tl = triangles_[l];
                         const Triangle& tr = triangles_[r];
                         return tl.a[axis] + tl.b[axis] + tl.c[axis] <
                                tr.a[axis] + tr.b[axis] + tr.c[axis];
                     });

    const int left = build(index, begin, mid);
    const int right = build(index, mid, end);
    nodes_[node_id].left = left;
    nodes_[node_id].right = right;
    nodes_[node_id].count = 0;
    return node_id;
}

std::optional<TriangleHit> Bvh::intersect(const Vec3& origin, const Vec3& dir,
                                          double min_t) const {
    if (triangles_.empty()) return std::nullopt;
    const Vec3 inv_dir = dir.cwiseInverse();
    double best_t = std::numeric_limits<double>::infinity();
    int best_tri = -1;
    int stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node& node = nodes_[stack[--sp]];
        if (!ray_box(origin, inv_dir, node.box_min, node.box_max, best_t)) continue;
        if (node.count > 0) {
            for (int i = node.left; i < node.left + node.count; ++i) {
                const Triangle& tri = triangles_[i];
                auto t = ray_triangle(origin, dir, tri.a, tri.b, tri.c);
                if (t && *t > min_t && *t < best_t) {
                    best_t = *t;
                    best_tri = i;
                }
            }
        } else {
            stack[sp++] = node.left;
            stack[sp++] = node.right;
        }
    }
    if (best_tri < 0) return std::nullopt;
    const Triangle& tri = triangles_[best_tri];
    Vec3 normal = (tri.b - tri.a).cross(tri.c - tri.a).normalized();
    if (normal.dot(dir) > 0.0) normal = -normal;
    return TriangleHit{best_t, origin + best_t * dir, normal, best_tri,
                       tri.material_id};
}

bool Bvh::occluded(const Vec3& origin, const Vec3& dir, double max_t) const {
    if (triangles_.empty()) return false;
    const Vec3 inv_dir = dir.cwiseInverse();
    const double limit = max_t - kIntersectEpsilon;
    int stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node& node = nodes_[stack[--sp]];
        if (!ray_box(origin, inv_dir, node.box_min, node.box_max, limit)) continue;
        if (node.count > 0) {
            for (int i = node.left; i < node.left + node.count; ++i) {
                const Triangle& tri = triangles_[i];
                auto t = ray_triangle(origin, dir, tri.a, tri.b, tri.c);
                if (t && *t > kIntersectEpsilon && *t < limit) return true;
            }
        } else {
            stack[sp++] = node.left;
            stack[sp++] = node.right;
        }
    }
    return false;
}

}  // namespace echoloc
