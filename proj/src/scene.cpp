// SPDX-License-Identifier: Apache-2.0
#include "echoloc/scene.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace echoloc {

using nlohmann::json;

bool Region::contains(const Vec3& p, double shrink) const {
    const Vec3 c = center();
    const Vec3 lo = c + shrink * (min - c);
    const Vec3 hi = c + shrink * (max - c);
    // Half-open on the upper side so touching neighbours never both claim
    // a boundary point.
    for (int k = 0; k < 3; ++k) {
        if (p[k] < lo[k] || p[k] >= hi[k]) return false;
    }
    return true;
}

namespace {

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

}  // namespace

void Scene::finalize() {
    const int n_vertices = static_cast<int>(vertices.size());
    for (const Vec3& v : vertices) {
        if (!v.allFinite()) throw ValidationError("non-finite vertex");
    }
    for (const Material& m : materials) {
        if (!(m.absorption >= 0.0 && m.absorption <= 1.0))
            throw ValidationError("material absorption outside [0,1]");
        if (!(m.scattering >= 0.0 && m.scattering <= 1.0))
            throw ValidationError("material scattering outside [0,1]");
    }

    std::vector<Triangle> flat;
    for (size_t s = 0; s < surfaces.size(); ++s) {
        const Surface& surf = surfaces[s];
        if (surf.material_id < 0 ||
            surf.material_id >= static_cast<int>(materials.size())) {
            throw ValidationError("surface references unknown material id " +
                                  std::to_string(surf.material_id));
        }
        for (const auto& tri : surf.triangles) {
            for (int idx : tri) {
                if (idx < 0 || idx >= n_vertices)
                    throw ValidationError("triangle vertex index out of range");
            }
            const Vec3& a = vertices[tri[0]];
            const Vec3& b = vertices[tri[1]];
            const Vec3& c = vertices[tri[2]];
            if (triangle_area(a, b, c) <= kMinTriangleArea)
                throw ValidationError("degenerate triangle (area <= 1e-9 m^2)");
            flat.push_back({a, b, c, surf.material_id, static_cast<int>(s)});
        }
    }

    std::set<std::string> names;
    for (const Region& r : regions) {
        for (int k = 0; k < 3; ++k) {
            if (!(r.min[k] < r.max[k]))
                throw ValidationError("region '" + r.name + "' has min >= max");
        }
        if (!names.insert(r.name).second)
            throw ValidationError("duplicate region name '" + r.name + "'");
    }

    if (vertices.empty()) {
        // Free-field scene: unbounded.
        bounds_min_ = Vec3::Constant(-std::numeric_limits<double>::infinity());
        bounds_max_ = Vec3::Constant(std::numeric_limits<double>::infinity());
    } else {
        bounds_min_ = Vec3::Constant(std::numeric_limits<double>::infinity());
        bounds_max_ = -bounds_min_;
        for (const Vec3& v : vertices) {
            bounds_min_ = bounds_min_.cwiseMin(v);
            bounds_max_ = bounds_max_.cwiseMax(v);
        }
    }

    const double fnorm = receiver.facing.norm();
    if (fnorm < 1e-9 || !receiver.facing.allFinite())
        throw ValidationError("receiver facing direction is degenerate");
    receiver.facing /= fnorm;
    if (!inside_bounds(receiver.position))
        throw ValidationError("receiver outside scene bounds");

    bvh_ = Bvh(std::move(flat));
}

bool Scene::inside_bounds(const Vec3& p) const {
    return (p.array() >= bounds_min_.array()).all() &&
           (p.array() <= bounds_max_.array()).all();
}

std::optional<RayHit> intersect(const Scene& scene, const Vec3& origin,
                                const Vec3& direction) {
    return scene.bvh().intersect(origin, direction, kIntersectEpsilon);
}

std::optional<std::string> region_of(const Scene& scene, const Vec3& p,
                                     double shrink) {
    const Region* found = nullptr;
    for (const Region& r : scene.regions) {
        if (r.contains(p, shrink)) {
            if (found) {
                throw ValidationError("point claimed by regions '" + found->name +
                                      "' and '" + r.name + "'");
            }
            found = &r;
        }
    }
    if (!found) return std::nullopt;
    return found->name;
}

// ---- scene file format -----------------------------------------------------

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3)
        throw ParseError("expected a 3-element array");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

std::string serialize_scene(const Scene& scene) {
    json j;
    j["format"] = "echoloc-scene/1";
    json verts = json::array();
    for (const Vec3& v : scene.vertices) verts.push_back(vec3_to_json(v));
    j["vertices"] = std::move(verts);
    json mats = json::array();
    for (const Material& m : scene.materials)
        mats.push_back({{"absorption", m.absorption}, {"scattering", m.scattering}});
    j["materials"] = std::move(mats);
    json surfs = json::array();
    for (const Surface& s : scene.surfaces) {
        json tris = json::array();
        for (const auto& t : s.triangles) tris.push_back({t[0], t[1], t[2]});
        surfs.push_back({{"material", s.material_id}, {"triangles", std::move(tris)}});
    }
    j["surfaces"] = std::move(surfs);
    json regs = json::array();
    for (const Region& r : scene.regions) {
        regs.push_back({{"name", r.name},
                        {"min", vec3_to_json(r.min)},
                        {"max", vec3_to_json(r.max)}});
    }
    j["regions"] = std::move(regs);
    j["receiver"] = {{"position", vec3_to_json(scene.receiver.position)},
                     {"facing", vec3_to_json(scene.receiver.facing)}};
    return j.dump(2) + "\n";
}

Scene parse_scene(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("scene parse failed: ") + e.what());
    }
    try {
        if (j.value("format", "") != "echoloc-scene/1")
            throw ParseError("unsupported scene format tag");
        Scene scene;
        for (const auto& v : j.at("vertices")) scene.vertices.push_back(vec3_from_json(v));
        for (const auto& m : j.at("materials")) {
            scene.materials.push_back(
                {m.at("absorption").get<double>(), m.at("scattering").get<double>()});
        }
        for (const auto& s : j.at("surfaces")) {
            Surface surf;
            surf.material_id = s.at("material").get<int>();
            for (const auto& t : s.at("triangles")) {
                if (!t.is_array() || t.size() != 3)
                    throw ParseError("triangle must have 3 indices");
                surf.triangles.push_back(
                    {t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
            }
            scene.surfaces.push_back(std::move(surf));
        }
        for (const auto& r : j.at("regions")) {
            scene.regions.push_back({r.at("name").get<std::string>(),
                                     vec3_from_json(r.at("min")),
                                     vec3_from_json(r.at("max"))});
        }
        scene.receiver.position = vec3_from_json(j.at("receiver").at("position"));
        scene.receiver.facing = vec3_from_json(j.at("receiver").at("facing"));
        scene.finalize();
        return scene;
    } catch (const json::exception& e) {
        throw ParseError(std::string("scene parse failed: ") + e.what());
    }
}

Scene load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scene file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scene(buf.str());
}

void save_scene(const Scene& scene, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw UserError("cannot write scene file: " + path);
    out << serialize_scene(scene);
}

// ---- procedural house builder ----------------------------------------------

namespace {

struct Rect2 {
    double u0, v0, u1, v1;
    bool covers(double u, double v) const {
        return u > u0 && u < u1 && v > v0 && v < v1;
    }
};

// Axis-aligned face at plane coordinate `w` along axis `k`, spanning axes
// (u_axis, v_axis). Emits the face minus rectangular holes by grid
// decomposition on the hole edge coordinates.
void emit_face_with_holes(std::vector<Vec3>& vertices,
                          std::vector<std::array<int, 3>>& triangles, int k,
                          double w, int u_axis, int v_axis, Rect2 face,
                          const std::vector<Rect2>& holes) {
    std::vector<double> us = {face.u0, face.u1};
    std::vector<double> vs = {face.v0, face.v1};
    for (const Rect2& h : holes) {
        us.push_back(std::clamp(h.u0, face.u0, face.u1));
        us.push_back(std::clamp(h.u1, face.u0, face.u1));
        vs.push_back(std::clamp(h.v0, face.v0, face.v1));
        vs.push_back(std::clamp(h.v1, face.v0, face.v1));
    }
    std::sort(us.begin(), us.end());
    std::sort(vs.begin(), vs.end());
    us.erase(std::unique(us.begin(), us.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-9; }),
             us.end());
    vs.erase(std::unique(vs.begin(), vs.end(),
                         [](double a, double b) { return std::abs(a - b) < 1e-9; }),
             vs.end());

    auto add_vertex = [&](double u, double v) {
        Vec3 p;
        p[k] = w;
        p[u_axis] = u;
        p[v_axis] = v;
        vertices.push_back(p);
        return static_cast<int>(vertices.size()) - 1;
    };

    for (size_t i = 0; i + 1 < us.size(); ++i) {
        for (size_t jdx = 0; jdx + 1 < vs.size(); ++jdx) {
            const double cu = 0.5 * (us[i] + us[i + 1]);
            const double cv = 0.5 * (vs[jdx] + vs[jdx + 1]);
            bool in_hole = false;
            for (const Rect2& h : holes) in_hole = in_hole || h.covers(cu, cv);
            if (in_hole) continue;
            if ((us[i + 1] - us[i]) * (vs[jdx + 1] - vs[jdx]) < 1e-8) continue;
            const int a = add_vertex(us[i], vs[jdx]);
            const int b = add_vertex(us[i + 1], vs[jdx]);
            const int c = add_vertex(us[i + 1], vs[jdx + 1]);
            const int d = add_vertex(us[i], vs[jdx + 1]);
            triangles.push_back({a, b, c});
            triangles.push_back({a, c, d});
        }
    }
}

struct SharedWall {
    int axis;        // contact axis (0 or 2)
    double plane;    // wall plane coordinate on that axis
    int u_axis;      // horizontal in-wall axis
    double u0, u1;   // horizontal overlap
    double v0, v1;   // vertical (y) overlap
};

std::optional<SharedWall> shared_wall(const RoomBox& a, const RoomBox& b) {
    constexpr double tol = 1e-9;
    for (int k : {0, 2}) {
        double plane;
        if (std::abs(a.max[k] - b.min[k]) < tol)
            plane = a.max[k];
        else if (std::abs(b.max[k] - a.min[k]) < tol)
            plane = b.max[k];
        else
            continue;
        const int u_axis = (k == 0) ? 2 : 0;
        const double u0 = std::max(a.min[u_axis], b.min[u_axis]);
        const double u1 = std::min(a.max[u_axis], b.max[u_axis]);
        const double v0 = std::max(a.min[1], b.min[1]);
        const double v1 = std::min(a.max[1], b.max[1]);
        if (u1 - u0 > tol && v1 - v0 > tol)
            return SharedWall{k, plane, u_axis, u0, u1, v0, v1};
    }
    return std::nullopt;
}

}  // namespace

Scene build_house(const FloorPlan& plan, const Material& wall_material,
                  const Receiver& receiver) {
    const int n = static_cast<int>(plan.rooms.size());
    if (n == 0) throw ValidationError("floor plan has no rooms");

    for (int i = 0; i < n; ++i) {
        for (int jdx = i + 1; jdx < n; ++jdx) {
            const RoomBox& a = plan.rooms[i];
            const RoomBox& b = plan.rooms[jdx];
            bool overlap = true;
            for (int k = 0; k < 3; ++k) {
                overlap = overlap && a.min[k] < b.max[k] - 1e-9 &&
                          b.min[k] < a.max[k] - 1e-9;
            }
            if (overlap)
                throw ValidationError("rooms '" + a.name + "' and '" + b.name +
                                      "' overlap");
        }
    }

    // Resolve doors to hole rectangles keyed by (room, face).
    struct Hole {
        int axis;
        double plane;
        Rect2 rect;  // (u, v=y) in wall coordinates
    };
    std::vector<std::vector<Hole>> holes(n);
    for (const Door& d : plan.doors) {
        if (d.room_a < 0 || d.room_a >= n || d.room_b < 0 || d.room_b >= n)
            throw ValidationError("door references unknown room index");
        const RoomBox& a = plan.rooms[d.room_a];
        const RoomBox& b = plan.rooms[d.room_b];
        auto wall = shared_wall(a, b);
        if (!wall)
            throw ValidationError("door between '" + a.name + "' and '" + b.name +
                                  "' is not on a shared wall");
        if (d.width > wall->u1 - wall->u0 + 1e-9)
            throw ValidationError("door wider than the shared wall");
        if (d.height > wall->v1 - wall->v0 + 1e-9)
            throw ValidationError("door taller than the shared wall");
        const double uc = 0.5 * (wall->u0 + wall->u1);
        Rect2 rect{uc - 0.5 * d.width, wall->v0, uc + 0.5 * d.width,
                   wall->v0 + d.height};
        holes[d.room_a].push_back({wall->axis, wall->plane, rect});
        holes[d.room_b].push_back({wall->axis, wall->plane, rect});
    }

    Scene scene;
    scene.materials.push_back(wall_material);
    Surface mesh;
    mesh.material_id = 0;
    for (int i = 0; i < n; ++i) {
        const RoomBox& room = plan.rooms[i];
        // Six faces: for each axis k, the two planes at room.min[k], room.max[k].
        for (int k = 0; k < 3; ++k) {
            const int u_axis = (k + 1) % 3;
            const int v_axis = (k + 2) % 3;
            for (double plane : {room.min[k], room.max[k]}) {
                Rect2 face{room.min[u_axis], room.min[v_axis], room.max[u_axis],
                           room.max[v_axis]};
                std::vector<Rect2> face_holes;
                for (const Hole& h : holes[i]) {
                    if (h.axis != k || std::abs(h.plane - plane) > 1e-9) continue;
                    // Hole rect is stored as (u_wall = horizontal, v = y);
                    // remap into this face's (u_axis, v_axis) order.
                    Rect2 r = h.rect;
                    if (u_axis == 1) {
                        // face coords are (y, horizontal): swap
                        r = Rect2{h.rect.v0, h.rect.u0, h.rect.v1, h.rect.u1};
                    }
                    face_holes.push_back(r);
                }
                emit_face_with_holes(scene.vertices, mesh.triangles, k, plane,
                                     u_axis, v_axis, face, face_holes);
            }
        }
        scene.regions.push_back({room.name, room.min, room.max});
    }
    scene.surfaces.push_back(std::move(mesh));
    scene.receiver = receiver;

    bool receiver_in_room = false;
    for (const RoomBox& room : plan.rooms) {
        receiver_in_room =
            receiver_in_room ||
            ((receiver.position.array() > room.min.array()).all() &&
             (receiver.position.array() < room.max.array()).all());
    }
    if (!receiver_in_room)
        throw ValidationError("receiver is not inside any room");

    scene.finalize();
    return scene;
}

FloorPlan house10_plan() {
    // 15.6 m (x) by 8.3 m (z) footprint, 4.4 m ceilings: two rows of five
    // rooms with doors along each row and two doors joining the rows.
    FloorPlan plan;
    const double width = 15.6 / 5.0;
    const double depth = 8.3 / 2.0;
    const double height = 4.4;
    for (int row = 0; row < 2; ++row) {
        for (int col = 0; col < 5; ++col) {
            const int idx = row * 5 + col;
            Vec3 lo(col * width, 0.0, row * depth);
            Vec3 hi((col + 1) * width, height, (row + 1) * depth);
            plan.rooms.push_back({"room_" + std::to_string(idx), lo, hi});
        }
    }
    for (int row = 0; row < 2; ++row) {
        for (int col = 0; col < 4; ++col) {
            const int idx = row * 5 + col;
            plan.doors.push_back({idx, idx + 1, 0.9, 2.1});
        }
    }
    plan.doors.push_back({0, 5, 0.9, 2.1});
    plan.doors.push_back({4, 9, 0.9, 2.1});
    return plan;
}

Scene build_house10() {
    Receiver receiver;
    receiver.position = Vec3(1.0, 1.7, 1.0);  // corner room, per the fixture
    receiver.facing = Vec3(1.0, 0.0, 0.0);
    Material walls{0.3, 0.3};
    return build_house(house10_plan(), walls, receiver);
}

}  // namespace echoloc
