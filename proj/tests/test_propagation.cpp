// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "echoloc/propagation.hpp"
#include "echoloc/rng.hpp"
#include "echoloc/scene.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace echoloc;

namespace {

Scene make_box_scene(const Vec3& dims, Material material, const Vec3& receiver) {
    Scene s;
    for (int i = 0; i < 8; ++i)
        s.vertices.emplace_back(i & 1 ? dims.x() : 0.0, i & 2 ? dims.y() : 0.0,
                                i & 4 ? dims.z() : 0.0);
    Surface surf;
    surf.material_id = 0;
    const int quads[6][4] = {{0, 1, 3, 2}, {4, 6, 7, 5}, {0, 4, 5, 1},
                             {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 5, 7, 3}};
    for (const auto& q : quads) {
        surf.triangles.push_back({q[0], q[1], q[2]});
        surf.triangles.push_back({q[0], q[2], q[3]});
    }
    s.surfaces.push_back(surf);
    s.materials.push_back(material);
    s.regions.push_back({"box", Vec3::Zero(), dims});
    s.receiver.position = receiver;
    s.finalize();
    return s;
}

Scene empty_scene(const Vec3& receiver) {
    Scene s;
    s.receiver.position = receiver;
    s.finalize();
    return s;
}

constexpr double kFourPi = 4.0 * std::numbers::pi;

}  // namespace

TEST_CASE("config validation") {
    PropagationConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    SUBCASE("sample rate") { cfg.sample_rate = 0; CHECK_THROWS_AS(cfg.validate(), UserError); }
    SUBCASE("rays") { cfg.rays_per_endpoint = 0; CHECK_THROWS_AS(cfg.validate(), UserError); }
    SUBCASE("bounces") { cfg.max_bounces = -1; CHECK_THROWS_AS(cfg.validate(), UserError); }
    SUBCASE("duration") { cfg.rir_duration = 0; CHECK_THROWS_AS(cfg.validate(), UserError); }
    CHECK(PropagationConfig{}.rir_length() == 16000);
}

TEST_CASE("max_bounces 0 leaves origin-only subpaths") {
    Scene s = make_box_scene(Vec3(4, 3, 3), {0.3, 0.3}, Vec3(1, 1, 1));
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 50;
    cfg.max_bounces = 0;
    auto paths = trace_subpaths(s, Vec3(2, 1.5, 1.5), cfg);
    REQUIRE(paths.size() == 50);
    for (const auto& p : paths) CHECK(p.vertices.size() == 1);
}

TEST_CASE("full absorber kills subpaths after the first hit") {
    Scene s = make_box_scene(Vec3(4, 3, 3), {1.0, 0.3}, Vec3(1, 1, 1));
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 200;
    auto paths = trace_subpaths(s, Vec3(2, 1.5, 1.5), cfg);
    for (const auto& p : paths) {
        REQUIRE(p.vertices.size() <= 2);
        if (p.vertices.size() == 2) CHECK(p.vertices[1].attenuation == 0.0);
    }
}

TEST_CASE("vertex attenuation is (1 - absorption)^k") {
    Scene s = make_box_scene(Vec3(2, 2, 2), {0.5, 1.0}, Vec3(1, 1, 1));
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 100;
    cfg.max_bounces = 6;  // below the roulette start, chain is exact
    auto paths = trace_subpaths(s, Vec3(0.7, 1.2, 0.9), cfg);
    for (const auto& p : paths) {
        for (size_t k = 1; k < p.vertices.size(); ++k) {
            CHECK(p.vertices[k].attenuation ==
                  doctest::Approx(std::pow(0.5, double(k))).epsilon(1e-12));
            CHECK(p.vertices[k].weight ==
                  doctest::Approx(std::pow(0.5, double(k))).epsilon(1e-12));
        }
    }
}

TEST_CASE("subpath invariants: energy non-increasing, lengths increasing") {
    Scene s = make_box_scene(Vec3(5, 4, 3), {0.3, 0.3}, Vec3(1, 1, 1));
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 500;
    cfg.seed = 9;
    auto paths = trace_subpaths(s, Vec3(2.5, 2, 1.5), cfg);
    for (const auto& p : paths) {
        for (size_t k = 1; k < p.vertices.size(); ++k) {
            CHECK(p.vertices[k].attenuation <= p.vertices[k - 1].attenuation);
            CHECK(p.vertices[k].path_length > p.vertices[k - 1].path_length);
        }
    }
}

TEST_CASE("free-field connect yields the Green's function") {
    const double d = 2.5;
    Scene s = empty_scene(Vec3::Zero());
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 10;
    auto sp = trace_subpaths(s, Vec3(d, 0, 0), cfg, 0);
    auto rp = trace_subpaths(s, Vec3::Zero(), cfg, 1);
    auto contribs = connect(s, sp, rp, cfg);
    REQUIRE(contribs.size() == 1);
    CHECK(contribs[0].deterministic);
    CHECK(contribs[0].delay == doctest::Approx(d / 343.0).epsilon(1e-12));
    CHECK(contribs[0].amplitude == doctest::Approx(1.0 / (kFourPi * d)).epsilon(1e-12));
}

TEST_CASE("free-field RIR is a single spike at round(d/c*fs)") {
    const double d = 3.43;
    Scene s = empty_scene(Vec3::Zero());
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 10000;
    auto ir = simulate_rir(s, Vec3(d, 0, 0), cfg);
    REQUIRE(ir.samples.size() == 16000);
    for (int i = 0; i < 16000; ++i) {
        if (i == 160)
            CHECK(ir.samples[i] ==
                  doctest::Approx(1.0 / (kFourPi * d)).epsilon(0.05));
        else
            CHECK(ir.samples[i] == 0.0);
    }
}

TEST_CASE("full-absorber shoebox has only the direct spike") {
    Scene s = make_box_scene(Vec3(5, 4, 3), {1.0, 0.0}, Vec3(1, 1, 1));
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 2000;
    auto ir = simulate_rir(s, Vec3(3.5, 2.0, 1.5), cfg);
    const double d = (Vec3(3.5, 2.0, 1.5) - Vec3(1, 1, 1)).norm();
    const auto bin = static_cast<int>(std::llround(d / 343.0 * 16000.0));
    for (int i = 0; i < ir.samples.size(); ++i) {
        if (i == bin)
            CHECK(ir.samples[i] == doctest::Approx(1.0 / (kFourPi * d)).epsilon(1e-9));
        else
            CHECK(ir.samples[i] == 0.0);
    }
}

TEST_CASE("simulate_rir rejects invalid sources") {
    Scene s = make_box_scene(Vec3(4, 3, 3), {0.3, 0.3}, Vec3(1, 1, 1));
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 10;
    CHECK_THROWS_AS(simulate_rir(s, Vec3(40, 1, 1), cfg), UserError);
    CHECK_THROWS_AS(simulate_rir(s, Vec3(1, 1, 1) + Vec3(1e-4, 0, 0), cfg),
                    UserError);
}

TEST_CASE("image-source oracle basics") {
    PropagationConfig cfg;
    const Vec3 dims(5, 4, 3);
    const Vec3 src(3.5, 2.5, 1.2), rcv(1.0, 1.5, 1.8);

    SUBCASE("order 0 is the direct path") {
        auto ir = image_source_rir(dims, src, rcv, 0.3, 0, cfg);
        int nonzero = 0;
        for (int i = 0; i < ir.samples.size(); ++i)
            if (ir.samples[i] != 0.0) ++nonzero;
        CHECK(nonzero == 1);
        const double d = (src - rcv).norm();
        CHECK(ir.samples[std::llround(d / 343.0 * 16000)] ==
              doctest::Approx(1.0 / (kFourPi * d)));
    }
    SUBCASE("hand-computed first-order floor reflection") {
        auto ir = image_source_rir(dims, src, rcv, 0.3, 1, cfg);
        // Mirror the source through y = 0: image at (3.5, -2.5, 1.2).
        const double d = (Vec3(3.5, -2.5, 1.2) - rcv).norm();
        const auto bin = static_cast<int>(std::llround(d / 343.0 * 16000));
        CHECK(ir.samples[bin] >= 0.7 / (kFourPi * d) - 1e-12);
    }
    SUBCASE("symmetric cube arrivals have equal amplitude") {
        auto ir = image_source_rir(Vec3(3, 3, 3), Vec3(1.5, 1.5, 1.0),
                                   Vec3(1.5, 1.5, 2.0), 0.3, 1, cfg);
        // Mirror walls z=0 for the source and z=3 for the receiver give
        // mirror-image path lengths; both arrive with the same amplitude at
        // the same delay, as do the four lateral walls.
        int nonzero = 0;
        for (int i = 0; i < ir.samples.size(); ++i)
            if (ir.samples[i] != 0.0) ++nonzero;
        CHECK(nonzero >= 3);
    }
    SUBCASE("input validation") {
        CHECK_THROWS_AS(image_source_rir(dims, Vec3(9, 1, 1), rcv, 0.3, 1, cfg),
                        UserError);
        CHECK_THROWS_AS(image_source_rir(dims, src, rcv, 0.3, 9, cfg), UserError);
        CHECK_THROWS_AS(image_source_rir(dims, src, rcv, 1.5, 1, cfg), UserError);
    }
}

TEST_CASE("image-source spike lattice count for order <= 2") {
    // Independent enumeration: distinct delay bins touched by images of
    // order <= 2, accumulated with a separate direct walk over reflections.
    PropagationConfig cfg;
    const Vec3 dims(5, 4, 3);
    const Vec3 src(3.5, 2.5, 1.2), rcv(1.0, 1.5, 1.8);
    auto ir = image_source_rir(dims, src, rcv, 0.3, 2, cfg);

    Eigen::ArrayXd expected = Eigen::ArrayXd::Zero(ir.samples.size());
    int images = 0;
    for (int mx = -2; mx <= 2; ++mx)
        for (int my = -2; my <= 2; ++my)
            for (int mz = -2; mz <= 2; ++mz)
                for (int px = 0; px <= 1; ++px)
                    for (int py = 0; py <= 1; ++py)
                        for (int pz = 0; pz <= 1; ++pz) {
                            const int order =
                                std::abs(mx - px) + std::abs(mx) +
                                std::abs(my - py) + std::abs(my) +
                                std::abs(mz - pz) + std::abs(mz);
                            if (order > 2) continue;
                            ++images;
                            const Vec3 img(
                                (1 - 2 * px) * src.x() + 2.0 * mx * dims.x(),
                                (1 - 2 * py) * src.y() + 2.0 * my * dims.y(),
                                (1 - 2 * pz) * src.z() + 2.0 * mz * dims.z());
                            const double d = (img - rcv).norm();
                            expected[std::llround(d / 343.0 * 16000)] +=
                                std::pow(0.7, order) / (kFourPi * d);
                        }
    // 1 direct + 6 first order + (6 second-order same-wall pairs x 1 +
    // lateral combinations) = 25 images in total for order <= 2.
    CHECK(images == 25);
    for (int i = 0; i < ir.samples.size(); ++i)
        CHECK(ir.samples[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("traced RIR matches the image-source oracle on a specular shoebox") {
    const Vec3 dims(5, 4, 3);
    const Vec3 src(3.5, 2.0, 1.5), rcv(1.2, 1.3, 1.1);
    Scene s = make_box_scene(dims, {0.3, 0.0}, rcv);

    PropagationConfig cfg;
    cfg.rays_per_endpoint = 20000;
    cfg.seed = 5;
    auto ir = simulate_rir(s, src, cfg);
    auto oracle = image_source_rir(dims, src, rcv, 0.3, 2, cfg);

    // Every oracle arrival of order <= 2 has matching energy within +-1
    // sample; with scattering 0 the tracer is purely deterministic here.
    for (int i = 0; i < oracle.samples.size(); ++i) {
        if (oracle.samples[i] == 0.0) continue;
        const double got = ir.samples.segment(std::max(0, i - 1), 3).sum();
        CHECK(got >= oracle.samples[i] * 0.9);
    }
    // And binned energy over the order-<=2 window agrees within 10%.
    double last_arrival = 0.0;
    for (int i = 0; i < oracle.samples.size(); ++i)
        if (oracle.samples[i] != 0.0) last_arrival = i;
    const auto window = static_cast<int>(last_arrival) + 2;
    const double sim_energy = ir.samples.head(window).square().sum();
    const double oracle_energy = oracle.samples.head(window).square().sum();
    // The tracer also finds true order-3+ arrivals inside the window, so it
    // may exceed the truncated oracle slightly; it must never fall below.
    CHECK(sim_energy >= oracle_energy * 0.9);
    CHECK(sim_energy <= oracle_energy * 1.35);
}

TEST_CASE("determinism across seeds and thread counts") {
    Scene s = make_box_scene(Vec3(5, 4, 3), {0.3, 0.3}, Vec3(1, 1, 1));
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 4000;
    cfg.seed = 77;
    cfg.threads = 1;
    auto a = simulate_rir(s, Vec3(3.5, 2, 1.5), cfg);
    auto b = simulate_rir(s, Vec3(3.5, 2, 1.5), cfg);
    CHECK((a.samples == b.samples).all());

    cfg.threads = 3;
    auto c = simulate_rir(s, Vec3(3.5, 2, 1.5), cfg);
    CHECK((a.samples == c.samples).all());

    cfg.threads = 1;
    cfg.seed = 78;
    auto d = simulate_rir(s, Vec3(3.5, 2, 1.5), cfg);
    CHECK(!(a.samples == d.samples).all());
}

TEST_CASE("Monte Carlo error shrinks as rays quadruple") {
    Scene s = make_box_scene(Vec3(5, 4, 3), {0.3, 0.5}, Vec3(1, 1, 1));
    auto stddev_of_energy = [&](int rays) {
        std::vector<double> energies;
        for (int seed = 0; seed < 10; ++seed) {
            PropagationConfig cfg;
            cfg.rays_per_endpoint = rays;
            cfg.seed = 100 + seed;
            cfg.rir_duration = 0.5;
            auto ir = simulate_rir(s, Vec3(3.5, 2, 1.5), cfg);
            energies.push_back(ir.samples.square().sum());
        }
        double mean = 0, ss = 0;
        for (double e : energies) mean += e;
        mean /= energies.size();
        for (double e : energies) ss += (e - mean) * (e - mean);
        return std::sqrt(ss / (energies.size() - 1));
    };
    const double coarse = stddev_of_energy(1000);
    const double fine = stddev_of_energy(4000);
    CHECK(fine / coarse < 0.7);
}

TEST_CASE("schroeder curve") {
    SUBCASE("single spike steps to -inf") {
        ImpulseResponse ir;
        ir.samples = Eigen::ArrayXd::Zero(10);
        ir.samples[0] = 0.5;
        auto curve = schroeder_curve(ir);
        CHECK(curve[0] == 0.0);
        CHECK(std::isinf(curve[1]));
    }
    SUBCASE("exponential decay gives the closed-form slope") {
        const double tau = 0.2, fs = 16000.0;
        ImpulseResponse ir;
        ir.sample_rate = fs;
        ir.samples = Eigen::ArrayXd::Zero(16000);
        RandomStream rng(4);
        for (int i = 0; i < 16000; ++i) {
            const double noise = 2.0 * rng.next_double() - 1.0;
            ir.samples[i] = std::exp(-i / fs / tau) * noise;
        }
        auto curve = schroeder_curve(ir);
        // slope of 10*log10(exp(-2t/tau)) = -20*log10(e)/tau dB/s
        const double expected = -20.0 * std::log10(std::numbers::e) / tau;
        const int i0 = 1600, i1 = 8000;
        const double slope = (curve[i1] - curve[i0]) / ((i1 - i0) / fs);
        CHECK(slope == doctest::Approx(expected).epsilon(0.05));
    }
    SUBCASE("monotone non-increasing on a simulated RIR") {
        Scene s = make_box_scene(Vec3(5, 4, 3), {0.3, 0.5}, Vec3(1, 1, 1));
        PropagationConfig cfg;
        cfg.rays_per_endpoint = 3000;
        auto curve = schroeder_curve(simulate_rir(s, Vec3(3.5, 2, 1.5), cfg));
        for (Eigen::Index i = 1; i < curve.size(); ++i)
            CHECK(curve[i] <= curve[i - 1] + 1e-12);
    }
    SUBCASE("all-zero RIR is an error") {
        ImpulseResponse ir;
        ir.samples = Eigen::ArrayXd::Zero(100);
        CHECK_THROWS_AS(schroeder_curve(ir), UserError);
        ir.samples.resize(0);
        CHECK_THROWS_AS(schroeder_curve(ir), UserError);
    }
}

TEST_CASE("energy boundedness against the lossless image-source bound") {
    const Vec3 dims(5, 4, 3);
    const Vec3 src(3.5, 2.0, 1.5), rcv(1.2, 1.3, 1.1);
    Scene s = make_box_scene(dims, {0.3, 0.4}, rcv);
    PropagationConfig cfg;
    cfg.rays_per_endpoint = 10000;
    cfg.rir_duration = 0.25;
    auto ir = simulate_rir(s, src, cfg);
    auto bound = image_source_rir(dims, src, rcv, 0.0, 4, cfg);
    CHECK(ir.samples.square().sum() <= bound.samples.square().sum());
}

TEST_CASE("thread count resolution") {
    CHECK(resolve_thread_count(3) == 3);
    CHECK(resolve_thread_count(0) >= 1);
}
