#include <catch2/catch_amalgamated.hpp>

#include "gsurf/synth.hpp"

using namespace gsurf;

namespace {

SceneSpec two_bubble_spec() {
    SceneSpec spec;
    spec.frames = 6;
    spec.dt = 0.01;
    spec.bounds_lo = {-0.12, -0.02, -0.12};
    spec.bounds_hi = {0.12, 0.3, 0.12};
    BubbleSpec a;
    a.spawn_position = {-0.04, 0.06, 0.0};
    a.radius = 0.035;
    a.velocity = {{0.0, {0.0, 0.3, 0.0}}};
    BubbleSpec b;
    b.spawn_position = {0.05, 0.15, 0.01};
    b.radius = 0.03;
    b.velocity = {{0.0, {0.0, 0.3, 0.0}}};
    spec.bubbles = {a, b};
    return spec;
}

}  // namespace

TEST_CASE("rigid scene: centroid velocity equals the script exactly") {
    SceneSpec spec = two_bubble_spec();
    const GroundTruthScene scene = generate_scene(7, spec);
    for (int t = 1; t < spec.frames; ++t)
        for (const auto& [id, v] : scene.centroid_velocity[static_cast<size_t>(t)]) {
            CHECK(v.x == 0.0);
            CHECK(v.y == Catch::Approx(0.3).margin(1e-12));
            CHECK(v.z == 0.0);
        }
}

TEST_CASE("same seed reproduces the scene bit for bit") {
    SceneSpec spec = two_bubble_spec();
    spec.bubbles[0].deform_amplitude = 0.1;
    const GroundTruthScene a = generate_scene(42, spec);
    const GroundTruthScene b = generate_scene(42, spec);
    REQUIRE(a.frames.size() == b.frames.size());
    for (size_t t = 0; t < a.frames.size(); ++t) {
        REQUIRE(a.frames[t].size() == b.frames[t].size());
        for (size_t i = 0; i < a.frames[t].size(); ++i) {
            CHECK(a.frames[t][i].center.x == b.frames[t][i].center.x);
            CHECK(a.frames[t][i].deform_phase == b.frames[t][i].deform_phase);
        }
    }
    const auto pa = a.surface_points(2, 64), pb = b.surface_points(2, 64);
    for (size_t i = 0; i < pa.size(); ++i) CHECK(norm(pa[i] - pb[i]) == 0.0);
}

TEST_CASE("ground-truth point clouds of rigid scripts are exact translates") {
    SceneSpec spec = two_bubble_spec();
    const GroundTruthScene scene = generate_scene(3, spec);
    const auto p0 = scene.surface_points(0, 128);
    const auto p1 = scene.surface_points(1, 128);
    REQUIRE(p0.size() == p1.size());
    const Vec3 delta = Vec3{0, 0.3, 0} * spec.dt;
    for (size_t i = 0; i < p0.size(); ++i) CHECK(norm(p1[i] - (p0[i] + delta)) < 1e-12);
}

TEST_CASE("analytic SDF vanishes on sampled surface points") {
    SceneSpec spec = two_bubble_spec();
    const GroundTruthScene scene = generate_scene(5, spec);
    for (int t : {0, 3}) {
        for (const Vec3& p : scene.surface_points(t, 96)) {
            // Undeformed union-of-spheres: exact signed distance except in
            // overlap regions (none here: bubbles are well separated).
            CHECK(std::abs(scene.field(p, t)) < 1e-9);
        }
    }
}

TEST_CASE("deformation keeps amplitude bounds and determinism") {
    SceneSpec spec = two_bubble_spec();
    spec.bubbles[0].deform_amplitude = 0.12;
    spec.bubbles[0].deform_omega = 11.0;
    const GroundTruthScene scene = generate_scene(9, spec);
    for (int t = 0; t < spec.frames; ++t)
        for (const Vec3& p : scene.surface_points(t, 64)) {
            const double r = norm(p - scene.frames[static_cast<size_t>(t)][0].center);
            // Points belong to either bubble; check the bound loosely for
            // those near bubble 0.
            if (r < 0.05)
                CHECK(r >= 0.035 * (1 - 0.121));
        }
}

TEST_CASE("rendered masks are filled projections owned by the nearest bubble") {
    SceneSpec spec = two_bubble_spec();
    // Put bubble 2 directly behind bubble 1 along the camera ray.
    spec.bubbles[1].spawn_position = {-0.04, 0.06, 0.08};
    const GroundTruthScene scene = generate_scene(1, spec);
    const Vec3 front_center = scene.frames[0][0].center;
    const CameraModel cam =
        look_at_camera("c", front_center + Vec3{0, 0, -0.9}, front_center, 200.0, 96, 96);
    const GroundTruthRender gr = render_ground_truth(scene, 0, cam);

    // The projected center of the front bubble is inside its mask.
    const auto pd = project(cam, front_center);
    const int px = static_cast<int>(pd.pixel.x), py = static_cast<int>(pd.pixel.y);
    const uint16_t front_value = static_cast<uint16_t>(scene.frames[0][0].id + 1);
    const uint16_t back_value = static_cast<uint16_t>(scene.frames[0][1].id + 1);
    CHECK(gr.mask(px, py) == front_value);

    // Depth at the projected center is distance-to-center minus radius.
    const double expected = norm(cam.position() - front_center) - 0.035;
    // The pixel ray is within half a pixel of the center; allow small slack.
    CHECK(gr.depth(px, py) == Catch::Approx(expected).margin(5e-4));

    // The front bubble owns the overlap pixels; the back one is occluded
    // except for a rim (its radius is smaller here, so it vanishes).
    int front_count = 0, back_count = 0;
    for (int y = 0; y < 96; ++y)
        for (int x = 0; x < 96; ++x) {
            if (gr.mask(x, y) == front_value) ++front_count;
            if (gr.mask(x, y) == back_value) ++back_count;
        }
    CHECK(front_count > 0);
    CHECK(back_count < front_count);
}

TEST_CASE("masks are pairwise disjoint and depth is analytic for side views") {
    SceneSpec spec = two_bubble_spec();
    const GroundTruthScene scene = generate_scene(1, spec);
    const Vec3 center = (spec.bounds_lo + spec.bounds_hi) * 0.5;
    const auto cams = three_view_rig(center, 0.9, 35.0, 200.0, 96, 96);
    for (const CameraModel& cam : cams) {
        const GroundTruthRender gr = render_ground_truth(scene, 0, cam);
        // A stored id raster is disjoint by construction; decode and check
        // bubble ids are the expected set.
        const auto instances = decode_instances(gr.mask);
        CHECK(instances.size() == 2);
        for (const auto& m : instances) CHECK((m.id == 1 || m.id == 2));
    }
}

TEST_CASE("spec validation") {
    SceneSpec bad = two_bubble_spec();
    bad.frames = 1;
    CHECK_THROWS_AS(generate_scene(1, bad), Error);
    bad = two_bubble_spec();
    bad.bubbles[0].deform_amplitude = 0.3;
    CHECK_THROWS_AS(generate_scene(1, bad), Error);
    bad = two_bubble_spec();
    bad.bubbles.clear();
    CHECK_THROWS_AS(generate_scene(1, bad), Error);
}

TEST_CASE("emission spawns bubbles from the bottom plane deterministically") {
    SceneSpec spec;
    spec.frames = 10;
    spec.dt = 0.01;
    spec.emission_rate = 2000.0; // many bubbles over 0.1 s
    const GroundTruthScene a = generate_scene(17, spec);
    const GroundTruthScene b = generate_scene(17, spec);
    CHECK(!a.frames.back().empty());
    REQUIRE(a.frames.back().size() == b.frames.back().size());
    for (size_t i = 0; i < a.frames.back().size(); ++i)
        CHECK(a.frames.back()[i].center.y == b.frames.back()[i].center.y);
}
