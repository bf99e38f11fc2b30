#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gsurf/bubbles.hpp"
#include "support/scenes.hpp"

using namespace gsurf;
using namespace gsurf::testing;

namespace {

InstanceMask rect_mask(int w, int h, int x0, int y0, int x1, int y1, int32_t id = kUnassignedBubble) {
    InstanceMask m;
    m.id = id;
    m.width = w;
    m.height = h;
    m.bits.assign(static_cast<size_t>(w) * h, 0);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.bits[static_cast<size_t>(y) * w + x] = 1;
    return m;
}

}  // namespace

TEST_CASE("mask association merges instances at matching heights") {
    const int W = 64, H = 64;
    // Two bubbles at distinct heights, seen in both views.
    std::vector<std::vector<InstanceMask>> masks{
        {rect_mask(W, H, 10, 10, 16, 16), rect_mask(W, H, 30, 40, 36, 46)},
        {rect_mask(W, H, 40, 11, 46, 17), rect_mask(W, H, 8, 39, 14, 45)}};
    const auto clusters = associate_masks(masks, 0.05, 3.0, 4, 0.05);
    REQUIRE(clusters.size() == 2);
    for (const auto& c : clusters) CHECK(c.members.size() == 2);
}

TEST_CASE("instance visible in a single view keeps its own cluster") {
    const int W = 64, H = 64;
    std::vector<std::vector<InstanceMask>> masks{
        {rect_mask(W, H, 10, 10, 16, 16)},
        {rect_mask(W, H, 40, 11, 46, 17), rect_mask(W, H, 8, 50, 14, 56)}};
    const auto clusters = associate_masks(masks, 0.05, 3.0, 4, 0.02);
    REQUIRE(clusters.size() == 2);
    int singles = 0;
    for (const auto& c : clusters) singles += c.members.size() == 1;
    CHECK(singles == 1);
}

TEST_CASE("area gate vetoes vertical coincidences") {
    const int W = 64, H = 64;
    std::vector<std::vector<InstanceMask>> masks{
        {rect_mask(W, H, 10, 10, 30, 30)},  // large
        {rect_mask(W, H, 40, 18, 42, 20)}}; // tiny, same height band
    const auto clusters = associate_masks(masks, 0.2, 3.0, 4, 0.02);
    CHECK(clusters.size() == 2);
}

TEST_CASE("mask touching the bottom band is the nucleation region") {
    const int W = 64, H = 64;
    std::vector<std::vector<InstanceMask>> masks{
        {rect_mask(W, H, 10, 58, 20, 63), rect_mask(W, H, 30, 10, 36, 16)}};
    const auto clusters = associate_masks(masks, 0.05, 3.0, 4, 0.05);
    REQUIRE(clusters.size() == 2);
    int nuc = 0;
    for (const auto& c : clusters) nuc += c.nucleation;
    CHECK(nuc == 1);

    BubbleTracker tracker;
    const auto ids = tracker.update(clusters, 0.2);
    bool has_zero = false;
    for (size_t c = 0; c < clusters.size(); ++c)
        if (clusters[c].nucleation) has_zero = ids[c] == 0;
    CHECK(has_zero);
}

TEST_CASE("tracker keeps identities across small motions and assigns fresh ids left to right") {
    const int W = 64, H = 64;
    BubbleTracker tracker;
    std::vector<std::vector<InstanceMask>> f0{
        {rect_mask(W, H, 8, 40, 14, 46), rect_mask(W, H, 40, 20, 46, 26)}};
    auto c0 = associate_masks(f0, 0.05, 3.0, 4, 0.0);
    const auto ids0 = tracker.update(c0, 0.2);
    REQUIRE(ids0.size() == 2);
    // Fresh ids ordered by horizontal position.
    const double x0 = c0[0].centroid_x_norm, x1 = c0[1].centroid_x_norm;
    if (x0 < x1) {
        CHECK(ids0[0] < ids0[1]);
    } else {
        CHECK(ids0[1] < ids0[0]);
    }

    // Move both up a little; ids must persist.
    std::vector<std::vector<InstanceMask>> f1{
        {rect_mask(W, H, 8, 36, 14, 42), rect_mask(W, H, 40, 16, 46, 22)}};
    auto c1 = associate_masks(f1, 0.05, 3.0, 4, 0.0);
    const auto ids1 = tracker.update(c1, 0.2);
    CHECK(((ids1[0] == ids0[0] && ids1[1] == ids0[1]) || (ids1[0] == ids0[1] && ids1[1] == ids0[0])));
}

TEST_CASE("binding assigns by mask projection and is idempotent") {
    const CameraModel cam = frontal_camera();
    std::vector<Surfel> surfels(3);
    surfels[0].position = {0, 0, 1};      // center pixel (32,32)
    surfels[1].position = {-0.2, 0, 1};   // pixel x = 32.5 - 16 -> left
    surfels[2].position = {0.35, 0, 1};   // projects outside the mask set
    std::vector<InstanceMask> masks{rect_mask(cam.width, cam.height, 28, 28, 36, 36, 4),
                                    rect_mask(cam.width, cam.height, 12, 28, 20, 36, 7)};
    std::vector<std::vector<InstanceMask>> labeled{masks};
    bind_surfels(surfels, labeled, {cam}, 4);
    CHECK(surfels[0].bubble_id == 4);
    CHECK(surfels[1].bubble_id == 7);
    CHECK(surfels[2].bubble_id == kUnassignedBubble);

    const auto snapshot = surfels;
    bind_surfels(surfels, labeled, {cam}, 4);
    for (size_t i = 0; i < surfels.size(); ++i) CHECK(surfels[i].bubble_id == snapshot[i].bubble_id);
}

TEST_CASE("binding walks views in order of decreasing valid-mask count") {
    const CameraModel cam0 = frontal_camera();
    CameraModel cam1 = cam0;
    cam1.id = "c1";
    std::vector<Surfel> surfels(1);
    surfels[0].position = {0, 0, 1};
    // View 0 has one mask covering the projection with id 9; view 1 has two
    // masks (more valid) and labels the same pixel id 2. View 1 must win.
    std::vector<std::vector<InstanceMask>> labeled{
        {rect_mask(cam0.width, cam0.height, 28, 28, 36, 36, 9)},
        {rect_mask(cam1.width, cam1.height, 28, 28, 36, 36, 2),
         rect_mask(cam1.width, cam1.height, 2, 2, 8, 8, 5)}};
    bind_surfels(surfels, labeled, {cam0, cam1}, 4);
    CHECK(surfels[0].bubble_id == 2);
}

TEST_CASE("bubble centroid follows the opacity-area weights") {
    std::vector<Surfel> surfels(2);
    surfels[0].position = {0, 0, 0};
    surfels[1].position = {2, 0, 0};
    surfels[0].bubble_id = surfels[1].bubble_id = 3;
    surfels[0].scale = surfels[1].scale = {0.02, 0.02};
    surfels[0].sdf = surfels[1].sdf = 0.0;
    const Vec3 c = bubble_centroid(surfels, 50.0, 3);
    CHECK(c.x == Catch::Approx(1.0));
    CHECK(c.y == 0.0);

    // Single member: its own position.
    surfels[1].bubble_id = 4;
    const Vec3 c1 = bubble_centroid(surfels, 50.0, 4);
    CHECK(c1.x == Catch::Approx(2.0));

    CHECK_THROWS_AS(bubble_centroid(surfels, 50.0, 99), Error);
}

TEST_CASE("mixed-weight centroid matches a direct evaluation") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Surfel> surfels(6);
    Vec3 num{};
    double den = 0;
    for (auto& s : surfels) {
        s.position = {u(rng), u(rng), u(rng)};
        s.scale = {0.01 + 0.05 * u(rng), 0.01 + 0.05 * u(rng)};
        s.sdf = 0.1 * (u(rng) - 0.5);
        s.bubble_id = 1;
        const double o = opacity_transform(s.sdf, 37.0);
        const double w = 1.0 / (1.0 + std::exp(-o)) * s.scale.x * s.scale.y;
        num += s.position * w;
        den += w;
    }
    const Vec3 expect = num / den;
    const Vec3 got = bubble_centroid(surfels, 37.0, 1);
    CHECK(norm(got - expect) < 1e-12);
}

TEST_CASE("centroid is exactly translation-equivariant") {
    std::mt19937_64 rng(17);
    auto surfels = random_scene(rng, 8);
    for (auto& s : surfels) s.bubble_id = 2;
    const Vec3 base = bubble_centroid(surfels, 40.0, 2);
    const Vec3 delta{0.125, -0.25, 0.5}; // exactly representable
    for (auto& s : surfels) s.position += delta;
    const Vec3 moved = bubble_centroid(surfels, 40.0, 2);
    CHECK(moved.x == base.x + delta.x);
    CHECK(moved.y == base.y + delta.y);
    CHECK(moved.z == base.z + delta.z);
}

TEST_CASE("bubble velocity finite differences and initial values") {
    const Vec3 init{0.07, 0.3, 0.0};
    CHECK(norm(bubble_velocity(Vec3{1, 1, 1}, Vec3{1, 1, 1}, 0.1, init)) == 0.0);
    const Vec3 v = bubble_velocity(Vec3{0, 0, 0}, Vec3{0, 0.01, 0}, 5e-4, init);
    CHECK(v.y == Catch::Approx(20.0));
    // No two prior centroids: configured initial velocity.
    const Vec3 v0 = bubble_velocity(std::nullopt, Vec3{0, 0, 0}, 0.1, init);
    CHECK(v0.x == 0.07);
    CHECK(v0.y == 0.3);
}

TEST_CASE("advect applies per-bubble, per-surfel, and zero velocities") {
    std::vector<Surfel> prev(3);
    prev[0].position = {1, 1, 1};
    prev[0].bubble_id = 2;
    prev[1].position = {0, 0, 0};
    prev[1].bubble_id = 0; // nucleation
    prev[2].position = {5, 5, 5};
    prev[2].bubble_id = kUnassignedBubble;
    std::map<int32_t, Vec3> u_b{{2, {0, 2, 0}}};
    std::vector<Vec3> v_prev{{9, 9, 9}, {0.1, 0, 0}, {9, 9, 9}};
    const auto next = advect(prev, u_b, v_prev, 0.5);
    CHECK(next[0].position.y == Catch::Approx(2.0));
    CHECK(next[1].position.x == Catch::Approx(0.05));
    CHECK(next[2].position.x == 5.0);

    // Non-position attributes are copied bit for bit.
    for (size_t i = 0; i < prev.size(); ++i) {
        CHECK(next[i].scale.x == prev[i].scale.x);
        CHECK(next[i].rotation.w == prev[i].rotation.w);
        CHECK(next[i].color.x == prev[i].color.x);
        CHECK(next[i].sdf == prev[i].sdf);
        CHECK(next[i].bubble_id == prev[i].bubble_id);
    }
}

TEST_CASE("estimate_velocities recovers rigid translation exactly") {
    std::mt19937_64 rng(19);
    SceneSequence seq;
    seq.dt = 0.25;
    seq.gamma = 45.0;
    auto frame = random_scene(rng, 5);
    // Dyadic base positions and a dyadic step keep every accumulated
    // position exact, so the finite differences are exact too.
    for (auto& s : frame) {
        s.bubble_id = 1;
        for (int c = 0; c < 3; ++c) s.position[c] = std::round(s.position[c] * 1024.0) / 1024.0;
    }
    const Vec3 delta{0.5, -0.25, 0.125};
    for (int t = 0; t < 4; ++t) {
        seq.frames.push_back(frame);
        for (auto& s : frame) s.position += delta;
    }
    estimate_velocities(seq);
    for (int t = 1; t < 4; ++t) {
        for (const Vec3& v : seq.surfel_velocities[static_cast<size_t>(t)]) {
            CHECK(v.x == delta.x / seq.dt);
            CHECK(v.y == delta.y / seq.dt);
            CHECK(v.z == delta.z / seq.dt);
        }
        const Vec3 vb = seq.bubble_velocity_series[static_cast<size_t>(t)].at(1);
        CHECK(vb.x == Catch::Approx(delta.x / seq.dt).margin(1e-12));
        CHECK(vb.y == Catch::Approx(delta.y / seq.dt).margin(1e-12));
    }

    // Static sequence: all zeros.
    SceneSequence still;
    still.dt = 0.1;
    still.frames = {seq.frames[0], seq.frames[0]};
    estimate_velocities(still);
    for (const Vec3& v : still.surfel_velocities[1]) CHECK(norm(v) == 0.0);

    // Count mismatch is an error.
    SceneSequence bad;
    bad.dt = 0.1;
    bad.frames = {seq.frames[0], std::vector<Surfel>(seq.frames[0].begin(), seq.frames[0].end() - 1)};
    CHECK_THROWS_AS(estimate_velocities(bad), Error);
}

TEST_CASE("centroid velocity equals the advection estimate one frame later for rigid motion") {
    // For rigid per-bubble motion, Eq.-style centroid differences match the
    // advection velocity shifted by one frame.
    std::mt19937_64 rng(23);
    auto frame = random_scene(rng, 6);
    for (auto& s : frame) s.bubble_id = 1;
    const double dt = 0.2;
    const Vec3 vel{0.3, 0.1, -0.05};
    SceneSequence seq;
    seq.dt = dt;
    seq.gamma = 50.0;
    for (int t = 0; t < 3; ++t) {
        seq.frames.push_back(frame);
        for (auto& s : frame) s.position += vel * dt;
    }
    estimate_velocities(seq);
    const Vec3 c0 = bubble_centroid(seq.frames[0], seq.gamma, 1);
    const Vec3 c1 = bubble_centroid(seq.frames[1], seq.gamma, 1);
    const Vec3 u_b = (c1 - c0) / dt; // advection estimate for frame 2
    const Vec3 v_b2 = seq.bubble_velocity_series[2].at(1);
    CHECK(norm(u_b - v_b2) < 1e-12);
}
