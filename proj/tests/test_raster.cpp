#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gsurf/raster.hpp"
#include "gsurf/threading.hpp"
#include "support/raster_oracle.hpp"
#include "support/scenes.hpp"

using namespace gsurf;
using namespace gsurf::testing;

TEST_CASE("background pixels stay empty") {
    std::vector<Surfel> scene(1);
    scene[0].position = {0, 0, 1};
    scene[0].scale = {0.01, 0.01};
    scene[0].color = {1, 0, 0};
    const CameraModel cam = frontal_camera();
    const RenderBuffers rb = render(scene, 50.0, cam);
    CHECK(rb.color(0, 0, 0) == 0.0);
    CHECK(rb.color(0, 0, 1) == 0.0);
    CHECK(rb.alpha(0, 0) == 0.0);
    CHECK_FALSE(rb.valid(0, 0));
}

TEST_CASE("peak of a fronto-parallel zero-SDF surfel saturates its pixel") {
    // Camera principal point at the center of pixel (32, 32).
    const CameraModel cam = frontal_camera();
    std::vector<Surfel> scene(1);
    scene[0].position = {0, 0, 1};
    scene[0].scale = {0.05, 0.05};
    scene[0].rotation = Quat{1, 0, 0, 0};
    scene[0].color = {0.2, 0.6, 0.9};
    scene[0].sdf = 0.0;
    const RenderBuffers rb = render(scene, 50.0, cam);
    CHECK(rb.alpha(32, 32) == 1.0);
    CHECK(rb.color(32, 32, 0) == 0.2);
    CHECK(rb.color(32, 32, 1) == 0.6);
    CHECK(rb.color(32, 32, 2) == 0.9);
    CHECK(rb.depth(32, 32) == 1.0);
    // Normal flipped toward the camera.
    CHECK(rb.normal(32, 32, 2) == Catch::Approx(-1.0));
}

TEST_CASE("ray parallel to a surfel plane is skipped") {
    const CameraModel cam = frontal_camera();
    std::vector<Surfel> scene(1);
    scene[0].position = {0, 0, 1};
    scene[0].scale = {0.05, 0.05};
    // Normal along +x: the optical-axis ray lies in the plane.
    const double c = std::cos(M_PI / 4), s = std::sin(M_PI / 4);
    scene[0].rotation = Quat{c, 0, s, 0}; // 90 degrees about y
    const RenderBuffers rb = render(scene, 50.0, cam);
    CHECK(rb.alpha(32, 32) == 0.0);
}

TEST_CASE("two stacked surfels composite front to back") {
    const CameraModel cam = frontal_camera();
    std::vector<Surfel> scene(2);
    scene[0].position = {0, 0, 1.2};
    scene[0].scale = {0.08, 0.08};
    scene[0].color = {0, 1, 0};
    scene[0].sdf = 0.01;
    scene[1].position = {0, 0, 1.0};
    scene[1].scale = {0.08, 0.08};
    scene[1].color = {1, 0, 0};
    scene[1].sdf = 0.02;
    const double gamma = 40.0;
    const RenderBuffers rb = render(scene, gamma, cam);
    // Hand-computed blend at the shared peak pixel.
    const double a_front = opacity_transform(0.02, gamma);
    const double a_back = opacity_transform(0.01, gamma);
    const double expect_r = a_front;
    const double expect_g = a_back * (1 - a_front);
    CHECK(rb.color(32, 32, 0) == Catch::Approx(expect_r).margin(1e-12));
    CHECK(rb.color(32, 32, 1) == Catch::Approx(expect_g).margin(1e-12));
    CHECK(rb.depth(32, 32) ==
          Catch::Approx(1.0 * a_front + 1.2 * a_back * (1 - a_front)).margin(1e-12));
}

TEST_CASE("tiled render is bit-identical to the serial semantic oracle") {
    std::mt19937_64 rng(1234);
    for (int trial = 0; trial < 10; ++trial) {
        const auto scene = random_scene(rng, 2 + trial % 7);
        const CameraModel cam = frontal_camera();
        const double gamma = 20.0 + 10.0 * (trial % 5);
        set_thread_count(1 + trial % 4);
        const RenderBuffers tiled = render(scene, gamma, cam);
        const OracleResult oracle = render_oracle(scene, gamma, cam, OracleKernel::Semantic);
        REQUIRE(tiled.color.data == oracle.rb.color.data);
        REQUIRE(tiled.depth.data == oracle.rb.depth.data);
        REQUIRE(tiled.normal.data == oracle.rb.normal.data);
        REQUIRE(tiled.alpha.data == oracle.rb.alpha.data);
    }
    set_thread_count(2);
}

TEST_CASE("tiled render matches the untruncated oracle where truncated mass is small") {
    std::mt19937_64 rng(4321);
    long compared = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const auto scene = random_scene(rng, 3 + trial % 5);
        const CameraModel cam = frontal_camera();
        const double gamma = 25.0 + 7.0 * trial;
        const RenderBuffers tiled = render(scene, gamma, cam);
        const OracleResult pure = render_oracle(scene, gamma, cam, OracleKernel::Pure);
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                if (pure.discarded(x, y) >= 1e-6) continue;
                ++compared;
                for (int c = 0; c < 3; ++c)
                    REQUIRE(std::abs(tiled.color(x, y, c) - pure.rb.color(x, y, c)) < 1e-6);
                REQUIRE(std::abs(tiled.depth(x, y) - pure.rb.depth(x, y)) < 1e-6);
                REQUIRE(std::abs(tiled.alpha(x, y) - pure.rb.alpha(x, y)) < 1e-6);
            }
    }
    CHECK(compared > 1000);
}

TEST_CASE("alpha never increases when |f| grows") {
    std::mt19937_64 rng(77);
    const auto base = random_scene(rng, 4);
    const CameraModel cam = frontal_camera(48, 48, 60.0);
    const double gamma = 35.0;
    const RenderBuffers rb0 = render(base, gamma, cam);
    for (size_t i = 0; i < base.size(); ++i) {
        for (double push : {0.01, 0.05, 0.2}) {
            auto scene = base;
            scene[i].sdf += scene[i].sdf >= 0 ? push : -push;
            const RenderBuffers rb1 = render(scene, gamma, cam);
            for (size_t p = 0; p < rb0.alpha.data.size(); ++p)
                REQUIRE(rb1.alpha.data[p] <= rb0.alpha.data[p] + 1e-12);
        }
    }
}

TEST_CASE("render rejects invalid inputs") {
    const CameraModel cam = frontal_camera();
    std::vector<Surfel> scene(1);
    scene[0].position = {0, 0, 1};
    CHECK_THROWS_AS(render(scene, 0.0, cam), Error);
    CHECK_THROWS_AS(render({}, 10.0, cam), Error);
}

TEST_CASE("zero upstream gradients give zero parameter gradients") {
    std::mt19937_64 rng(55);
    const auto scene = random_scene(rng, 5);
    const CameraModel cam = frontal_camera();
    UpstreamGradients up(cam);
    GradientBuffers gb;
    render_backward(scene, 30.0, cam, up, gb);
    for (size_t i = 0; i < scene.size(); ++i) {
        CHECK(norm(gb.d_position[i]) == 0.0);
        CHECK(gb.d_scale[i].x == 0.0);
        CHECK(gb.d_sdf[i] == 0.0);
    }
    CHECK(gb.d_gamma == 0.0);
}

TEST_CASE("alpha loss gradient w.r.t. sdf opposes the sdf sign") {
    // L = alpha at the peak pixel; opacity is even and peaked at f = 0, so
    // dL/df must have the opposite sign of f.
    const CameraModel cam = frontal_camera();
    for (double f : {0.02, -0.02, 0.05, -0.05}) {
        std::vector<Surfel> scene(1);
        scene[0].position = {0, 0, 1};
        scene[0].scale = {0.05, 0.05};
        scene[0].sdf = f;
        UpstreamGradients up(cam);
        up.d_alpha(32, 32) = 1.0;
        GradientBuffers gb;
        render_backward(scene, 40.0, cam, up, gb);
        if (f > 0)
            CHECK(gb.d_sdf[0] < 0.0);
        else
            CHECK(gb.d_sdf[0] > 0.0);
        // Against a central finite difference.
        const double h = 1e-5;
        auto alpha_at = [&](double fv) {
            auto s = scene;
            s[0].sdf = fv;
            return render(s, 40.0, cam).alpha(32, 32);
        };
        const double fd = (alpha_at(f + h) - alpha_at(f - h)) / (2 * h);
        CHECK(gb.d_sdf[0] == Catch::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("depth_to_normal on a constant-depth plane") {
    const CameraModel cam = frontal_camera(32, 32, 40.0);
    Image1 depth(32, 32, 2.0), alpha(32, 32, 1.0);
    const NormalsFromDepth nd = depth_to_normal(depth, alpha, cam);
    for (int y = 2; y < 30; ++y)
        for (int x = 2; x < 30; ++x) {
            REQUIRE(nd.valid[static_cast<size_t>(y) * 32 + x] == 1);
            CHECK(nd.normal(x, y, 0) == Catch::Approx(0).margin(1e-12));
            CHECK(nd.normal(x, y, 1) == Catch::Approx(0).margin(1e-12));
            CHECK(nd.normal(x, y, 2) == Catch::Approx(-1).margin(1e-12));
        }
    // Border pixels have no full neighborhood.
    CHECK(nd.valid[0] == 0);
}

TEST_CASE("depth_to_normal on a ramp matches the analytic plane normal") {
    const CameraModel cam = frontal_camera(32, 32, 40.0);
    const double z0 = 2.0, k = 0.3;
    Image1 depth(32, 32), alpha(32, 32, 1.0);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const double a = (x + 0.5 - cam.cx) / cam.fx; // world plane z = z0 + k x
            depth(x, y) = z0 / (1.0 - k * a);
        }
    const NormalsFromDepth nd = depth_to_normal(depth, alpha, cam);
    const double nrm = std::sqrt(1.0 + k * k);
    for (int y = 4; y < 28; ++y)
        for (int x = 4; x < 28; ++x) {
            REQUIRE(nd.valid[static_cast<size_t>(y) * 32 + x] == 1);
            CHECK(nd.normal(x, y, 0) == Catch::Approx(k / nrm).margin(2e-3));
            CHECK(nd.normal(x, y, 1) == Catch::Approx(0).margin(2e-3));
            CHECK(nd.normal(x, y, 2) == Catch::Approx(-1 / nrm).margin(2e-3));
        }
}

TEST_CASE("isolated valid depth pixel yields no normal") {
    const CameraModel cam = frontal_camera(16, 16, 20.0);
    Image1 depth(16, 16, 1.0), alpha(16, 16, 0.0);
    alpha(8, 8) = 1.0;
    const NormalsFromDepth nd = depth_to_normal(depth, alpha, cam);
    for (size_t i = 0; i < nd.valid.size(); ++i) CHECK(nd.valid[i] == 0);
}

TEST_CASE("render is reproducible across thread counts") {
    std::mt19937_64 rng(101);
    const auto scene = random_scene(rng, 12);
    const CameraModel cam = frontal_camera(96, 80, 90.0);
    set_thread_count(1);
    const RenderBuffers a = render(scene, 45.0, cam);
    set_thread_count(4);
    const RenderBuffers b = render(scene, 45.0, cam);
    set_thread_count(2);
    REQUIRE(a.color.data == b.color.data);
    REQUIRE(a.depth.data == b.depth.data);
    REQUIRE(a.normal.data == b.normal.data);
    REQUIRE(a.alpha.data == b.alpha.data);
}
