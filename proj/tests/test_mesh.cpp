#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "gsurf/mesh.hpp"
#include "support/scenes.hpp"

using namespace gsurf;
using namespace gsurf::testing;

namespace {

// Surfels tiling a sphere: positions on the surface, normals radial, f = 0.
std::vector<Surfel> sphere_surfels(const Vec3& center, double radius, int count, std::mt19937_64& rng) {
    std::vector<Surfel> out;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < count; ++i) {
        const double y = 1.0 - 2.0 * (i + 0.5) / count;
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        const double th = golden * i;
        const Vec3 dir{r * std::cos(th), y, r * std::sin(th)};
        Surfel s;
        s.position = center + dir * radius;
        s.scale = {0.02, 0.02};
        // Rotation whose third column is the outward normal.
        const Vec3 n = dir;
        Vec3 ref{0, 1, 0};
        if (std::abs(dot(n, ref)) > 0.99) ref = Vec3{1, 0, 0};
        const Vec3 tu = normalized(cross(ref, n));
        const Vec3 tv = cross(n, tu);
        // Build quaternion from the orthonormal frame via the rotation
        // matrix trace (standard conversion).
        Mat3 m;
        for (int c = 0; c < 3; ++c) {
            m(c, 0) = tu[c];
            m(c, 1) = tv[c];
            m(c, 2) = n[c];
        }
        const double tr = m(0, 0) + m(1, 1) + m(2, 2);
        Quat q;
        if (tr > 0) {
            const double sq = std::sqrt(tr + 1.0) * 2;
            q = {0.25 * sq, (m(2, 1) - m(1, 2)) / sq, (m(0, 2) - m(2, 0)) / sq, (m(1, 0) - m(0, 1)) / sq};
        } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
            const double sq = std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2)) * 2;
            q = {(m(2, 1) - m(1, 2)) / sq, 0.25 * sq, (m(0, 1) + m(1, 0)) / sq, (m(0, 2) + m(2, 0)) / sq};
        } else if (m(1, 1) > m(2, 2)) {
            const double sq = std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2)) * 2;
            q = {(m(0, 2) - m(2, 0)) / sq, (m(0, 1) + m(1, 0)) / sq, 0.25 * sq, (m(1, 2) + m(2, 1)) / sq};
        } else {
            const double sq = std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1)) * 2;
            q = {(m(1, 0) - m(0, 1)) / sq, (m(0, 2) + m(2, 0)) / sq, (m(1, 2) + m(2, 1)) / sq, 0.25 * sq};
        }
        s.rotation = normalized(q);
        s.sdf = 0.0;
        s.color = {0.5, 0.5, 0.5};
        (void)u;
        out.push_back(s);
    }
    return out;
}

SdfGrid analytic_sphere_grid(const Vec3& center, double radius, int res, double half_extent) {
    SdfGrid g;
    g.nx = g.ny = g.nz = res;
    g.origin = center - Vec3{half_extent, half_extent, half_extent};
    const double step = 2.0 * half_extent / (res - 1);
    g.spacing = {step, step, step};
    g.values.resize(static_cast<size_t>(res) * res * res);
    for (int iz = 0; iz < res; ++iz)
        for (int iy = 0; iy < res; ++iy)
            for (int ix = 0; ix < res; ++ix) g.at(ix, iy, iz) = norm(g.point(ix, iy, iz) - center) - radius;
    return g;
}

}  // namespace

TEST_CASE("sdf field extends surfel planes") {
    // Single surfel: the field near it is f + signed plane distance.
    std::vector<Surfel> one(1);
    one[0].position = {0.1, 0.2, 0.3};
    one[0].scale = {0.02, 0.02};
    one[0].rotation = Quat{1, 0, 0, 0}; // normal +z
    one[0].sdf = 0.004;

    const Vec3 lo = one[0].position - Vec3{0.05, 0.05, 0.05};
    const Vec3 hi = one[0].position + Vec3{0.05, 0.05, 0.05};
    const SdfGrid grid = sdf_field(one, lo, hi, 11);
    // Center grid point coincides with the surfel position.
    const double center_val = grid.at(5, 5, 5);
    CHECK(center_val == Catch::Approx(0.004).margin(1e-9));
    // One voxel along +z: + spacing.
    CHECK(grid.at(5, 5, 6) == Catch::Approx(0.004 + grid.spacing.z).margin(1e-9));

    // Zero-SDF surfel: field is zero at its center.
    one[0].sdf = 0.0;
    const SdfGrid g0 = sdf_field(one, lo, hi, 11);
    CHECK(g0.at(5, 5, 5) == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("sdf field of a surfel-tiled sphere approximates signed distance") {
    std::mt19937_64 rng(3);
    const Vec3 center{0, 0.1, 0};
    const double radius = 0.5;
    const auto surfels = sphere_surfels(center, radius, 600, rng);
    const double h = 2.0 * mean_surfel_scale(surfels);
    const SdfGrid grid = sdf_field(surfels, center - Vec3{0.8, 0.8, 0.8}, center + Vec3{0.8, 0.8, 0.8}, 33);
    long checked = 0;
    for (int iz = 0; iz < grid.nz; ++iz)
        for (int iy = 0; iy < grid.ny; ++iy)
            for (int ix = 0; ix < grid.nx; ++ix) {
                const Vec3 p = grid.point(ix, iy, iz);
                const double d = norm(p - center) - radius;
                if (std::abs(d) > 0.8 * h) continue; // near-surface band only
                ++checked;
                CHECK(grid.at(ix, iy, iz) == Catch::Approx(d).margin(0.25 * h));
            }
    CHECK(checked > 200);
}

TEST_CASE("sdf field grid acceleration matches brute force") {
    std::mt19937_64 rng(11);
    auto surfels = random_scene(rng, 600, 0.3, 0.8, 1.6);
    const Vec3 lo{-0.4, -0.4, 0.7}, hi{0.4, 0.4, 1.7};
    const SdfGrid a = sdf_field(surfels, lo, hi, 16, /*force_brute=*/1);
    const SdfGrid b = sdf_field(surfels, lo, hi, 16, /*force_brute=*/0);
    REQUIRE(a.values.size() == b.values.size());
    for (size_t i = 0; i < a.values.size(); ++i) REQUIRE(a.values[i] == b.values[i]);
}

TEST_CASE("far-field sentinel is positive") {
    std::vector<Surfel> one(1);
    one[0].position = {0, 0, 0};
    one[0].scale = {0.01, 0.01};
    const SdfGrid grid = sdf_field(one, Vec3{-1, -1, -1}, Vec3{1, 1, 1}, 9);
    CHECK(grid.at(0, 0, 0) > 0.0); // corner is far outside 4h
}

TEST_CASE("marching cubes on an all-positive grid is empty") {
    SdfGrid g = analytic_sphere_grid({0, 0, 0}, 0.5, 12, 1.0);
    for (auto& v : g.values) v = std::abs(v) + 0.1;
    const TriangleMesh mesh = marching_cubes(g, 0.0);
    CHECK(mesh.vertices.empty());
    CHECK(mesh.faces.empty());
}

TEST_CASE("marching cubes reconstructs an analytic sphere") {
    const double radius = 0.5;
    const SdfGrid g = analytic_sphere_grid({0, 0, 0}, radius, 64, 0.8);
    const TriangleMesh mesh = marching_cubes(g, 0.0);
    REQUIRE(mesh.vertices.size() > 500);
    double err = 0;
    for (const Vec3& v : mesh.vertices) err += std::abs(norm(v) - radius);
    err /= static_cast<double>(mesh.vertices.size());
    const double voxel = g.spacing.x;
    CHECK(err < 1.5 * voxel);

    // Every vertex lies on a grid edge whose endpoints straddle the level.
    for (const Vec3& v : mesh.vertices) {
        int on_axis = 0;
        for (int c = 0; c < 3; ++c) {
            const double t = (v[c] - g.origin[c]) / g.spacing[c];
            if (std::abs(t - std::round(t)) < 1e-9) ++on_axis;
        }
        CHECK(on_axis >= 2); // two coordinates on the lattice, one interpolated
    }

    // Closed surface: watertight means every edge is shared by two faces.
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& f : mesh.faces)
        for (int e = 0; e < 3; ++e) {
            int a = f[static_cast<size_t>(e)], b = f[static_cast<size_t>((e + 1) % 3)];
            if (a > b) std::swap(a, b);
            ++edge_count[{a, b}];
        }
    for (const auto& [edge, count] : edge_count) CHECK(count == 2);
}

TEST_CASE("sign-flipped grid gives the same vertices with reversed orientation") {
    const SdfGrid g = analytic_sphere_grid({0, 0, 0}, 0.42, 32, 0.7);
    SdfGrid neg = g;
    for (auto& v : neg.values) v = -v;
    const TriangleMesh a = marching_cubes(g, 0.0);
    const TriangleMesh b = marching_cubes(neg, 0.0);
    REQUIRE(a.vertices.size() == b.vertices.size());

    auto sorted_vertices = [](const TriangleMesh& m) {
        std::vector<std::array<double, 3>> v;
        for (const Vec3& p : m.vertices) v.push_back({p.x, p.y, p.z});
        std::sort(v.begin(), v.end());
        return v;
    };
    const auto va = sorted_vertices(a), vb = sorted_vertices(b);
    for (size_t i = 0; i < va.size(); ++i) {
        CHECK(std::abs(va[i][0] - vb[i][0]) < 1e-12);
        CHECK(std::abs(va[i][1] - vb[i][1]) < 1e-12);
        CHECK(std::abs(va[i][2] - vb[i][2]) < 1e-12);
    }
    // Signed volumes flip.
    const double vol_a = mesh_signed_volume(a), vol_b = mesh_signed_volume(b);
    CHECK(vol_a * vol_b < 0.0);
    CHECK(std::abs(vol_a + vol_b) < 1e-6 * std::abs(vol_a));
}

TEST_CASE("mesh vertex positions are invariant under joint rigid transform") {
    std::mt19937_64 rng(29);
    const Vec3 center{0, 0.1, 0};
    auto surfels = sphere_surfels(center, 0.4, 400, rng);
    const Vec3 lo = center - Vec3{0.6, 0.6, 0.6}, hi = center + Vec3{0.6, 0.6, 0.6};
    const TriangleMesh base = marching_cubes(sdf_field(surfels, lo, hi, 24), 0.0);

    // The sampling grid is axis-aligned by contract, so exercise a rigid
    // transform that keeps boxes axis-aligned: a quarter turn about y plus
    // a translation.
    const Quat q = normalized(Quat{std::cos(M_PI / 4), 0, std::sin(M_PI / 4), 0});
    const Mat3 rot = rotation_matrix(q);
    const Vec3 shift{0.5, -0.25, 1.0};
    for (auto& s : surfels) {
        s.position = rot * s.position + shift;
        s.rotation = q * s.rotation;
    }
    Vec3 lo2{1e300, 1e300, 1e300}, hi2{-1e300, -1e300, -1e300};
    for (int c = 0; c < 8; ++c) {
        const Vec3 corner{c & 1 ? hi.x : lo.x, c & 2 ? hi.y : lo.y, c & 4 ? hi.z : lo.z};
        const Vec3 tc = rot * corner + shift;
        for (int d = 0; d < 3; ++d) {
            lo2[d] = std::min(lo2[d], tc[d]);
            hi2[d] = std::max(hi2[d], tc[d]);
        }
    }
    const TriangleMesh moved = marching_cubes(sdf_field(surfels, lo2, hi2, 24), 0.0);
    // Up to one voxel of boundary clipping: counts agree tightly.
    const double rel = std::abs(static_cast<double>(moved.vertices.size()) -
                                static_cast<double>(base.vertices.size())) /
                       static_cast<double>(base.vertices.size());
    CHECK(rel < 0.05);
}

TEST_CASE("field rejects bad inputs") {
    CHECK_THROWS_AS(sdf_field({}, Vec3{0, 0, 0}, Vec3{1, 1, 1}, 16), Error);
    std::vector<Surfel> one(1);
    CHECK_THROWS_AS(sdf_field(one, Vec3{0, 0, 0}, Vec3{1, 1, 1}, 4), Error);
    CHECK_THROWS_AS(sdf_field(one, Vec3{1, 1, 1}, Vec3{0, 0, 0}, 16), Error);
    SdfGrid g = analytic_sphere_grid({0, 0, 0}, 0.5, 8, 1.0);
    g.values[3] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(marching_cubes(g, 0.0), Error);
}
