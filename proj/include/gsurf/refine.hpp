#pragma once

// Novel-view orbit construction and the pluggable video refiner hook. The
// hook stands in for any external generative model: identity passthrough, a
// Gaussian-blur blend as a structure-preserving built-in, or ingestion of
// externally produced frames.

#include <cmath>
#include <string>
#include <vector>

#include "gsurf/bubbles.hpp"
#include "gsurf/core.hpp"
#include "gsurf/image.hpp"

namespace gsurf {

// Weighted centroid of a whole frame (same weights as bubble centroids),
// used as the default orbit center.
inline Vec3 scene_center(const std::vector<Surfel>& surfels, double gamma) {
    Vec3 num{};
    double den = 0.0;
    for (const Surfel& s : surfels) {
        const double o = opacity_transform(s.sdf, gamma);
        const double w = 1.0 / (1.0 + std::exp(-o)) * s.scale.x * s.scale.y;
        num += s.position * w;
        den += w;
    }
    if (den <= 0.0) throw Error("empty_scene", "cannot find the center of an empty scene");
    return num / den;
}

// Cameras on a horizontal circle about `center`, starting at the reference
// camera's azimuth and stepping by `increment_deg`. Elevation and
// intrinsics are taken from the reference; every camera looks at `center`.
inline std::vector<CameraModel> orbit_cameras(const Vec3& center, double radius,
                                              const CameraModel& reference, int count,
                                              double increment_deg) {
    if (!(radius > 0)) throw Error("bad_radius", "orbit radius must be positive");
    if (count < 1) throw Error("bad_count", "orbit needs at least one camera");
    const Vec3 ref_pos = reference.position();
    const double azimuth0 = std::atan2(ref_pos.z - center.z, ref_pos.x - center.x);
    const double dy = ref_pos.y - center.y;

    std::vector<CameraModel> cams;
    for (int k = 0; k < count; ++k) {
        const double az = azimuth0 + k * increment_deg * M_PI / 180.0;
        const Vec3 eye = center + Vec3{radius * std::cos(az), dy, radius * std::sin(az)};
        CameraModel cam;
        cam.id = "orbit" + std::to_string(k + 1);
        cam.fx = reference.fx;
        cam.fy = reference.fy;
        cam.cx = reference.cx;
        cam.cy = reference.cy;
        cam.width = reference.width;
        cam.height = reference.height;
        const Vec3 fwd = normalized(center - eye);
        Vec3 up{0, 1, 0};
        if (std::abs(dot(fwd, up)) > 0.999) up = Vec3{1, 0, 0};
        const Vec3 right = normalized(cross(fwd, up));
        const Vec3 down = cross(fwd, right);
        for (int c = 0; c < 3; ++c) {
            cam.rotation(0, c) = right[c];
            cam.rotation(1, c) = down[c];
            cam.rotation(2, c) = fwd[c];
        }
        cam.translation = -(cam.rotation * eye);
        cam.validate();
        cams.push_back(std::move(cam));
    }
    return cams;
}

// Views in the first/last quarter of the orbit count as near the input
// cameras; with the default S = 11 that reproduces {1,2,3,9,10,11}.
inline bool orbit_view_is_near(int index_zero_based, int count) {
    const int near_band = (count + 3) / 4; // ceil(count / 4)
    return std::min(index_zero_based, count - 1 - index_zero_based) < near_band;
}

enum class RefinerKind { Identity, GaussianDenoise, External };

struct RefinerHook {
    RefinerKind kind = RefinerKind::Identity;
    double strength = 0.0;     // blend weight for the built-in denoiser
    std::string external_dir;  // frame source for RefinerKind::External
};

inline Image3 gaussian_blur(const Image3& img, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    for (int i = -radius; i <= radius; ++i)
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    Image3 tmp(img.width, img.height), out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double sum = 0, wsum = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int xx = x + i;
                    if (xx < 0 || xx >= img.width) continue;
                    sum += k[static_cast<size_t>(i + radius)] * img(xx, y, c);
                    wsum += k[static_cast<size_t>(i + radius)];
                }
                tmp(x, y, c) = sum / wsum;
            }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double sum = 0, wsum = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int yy = y + i;
                    if (yy < 0 || yy >= img.height) continue;
                    sum += k[static_cast<size_t>(i + radius)] * tmp(x, yy, c);
                    wsum += k[static_cast<size_t>(i + radius)];
                }
                out(x, y, c) = sum / wsum;
            }
    return out;
}

// Applies the hook to one frame. Identity returns the input bit for bit;
// the denoiser blends toward a sigma = 1.5 px Gaussian blur by `strength`.
// External frames are supplied by the caller (they come off disk) and are
// validated against the rough frame's dimensions.
inline Image3 refine_frame(const Image3& rough, const RefinerHook& hook, double strength,
                           const Image3* external_frame = nullptr) {
    switch (hook.kind) {
        case RefinerKind::Identity:
            return rough;
        case RefinerKind::GaussianDenoise: {
            if (strength == 0.0) return rough;
            const Image3 blurred = gaussian_blur(rough, 1.5);
            Image3 out = rough;
            for (size_t i = 0; i < out.data.size(); ++i)
                out.data[i] = (1.0 - strength) * rough.data[i] + strength * blurred.data[i];
            return out;
        }
        case RefinerKind::External: {
            if (!external_frame) throw Error("frame_count_mismatch", "missing external frame");
            if (external_frame->width != rough.width || external_frame->height != rough.height)
                throw Error("dimension_mismatch", "external frame dimensions differ from rough video");
            return *external_frame;
        }
    }
    throw Error("internal", "unhandled refiner kind");
}

}  // namespace gsurf
