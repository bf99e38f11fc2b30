#pragma once

// Per-frame optimization: the combined appearance + geometry loss with its
// reverse pass, Adam updates of all surfel attributes and gamma, frame-0
// visual-hull initialization, and densification/pruning.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "gsurf/adam.hpp"
#include "gsurf/losses.hpp"
#include "gsurf/metrics.hpp"
#include "gsurf/raster.hpp"

namespace gsurf {

struct SupervisedView {
    const CameraModel* camera = nullptr;
    const Image3* target = nullptr;
    double weight = 1.0;
};

struct LossBreakdown {
    double total = 0, l1 = 0, ssim = 0, normal = 0, gamma_hinge = 0, projection = 0;
};

// Evaluates the full loss
//   lambda_app * sum_c w_c (L1 + L_SSIM) + lambda_geo * (mean_c L_n + mean_c L_p + L_gamma)
// over the supervising views, and (when `gb` is non-null) accumulates exact
// gradients w.r.t. every surfel attribute and gamma. Views with zero weight
// must be dropped by the caller; all listed views supervise both appearance
// and geometry.
inline LossBreakdown evaluate_losses(const std::vector<Surfel>& surfels, double gamma,
                                     const std::vector<SupervisedView>& views,
                                     const ReconstructionConfig& cfg, GradientBuffers* gb) {
    if (views.empty()) throw Error("no_views", "loss evaluation requires at least one view");
    LossBreakdown lb;
    if (gb) gb->resize(surfels.size());
    const double inv_views = 1.0 / static_cast<double>(views.size());

    for (const SupervisedView& view : views) {
        const CameraModel& cam = *view.camera;
        const RenderBuffers rb = render(surfels, gamma, cam);
        UpstreamGradients up(cam);

        const double wc = view.weight * cfg.lambda_app;
        const double l1 = image_l1_grad(*view.target, rb.color, up.d_color, wc);
        const double ls = ssim_loss_grad(*view.target, rb.color, up.d_color, wc);
        lb.l1 += view.weight * l1;
        lb.ssim += view.weight * ls;

        const NormalConsistencyResult nc =
            normal_consistency_loss(rb, cam, gb ? &up : nullptr, cfg.lambda_geo * inv_views);
        lb.normal += inv_views * nc.loss;

        const ProjectionLossStats pl = projection_loss(surfels, cam, rb.depth, cfg.epsilon_proj, gb,
                                                       gb ? &up : nullptr, cfg.lambda_geo * inv_views);
        lb.projection += inv_views * pl.loss;

        if (gb) render_backward(surfels, gamma, cam, up, *gb);
    }

    // Median-targeted sharpness hinge; the target keeps its dependence on
    // the SDF samples that realize the median.
    std::vector<double> sdf(surfels.size());
    for (size_t i = 0; i < surfels.size(); ++i) sdf[i] = surfels[i].sdf;
    const TargetGammaGrad tg = target_gamma_grad(sdf);
    const HingeGrad hinge = gamma_hinge_loss_grad(gamma, tg.value);
    lb.gamma_hinge = hinge.value;
    if (gb) {
        gb->d_gamma += cfg.lambda_geo * hinge.d_gamma;
        for (auto [idx, dg] : tg.d_sdf) gb->d_sdf[idx] += cfg.lambda_geo * hinge.d_gamma_m * dg;
    }

    lb.total = cfg.lambda_app * (lb.l1 + lb.ssim) +
               cfg.lambda_geo * (lb.normal + lb.projection + lb.gamma_hinge);

    const double terms[] = {lb.l1, lb.ssim, lb.normal, lb.projection, lb.gamma_hinge};
    const char* names[] = {"l1", "ssim", "normal_consistency", "projection", "gamma_hinge"};
    for (int i = 0; i < 5; ++i)
        if (!std::isfinite(terms[i]))
            throw Error("non_finite_loss", std::string("non-finite loss term: ") + names[i]);
    return lb;
}

// Running mean of positional gradient norms, used by densification.
struct GradStats {
    std::vector<double> accum_norm;
    long steps = 0;

    void resize(size_t n) {
        accum_norm.assign(n, 0.0);
        steps = 0;
    }
    void add(const GradientBuffers& gb) {
        for (size_t i = 0; i < gb.d_position.size(); ++i) accum_norm[i] += norm(gb.d_position[i]);
        ++steps;
    }
    double mean_norm(size_t i) const { return steps ? accum_norm[i] / static_cast<double>(steps) : 0.0; }
};

// Runs `iterations` Adam steps. The position learning rate is multiplied by
// an exponential ramp from 1 to lr_position_final over the schedule when
// lr_position_final < 1 (the frame-0 schedule); pass 1.0 for later frames.
inline std::vector<LossBreakdown> optimize_frame(std::vector<Surfel>& surfels, double& gamma,
                                                 const std::vector<SupervisedView>& views,
                                                 const ReconstructionConfig& cfg, AdamState& adam,
                                                 int iterations, double lr_position_final = 1.0,
                                                 GradStats* stats = nullptr) {
    std::vector<LossBreakdown> trace;
    if (iterations <= 0) return trace;
    trace.reserve(static_cast<size_t>(iterations));
    GradientBuffers gb;

    for (int it = 0; it < iterations; ++it) {
        trace.push_back(evaluate_losses(surfels, gamma, views, cfg, &gb));
        if (stats) stats->add(gb);

        const double ramp = iterations > 1
                                ? std::exp(std::log(std::max(lr_position_final, 1e-12)) *
                                           static_cast<double>(it) / static_cast<double>(iterations - 1))
                                : 1.0;
        const double lr_pos = cfg.lr_position * (lr_position_final < 1.0 ? ramp : 1.0);

        const int64_t tp = ++adam.position.step;
        const int64_t ts = ++adam.scale.step;
        const int64_t tr = ++adam.rotation.step;
        const int64_t tc = ++adam.color.step;
        const int64_t tf = ++adam.sdf.step;
        const int64_t tg = ++adam.gamma.step;
        for (size_t i = 0; i < surfels.size(); ++i) {
            Surfel& s = surfels[i];
            for (int d = 0; d < 3; ++d)
                s.position[d] += adam_delta(adam.position, i * 3 + static_cast<size_t>(d), gb.d_position[i][d],
                                            lr_pos, adam.beta1, adam.beta2, adam.eps, tp);
            for (int d = 0; d < 2; ++d)
                s.scale[d] += adam_delta(adam.scale, i * 2 + static_cast<size_t>(d), gb.d_scale[i][d],
                                         cfg.lr_scale, adam.beta1, adam.beta2, adam.eps, ts);
            for (int d = 0; d < 4; ++d)
                s.rotation[d] += adam_delta(adam.rotation, i * 4 + static_cast<size_t>(d),
                                            gb.d_rotation[i][static_cast<size_t>(d)], cfg.lr_rotation,
                                            adam.beta1, adam.beta2, adam.eps, tr);
            for (int d = 0; d < 3; ++d)
                s.color[d] += adam_delta(adam.color, i * 3 + static_cast<size_t>(d), gb.d_color[i][d],
                                         cfg.lr_color, adam.beta1, adam.beta2, adam.eps, tc);
            s.sdf += adam_delta(adam.sdf, i, gb.d_sdf[i], cfg.lr_sdf, adam.beta1, adam.beta2, adam.eps, tf);

            s.rotation = normalized(s.rotation);
            s.scale.x = std::clamp(s.scale.x, cfg.scale_clamp_min, cfg.scale_clamp_max);
            s.scale.y = std::clamp(s.scale.y, cfg.scale_clamp_min, cfg.scale_clamp_max);
            for (int d = 0; d < 3; ++d) s.color[d] = std::clamp(s.color[d], 0.0, 1.0);
        }
        gamma += adam_delta(adam.gamma, 0, gb.d_gamma, cfg.lr_gamma, adam.beta1, adam.beta2, adam.eps, tg);
        gamma = std::max(gamma, 1e-6);
    }
    return trace;
}

struct InitResult {
    std::vector<Surfel> surfels;
    bool hull_empty = false;
};

// Frame-0 seeding by visual-hull carving: uniform candidates in the scene
// bounds, kept when their projection lands inside a foreground mask in
// every view. Falls back to plain uniform sampling when the hull is empty.
inline InitResult initialize_frame0(const std::vector<std::vector<InstanceMask>>& masks_per_view,
                                    const std::vector<CameraModel>& cameras, const Vec3& bounds_lo,
                                    const Vec3& bounds_hi, const ReconstructionConfig& cfg,
                                    std::mt19937_64& rng) {
    if (cameras.empty()) throw Error("no_views", "initialization requires at least one camera");
    bool any_mask = false;
    for (const auto& vm : masks_per_view) any_mask |= !vm.empty();
    if (!any_mask) throw Error("empty_hull", "initialization requires at least one mask");

    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto sample_box = [&]() {
        return Vec3{bounds_lo.x + uni(rng) * (bounds_hi.x - bounds_lo.x),
                    bounds_lo.y + uni(rng) * (bounds_hi.y - bounds_lo.y),
                    bounds_lo.z + uni(rng) * (bounds_hi.z - bounds_lo.z)};
    };
    auto inside_foreground = [&](const Vec3& p) {
        for (size_t v = 0; v < cameras.size(); ++v) {
            const Vec3 pc = cameras[v].to_camera(p);
            if (pc.z <= 1e-9) return false;
            const int px = static_cast<int>(std::floor(cameras[v].fx * pc.x / pc.z + cameras[v].cx));
            const int py = static_cast<int>(std::floor(cameras[v].fy * pc.y / pc.z + cameras[v].cy));
            bool in_any = false;
            for (const InstanceMask& m : masks_per_view[v])
                if (m.at(px, py)) {
                    in_any = true;
                    break;
                }
            if (!in_any) return false;
        }
        return true;
    };

    std::vector<Vec3> kept;
    for (int i = 0; i < cfg.init_candidates; ++i) {
        const Vec3 p = sample_box();
        if (inside_foreground(p)) kept.push_back(p);
    }

    InitResult out;
    const Vec3 ext = bounds_hi - bounds_lo;
    const double box_volume = std::max(ext.x * ext.y * ext.z, 1e-18);
    if (kept.empty()) {
        out.hull_empty = true;
        for (int i = 0; i < cfg.init_surfels; ++i) kept.push_back(sample_box());
    }
    const double hull_fraction =
        out.hull_empty ? 1.0
                       : static_cast<double>(kept.size()) / static_cast<double>(cfg.init_candidates);

    if (static_cast<int>(kept.size()) > cfg.init_surfels) {
        std::shuffle(kept.begin(), kept.end(), rng);
        kept.resize(static_cast<size_t>(cfg.init_surfels));
    }
    if (kept.empty()) kept.push_back(sample_box());
    const int minimum = std::max(cfg.min_surfels, 1);
    std::normal_distribution<double> jitter(0.0, 1.0);
    const double cell =
        std::cbrt(box_volume * hull_fraction / static_cast<double>(kept.size()));
    const size_t base_count = kept.size();
    while (static_cast<int>(kept.size()) < minimum)
        kept.push_back(kept[kept.size() % base_count] +
                       Vec3{jitter(rng), jitter(rng), jitter(rng)} * (0.25 * cell));

    const double s0 = std::clamp(0.9 * cell, 1e-4, 0.05);
    std::normal_distribution<double> gauss(0.0, 1.0);
    out.surfels.reserve(kept.size());
    for (const Vec3& p : kept) {
        Surfel s;
        s.position = p + Vec3{gauss(rng), gauss(rng), gauss(rng)} * (0.1 * cell);
        s.scale = {s0, s0};
        Quat q{gauss(rng), gauss(rng), gauss(rng), gauss(rng)};
        if (norm(q) < 1e-9) q = Quat{1, 0, 0, 0};
        s.rotation = normalized(q);
        s.color = {0.5, 0.5, 0.5};
        s.sdf = 0.0;
        out.surfels.push_back(s);
    }
    return out;
}

struct DensifyResult {
    std::vector<Surfel> surfels;
    std::vector<int> new_from_old;
    int cloned = 0, split = 0, pruned = 0;
};

// Frame-0 densification/pruning between optimization segments: clones
// high-gradient surfels (tangent offset of half a scale), splits oversized
// ones (scale / 1.6), prunes transparent or degenerate ones.
inline DensifyResult densify_and_prune(const std::vector<Surfel>& surfels, const GradStats& stats,
                                       double gamma, const ReconstructionConfig& cfg) {
    DensifyResult out;
    for (size_t i = 0; i < surfels.size(); ++i) {
        const Surfel& s = surfels[i];
        const double op = opacity_transform(s.sdf, gamma);
        if (op < cfg.prune_opacity || std::min(s.scale.x, s.scale.y) < cfg.scale_clamp_min) {
            ++out.pruned;
            continue;
        }
        const double smax = std::max(s.scale.x, s.scale.y);
        const bool may_grow = static_cast<int>(surfels.size()) + out.cloned + out.split < cfg.max_surfels;
        if (smax > cfg.split_scale_cap && may_grow) {
            const Mat3 r = rotation_matrix(s.rotation);
            const Vec3 axis = s.scale.x >= s.scale.y ? r.col(0) : r.col(1);
            Surfel a = s, b = s;
            a.position = s.position + axis * (0.5 * smax);
            b.position = s.position - axis * (0.5 * smax);
            a.scale = {s.scale.x / 1.6, s.scale.y / 1.6};
            b.scale = a.scale;
            out.surfels.push_back(a);
            out.new_from_old.push_back(-1);
            out.surfels.push_back(b);
            out.new_from_old.push_back(-1);
            ++out.split;
            continue;
        }
        out.surfels.push_back(s);
        out.new_from_old.push_back(static_cast<int>(i));
        if (stats.mean_norm(i) > cfg.densify_grad_threshold && may_grow) {
            Surfel clone = s;
            clone.position = s.position + surfel_tangent_u(s) * (0.5 * s.scale.x);
            out.surfels.push_back(clone);
            out.new_from_old.push_back(-1);
            ++out.cloned;
        }
    }
    return out;
}

}  // namespace gsurf
