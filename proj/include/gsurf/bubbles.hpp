#pragma once

// Bubble instance handling: cross-view mask association, frame-to-frame
// identity tracking, surfel-to-bubble binding by multi-view projection,
// opacity-weighted centroids, advection initialization, and finite-
// difference velocity estimation.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "gsurf/core.hpp"
#include "gsurf/surface.hpp"

namespace gsurf {

// One cross-view bubble instance for a single frame.
struct BubbleCluster {
    std::vector<std::pair<int, int>> members; // (view index, index into that view's mask list)
    double centroid_x_norm = 0;               // mean centroid, fraction of width
    double centroid_y_norm = 0;               // mean centroid, fraction of height
    long total_area = 0;
    bool nucleation = false;
};

namespace detail {
inline int most_valid_view(const std::vector<std::vector<InstanceMask>>& masks_per_view, int min_area) {
    int best = 0;
    long best_count = -1;
    for (size_t v = 0; v < masks_per_view.size(); ++v) {
        long count = 0;
        for (const InstanceMask& m : masks_per_view[v])
            if (m.area() >= min_area) ++count;
        if (count > best_count) {
            best_count = count;
            best = static_cast<int>(v);
        }
    }
    return best;
}
}  // namespace detail

// Merges instances across views: masks whose centroid heights (normalized
// by image height) differ by less than tau_y and whose areas differ by less
// than the area-ratio gate are treated as the same 3D bubble. Ambiguity is
// resolved by the smallest vertical gap. Unmatched instances form their own
// clusters. The cluster touching the bottom `nucleation_band` fraction of
// rows in the most-populated view is flagged as the nucleation region.
inline std::vector<BubbleCluster> associate_masks(const std::vector<std::vector<InstanceMask>>& masks_per_view,
                                                  double tau_y, double area_ratio, int min_area,
                                                  double nucleation_band) {
    std::vector<BubbleCluster> clusters;
    if (masks_per_view.empty()) return clusters;
    const int ref_view = detail::most_valid_view(masks_per_view, min_area);

    auto add_to_cluster = [&](BubbleCluster& c, int view, int idx) {
        const InstanceMask& m = masks_per_view[static_cast<size_t>(view)][static_cast<size_t>(idx)];
        const Vec2 cp = m.centroid_px();
        const double n = static_cast<double>(c.members.size());
        c.centroid_x_norm = (c.centroid_x_norm * n + cp.x / m.width) / (n + 1);
        c.centroid_y_norm = (c.centroid_y_norm * n + cp.y / m.height) / (n + 1);
        c.total_area += m.area();
        c.members.emplace_back(view, idx);
    };

    // Seed with the reference view, then match the remaining views in index
    // order.
    std::vector<int> view_order{ref_view};
    for (int v = 0; v < static_cast<int>(masks_per_view.size()); ++v)
        if (v != ref_view) view_order.push_back(v);

    for (int view : view_order) {
        const auto& masks = masks_per_view[static_cast<size_t>(view)];
        for (int i = 0; i < static_cast<int>(masks.size()); ++i) {
            const InstanceMask& m = masks[static_cast<size_t>(i)];
            const Vec2 cp = m.centroid_px();
            const double ynorm = cp.y / m.height;
            const double area = std::max(1.0, static_cast<double>(m.area()));
            int best = -1;
            double best_gap = tau_y;
            for (size_t c = 0; c < clusters.size(); ++c) {
                bool has_this_view = false;
                for (auto [mv, mi] : clusters[c].members) has_this_view |= mv == view;
                if (has_this_view) continue;
                const double gap = std::abs(clusters[c].centroid_y_norm - ynorm);
                if (gap >= best_gap) continue;
                const double mean_area = static_cast<double>(clusters[c].total_area) /
                                         static_cast<double>(clusters[c].members.size());
                const double ratio = std::max(mean_area / area, area / mean_area);
                if (ratio >= area_ratio) continue;
                best = static_cast<int>(c);
                best_gap = gap;
            }
            if (best >= 0) {
                add_to_cluster(clusters[static_cast<size_t>(best)], view, i);
            } else {
                BubbleCluster c;
                add_to_cluster(c, view, i);
                clusters.push_back(std::move(c));
            }
        }
    }

    // Nucleation detection in the reference view.
    for (BubbleCluster& c : clusters) {
        for (auto [view, idx] : c.members) {
            if (view != ref_view) continue;
            const InstanceMask& m = masks_per_view[static_cast<size_t>(view)][static_cast<size_t>(idx)];
            const int band_start = static_cast<int>(std::floor((1.0 - nucleation_band) * m.height));
            for (int y = band_start; y < m.height && !c.nucleation; ++y)
                for (int x = 0; x < m.width; ++x)
                    if (m.at(x, y)) {
                        c.nucleation = true;
                        break;
                    }
        }
    }
    return clusters;
}

// Carries bubble identities across frames: clusters are matched to the
// previous frame's bubbles by nearest normalized centroid within
// `max_jump`; when two previous bubbles land on one cluster the larger
// parent's id survives. New clusters get fresh ids in left-to-right
// centroid order. The nucleation cluster is always id 0.
struct BubbleTracker {
    int32_t next_id = 1;
    std::map<int32_t, std::pair<double, double>> last_centroid; // id -> (x_norm, y_norm)
    std::map<int32_t, long> last_area;

    std::vector<int32_t> update(const std::vector<BubbleCluster>& clusters, double max_jump) {
        std::vector<int32_t> ids(clusters.size(), kUnassignedBubble);
        // Candidate matches sorted by distance; greedy assignment.
        struct Cand {
            double dist;
            int32_t prev_id;
            size_t cluster;
        };
        std::vector<Cand> cands;
        for (size_t c = 0; c < clusters.size(); ++c) {
            if (clusters[c].nucleation) {
                ids[c] = 0;
                continue;
            }
            for (const auto& [id, cen] : last_centroid) {
                if (id == 0) continue;
                const double dx = clusters[c].centroid_x_norm - cen.first;
                const double dy = clusters[c].centroid_y_norm - cen.second;
                const double d = std::sqrt(dx * dx + dy * dy);
                if (d <= max_jump) cands.push_back({d, id, c});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.dist != b.dist) return a.dist < b.dist;
            if (a.prev_id != b.prev_id) return a.prev_id < b.prev_id;
            return a.cluster < b.cluster;
        });
        std::map<int32_t, bool> prev_used;
        for (const Cand& cd : cands) {
            if (ids[cd.cluster] != kUnassignedBubble) {
                // Merge: keep the id of the larger parent.
                if (!prev_used[cd.prev_id]) {
                    const int32_t cur = ids[cd.cluster];
                    auto a_cur = last_area.find(cur), a_new = last_area.find(cd.prev_id);
                    if (a_cur != last_area.end() && a_new != last_area.end() &&
                        a_new->second > a_cur->second) {
                        ids[cd.cluster] = cd.prev_id;
                        prev_used[cd.prev_id] = true;
                        prev_used[cur] = false;
                    }
                }
                continue;
            }
            if (prev_used[cd.prev_id]) continue;
            ids[cd.cluster] = cd.prev_id;
            prev_used[cd.prev_id] = true;
        }
        // Fresh ids for unmatched clusters, ordered by horizontal centroid.
        std::vector<size_t> fresh;
        for (size_t c = 0; c < clusters.size(); ++c)
            if (ids[c] == kUnassignedBubble) fresh.push_back(c);
        std::sort(fresh.begin(), fresh.end(), [&](size_t a, size_t b) {
            if (clusters[a].centroid_x_norm != clusters[b].centroid_x_norm)
                return clusters[a].centroid_x_norm < clusters[b].centroid_x_norm;
            return a < b;
        });
        for (size_t c : fresh) ids[c] = next_id++;

        last_centroid.clear();
        last_area.clear();
        for (size_t c = 0; c < clusters.size(); ++c) {
            last_centroid[ids[c]] = {clusters[c].centroid_x_norm, clusters[c].centroid_y_norm};
            last_area[ids[c]] = clusters[c].total_area;
        }
        return ids;
    }
};

// Relabels per-view masks with the tracked bubble ids.
inline std::vector<std::vector<InstanceMask>> label_masks(
    const std::vector<std::vector<InstanceMask>>& masks_per_view,
    const std::vector<BubbleCluster>& clusters, const std::vector<int32_t>& ids) {
    std::vector<std::vector<InstanceMask>> out = masks_per_view;
    for (size_t c = 0; c < clusters.size(); ++c)
        for (auto [view, idx] : clusters[c].members)
            out[static_cast<size_t>(view)][static_cast<size_t>(idx)].id = ids[c];
    return out;
}

// Assigns bubble ids to surfels by projecting into views ordered by
// descending count of valid masks; once a surfel is assigned in one view it
// is skipped in later views. Deterministic and idempotent: assignments
// depend only on positions and masks.
inline void bind_surfels(std::vector<Surfel>& surfels,
                         const std::vector<std::vector<InstanceMask>>& labeled_masks,
                         const std::vector<CameraModel>& cameras, int min_area) {
    for (Surfel& s : surfels) s.bubble_id = kUnassignedBubble;

    std::vector<std::pair<long, int>> order; // (-valid count, view index)
    for (size_t v = 0; v < labeled_masks.size(); ++v) {
        long count = 0;
        for (const InstanceMask& m : labeled_masks[v])
            if (m.area() >= min_area) ++count;
        order.emplace_back(-count, static_cast<int>(v));
    }
    std::sort(order.begin(), order.end());

    for (auto [neg_count, view] : order) {
        const CameraModel& cam = cameras[static_cast<size_t>(view)];
        for (Surfel& s : surfels) {
            if (s.bubble_id != kUnassignedBubble) continue;
            const Vec3 pc = cam.to_camera(s.position);
            if (pc.z <= 1e-9) continue;
            const int px = static_cast<int>(std::floor(cam.fx * pc.x / pc.z + cam.cx));
            const int py = static_cast<int>(std::floor(cam.fy * pc.y / pc.z + cam.cy));
            for (const InstanceMask& m : labeled_masks[static_cast<size_t>(view)]) {
                if (m.area() < min_area) continue;
                if (m.at(px, py)) {
                    s.bubble_id = m.id;
                    break;
                }
            }
        }
    }
}

// Canonicalizes the normal-sign ambiguity: rendering cannot tell n from -n
// (normals are flipped toward the camera and the footprint only uses v^2),
// but the SDF field assembled for meshing needs coherent orientations.
// Rotating a surfel's frame half a turn about its first tangent axis flips
// the normal while leaving every render bit-identical.
inline void orient_normals_outward(std::vector<Surfel>& surfels, double gamma);

// Opacity- and area-weighted centroid: w_i = sigmoid(o_i) s_x s_y with
// o_i the derived opacity.
inline Vec3 bubble_centroid(const std::vector<Surfel>& surfels, double gamma, int32_t bubble) {
    Vec3 num{};
    double den = 0.0;
    for (const Surfel& s : surfels) {
        if (s.bubble_id != bubble) continue;
        const double o = opacity_transform(s.sdf, gamma);
        const double w = 1.0 / (1.0 + std::exp(-o)) * s.scale.x * s.scale.y;
        num += s.position * w;
        den += w;
    }
    if (den <= 0.0) throw Error("empty_bubble", "no surfels bound to bubble " + std::to_string(bubble));
    return num / den;
}

inline std::vector<int32_t> bubble_ids_present(const std::vector<Surfel>& surfels) {
    std::vector<int32_t> ids;
    for (const Surfel& s : surfels)
        if (s.bubble_id != kUnassignedBubble) ids.push_back(s.bubble_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

inline void orient_normals_outward(std::vector<Surfel>& surfels, double gamma) {
    // Anchors: per-bubble weighted centroids, plus the all-surfel centroid
    // for unassigned surfels.
    std::map<int32_t, Vec3> anchors;
    for (int32_t id : bubble_ids_present(surfels)) anchors[id] = bubble_centroid(surfels, gamma, id);
    Vec3 num{};
    double den = 0.0;
    for (const Surfel& s : surfels) {
        const double o = opacity_transform(s.sdf, gamma);
        const double w = 1.0 / (1.0 + std::exp(-o)) * s.scale.x * s.scale.y;
        num += s.position * w;
        den += w;
    }
    const Vec3 global = den > 0 ? num / den : Vec3{};
    const Quat half_turn_u{0, 1, 0, 0}; // pi about the first tangent axis: n -> -n
    for (Surfel& s : surfels) {
        auto it = anchors.find(s.bubble_id);
        const Vec3& anchor = it != anchors.end() ? it->second : global;
        const Vec3 outward = s.position - anchor;
        if (dot(surfel_normal(s), outward) < 0.0) s.rotation = normalized(s.rotation * half_turn_u);
    }
}

// Finite difference between consecutive centroids; without two prior
// centroids the configured initial velocity applies.
inline Vec3 bubble_velocity(const std::optional<Vec3>& c_prev2, const std::optional<Vec3>& c_prev1,
                            double dt, const Vec3& initial) {
    if (!c_prev1 || !c_prev2) return initial;
    return (*c_prev1 - *c_prev2) / dt;
}

// Warm start for frame t: rising bubbles advect by their bubble velocity,
// the nucleation region advects by per-surfel velocity, unassigned surfels
// stay put. All other attributes are copied bit for bit.
inline std::vector<Surfel> advect(const std::vector<Surfel>& prev,
                                  const std::map<int32_t, Vec3>& bubble_velocities,
                                  const std::vector<Vec3>& surfel_velocities_prev, double dt) {
    std::vector<Surfel> out = prev;
    for (size_t i = 0; i < out.size(); ++i) {
        Surfel& s = out[i];
        if (s.bubble_id == kUnassignedBubble) continue;
        if (s.bubble_id == 0) {
            const Vec3 v = i < surfel_velocities_prev.size() ? surfel_velocities_prev[i] : Vec3{};
            s.position += v * dt;
        } else {
            auto it = bubble_velocities.find(s.bubble_id);
            if (it != bubble_velocities.end()) s.position += it->second * dt;
        }
    }
    return out;
}

// Fills per-surfel (Eq. of motion by finite difference) and per-bubble
// velocities for every frame t >= 1 of a sequence with identity
// correspondence.
inline void estimate_velocities(SceneSequence& seq) {
    const size_t T = seq.frames.size();
    seq.surfel_velocities.assign(T, {});
    seq.bubble_velocity_series.assign(T, {});
    for (size_t t = 1; t < T; ++t) {
        const auto& cur = seq.frames[t];
        const auto& prev = seq.frames[t - 1];
        if (cur.size() != prev.size())
            throw Error("frame_mismatch", "surfel counts differ between frames " + std::to_string(t - 1) +
                                              " and " + std::to_string(t));
        auto& vel = seq.surfel_velocities[t];
        vel.resize(cur.size());
        for (size_t i = 0; i < cur.size(); ++i) vel[i] = (cur[i].position - prev[i].position) / seq.dt;

        const std::vector<int32_t> ids_cur = bubble_ids_present(cur);
        const std::vector<int32_t> ids_prev = bubble_ids_present(prev);
        for (int32_t id : ids_cur) {
            if (std::find(ids_prev.begin(), ids_prev.end(), id) == ids_prev.end()) continue;
            const Vec3 c1 = bubble_centroid(cur, seq.gamma, id);
            const Vec3 c0 = bubble_centroid(prev, seq.gamma, id);
            seq.bubble_velocity_series[t][id] = (c1 - c0) / seq.dt;
        }
    }
}

}  // namespace gsurf
