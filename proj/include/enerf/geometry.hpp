#pragma once

#include "enerf/common.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace enerf::geometry {

struct Ray {
    Vec3 origin{0, 0, 0};
    Vec3 direction{0, 0, -1};  // unit length
    real t_near = 0.05;
    real t_far = 100.0;
    int appearance_index = 0;

    Vec3 at(real t) const { return origin + t * direction; }

    void validate() const {
        if (std::abs(direction.norm() - 1.0) > 1e-6) {
            throw EnerfError("ray: direction is not unit length");
        }
        if (!(t_near > 0) || !(t_far > t_near)) {
            throw EnerfError("ray: requires 0 < t_near < t_far");
        }
    }
};

// Ordered sample intervals along a ray.
struct RaySamples {
    std::vector<real> edges;      // N+1, strictly increasing
    std::vector<real> midpoints;  // N
    std::vector<real> deltas;     // N, positive

    int count() const { return static_cast<int>(deltas.size()); }

    static RaySamples from_edges(std::vector<real> edges_in) {
        RaySamples s;
        s.edges = std::move(edges_in);
        const size_t n = s.edges.size() - 1;
        s.midpoints.resize(n);
        s.deltas.resize(n);
        for (size_t i = 0; i < n; ++i) {
            s.deltas[i] = s.edges[i + 1] - s.edges[i];
            s.midpoints[i] = real(0.5) * (s.edges[i] + s.edges[i + 1]);
        }
        s.validate();
        return s;
    }

    void validate() const {
        if (edges.size() < 2) throw EnerfError("ray samples: need at least one interval");
        for (size_t i = 0; i + 1 < edges.size(); ++i) {
            if (!(edges[i + 1] > edges[i])) {
                throw EnerfError("ray samples: edges not strictly increasing");
            }
        }
        for (size_t i = 0; i < deltas.size(); ++i) {
            if (!(deltas[i] > 0)) throw EnerfError("ray samples: non-positive delta");
            if (!(midpoints[i] >= edges[i] && midpoints[i] <= edges[i + 1])) {
                throw EnerfError("ray samples: midpoint outside its interval");
            }
        }
    }
};

// Per-interval probability mass along a ray.
struct WeightHistogram {
    std::vector<real> edges;
    std::vector<real> weights;  // size edges.size()-1, each in [0,1]

    void validate() const {
        if (edges.size() != weights.size() + 1) {
            throw EnerfError("weight histogram: edge/weight count mismatch");
        }
        real total = 0;
        for (real w : weights) {
            if (w < 0) throw EnerfError("weight histogram: negative weight");
            total += w;
        }
        if (total > 1.0 + 1e-5) throw EnerfError("weight histogram: weights sum above 1");
    }
};

// L-inf scene contraction: identity inside the unit ball, otherwise squashes
// the whole space into the cube of side 4.
inline Vec3 contract(const Vec3& x) {
    if (!x.allFinite()) throw EnerfError("contract: non-finite input");
    const real n = x.lpNorm<Eigen::Infinity>();
    if (n <= 1.0) return x;
    return (2.0 - 1.0 / n) * (x / n);
}

// Uniform intervals on [t_near, t_split], then geometrically widening
// intervals on [t_split, t_far]. With jitter on, midpoints are drawn
// stratified inside their interval instead of at the center.
inline RaySamples sample_piecewise(const Ray& ray, int n_uniform, int n_log, real t_split,
                                   bool jitter = false, Rng* rng = nullptr) {
    if (n_uniform < 1 || n_log < 1) {
        throw EnerfError("sample_piecewise: interval counts must be at least 1");
    }
    if (!(t_split > ray.t_near && t_split < ray.t_far)) {
        throw EnerfError("sample_piecewise: t_split outside (t_near, t_far)");
    }
    std::vector<real> edges;
    edges.reserve(static_cast<size_t>(n_uniform + n_log) + 1);
    for (int i = 0; i <= n_uniform; ++i) {
        edges.push_back(ray.t_near + (t_split - ray.t_near) * static_cast<real>(i) / n_uniform);
    }
    const real ratio = std::pow(ray.t_far / t_split, real(1) / n_log);
    real t = t_split;
    for (int i = 1; i <= n_log; ++i) {
        t *= ratio;
        edges.push_back(i == n_log ? ray.t_far : t);
    }
    auto samples = RaySamples::from_edges(std::move(edges));
    if (jitter && rng) {
        for (int i = 0; i < samples.count(); ++i) {
            samples.midpoints[i] = samples.edges[i] + samples.deltas[i] * rng->uniform();
        }
    }
    return samples;
}

// Inverse-transform sampling of a weight histogram. Weights get `padding`
// extra mass per bin before normalization; all-zero mass falls back to a
// uniform draw over the span.
inline RaySamples resample_pdf(const WeightHistogram& hist, int n, bool jitter = false,
                               Rng* rng = nullptr, real padding = 1e-2) {
    if (n < 1) throw EnerfError("resample_pdf: need at least one interval");
    hist.validate();
    const size_t bins = hist.weights.size();
    std::vector<real> mass(bins);
    real total = 0;
    for (size_t i = 0; i < bins; ++i) {
        mass[i] = hist.weights[i] + padding;
        total += mass[i];
    }
    const real span_lo = hist.edges.front();
    const real span_hi = hist.edges.back();
    std::vector<real> edges(static_cast<size_t>(n) + 1);
    if (total <= 0) {
        for (int k = 0; k <= n; ++k) {
            edges[k] = span_lo + (span_hi - span_lo) * static_cast<real>(k) / n;
        }
    } else {
        std::vector<real> cum(bins + 1, 0);
        for (size_t i = 0; i < bins; ++i) cum[i + 1] = cum[i] + mass[i] / total;
        cum[bins] = 1.0;
        size_t bin = 0;
        for (int k = 0; k <= n; ++k) {
            real u = jitter && rng ? (static_cast<real>(k) + rng->uniform()) / (n + 1)
                                   : static_cast<real>(k) / n;
            // Last bin whose cumulative start is still below u; ties resolve
            // to the earlier bin so u=1 maps to the end of the mass, not past it.
            while (bin + 1 < bins && cum[bin + 1] < u) ++bin;
            // Skip zero-mass bins so samples never land where there is no mass.
            while (bin + 1 < bins && mass[bin] <= 0) ++bin;
            real t;
            if (mass[bin] <= 0) {
                t = hist.edges[bin + 1];
            } else {
                real local = (u - cum[bin]) / (cum[bin + 1] - cum[bin]);
                local = std::clamp(local, real(0), real(1));
                t = hist.edges[bin] + local * (hist.edges[bin + 1] - hist.edges[bin]);
            }
            edges[k] = t;
        }
    }
    // Guard strict monotonicity against degenerate peaks.
    const real nudge = (span_hi - span_lo) * 1e-12;
    for (int k = 1; k <= n; ++k) {
        if (edges[k] <= edges[k - 1]) edges[k] = edges[k - 1] + std::max(nudge, real(1e-12));
    }
    auto samples = RaySamples::from_edges(std::move(edges));
    if (jitter && rng) {
        for (int i = 0; i < samples.count(); ++i) {
            samples.midpoints[i] = samples.edges[i] + samples.deltas[i] * rng->uniform();
        }
    }
    return samples;
}

struct Intrinsics {
    real fx = 0, fy = 0, cx = 0, cy = 0;
};

// Pinhole ray through the pixel center. Camera convention: -z forward,
// +y up (pose is camera-to-world).
inline Ray ray_from_pixel(const Intrinsics& intr, const Mat4& pose, real u, real v,
                          real t_near = 0.05, real t_far = 100.0, int appearance_index = 0) {
    if (!(intr.fx > 0 && intr.fy > 0)) throw EnerfError("ray_from_pixel: focal must be positive");
    if ((pose.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() > 1e-9) {
        throw EnerfError("ray_from_pixel: pose bottom row must be (0,0,0,1)");
    }
    const Mat3 rot = pose.topLeftCorner<3, 3>();
    if ((rot * rot.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-4) {
        throw EnerfError("ray_from_pixel: rotation block is not orthonormal");
    }
    Vec3 dir_cam((u - intr.cx) / intr.fx, -(v - intr.cy) / intr.fy, -1.0);
    Ray ray;
    ray.origin = pose.topRightCorner<3, 1>();
    ray.direction = (rot * dir_cam).normalized();
    ray.t_near = t_near;
    ray.t_far = t_far;
    ray.appearance_index = appearance_index;
    ray.validate();
    return ray;
}

}  // namespace enerf::geometry
