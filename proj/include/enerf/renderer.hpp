#pragma once

#include "enerf/common.hpp"
#include "enerf/diffcore.hpp"
#include "enerf/field.hpp"
#include "enerf/geometry.hpp"
#include "enerf/image.hpp"

#include <vector>

namespace enerf::renderer {

using diffcore::Tensor;
using diffcore::TensorPtr;

struct RenderedPixel {
    Vec3 fine{0, 0, 0};
    Vec3 mid{0, 0, 0};
    Vec3 coarse{0, 0, 0};
    real accumulation = 0;
    real depth = 0;
    std::vector<real> weights;
    bool has_mid_coarse = true;
};

// w_k = T_k * alpha_k with T_k the exclusive transmittance prefix.
// sigma and deltas are [R,N]; deltas are graph constants.
inline TensorPtr weights_from_sigma(const TensorPtr& sigma, const TensorPtr& deltas) {
    auto optical = diffcore::mul(sigma, deltas);
    auto transmittance = diffcore::exp_(diffcore::scale(diffcore::cumsum_exclusive(optical), -1));
    auto alpha = diffcore::add_scalar(diffcore::scale(diffcore::exp_(diffcore::scale(optical, -1)), -1), 1);
    return diffcore::mul(transmittance, alpha);
}

// Composite one [P,3] color stack under shared weights; returns [R,3] with the
// background blended in at weight (1 - accumulation).
inline TensorPtr composite_color(const TensorPtr& weights, const TensorPtr& accumulation,
                                 const TensorPtr& colors, int rays, int samples,
                                 const Vec3& background) {
    auto residual = diffcore::add_scalar(diffcore::scale(accumulation, -1), 1);  // [R,1]
    std::vector<TensorPtr> channels;
    for (int ch = 0; ch < 3; ++ch) {
        auto col = diffcore::reshape(diffcore::slice_cols(colors, ch, 1), {rays, samples});
        auto summed = diffcore::sum_rows(diffcore::mul(weights, col));
        channels.push_back(diffcore::add(summed, diffcore::scale(residual, background[ch])));
    }
    return diffcore::concat_cols(channels);
}

// Volume rendering of one ray's field outputs (Eq.-1-style emission
// absorption). Plain-value interface used by tests and the oracle cross-check.
inline RenderedPixel composite(const std::vector<real>& sigmas, const std::vector<real>& deltas,
                               const std::vector<real>& midpoints,
                               const std::vector<Vec3>& fine_colors,
                               const std::vector<Vec3>& mid_colors,
                               const std::vector<Vec3>& coarse_colors,
                               const Vec3& background = Vec3(1, 1, 1)) {
    const size_t n = sigmas.size();
    if (deltas.size() != n || fine_colors.size() != n || midpoints.size() != n) {
        throw ShapeError("composite: sample count mismatch");
    }
    for (size_t i = 0; i < n; ++i) {
        if (sigmas[i] < 0) throw EnerfError("composite: negative sigma");
        if (!(deltas[i] > 0)) throw EnerfError("composite: non-positive delta");
    }
    RenderedPixel out;
    out.weights.resize(n);
    real transmittance = 1.0;
    real depth_sum = 0;
    Vec3 fine(0, 0, 0), mid(0, 0, 0), coarse(0, 0, 0);
    const bool has_mc = !mid_colors.empty();
    out.has_mid_coarse = has_mc;
    for (size_t i = 0; i < n; ++i) {
        const real alpha = 1.0 - std::exp(-sigmas[i] * deltas[i]);
        const real w = transmittance * alpha;
        out.weights[i] = w;
        out.accumulation += w;
        depth_sum += w * midpoints[i];
        fine += w * fine_colors[i];
        if (has_mc) {
            mid += w * mid_colors[i];
            coarse += w * coarse_colors[i];
        }
        transmittance *= 1.0 - alpha;
    }
    const real residual = 1.0 - out.accumulation;
    out.fine = fine + residual * background;
    out.mid = has_mc ? Vec3(mid + residual * background) : out.fine;
    out.coarse = has_mc ? Vec3(coarse + residual * background) : out.fine;
    out.depth = depth_sum / std::max(out.accumulation, real(1e-10));
    return out;
}

struct SamplerConfig {
    int n_uniform = 48;
    int n_log = 48;
    real t_split = 1.0;
    std::vector<int> round_counts{48, 32};  // per proposal round; last feeds the field
    real pdf_padding = 1e-2;

    void validate(size_t n_proposals) const {
        if (round_counts.size() != n_proposals) {
            throw EnerfError("sampler: one resample count per proposal field required");
        }
        for (int c : round_counts) {
            if (c < 1) throw EnerfError("sampler: resample counts must be positive");
        }
    }
};

struct RenderConfig {
    SamplerConfig sampler;
    Vec3 background{1, 1, 1};
    bool jitter = false;
    uint64_t jitter_key = 0;  // combined with (ray, round) for stratified draws
};

struct ProposalRound {
    TensorPtr weights;                    // [R,Nk], differentiable to proposal params
    std::vector<std::vector<real>> edges;  // per ray
};

struct BatchRender {
    int rays = 0;
    int samples = 0;                       // per-ray count at the main field
    TensorPtr fine, mid, coarse;           // [R,3] post-background (mid/coarse may be null)
    TensorPtr accumulation;                // [R,1]
    TensorPtr nerf_weights;                // [R,N], differentiable to the main field
    std::vector<std::vector<real>> nerf_edges;
    std::vector<std::vector<real>> nerf_midpoints;
    std::vector<ProposalRound> prop_rounds;
    std::vector<real> depth;
};

namespace detail {

struct StackedSamples {
    std::vector<geometry::RaySamples> per_ray;
    std::vector<Vec3> positions;   // contracted, ray-major
    std::vector<real> deltas;      // ray-major
    int rays = 0;
    int samples = 0;

    TensorPtr delta_tensor() const {
        return Tensor::from_values({rays, samples}, deltas);
    }
};

inline StackedSamples stack(const std::vector<geometry::Ray>& rays,
                            std::vector<geometry::RaySamples>&& samples) {
    StackedSamples out;
    out.rays = static_cast<int>(rays.size());
    out.samples = samples.front().count();
    out.per_ray = std::move(samples);
    out.positions.reserve(static_cast<size_t>(out.rays) * out.samples);
    out.deltas.reserve(out.positions.capacity());
    for (int r = 0; r < out.rays; ++r) {
        const auto& s = out.per_ray[static_cast<size_t>(r)];
        for (int k = 0; k < out.samples; ++k) {
            out.positions.push_back(geometry::contract(rays[static_cast<size_t>(r)].at(s.midpoints[static_cast<size_t>(k)])));
            out.deltas.push_back(s.deltas[static_cast<size_t>(k)]);
        }
    }
    return out;
}

}  // namespace detail

// Sample positions for every stage, fixed ahead of graph construction.
// Resampling reads proposal densities as plain values: positions are not
// differentiated through, which is also why gradient checks can re-render
// from a frozen plan.
struct SamplePlan {
    std::vector<std::vector<geometry::RaySamples>> rounds;  // proposals.size()+1 stages
};

inline SamplePlan plan_samples(const std::vector<field::ProposalField>& proposals,
                               const std::vector<geometry::Ray>& rays, const RenderConfig& cfg) {
    if (rays.empty()) throw EnerfError("render: empty ray batch");
    cfg.sampler.validate(proposals.size());
    const int n_rays = static_cast<int>(rays.size());
    SamplePlan plan;
    std::vector<geometry::RaySamples> current;
    current.reserve(rays.size());
    for (int r = 0; r < n_rays; ++r) {
        Rng rng = Rng::keyed({cfg.jitter_key, static_cast<uint64_t>(r), 0});
        current.push_back(geometry::sample_piecewise(rays[static_cast<size_t>(r)],
                                                     cfg.sampler.n_uniform, cfg.sampler.n_log,
                                                     cfg.sampler.t_split, cfg.jitter,
                                                     cfg.jitter ? &rng : nullptr));
    }
    for (size_t round = 0; round < proposals.size(); ++round) {
        plan.rounds.push_back(current);
        auto stacked = detail::stack(rays, std::move(current));
        auto sigma = proposals[round].density(stacked.positions);
        current.clear();
        current.reserve(rays.size());
        for (int r = 0; r < n_rays; ++r) {
            geometry::WeightHistogram hist;
            hist.edges = stacked.per_ray[static_cast<size_t>(r)].edges;
            hist.weights.resize(static_cast<size_t>(stacked.samples));
            real transmittance = 1.0;
            for (int k = 0; k < stacked.samples; ++k) {
                const real optical = sigma->at(r * stacked.samples + k, 0) *
                                     stacked.per_ray[static_cast<size_t>(r)].deltas[static_cast<size_t>(k)];
                const real alpha = 1.0 - std::exp(-optical);
                hist.weights[static_cast<size_t>(k)] = transmittance * alpha;
                transmittance *= 1.0 - alpha;
            }
            Rng rng = Rng::keyed({cfg.jitter_key, static_cast<uint64_t>(r), round + 1});
            current.push_back(geometry::resample_pdf(hist, cfg.sampler.round_counts[round],
                                                     cfg.jitter, cfg.jitter ? &rng : nullptr,
                                                     cfg.sampler.pdf_padding));
        }
    }
    plan.rounds.push_back(std::move(current));
    return plan;
}

// Differentiable pass over fixed sample positions: proposal weights per round
// (for the distillation loss), then the main field composited under shared
// weights.
inline BatchRender render_planned(const field::Field& main_field,
                                  const std::vector<field::ProposalField>& proposals,
                                  const std::vector<geometry::Ray>& rays,
                                  const RenderConfig& cfg, const SamplePlan& plan,
                                  const std::vector<real>* appearance_override = nullptr) {
    const int n_rays = static_cast<int>(rays.size());
    if (plan.rounds.size() != proposals.size() + 1) {
        throw EnerfError("render: sample plan does not match the proposal stack");
    }
    BatchRender out;
    out.rays = n_rays;
    for (size_t round = 0; round < proposals.size(); ++round) {
        auto stacked = detail::stack(rays, std::vector<geometry::RaySamples>(plan.rounds[round]));
        auto sigma = diffcore::reshape(proposals[round].density(stacked.positions),
                                       {stacked.rays, stacked.samples});
        ProposalRound pr;
        pr.weights = weights_from_sigma(sigma, stacked.delta_tensor());
        for (int r = 0; r < n_rays; ++r) {
            pr.edges.push_back(stacked.per_ray[static_cast<size_t>(r)].edges);
        }
        out.prop_rounds.push_back(std::move(pr));
    }

    // Main field.
    auto stacked = detail::stack(rays, std::vector<geometry::RaySamples>(plan.rounds.back()));
    out.samples = stacked.samples;
    std::vector<Vec3> dirs;
    std::vector<int> app;
    dirs.reserve(stacked.positions.size());
    app.reserve(stacked.positions.size());
    for (int r = 0; r < n_rays; ++r) {
        for (int k = 0; k < stacked.samples; ++k) {
            dirs.push_back(rays[static_cast<size_t>(r)].direction);
            app.push_back(rays[static_cast<size_t>(r)].appearance_index);
        }
    }
    auto fwd = main_field.forward(stacked.positions, dirs, app, appearance_override);
    auto sigma = diffcore::reshape(fwd.sigma, {stacked.rays, stacked.samples});
    auto weights = weights_from_sigma(sigma, stacked.delta_tensor());
    out.nerf_weights = weights;
    auto acc = diffcore::sum_rows(weights);
    out.accumulation = acc;
    out.fine = composite_color(weights, acc, fwd.c_fine, stacked.rays, stacked.samples,
                               cfg.background);
    if (fwd.c_mid) {
        out.mid = composite_color(weights, acc, fwd.c_mid, stacked.rays, stacked.samples,
                                  cfg.background);
        out.coarse = composite_color(weights, acc, fwd.c_coarse, stacked.rays, stacked.samples,
                                     cfg.background);
    }
    for (int r = 0; r < n_rays; ++r) {
        out.nerf_edges.push_back(stacked.per_ray[static_cast<size_t>(r)].edges);
        out.nerf_midpoints.push_back(stacked.per_ray[static_cast<size_t>(r)].midpoints);
        real depth_sum = 0, w_sum = 0;
        for (int k = 0; k < stacked.samples; ++k) {
            const real w = weights->at(r, k);
            depth_sum += w * stacked.per_ray[static_cast<size_t>(r)].midpoints[static_cast<size_t>(k)];
            w_sum += w;
        }
        out.depth.push_back(depth_sum / std::max(w_sum, real(1e-10)));
    }
    return out;
}

inline BatchRender render_batch(const field::Field& main_field,
                                const std::vector<field::ProposalField>& proposals,
                                const std::vector<geometry::Ray>& rays, const RenderConfig& cfg,
                                const std::vector<real>* appearance_override = nullptr) {
    auto plan = plan_samples(proposals, rays, cfg);
    return render_planned(main_field, proposals, rays, cfg, plan, appearance_override);
}

struct RayRender {
    RenderedPixel pixel;
    std::vector<geometry::WeightHistogram> prop_hists;
    geometry::WeightHistogram nerf_hist;
};

inline RayRender render_ray(const field::Field& main_field,
                            const std::vector<field::ProposalField>& proposals,
                            const geometry::Ray& ray, const RenderConfig& cfg,
                            const std::vector<real>* appearance_override = nullptr) {
    auto batch = render_batch(main_field, proposals, {ray}, cfg, appearance_override);
    RayRender out;
    out.pixel.fine = Vec3(batch.fine->at(0, 0), batch.fine->at(0, 1), batch.fine->at(0, 2));
    out.pixel.has_mid_coarse = batch.mid != nullptr;
    if (batch.mid) {
        out.pixel.mid = Vec3(batch.mid->at(0, 0), batch.mid->at(0, 1), batch.mid->at(0, 2));
        out.pixel.coarse =
            Vec3(batch.coarse->at(0, 0), batch.coarse->at(0, 1), batch.coarse->at(0, 2));
    } else {
        out.pixel.mid = out.pixel.fine;
        out.pixel.coarse = out.pixel.fine;
    }
    out.pixel.accumulation = batch.accumulation->item();
    out.pixel.depth = batch.depth[0];
    out.pixel.weights = batch.nerf_weights->values;
    for (const auto& round : batch.prop_rounds) {
        geometry::WeightHistogram h;
        h.edges = round.edges[0];
        h.weights = round.weights->values;
        out.prop_hists.push_back(std::move(h));
    }
    out.nerf_hist.edges = batch.nerf_edges[0];
    out.nerf_hist.weights = batch.nerf_weights->values;
    return out;
}

struct ChannelImages {
    img::Image fine, mid, coarse;
    bool has_mid_coarse = true;
};

// Deterministic full-frame render, chunked to bound graph memory.
inline ChannelImages render_image(const field::Field& main_field,
                                  const std::vector<field::ProposalField>& proposals,
                                  const geometry::Intrinsics& intr, const Mat4& pose, int width,
                                  int height, const RenderConfig& cfg, real t_near, real t_far,
                                  int appearance_index,
                                  const std::vector<real>* appearance_override = nullptr) {
    ChannelImages out;
    out.fine = img::Image::filled(width, height, Vec3(0, 0, 0));
    out.mid = img::Image::filled(width, height, Vec3(0, 0, 0));
    out.coarse = img::Image::filled(width, height, Vec3(0, 0, 0));
    RenderConfig render_cfg = cfg;
    render_cfg.jitter = false;
    const int chunk = 2048;
    std::vector<geometry::Ray> rays;
    std::vector<std::pair<int, int>> pixels;
    auto flush = [&]() {
        if (rays.empty()) return;
        auto batch = render_batch(main_field, proposals, rays, render_cfg, appearance_override);
        out.has_mid_coarse = batch.mid != nullptr;
        for (size_t i = 0; i < rays.size(); ++i) {
            auto [x, y] = pixels[i];
            const int r = static_cast<int>(i);
            Vec3 fine(batch.fine->at(r, 0), batch.fine->at(r, 1), batch.fine->at(r, 2));
            out.fine.set_pixel(x, y, fine.cwiseMax(0.0).cwiseMin(1.0));
            if (batch.mid) {
                Vec3 mid(batch.mid->at(r, 0), batch.mid->at(r, 1), batch.mid->at(r, 2));
                Vec3 coarse(batch.coarse->at(r, 0), batch.coarse->at(r, 1),
                            batch.coarse->at(r, 2));
                out.mid.set_pixel(x, y, mid.cwiseMax(0.0).cwiseMin(1.0));
                out.coarse.set_pixel(x, y, coarse.cwiseMax(0.0).cwiseMin(1.0));
            }
        }
        rays.clear();
        pixels.clear();
    };
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            rays.push_back(geometry::ray_from_pixel(intr, pose, x + real(0.5), y + real(0.5),
                                                    t_near, t_far, appearance_index));
            pixels.emplace_back(x, y);
            if (static_cast<int>(rays.size()) == chunk) flush();
        }
    }
    flush();
    if (!out.has_mid_coarse) {
        out.mid = out.fine;
        out.coarse = out.fine;
    }
    return out;
}

}  // namespace enerf::renderer
