#pragma once

#include "enerf/common.hpp"
#include "enerf/diffcore.hpp"
#include "enerf/encoders.hpp"
#include "enerf/geometry.hpp"
#include "enerf/image.hpp"
#include "enerf/renderer.hpp"

#include <vector>

namespace enerf::objective {

using diffcore::Tensor;
using diffcore::TensorPtr;

constexpr real kPropEps = 1e-7;

namespace detail {

// Outer-measure overlap: total NeRF weight of intervals intersecting each
// proposal bin. Both edge arrays are sorted.
inline std::vector<real> outer_overlap(const std::vector<real>& nerf_edges,
                                       const std::vector<real>& nerf_weights,
                                       const std::vector<real>& prop_edges) {
    const size_t np = prop_edges.size() - 1;
    std::vector<real> overlap(np, 0);
    for (size_t j = 0; j + 1 < nerf_edges.size(); ++j) {
        const real lo = nerf_edges[j], hi = nerf_edges[j + 1];
        for (size_t i = 0; i < np; ++i) {
            if (hi > prop_edges[i] && lo < prop_edges[i + 1]) overlap[i] += nerf_weights[j];
        }
    }
    return overlap;
}

}  // namespace detail

// Histogram distillation penalty: proposal bins must upper-bound the
// overlapping NeRF mass. NeRF weights enter as plain values, so gradient
// flows to the proposal side only.
inline TensorPtr loss_interlevel_batch(const std::vector<std::vector<real>>& nerf_edges,
                                       const std::vector<std::vector<real>>& nerf_weights,
                                       const TensorPtr& prop_weights,
                                       const std::vector<std::vector<real>>& prop_edges) {
    const int rays = prop_weights->rows();
    const int bins = prop_weights->cols();
    if (static_cast<int>(nerf_edges.size()) != rays ||
        static_cast<int>(prop_edges.size()) != rays) {
        throw ShapeError("interlevel: per-ray edge lists do not match the batch");
    }
    auto overlaps = std::make_shared<std::vector<real>>();
    overlaps->reserve(static_cast<size_t>(rays) * bins);
    real total = 0;
    for (int r = 0; r < rays; ++r) {
        const auto& ne = nerf_edges[static_cast<size_t>(r)];
        const auto& pe = prop_edges[static_cast<size_t>(r)];
        if (ne.front() < pe.front() - 1e-6 || ne.back() > pe.back() + 1e-6) {
            throw EnerfError("interlevel: histogram spans mismatch");
        }
        auto overlap = detail::outer_overlap(ne, nerf_weights[static_cast<size_t>(r)], pe);
        for (int i = 0; i < bins; ++i) {
            const real w_hat = prop_weights->at(r, i);
            const real excess = std::max(real(0), overlap[static_cast<size_t>(i)] - w_hat);
            total += excess * excess / (w_hat + kPropEps);
            overlaps->push_back(overlap[static_cast<size_t>(i)]);
        }
    }
    total /= rays;
    return diffcore::make_node(
        {1}, {total}, {prop_weights}, [prop_weights, overlaps, rays, bins](Tensor& self) {
            if (!prop_weights->requires_grad) return;
            prop_weights->ensure_grad();
            const real g = self.grad[0] / rays;
            for (int r = 0; r < rays; ++r) {
                for (int i = 0; i < bins; ++i) {
                    const real w_hat = prop_weights->at(r, i);
                    const real excess =
                        (*overlaps)[static_cast<size_t>(r) * bins + i] - w_hat;
                    if (excess <= 0) continue;
                    const real denom = w_hat + kPropEps;
                    // d/dw [ excess^2 / denom ] with d(excess)/dw = -1
                    prop_weights->grad[static_cast<size_t>(r) * bins + i] +=
                        g * (-2 * excess * denom - excess * excess) / (denom * denom);
                }
            }
        });
}

// Single-histogram convenience (the spec-level operation).
inline TensorPtr loss_interlevel(const geometry::WeightHistogram& nerf_hist,
                                 const TensorPtr& prop_weights,
                                 const std::vector<real>& prop_edges) {
    if (prop_weights->rows() != 1) {
        throw ShapeError("interlevel: single-ray form expects [1,N] proposal weights");
    }
    return loss_interlevel_batch({nerf_hist.edges}, {nerf_hist.weights}, prop_weights,
                                 {prop_edges});
}

struct ShLevels {
    int fine = 4;
    int mid = 3;
    int coarse = 2;
};

struct LossBreakdown {
    real total = 0;
    real prop = 0;
    real fine_mse = 0;
    real sh_fine = 0;
    real sh_mid = 0;
    real sh_coarse = 0;
};

struct LossResult {
    TensorPtr total;
    LossBreakdown breakdown;
};

namespace detail {

// Sum over channels, mean over rays.
inline TensorPtr sum_channel_mse(const TensorPtr& a, const TensorPtr& b) {
    return diffcore::scale(diffcore::mse(a, b), a->cols());
}

}  // namespace detail

// Total training loss: proposal distillation + fine MSE + graded SH terms on
// the three composited colors. SH terms drop out when the variant has no
// mid/coarse heads.
inline LossResult loss_total(const renderer::BatchRender& batch, const TensorPtr& gt,
                             const ShLevels& levels = {}, bool sh_terms = true) {
    if (gt->shape != batch.fine->shape) {
        throw ShapeError("loss: ground truth shape " + diffcore::shape_str(gt->shape) +
                         " does not match rendered " + diffcore::shape_str(batch.fine->shape));
    }
    LossResult out;
    std::vector<std::vector<real>> nerf_w(static_cast<size_t>(batch.rays));
    for (int r = 0; r < batch.rays; ++r) {
        nerf_w[static_cast<size_t>(r)].assign(
            batch.nerf_weights->values.begin() + static_cast<size_t>(r) * batch.samples,
            batch.nerf_weights->values.begin() + static_cast<size_t>(r + 1) * batch.samples);
    }
    TensorPtr prop;
    for (const auto& round : batch.prop_rounds) {
        auto term = loss_interlevel_batch(batch.nerf_edges, nerf_w, round.weights, round.edges);
        prop = prop ? diffcore::add(prop, term) : term;
    }
    if (!prop) prop = Tensor::scalar(0);
    auto fine_mse = detail::sum_channel_mse(batch.fine, gt);
    auto total = diffcore::add(prop, fine_mse);

    out.breakdown.prop = prop->item();
    out.breakdown.fine_mse = fine_mse->item();

    const bool use_sh = sh_terms && batch.mid != nullptr;
    if (use_sh) {
        using encoders::SHLevel;
        using encoders::sh_color_encode;
        auto term = [&](const TensorPtr& color, int level) {
            return detail::sum_channel_mse(sh_color_encode(color, SHLevel(level)),
                                           sh_color_encode(gt, SHLevel(level)));
        };
        auto sh_fine = term(batch.fine, levels.fine);
        auto sh_mid = term(batch.mid, levels.mid);
        auto sh_coarse = term(batch.coarse, levels.coarse);
        out.breakdown.sh_fine = sh_fine->item();
        out.breakdown.sh_mid = sh_mid->item();
        out.breakdown.sh_coarse = sh_coarse->item();
        total = diffcore::add(diffcore::add(total, sh_fine),
                              diffcore::add(sh_mid, sh_coarse));
    }
    out.total = total;
    out.breakdown.total = total->item();
    return out;
}

// ---------------------------------------------------------------------------
// Image metrics.

inline real metrics_psnr(const img::Image& a, const img::Image& b) {
    if (a.width != b.width || a.height != b.height) {
        throw ShapeError("psnr: image shapes differ");
    }
    real acc = 0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        const real d = a.rgb[i] - b.rgb[i];
        acc += d * d;
    }
    const real mse = acc / a.rgb.size();
    if (mse <= 0) return 99.0;
    return std::min(real(99), -10.0 * std::log10(mse));
}

namespace detail {

inline std::vector<real> gaussian_kernel_11() {
    std::vector<real> k(11);
    real total = 0;
    for (int i = 0; i < 11; ++i) {
        const real x = i - 5;
        k[static_cast<size_t>(i)] = std::exp(-x * x / (2 * 1.5 * 1.5));
        total += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= total;
    return k;
}

}  // namespace detail

// Mean SSIM over the three channels, 11x11 Gaussian window (sigma 1.5),
// standard stabilizers for unit dynamic range. Images smaller than the
// window fall back to global statistics.
inline real metrics_ssim(const img::Image& a, const img::Image& b) {
    if (a.width != b.width || a.height != b.height) {
        throw ShapeError("ssim: image shapes differ");
    }
    const real c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int w = a.width, h = a.height;
    real channel_sum = 0;
    if (w < 11 || h < 11) {
        for (int ch = 0; ch < 3; ++ch) {
            real ma = 0, mb = 0;
            const int n = w * h;
            for (int i = 0; i < n; ++i) {
                ma += a.rgb[static_cast<size_t>(i) * 3 + ch];
                mb += b.rgb[static_cast<size_t>(i) * 3 + ch];
            }
            ma /= n;
            mb /= n;
            real va = 0, vb = 0, cov = 0;
            for (int i = 0; i < n; ++i) {
                const real da = a.rgb[static_cast<size_t>(i) * 3 + ch] - ma;
                const real db = b.rgb[static_cast<size_t>(i) * 3 + ch] - mb;
                va += da * da;
                vb += db * db;
                cov += da * db;
            }
            va /= n;
            vb /= n;
            cov /= n;
            channel_sum += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                           ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        return channel_sum / 3;
    }
    const auto kernel = detail::gaussian_kernel_11();
    // separable 11x11 filter over the valid region
    auto blur = [&](const std::vector<real>& plane) {
        std::vector<real> tmp(static_cast<size_t>(w) * h, 0);
        for (int y = 0; y < h; ++y) {
            for (int x = 5; x < w - 5; ++x) {
                real acc = 0;
                for (int k = -5; k <= 5; ++k) {
                    acc += kernel[static_cast<size_t>(k + 5)] *
                           plane[static_cast<size_t>(y) * w + x + k];
                }
                tmp[static_cast<size_t>(y) * w + x] = acc;
            }
        }
        std::vector<real> out(static_cast<size_t>(w) * h, 0);
        for (int y = 5; y < h - 5; ++y) {
            for (int x = 5; x < w - 5; ++x) {
                real acc = 0;
                for (int k = -5; k <= 5; ++k) {
                    acc += kernel[static_cast<size_t>(k + 5)] *
                           tmp[static_cast<size_t>(y + k) * w + x];
                }
                out[static_cast<size_t>(y) * w + x] = acc;
            }
        }
        return out;
    };
    for (int ch = 0; ch < 3; ++ch) {
        std::vector<real> av(static_cast<size_t>(w) * h), bv(av.size());
        std::vector<real> aa(av.size()), bb(av.size()), ab(av.size());
        for (size_t i = 0; i < av.size(); ++i) {
            const real va = a.rgb[i * 3 + ch], vb = b.rgb[i * 3 + ch];
            av[i] = va;
            bv[i] = vb;
            aa[i] = va * va;
            bb[i] = vb * vb;
            ab[i] = va * vb;
        }
        auto mu_a = blur(av), mu_b = blur(bv);
        auto m_aa = blur(aa), m_bb = blur(bb), m_ab = blur(ab);
        real total = 0;
        int count = 0;
        for (int y = 5; y < h - 5; ++y) {
            for (int x = 5; x < w - 5; ++x) {
                const size_t i = static_cast<size_t>(y) * w + x;
                const real ma = mu_a[i], mb = mu_b[i];
                const real va = m_aa[i] - ma * ma;
                const real vb = m_bb[i] - mb * mb;
                const real cov = m_ab[i] - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
        channel_sum += total / count;
    }
    return channel_sum / 3;
}

}  // namespace enerf::objective
