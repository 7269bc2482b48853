#pragma once

#include "enerf/common.hpp"
#include "enerf/diffcore.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <iostream>
#include <vector>

namespace enerf::encoders {

using diffcore::Tensor;
using diffcore::TensorPtr;

struct HashEncodingConfig {
    int table_size = 1 << 19;
    int features_per_entry = 4;
    int grid_resolution = 128;
    std::array<uint32_t, 3> hash_primes{1u, 2654435761u, 805459861u};

    // Encoded width: interpolated features + raw position + bias term.
    int output_dim() const { return features_per_entry + 4; }

    void validate() const {
        if (table_size <= 0 || (table_size & (table_size - 1)) != 0) {
            throw EnerfError("hash encoding: table size must be a power of two");
        }
        if (grid_resolution < 2) throw EnerfError("hash encoding: resolution must be >= 2");
        if (features_per_entry < 1) throw EnerfError("hash encoding: needs features");
    }
};

struct SHLevel {
    int level = 4;  // number of degree bands, 1..4

    explicit SHLevel(int l) : level(l) {
        if (l < 1 || l > 4) throw EnerfError("sh level: must be in 1..4");
    }
    int component_count() const { return level * level; }
};

namespace detail {

inline uint32_t hash_vertex(int ix, int iy, int iz, const HashEncodingConfig& cfg) {
    uint32_t h = static_cast<uint32_t>(ix) * cfg.hash_primes[0] ^
                 static_cast<uint32_t>(iy) * cfg.hash_primes[1] ^
                 static_cast<uint32_t>(iz) * cfg.hash_primes[2];
    return h & static_cast<uint32_t>(cfg.table_size - 1);
}

struct TrilinearQuery {
    std::array<uint32_t, 8> slots;
    std::array<real, 8> weights;
};

inline TrilinearQuery trilinear_query(const Vec3& x, const HashEncodingConfig& cfg) {
    for (int a = 0; a < 3; ++a) {
        if (!(x[a] >= -2.0 && x[a] <= 2.0)) {
            throw EnerfError("hash encoding: position outside [-2,2]^3; contract first");
        }
    }
    const real r1 = static_cast<real>(cfg.grid_resolution - 1);
    Vec3 g = (x.array() + 2.0) / 4.0 * r1;
    int base[3];
    real frac[3];
    for (int a = 0; a < 3; ++a) {
        base[a] = std::min(static_cast<int>(std::floor(g[a])), cfg.grid_resolution - 2);
        base[a] = std::max(base[a], 0);
        frac[a] = std::clamp(g[a] - base[a], real(0), real(1));
    }
    TrilinearQuery q;
    for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
        q.slots[corner] = hash_vertex(base[0] + dx, base[1] + dy, base[2] + dz, cfg);
        q.weights[corner] = (dx ? frac[0] : 1 - frac[0]) * (dy ? frac[1] : 1 - frac[1]) *
                            (dz ? frac[2] : 1 - frac[2]);
    }
    return q;
}

}  // namespace detail

// Single-resolution hash encoding of contracted positions. Output per point:
// trilinearly interpolated table features, then the raw position, then a
// constant 1. Gradients flow to the touched table rows only.
inline TensorPtr hash_encode(const std::vector<Vec3>& xs, const TensorPtr& table,
                             const HashEncodingConfig& cfg) {
    cfg.validate();
    if (table->shape != std::vector<int>{cfg.table_size, cfg.features_per_entry}) {
        throw ShapeError("hash encoding: table shape " + diffcore::shape_str(table->shape) +
                         " does not match config");
    }
    const int f = cfg.features_per_entry;
    const int out_dim = cfg.output_dim();
    const int p = static_cast<int>(xs.size());
    std::vector<real> out(static_cast<size_t>(p) * out_dim, real(0));
    auto queries = std::make_shared<std::vector<detail::TrilinearQuery>>();
    queries->reserve(xs.size());
    for (int i = 0; i < p; ++i) {
        auto q = detail::trilinear_query(xs[i], cfg);
        real* row = out.data() + static_cast<size_t>(i) * out_dim;
        for (int corner = 0; corner < 8; ++corner) {
            const real* entry = table->values.data() + static_cast<size_t>(q.slots[corner]) * f;
            for (int j = 0; j < f; ++j) row[j] += q.weights[corner] * entry[j];
        }
        row[f + 0] = xs[i][0];
        row[f + 1] = xs[i][1];
        row[f + 2] = xs[i][2];
        row[f + 3] = 1.0;
        queries->push_back(q);
    }
    return diffcore::make_node(
        {p, out_dim}, std::move(out), {table}, [table, queries, f, out_dim](Tensor& self) {
            if (!table->requires_grad) return;
            table->ensure_grad();
            const int p = self.rows();
            for (int i = 0; i < p; ++i) {
                const real* grow = self.grad.data() + static_cast<size_t>(i) * out_dim;
                const auto& q = (*queries)[static_cast<size_t>(i)];
                for (int corner = 0; corner < 8; ++corner) {
                    real* gentry =
                        table->grad.data() + static_cast<size_t>(q.slots[corner]) * f;
                    for (int j = 0; j < f; ++j) gentry[j] += q.weights[corner] * grow[j];
                }
            }
        });
}

namespace detail {

// Real spherical harmonics in Cartesian polynomial form, ordered
// (degree, order): Y00, Y1-1, Y10, Y11, Y2-2, ...
inline void sh_eval(real x, real y, real z, int level, real* out) {
    out[0] = 0.28209479177387814;
    if (level < 2) return;
    out[1] = 0.4886025119029199 * y;
    out[2] = 0.4886025119029199 * z;
    out[3] = 0.4886025119029199 * x;
    if (level < 3) return;
    out[4] = 1.0925484305920792 * x * y;
    out[5] = 1.0925484305920792 * y * z;
    out[6] = 0.31539156525252005 * (3 * z * z - 1);
    out[7] = 1.0925484305920792 * x * z;
    out[8] = 0.5462742152960396 * (x * x - y * y);
    if (level < 4) return;
    out[9] = 0.5900435899266435 * y * (3 * x * x - y * y);
    out[10] = 2.890611442640554 * x * y * z;
    out[11] = 0.4570457994644658 * y * (5 * z * z - 1);
    out[12] = 0.3731763325901154 * z * (5 * z * z - 3);
    out[13] = 0.4570457994644658 * x * (5 * z * z - 1);
    out[14] = 1.445305721320277 * z * (x * x - y * y);
    out[15] = 0.5900435899266435 * x * (x * x - 3 * y * y);
}

// d(sh)/d(x,y,z), same ordering; rows are components, cols are x/y/z.
inline void sh_eval_grad(real x, real y, real z, int level, real* gx, real* gy, real* gz) {
    const int n = level * level;
    std::fill(gx, gx + n, real(0));
    std::fill(gy, gy + n, real(0));
    std::fill(gz, gz + n, real(0));
    if (level < 2) return;
    gy[1] = 0.4886025119029199;
    gz[2] = 0.4886025119029199;
    gx[3] = 0.4886025119029199;
    if (level < 3) return;
    gx[4] = 1.0925484305920792 * y;
    gy[4] = 1.0925484305920792 * x;
    gy[5] = 1.0925484305920792 * z;
    gz[5] = 1.0925484305920792 * y;
    gz[6] = 0.31539156525252005 * 6 * z;
    gx[7] = 1.0925484305920792 * z;
    gz[7] = 1.0925484305920792 * x;
    gx[8] = 0.5462742152960396 * 2 * x;
    gy[8] = -0.5462742152960396 * 2 * y;
    if (level < 4) return;
    gx[9] = 0.5900435899266435 * 6 * x * y;
    gy[9] = 0.5900435899266435 * (3 * x * x - 3 * y * y);
    gx[10] = 2.890611442640554 * y * z;
    gy[10] = 2.890611442640554 * x * z;
    gz[10] = 2.890611442640554 * x * y;
    gy[11] = 0.4570457994644658 * (5 * z * z - 1);
    gz[11] = 0.4570457994644658 * 10 * y * z;
    gz[12] = 0.3731763325901154 * (15 * z * z - 3);
    gx[13] = 0.4570457994644658 * (5 * z * z - 1);
    gz[13] = 0.4570457994644658 * 10 * x * z;
    gx[14] = 1.445305721320277 * 2 * x * z;
    gy[14] = -1.445305721320277 * 2 * y * z;
    gz[14] = 1.445305721320277 * (x * x - y * y);
    gx[15] = 0.5900435899266435 * (3 * x * x - 3 * y * y);
    gy[15] = -0.5900435899266435 * 6 * x * y;
}

}  // namespace detail

// Basis values for a unit direction.
inline std::vector<real> sh_basis(const Vec3& d, const SHLevel& level) {
    if (std::abs(d.norm() - 1.0) > 1e-5) {
        throw EnerfError("sh_basis: direction is not unit length");
    }
    std::vector<real> out(static_cast<size_t>(level.component_count()));
    detail::sh_eval(d[0], d[1], d[2], level.level, out.data());
    return out;
}

// Constant [P, l^2] tensor of basis values; directions are not trainable.
inline TensorPtr sh_basis_batch(const std::vector<Vec3>& dirs, const SHLevel& level) {
    const int n = level.component_count();
    std::vector<real> out(dirs.size() * static_cast<size_t>(n));
    for (size_t i = 0; i < dirs.size(); ++i) {
        if (std::abs(dirs[i].norm() - 1.0) > 1e-5) {
            throw EnerfError("sh_basis: direction is not unit length");
        }
        detail::sh_eval(dirs[i][0], dirs[i][1], dirs[i][2], level.level, out.data() + i * n);
    }
    return Tensor::from_values({static_cast<int>(dirs.size()), n}, std::move(out));
}

enum class ColorEncodeMode { train, strict };

// Graded color encoding: map RGB affinely to [-1,1]^3 and evaluate the SH
// polynomials on the result without normalizing. Differentiable in the colors;
// degree-1 components are an invertible affine image of the input.
inline TensorPtr sh_color_encode(const TensorPtr& c, const SHLevel& level,
                                 ColorEncodeMode mode = ColorEncodeMode::train) {
    if (c->shape.size() != 2 || c->cols() != 3) {
        throw ShapeError("sh_color_encode: expected [N,3] colors, got " +
                         diffcore::shape_str(c->shape));
    }
    static std::atomic<bool> warned{false};
    const int rows = c->rows();
    const int n = level.component_count();
    std::vector<real> clamped(c->values.size());
    for (size_t i = 0; i < c->values.size(); ++i) {
        real v = c->values[i];
        if (v < 0 || v > 1) {
            if (mode == ColorEncodeMode::strict) {
                throw EnerfError("sh_color_encode: color component outside [0,1]");
            }
            if (!warned.exchange(true)) {
                std::cerr << "sh_color_encode: clamping out-of-range color\n";
            }
            v = std::clamp(v, real(0), real(1));
        }
        clamped[i] = v;
    }
    std::vector<real> out(static_cast<size_t>(rows) * n);
    for (int i = 0; i < rows; ++i) {
        const real vx = 2 * clamped[static_cast<size_t>(i) * 3 + 0] - 1;
        const real vy = 2 * clamped[static_cast<size_t>(i) * 3 + 1] - 1;
        const real vz = 2 * clamped[static_cast<size_t>(i) * 3 + 2] - 1;
        detail::sh_eval(vx, vy, vz, level.level, out.data() + static_cast<size_t>(i) * n);
    }
    auto saved = std::make_shared<std::vector<real>>(std::move(clamped));
    return diffcore::make_node(
        {rows, n}, std::move(out), {c}, [c, saved, n, lvl = level.level](Tensor& self) {
            if (!c->requires_grad) return;
            c->ensure_grad();
            const int rows = self.rows();
            std::vector<real> gx(n), gy(n), gz(n);
            for (int i = 0; i < rows; ++i) {
                const real vx = 2 * (*saved)[static_cast<size_t>(i) * 3 + 0] - 1;
                const real vy = 2 * (*saved)[static_cast<size_t>(i) * 3 + 1] - 1;
                const real vz = 2 * (*saved)[static_cast<size_t>(i) * 3 + 2] - 1;
                detail::sh_eval_grad(vx, vy, vz, lvl, gx.data(), gy.data(), gz.data());
                const real* g = self.grad.data() + static_cast<size_t>(i) * n;
                real acc_x = 0, acc_y = 0, acc_z = 0;
                for (int j = 0; j < n; ++j) {
                    acc_x += g[j] * gx[j];
                    acc_y += g[j] * gy[j];
                    acc_z += g[j] * gz[j];
                }
                // d v / d c = 2; clamped components keep flowing (clamp is a
                // training-mode repair, not part of the function).
                c->grad[static_cast<size_t>(i) * 3 + 0] += 2 * acc_x;
                c->grad[static_cast<size_t>(i) * 3 + 1] += 2 * acc_y;
                c->grad[static_cast<size_t>(i) * 3 + 2] += 2 * acc_z;
            }
        });
}

}  // namespace enerf::encoders
