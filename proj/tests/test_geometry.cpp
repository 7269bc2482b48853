#include "enerf/geometry.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace enerf;
using namespace enerf::geometry;

TEST(Contract, IdentityInsideUnitBall) {
    Vec3 x(0.5, -0.3, 0.9);
    EXPECT_EQ(contract(x), x);
}

TEST(Contract, HandValueOutside) {
    Vec3 out = contract(Vec3(4, 0, 0));
    EXPECT_NEAR(out[0], 1.75, 1e-12);
    EXPECT_NEAR(out[1], 0.0, 1e-12);
    EXPECT_NEAR(out[2], 0.0, 1e-12);
}

TEST(Contract, MonotoneApproachToTwo) {
    real prev = 0;
    for (real t : {2.0, 10.0, 100.0, 1e4, 1e6}) {
        real v = contract(Vec3(t, 0, 0))[0];
        EXPECT_GT(v, prev);
        EXPECT_LT(v, 2.0);
        prev = v;
    }
    EXPECT_NEAR(prev, 2.0, 1e-5);
}

TEST(Contract, NonFiniteRejected) {
    EXPECT_THROW(contract(Vec3(std::nan(""), 0, 0)), EnerfError);
}

TEST(Contract, ContinuityAtBoundary) {
    Rng rng = Rng::keyed({11});
    for (int i = 0; i < 100; ++i) {
        Vec3 x = uniform_unit_vector(rng);
        x /= x.lpNorm<Eigen::Infinity>();  // put on the unit-inf-norm shell
        const real eps = 1e-7;
        Vec3 lo = contract(x * (1 - eps));
        Vec3 hi = contract(x * (1 + eps));
        EXPECT_LT((lo - x).lpNorm<Eigen::Infinity>(), 1e-6);
        EXPECT_LT((hi - x).lpNorm<Eigen::Infinity>(), 1e-6);
    }
}

TEST(Contract, PreservesSignAndComponentOrdering) {
    Rng rng = Rng::keyed({12});
    for (int i = 0; i < 1000; ++i) {
        Vec3 x(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50));
        Vec3 y = contract(x);
        int argmax = 0;
        for (int a = 1; a < 3; ++a)
            if (std::abs(x[a]) > std::abs(x[argmax])) argmax = a;
        EXPECT_GE(x[argmax] * y[argmax], 0.0);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                if (std::abs(x[a]) < std::abs(x[b])) {
                    EXPECT_LE(std::abs(y[a]), std::abs(y[b]) + 1e-12);
                }
            }
        }
    }
}

TEST(Contract, BoundedOutput) {
    Rng rng = Rng::keyed({13});
    for (int i = 0; i < 10000; ++i) {
        const real mag = std::pow(10.0, rng.uniform(-1, 6));
        Vec3 x = uniform_unit_vector(rng) * mag;
        EXPECT_LT(contract(x).lpNorm<Eigen::Infinity>(), 2.0);
    }
}

static Ray make_ray(real t_near = 0.1, real t_far = 100.0) {
    Ray r;
    r.origin = Vec3(0, 0, 0);
    r.direction = Vec3(0, 0, -1);
    r.t_near = t_near;
    r.t_far = t_far;
    return r;
}

TEST(PiecewiseSampling, HandValueEdges) {
    auto s = sample_piecewise(make_ray(), 2, 2, 1.0);
    ASSERT_EQ(s.edges.size(), 5u);
    EXPECT_NEAR(s.edges[0], 0.1, 1e-12);
    EXPECT_NEAR(s.edges[1], 0.55, 1e-12);
    EXPECT_NEAR(s.edges[2], 1.0, 1e-12);
    EXPECT_NEAR(s.edges[3], 10.0, 1e-9);
    EXPECT_NEAR(s.edges[4], 100.0, 1e-9);
}

TEST(PiecewiseSampling, DeterministicWithoutJitter) {
    auto a = sample_piecewise(make_ray(), 7, 9, 2.0);
    auto b = sample_piecewise(make_ray(), 7, 9, 2.0);
    EXPECT_EQ(a.edges, b.edges);
    EXPECT_EQ(a.midpoints, b.midpoints);
}

TEST(PiecewiseSampling, SplitOutsideRangeRejected) {
    EXPECT_THROW(sample_piecewise(make_ray(), 2, 2, 0.05), EnerfError);
    EXPECT_THROW(sample_piecewise(make_ray(), 2, 2, 100.0), EnerfError);
}

TEST(PiecewiseSampling, SortedPositiveProperty) {
    Rng rng = Rng::keyed({21});
    for (int i = 0; i < 200; ++i) {
        real t_near = rng.uniform(0.01, 1.0);
        real t_far = t_near + rng.uniform(1.0, 200.0);
        real t_split = t_near + (t_far - t_near) * rng.uniform(0.05, 0.95);
        int nu = 1 + static_cast<int>(rng.uniform(0, 16));
        int nl = 1 + static_cast<int>(rng.uniform(0, 16));
        auto s = sample_piecewise(make_ray(t_near, t_far), nu, nl, t_split);
        s.validate();
        EXPECT_EQ(s.count(), nu + nl);
        EXPECT_NEAR(s.edges.front(), t_near, 1e-12);
        EXPECT_NEAR(s.edges.back(), t_far, 1e-9);
    }
}

TEST(PdfResampling, UniformWeightsGiveUniformQuantiles) {
    WeightHistogram hist;
    hist.edges = {0, 1, 2, 3, 4};
    hist.weights = {0.2, 0.2, 0.2, 0.2};
    auto s = resample_pdf(hist, 8, false, nullptr, 0.0);
    for (int k = 0; k <= 8; ++k) EXPECT_NEAR(s.edges[k], 4.0 * k / 8, 1e-9);
}

TEST(PdfResampling, MassConcentratedInSecondBin) {
    WeightHistogram hist;
    hist.edges = {0, 1, 2};
    hist.weights = {0, 1};
    auto s = resample_pdf(hist, 2, false, nullptr, /*padding=*/0.0);
    for (real e : s.edges) {
        EXPECT_GE(e, 1.0);
        EXPECT_LE(e, 2.0);
    }
}

TEST(PdfResampling, AllZeroWeightsFallBackToUniform) {
    WeightHistogram hist;
    hist.edges = {2, 3, 4};
    hist.weights = {0, 0};
    auto s = resample_pdf(hist, 4, false, nullptr, 0.0);
    for (int k = 0; k <= 4; ++k) EXPECT_NEAR(s.edges[k], 2.0 + 0.5 * k, 1e-12);
}

TEST(PdfResampling, DeterministicWithoutJitterAndSeedReproducible) {
    WeightHistogram hist;
    hist.edges = {0, 0.5, 1.5, 2.0};
    hist.weights = {0.1, 0.6, 0.2};
    auto a = resample_pdf(hist, 5, false);
    auto b = resample_pdf(hist, 5, false);
    EXPECT_EQ(a.edges, b.edges);

    Rng r1 = Rng::keyed({42, 7});
    Rng r2 = Rng::keyed({42, 7});
    auto j1 = resample_pdf(hist, 5, true, &r1);
    auto j2 = resample_pdf(hist, 5, true, &r2);
    EXPECT_EQ(j1.edges, j2.edges);
    EXPECT_EQ(j1.midpoints, j2.midpoints);
}

// Monte-Carlo oracle: the empirical distribution of resampled midpoints must
// match the histogram's own PDF in total variation.
TEST(PdfResampling, EmpiricalDensityMatchesHistogram) {
    WeightHistogram hist;
    hist.edges = {0, 1, 2, 3, 4};
    hist.weights = {0.4, 0.1, 0.3, 0.2};
    const int kDraws = 100000;
    std::vector<real> counts(4, 0);
    Rng rng = Rng::keyed({31});
    const int per_call = 10;
    for (int i = 0; i < kDraws / per_call; ++i) {
        auto s = resample_pdf(hist, per_call, true, &rng, 0.0);
        for (real m : s.midpoints) {
            int bin = std::min(3, static_cast<int>(m));
            counts[bin] += 1;
        }
    }
    real tv = 0;
    const real total = kDraws;
    for (int b = 0; b < 4; ++b) tv += std::abs(counts[b] / total - hist.weights[b]);
    EXPECT_LT(tv / 2, 0.05);
}

TEST(PdfResampling, ComposedSamplingStaysInBounds) {
    Rng rng = Rng::keyed({32});
    for (int i = 0; i < 50; ++i) {
        Ray ray = make_ray(0.1 + rng.uniform(0, 1), 20 + rng.uniform(0, 100));
        auto s0 = sample_piecewise(ray, 16, 16, ray.t_near + 0.5 * (ray.t_far - ray.t_near) * 0.1,
                                   true, &rng);
        WeightHistogram h0;
        h0.edges = s0.edges;
        h0.weights.assign(s0.count(), 0);
        real total = 0;
        for (auto& w : h0.weights) {
            w = rng.uniform(0, 1);
            total += w;
        }
        for (auto& w : h0.weights) w /= total * 1.00001;
        auto s1 = resample_pdf(h0, 16, true, &rng);
        WeightHistogram h1;
        h1.edges = s1.edges;
        h1.weights.assign(16, 1.0 / 17);
        auto s2 = resample_pdf(h1, 8, true, &rng);
        EXPECT_GE(s2.edges.front(), ray.t_near - 1e-9);
        EXPECT_LE(s2.edges.back(), ray.t_far + 1e-9);
        s2.validate();
    }
}

TEST(RayFromPixel, PrincipalAxisLooksDownNegZ) {
    Intrinsics intr{50, 50, 32, 32};
    Ray r = ray_from_pixel(intr, Mat4::Identity(), 32, 32);
    EXPECT_NEAR((r.direction - Vec3(0, 0, -1)).norm(), 0.0, 1e-12);
    EXPECT_EQ(r.origin, Vec3(0, 0, 0));
}

TEST(RayFromPixel, TranslationOnlyPose) {
    Intrinsics intr{50, 50, 32, 32};
    Mat4 pose = Mat4::Identity();
    pose(0, 3) = 1.5;
    pose(1, 3) = -2.0;
    pose(2, 3) = 7.0;
    Ray r = ray_from_pixel(intr, pose, 10, 50);
    EXPECT_EQ(r.origin, Vec3(1.5, -2.0, 7.0));
    EXPECT_NEAR(r.direction.norm(), 1.0, 1e-12);
}

TEST(RayFromPixel, NinetyDegreeYaw) {
    Intrinsics intr{50, 50, 32, 32};
    Mat4 pose = Mat4::Identity();
    // rotation about +y by 90 degrees
    pose(0, 0) = 0;
    pose(0, 2) = 1;
    pose(2, 0) = -1;
    pose(2, 2) = 0;
    Ray r = ray_from_pixel(intr, pose, 32, 32);
    EXPECT_NEAR((r.direction - Vec3(-1, 0, 0)).norm(), 0.0, 1e-12);
    EXPECT_NEAR(r.direction.norm(), 1.0, 1e-12);
}

TEST(RayFromPixel, NonOrthonormalRotationRejected) {
    Intrinsics intr{50, 50, 32, 32};
    Mat4 pose = Mat4::Identity();
    pose(0, 0) = 1.5;
    EXPECT_THROW(ray_from_pixel(intr, pose, 0, 0), EnerfError);
}

TEST(RayFromPixel, OffCenterPixelDirection) {
    Intrinsics intr{100, 100, 32, 32};
    Ray r = ray_from_pixel(intr, Mat4::Identity(), 42, 32);
    Vec3 expected = Vec3(0.1, 0, -1).normalized();
    EXPECT_NEAR((r.direction - expected).norm(), 0.0, 1e-12);
}
