#include "enerf/encoders.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace enerf;
using namespace enerf::encoders;
using diffcore::Tensor;
using diffcore::TensorPtr;
using enerf::test::check_gradients;

namespace {

HashEncodingConfig small_hash() {
    HashEncodingConfig cfg;
    cfg.table_size = 1 << 10;
    cfg.features_per_entry = 4;
    cfg.grid_resolution = 8;
    return cfg;
}

TensorPtr random_table(const HashEncodingConfig& cfg, uint64_t seed) {
    Rng rng = Rng::keyed({seed});
    auto t = Tensor::create({cfg.table_size, cfg.features_per_entry}, true);
    for (auto& v : t->values) v = rng.uniform(-1, 1);
    return t;
}

Vec3 grid_vertex_position(const HashEncodingConfig& cfg, int ix, int iy, int iz) {
    const real r1 = cfg.grid_resolution - 1;
    return Vec3(ix / r1 * 4 - 2, iy / r1 * 4 - 2, iz / r1 * 4 - 2);
}

}  // namespace

TEST(HashEncode, VertexQueryReturnsTableEntry) {
    auto cfg = small_hash();
    auto table = random_table(cfg, 1);
    Vec3 x = grid_vertex_position(cfg, 3, 5, 2);
    auto out = hash_encode({x}, table, cfg);
    ASSERT_EQ(out->shape, (std::vector<int>{1, 8}));
    const uint32_t slot = encoders::detail::hash_vertex(3, 5, 2, cfg);
    for (int j = 0; j < 4; ++j) {
        EXPECT_NEAR(out->at(0, j), table->values[slot * 4 + j], 1e-12);
    }
    EXPECT_NEAR(out->at(0, 4), x[0], 1e-12);
    EXPECT_NEAR(out->at(0, 5), x[1], 1e-12);
    EXPECT_NEAR(out->at(0, 6), x[2], 1e-12);
    EXPECT_DOUBLE_EQ(out->at(0, 7), 1.0);
}

TEST(HashEncode, CellCenterIsMeanOfCorners) {
    auto cfg = small_hash();
    auto table = random_table(cfg, 2);
    Vec3 a = grid_vertex_position(cfg, 2, 2, 2);
    Vec3 b = grid_vertex_position(cfg, 3, 3, 3);
    Vec3 center = 0.5 * (a + b);
    auto out = hash_encode({center}, table, cfg);
    for (int j = 0; j < 4; ++j) {
        real mean = 0;
        for (int c = 0; c < 8; ++c) {
            const uint32_t slot = encoders::detail::hash_vertex(
                2 + (c & 1), 2 + ((c >> 1) & 1), 2 + ((c >> 2) & 1), cfg);
            mean += table->values[slot * 4 + j];
        }
        mean /= 8;
        EXPECT_NEAR(out->at(0, j), mean, 1e-12);
    }
}

TEST(HashEncode, OutsideCubeRejected) {
    auto cfg = small_hash();
    auto table = random_table(cfg, 3);
    EXPECT_THROW(hash_encode({Vec3(2.5, 0, 0)}, table, cfg), EnerfError);
}

TEST(HashEncode, GradientEqualsTrilinearWeight) {
    auto cfg = small_hash();
    auto table = random_table(cfg, 4);
    Rng rng = Rng::keyed({5});
    Vec3 x(rng.uniform(-1.9, 1.9), rng.uniform(-1.9, 1.9), rng.uniform(-1.9, 1.9));
    std::string msg;
    EXPECT_EQ(check_gradients(
                  [&] {
                      auto enc = hash_encode({x}, table, cfg);
                      return diffcore::sum(diffcore::mul(enc, enc));
                  },
                  {table}, &msg, /*max_entries_per_leaf=*/0),
              0);
    // directly: d(out_j)/d(entry) = weight
    table->zero_grad();
    auto enc = hash_encode({x}, table, cfg);
    auto loss = diffcore::sum(diffcore::slice_cols(enc, 0, 1));
    diffcore::backward(loss);
    auto q = encoders::detail::trilinear_query(x, cfg);
    for (int c = 0; c < 8; ++c) {
        EXPECT_NEAR(table->grad[q.slots[c] * 4 + 0], q.weights[c], 1e-9);
    }
}

TEST(HashEncode, GradientsTouchAtMostEightRows) {
    auto cfg = small_hash();
    auto table = random_table(cfg, 6);
    table->zero_grad();
    Vec3 x(0.37, -1.2, 0.9);
    auto enc = hash_encode({x}, table, cfg);
    diffcore::backward(diffcore::sum(enc));
    int touched = 0;
    for (int row = 0; row < cfg.table_size; ++row) {
        bool any = false;
        for (int j = 0; j < 4; ++j) any |= table->grad[row * 4 + j] != 0;
        touched += any;
    }
    EXPECT_LE(touched, 8);
    EXPECT_GT(touched, 0);
}

TEST(HashEncode, Deterministic) {
    auto cfg = small_hash();
    auto table = random_table(cfg, 7);
    std::vector<Vec3> xs{{0.1, 0.2, 0.3}, {-1.5, 1.9, 0.0}};
    auto a = hash_encode(xs, table, cfg);
    auto b = hash_encode(xs, table, cfg);
    EXPECT_EQ(a->values, b->values);
}

TEST(HashEncode, BadTableSizeRejected) {
    auto cfg = small_hash();
    cfg.table_size = 1000;  // not a power of two
    auto table = Tensor::create({1000, 4});
    EXPECT_THROW(hash_encode({Vec3(0, 0, 0)}, table, cfg), EnerfError);
}

TEST(ShBasis, DegreeZeroConstant) {
    for (auto& d : {Vec3(1, 0, 0), Vec3(0, 0, 1), Vec3(0.6, 0.8, 0).normalized()}) {
        auto out = sh_basis(d, SHLevel(1));
        ASSERT_EQ(out.size(), 1u);
        EXPECT_NEAR(out[0], 0.2820948, 1e-7);
    }
}

TEST(ShBasis, DegreeOneAlongZ) {
    auto out = sh_basis(Vec3(0, 0, 1), SHLevel(2));
    ASSERT_EQ(out.size(), 4u);
    EXPECT_NEAR(out[1], 0.0, 1e-12);
    EXPECT_NEAR(out[2], 0.4886025, 1e-7);
    EXPECT_NEAR(out[3], 0.0, 1e-12);
}

TEST(ShBasis, ParityOfDegreeOne) {
    Rng rng = Rng::keyed({41});
    for (int i = 0; i < 20; ++i) {
        Vec3 d = uniform_unit_vector(rng);
        auto plus = sh_basis(d, SHLevel(2));
        auto minus = sh_basis(-d, SHLevel(2));
        EXPECT_NEAR(plus[0], minus[0], 1e-12);
        for (int j = 1; j < 4; ++j) EXPECT_NEAR(plus[j], -minus[j], 1e-12);
    }
}

TEST(ShBasis, NonUnitRejected) {
    EXPECT_THROW(sh_basis(Vec3(1, 1, 0), SHLevel(2)), EnerfError);
}

TEST(ShBasis, ComponentCountIsLevelSquared) {
    Vec3 d(0, 1, 0);
    for (int l = 1; l <= 4; ++l) {
        EXPECT_EQ(sh_basis(d, SHLevel(l)).size(), static_cast<size_t>(l * l));
    }
    EXPECT_THROW(SHLevel(0), EnerfError);
    EXPECT_THROW(SHLevel(5), EnerfError);
}

// Monte-Carlo orthonormality of the real basis over the sphere (scaled-down
// version; the acceptance suite runs the full 1e6-sample check).
TEST(ShBasis, MonteCarloOrthonormality) {
    const int kSamples = 200000;
    const int n = 16;
    std::vector<real> gram(n * n, 0);
    Rng rng = Rng::keyed({55});
    std::vector<real> y(n);
    for (int s = 0; s < kSamples; ++s) {
        Vec3 d = uniform_unit_vector(rng);
        encoders::detail::sh_eval(d[0], d[1], d[2], 4, y.data());
        for (int i = 0; i < n; ++i) {
            for (int j = i; j < n; ++j) gram[i * n + j] += y[i] * y[j];
        }
    }
    const real scale = 4 * kPi / kSamples;
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            const real want = i == j ? 1.0 : 0.0;
            EXPECT_NEAR(gram[i * n + j] * scale, want, 0.02)
                << "components " << i << "," << j;
        }
    }
}

TEST(ShColorEncode, GrayKillsOddTerms) {
    auto c = Tensor::from_values({1, 3}, {0.5, 0.5, 0.5});
    for (int l = 2; l <= 4; ++l) {
        auto out = sh_color_encode(c, SHLevel(l));
        EXPECT_NEAR(out->at(0, 1), 0.0, 1e-12);
        EXPECT_NEAR(out->at(0, 2), 0.0, 1e-12);
        EXPECT_NEAR(out->at(0, 3), 0.0, 1e-12);
    }
}

TEST(ShColorEncode, DegreeOneDecodeRecoversInput) {
    Rng rng = Rng::keyed({66});
    const real k = 0.4886025119029199;
    for (int i = 0; i < 200; ++i) {
        auto c = Tensor::from_values(
            {1, 3}, {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)});
        auto out = sh_color_encode(c, SHLevel(2));
        // components 1..3 are k*(vy, vz, vx) with v = 2c-1
        const real vy = out->at(0, 1) / k;
        const real vz = out->at(0, 2) / k;
        const real vx = out->at(0, 3) / k;
        EXPECT_NEAR((vx + 1) / 2, c->values[0], 1e-6);
        EXPECT_NEAR((vy + 1) / 2, c->values[1], 1e-6);
        EXPECT_NEAR((vz + 1) / 2, c->values[2], 1e-6);
    }
}

TEST(ShColorEncode, EqualInputsEqualEncodings) {
    auto a = Tensor::from_values({1, 3}, {0.2, 0.7, 0.9});
    auto b = Tensor::from_values({1, 3}, {0.2, 0.7, 0.9});
    for (int l = 1; l <= 4; ++l) {
        EXPECT_EQ(sh_color_encode(a, SHLevel(l))->values,
                  sh_color_encode(b, SHLevel(l))->values);
    }
}

TEST(ShColorEncode, GradientMatchesFiniteDifferences) {
    Rng rng = Rng::keyed({67});
    std::string msg;
    for (int l = 2; l <= 4; ++l) {
        auto c = enerf::test::random_tensor({3, 3}, rng, 0.05, 0.95);
        EXPECT_EQ(check_gradients(
                      [&] {
                          auto enc = sh_color_encode(c, SHLevel(l));
                          return diffcore::sum(diffcore::mul(enc, enc));
                      },
                      {c}, &msg),
                  0)
            << msg;
    }
}

TEST(ShColorEncode, StrictModeRejectsOutOfRange) {
    auto c = Tensor::from_values({1, 3}, {1.2, 0.5, 0.5});
    EXPECT_THROW(sh_color_encode(c, SHLevel(2), ColorEncodeMode::strict), EnerfError);
    EXPECT_NO_THROW(sh_color_encode(c, SHLevel(2), ColorEncodeMode::train));
    auto clamped = sh_color_encode(c, SHLevel(2), ColorEncodeMode::train);
    auto exact = sh_color_encode(Tensor::from_values({1, 3}, {1.0, 0.5, 0.5}), SHLevel(2));
    EXPECT_EQ(clamped->values, exact->values);
}
