#include "enerf/diffcore.hpp"
#include "enerf/param_store.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

using namespace enerf;
using namespace enerf::diffcore;
using enerf::test::check_gradients;
using enerf::test::random_tensor;

TEST(Ops, ReluDefinition) {
    auto x = Tensor::from_values({3}, {-1, 0, 2});
    auto y = relu(x);
    EXPECT_EQ(y->values, (std::vector<real>{0, 0, 2}));
}

TEST(Ops, SigmoidSymmetryPoint) {
    auto x = Tensor::from_values({1}, {0});
    EXPECT_DOUBLE_EQ(sigmoid(x)->item(), 0.5);
}

TEST(Ops, MseHandValue) {
    auto a = Tensor::from_values({2}, {1, 1});
    auto b = Tensor::from_values({2}, {0, 0});
    EXPECT_DOUBLE_EQ(mse(a, b)->item(), 1.0);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
    auto a = Tensor::from_values({2}, {1, 1});
    auto b = Tensor::from_values({3}, {0, 0, 0});
    try {
        mse(a, b);
        FAIL() << "expected shape error";
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("mse"), std::string::npos);
        EXPECT_NE(msg.find("[2]"), std::string::npos);
        EXPECT_NE(msg.find("[3]"), std::string::npos);
    }
}

TEST(Ops, LinearHandValue) {
    auto x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    auto w = Tensor::from_values({2, 3}, {1, 0, 0, 0, 1, 0});
    auto b = Tensor::from_values({2}, {10, 20});
    auto y = linear(x, w, b);
    EXPECT_EQ(y->shape, (std::vector<int>{2, 2}));
    EXPECT_DOUBLE_EQ(y->at(0, 0), 11);
    EXPECT_DOUBLE_EQ(y->at(0, 1), 22);
    EXPECT_DOUBLE_EQ(y->at(1, 0), 14);
    EXPECT_DOUBLE_EQ(y->at(1, 1), 25);
}

TEST(Ops, LinearFeatureMismatch) {
    auto x = Tensor::from_values({1, 2}, {1, 2});
    auto w = Tensor::from_values({2, 3}, {1, 0, 0, 0, 1, 0});
    auto b = Tensor::from_values({2}, {0, 0});
    EXPECT_THROW(linear(x, w, b), ShapeError);
}

TEST(Ops, CumsumExclusiveHandValue) {
    auto x = Tensor::from_values({1, 4}, {1, 2, 3, 4});
    auto y = cumsum_exclusive(x);
    EXPECT_EQ(y->values, (std::vector<real>{0, 1, 3, 6}));
}

TEST(Ops, ConcatSliceRoundTrip) {
    auto a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from_values({2, 1}, {5, 6});
    auto c = concat_cols({a, b});
    EXPECT_EQ(c->shape, (std::vector<int>{2, 3}));
    EXPECT_EQ(c->values, (std::vector<real>{1, 2, 5, 3, 4, 6}));
    auto back = slice_cols(c, 0, 2);
    EXPECT_EQ(back->values, a->values);
}

TEST(Ops, ValidationRejectsNonFinite) {
    set_validation(true);
    EXPECT_THROW(Tensor::from_values({1}, {std::nan("")}), EnerfError);
    set_validation(false);
    EXPECT_NO_THROW(Tensor::from_values({1}, {std::nan("")}));
}

TEST(Backward, SquareGradient) {
    auto x = Tensor::from_values({3}, {1, 2, 3}, true);
    auto loss = sum(mul(x, x));
    backward(loss);
    EXPECT_EQ(x->grad, (std::vector<real>{2, 4, 6}));
}

TEST(Backward, SigmoidDerivativeAtZero) {
    auto w = Tensor::from_values({1, 1}, {0}, true);
    auto one = Tensor::from_values({1, 1}, {1});
    auto b = Tensor::from_values({1}, {0});
    auto loss = sum(sigmoid(linear(one, w, b)));
    backward(loss);
    EXPECT_NEAR(w->grad[0], 0.25, 1e-12);
}

TEST(Backward, NonScalarLossRejected) {
    auto x = Tensor::from_values({2}, {1, 2}, true);
    auto y = mul(x, x);
    EXPECT_THROW(backward(y), ShapeError);
}

TEST(Backward, SecondBackwardWithoutResetFails) {
    auto x = Tensor::from_values({2}, {1, 2}, true);
    auto loss = sum(mul(x, x));
    backward(loss);
    EXPECT_THROW(backward(loss), EnerfError);
}

TEST(Backward, GradPopulatedForAllReachable) {
    auto x = Tensor::from_values({2}, {1, 2}, true);
    auto y = Tensor::from_values({2}, {0, 0}, true);  // zero gradient path
    auto loss = sum(add(mul(x, x), mul(y, Tensor::from_values({2}, {0, 0}))));
    backward(loss);
    ASSERT_EQ(y->grad.size(), 2u);
    EXPECT_EQ(y->grad, (std::vector<real>{0, 0}));
}

// Reverse-mode vs central finite differences for every registered op,
// randomized inputs in [-2,2] (shifted positive for log).
TEST(GradCheck, EveryOp) {
    Rng rng = Rng::keyed({2024});
    std::string msg;

    auto x = random_tensor({4, 5}, rng);
    auto w = random_tensor({3, 5}, rng);
    auto b = random_tensor({3}, rng);
    EXPECT_EQ(check_gradients([&] { return sum(linear(x, w, b)); }, {x, w, b}, &msg), 0) << msg;

    auto r = random_tensor({3, 4}, rng);
    // keep away from the relu kink where FD is one-sided
    for (auto& v : r->values)
        if (std::abs(v) < 5e-2) v = 0.3;
    EXPECT_EQ(check_gradients([&] { return sum(relu(r)); }, {r}, &msg), 0) << msg;

    auto s = random_tensor({3, 4}, rng);
    EXPECT_EQ(check_gradients([&] { return sum(sigmoid(s)); }, {s}, &msg), 0) << msg;
    EXPECT_EQ(check_gradients([&] { return sum(exp_(s)); }, {s}, &msg), 0) << msg;

    auto pos = random_tensor({3, 4}, rng, 0.5, 2.5);
    EXPECT_EQ(check_gradients([&] { return sum(log_(pos)); }, {pos}, &msg), 0) << msg;

    auto a2 = random_tensor({3, 4}, rng);
    auto b2 = random_tensor({3, 4}, rng);
    EXPECT_EQ(check_gradients([&] { return sum(mul(a2, b2)); }, {a2, b2}, &msg), 0) << msg;
    EXPECT_EQ(check_gradients([&] { return sum(add(a2, b2)); }, {a2, b2}, &msg), 0) << msg;
    EXPECT_EQ(check_gradients([&] { return mse(a2, b2); }, {a2, b2}, &msg), 0) << msg;

    auto col = random_tensor({3, 1}, rng);
    EXPECT_EQ(check_gradients([&] { return sum(mul(col, a2)); }, {col, a2}, &msg), 0) << msg;
    EXPECT_EQ(check_gradients([&] { return sum(add(col, a2)); }, {col, a2}, &msg), 0) << msg;

    auto sc = random_tensor({1}, rng);
    EXPECT_EQ(check_gradients([&] { return sum(mul(sc, a2)); }, {sc, a2}, &msg), 0) << msg;

    auto c1 = random_tensor({3, 2}, rng);
    auto c2 = random_tensor({3, 3}, rng);
    EXPECT_EQ(
        check_gradients([&] { return sum(mul(concat_cols({c1, c2}), concat_cols({c1, c2}))); },
                        {c1, c2}, &msg),
        0)
        << msg;
    EXPECT_EQ(check_gradients([&] { return sum(mul(slice_cols(c2, 1, 2), slice_cols(c2, 0, 2))); },
                              {c2}, &msg),
              0)
        << msg;

    auto cs = random_tensor({2, 5}, rng);
    EXPECT_EQ(check_gradients([&] { return sum(mul(cumsum_exclusive(cs), cs)); }, {cs}, &msg), 0)
        << msg;

    auto sr = random_tensor({4, 3}, rng);
    EXPECT_EQ(check_gradients([&] { return sum(mul(sum_rows(sr), sum_rows(sr))); }, {sr}, &msg), 0)
        << msg;

    auto rs = random_tensor({2, 6}, rng);
    EXPECT_EQ(check_gradients([&] { return sum(mul(reshape(rs, {4, 3}), reshape(rs, {4, 3}))); },
                              {rs}, &msg),
              0)
        << msg;

    auto cl = random_tensor({3, 4}, rng);
    for (auto& v : cl->values)
        if (std::abs(std::abs(v) - 1.0) < 5e-2) v = 0.5;  // stay off clamp corners
    EXPECT_EQ(check_gradients([&] { return sum(clamp(cl, -1, 1)); }, {cl}, &msg), 0) << msg;

    auto table = random_tensor({5, 3}, rng);
    std::vector<int> idx{0, 3, 3, 1};
    EXPECT_EQ(check_gradients(
                  [&] {
                      auto g = rows_lookup(table, idx);
                      return sum(mul(g, g));
                  },
                  {table}, &msg),
              0)
        << msg;

    auto sa = random_tensor({2, 3}, rng);
    EXPECT_EQ(check_gradients([&] { return sum(mul(add_scalar(scale(sa, -1.5), 2.0), sa)); },
                              {sa}, &msg),
              0)
        << msg;
}

TEST(GradCheck, DetachStopsGradient) {
    auto x = Tensor::from_values({2}, {1, 2}, true);
    auto loss = sum(mul(detach(x), x));
    backward(loss);
    EXPECT_EQ(x->grad, (std::vector<real>{1, 2}));  // only the live branch
}

TEST(Adam, FrozenEntryUntouched) {
    ParamStore store;
    auto w = store.create("w", {3}, /*frozen=*/true);
    w->values = {1, 2, 3};
    auto v = store.create("v", {1});
    v->values = {5};
    w->ensure_grad();
    w->grad = {1, 1, 1};
    v->ensure_grad();
    v->grad = {1};
    const auto before = w->values;
    Adam adam;
    adam.step(store, 0.1);
    EXPECT_EQ(w->values, before);
    EXPECT_NE(v->values[0], 5.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamStore store;
    auto w = store.create("w", {1});
    w->values = {1.0};
    w->ensure_grad();
    w->grad = {1.0};
    Adam adam;
    adam.step(store, 0.05);
    EXPECT_NEAR(w->values[0], 1.0 - 0.05, 1e-8);
}

TEST(Adam, ZeroLearningRateIsNoop) {
    ParamStore store;
    auto w = store.create("w", {2});
    w->values = {1, -1};
    w->ensure_grad();
    w->grad = {3, -2};
    Adam adam;
    adam.step(store, 0.0);
    EXPECT_EQ(w->values, (std::vector<real>{1, -1}));
}

TEST(Adam, MissingGradErrors) {
    ParamStore store;
    store.create("w", {2});
    Adam adam;
    EXPECT_THROW(adam.step(store, 0.1), EnerfError);
}

TEST(Checkpoint, RoundTrip) {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "enerf_ckpt_test.bin";
    ParamStore store;
    auto a = store.create("alpha", {2, 2});
    a->values = {1.5, -2.25, 0.125, 4};
    auto b = store.create("beta", {3}, /*frozen=*/true);
    b->values = {0.5, 0.25, -0.75};
    save_checkpoint(store, path.string());

    ParamStore loaded;
    loaded.create("alpha", {2, 2});
    loaded.create("beta", {3}, true);
    load_checkpoint(loaded, path.string());
    EXPECT_EQ(loaded.get("alpha")->values, a->values);
    EXPECT_EQ(loaded.get("beta")->values, b->values);
    fs::remove(path);
}

TEST(Checkpoint, BadMagicRejected) {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "enerf_ckpt_bad.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTENE rest";
    }
    ParamStore store;
    store.create("alpha", {1});
    EXPECT_THROW(load_checkpoint(store, path.string()), EnerfError);
    fs::remove(path);
}

TEST(Checkpoint, ShapeMismatchRejected) {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "enerf_ckpt_shape.bin";
    ParamStore store;
    store.create("alpha", {2});
    save_checkpoint(store, path.string());
    ParamStore other;
    other.create("alpha", {3});
    EXPECT_THROW(load_checkpoint(other, path.string()), EnerfError);
    fs::remove(path);
}

TEST(Checkpoint, MissingEntryRejected) {
    namespace fs = std::filesystem;
    const auto path = fs::temp_directory_path() / "enerf_ckpt_missing.bin";
    ParamStore store;
    store.create("alpha", {1});
    save_checkpoint(store, path.string());
    ParamStore other;
    other.create("alpha", {1});
    other.create("beta", {1});
    EXPECT_THROW(load_checkpoint(other, path.string()), EnerfError);
    fs::remove(path);
}

TEST(ParamStore, DuplicateNameRejected) {
    ParamStore store;
    store.create("w", {1});
    EXPECT_THROW(store.create("w", {2}), EnerfError);
}

TEST(ParamStore, IterationSortedByName) {
    ParamStore store;
    store.create("zeta", {1});
    store.create("alpha", {1});
    store.create("mid", {1});
    std::vector<std::string> names;
    for (const auto& [name, e] : store) names.push_back(name);
    EXPECT_EQ(names, (std::vector<std::string>{"alpha", "mid", "zeta"}));
}
