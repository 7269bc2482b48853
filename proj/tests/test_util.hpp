#pragma once

#include "enerf/common.hpp"
#include "enerf/diffcore.hpp"

#include <functional>
#include <vector>

// Shared oracles for the test suites. The finite-difference checker is the
// independent reference for every reverse-mode gradient in the project:
// central differences with step 1e-4, relative tolerance 1e-3, absolute
// floor 1e-6.

namespace enerf::test {

constexpr real kFdStep = 1e-4;
constexpr real kFdRelTol = 1e-3;
constexpr real kFdAbsFloor = 1e-6;

inline bool grad_close(real analytic, real numeric) {
    const real diff = std::abs(analytic - numeric);
    const real scale = std::max(std::abs(analytic), std::abs(numeric));
    return diff <= std::max(kFdAbsFloor, kFdRelTol * scale);
}

// Central finite difference of a scalar function of one tensor entry.
inline real numeric_grad(const std::function<real()>& eval, real& slot, real h = kFdStep) {
    const real saved = slot;
    slot = saved + h;
    const real hi = eval();
    slot = saved - h;
    const real lo = eval();
    slot = saved;
    return (hi - lo) / (2 * h);
}

// Checks reverse-mode gradients of `build` (which constructs a scalar loss
// from the given leaves) against central differences on every leaf entry.
// Returns the number of failing entries; on failure, writes details to msg.
inline int check_gradients(const std::function<diffcore::TensorPtr()>& build,
                           const std::vector<diffcore::TensorPtr>& leaves, std::string* msg,
                           int max_entries_per_leaf = -1, uint64_t sample_seed = 0) {
    for (const auto& leaf : leaves) leaf->zero_grad();
    auto loss = build();
    diffcore::backward(loss);
    int failures = 0;
    auto eval = [&]() { return build()->item(); };
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = *leaves[li];
        leaf.ensure_grad();
        std::vector<size_t> entries;
        if (max_entries_per_leaf < 0 ||
            leaf.size() <= static_cast<size_t>(max_entries_per_leaf)) {
            for (size_t i = 0; i < leaf.size(); ++i) entries.push_back(i);
        } else {
            Rng rng = Rng::keyed({sample_seed, 77u, li});
            for (int k = 0; k < max_entries_per_leaf; ++k) {
                entries.push_back(rng.next_u64() % leaf.size());
            }
        }
        for (size_t i : entries) {
            const real analytic = leaf.grad[i];
            const real numeric = numeric_grad(eval, leaf.values[i]);
            if (!grad_close(analytic, numeric)) {
                ++failures;
                if (msg && failures <= 5) {
                    *msg += "leaf " + std::to_string(li) + " entry " + std::to_string(i) +
                            ": analytic " + std::to_string(analytic) + " vs numeric " +
                            std::to_string(numeric) + "\n";
                }
            }
        }
    }
    return failures;
}

inline diffcore::TensorPtr random_tensor(std::vector<int> shape, Rng& rng, real lo = -2.0,
                                         real hi = 2.0, bool requires_grad = true) {
    auto t = diffcore::Tensor::create(std::move(shape), requires_grad);
    for (auto& v : t->values) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace enerf::test
