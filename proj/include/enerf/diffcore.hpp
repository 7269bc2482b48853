#pragma once

#include "enerf/common.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>
#include <vector>

namespace enerf::diffcore {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

inline std::atomic<bool>& validation_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

// When enabled, tensor creation rejects NaN/Inf values.
inline void set_validation(bool on) { validation_flag().store(on); }

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// A dense array with an optional gradient slot and reverse-mode provenance.
// Graphs are define-by-run: every op allocates a fresh node; backward() walks
// parents once and then refuses to run again on the same graph.
class Tensor {
public:
    std::vector<int> shape;
    std::vector<real> values;
    std::vector<real> grad;
    bool requires_grad = false;

    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;
    bool backward_done = false;

    static TensorPtr create(std::vector<int> shape_in, bool requires_grad_in = false) {
        auto t = std::make_shared<Tensor>();
        t->shape = std::move(shape_in);
        t->values.assign(t->checked_size(), real(0));
        t->requires_grad = requires_grad_in;
        return t;
    }

    static TensorPtr from_values(std::vector<int> shape_in, std::vector<real> values_in,
                                 bool requires_grad_in = false) {
        auto t = std::make_shared<Tensor>();
        t->shape = std::move(shape_in);
        t->values = std::move(values_in);
        if (t->values.size() != t->checked_size()) {
            throw ShapeError("tensor: " + std::to_string(t->values.size()) +
                             " values do not fill shape " + shape_str(t->shape));
        }
        t->validate();
        t->requires_grad = requires_grad_in;
        return t;
    }

    static TensorPtr scalar(real v, bool requires_grad_in = false) {
        return from_values({1}, {v}, requires_grad_in);
    }

    size_t size() const { return values.size(); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() >= 2 ? shape[1] : 1; }
    bool is_scalar() const { return size() == 1; }

    real item() const {
        if (!is_scalar()) throw ShapeError("item: tensor " + shape_str(shape) + " is not scalar");
        return values[0];
    }

    real at(int r, int c) const { return values[static_cast<size_t>(r) * cols() + c]; }
    real& at(int r, int c) { return values[static_cast<size_t>(r) * cols() + c]; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), real(0));
    }

    void zero_grad() { grad.assign(values.size(), real(0)); }

    void validate() const {
        if (!validation_flag().load()) return;
        for (real v : values) {
            if (!std::isfinite(v)) {
                throw EnerfError("tensor: non-finite value rejected (validation enabled)");
            }
        }
    }

    MapMat mat() { return MapMat(values.data(), rows(), cols()); }
    ConstMapMat mat() const { return ConstMapMat(values.data(), rows(), cols()); }
    MapMat grad_mat() {
        ensure_grad();
        return MapMat(grad.data(), rows(), cols());
    }

private:
    size_t checked_size() const {
        if (shape.empty()) throw ShapeError("tensor: empty shape");
        size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
            n *= static_cast<size_t>(d);
        }
        return n;
    }
};

// Node factory for ops defined outside this header (encoders, renderer, ...).
// `backward` receives the finished node; parent grads are reachable through it.
inline TensorPtr make_node(std::vector<int> shape, std::vector<real> values,
                           std::vector<TensorPtr> parents,
                           std::function<void(Tensor&)> backward) {
    auto t = Tensor::from_values(std::move(shape), std::move(values));
    bool needs = false;
    for (const auto& p : parents) needs |= p->requires_grad;
    if (needs) {
        t->requires_grad = true;
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward);
    }
    return t;
}

inline void backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->shape));
    }
    if (loss->backward_done) {
        throw EnerfError("backward: graph already consumed; rebuild the graph before "
                         "calling backward again");
    }
    // Iterative topological order over the parent DAG.
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    std::vector<std::pair<Tensor*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Tensor* node : order) node->ensure_grad();
    loss->grad[0] += real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
        node->backward_done = true;
    }
}

namespace detail {

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
}

enum class Broadcast { none, a_scalar, b_scalar, a_col, b_col };

inline Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape == b.shape) return Broadcast::none;
    if (a.is_scalar()) return Broadcast::a_scalar;
    if (b.is_scalar()) return Broadcast::b_scalar;
    if (a.shape.size() == 2 && a.cols() == 1 && a.rows() == b.rows()) return Broadcast::a_col;
    if (b.shape.size() == 2 && b.cols() == 1 && b.rows() == a.rows()) return Broadcast::b_col;
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape) + " and " +
                     shape_str(b.shape) + " do not broadcast");
}

}  // namespace detail

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    auto kind = detail::broadcast_kind("add", *a, *b);
    const Tensor* big = (kind == detail::Broadcast::a_scalar || kind == detail::Broadcast::a_col)
                            ? b.get()
                            : a.get();
    std::vector<real> out(big->values.size());
    const int r = big->rows(), c = big->cols();
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            real av, bv;
            switch (kind) {
                case detail::Broadcast::a_scalar: av = a->values[0]; bv = b->at(i, j); break;
                case detail::Broadcast::b_scalar: av = a->at(i, j); bv = b->values[0]; break;
                case detail::Broadcast::a_col: av = a->at(i, 0); bv = b->at(i, j); break;
                case detail::Broadcast::b_col: av = a->at(i, j); bv = b->at(i, 0); break;
                default: av = a->at(i, j); bv = b->at(i, j);
            }
            out[static_cast<size_t>(i) * c + j] = av + bv;
        }
    }
    return make_node(big->shape, std::move(out), {a, b}, [a, b, kind](Tensor& self) {
        const int r = self.rows(), c = self.cols();
        auto scatter = [&](const TensorPtr& t, bool is_a) {
            if (!t->requires_grad) return;
            t->ensure_grad();
            bool scalar_side = (is_a && kind == detail::Broadcast::a_scalar) ||
                               (!is_a && kind == detail::Broadcast::b_scalar);
            bool col_side = (is_a && kind == detail::Broadcast::a_col) ||
                            (!is_a && kind == detail::Broadcast::b_col);
            for (int i = 0; i < r; ++i) {
                for (int j = 0; j < c; ++j) {
                    real g = self.grad[static_cast<size_t>(i) * c + j];
                    if (scalar_side) {
                        t->grad[0] += g;
                    } else if (col_side) {
                        t->grad[static_cast<size_t>(i)] += g;
                    } else {
                        t->grad[static_cast<size_t>(i) * c + j] += g;
                    }
                }
            }
        };
        scatter(a, true);
        scatter(b, false);
    });
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    auto kind = detail::broadcast_kind("mul", *a, *b);
    const Tensor* big = (kind == detail::Broadcast::a_scalar || kind == detail::Broadcast::a_col)
                            ? b.get()
                            : a.get();
    const int r = big->rows(), c = big->cols();
    auto pick = [kind](const Tensor& a_, const Tensor& b_, int i, int j) -> std::pair<real, real> {
        switch (kind) {
            case detail::Broadcast::a_scalar: return {a_.values[0], b_.at(i, j)};
            case detail::Broadcast::b_scalar: return {a_.at(i, j), b_.values[0]};
            case detail::Broadcast::a_col: return {a_.at(i, 0), b_.at(i, j)};
            case detail::Broadcast::b_col: return {a_.at(i, j), b_.at(i, 0)};
            default: return {a_.at(i, j), b_.at(i, j)};
        }
    };
    std::vector<real> out(big->values.size());
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
            auto [av, bv] = pick(*a, *b, i, j);
            out[static_cast<size_t>(i) * c + j] = av * bv;
        }
    }
    return make_node(big->shape, std::move(out), {a, b}, [a, b, kind, pick](Tensor& self) {
        const int r = self.rows(), c = self.cols();
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                real g = self.grad[static_cast<size_t>(i) * c + j];
                auto [av, bv] = pick(*a, *b, i, j);
                if (a->requires_grad) {
                    a->ensure_grad();
                    real ga = g * bv;
                    if (kind == detail::Broadcast::a_scalar) a->grad[0] += ga;
                    else if (kind == detail::Broadcast::a_col) a->grad[static_cast<size_t>(i)] += ga;
                    else a->grad[static_cast<size_t>(i) * c + j] += ga;
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    real gb = g * av;
                    if (kind == detail::Broadcast::b_scalar) b->grad[0] += gb;
                    else if (kind == detail::Broadcast::b_col) b->grad[static_cast<size_t>(i)] += gb;
                    else b->grad[static_cast<size_t>(i) * c + j] += gb;
                }
            }
        }
    });
}

inline TensorPtr scale(const TensorPtr& x, real s) {
    std::vector<real> out(x->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] * s;
    return make_node(x->shape, std::move(out), {x}, [x, s](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i] * s;
    });
}

inline TensorPtr add_scalar(const TensorPtr& x, real s) {
    std::vector<real> out(x->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] + s;
    return make_node(x->shape, std::move(out), {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
    });
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return add(a, scale(b, -1)); }

inline TensorPtr relu(const TensorPtr& x) {
    std::vector<real> out(x->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x->values[i] > 0 ? x->values[i] : real(0);
    return make_node(x->shape, std::move(out), {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (x->values[i] > 0) x->grad[i] += self.grad[i];
        }
    });
}

inline TensorPtr sigmoid(const TensorPtr& x) {
    std::vector<real> out(x->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        real v = x->values[i];
        out[i] = v >= 0 ? real(1) / (real(1) + std::exp(-v))
                        : std::exp(v) / (real(1) + std::exp(v));
    }
    return make_node(x->shape, std::move(out), {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            real s = self.values[i];
            x->grad[i] += self.grad[i] * s * (real(1) - s);
        }
    });
}

inline TensorPtr exp_(const TensorPtr& x) {
    std::vector<real> out(x->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x->values[i]);
    return make_node(x->shape, std::move(out), {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i] * self.values[i];
    });
}

inline TensorPtr log_(const TensorPtr& x) {
    std::vector<real> out(x->values.size());
    for (size_t i = 0; i < out.size(); ++i) {
        if (x->values[i] <= 0) {
            throw EnerfError("log: non-positive input " + std::to_string(x->values[i]));
        }
        out[i] = std::log(x->values[i]);
    }
    return make_node(x->shape, std::move(out), {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i] / x->values[i];
    });
}

inline TensorPtr clamp(const TensorPtr& x, real lo, real hi) {
    std::vector<real> out(x->values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x->values[i], lo, hi);
    return make_node(x->shape, std::move(out), {x}, [x, lo, hi](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (x->values[i] > lo && x->values[i] < hi) x->grad[i] += self.grad[i];
        }
    });
}

// y = x * w^T + b, with x [P,in], w [out,in], b [out].
inline TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    if (x->shape.size() != 2 || w->shape.size() != 2) {
        throw ShapeError("linear: x and w must be rank 2, got " + shape_str(x->shape) + " and " +
                         shape_str(w->shape));
    }
    const int p = x->rows(), in = x->cols(), out = w->rows();
    if (w->cols() != in) {
        throw ShapeError("linear: input features " + std::to_string(in) +
                         " do not match weight in-features " + std::to_string(w->cols()) +
                         " (x " + shape_str(x->shape) + ", w " + shape_str(w->shape) + ")");
    }
    if (static_cast<int>(b->size()) != out) {
        throw ShapeError("linear: bias " + shape_str(b->shape) + " does not match out-features " +
                         std::to_string(out));
    }
    std::vector<real> vals(static_cast<size_t>(p) * out);
    {
        MapMat y(vals.data(), p, out);
        y.noalias() = x->mat() * w->mat().transpose();
        ConstMapMat bias(b->values.data(), 1, out);
        y.rowwise() += bias.row(0);
    }
    return make_node({p, out}, std::move(vals), {x, w, b}, [x, w, b](Tensor& self) {
        MapMat gy(self.grad.data(), self.rows(), self.cols());
        if (x->requires_grad) {
            x->grad_mat().noalias() += gy * w->mat();
        }
        if (w->requires_grad) {
            w->grad_mat().noalias() += gy.transpose() * x->mat();
        }
        if (b->requires_grad) {
            b->ensure_grad();
            MapMat gb(b->grad.data(), 1, static_cast<int>(b->size()));
            gb.row(0) += gy.colwise().sum();
        }
    });
}

inline TensorPtr concat_cols(const std::vector<TensorPtr>& xs) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const int r = xs[0]->rows();
    int total = 0;
    for (const auto& x : xs) {
        if (x->shape.size() != 2 || x->rows() != r) {
            throw ShapeError("concat: row mismatch, expected " + std::to_string(r) + " rows, got " +
                             shape_str(x->shape));
        }
        total += x->cols();
    }
    std::vector<real> out(static_cast<size_t>(r) * total);
    int off = 0;
    for (const auto& x : xs) {
        const int c = x->cols();
        for (int i = 0; i < r; ++i) {
            std::copy_n(x->values.data() + static_cast<size_t>(i) * c, c,
                        out.data() + static_cast<size_t>(i) * total + off);
        }
        off += c;
    }
    return make_node({r, total}, std::move(out), xs, [xs](Tensor& self) {
        const int r = self.rows(), total = self.cols();
        int off = 0;
        for (const auto& x : xs) {
            const int c = x->cols();
            if (x->requires_grad) {
                x->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) {
                        x->grad[static_cast<size_t>(i) * c + j] +=
                            self.grad[static_cast<size_t>(i) * total + off + j];
                    }
                }
            }
            off += c;
        }
    });
}

inline TensorPtr slice_cols(const TensorPtr& x, int start, int count) {
    if (x->shape.size() != 2 || start < 0 || count <= 0 || start + count > x->cols()) {
        throw ShapeError("slice: columns [" + std::to_string(start) + "," +
                         std::to_string(start + count) + ") out of range for " +
                         shape_str(x->shape));
    }
    const int r = x->rows(), c = x->cols();
    std::vector<real> out(static_cast<size_t>(r) * count);
    for (int i = 0; i < r; ++i) {
        std::copy_n(x->values.data() + static_cast<size_t>(i) * c + start, count,
                    out.data() + static_cast<size_t>(i) * count);
    }
    return make_node({r, count}, std::move(out), {x}, [x, start, count](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const int r = x->rows(), c = x->cols();
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < count; ++j) {
                x->grad[static_cast<size_t>(i) * c + start + j] +=
                    self.grad[static_cast<size_t>(i) * count + j];
            }
        }
    });
}

inline TensorPtr reshape(const TensorPtr& x, std::vector<int> shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(std::max(d, 0));
    if (n != x->size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x->shape) + " as " +
                         shape_str(shape));
    }
    std::vector<real> out = x->values;
    return make_node(std::move(shape), std::move(out), {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
    });
}

inline TensorPtr sum(const TensorPtr& x) {
    real acc = 0;  // double accumulation
    for (real v : x->values) acc += v;
    return make_node({1}, {acc}, {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += self.grad[0];
    });
}

// Row-wise sum: [R,C] -> [R,1].
inline TensorPtr sum_rows(const TensorPtr& x) {
    if (x->shape.size() != 2) throw ShapeError("sum_rows: rank-2 input required");
    const int r = x->rows(), c = x->cols();
    std::vector<real> out(r, real(0));
    for (int i = 0; i < r; ++i) {
        real acc = 0;
        for (int j = 0; j < c; ++j) acc += x->at(i, j);
        out[static_cast<size_t>(i)] = acc;
    }
    return make_node({r, 1}, std::move(out), {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const int r = x->rows(), c = x->cols();
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                x->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(i)];
            }
        }
    });
}

inline TensorPtr mse(const TensorPtr& a, const TensorPtr& b) {
    detail::check_same_shape("mse", *a, *b);
    real acc = 0;
    for (size_t i = 0; i < a->size(); ++i) {
        real d = a->values[i] - b->values[i];
        acc += d * d;
    }
    const real n = static_cast<real>(a->size());
    return make_node({1}, {acc / n}, {a, b}, [a, b, n](Tensor& self) {
        const real g = self.grad[0] * 2 / n;
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < a->size(); ++i) a->grad[i] += g * (a->values[i] - b->values[i]);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < b->size(); ++i) b->grad[i] -= g * (a->values[i] - b->values[i]);
        }
    });
}

// Row-wise exclusive prefix sum: out[i,0] = 0, out[i,j] = sum_{k<j} x[i,k].
inline TensorPtr cumsum_exclusive(const TensorPtr& x) {
    if (x->shape.size() != 2) throw ShapeError("cumsum_exclusive: rank-2 input required");
    const int r = x->rows(), c = x->cols();
    std::vector<real> out(x->size());
    for (int i = 0; i < r; ++i) {
        real acc = 0;
        for (int j = 0; j < c; ++j) {
            out[static_cast<size_t>(i) * c + j] = acc;
            acc += x->at(i, j);
        }
    }
    return make_node(x->shape, std::move(out), {x}, [x](Tensor& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const int r = x->rows(), c = x->cols();
        for (int i = 0; i < r; ++i) {
            real acc = 0;  // suffix sum of downstream grads
            for (int j = c - 1; j >= 0; --j) {
                x->grad[static_cast<size_t>(i) * c + j] += acc;
                acc += self.grad[static_cast<size_t>(i) * c + j];
            }
        }
    });
}

// Embedding-style row gather; gradients scatter-add into the table.
inline TensorPtr rows_lookup(const TensorPtr& table, const std::vector<int>& indices) {
    if (table->shape.size() != 2) throw ShapeError("rows_lookup: rank-2 table required");
    const int v = table->rows(), f = table->cols();
    std::vector<real> out(indices.size() * static_cast<size_t>(f));
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= v) {
            throw EnerfError("rows_lookup: index " + std::to_string(idx) +
                             " outside table of " + std::to_string(v) + " rows");
        }
        std::copy_n(table->values.data() + static_cast<size_t>(idx) * f, f,
                    out.data() + i * static_cast<size_t>(f));
    }
    return make_node({static_cast<int>(indices.size()), f}, std::move(out), {table},
                     [table, indices](Tensor& self) {
                         if (!table->requires_grad) return;
                         table->ensure_grad();
                         const int f = table->cols();
                         for (size_t i = 0; i < indices.size(); ++i) {
                             for (int j = 0; j < f; ++j) {
                                 table->grad[static_cast<size_t>(indices[i]) * f + j] +=
                                     self.grad[i * static_cast<size_t>(f) + j];
                             }
                         }
                     });
}

// Value copy with no provenance: gradients stop here.
inline TensorPtr detach(const TensorPtr& x) {
    return Tensor::from_values(x->shape, x->values, false);
}

}  // namespace enerf::diffcore
