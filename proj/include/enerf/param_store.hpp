#pragma once

#include "enerf/common.hpp"
#include "enerf/diffcore.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace enerf::diffcore {

// Named trainable arrays. Frozen entries still receive gradients during
// backward but are never touched by the optimizer. Iteration order is the
// map's (sorted by name), which keeps serialization deterministic.
class ParamStore {
public:
    struct Entry {
        TensorPtr tensor;
        bool frozen = false;
    };

    TensorPtr create(const std::string& name, std::vector<int> shape, bool frozen = false) {
        if (entries_.count(name)) throw EnerfError("param store: duplicate name " + name);
        auto t = Tensor::create(std::move(shape), true);
        entries_[name] = Entry{t, frozen};
        return t;
    }

    TensorPtr put(const std::string& name, TensorPtr t, bool frozen = false) {
        if (entries_.count(name)) throw EnerfError("param store: duplicate name " + name);
        t->requires_grad = true;
        entries_[name] = Entry{t, frozen};
        return t;
    }

    const TensorPtr& get(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw EnerfError("param store: unknown name " + name);
        return it->second.tensor;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    bool frozen(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw EnerfError("param store: unknown name " + name);
        return it->second.frozen;
    }

    void zero_grad() {
        for (auto& [name, e] : entries_) e.tensor->zero_grad();
    }

    size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

private:
    std::map<std::string, Entry> entries_;
};

// First/second-moment adaptive optimizer with bias correction. Learning-rate
// multipliers let hash tables and embeddings run hotter than MLP weights.
class Adam {
public:
    real beta1 = 0.9;
    real beta2 = 0.999;
    real eps = 1e-8;

    void set_lr_scale(const std::string& name, real scale) { lr_scale_[name] = scale; }
    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }

    void step(ParamStore& store, real lr) {
        ++t_;
        const real bc1 = real(1) - std::pow(beta1, static_cast<real>(t_));
        const real bc2 = real(1) - std::pow(beta2, static_cast<real>(t_));
        for (auto& [name, entry] : store) {
            if (entry.frozen) continue;
            Tensor& p = *entry.tensor;
            if (p.grad.size() != p.values.size()) {
                throw EnerfError("adam: missing gradient on non-frozen entry " + name);
            }
            auto& [m, v] = moments_[name];
            if (m.size() != p.size()) {
                m.assign(p.size(), real(0));
                v.assign(p.size(), real(0));
            }
            real scaled_lr = lr;
            if (auto it = lr_scale_.find(name); it != lr_scale_.end()) scaled_lr *= it->second;
            for (size_t i = 0; i < p.size(); ++i) {
                const real g = p.grad[i];
                m[i] = beta1 * m[i] + (real(1) - beta1) * g;
                v[i] = beta2 * v[i] + (real(1) - beta2) * g * g;
                const real mhat = m[i] / bc1;
                const real vhat = v[i] / bc2;
                p.values[i] -= scaled_lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    // Moment access for checkpointing.
    const std::map<std::string, std::pair<std::vector<real>, std::vector<real>>>& moments() const {
        return moments_;
    }
    std::map<std::string, std::pair<std::vector<real>, std::vector<real>>>& moments() {
        return moments_;
    }

private:
    std::map<std::string, std::pair<std::vector<real>, std::vector<real>>> moments_;
    std::map<std::string, real> lr_scale_;
    int64_t t_ = 0;
};

inline void adam_step(ParamStore& store, Adam& state, real lr) { state.step(store, lr); }

// ---------------------------------------------------------------------------
// Checkpoint container: magic "ENERF1", then per entry sorted by name:
// u32 name length, name bytes, u8 frozen flag, u32 rank, u32 dims,
// little-endian float32 values. Entries run to end of file.

namespace ckpt {

constexpr char kMagic[6] = {'E', 'N', 'E', 'R', 'F', '1'};

struct RawEntry {
    std::string name;
    bool frozen = false;
    std::vector<int> shape;
    std::vector<real> values;
};

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw EnerfError("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline float read_f32(std::istream& is) {
    uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void write_entry(std::ostream& os, const RawEntry& e) {
    write_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    char fl = e.frozen ? 1 : 0;
    os.write(&fl, 1);
    write_u32(os, static_cast<uint32_t>(e.shape.size()));
    for (int d : e.shape) write_u32(os, static_cast<uint32_t>(d));
    for (real v : e.values) write_f32(os, static_cast<float>(v));
}

inline std::vector<RawEntry> read_all(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw EnerfError("checkpoint: cannot open " + path);
    char magic[6];
    is.read(magic, 6);
    if (!is || std::memcmp(magic, kMagic, 6) != 0) {
        throw EnerfError("checkpoint: bad magic in " + path);
    }
    std::vector<RawEntry> entries;
    while (is.peek() != std::char_traits<char>::eof()) {
        RawEntry e;
        uint32_t name_len = read_u32(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        char fl = 0;
        is.read(&fl, 1);
        if (!is) throw EnerfError("checkpoint: truncated entry in " + path);
        e.frozen = fl != 0;
        uint32_t rank = read_u32(is);
        size_t n = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            uint32_t d = read_u32(is);
            e.shape.push_back(static_cast<int>(d));
            n *= d;
        }
        e.values.resize(n);
        for (size_t i = 0; i < n; ++i) e.values[i] = read_f32(is);
        if (!is) throw EnerfError("checkpoint: truncated values for " + e.name + " in " + path);
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace ckpt

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw EnerfError("checkpoint: cannot write " + path);
    os.write(ckpt::kMagic, 6);
    for (const auto& [name, entry] : store) {
        ckpt::RawEntry e{name, entry.frozen, entry.tensor->shape, entry.tensor->values};
        ckpt::write_entry(os, e);
    }
    if (!os) throw EnerfError("checkpoint: write failed for " + path);
}

// Fills an already-constructed store; names, shapes and frozen flags must
// agree exactly with the file.
inline void load_checkpoint(ParamStore& store, const std::string& path) {
    auto entries = ckpt::read_all(path);
    size_t matched = 0;
    for (const auto& e : entries) {
        if (!store.has(e.name)) {
            throw EnerfError("checkpoint: file entry " + e.name + " missing from model");
        }
        const TensorPtr& t = store.get(e.name);
        if (t->shape != e.shape) {
            throw EnerfError("checkpoint: shape mismatch for " + e.name + ": model " +
                             shape_str(t->shape) + " vs file " + shape_str(e.shape));
        }
        if (store.frozen(e.name) != e.frozen) {
            throw EnerfError("checkpoint: frozen flag mismatch for " + e.name);
        }
        t->values = e.values;
        ++matched;
    }
    if (matched != store.size()) {
        for (const auto& [name, entry] : store) {
            bool found = false;
            for (const auto& e : entries) found |= e.name == name;
            if (!found) throw EnerfError("checkpoint: model entry " + name + " missing from file");
        }
    }
}

}  // namespace enerf::diffcore
