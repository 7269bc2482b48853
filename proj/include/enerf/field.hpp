#pragma once

#include "enerf/common.hpp"
#include "enerf/diffcore.hpp"
#include "enerf/encoders.hpp"
#include "enerf/geometry.hpp"
#include "enerf/param_store.hpp"
#include "enerf/scenegen.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace enerf::field {

using diffcore::ParamStore;
using diffcore::Tensor;
using diffcore::TensorPtr;

enum class Variant { enhance, no_multiperf, no_pretrained, test1, test2 };

inline Variant variant_from_string(const std::string& s) {
    if (s == "enhance") return Variant::enhance;
    if (s == "no_multiperf") return Variant::no_multiperf;
    if (s == "no_pretrained") return Variant::no_pretrained;
    if (s == "test1") return Variant::test1;
    if (s == "test2") return Variant::test2;
    throw EnerfError("unknown variant: " + s +
                     " (have enhance, no_multiperf, no_pretrained, test1, test2)");
}

inline std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::enhance: return "enhance";
        case Variant::no_multiperf: return "no_multiperf";
        case Variant::no_pretrained: return "no_pretrained";
        case Variant::test1: return "test1";
        case Variant::test2: return "test2";
    }
    return "?";
}

struct FieldConfig {
    int spatial_layers = 3;
    int spatial_hidden = 64;
    int directional_layers = 2;
    int directional_hidden = 32;
    int appearance_dim = 16;
    int geo_features = 16;
    Variant variant = Variant::enhance;
    bool mid_uses_spatial_features = false;
    int num_appearance = 1;
    int sh_level = 4;
    encoders::HashEncodingConfig hash;

    int decoder_layers = 3;
    int decoder_hidden = 32;
    int decoder_features = 32;

    void validate() const {
        if (spatial_layers < 1 || directional_layers < 1 || decoder_layers < 1) {
            throw EnerfError("field config: layer counts must be positive");
        }
        if (spatial_hidden < 1 || directional_hidden < 1 || appearance_dim < 1 ||
            geo_features < 1 || num_appearance < 1) {
            throw EnerfError("field config: widths must be positive");
        }
        hash.validate();
    }
};

namespace detail {

inline uint64_t name_key(const std::string& name) {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Layer dims for an MLP with `layers` weight matrices: in, hidden x (layers-1), out.
inline std::vector<int> mlp_dims(int in, int hidden, int layers, int out) {
    std::vector<int> dims{in};
    for (int i = 0; i < layers - 1; ++i) dims.push_back(hidden);
    dims.push_back(out);
    return dims;
}

inline void init_mlp(ParamStore& store, const std::string& prefix, const std::vector<int>& dims,
                     uint64_t seed, bool frozen = false) {
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        const int in = dims[l], out = dims[l + 1];
        auto w = store.create(prefix + ".w" + std::to_string(l), {out, in}, frozen);
        Rng rng = Rng::keyed({seed, name_key(prefix), l});
        const real std_dev = std::sqrt(real(2) / in);
        for (auto& v : w->values) v = rng.normal() * std_dev;
        store.create(prefix + ".b" + std::to_string(l), {out}, frozen);  // zero biases
    }
}

// ReLU between layers, linear output.
inline TensorPtr mlp_forward(const ParamStore& store, const std::string& prefix, TensorPtr x,
                             int layers) {
    for (int l = 0; l < layers; ++l) {
        x = diffcore::linear(x, store.get(prefix + ".w" + std::to_string(l)),
                             store.get(prefix + ".b" + std::to_string(l)));
        if (l + 1 < layers) x = diffcore::relu(x);
    }
    return x;
}

inline TensorPtr zeros(int rows, int cols) { return Tensor::create({rows, cols}); }

inline TensorPtr one_minus(const TensorPtr& x) {
    return diffcore::add_scalar(diffcore::scale(x, -1), 1);
}

}  // namespace detail

// c_fine = y * c_mid + (1 - y) * c_coarse; endpoints are exact.
inline TensorPtr joint_color(const TensorPtr& y, const TensorPtr& c_mid,
                             const TensorPtr& c_coarse) {
    return diffcore::add(diffcore::mul(y, c_mid), diffcore::mul(detail::one_minus(y), c_coarse));
}

// Symmetrized blend: averages the y-blend with the mirrored x-blend.
inline TensorPtr joint_color_test1(const TensorPtr& x_factor, const TensorPtr& y,
                                   const TensorPtr& c_mid, const TensorPtr& c_coarse) {
    auto fine1 = joint_color(y, c_mid, c_coarse);
    auto fine2 = diffcore::add(diffcore::mul(detail::one_minus(x_factor), c_mid),
                               diffcore::mul(x_factor, c_coarse));
    return diffcore::scale(diffcore::add(fine1, fine2), 0.5);
}

// ---------------------------------------------------------------------------
// Frozen decoders: two fixed MLPs (position-encoding side and
// direction-encoding side), each bottlenecking its encoding into a feature
// vector. Shipped weights come from the in-repo autoencoder pre-training
// below; a seeded random init is the fallback.

struct DecoderWeights {
    // name -> (shape, values); names are relative: "spatial.w0", ...
    std::map<std::string, std::pair<std::vector<int>, std::vector<real>>> entries;

    static DecoderWeights random_init(const FieldConfig& cfg, uint64_t seed) {
        ParamStore store;
        detail::init_mlp(store, "spatial",
                         detail::mlp_dims(cfg.hash.output_dim(), cfg.decoder_hidden,
                                          cfg.decoder_layers, cfg.decoder_features),
                         hash_combine(seed, 0xdec0de));
        detail::init_mlp(store, "directional",
                         detail::mlp_dims(cfg.sh_level * cfg.sh_level, cfg.decoder_hidden,
                                          cfg.decoder_layers, cfg.decoder_features),
                         hash_combine(seed, 0xdec0df));
        DecoderWeights w;
        for (const auto& [name, e] : store) w.entries[name] = {e.tensor->shape, e.tensor->values};
        return w;
    }

    void save(const std::string& path) const {
        ParamStore store;
        for (const auto& [name, se] : entries) {
            auto t = store.create("decoder." + name, se.first, /*frozen=*/true);
            t->values = se.second;
        }
        diffcore::save_checkpoint(store, path);
    }

    static DecoderWeights load(const std::string& path) {
        DecoderWeights w;
        for (const auto& e : diffcore::ckpt::read_all(path)) {
            if (e.name.rfind("decoder.", 0) != 0) {
                throw EnerfError("decoder checkpoint: unexpected entry " + e.name);
            }
            w.entries[e.name.substr(8)] = {e.shape, e.values};
        }
        if (w.entries.empty()) throw EnerfError("decoder checkpoint: no entries in " + path);
        return w;
    }
};

struct PretrainReport {
    real initial_loss = 0;
    real final_loss = 0;
};

// Trains both decoders as autoencoding feature extractors on encodings drawn
// from a calibration scene, then freezes them. The reconstruction heads are
// training scaffolding and are dropped from the result.
inline DecoderWeights pretrain_decoders(const scenegen::SceneDataset& calibration,
                                        const FieldConfig& cfg, int steps, uint64_t seed,
                                        PretrainReport* report = nullptr) {
    if (calibration.frames.empty()) throw EnerfError("pretrain: empty calibration scene");
    auto weights = DecoderWeights::random_init(cfg, seed);
    if (steps == 0) return weights;

    ParamStore store;
    for (const auto& [name, se] : weights.entries) {
        auto t = store.create(name, se.first);
        t->values = se.second;
    }
    const int x_dim = cfg.hash.output_dim();
    const int d_dim = cfg.sh_level * cfg.sh_level;
    detail::init_mlp(store, "recon_spatial", {cfg.decoder_features, x_dim},
                     hash_combine(seed, 0xabc1));
    detail::init_mlp(store, "recon_directional", {cfg.decoder_features, d_dim},
                     hash_combine(seed, 0xabc2));

    // Fixed random table; it only shapes the input distribution.
    auto table = Tensor::create({cfg.hash.table_size, cfg.hash.features_per_entry});
    {
        Rng rng = Rng::keyed({seed, 0x7ab1e});
        for (auto& v : table->values) v = rng.uniform(-1, 1);
    }

    diffcore::Adam adam;
    const int batch = 256;
    PretrainReport rep;
    for (int step = 0; step < steps; ++step) {
        Rng rng = Rng::keyed({seed, 0xba7c4, static_cast<uint64_t>(step)});
        std::vector<Vec3> xs, dirs;
        xs.reserve(batch);
        dirs.reserve(batch);
        for (int i = 0; i < batch; ++i) {
            const auto& frame =
                calibration.frames[rng.next_u64() % calibration.frames.size()];
            const Vec3 origin = frame.pose.topRightCorner<3, 1>();
            Vec3 target = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            Vec3 dir = (target - origin).normalized();
            const real t = rng.uniform(0.05, 1.5 * origin.norm() + 1.0);
            xs.push_back(geometry::contract(origin + t * dir));
            dirs.push_back(dir);
        }
        auto x_enc = encoders::hash_encode(xs, table, cfg.hash);
        auto d_enc = encoders::sh_basis_batch(dirs, encoders::SHLevel(cfg.sh_level));
        auto sp_feat = detail::mlp_forward(store, "spatial", x_enc, cfg.decoder_layers);
        auto sp_rec = detail::mlp_forward(store, "recon_spatial", sp_feat, 1);
        auto dir_feat = detail::mlp_forward(store, "directional", d_enc, cfg.decoder_layers);
        auto dir_rec = detail::mlp_forward(store, "recon_directional", dir_feat, 1);
        auto loss = diffcore::add(diffcore::mse(sp_rec, diffcore::detach(x_enc)),
                                  diffcore::mse(dir_rec, diffcore::detach(d_enc)));
        if (step == 0) rep.initial_loss = loss->item();
        rep.final_loss = loss->item();
        store.zero_grad();
        diffcore::backward(loss);
        adam.step(store, 1e-3);
    }
    for (auto& [name, se] : weights.entries) se.second = store.get(name)->values;
    if (report) *report = rep;
    return weights;
}

// ---------------------------------------------------------------------------

struct SpatialOut {
    TensorPtr sigma;     // [P,1], post-activation
    TensorPtr c_coarse;  // [P,3]
    TensorPtr y;         // [P,1]
    TensorPtr geo;       // [P,geo_features]
};

struct DirectionalOut {
    TensorPtr c_mid;     // [P,3]
    TensorPtr x_factor;  // [P,1], test1 only
};

struct FieldForward {
    TensorPtr sigma;     // [P,1]
    TensorPtr c_fine;    // [P,3]
    TensorPtr c_mid;     // null for no_multiperf
    TensorPtr c_coarse;  // null for no_multiperf
    TensorPtr y;         // null for no_multiperf
};

// The radiance field: a spatial branch for (y, sigma, c_coarse) and a
// directional branch for c_mid, blended into the joint color. Variants
// rewire the branches; all parameters live in the shared store under
// "field." / "decoder." prefixes.
class Field {
public:
    Field(ParamStore& store, const FieldConfig& cfg, uint64_t init_seed,
          const std::optional<DecoderWeights>& decoders = std::nullopt)
        : store_(&store), cfg_(cfg) {
        cfg_.validate();
        const int x_dim = cfg_.hash.output_dim();
        const int d_dim = cfg_.sh_level * cfg_.sh_level;
        const int dec = cfg_.decoder_features;

        auto table = store.create("field.hash_table", {cfg_.hash.table_size,
                                                       cfg_.hash.features_per_entry});
        Rng trng = Rng::keyed({init_seed, 0x9a5e});
        for (auto& v : table->values) v = trng.uniform(-1e-2, 1e-2);

        auto emb = store.create("field.embedding", {cfg_.num_appearance, cfg_.appearance_dim});
        Rng erng = Rng::keyed({init_seed, 0xe4b});
        for (auto& v : emb->values) v = erng.normal() * 0.1;

        const bool has_decoder = cfg_.variant != Variant::no_pretrained;
        if (has_decoder) {
            auto w = decoders ? *decoders : DecoderWeights::random_init(cfg_, init_seed);
            for (const auto& [name, se] : w.entries) {
                auto t = store.create("decoder." + name, se.first, /*frozen=*/true);
                t->values = se.second;
            }
        }

        const int spatial_out = spatial_out_dim();
        switch (cfg_.variant) {
            case Variant::enhance:
            case Variant::no_multiperf:
            case Variant::no_pretrained:
            case Variant::test1: {
                // no_pretrained keeps the decoder slot (filled with zeros), so
                // layer shapes match the enhance variant exactly.
                const int sp_in = x_dim + dec;
                detail::init_mlp(*store_, "field.spatial",
                                 detail::mlp_dims(sp_in, cfg_.spatial_hidden, cfg_.spatial_layers,
                                                  spatial_out),
                                 init_seed);
                const int dir_in = d_dim + dec + cfg_.appearance_dim +
                                   (uses_geo_in_directional() ? cfg_.geo_features : 0);
                detail::init_mlp(*store_, "field.directional",
                                 detail::mlp_dims(dir_in, cfg_.directional_hidden,
                                                  cfg_.directional_layers, directional_out_dim()),
                                 init_seed);
                break;
            }
            case Variant::test2: {
                // Trainable MLPs produce encoding-shaped features that feed the
                // frozen decoders; fixed linear heads map decoder features out.
                detail::init_mlp(*store_, "field.spatial",
                                 detail::mlp_dims(x_dim, cfg_.spatial_hidden, cfg_.spatial_layers,
                                                  x_dim),
                                 init_seed);
                const int dir_in = d_dim + cfg_.appearance_dim +
                                   (uses_geo_in_directional() ? cfg_.geo_features : 0);
                detail::init_mlp(*store_, "field.directional",
                                 detail::mlp_dims(dir_in, cfg_.directional_hidden,
                                                  cfg_.directional_layers, d_dim),
                                 init_seed);
                detail::init_mlp(*store_, "field.test2_head_spatial", {dec, spatial_out},
                                 hash_combine(init_seed, 0x7e572), /*frozen=*/true);
                detail::init_mlp(*store_, "field.test2_head_directional",
                                 {dec, directional_out_dim()},
                                 hash_combine(init_seed, 0x7e573), /*frozen=*/true);
                break;
            }
        }
        // Start with low density so early training does not saturate.
        auto& sp_bias = store_->get("field.spatial.b" +
                                    std::to_string(cfg_.spatial_layers - 1))->values;
        if (cfg_.variant != Variant::test2) sp_bias[0] = -1.0;
    }

    const FieldConfig& config() const { return cfg_; }
    ParamStore& store() const { return *store_; }

    // Mean embedding over the given rows; held-out views are rendered with it.
    std::vector<real> mean_embedding(const std::vector<int>& train_rows) const {
        const auto& emb = store_->get("field.embedding");
        std::vector<real> mean(cfg_.appearance_dim, 0);
        if (train_rows.empty()) return mean;
        for (int row : train_rows) {
            if (row < 0 || row >= cfg_.num_appearance) {
                throw EnerfError("mean_embedding: appearance row out of range");
            }
            for (int j = 0; j < cfg_.appearance_dim; ++j) mean[j] += emb->at(row, j);
        }
        for (auto& v : mean) v /= static_cast<real>(train_rows.size());
        return mean;
    }

    SpatialOut spatial_forward(const TensorPtr& x_enc) const {
        TensorPtr raw;
        if (cfg_.variant == Variant::test2) {
            auto feat = detail::mlp_forward(*store_, "field.spatial", x_enc, cfg_.spatial_layers);
            auto dec = decoder_spatial(feat);
            raw = detail::mlp_forward(*store_, "field.test2_head_spatial", dec, 1);
        } else {
            auto dec = decoder_spatial(x_enc);
            auto input = diffcore::concat_cols({x_enc, dec});
            raw = detail::mlp_forward(*store_, "field.spatial", input, cfg_.spatial_layers);
        }
        SpatialOut out;
        out.sigma = diffcore::exp_(diffcore::clamp(diffcore::slice_cols(raw, 0, 1), -10, 10));
        if (cfg_.variant == Variant::no_multiperf) {
            out.geo = diffcore::slice_cols(raw, 1, cfg_.geo_features);
        } else {
            out.c_coarse = diffcore::sigmoid(diffcore::slice_cols(raw, 1, 3));
            out.y = diffcore::sigmoid(diffcore::slice_cols(raw, 4, 1));
            out.geo = diffcore::slice_cols(raw, 5, cfg_.geo_features);
        }
        return out;
    }

    DirectionalOut directional_forward(const TensorPtr& d_enc, const TensorPtr& appearance,
                                       const TensorPtr& geo) const {
        std::vector<TensorPtr> inputs;
        TensorPtr raw;
        if (cfg_.variant == Variant::test2) {
            inputs = {d_enc, appearance};
            if (uses_geo_in_directional()) inputs.push_back(require_geo(geo));
            auto feat = detail::mlp_forward(*store_, "field.directional",
                                            diffcore::concat_cols(inputs),
                                            cfg_.directional_layers);
            auto dec = decoder_directional(feat);
            raw = detail::mlp_forward(*store_, "field.test2_head_directional", dec, 1);
        } else {
            inputs = {d_enc, decoder_directional(d_enc), appearance};
            if (uses_geo_in_directional()) inputs.push_back(require_geo(geo));
            raw = detail::mlp_forward(*store_, "field.directional", diffcore::concat_cols(inputs),
                                      cfg_.directional_layers);
        }
        DirectionalOut out;
        out.c_mid = diffcore::sigmoid(diffcore::slice_cols(raw, 0, 3));
        if (cfg_.variant == Variant::test1) {
            out.x_factor = diffcore::sigmoid(diffcore::slice_cols(raw, 3, 1));
        }
        return out;
    }

    // Full per-sample forward. `appearance_override`, when set, replaces the
    // embedding lookup with one fixed vector (evaluation on held-out views).
    FieldForward forward(const std::vector<Vec3>& x_contracted, const std::vector<Vec3>& dirs,
                         const std::vector<int>& appearance_indices,
                         const std::vector<real>* appearance_override = nullptr) const {
        if (x_contracted.size() != dirs.size() ||
            (!appearance_override && x_contracted.size() != appearance_indices.size())) {
            throw EnerfError("field forward: input size mismatch");
        }
        const int p = static_cast<int>(x_contracted.size());
        auto x_enc = encoders::hash_encode(x_contracted, store_->get("field.hash_table"),
                                           cfg_.hash);
        auto sp = spatial_forward(x_enc);
        auto d_enc = encoders::sh_basis_batch(dirs, encoders::SHLevel(cfg_.sh_level));
        TensorPtr app;
        if (appearance_override) {
            if (static_cast<int>(appearance_override->size()) != cfg_.appearance_dim) {
                throw EnerfError("field forward: appearance override has wrong width");
            }
            std::vector<real> tiled(static_cast<size_t>(p) * cfg_.appearance_dim);
            for (int i = 0; i < p; ++i) {
                std::copy(appearance_override->begin(), appearance_override->end(),
                          tiled.begin() + static_cast<size_t>(i) * cfg_.appearance_dim);
            }
            app = Tensor::from_values({p, cfg_.appearance_dim}, std::move(tiled));
        } else {
            app = diffcore::rows_lookup(store_->get("field.embedding"), appearance_indices);
        }
        auto dir = directional_forward(d_enc, app, sp.geo);

        FieldForward out;
        out.sigma = sp.sigma;
        if (cfg_.variant == Variant::no_multiperf) {
            out.c_fine = dir.c_mid;  // single color head, vanilla wiring
        } else if (cfg_.variant == Variant::test1) {
            out.c_mid = dir.c_mid;
            out.c_coarse = sp.c_coarse;
            out.y = sp.y;
            out.c_fine = joint_color_test1(dir.x_factor, sp.y, dir.c_mid, sp.c_coarse);
        } else {
            out.c_mid = dir.c_mid;
            out.c_coarse = sp.c_coarse;
            out.y = sp.y;
            out.c_fine = joint_color(sp.y, dir.c_mid, sp.c_coarse);
        }
        return out;
    }

    bool uses_geo_in_directional() const {
        return cfg_.mid_uses_spatial_features || cfg_.variant == Variant::no_multiperf;
    }

    bool has_mid_coarse_heads() const { return cfg_.variant != Variant::no_multiperf; }

private:
    int spatial_out_dim() const {
        // sigma + geo, plus c_coarse and y unless the heads are removed
        return cfg_.variant == Variant::no_multiperf ? 1 + cfg_.geo_features
                                                     : 1 + 3 + 1 + cfg_.geo_features;
    }
    int directional_out_dim() const { return cfg_.variant == Variant::test1 ? 4 : 3; }

    TensorPtr require_geo(const TensorPtr& geo) const {
        if (!geo) throw EnerfError("field: directional branch needs spatial features");
        return geo;
    }

    TensorPtr decoder_spatial(const TensorPtr& input) const {
        if (cfg_.variant == Variant::no_pretrained) {
            return detail::zeros(input->rows(), cfg_.decoder_features);
        }
        return detail::mlp_forward(*store_, "decoder.spatial", input, cfg_.decoder_layers);
    }

    TensorPtr decoder_directional(const TensorPtr& input) const {
        if (cfg_.variant == Variant::no_pretrained) {
            return detail::zeros(input->rows(), cfg_.decoder_features);
        }
        return detail::mlp_forward(*store_, "decoder.directional", input, cfg_.decoder_layers);
    }

    ParamStore* store_;
    FieldConfig cfg_;
};

// Small density-only field distilled against the main field to concentrate
// samples. Two of these form the proposal stack.
class ProposalField {
public:
    ProposalField(ParamStore& store, const std::string& prefix, uint64_t init_seed,
                  int table_size = 1 << 15, int grid_resolution = 64, int hidden = 16)
        : store_(&store), prefix_(prefix) {
        hash_.table_size = table_size;
        hash_.grid_resolution = grid_resolution;
        hash_.validate();
        auto table = store.create(prefix + ".hash_table",
                                  {hash_.table_size, hash_.features_per_entry});
        Rng rng = Rng::keyed({init_seed, detail::name_key(prefix)});
        for (auto& v : table->values) v = rng.uniform(-1e-2, 1e-2);
        detail::init_mlp(store, prefix + ".mlp",
                         detail::mlp_dims(hash_.output_dim(), hidden, 2, 1),
                         hash_combine(init_seed, detail::name_key(prefix)));
        store.get(prefix + ".mlp.b1")->values[0] = -1.0;
    }

    TensorPtr density(const std::vector<Vec3>& x_contracted) const {
        auto enc = encoders::hash_encode(x_contracted, store_->get(prefix_ + ".hash_table"),
                                         hash_);
        auto raw = detail::mlp_forward(*store_, prefix_ + ".mlp", enc, 2);
        return diffcore::exp_(diffcore::clamp(raw, -10, 10));
    }

    const encoders::HashEncodingConfig& hash_config() const { return hash_; }
    const std::string& prefix() const { return prefix_; }

private:
    ParamStore* store_;
    std::string prefix_;
    encoders::HashEncodingConfig hash_;
};

}  // namespace enerf::field
