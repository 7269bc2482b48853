#pragma once

#include "enerf/common.hpp"
#include "enerf/field.hpp"
#include "enerf/objective.hpp"
#include "enerf/param_store.hpp"
#include "enerf/renderer.hpp"
#include "enerf/scenegen.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

namespace enerf::trainer {

using diffcore::ParamStore;

struct TrainConfig {
    int iterations = 2000;       // 30000 at full scale
    int rays_per_batch = 1024;   // 4096 at full scale
    real lr_mlp = 1e-3;
    real lr_table = 1e-2;        // hash tables and embeddings
    int warmup_steps = 100;
    uint64_t seed = 1;
    field::Variant variant = field::Variant::enhance;
    int eval_every = 0;          // 0: evaluate only when asked
    int checkpoint_every = 0;

    // Sampling and rendering.
    renderer::SamplerConfig sampler;
    real t_near = 0.05;
    real t_far = 6.0;
    Vec3 background{1, 1, 1};

    // Field shape; num_appearance is filled from the dataset.
    field::FieldConfig field_cfg;

    // Frozen-decoder pre-training. The seed is fixed independently of the
    // run seed so every run shares the same decoders.
    int pretrain_steps = 200;
    uint64_t pretrain_seed = 7;

    objective::ShLevels sh_levels;
};

// A trainable model: parameter store, main field, and the proposal stack.
// Not movable; the proposal fields hold a pointer to the store.
class Model {
public:
    Model(const TrainConfig& cfg, int num_appearance,
          const std::optional<field::DecoderWeights>& decoders = std::nullopt)
        : variant_(cfg.variant) {
        field::FieldConfig fcfg = cfg.field_cfg;
        fcfg.variant = cfg.variant;
        fcfg.num_appearance = std::max(num_appearance, 1);
        field_ = std::make_unique<field::Field>(store_, fcfg, cfg.seed, decoders);
        proposals_.emplace_back(store_, "prop0", cfg.seed + 1);
        proposals_.emplace_back(store_, "prop1", cfg.seed + 2);
    }
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    field::Field& field() { return *field_; }
    const field::Field& field() const { return *field_; }
    const std::vector<field::ProposalField>& proposals() const { return proposals_; }
    field::Variant variant() const { return variant_; }

private:
    ParamStore store_;
    std::unique_ptr<field::Field> field_;
    std::vector<field::ProposalField> proposals_;
    field::Variant variant_;
};

// Decoders come from a reproducible pre-training pass on a small calibration
// scene kept disjoint from the evaluation scenes.
inline field::DecoderWeights make_decoders(const TrainConfig& cfg) {
    if (cfg.pretrain_steps <= 0 || cfg.variant == field::Variant::no_pretrained) {
        return field::DecoderWeights::random_init(cfg.field_cfg, cfg.pretrain_seed);
    }
    auto scene = scenegen::builtin_scene("boxes");
    scenegen::DatasetGenConfig dcfg;
    dcfg.n_train = 6;
    dcfg.n_eval = 0;
    dcfg.width = 16;
    dcfg.height = 16;
    dcfg.quadrature = 128;
    dcfg.seed = cfg.pretrain_seed;
    auto calibration = scenegen::generate_dataset(scene, dcfg);
    return field::pretrain_decoders(calibration, cfg.field_cfg, cfg.pretrain_steps,
                                    cfg.pretrain_seed);
}

struct LossRow {
    int step = 0;
    objective::LossBreakdown loss;
    real psnr_train = 0;
};

inline std::string loss_csv_header() {
    return "step,total,prop,fine_mse,sh_fine,sh_mid,sh_coarse,psnr_train";
}

inline std::string loss_csv_row(const LossRow& row) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.6g", row.step,
                  row.loss.total, row.loss.prop, row.loss.fine_mse, row.loss.sh_fine,
                  row.loss.sh_mid, row.loss.sh_coarse, row.psnr_train);
    return buf;
}

struct TrainResult {
    std::vector<LossRow> log;
    real final_loss = 0;
};

namespace detail {

inline renderer::RenderConfig render_config(const TrainConfig& cfg, bool jitter,
                                            uint64_t jitter_key) {
    renderer::RenderConfig rc;
    rc.sampler = cfg.sampler;
    rc.background = cfg.background;
    rc.jitter = jitter;
    rc.jitter_key = jitter_key;
    return rc;
}

}  // namespace detail

inline void configure_adam(diffcore::Adam& adam, const Model& model, const TrainConfig& cfg) {
    const real scale = cfg.lr_table / cfg.lr_mlp;
    adam.set_lr_scale("field.hash_table", scale);
    adam.set_lr_scale("field.embedding", scale);
    for (const auto& prop : model.proposals()) {
        adam.set_lr_scale(prop.prefix() + ".hash_table", scale);
    }
}

// One optimization step: sample a pixel batch, render, apply the total loss,
// and step the optimizer. Every random draw is keyed by (seed, step), so
// interrupted-and-resumed runs retrace uninterrupted ones exactly.
inline LossRow train_step(Model& model, const scenegen::SceneDataset& ds,
                          const TrainConfig& cfg, diffcore::Adam& adam, int step) {
    const auto train_frames = ds.train_indices();
    if (train_frames.empty()) throw EnerfError("train: dataset has no train frames");
    Rng rng = Rng::keyed({cfg.seed, 0xba7c4u, static_cast<uint64_t>(step)});
    std::vector<geometry::Ray> rays;
    std::vector<real> gt_values;
    rays.reserve(static_cast<size_t>(cfg.rays_per_batch));
    gt_values.reserve(static_cast<size_t>(cfg.rays_per_batch) * 3);
    for (int i = 0; i < cfg.rays_per_batch; ++i) {
        const int frame_idx =
            train_frames[static_cast<size_t>(rng.next_u64() % train_frames.size())];
        const auto& frame = ds.frames[static_cast<size_t>(frame_idx)];
        const int x = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(ds.width));
        const int y = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(ds.height));
        rays.push_back(geometry::ray_from_pixel(ds.intrinsics, frame.pose, x + real(0.5),
                                                y + real(0.5), cfg.t_near, cfg.t_far,
                                                frame.appearance_index));
        const Vec3 px = frame.image.pixel(x, y);
        gt_values.push_back(px[0]);
        gt_values.push_back(px[1]);
        gt_values.push_back(px[2]);
    }
    auto gt = diffcore::Tensor::from_values({cfg.rays_per_batch, 3}, std::move(gt_values));

    auto rc = detail::render_config(cfg, /*jitter=*/true,
                                    hash_combine(cfg.seed, static_cast<uint64_t>(step)));
    auto batch = renderer::render_batch(model.field(), model.proposals(), rays, rc);
    auto res = objective::loss_total(batch, gt, cfg.sh_levels,
                                     model.variant() != field::Variant::no_multiperf);

    if (!std::isfinite(res.breakdown.total)) {
        std::cerr << "train: non-finite loss at step " << step << " (prop " << res.breakdown.prop
                  << ", fine_mse " << res.breakdown.fine_mse << "); batch of "
                  << cfg.rays_per_batch << " rays, seed " << cfg.seed << "\n";
        throw EnerfError("train: non-finite loss at step " + std::to_string(step));
    }

    model.store().zero_grad();
    diffcore::backward(res.total);
    const real warmup =
        cfg.warmup_steps > 0
            ? 0.1 + 0.9 * std::min(real(1), static_cast<real>(step + 1) / cfg.warmup_steps)
            : 1.0;
    adam.step(model.store(), cfg.lr_mlp * warmup);

    LossRow row;
    row.step = step;
    row.loss = res.breakdown;
    const real per_channel_mse = res.breakdown.fine_mse / 3;
    row.psnr_train =
        per_channel_mse <= 0 ? 99.0 : std::min(real(99), -10 * std::log10(per_channel_mse));
    return row;
}

inline TrainResult train(Model& model, const scenegen::SceneDataset& ds, const TrainConfig& cfg,
                         std::ostream* loss_csv = nullptr,
                         const std::function<void(int, Model&, diffcore::Adam&)>& step_hook = {},
                         diffcore::Adam* adam_in = nullptr, int start_step = 0) {
    diffcore::Adam local_adam;
    diffcore::Adam& adam = adam_in ? *adam_in : local_adam;
    if (!adam_in) configure_adam(adam, model, cfg);
    if (loss_csv && start_step == 0) *loss_csv << loss_csv_header() << "\n";
    TrainResult result;
    for (int step = start_step; step < cfg.iterations; ++step) {
        auto row = train_step(model, ds, cfg, adam, step);
        if (loss_csv) *loss_csv << loss_csv_row(row) << "\n";
        result.log.push_back(row);
        result.final_loss = row.loss.total;
        if (step_hook) step_hook(step, model, adam);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation over held-out views: renders fine/mid/coarse channels with the
// mean training embedding and reports PSNR/SSIM per view plus means.

struct EvalView {
    int frame_index = 0;
    real psnr_fine = 0, ssim_fine = 0;
    real psnr_mid = 0, ssim_mid = 0;
    real psnr_coarse = 0, ssim_coarse = 0;
};

struct EvalReport {
    std::vector<EvalView> views;
    bool has_mid_coarse = true;
    real mean_psnr_fine = 0, mean_ssim_fine = 0;
    real mean_psnr_mid = 0, mean_ssim_mid = 0;
    real mean_psnr_coarse = 0, mean_ssim_coarse = 0;

    void compute_means() {
        auto mean = [&](auto getter) {
            real acc = 0;
            for (const auto& v : views) acc += getter(v);
            return views.empty() ? real(0) : acc / views.size();
        };
        mean_psnr_fine = mean([](const EvalView& v) { return v.psnr_fine; });
        mean_ssim_fine = mean([](const EvalView& v) { return v.ssim_fine; });
        mean_psnr_mid = mean([](const EvalView& v) { return v.psnr_mid; });
        mean_ssim_mid = mean([](const EvalView& v) { return v.ssim_mid; });
        mean_psnr_coarse = mean([](const EvalView& v) { return v.psnr_coarse; });
        mean_ssim_coarse = mean([](const EvalView& v) { return v.ssim_coarse; });
    }
};

inline EvalReport evaluate(const Model& model, const scenegen::SceneDataset& ds,
                           const TrainConfig& cfg) {
    EvalReport report;
    std::vector<int> train_rows;
    for (int idx : ds.train_indices()) {
        train_rows.push_back(ds.frames[static_cast<size_t>(idx)].appearance_index);
    }
    const auto mean_embedding = model.field().mean_embedding(train_rows);
    auto rc = detail::render_config(cfg, /*jitter=*/false, 0);
    for (int idx : ds.eval_indices()) {
        const auto& frame = ds.frames[static_cast<size_t>(idx)];
        auto channels = renderer::render_image(model.field(), model.proposals(), ds.intrinsics,
                                               frame.pose, ds.width, ds.height, rc, cfg.t_near,
                                               cfg.t_far, frame.appearance_index,
                                               &mean_embedding);
        EvalView view;
        view.frame_index = idx;
        view.psnr_fine = objective::metrics_psnr(channels.fine, frame.image);
        view.ssim_fine = objective::metrics_ssim(channels.fine, frame.image);
        report.has_mid_coarse = channels.has_mid_coarse;
        if (channels.has_mid_coarse) {
            view.psnr_mid = objective::metrics_psnr(channels.mid, frame.image);
            view.ssim_mid = objective::metrics_ssim(channels.mid, frame.image);
            view.psnr_coarse = objective::metrics_psnr(channels.coarse, frame.image);
            view.ssim_coarse = objective::metrics_ssim(channels.coarse, frame.image);
        }
        report.views.push_back(view);
    }
    report.compute_means();
    return report;
}

inline nlohmann::ordered_json eval_report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["has_mid_coarse"] = report.has_mid_coarse;
    j["views"] = nlohmann::ordered_json::array();
    for (const auto& v : report.views) {
        nlohmann::ordered_json vj;
        vj["frame"] = v.frame_index;
        vj["psnr_fine"] = v.psnr_fine;
        vj["ssim_fine"] = v.ssim_fine;
        if (report.has_mid_coarse) {
            vj["psnr_mid"] = v.psnr_mid;
            vj["ssim_mid"] = v.ssim_mid;
            vj["psnr_coarse"] = v.psnr_coarse;
            vj["ssim_coarse"] = v.ssim_coarse;
        }
        j["views"].push_back(vj);
    }
    j["mean"] = {{"psnr_fine", report.mean_psnr_fine}, {"ssim_fine", report.mean_ssim_fine}};
    if (report.has_mid_coarse) {
        j["mean"]["psnr_mid"] = report.mean_psnr_mid;
        j["mean"]["ssim_mid"] = report.mean_ssim_mid;
        j["mean"]["psnr_coarse"] = report.mean_psnr_coarse;
        j["mean"]["ssim_coarse"] = report.mean_ssim_coarse;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Checkpointing: model parameters plus optimizer moments and step metadata,
// all in the standard container.

inline void checkpoint_save(const std::string& path, const Model& model,
                            const diffcore::Adam& adam, int step) {
    ParamStore out;
    for (const auto& [name, entry] : model.store()) {
        auto t = out.create("param." + name, entry.tensor->shape, entry.frozen);
        t->values = entry.tensor->values;
    }
    for (const auto& [name, mv] : adam.moments()) {
        const auto& shape = model.store().get(name)->shape;
        auto m = out.create("adam.m." + name, shape);
        m->values = mv.first;
        auto v = out.create("adam.v." + name, shape);
        v->values = mv.second;
    }
    auto meta_step = out.create("meta.step", {1});
    meta_step->values = {static_cast<real>(step)};
    auto meta_t = out.create("meta.adam_t", {1});
    meta_t->values = {static_cast<real>(adam.step_count())};
    auto meta_variant = out.create("meta.variant_id", {1});
    meta_variant->values = {static_cast<real>(static_cast<int>(model.variant()))};
    diffcore::save_checkpoint(out, path);
}

inline int checkpoint_load(const std::string& path, Model& model, diffcore::Adam& adam) {
    auto entries = diffcore::ckpt::read_all(path);
    int step = 0;
    bool saw_variant = false;
    for (const auto& e : entries) {
        if (e.name == "meta.variant_id") {
            const auto file_variant = static_cast<field::Variant>(static_cast<int>(e.values[0]));
            saw_variant = true;
            if (file_variant != model.variant()) {
                throw EnerfError("checkpoint: variant mismatch: file has " +
                                 field::variant_to_string(file_variant) + ", model is " +
                                 field::variant_to_string(model.variant()));
            }
        } else if (e.name == "meta.step") {
            step = static_cast<int>(e.values[0]);
        } else if (e.name == "meta.adam_t") {
            adam.set_step_count(static_cast<int64_t>(e.values[0]));
        } else if (e.name.rfind("param.", 0) == 0) {
            const auto name = e.name.substr(6);
            if (!model.store().has(name)) {
                throw EnerfError("checkpoint: unknown model entry " + name);
            }
            const auto& t = model.store().get(name);
            if (t->shape != e.shape) {
                throw EnerfError("checkpoint: shape mismatch for " + name);
            }
            t->values = e.values;
        } else if (e.name.rfind("adam.m.", 0) == 0) {
            adam.moments()[e.name.substr(7)].first = e.values;
        } else if (e.name.rfind("adam.v.", 0) == 0) {
            adam.moments()[e.name.substr(7)].second = e.values;
        } else {
            throw EnerfError("checkpoint: unexpected entry " + e.name);
        }
    }
    if (!saw_variant) throw EnerfError("checkpoint: missing variant metadata in " + path);
    return step;
}

}  // namespace enerf::trainer
