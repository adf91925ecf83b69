#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "uwseg/dataset.hpp"
#include "uwseg/errors.hpp"
#include "uwseg/instances.hpp"
#include "uwseg/loss.hpp"
#include "uwseg/metrics.hpp"
#include "uwseg/model.hpp"
#include "uwseg/parallel.hpp"
#include "uwseg/rng.hpp"
#include "uwseg/uncertainty.hpp"

namespace uwseg {

enum class TrainMode { Plain, ClassProportion, PrecomputedIu, OnTheFlyIu };
enum class RegionSource { GroundTruth, Predicted };

inline const char* mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::Plain: return "plain";
        case TrainMode::ClassProportion: return "class_proportion";
        case TrainMode::PrecomputedIu: return "precomputed_iu";
        case TrainMode::OnTheFlyIu: return "on_the_fly_iu";
    }
    return "?";
}

inline TrainMode parse_mode(const std::string& s) {
    if (s == "plain") return TrainMode::Plain;
    if (s == "class_proportion") return TrainMode::ClassProportion;
    if (s == "precomputed_iu") return TrainMode::PrecomputedIu;
    if (s == "on_the_fly_iu") return TrainMode::OnTheFlyIu;
    throw ContractError("unknown mode '" + s +
                        "' (expected plain, class_proportion, precomputed_iu or on_the_fly_iu)");
}

struct TrainConfig {
    TrainMode mode = TrainMode::Plain;
    int members = 3;
    int epochs = 2;
    double lr = 0.05;
    double momentum = 0.9;
    std::uint64_t order_seed = 0;
    Connectivity connectivity = Connectivity::Four;
    RegionSource region_source = RegionSource::GroundTruth;
    int refresh_period = 1;  // epochs between mask refreshes (on-the-fly mode)
    int threads = 1;
    // Hidden widths cycled over members to emulate backbone diversity.
    std::vector<std::vector<int>> member_hidden = {{16, 16}, {24, 16}, {16, 24}};
};

inline void validate_config(const TrainConfig& cfg) {
    require(cfg.members >= 1, "train config: members must be at least 1");
    require(cfg.epochs >= 1, "train config: epochs must be at least 1");
    require(cfg.refresh_period >= 1, "train config: refresh period must be at least 1");
    require(cfg.lr > 0.0, "train config: lr must be positive");
    require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, "train config: momentum must be in [0, 1)");
    require(cfg.threads >= 1, "train config: threads must be at least 1");
    require(!cfg.member_hidden.empty(), "train config: member_hidden must not be empty");
}

inline ToyModelSpec member_spec(const TrainConfig& cfg, int classes, int member) {
    ToyModelSpec spec;
    spec.classes = classes;
    spec.hidden = cfg.member_hidden[static_cast<std::size_t>(member) % cfg.member_hidden.size()];
    return spec;
}

inline std::uint64_t member_seed(std::uint64_t base_seed, int member) {
    return mix64(base_seed, 0x6d656d62u + static_cast<std::uint64_t>(member));
}

inline std::vector<ToyModelParams> init_members(const TrainConfig& cfg, int classes,
                                                std::uint64_t base_seed) {
    std::vector<ToyModelParams> members;
    members.reserve(static_cast<std::size_t>(cfg.members));
    for (int m = 0; m < cfg.members; ++m)
        members.push_back(init_params(member_spec(cfg, classes, m), member_seed(base_seed, m)));
    return members;
}

/// Sample visit order for one epoch; identical for every member and mode.
inline std::vector<std::size_t> epoch_order(std::uint64_t order_seed, int epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix64(order_seed, 0x65706f63u + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    return order;
}

namespace detail {

inline LossConfig loss_config_for(TrainMode mode, const Dataset& ds) {
    LossConfig lc;
    switch (mode) {
        case TrainMode::Plain:
            lc.mode = LossMode::Plain;
            break;
        case TrainMode::ClassProportion: {
            lc.mode = LossMode::ClassProportion;
            std::vector<LabelMask> masks;
            masks.reserve(ds.size());
            for (const auto& s : ds.samples) masks.push_back(s.mask);
            lc.class_weights = class_proportion_weights(masks, ds.classes).weights;
            break;
        }
        case TrainMode::PrecomputedIu:
        case TrainMode::OnTheFlyIu:
            lc.mode = LossMode::InstanceUncertainty;
            break;
    }
    return lc;
}

/// One pass over `order`; shared by every mode so that equal weights give
/// bit-identical trajectories. Returns the mean per-image loss.
inline double run_epoch(ToyModelParams& params, ModelTensors& velocity, const Dataset& ds,
                        const std::vector<std::size_t>& order, const LossConfig& lc,
                        const std::vector<UncertaintyMap>* iu_masks, double lr, double momentum,
                        const std::string& who) {
    double total = 0.0;
    for (std::size_t idx : order) {
        const Sample& s = ds.samples[idx];
        const ForwardCache cache = forward(params, s.image);
        for (double v : cache.logits().data())
            if (!std::isfinite(v))
                throw TrainingDiverged(who + ": non-finite logits on sample " + s.name);
        const UncertaintyMap* iu = iu_masks ? &(*iu_masks)[idx] : nullptr;
        const LossResult res = weighted_ce(cache.logits(), s.mask, iu, lc);
        if (!std::isfinite(res.value))
            throw TrainingDiverged(who + ": non-finite loss on sample " + s.name);
        const ModelTensors grads = backward(params, cache, res.grad_logits);
        sgd_step(params, grads, velocity, lr, momentum);
        total += res.value;
    }
    return total / static_cast<double>(order.size());
}

inline void check_iu_masks(const Dataset& ds, const std::vector<UncertaintyMap>& masks) {
    require(masks.size() == ds.size(), "IU masks: one mask per training sample required");
    for (std::size_t i = 0; i < masks.size(); ++i)
        require(masks[i].height() == ds.samples[i].mask.height() &&
                    masks[i].width() == ds.samples[i].mask.width(),
                "IU masks: shape differs from sample " + ds.samples[i].name);
}

}  // namespace detail

struct TrainResult {
    ToyModelParams params;
    std::vector<double> epoch_loss;
};

/// Train a single member for cfg.epochs over the dataset. IU masks are
/// mandatory exactly in the instance-uncertainty modes and are treated as
/// constants throughout.
inline TrainResult train_member(ToyModelParams params, const Dataset& ds, const TrainConfig& cfg,
                                const std::vector<UncertaintyMap>* iu_masks = nullptr) {
    validate_config(cfg);
    require(!ds.samples.empty(), "train_member: empty dataset");
    require(params.spec.classes == ds.classes, "train_member: model class count differs from dataset");
    const bool needs_iu =
        cfg.mode == TrainMode::PrecomputedIu || cfg.mode == TrainMode::OnTheFlyIu;
    require(needs_iu == (iu_masks != nullptr),
            "train_member: IU masks required exactly in instance-uncertainty modes");
    if (iu_masks) detail::check_iu_masks(ds, *iu_masks);

    const LossConfig lc = detail::loss_config_for(cfg.mode, ds);
    ModelTensors velocity = ModelTensors::zeros_like(params);
    TrainResult out;
    for (int e = 0; e < cfg.epochs; ++e) {
        const auto order = epoch_order(cfg.order_seed, e, ds.size());
        out.epoch_loss.push_back(detail::run_epoch(params, velocity, ds, order, lc, iu_masks,
                                                   cfg.lr, cfg.momentum, "member"));
    }
    if (!params_finite(params))
        throw TrainingDiverged("member: non-finite parameters after training");
    out.params = std::move(params);
    return out;
}

/// Instance-wise uncertainty mask for every training sample, computed from the
/// given (typically plain-trained) ensemble.
inline std::vector<UncertaintyMap> precompute_masks(const std::vector<ToyModelParams>& members,
                                                    const Dataset& ds, const TrainConfig& cfg) {
    require(!members.empty(), "precompute_masks: at least one member required");
    std::vector<UncertaintyMap> masks(ds.size(), UncertaintyMap(1, 1));
    parallel_for(ds.size(), cfg.threads, [&](std::size_t i) {
        const Sample& s = ds.samples[i];
        std::vector<LogitMap> logits;
        logits.reserve(members.size());
        for (const auto& m : members) {
            logits.push_back(forward(m, s.image).logits());
            if (!logits.back().all_finite())
                throw TrainingDiverged("mask computation: non-finite logits on sample " + s.name);
        }
        LabelMask regions = s.mask;
        if (cfg.region_source == RegionSource::Predicted) {
            EnsembleOutput probs;
            probs.reserve(logits.size());
            for (const auto& l : logits) probs.push_back(softmax(l));
            regions = argmax_labels(fuse_ensemble(probs).tensor());
        }
        masks[i] = build_iu_mask(logits, regions, cfg.connectivity);
    });
    return masks;
}

/// Approach with on-the-fly masks: every refresh boundary recomputes the IU
/// masks from the current members, then each member trains one epoch on the
/// shared masks in the shared order.
inline std::vector<TrainResult> train_ensemble_otf(std::vector<ToyModelParams> members,
                                                   const Dataset& ds, const TrainConfig& cfg) {
    validate_config(cfg);
    require(cfg.mode == TrainMode::OnTheFlyIu, "train_ensemble_otf: config mode must be on_the_fly_iu");
    require(!members.empty(), "train_ensemble_otf: at least one member required");
    require(!ds.samples.empty(), "train_ensemble_otf: empty dataset");
    for (const auto& m : members)
        require(m.spec.classes == ds.classes, "train_ensemble_otf: member class count differs");

    const LossConfig lc = detail::loss_config_for(cfg.mode, ds);
    std::vector<ModelTensors> velocity;
    velocity.reserve(members.size());
    for (const auto& m : members) velocity.push_back(ModelTensors::zeros_like(m));

    std::vector<TrainResult> results(members.size());
    for (auto& r : results) r.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));

    std::vector<UncertaintyMap> masks;
    for (int e = 0; e < cfg.epochs; ++e) {
        if (e % cfg.refresh_period == 0) masks = precompute_masks(members, ds, cfg);
        const auto order = epoch_order(cfg.order_seed, e, ds.size());
        parallel_for(members.size(), cfg.threads, [&](std::size_t m) {
            results[m].epoch_loss.push_back(
                detail::run_epoch(members[m], velocity[m], ds, order, lc, &masks, cfg.lr,
                                  cfg.momentum, "member " + std::to_string(m)));
        });
    }
    for (std::size_t m = 0; m < members.size(); ++m) {
        if (!params_finite(members[m]))
            throw TrainingDiverged("member " + std::to_string(m) +
                                   ": non-finite parameters after training");
        results[m].params = std::move(members[m]);
    }
    return results;
}

// Ensemble evaluation ---------------------------------------------------------

struct EnsemblePrediction {
    LabelMask labels;
    UncertaintyMap uncertainty;
};

inline EnsemblePrediction predict(const std::vector<ToyModelParams>& members,
                                  const ChwTensor& image) {
    require(!members.empty(), "predict: at least one member required");
    std::vector<LogitMap> logits;
    logits.reserve(members.size());
    for (const auto& m : members) logits.push_back(forward(m, image).logits());
    auto [fused, pu] = pixel_uncertainty(logits);
    return {argmax_labels(fused.tensor()), std::move(pu)};
}

/// Predictive-entropy maps of the ensemble over a dataset; their pixel mean is
/// the recommended PAvPU certainty threshold.
inline std::vector<UncertaintyMap> uncertainty_maps(const std::vector<ToyModelParams>& members,
                                                    const Dataset& ds, int threads = 1) {
    std::vector<UncertaintyMap> maps(ds.size(), UncertaintyMap(1, 1));
    parallel_for(ds.size(), threads, [&](std::size_t i) {
        maps[i] = predict(members, ds.samples[i].image).uncertainty;
    });
    return maps;
}

struct EvalResult {
    std::vector<double> class_iou;  // NaN for classes without support
    std::vector<int> excluded;
    double miou = 0.0;
    PavpuResult pavpu;
    double cert_threshold = 0.0;
};

/// Evaluate a trained ensemble: fused argmax vs ground truth on eval_ds, with
/// the PAvPU certainty threshold taken from the train-set mean uncertainty.
inline EvalResult evaluate_ensemble(const std::vector<ToyModelParams>& members,
                                    const Dataset& train_ds, const Dataset& eval_ds,
                                    PavpuConfig pcfg, int threads = 1) {
    require(!eval_ds.samples.empty(), "evaluate_ensemble: empty eval dataset");
    EvalResult r;
    r.cert_threshold = mean_train_uncertainty(uncertainty_maps(members, train_ds, threads));
    pcfg.cert_threshold = r.cert_threshold;

    ConfusionAccumulator conf(eval_ds.classes);
    PavpuResult counts;
    std::vector<EnsemblePrediction> preds(eval_ds.size());
    parallel_for(eval_ds.size(), threads, [&](std::size_t i) {
        preds[i] = predict(members, eval_ds.samples[i].image);
    });
    for (std::size_t i = 0; i < eval_ds.size(); ++i) {
        const Sample& s = eval_ds.samples[i];
        conf.add(preds[i].labels, s.mask);
        const PavpuResult p = pavpu(preds[i].labels, s.mask, preds[i].uncertainty, pcfg);
        counts.n_ac += p.n_ac;
        counts.n_au += p.n_au;
        counts.n_ic += p.n_ic;
        counts.n_iu += p.n_iu;
    }
    counts.score = static_cast<double>(counts.n_ac + counts.n_iu) /
                   static_cast<double>(counts.total());
    r.pavpu = counts;

    r.class_iou.assign(static_cast<std::size_t>(eval_ds.classes),
                       std::numeric_limits<double>::quiet_NaN());
    for (int c = 0; c < eval_ds.classes; ++c)
        if (conf.support(c) > 0) r.class_iou[static_cast<std::size_t>(c)] = iou(conf, c);
    const MiouResult mr = miou(conf);
    r.miou = mr.value;
    r.excluded = mr.excluded;
    return r;
}

// Multi-seed comparison --------------------------------------------------------

struct ModeRun {
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::Plain;
    bool aborted = false;
    std::string abort_reason;
    EvalResult eval;
    double seconds = 0.0;
};

struct ExperimentReport {
    int classes = 0;
    std::vector<ModeRun> runs;
};

struct ComparisonConfig {
    TrainConfig train;              // mode field is ignored; modes come from `modes`
    PavpuConfig pavpu;              // cert_threshold filled per run
    std::vector<TrainMode> modes = {TrainMode::Plain, TrainMode::PrecomputedIu};
    std::vector<std::uint64_t> seeds = {1, 2};
};

/// Train and evaluate every (seed, mode) cell with matched member-init seeds
/// and data order. The plain ensemble of a seed doubles as the mask source for
/// the precomputed instance-uncertainty mode of the same seed.
inline ExperimentReport run_comparison(const Dataset& train_ds, const Dataset& eval_ds,
                                       const ComparisonConfig& cc) {
    validate_config(cc.train);
    require(!cc.modes.empty(), "run_comparison: no modes requested");
    require(!cc.seeds.empty(), "run_comparison: no seeds requested");
    require(train_ds.classes == eval_ds.classes,
            "run_comparison: train and eval class counts differ");

    ExperimentReport report;
    report.classes = train_ds.classes;

    for (std::uint64_t seed : cc.seeds) {
        std::vector<ToyModelParams> plain_members;
        bool plain_ready = false;
        auto ensure_plain = [&]() -> const std::vector<ToyModelParams>& {
            if (!plain_ready) {
                TrainConfig cfg = cc.train;
                cfg.mode = TrainMode::Plain;
                cfg.order_seed = seed;
                std::vector<ToyModelParams> members = init_members(cfg, train_ds.classes, seed);
                std::vector<ToyModelParams> trained(members.size());
                parallel_for(members.size(), cfg.threads, [&](std::size_t m) {
                    trained[m] = train_member(members[m], train_ds, cfg).params;
                });
                plain_members = std::move(trained);
                plain_ready = true;
            }
            return plain_members;
        };

        for (TrainMode mode : cc.modes) {
            ModeRun run;
            run.seed = seed;
            run.mode = mode;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                TrainConfig cfg = cc.train;
                cfg.mode = mode;
                cfg.order_seed = seed;

                std::vector<ToyModelParams> ensemble;
                switch (mode) {
                    case TrainMode::Plain:
                        ensemble = ensure_plain();
                        break;
                    case TrainMode::ClassProportion: {
                        std::vector<ToyModelParams> members =
                            init_members(cfg, train_ds.classes, seed);
                        ensemble.resize(members.size());
                        parallel_for(members.size(), cfg.threads, [&](std::size_t m) {
                            ensemble[m] = train_member(members[m], train_ds, cfg).params;
                        });
                        break;
                    }
                    case TrainMode::PrecomputedIu: {
                        const auto masks = precompute_masks(ensure_plain(), train_ds, cfg);
                        std::vector<ToyModelParams> members =
                            init_members(cfg, train_ds.classes, seed);
                        ensemble.resize(members.size());
                        parallel_for(members.size(), cfg.threads, [&](std::size_t m) {
                            ensemble[m] = train_member(members[m], train_ds, cfg, &masks).params;
                        });
                        break;
                    }
                    case TrainMode::OnTheFlyIu: {
                        auto results = train_ensemble_otf(
                            init_members(cfg, train_ds.classes, seed), train_ds, cfg);
                        for (auto& tr : results) ensemble.push_back(std::move(tr.params));
                        break;
                    }
                }
                run.eval = evaluate_ensemble(ensemble, train_ds, eval_ds, cc.pavpu,
                                             cc.train.threads);
            } catch (const TrainingDiverged& e) {
                run.aborted = true;
                run.abort_reason = e.what();
            }
            run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                              .count();
            report.runs.push_back(std::move(run));
        }
    }
    return report;
}

// Report emission ---------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

struct Aggregate {
    std::vector<double> mean, stdev;  // per class IoU, then miou/pavpu appended by caller
};

inline double vec_mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double vec_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = vec_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Per-mode column collector over non-aborted runs; NaN entries are dropped.
inline std::vector<double> collect(const ExperimentReport& rep, TrainMode mode,
                                   auto&& value_of) {
    std::vector<double> out;
    for (const auto& run : rep.runs) {
        if (run.mode != mode || run.aborted) continue;
        const double v = value_of(run);
        if (!std::isnan(v)) out.push_back(v);
    }
    return out;
}

}  // namespace detail

/// Deterministic CSV: one row per (seed, mode, class), then mean/std rows per
/// mode. Wall times go to the separate timing CSV so repeated runs stay
/// byte-identical.
inline std::string report_csv(const ExperimentReport& rep) {
    std::ostringstream out;
    out << "seed,mode,class,IoU,mIoU,PAvPU\n";
    for (const auto& run : rep.runs) {
        if (run.aborted) continue;
        for (int c = 0; c < rep.classes; ++c) {
            out << run.seed << "," << mode_name(run.mode) << "," << c << ","
                << detail::fmt_double(run.eval.class_iou[static_cast<std::size_t>(c)]) << ","
                << detail::fmt_double(run.eval.miou) << ","
                << detail::fmt_double(run.eval.pavpu.score) << "\n";
        }
    }
    for (TrainMode mode : {TrainMode::Plain, TrainMode::ClassProportion,
                           TrainMode::PrecomputedIu, TrainMode::OnTheFlyIu}) {
        const auto mious = detail::collect(rep, mode, [](const ModeRun& r) { return r.eval.miou; });
        if (mious.empty()) continue;
        const auto pavpus =
            detail::collect(rep, mode, [](const ModeRun& r) { return r.eval.pavpu.score; });
        for (int c = 0; c < rep.classes; ++c) {
            const auto ious = detail::collect(rep, mode, [c](const ModeRun& r) {
                return r.eval.class_iou[static_cast<std::size_t>(c)];
            });
            out << "mean," << mode_name(mode) << "," << c << ","
                << (ious.empty() ? "" : detail::fmt_double(detail::vec_mean(ious))) << ","
                << detail::fmt_double(detail::vec_mean(mious)) << ","
                << detail::fmt_double(detail::vec_mean(pavpus)) << "\n";
        }
        for (int c = 0; c < rep.classes; ++c) {
            const auto ious = detail::collect(rep, mode, [c](const ModeRun& r) {
                return r.eval.class_iou[static_cast<std::size_t>(c)];
            });
            out << "std," << mode_name(mode) << "," << c << ","
                << (ious.empty() ? "" : detail::fmt_double(detail::vec_std(ious))) << ","
                << detail::fmt_double(detail::vec_std(mious)) << ","
                << detail::fmt_double(detail::vec_std(pavpus)) << "\n";
        }
    }
    return out.str();
}

/// Wall times and abort records; intentionally separate from the metric CSV.
inline std::string timing_csv(const ExperimentReport& rep) {
    std::ostringstream out;
    out << "seed,mode,seconds,status\n";
    for (const auto& run : rep.runs) {
        out << run.seed << "," << mode_name(run.mode) << "," << detail::fmt_double(run.seconds)
            << "," << (run.aborted ? "aborted: " + run.abort_reason : std::string("ok")) << "\n";
    }
    return out.str();
}

inline std::string report_table(const ExperimentReport& rep) {
    std::ostringstream out;
    out << "mode              seed      ";
    for (int c = 0; c < rep.classes; ++c) out << "IoU[" << c << "]    ";
    out << "mIoU      PAvPU\n";
    char buf[64];
    auto row = [&](const std::string& mode, const std::string& seed, const ModeRun* run,
                   const std::vector<double>* values) {
        std::snprintf(buf, sizeof(buf), "%-17s %-9s ", mode.c_str(), seed.c_str());
        out << buf;
        if (run && run->aborted) {
            out << "aborted: " << run->abort_reason << "\n";
            return;
        }
        for (double v : *values) {
            if (std::isnan(v))
                std::snprintf(buf, sizeof(buf), "%-10s", "-");
            else
                std::snprintf(buf, sizeof(buf), "%-10.4f", v);
            out << buf;
        }
        out << "\n";
    };
    for (const auto& run : rep.runs) {
        std::vector<double> vals = run.eval.class_iou;
        vals.push_back(run.eval.miou);
        vals.push_back(run.eval.pavpu.score);
        row(mode_name(run.mode), std::to_string(run.seed), &run, &vals);
    }
    for (TrainMode mode : {TrainMode::Plain, TrainMode::ClassProportion,
                           TrainMode::PrecomputedIu, TrainMode::OnTheFlyIu}) {
        const auto mious = detail::collect(rep, mode, [](const ModeRun& r) { return r.eval.miou; });
        if (mious.empty()) continue;
        std::vector<double> means, stds;
        for (int c = 0; c < rep.classes; ++c) {
            const auto ious = detail::collect(rep, mode, [c](const ModeRun& r) {
                return r.eval.class_iou[static_cast<std::size_t>(c)];
            });
            means.push_back(ious.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : detail::vec_mean(ious));
            stds.push_back(ious.empty() ? std::numeric_limits<double>::quiet_NaN()
                                        : detail::vec_std(ious));
        }
        const auto pavpus =
            detail::collect(rep, mode, [](const ModeRun& r) { return r.eval.pavpu.score; });
        means.push_back(detail::vec_mean(mious));
        means.push_back(detail::vec_mean(pavpus));
        stds.push_back(detail::vec_std(mious));
        stds.push_back(detail::vec_std(pavpus));
        row(mode_name(mode), "mean", nullptr, &means);
        row(mode_name(mode), "std", nullptr, &stds);
    }
    return out.str();
}

}  // namespace uwseg
