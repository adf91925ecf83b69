// uwseg: synthetic-data generation, ensemble training with instance-wise
// uncertainty weighting, mask export, evaluation and multi-seed comparison.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uwseg/dataset.hpp"
#include "uwseg/instances.hpp"
#include "uwseg/metrics.hpp"
#include "uwseg/model.hpp"
#include "uwseg/synth.hpp"
#include "uwseg/tensor_io.hpp"
#include "uwseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace uwseg;

namespace {

struct CommonTrainFlags {
    std::string mode = "plain";
    int members = 3;
    int epochs = 2;
    double lr = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    std::string connectivity = "four";
    std::string region_source = "ground-truth";
    int refresh = 1;
    int threads = 1;
};

Connectivity parse_connectivity(const std::string& s) {
    if (s == "four") return Connectivity::Four;
    if (s == "eight") return Connectivity::Eight;
    throw ContractError("unknown connectivity '" + s + "' (expected four or eight)");
}

RegionSource parse_region_source(const std::string& s) {
    if (s == "ground-truth") return RegionSource::GroundTruth;
    if (s == "predicted") return RegionSource::Predicted;
    throw ContractError("unknown region source '" + s +
                        "' (expected ground-truth or predicted)");
}

TrainConfig to_train_config(const CommonTrainFlags& f) {
    TrainConfig cfg;
    cfg.mode = parse_mode(f.mode);
    cfg.members = f.members;
    cfg.epochs = f.epochs;
    cfg.lr = f.lr;
    cfg.momentum = f.momentum;
    cfg.order_seed = f.seed;
    cfg.connectivity = parse_connectivity(f.connectivity);
    cfg.region_source = parse_region_source(f.region_source);
    cfg.refresh_period = f.refresh;
    cfg.threads = f.threads;
    validate_config(cfg);
    return cfg;
}

void add_train_flags(CLI::App* cmd, CommonTrainFlags& f, bool with_mode) {
    if (with_mode)
        cmd->add_option("--mode", f.mode,
                        "plain | class_proportion | precomputed_iu | on_the_fly_iu");
    cmd->add_option("--members", f.members, "ensemble size");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--lr", f.lr, "learning rate");
    cmd->add_option("--momentum", f.momentum, "SGD momentum");
    cmd->add_option("--seed", f.seed, "seed for member init and data order");
    cmd->add_option("--connectivity", f.connectivity, "four | eight");
    cmd->add_option("--region-source", f.region_source, "ground-truth | predicted");
    cmd->add_option("--refresh", f.refresh, "mask refresh period in epochs (on-the-fly mode)");
    cmd->add_option("--threads", f.threads, "worker threads (1 = fully deterministic)");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir);
}

std::vector<ToyModelParams> load_ensemble(const std::string& dir) {
    std::vector<std::string> files;
    if (!fs::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir);
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".ckpt") files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    require(!files.empty(), "no .ckpt files in " + dir);
    std::vector<ToyModelParams> members;
    members.reserve(files.size());
    for (const auto& f : files) members.push_back(load_checkpoint(f));
    return members;
}

void save_ensemble(const std::vector<ToyModelParams>& members, const std::string& dir) {
    ensure_dir(dir);
    for (std::size_t m = 0; m < members.size(); ++m)
        save_checkpoint(members[m], dir + "/member_" + std::to_string(m) + ".ckpt");
}

std::string loss_curve_csv(const std::vector<TrainResult>& results) {
    std::ostringstream out;
    out << "epoch,member,loss\n";
    for (std::size_t m = 0; m < results.size(); ++m)
        for (std::size_t e = 0; e < results[m].epoch_loss.size(); ++e)
            out << e << "," << m << "," << detail::fmt_double(results[m].epoch_loss[e]) << "\n";
    return out.str();
}

std::string iu_mask_path(const std::string& dir, const std::string& name) {
    return dir + "/iu_" + name + ".uwtn";
}

std::vector<UncertaintyMap> load_iu_masks(const std::string& dir, const Dataset& ds) {
    std::vector<UncertaintyMap> masks;
    masks.reserve(ds.size());
    for (const auto& s : ds.samples) masks.push_back(read_uncertainty_map(iu_mask_path(dir, s.name)));
    return masks;
}

void write_run_manifest(const std::string& dir, const KeyValueMap& kv) {
    write_key_value_file(kv, dir + "/manifest.txt");
}

// gen-data ------------------------------------------------------------------

int cmd_gen_data(const std::string& out_dir, const SyntheticDatasetSpec& spec) {
    gen_data(spec, out_dir);
    std::cout << "wrote " << spec.images << " images to " << out_dir << "\n";
    return 0;
}

// train ---------------------------------------------------------------------

int cmd_train(const std::string& data_dir, const std::string& out_dir,
              const CommonTrainFlags& flags, const std::string& masks_dir) {
    const TrainConfig cfg = to_train_config(flags);
    const Dataset ds = load_dataset(data_dir);

    std::vector<UncertaintyMap> masks;
    const std::vector<UncertaintyMap>* mask_ptr = nullptr;
    if (cfg.mode == TrainMode::PrecomputedIu) {
        if (masks_dir.empty())
            throw ContractError(
                "precomputed_iu needs --masks pointing at a directory produced by 'uwseg masks'");
        masks = load_iu_masks(masks_dir, ds);
        mask_ptr = &masks;
    }

    std::vector<ToyModelParams> members = init_members(cfg, ds.classes, flags.seed);
    if (cfg.mode == TrainMode::OnTheFlyIu && cfg.members < 2)
        std::cerr << "warning: on_the_fly_iu with a single member uses its own entropy only\n";

    std::vector<TrainResult> results(members.size());
    if (cfg.mode == TrainMode::OnTheFlyIu) {
        results = train_ensemble_otf(std::move(members), ds, cfg);
    } else {
        parallel_for(members.size(), cfg.threads, [&](std::size_t m) {
            results[m] = train_member(std::move(members[m]), ds, cfg, mask_ptr);
        });
    }

    ensure_dir(out_dir + "/reports");
    std::vector<ToyModelParams> trained;
    trained.reserve(results.size());
    for (auto& r : results) trained.push_back(std::move(r.params));
    save_ensemble(trained, out_dir + "/checkpoints");
    detail::write_file(out_dir + "/reports/loss_" + flags.mode + ".csv", loss_curve_csv(results));

    KeyValueMap kv;
    kv["command"] = "train";
    kv["data"] = data_dir;
    kv["mode"] = flags.mode;
    kv["members"] = std::to_string(flags.members);
    kv["epochs"] = std::to_string(flags.epochs);
    kv["lr"] = std::to_string(flags.lr);
    kv["momentum"] = std::to_string(flags.momentum);
    kv["seed"] = std::to_string(flags.seed);
    kv["connectivity"] = flags.connectivity;
    kv["region_source"] = flags.region_source;
    kv["refresh"] = std::to_string(flags.refresh);
    kv["checkpoints"] = "checkpoints/";
    kv["reports"] = "reports/";
    write_run_manifest(out_dir, kv);

    std::cout << "trained " << results.size() << " member(s), mode " << flags.mode << "\n";
    for (std::size_t m = 0; m < results.size(); ++m) {
        std::cout << "  member " << m << " loss:";
        for (double l : results[m].epoch_loss) std::cout << " " << detail::fmt_double(l);
        std::cout << "\n";
    }
    return 0;
}

// masks ---------------------------------------------------------------------

int cmd_masks(const std::string& data_dir, const std::string& ckpt_dir,
              const std::string& out_dir, const CommonTrainFlags& flags, bool dump_instances) {
    TrainConfig cfg = to_train_config(flags);
    const Dataset ds = load_dataset(data_dir);
    const std::vector<ToyModelParams> members = load_ensemble(ckpt_dir);
    for (const auto& m : members)
        require(m.spec.classes == ds.classes, "checkpoint class count differs from dataset");

    const std::vector<UncertaintyMap> masks = precompute_masks(members, ds, cfg);
    ensure_dir(out_dir + "/iu_masks");
    for (std::size_t i = 0; i < ds.size(); ++i)
        write_tensor(masks[i], iu_mask_path(out_dir + "/iu_masks", ds.samples[i].name));

    if (dump_instances) {
        ensure_dir(out_dir + "/instances");
        for (const auto& s : ds.samples) {
            LabelMask regions = s.mask;
            if (cfg.region_source == RegionSource::Predicted)
                regions = predict(members, s.image).labels;
            const InstanceMap inst = label_instances(regions, cfg.connectivity);
            LabelMask ids(regions.height(), regions.width(), 0);
            for (std::size_t p = 0; p < ids.size(); ++p)
                ids[p] = inst.instance_id[p] == kNoInstance
                             ? 0
                             : static_cast<std::uint8_t>(1 + inst.instance_id[p] % 255);
            write_mask_pgm(ids, out_dir + "/instances/inst_" + s.name + ".pgm");
        }
    }

    KeyValueMap kv;
    kv["command"] = "masks";
    kv["data"] = data_dir;
    kv["checkpoints"] = ckpt_dir;
    kv["connectivity"] = flags.connectivity;
    kv["region_source"] = flags.region_source;
    kv["iu_masks"] = "iu_masks/";
    write_run_manifest(out_dir, kv);

    std::cout << "wrote " << ds.size() << " IU masks to " << out_dir << "/iu_masks\n";
    return 0;
}

// eval ----------------------------------------------------------------------

int cmd_eval(const std::string& data_dir, const std::string& ckpt_dir,
             const std::string& train_dir, double cert_threshold, int window,
             double acc_threshold, const std::string& out_file, int threads) {
    const Dataset eval_ds = load_dataset(data_dir);
    const std::vector<ToyModelParams> members = load_ensemble(ckpt_dir);

    PavpuConfig pcfg;
    pcfg.window = window;
    pcfg.acc_threshold = acc_threshold;

    EvalResult res;
    if (cert_threshold >= 0.0) {
        pcfg.cert_threshold = cert_threshold;
        ConfusionAccumulator conf(eval_ds.classes);
        PavpuResult counts;
        for (const auto& s : eval_ds.samples) {
            const EnsemblePrediction pred = predict(members, s.image);
            conf.add(pred.labels, s.mask);
            const PavpuResult p = pavpu(pred.labels, s.mask, pred.uncertainty, pcfg);
            counts.n_ac += p.n_ac;
            counts.n_au += p.n_au;
            counts.n_ic += p.n_ic;
            counts.n_iu += p.n_iu;
        }
        counts.score =
            static_cast<double>(counts.n_ac + counts.n_iu) / static_cast<double>(counts.total());
        res.pavpu = counts;
        res.cert_threshold = cert_threshold;
        res.class_iou.assign(static_cast<std::size_t>(eval_ds.classes),
                             std::numeric_limits<double>::quiet_NaN());
        for (int c = 0; c < eval_ds.classes; ++c)
            if (conf.support(c) > 0) res.class_iou[static_cast<std::size_t>(c)] = iou(conf, c);
        const MiouResult mr = miou(conf);
        res.miou = mr.value;
        res.excluded = mr.excluded;
    } else {
        const Dataset thr_ds = train_dir.empty() ? eval_ds : load_dataset(train_dir);
        if (train_dir.empty())
            std::cerr << "warning: no --train directory; certainty threshold uses the eval set\n";
        res = evaluate_ensemble(members, thr_ds, eval_ds, pcfg, threads);
    }

    std::ostringstream out;
    out << "seed,mode,class,IoU,mIoU,PAvPU\n";
    for (int c = 0; c < eval_ds.classes; ++c)
        out << "0,eval," << c << ","
            << detail::fmt_double(res.class_iou[static_cast<std::size_t>(c)]) << ","
            << detail::fmt_double(res.miou) << "," << detail::fmt_double(res.pavpu.score) << "\n";
    detail::write_file(out_file, out.str());

    std::cout << "certainty threshold: " << detail::fmt_double(res.cert_threshold) << "\n";
    for (int c = 0; c < eval_ds.classes; ++c)
        std::cout << "IoU[" << c
                  << "]: " << detail::fmt_double(res.class_iou[static_cast<std::size_t>(c)])
                  << "\n";
    std::cout << "mIoU: " << detail::fmt_double(res.miou) << "\n"
              << "PAvPU: " << detail::fmt_double(res.pavpu.score) << " (ac " << res.pavpu.n_ac
              << ", au " << res.pavpu.n_au << ", ic " << res.pavpu.n_ic << ", iu "
              << res.pavpu.n_iu << ")\n"
              << "report: " << out_file << "\n";
    if (!res.excluded.empty()) {
        std::cout << "classes without support (excluded from mIoU):";
        for (int c : res.excluded) std::cout << " " << c;
        std::cout << "\n";
    }
    return 0;
}

// compare --------------------------------------------------------------------

int cmd_compare(const std::string& train_dir, const std::string& eval_dir,
                const std::string& modes_arg, const std::string& seeds_arg,
                const CommonTrainFlags& flags, int window, double acc_threshold,
                const std::string& out_dir) {
    ComparisonConfig cc;
    cc.train = to_train_config(flags);
    cc.pavpu.window = window;
    cc.pavpu.acc_threshold = acc_threshold;

    cc.modes.clear();
    std::istringstream ms(modes_arg);
    std::string tok;
    while (std::getline(ms, tok, ',')) cc.modes.push_back(parse_mode(tok));

    cc.seeds.clear();
    std::istringstream ss(seeds_arg);
    while (std::getline(ss, tok, ',')) cc.seeds.push_back(std::stoull(tok));
    require(!cc.seeds.empty(), "compare: at least one seed required");

    const Dataset train_ds = load_dataset(train_dir);
    const Dataset eval_ds = load_dataset(eval_dir);
    const ExperimentReport rep = run_comparison(train_ds, eval_ds, cc);

    ensure_dir(out_dir + "/reports");
    detail::write_file(out_dir + "/reports/report.csv", report_csv(rep));
    detail::write_file(out_dir + "/reports/timing.csv", timing_csv(rep));

    KeyValueMap kv;
    kv["command"] = "compare";
    kv["train"] = train_dir;
    kv["eval"] = eval_dir;
    kv["modes"] = modes_arg;
    kv["seeds"] = seeds_arg;
    kv["epochs"] = std::to_string(flags.epochs);
    kv["lr"] = std::to_string(flags.lr);
    kv["momentum"] = std::to_string(flags.momentum);
    kv["members"] = std::to_string(flags.members);
    kv["window"] = std::to_string(window);
    kv["acc_threshold"] = std::to_string(acc_threshold);
    kv["reports"] = "reports/";
    write_run_manifest(out_dir, kv);

    std::cout << report_table(rep);
    std::cout << "report: " << out_dir << "/reports/report.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"instance-wise uncertainty weighting for semantic segmentation"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file; flags override file values");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->fallthrough();
    std::string gen_out;
    SyntheticDatasetSpec spec;
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--images", spec.images, "number of images");
    gen->add_option("--height", spec.height, "image height");
    gen->add_option("--width", spec.width, "image width");
    gen->add_option("--classes", spec.classes, "class count (class 0 is background)");
    gen->add_option("--proportions", spec.proportions,
                    "target pixel proportion per class, summing to 1");
    gen->add_option("--noise", spec.noise_std, "pixel noise stddev");
    gen->add_option("--seed", spec.seed, "generation seed");
    gen->add_flag("--shift", spec.shift, "brighter/noisier appearance, identical masks");

    // train
    auto* train = app.add_subcommand("train", "train an ensemble");
    train->fallthrough();
    std::string train_data, train_out, train_masks;
    CommonTrainFlags train_flags;
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output run directory")->required();
    train->add_option("--masks", train_masks, "iu_masks directory (precomputed_iu mode)");
    add_train_flags(train, train_flags, true);

    // masks
    auto* masks = app.add_subcommand("masks", "compute instance-wise uncertainty masks");
    masks->fallthrough();
    std::string masks_data, masks_ckpt, masks_out;
    bool dump_instances = false;
    CommonTrainFlags masks_flags;
    masks->add_option("--data", masks_data, "dataset directory")->required();
    masks->add_option("--checkpoints", masks_ckpt, "trained ensemble directory")->required();
    masks->add_option("--out", masks_out, "output run directory")->required();
    masks->add_flag("--dump-instances", dump_instances, "also write instance-id PGMs");
    add_train_flags(masks, masks_flags, false);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a trained ensemble");
    eval->fallthrough();
    std::string eval_data, eval_ckpt, eval_train, eval_out = "report.csv";
    double eval_cert = -1.0, eval_acc = 0.5;
    int eval_window = 4, eval_threads = 1;
    eval->add_option("--data", eval_data, "evaluation dataset directory")->required();
    eval->add_option("--checkpoints", eval_ckpt, "trained ensemble directory")->required();
    eval->add_option("--train", eval_train, "training dataset (certainty threshold source)");
    eval->add_option("--cert-threshold", eval_cert, "explicit certainty threshold (nats)");
    eval->add_option("--window", eval_window, "PAvPU patch size");
    eval->add_option("--acc-threshold", eval_acc, "PAvPU patch accuracy threshold");
    eval->add_option("--out", eval_out, "report CSV path");
    eval->add_option("--threads", eval_threads, "worker threads");

    // compare
    auto* compare = app.add_subcommand("compare", "multi-seed mode comparison");
    compare->fallthrough();
    std::string cmp_train, cmp_eval, cmp_out = "compare_out";
    std::string cmp_modes = "plain,precomputed_iu";
    std::string cmp_seeds = "1,2,3,4,5";
    CommonTrainFlags cmp_flags;
    int cmp_window = 4;
    double cmp_acc = 0.5;
    compare->add_option("--train", cmp_train, "training dataset directory")->required();
    compare->add_option("--eval", cmp_eval, "evaluation dataset directory")->required();
    compare->add_option("--modes", cmp_modes, "comma-separated mode list");
    compare->add_option("--seeds", cmp_seeds, "comma-separated seed list");
    compare->add_option("--window", cmp_window, "PAvPU patch size");
    compare->add_option("--acc-threshold", cmp_acc, "PAvPU patch accuracy threshold");
    compare->add_option("--out-dir", cmp_out, "output run directory");
    add_train_flags(compare, cmp_flags, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, spec);
        if (train->parsed()) return cmd_train(train_data, train_out, train_flags, train_masks);
        if (masks->parsed())
            return cmd_masks(masks_data, masks_ckpt, masks_out, masks_flags, dump_instances);
        if (eval->parsed())
            return cmd_eval(eval_data, eval_ckpt, eval_train, eval_cert, eval_window, eval_acc,
                            eval_out, eval_threads);
        if (compare->parsed())
            return cmd_compare(cmp_train, cmp_eval, cmp_modes, cmp_seeds, cmp_flags, cmp_window,
                               cmp_acc, cmp_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
