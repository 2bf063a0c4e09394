#include "cli.hpp"

#include <agnet/checkpoint.hpp>
#include <agnet/data.hpp>
#include <agnet/localization.hpp>
#include <agnet/tensor_io.hpp>
#include <agnet/training.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>

namespace agnet::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
    std::string config_file;
    std::map<std::string, std::string> overrides;
};

std::string flag_name(const std::string &key)
{
    std::string f = key;
    std::replace(f.begin(), f.end(), '_', '-');
    return "--" + f;
}

void add_config_options(CLI::App &cmd, Common &common)
{
    cmd.add_option("--config", common.config_file, "run configuration file (key = value lines)");
    for (const auto &k : config_keys()) {
        const std::string key = k.name;
        cmd.add_option_function<std::string>(
               flag_name(key), [&common, key](const std::string &v) { common.overrides[key] = v; },
               k.help + " [default: " + (k.default_value.empty() ? "\"\"" : k.default_value) + "]")
            ->group("Configuration keys");
    }
}

/// defaults <- config file <- flags <- AGNET_SEED
RunConfig effective_config(const Common &common)
{
    RunConfig cfg = common.config_file.empty() ? RunConfig() : RunConfig::load(common.config_file);
    for (const auto &[k, v] : common.overrides)
        cfg.set(k, v);
    if (const char *seed = std::getenv("AGNET_SEED"); seed && *seed)
        cfg.set("seed", seed);
    return cfg;
}

void check_labels(const std::vector<Sample> &samples, int num_classes, const std::string &what)
{
    int max_label = -1;
    for (const auto &s : samples)
        max_label = std::max(max_label, s.label);
    if (max_label >= num_classes)
        throw DataError(what + " contains label " + std::to_string(max_label) + " but the model has " + std::to_string(num_classes) +
                        " classes");
    if (max_label != num_classes - 1)
        throw DataError(what + " has " + std::to_string(max_label + 1) + " classes but the model expects " + std::to_string(num_classes));
}

std::vector<Sample> load_split(const RunConfig &cfg, const std::string &split)
{
    return load_samples(read_index(cfg.get("data_root"), split));
}

SyntheticConfig synthetic_config(const RunConfig &cfg)
{
    SyntheticConfig s;
    s.seed = cfg.get_u64("seed");
    s.n_per_class = cfg.get_int("n_per_class");
    s.num_plane_classes = cfg.get_int("num_plane_classes");
    s.height = cfg.get_int("input_h");
    s.width = cfg.get_int("input_w");
    s.noise_sigma = cfg.get_double("noise_sigma");
    s.distractors = cfg.get_int("distractors");
    s.distractor_amplitude = cfg.get_double("distractor_amplitude");
    return s;
}

// ---- commands -------------------------------------------------------------

int cmd_gen_data(const RunConfig &cfg, bool force, std::ostream &out)
{
    const fs::path root = cfg.get("data_root");
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!force)
            throw ConfigError("output directory " + root.string() + " is not empty; pass --force to overwrite");
        fs::remove_all(root);
    }
    const SyntheticConfig sc = synthetic_config(cfg);
    const SyntheticDataset ds = generate_synthetic(sc, root);
    cfg.save(root / "config.txt");
    for (const auto &[split, index] : ds.splits)
        out << split << ": " << index.entries.size() << " images\n";
    const double probe = mean_intensity_probe_accuracy(load_samples(ds.splits.at("train")), load_samples(ds.splits.at("test")),
                                                       sc.num_plane_classes);
    out << std::fixed << std::setprecision(4) << "mean-intensity probe accuracy " << probe << " (chance " << 1.0 / sc.num_plane_classes
        << ")\n";
    return kOk;
}

TrainOptions make_train_options(const RunConfig &cfg, const fs::path &out_dir, bool resume, bool quiet, std::ostream &out)
{
    TrainOptions opts = train_options_from_config(cfg);
    opts.out_dir = out_dir;
    opts.resume = resume;
    if (!quiet)
        opts.on_epoch = [&out](const HistoryRow &r) { out << format_history_row(r) << std::endl; };
    return opts;
}

int cmd_train(const RunConfig &cfg, bool resume, bool quiet, std::ostream &out)
{
    const auto train_set = load_split(cfg, "train");
    const auto val_set = load_split(cfg, "val");
    const ModelSpec spec = ModelSpec::from_config(cfg);
    check_labels(train_set, spec.num_classes, "training split");
    check_labels(val_set, spec.num_classes, "validation split");
    const fs::path out_dir = cfg.get("out_dir");
    fs::create_directories(out_dir);

    Model model(spec);
    if (spec.has_attention()) {
        const std::string donor_path = cfg.get("donor");
        const int pretrain = cfg.get_int("pretrain_epochs");
        if (!donor_path.empty()) {
            init_from_sononet(model, load_checkpoint(donor_path));
            out << "extractor initialized from " << donor_path << '\n';
        } else if (pretrain > 0) {
            RunConfig dcfg = cfg;
            dcfg.set("variant", "sononet");
            dcfg.set("aggregation", "auto");
            dcfg.set("epochs", std::to_string(pretrain));
            dcfg.set("warm_epochs", std::to_string(std::min(cfg.get_int("warm_epochs"), pretrain - 1)));
            dcfg.set("out_dir", (out_dir / "donor").string());
            Model donor(ModelSpec::from_config(dcfg));
            out << "pretraining Sononet donor for " << pretrain << " epochs\n";
            train(donor, train_set, val_set, make_train_options(dcfg, out_dir / "donor", resume, quiet, out));
            init_from_sononet(model, donor);
        }
    }

    const TrainResult r = train(model, train_set, val_set, make_train_options(cfg, out_dir, resume, quiet, out));
    if (r.phase_boundary >= 0)
        out << "phase 2 started at epoch " << r.phase_boundary << '\n';
    out << "best epoch " << r.best_epoch << "\n" << format_metrics(r.best_val);
    out << "wrote " << (out_dir / "model.agck").string() << ", " << (out_dir / "history.csv").string() << ", "
        << (out_dir / "config.txt").string() << '\n';
    return kOk;
}

int cmd_eval(const RunConfig &cfg, const std::string &checkpoint, const std::string &split, std::ostream &out)
{
    Model model = load_checkpoint(checkpoint);
    const auto samples = load_split(cfg, split);
    check_labels(samples, model.spec().num_classes, split + " split");
    const Metrics m = evaluate(model, samples, 64, cfg.get_bool("literal_variance"));
    out << "split " << split << "\n" << format_metrics(m);
    return kOk;
}

Tensor read_image(const std::string &path, const ModelSpec &spec)
{
    Tensor img = read_agt1(fs::path(path));
    Shape s = img.shape();
    while (s.size() > 2 && s.front() == 1)
        s.erase(s.begin());
    if (s.size() != 2 || s[0] != spec.input_h || s[1] != spec.input_w)
        throw DataError(path + ": expected a " + std::to_string(spec.input_h) + "x" + std::to_string(spec.input_w) + " image, got " +
                        shape_str(img.shape()));
    return Tensor({1, s[0], s[1]}, std::vector<Scalar>(img.data().begin(), img.data().end()));
}

int cmd_infer(const RunConfig &cfg, const std::string &checkpoint, const std::string &image, const std::string &export_dir, std::ostream &out)
{
    Model model = load_checkpoint(checkpoint);
    const ModelSpec &spec = model.spec();
    if (!export_dir.empty() && !spec.has_attention())
        throw ConfigError("checkpoint holds a Sononet model, which has no attention gates; attention maps cannot be exported");
    const Sample sample{read_image(image, spec), 0, std::nullopt};
    const SampleMaps maps = compute_maps(model, {sample}, 1, cfg.get_bool("literal_variance")).front();
    const auto names = default_class_names(spec.num_classes);
    out << "predicted " << maps.predicted << " (" << names[static_cast<size_t>(maps.predicted)] << ")\n";
    out << std::fixed << std::setprecision(4);
    for (size_t s = 0; s < maps.probabilities.size(); ++s) {
        out << "scale " << s + 1 << " probabilities";
        for (Scalar p : maps.probabilities[s].data())
            out << ' ' << p;
        out << '\n';
    }
    if (export_dir.empty())
        return kOk;

    fs::create_directories(export_dir);
    const int H = spec.input_h, W = spec.input_w;
    const std::vector<std::pair<std::string, Tensor>> exported{
        {"ag1", maps.gates.at(0)},
        {"ag2", maps.gates.at(1)},
        {"ag3", maps.cam},
        {"agall", combine_ag_all({maps.gates.at(0), maps.gates.at(1), maps.cam}, H, W)},
    };
    for (const auto &[name, map] : exported) {
        write_agt1(fs::path(export_dir) / (name + ".agt1"), map);
        write_pgm(fs::path(export_dir) / (name + ".pgm"), combine_ag_all({map}, H, W));
    }
    cfg.save(fs::path(export_dir) / "config.txt");
    out << "maps written to " << export_dir << '\n';
    return kOk;
}

int cmd_localize(const RunConfig &cfg, const std::string &checkpoint, const std::string &split, const std::string &csv, std::ostream &out)
{
    Model model = load_checkpoint(checkpoint);
    const auto samples = load_split(cfg, split);
    check_labels(samples, model.spec().num_classes, split + " split");
    const LocalizationOptions opts = LocalizationOptions::from_config(cfg);
    const uint64_t passes = backward_pass_count();
    auto results = localize(model, samples, opts, cfg.get_bool("literal_variance"));
    const auto rows = localization_metrics(results);
    out << format_localization(rows, default_class_names(model.spec().num_classes));
    out << "backward_passes=" << backward_pass_count() - passes << '\n';
    if (!csv.empty()) {
        std::ofstream os(csv);
        if (!os)
            throw DataError("cannot write " + csv);
        os << "index,label,pred_x0,pred_y0,pred_x1,pred_y1,true_x0,true_y0,true_x1,true_y1,iou,correct,rel_correct\n";
        for (size_t i = 0; i < results.size(); ++i) {
            const auto &r = results[i];
            os << i << ',' << r.label << ',' << (r.predicted ? to_string(*r.predicted) : ",,,") << ',' << to_string(r.truth) << ','
               << r.iou << ',' << r.correct << ',' << r.relatively_correct << '\n';
        }
    }
    return kOk;
}

double percentile(std::vector<double> v, double q)
{
    std::sort(v.begin(), v.end());
    const auto idx = static_cast<size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
    return v[std::min(idx, v.size() - 1)];
}

int cmd_bench(const RunConfig &cfg, const std::string &checkpoint, int iters, std::ostream &out)
{
    if (iters <= 0)
        throw ConfigError("--iters must be positive");
    Model model = checkpoint.empty() ? Model(ModelSpec::from_config(cfg)) : load_checkpoint(checkpoint);
    const ModelSpec &spec = model.spec();
    const int batch = cfg.get_int("batch");
    std::mt19937_64 rng(cfg.get_u64("seed"));
    std::normal_distribution<double> nd;
    std::vector<Sample> samples;
    for (int i = 0; i < batch; ++i) {
        Tensor img({1, spec.input_h, spec.input_w});
        for (auto &v : img.data())
            v = static_cast<Scalar>(nd(rng));
        samples.push_back({img, 0, BoundingBox{0, 0, 1, 1}});
    }
    const Batch b = make_eval_batch(samples, 0, samples.size());
    std::vector<int> labels(static_cast<size_t>(batch), 0);
    for (auto &p : model.parameters())
        p.tensor.set_requires_grad(true);

    using clock = std::chrono::steady_clock;
    auto ms = [](clock::time_point a, clock::time_point z) { return std::chrono::duration<double, std::milli>(z - a).count(); };
    const int warmup = 10;
    std::vector<double> fwd, bwd, loc;
    const LocalizationOptions lopts = LocalizationOptions::from_config(cfg);
    uint64_t loc_passes = 0;
    for (int it = 0; it < warmup + iters; ++it) {
        auto t0 = clock::now();
        {
            NoGradGuard no_grad;
            model.forward(b.images, false);
        }
        auto t1 = clock::now();
        const ForwardOutput f = model.forward(b.images, true);
        backward(weighted_cross_entropy(f.logits, labels));
        Tape::current().clear();
        for (auto &p : model.parameters())
            p.tensor.zero_grad();
        auto t2 = clock::now();
        const uint64_t before = backward_pass_count();
        for (const auto &sm : compute_maps(model, samples, batch))
            extract_bbox(localization_maps(sm, lopts), spec.input_h, spec.input_w, lopts);
        loc_passes += backward_pass_count() - before;
        auto t3 = clock::now();
        if (it >= warmup) {
            fwd.push_back(ms(t0, t1));
            bwd.push_back(ms(t1, t2));
            loc.push_back(ms(t2, t3));
        }
    }
    out << std::fixed << std::setprecision(3);
    out << "variant=" << to_string(spec.variant) << ", n_initial=" << spec.n_initial << ", batch=" << batch << ", iters=" << iters << '\n';
    out << "fwd_ms_median=" << percentile(fwd, 0.5) << ", fwd_ms_p95=" << percentile(fwd, 0.95) << ", bwd_ms_median=" << percentile(bwd, 0.5)
        << ", bwd_ms_p95=" << percentile(bwd, 0.95) << '\n';
    out << "loc_ms_median=" << percentile(loc, 0.5) << ", loc_ms_p95=" << percentile(loc, 0.95) << ", loc_backward_passes=" << loc_passes
        << '\n';
    out << "params=" << count_params(model) << '\n';
    return kOk;
}

} // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err)
{
    CLI::App app{"agnet: attention-gated Sononet classification and localization"};
    app.require_subcommand(1);
    Common common;
    bool force = false, resume = false, quiet = false;
    std::string checkpoint, split = "test", image, export_dir, csv;
    int iters = 50;

    auto *gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    add_config_options(*gen, common);
    gen->add_flag("--force", force, "overwrite a non-empty data_root");

    auto *trn = app.add_subcommand("train", "train a model");
    add_config_options(*trn, common);
    trn->add_flag("--resume", resume, "continue from out_dir/last.agck when present");
    trn->add_flag("--quiet", quiet, "do not print per-epoch history rows");

    auto *evl = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    add_config_options(*evl, common);
    evl->add_option("--checkpoint", checkpoint, "AGCK checkpoint")->required();
    evl->add_option("--split", split, "train | val | test");

    auto *inf = app.add_subcommand("infer", "classify one AGT1 image");
    add_config_options(*inf, common);
    inf->add_option("--checkpoint", checkpoint, "AGCK checkpoint")->required();
    inf->add_option("--image", image, "AGT1 image [1,H,W]")->required();
    inf->add_option("--export-maps", export_dir, "directory for ag1/ag2/ag3/agall maps");

    auto *loc = app.add_subcommand("localize", "weakly supervised boxes and IoU report");
    add_config_options(*loc, common);
    loc->add_option("--checkpoint", checkpoint, "AGCK checkpoint")->required();
    loc->add_option("--split", split, "train | val | test");
    loc->add_option("--csv", csv, "per-sample CSV output");

    auto *bench = app.add_subcommand("bench", "time forward, forward+backward and localization");
    add_config_options(*bench, common);
    bench->add_option("--checkpoint", checkpoint, "AGCK checkpoint (default: fresh model from the config)");
    bench->add_option("--iters", iters, "timed iterations after 10 warm-up iterations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        const RunConfig cfg = effective_config(common);
        if (*gen)
            return cmd_gen_data(cfg, force, out);
        if (*trn)
            return cmd_train(cfg, resume, quiet, out);
        if (*evl)
            return cmd_eval(cfg, checkpoint, split, out);
        if (*inf)
            return cmd_infer(cfg, checkpoint, image, export_dir, out);
        if (*loc)
            return cmd_localize(cfg, checkpoint, split, csv, out);
        if (*bench)
            return cmd_bench(cfg, checkpoint, iters, out);
    } catch (const ConfigError &e) {
        err << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericalError &e) {
        err << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const DataError &e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const DimensionError &e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::filesystem::filesystem_error &e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}

} // namespace agnet::cli
