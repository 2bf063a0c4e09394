#include <agnet/training.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

namespace agnet::inline AGNET_ABI {

// ---- schedule and optimizer ---------------------------------------------

void OptimizerConfig::validate() const
{
    if (!(lr0 > 0) || !(warm_lr > 0) || !(decay_factor > 0) || !(momentum >= 0) || !(weight_decay >= 0))
        throw ConfigError("optimizer rates must be positive (momentum and weight decay non-negative)");
    if (epochs <= 0 || warm_epochs < 0 || decay_every <= 0)
        throw ConfigError("epochs and decay_every must be positive, warm_epochs non-negative");
    if (warm_epochs >= epochs)
        throw ConfigError("warm_epochs (" + std::to_string(warm_epochs) + ") must be below epochs (" + std::to_string(epochs) + ")");
}

OptimizerConfig OptimizerConfig::from_config(const RunConfig &cfg)
{
    OptimizerConfig o;
    o.lr0 = cfg.get_double("lr0");
    o.warm_lr = cfg.get_double("warm_lr");
    o.warm_epochs = cfg.get_int("warm_epochs");
    o.decay_every = cfg.get_int("decay_every");
    o.decay_factor = cfg.get_double("decay_factor");
    o.momentum = cfg.get_double("momentum");
    o.weight_decay = cfg.get_double("weight_decay");
    o.epochs = cfg.get_int("epochs");
    o.validate();
    return o;
}

double lr_at_epoch(int epoch, const OptimizerConfig &cfg)
{
    if (epoch < 0 || epoch >= cfg.epochs)
        throw ConfigError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
    if (epoch < cfg.warm_epochs)
        return cfg.warm_lr;
    // Dividing by 1/factor keeps decimal steps such as 0.1 -> 0.01 -> 0.001 exact.
    const double divisor = 1.0 / cfg.decay_factor;
    double lr = cfg.lr0;
    for (int k = epoch / cfg.decay_every; k > 0; --k)
        lr /= divisor;
    return lr;
}

void sgd_nesterov_step(std::span<Scalar> w, std::span<const Scalar> g, std::span<Scalar> v, Scalar lr, Scalar rho, Scalar lambda)
{
    if (w.size() != g.size() || w.size() != v.size())
        throw DimensionError("sgd_nesterov_step: parameter, gradient and velocity sizes differ");
    for (size_t i = 0; i < w.size(); ++i) {
        const Scalar gp = g[i] + lambda * w[i];
        v[i] = rho * v[i] - lr * gp;
        w[i] = w[i] + rho * v[i] - lr * gp;
    }
}

SgdNesterov::SgdNesterov(std::vector<NamedTensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay)
{
    for (const auto &p : params_)
        velocity_.emplace_back(p.tensor.shape());
}

void SgdNesterov::step(double lr)
{
    for (const auto &p : params_)
        if (p.tensor.has_grad())
            for (Scalar g : p.tensor.grad())
                if (!std::isfinite(g))
                    throw NumericalError("non-finite gradient in " + p.name + "; update skipped");
    for (size_t i = 0; i < params_.size(); ++i) {
        auto &p = params_[i];
        if (!p.tensor.has_grad())
            continue;
        sgd_nesterov_step(p.tensor.data(), p.tensor.grad(), velocity_[i].data(), static_cast<Scalar>(lr), static_cast<Scalar>(momentum_),
                          p.decay ? static_cast<Scalar>(weight_decay_) : Scalar(0));
    }
}

void SgdNesterov::zero_grad()
{
    for (auto &p : params_)
        p.tensor.zero_grad();
}

std::vector<NamedTensor> SgdNesterov::state() const
{
    std::vector<NamedTensor> out;
    for (size_t i = 0; i < params_.size(); ++i)
        out.push_back({"opt." + params_[i].name, velocity_[i], false});
    return out;
}

void SgdNesterov::load_state(const CheckpointData &data)
{
    for (size_t i = 0; i < params_.size(); ++i) {
        const Tensor *src = data.find("opt." + params_[i].name);
        if (!src || src->shape() != velocity_[i].shape())
            throw DataError("checkpoint lacks a matching optimizer state for " + params_[i].name);
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        const Tensor *src = data.find("opt." + params_[i].name);
        std::copy(src->data().begin(), src->data().end(), velocity_[i].data().begin());
    }
}

// ---- metrics --------------------------------------------------------------

Metrics compute_metrics(std::span<const int> labels, std::span<const int> predictions, int num_classes)
{
    if (labels.empty())
        throw DataError("cannot compute metrics on an empty split");
    if (labels.size() != predictions.size())
        throw DimensionError("labels and predictions differ in length");
    Metrics m;
    m.num_classes = num_classes;
    m.total = static_cast<int64_t>(labels.size());
    m.confusion.assign(static_cast<size_t>(num_classes), std::vector<int64_t>(static_cast<size_t>(num_classes), 0));
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes || predictions[i] < 0 || predictions[i] >= num_classes)
            throw DataError("class id outside [0, " + std::to_string(num_classes) + ")");
        ++m.confusion[static_cast<size_t>(labels[i])][static_cast<size_t>(predictions[i])];
    }
    int64_t correct = 0;
    for (int c = 0; c < num_classes; ++c) {
        const auto k = static_cast<size_t>(c);
        const int64_t tp = m.confusion[k][k];
        int64_t predicted = 0, actual = 0;
        for (int j = 0; j < num_classes; ++j) {
            predicted += m.confusion[static_cast<size_t>(j)][k];
            actual += m.confusion[k][static_cast<size_t>(j)];
        }
        const double p = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        const double r = actual > 0 ? static_cast<double>(tp) / static_cast<double>(actual) : 0.0;
        m.precision.push_back(p);
        m.recall.push_back(r);
        m.f1.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
        correct += tp;
    }
    auto mean = [&](const std::vector<double> &v) {
        double s = 0;
        for (double x : v)
            s += x;
        return s / static_cast<double>(num_classes);
    };
    m.accuracy = static_cast<double>(correct) / static_cast<double>(m.total);
    m.macro_precision = mean(m.precision);
    m.macro_recall = mean(m.recall);
    m.macro_f1 = mean(m.f1);
    return m;
}

std::vector<std::string> default_class_names(int num_classes)
{
    std::vector<std::string> names;
    for (int c = 0; c + 1 < num_classes; ++c)
        names.push_back("plane" + std::to_string(c));
    names.emplace_back("background");
    return names;
}

std::string format_metrics(const Metrics &m, const std::vector<std::string> &class_names)
{
    const auto names = class_names.empty() ? default_class_names(m.num_classes) : class_names;
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "accuracy " << m.accuracy << "  macro_precision " << m.macro_precision << "  macro_recall " << m.macro_recall << "  macro_f1 "
       << m.macro_f1 << "  (n=" << m.total << ")\n";
    os << std::left << std::setw(12) << "class" << std::right << std::setw(10) << "precision" << std::setw(10) << "recall"
       << std::setw(10) << "f1" << std::setw(9) << "support" << '\n';
    for (int c = 0; c < m.num_classes; ++c) {
        const auto k = static_cast<size_t>(c);
        int64_t support = 0;
        for (auto v : m.confusion[k])
            support += v;
        os << std::left << std::setw(12) << (k < names.size() ? names[k] : std::to_string(c)) << std::right << std::setw(10)
           << m.precision[k] << std::setw(10) << m.recall[k] << std::setw(10) << m.f1[k] << std::setw(9) << support << '\n';
    }
    return os.str();
}

std::vector<int> predict(Model &model, const std::vector<Sample> &samples, int batch, bool literal_variance)
{
    if (samples.empty())
        throw DataError("cannot predict on an empty split");
    if (batch <= 0)
        throw ConfigError("batch size must be positive");
    NoGradGuard no_grad;
    std::vector<int> out;
    out.reserve(samples.size());
    for (size_t begin = 0; begin < samples.size(); begin += static_cast<size_t>(batch)) {
        const size_t end = std::min(samples.size(), begin + static_cast<size_t>(batch));
        const Batch b = make_eval_batch(samples, begin, end, literal_variance);
        const ForwardOutput f = model.forward(b.images, false);
        const int64_t K = f.scores.dim(1);
        for (int64_t n = 0; n < f.scores.dim(0); ++n) {
            const Scalar *row = f.scores.ptr() + n * K;
            out.push_back(static_cast<int>(std::max_element(row, row + K) - row));
        }
    }
    return out;
}

Metrics evaluate(Model &model, const std::vector<Sample> &samples, int batch, bool literal_variance)
{
    const auto pred = predict(model, samples, batch, literal_variance);
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const auto &s : samples) {
        if (s.label >= model.spec().num_classes)
            throw DataError("sample label " + std::to_string(s.label) + " exceeds the model's " + std::to_string(model.spec().num_classes) +
                            " classes");
        labels.push_back(s.label);
    }
    return compute_metrics(labels, pred, model.spec().num_classes);
}

// ---- protocols --------------------------------------------------------------

Protocol protocol_for(Variant v)
{
    switch (v) {
    case Variant::AGDeepSupervision:
        return Protocol::DeepSupervision;
    case Variant::AGFineTune:
        return Protocol::FineTune;
    case Variant::AG:
        return Protocol::PerScale;
    default:
        return Protocol::Plain;
    }
}

std::string to_string(Protocol p)
{
    switch (p) {
    case Protocol::Plain:
        return "plain";
    case Protocol::PerScale:
        return "per-scale";
    case Protocol::DeepSupervision:
        return "ds";
    case Protocol::FineTune:
        return "ft";
    }
    return "?";
}

Tensor protocol_loss(const ForwardOutput &out, std::span<const int> labels, Protocol protocol)
{
    const bool per_scale_terms = (protocol == Protocol::PerScale || protocol == Protocol::DeepSupervision) && out.scale_logits.size() > 1;
    if (!per_scale_terms)
        return weighted_cross_entropy(out.logits, labels);
    Tensor per_scale;
    for (const auto &l : out.scale_logits) {
        Tensor ce = weighted_cross_entropy(l, labels);
        per_scale = per_scale.defined() ? add(per_scale, ce) : ce;
    }
    per_scale = scale(per_scale, Scalar(1) / static_cast<Scalar>(out.scale_logits.size()));
    if (protocol == Protocol::PerScale)
        return per_scale;
    return add(per_scale, weighted_cross_entropy(out.logits, labels));
}

// ---- history ----------------------------------------------------------------

namespace {

const char *kHistoryHeader = "epoch,lr,train_loss,val_acc,val_macro_p,val_macro_r,val_macro_f1";

std::string phase_marker(int boundary)
{
    return "# phase 2 (fine-tune head) starts at epoch " + std::to_string(boundary);
}

} // namespace

std::string format_history_row(const HistoryRow &r)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.6g,%.6f,%.6f,%.6f,%.6f,%.6f", r.epoch, r.lr, r.train_loss, r.val_acc, r.val_macro_p, r.val_macro_r,
                  r.val_macro_f1);
    return buf;
}

void write_history(const std::filesystem::path &path, const std::vector<HistoryRow> &rows, int phase_boundary)
{
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp);
        if (!os)
            throw DataError("cannot write " + tmp.string());
        os << kHistoryHeader << '\n';
        for (const auto &r : rows) {
            if (r.epoch == phase_boundary)
                os << phase_marker(phase_boundary) << '\n';
            os << format_history_row(r) << '\n';
        }
    }
    std::filesystem::rename(tmp, path);
}

std::vector<HistoryRow> read_history(const std::filesystem::path &path)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open history " + path.string());
    std::vector<HistoryRow> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("epoch", 0) == 0)
            continue;
        HistoryRow r;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.lr, &r.train_loss, &r.val_acc, &r.val_macro_p, &r.val_macro_r,
                        &r.val_macro_f1) != 7)
            throw DataError("malformed history row: " + line);
        rows.push_back(r);
    }
    return rows;
}

// ---- training loop ------------------------------------------------------------

TrainOptions train_options_from_config(const RunConfig &cfg)
{
    TrainOptions o;
    o.opt = OptimizerConfig::from_config(cfg);
    o.batch = cfg.get_int("batch");
    o.steps_per_epoch = cfg.get_int("steps_per_epoch");
    o.patience = cfg.get_int("patience");
    o.ft_epochs = cfg.get_int("ft_epochs");
    o.ft_lr = cfg.get_double("ft_lr");
    o.num_plane_classes = cfg.get_int("num_classes") - 1;
    o.augment.translate_px = cfg.get_int("translate_px");
    o.augment.rotate_deg = cfg.get_double("rotate_deg");
    o.augment.zoom_min = cfg.get_double("zoom_min");
    o.augment.zoom_max = cfg.get_double("zoom_max");
    o.augment.hflip = cfg.get_bool("hflip");
    o.use_augment = cfg.get_bool("augment");
    o.literal_variance = cfg.get_bool("literal_variance");
    o.seed = cfg.get_u64("seed");
    o.config = cfg;
    if (o.batch <= 0 || o.steps_per_epoch < 0 || o.patience <= 0 || o.ft_epochs < 0 || !(o.ft_lr > 0))
        throw ConfigError("batch, patience and ft_lr must be positive; steps_per_epoch and ft_epochs non-negative");
    return o;
}

namespace {

struct Snapshot {
    std::vector<Tensor> values;

    static Snapshot of(const Model &m)
    {
        Snapshot s;
        for (const auto &t : m.state())
            s.values.push_back(t.tensor.clone());
        return s;
    }

    void restore(Model &m) const
    {
        const auto st = m.state();
        if (st.size() != values.size())
            throw Error("snapshot does not match the model layout");
        for (size_t i = 0; i < st.size(); ++i) {
            Tensor dst = st[i].tensor;
            std::copy(values[i].data().begin(), values[i].data().end(), dst.data().begin());
        }
    }
};

std::string rng_to_string(const std::mt19937_64 &rng)
{
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64 &rng, const std::string &s)
{
    std::istringstream is(s);
    is >> rng;
    if (!is)
        throw DataError("corrupt RNG state in checkpoint");
}

std::string fmt_double(double v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

class Trainer {
public:
    Trainer(Model &model, const std::vector<Sample> &train_set, const std::vector<Sample> &val_set, const TrainOptions &opts)
        : model_(model), val_(val_set), opts_(opts), protocol_(protocol_for(model.spec().variant)),
          sampler_(train_set, opts.num_plane_classes, opts.augment, opts.use_augment, opts.literal_variance)
    {
        opts_.opt.validate();
        if (val_set.empty())
            throw DataError("validation split is empty");
        if (opts_.num_plane_classes + 1 != model.spec().num_classes)
            throw ConfigError("model has " + std::to_string(model.spec().num_classes) + " classes but the sampler expects " +
                              std::to_string(opts_.num_plane_classes) + " plane classes + background");
        for (const auto &s : train_set)
            if (s.image.ndim() != 3 || s.image.dim(1) != model.spec().input_h || s.image.dim(2) != model.spec().input_w)
                throw DataError("training image shape " + shape_str(s.image.shape()) + " does not match the model input " +
                                std::to_string(model.spec().input_h) + "x" + std::to_string(model.spec().input_w));
        steps_ = opts_.steps_per_epoch > 0 ? opts_.steps_per_epoch
                                           : static_cast<int>((train_set.size() + static_cast<size_t>(opts_.batch) - 1) / static_cast<size_t>(opts_.batch));
        std::seed_seq seq{static_cast<uint32_t>(opts_.seed), static_cast<uint32_t>(opts_.seed >> 32), 0x5a3d1eu};
        rng_.seed(seq);
        if (!opts_.out_dir.empty()) {
            std::filesystem::create_directories(opts_.out_dir);
            RunConfig echo = opts_.config;
            model_.spec().to_config(echo);
            echo.save(opts_.out_dir / "config.txt");
        }
    }

    TrainResult run()
    {
        TrainResult result;
        for (auto &p : model_.parameters())
            p.tensor.set_requires_grad(true);
        optimizer_ = std::make_unique<SgdNesterov>(model_.parameters(), opts_.opt.momentum, opts_.opt.weight_decay);
        best_ = Snapshot::of(model_);
        if (opts_.resume)
            result.resumed = try_resume();

        const bool ft = protocol_ == Protocol::FineTune;
        if (phase_ == 1) {
            while (epoch_ < opts_.opt.epochs && !(ft && bad_epochs_ >= opts_.patience))
                run_epoch(lr_at_epoch(epoch_, opts_.opt), ft ? Protocol::PerScale : protocol_);
            if (ft) {
                best_.restore(model_);
                result.phase1_final_val = best_val_;
                begin_phase2();
                result.phase2_initial_val = evaluate(model_, val_, opts_.batch, opts_.literal_variance);
                best_val_ = result.phase2_initial_val;
                best_f1_ = best_val_.macro_f1;
                best_ = Snapshot::of(model_);
                save_best();
                save_last();
            }
        } else {
            result.phase1_final_val = best_val_;
        }
        if (phase_ == 2) {
            while (epoch_ < phase_boundary_ + opts_.ft_epochs)
                run_epoch(opts_.ft_lr, Protocol::Plain);
        }
        best_.restore(model_);
        for (auto &p : model_.parameters())
            p.tensor.zero_grad();
        Tape::current().clear();
        if (!opts_.out_dir.empty())
            save_checkpoint(model_, opts_.out_dir / "model.agck", opts_.config);

        result.history = history_;
        result.best_epoch = best_epoch_;
        result.best_val = best_val_;
        result.phase_boundary = phase_boundary_;
        return result;
    }

private:
    void begin_phase2()
    {
        model_.attach_ft_head();
        for (auto &p : model_.parameters())
            p.tensor.set_requires_grad(true);
        optimizer_ = std::make_unique<SgdNesterov>(model_.parameters(), opts_.opt.momentum, opts_.opt.weight_decay);
        phase_ = 2;
        phase_boundary_ = epoch_;
        bad_epochs_ = 0;
    }

    void run_epoch(double lr, Protocol protocol)
    {
        double loss_sum = 0;
        for (int s = 0; s < steps_; ++s) {
            const Batch b = sampler_.next(opts_.batch, rng_);
            const ForwardOutput out = model_.forward(b.images, true);
            const Tensor loss = protocol_loss(out, b.labels, protocol);
            const Scalar value = loss.item();
            if (!std::isfinite(value)) {
                Tape::current().clear();
                throw NumericalError("training loss is not finite at epoch " + std::to_string(epoch_) + ", step " + std::to_string(s) +
                                     (opts_.out_dir.empty() ? std::string() : "; last good checkpoint: " + (opts_.out_dir / "last.agck").string()));
            }
            backward(loss);
            Tape::current().clear();
            try {
                optimizer_->step(lr);
            } catch (const NumericalError &e) {
                throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch_) + ", step " + std::to_string(s));
            }
            optimizer_->zero_grad();
            loss_sum += value;
        }

        const Metrics val = evaluate(model_, val_, opts_.batch, opts_.literal_variance);
        HistoryRow row{epoch_, lr, loss_sum / steps_, val.accuracy, val.macro_precision, val.macro_recall, val.macro_f1};
        history_.push_back(row);
        ++epoch_;
        if (val.macro_f1 > best_f1_) {
            best_f1_ = val.macro_f1;
            best_val_ = val;
            best_epoch_ = row.epoch;
            best_ = Snapshot::of(model_);
            bad_epochs_ = 0;
            save_best();
        } else {
            ++bad_epochs_;
        }
        if (opts_.snapshot_epoch > 0 && epoch_ == opts_.snapshot_epoch && !opts_.snapshot_path.empty())
            save_checkpoint(model_, opts_.snapshot_path, opts_.config);
        save_last();
        if (opts_.on_epoch)
            opts_.on_epoch(row);
    }

    std::map<std::string, std::string> state() const
    {
        return {{"epoch", std::to_string(epoch_)},
                {"phase", std::to_string(phase_)},
                {"phase_boundary", std::to_string(phase_boundary_)},
                {"best_f1", fmt_double(best_f1_)},
                {"best_epoch", std::to_string(best_epoch_)},
                {"bad_epochs", std::to_string(bad_epochs_)},
                {"rng", rng_to_string(rng_)}};
    }

    void save_last()
    {
        if (opts_.out_dir.empty())
            return;
        write_history(opts_.out_dir / "history.csv", history_, phase_boundary_);
        write_checkpoint(opts_.out_dir / "last.agck", make_checkpoint(model_, opts_.config, optimizer_->state(), state()));
    }

    void save_best()
    {
        if (!opts_.out_dir.empty())
            write_checkpoint(opts_.out_dir / "best.agck", make_checkpoint(model_, opts_.config, {}, {{"best_f1", fmt_double(best_f1_)}}));
    }

    bool try_resume()
    {
        if (opts_.out_dir.empty())
            return false;
        const auto last = opts_.out_dir / "last.agck";
        if (!std::filesystem::exists(last))
            return false;
        const CheckpointData data = read_checkpoint(last);
        const auto st = data.state();
        auto get = [&](const std::string &k) {
            const auto it = st.find(k);
            if (it == st.end())
                throw DataError(last.string() + " lacks training state '" + k + "'");
            return it->second;
        };
        phase_ = std::stoi(get("phase"));
        if (phase_ == 2 && !model_.has_ft_head()) {
            model_.attach_ft_head();
            for (auto &p : model_.parameters())
                p.tensor.set_requires_grad(true);
            optimizer_ = std::make_unique<SgdNesterov>(model_.parameters(), opts_.opt.momentum, opts_.opt.weight_decay);
        }
        assign_state(model_, data);
        optimizer_->load_state(data);
        epoch_ = std::stoi(get("epoch"));
        phase_boundary_ = std::stoi(get("phase_boundary"));
        best_f1_ = std::stod(get("best_f1"));
        best_epoch_ = std::stoi(get("best_epoch"));
        bad_epochs_ = std::stoi(get("bad_epochs"));
        rng_from_string(rng_, get("rng"));
        history_ = read_history(opts_.out_dir / "history.csv");
        history_.resize(std::min(history_.size(), static_cast<size_t>(epoch_)));

        const auto best_path = opts_.out_dir / "best.agck";
        if (std::filesystem::exists(best_path)) {
            Snapshot current = Snapshot::of(model_);
            assign_state(model_, read_checkpoint(best_path));
            best_ = Snapshot::of(model_);
            best_val_ = evaluate(model_, val_, opts_.batch, opts_.literal_variance);
            current.restore(model_);
        } else {
            best_ = Snapshot::of(model_);
        }
        return true;
    }

    Model &model_;
    const std::vector<Sample> &val_;
    TrainOptions opts_;
    Protocol protocol_;
    BatchSampler sampler_;
    std::unique_ptr<SgdNesterov> optimizer_;
    std::mt19937_64 rng_;
    int steps_ = 1;

    int epoch_ = 0;
    int phase_ = 1;
    int phase_boundary_ = -1;
    double best_f1_ = -1.0;
    int best_epoch_ = -1;
    int bad_epochs_ = 0;
    Metrics best_val_;
    Snapshot best_;
    std::vector<HistoryRow> history_;
};

} // namespace

TrainResult train(Model &model, const std::vector<Sample> &train_set, const std::vector<Sample> &val_set, const TrainOptions &opts)
{
    return Trainer(model, train_set, val_set, opts).run();
}

} // namespace agnet::inline AGNET_ABI
