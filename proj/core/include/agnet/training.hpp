#pragma once

#include <agnet/checkpoint.hpp>
#include <agnet/data.hpp>
#include <agnet/model.hpp>

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace agnet::inline AGNET_ABI {

struct OptimizerConfig {
    double lr0 = 0.1;
    double warm_lr = 0.01;
    int warm_epochs = 5;
    int decay_every = 100; // decays anchored at absolute epochs decay_every, 2*decay_every, ...
    double decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 300;

    void validate() const;
    static OptimizerConfig from_config(const RunConfig &cfg);
};

double lr_at_epoch(int epoch, const OptimizerConfig &cfg);

/// g' = g + lambda*w; v = rho*v - lr*g'; w = w + rho*v - lr*g'.
void sgd_nesterov_step(std::span<Scalar> w, std::span<const Scalar> g, std::span<Scalar> v, Scalar lr, Scalar rho, Scalar lambda);

/// Nesterov SGD over named parameters; weight decay only where NamedTensor::decay.
class SgdNesterov {
public:
    SgdNesterov(std::vector<NamedTensor> params, double momentum, double weight_decay);

    /// Applies one update from the accumulated gradients. Non-finite
    /// gradients raise NumericalError before any parameter changes.
    void step(double lr);
    void zero_grad();

    /// Velocity buffers named "opt.<parameter>".
    std::vector<NamedTensor> state() const;
    void load_state(const CheckpointData &data);

private:
    std::vector<NamedTensor> params_;
    std::vector<Tensor> velocity_;
    double momentum_;
    double weight_decay_;
};

struct Metrics {
    int num_classes = 0;
    int64_t total = 0;
    std::vector<std::vector<int64_t>> confusion; // [true][predicted]
    double accuracy = 0;
    std::vector<double> precision, recall, f1;
    double macro_precision = 0;
    double macro_recall = 0;
    double macro_f1 = 0; // mean of per-class F1
};

/// Undefined precision or recall (no predicted / no actual positives) counts as 0.
Metrics compute_metrics(std::span<const int> labels, std::span<const int> predictions, int num_classes);
std::string format_metrics(const Metrics &m, const std::vector<std::string> &class_names = {});
std::vector<std::string> default_class_names(int num_classes);

/// Eval-mode predictions (argmax of ForwardOutput::scores) without recording.
std::vector<int> predict(Model &model, const std::vector<Sample> &samples, int batch = 64, bool literal_variance = false);
Metrics evaluate(Model &model, const std::vector<Sample> &samples, int batch = 64, bool literal_variance = false);

/// Plain: cross-entropy on the aggregated output. PerScale: unweighted mean
/// of the per-scale cross-entropies (each branch is its own classifier).
/// DeepSupervision: PerScale plus Plain. FineTune: PerScale until
/// convergence, then Plain through the fine-tuning head.
enum class Protocol { Plain, PerScale, DeepSupervision, FineTune };
Protocol protocol_for(Variant v);
std::string to_string(Protocol p);

/// Training loss of one forward pass under the given protocol.
Tensor protocol_loss(const ForwardOutput &out, std::span<const int> labels, Protocol protocol);

struct HistoryRow {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double val_acc = 0;
    double val_macro_p = 0;
    double val_macro_r = 0;
    double val_macro_f1 = 0;
};

struct TrainOptions {
    OptimizerConfig opt;
    int batch = 64;
    int steps_per_epoch = 0; // 0: ceil(train size / batch)
    int patience = 20;       // fine-tune phase 1 stops after this many epochs without a val macro-F1 gain
    int ft_epochs = 50;
    double ft_lr = 0.01;
    int num_plane_classes = 5;
    AugmentConfig augment;
    bool use_augment = true;
    bool literal_variance = false;
    uint64_t seed = 1;
    std::filesystem::path out_dir; // empty: keep everything in memory
    bool resume = false;
    int snapshot_epoch = -1; // also save the model after this many epochs (donor snapshots)
    std::filesystem::path snapshot_path;
    RunConfig config; // echoed into checkpoints
    std::function<void(const HistoryRow &)> on_epoch;
};

TrainOptions train_options_from_config(const RunConfig &cfg);

struct TrainResult {
    std::vector<HistoryRow> history;
    int best_epoch = -1;
    Metrics best_val;
    int phase_boundary = -1;       // first phase-2 epoch (fine-tune protocol)
    Metrics phase1_final_val;      // validation metrics of the model handed to phase 2
    Metrics phase2_initial_val;    // phase 2 evaluation before any update
    bool resumed = false;
};

/// Trains `model` in place; on return it holds the weights with the best
/// validation macro-F1. With an out_dir it writes config.txt, history.csv,
/// last.agck (resumable), best.agck and model.agck.
TrainResult train(Model &model, const std::vector<Sample> &train_set, const std::vector<Sample> &val_set, const TrainOptions &opts);

std::string format_history_row(const HistoryRow &row);
void write_history(const std::filesystem::path &path, const std::vector<HistoryRow> &rows, int phase_boundary);
std::vector<HistoryRow> read_history(const std::filesystem::path &path);

} // namespace agnet::inline AGNET_ABI
