#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "clawno/datagen.hpp"
#include "clawno/geometry.hpp"
#include "clawno/neuralop.hpp"
#include "json.hpp"

namespace clawno {

/**
 * Training run description. JSON keys equal the field names; unknown keys are
 * rejected. The model sees the last t_in frames and predicts the next one;
 * rollouts cover t_out frames after the first t_in.
 */
struct TrainConfig {
    std::string dataset;
    std::string output = "run";

    std::size_t width = 20;
    std::size_t layers = 4;
    std::size_t modes = 12;
    std::size_t proj_hidden = 128;
    std::size_t extra_channels = 0;
    bool claw = true;

    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;
    std::size_t epochs = 50;
    std::size_t batch_size = 2;
    std::uint64_t seed = 0;

    std::size_t t_in = 10;
    std::size_t t_out = 20;

    void validate() const;
    FnoConfig model_config() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;           ///< mean relative squared error over the epoch's pairs
    double validation_error = 0.0;     ///< rollout relative L2 on the validation samples
    double validation_divergence = 0.0;
    double learning_rate = 0.0;        ///< at the epoch's last step
};

struct MetricsRecord {
    std::string evaluation = "autoregressive";
    /// Entry 0 holds the untrained model.
    std::vector<EpochMetrics> epochs;
    /// Per rollout step, averaged over samples.
    std::vector<double> step_error;
    std::vector<double> step_divergence;
    /// Mean over samples of |pred - truth| / |truth| over the whole rollout.
    double test_error = 0.0;
    /// Mean over samples of the relative squared error, the training objective.
    double test_loss = 0.0;
    /// Spectral divergence RMS over prediction RMS, averaged over steps and samples.
    double divergence = 0.0;
    /// Least-squares slope of step_error is positive.
    bool error_increases = false;
};

nlohmann::json to_json(const MetricsRecord& m);
MetricsRecord metrics_from_json(const nlohmann::json& j);

// ---- optimizer ---------------------------------------------------------------

/// Learning rate at iteration `it` of `total` under cosine annealing to zero.
double cosine_learning_rate(double base, std::size_t it, std::size_t total);

/// Adam with L2 weight decay added to the gradient.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t step = 0;

    void init(const std::vector<Parameter>& params);
    void update(std::vector<Parameter>& params, const std::vector<std::vector<double>>& grads, double lr,
                const TrainConfig& c);
};

// ---- checkpoints ---------------------------------------------------------------

/**
 * Text header of key=value lines (config as one JSON line), a blank line, then
 * per tensor: name, shape, values and Adam moments in float64, and a trailing
 * FNV-1a checksum over everything before it.
 */
struct Checkpoint {
    TrainConfig config;
    std::vector<std::size_t> grid_counts;
    std::size_t epoch = 0;          ///< epochs completed
    double best_validation = 0.0;
    MetricsRecord metrics;          ///< history up to `epoch`
    std::vector<Parameter> params;
    AdamState adam;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copies the checkpoint tensors into `model`; throws IoError when names or shapes differ.
void load_parameters(ClawFnoModel& model, const Checkpoint& ck);
std::unique_ptr<ClawFnoModel> model_from_checkpoint(const Checkpoint& ck);

// ---- training and evaluation -----------------------------------------------------

struct SampleSplit {
    std::vector<std::size_t> train, validation, test;
};

/// Manifest split if present, otherwise the last 20% (at least one) for validation and no test set.
SampleSplit resolve_split(const Dataset& d);

/// Teacher-forcing pairs (sample, target frame) with targets t_in .. t_in + t_out - 1.
std::vector<std::pair<std::size_t, std::size_t>> teacher_forcing_pairs(const std::vector<std::size_t>& samples,
                                                                      const TrainConfig& c);

/// Maps the last t_in frames to the next frame.
using Predictor = std::function<Field(const Field& window)>;

/// Autoregressive rollout of t_out steps from the first t_in frames of each sample.
MetricsRecord evaluate_rollout(const Predictor& predict, const std::vector<Field>& samples, std::size_t t_in,
                               std::size_t t_out);

/// Predicted frames of one rollout.
std::vector<Field> rollout(const Predictor& predict, const Field& sample, std::size_t t_in, std::size_t t_out);

struct TrainResult {
    MetricsRecord metrics;
    std::filesystem::path best, last;
};

struct TrainOptions {
    /// Continue from a last.ckpt of a run with the same config.
    std::optional<std::filesystem::path> resume;
    /// Stop once this many epochs are complete; the schedule still spans config.epochs.
    std::optional<std::size_t> stop_after;
};

/**
 * Adam with per-iteration cosine annealing on one-step pairs. Per-sample tapes
 * run in parallel; gradients are summed in sample order, so results do not
 * depend on the thread count. Writes last.ckpt after every epoch, best.ckpt
 * whenever the validation error improves, and metrics.json into config.output.
 * Throws NumericalAbort on a non-finite loss.
 */
TrainResult train(const TrainConfig& config, const TrainOptions& options = {});

struct EvalOptions {
    bool super_resolution = false;
    /// "test", "validation", "train" or "all"; "test" falls back to all samples when the split has none.
    std::string subset = "test";
};

MetricsRecord evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                       const EvalOptions& options = {});

// ---- convergence study ------------------------------------------------------------

struct ConvergenceConfig {
    std::vector<std::string> backends = {"spectral", "meshfree"};
    std::vector<std::size_t> levels = {16, 32, 64, 128};
    std::vector<std::size_t> orders = {5};   ///< meshfree m
    /// "sincos": [sin x sin y, cos x cos y] (divergence 0); "smooth": a generic periodic field.
    std::string field = "sincos";
    /// Meshfree cloud wraps around the torus instead of ending at the lattice edge.
    bool periodic_cloud = false;
    double radius_ratio = 0.0;               ///< 0: default per order
};

struct ConvergenceRow {
    std::string backend;
    std::size_t n = 0;
    double delta_ratio = 0.0;
    std::size_t m = 0;
    double error = 0.0;
    double order = 0.0;   ///< against the previous level of the same backend and m; NaN on the first
};

/// Divergence error RMS on N x N lattices over [0, 2 pi)^2 (FC: the closed square [0, 2 pi]^2).
std::vector<ConvergenceRow> convergence_study(const ConvergenceConfig& config);
void write_convergence_csv(const std::vector<ConvergenceRow>& rows, std::ostream& out);

// ---- reports ----------------------------------------------------------------

/// Columns: step,error,divergence. Header only for an empty rollout.
void write_rollout_csv(const MetricsRecord& m, std::ostream& out);
/// Columns: epoch,train_loss,validation_error,validation_divergence,learning_rate.
void write_epochs_csv(const MetricsRecord& m, std::ostream& out);

/// 8-bit binary PGM of a 2D channel mapped linearly from [lo, hi] to [0, 255].
void write_pgm(const Field& field, std::size_t channel, double lo, double hi, const std::filesystem::path& path);

/// prediction, truth and |prediction - truth| of one channel as three PGM images.
std::vector<std::filesystem::path> write_triptych(const Field& prediction, const Field& truth, std::size_t channel,
                                                  const std::filesystem::path& dir, const std::string& stem);

/// metrics.json, rollout.csv and epochs.csv in `dir`.
void report(const MetricsRecord& m, const std::filesystem::path& dir);

}  // namespace clawno
