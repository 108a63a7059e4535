#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmcdrop/datasets.hpp"
#include "cmcdrop/nn.hpp"
#include "cmcdrop/uncertainty.hpp"

namespace cmcdrop {

enum class DatasetKind { moons, circles, mnist };
enum class ModelKind { mc, cmc };
enum class SweepAxis { tau, rate };
// Threshold grids are either absolute PE values (binary tasks) or
// fractions of the PE range ln C (multi-class).
enum class TauUnit { absolute, fraction };

struct ExperimentConfig {
  std::string name = "custom";

  DatasetKind dataset = DatasetKind::moons;
  std::size_t n = 10000;
  double noise = 0.3;
  double circle_factor = 0.8;
  std::size_t train_n = 8000;
  std::size_t val_n = 1000;
  std::size_t test_n = 1000;
  std::string mnist_images;
  std::string mnist_labels;
  std::string mnist_test_images;  // optional fixed test set
  std::string mnist_test_labels;

  std::vector<std::size_t> hidden_dims = {20, 20, 20};
  Activation hidden_activation = Activation::relu;
  std::vector<std::size_t> dropout_layers = {0, 1};  // hidden-layer indices

  ModelKind model = ModelKind::cmc;
  double dropout_p = 0.3;
  std::size_t n_sample = 10;
  MaskMode mask_mode = MaskMode::per_batch;

  double learning_rate = 0.08;
  double momentum = 0.0;
  LossKind loss = LossKind::bce;
  std::size_t epochs = 300;
  std::size_t epochs_mc = 0;  // 0 means same as `epochs`
  std::size_t batch_size = 64;

  std::size_t t_samples = 100;
  SweepAxis sweep = SweepAxis::tau;
  TauUnit tau_unit = TauUnit::absolute;
  std::vector<double> tau_grid;
  double fixed_tau = 0.5;
  std::vector<double> rate_grid;

  std::size_t repetitions = 20;
  std::uint64_t base_seed = 1234;

  int class_count() const { return dataset == DatasetKind::mnist ? 10 : 2; }
  std::size_t input_dim() const { return dataset == DatasetKind::mnist ? 784 : 2; }
  std::size_t epochs_for(ModelKind kind) const {
    return (kind == ModelKind::mc && epochs_mc != 0) ? epochs_mc : epochs;
  }
  // Threshold in nats for a grid value.
  double absolute_tau(double grid_value) const;
};

// Throws ConfigError with a field-specific message on the first problem.
void validate(const ExperimentConfig& cfg);

std::vector<std::string> preset_names();
ExperimentConfig preset_config(const std::string& name);

// Flat key = value text (newline separated, # comments).
ExperimentConfig parse_config_text(const std::string& text);
// Dispatches on extension: .json manifests or flat text.
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainedModel {
  NetworkParams params;  // parameters at the best validation epoch
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_loss = 0.0;
};

struct SplitData {
  LabeledDataset train, val, test;
};

// Deterministic per-run data generation/split from the run's sub-streams.
SplitData build_data(const ExperimentConfig& cfg, std::uint64_t run_seed);

// Architecture + dropout attachments for one model kind; controlled banks
// are built from the run's bank sub-streams.
std::vector<LayerSpec> build_layer_specs(const ExperimentConfig& cfg, ModelKind kind,
                                         double dropout_p, std::uint64_t run_seed);

// Epoch loop with validation-loss checkpointing: after every epoch the
// validation loss is computed with dropout off, and the parameters with the
// minimum validation loss are returned. Throws NumericError on divergence.
TrainedModel train_with_checkpoint(const ExperimentConfig& cfg, ModelKind kind,
                                   NetworkParams params, const LabeledDataset& train,
                                   const LabeledDataset& val, std::uint64_t run_seed);

struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  ModelKind kind = ModelKind::mc;
  double grid_value = 0.0;  // dropout rate for rate sweeps; unused for tau sweeps
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<PeOutcome> pe_outcomes;  // one per test input
  std::vector<ThresholdRow> per_tau;   // recomputable from pe_outcomes
};

struct ExperimentResult {
  std::vector<RunRecord> records;
  std::vector<std::string> failures;  // diagnostics for skipped runs/cells
};

// R repetitions of config.model: seed_r = base_seed + r, fresh data split,
// fresh banks, training, T-sample MC prediction on every test input,
// classification at every grid threshold.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t parallel = 1);

// Both model kinds on the shared per-rep data splits.
ExperimentResult run_tau_sweep(const ExperimentConfig& cfg, std::size_t parallel = 1);

// Trains one model per (rate, kind, repetition) at the fixed threshold;
// infeasible banks at a rate are recorded as skipped cells.
ExperimentResult run_rate_sweep(const ExperimentConfig& cfg, std::size_t parallel = 1);

struct MetricAgg {
  std::optional<double> mean;
  std::optional<double> stddev;  // sample std; 0 for a single record
  std::size_t n_defined = 0;
  std::size_t n_undefined = 0;
};

struct SweepRow {
  double grid_value = 0.0;
  ModelKind kind = ModelKind::mc;
  MetricAgg u_acc, u_sen, u_spec, u_prec;

  std::size_t n_undefined_total() const {
    return u_acc.n_undefined + u_sen.n_undefined + u_spec.n_undefined + u_prec.n_undefined;
  }
};

struct SweepResult {
  SweepAxis axis = SweepAxis::tau;
  std::vector<double> grid;
  std::vector<SweepRow> rows;  // grid-major, model kind within
};

// Per-cell mean and sample standard deviation over defined metric values;
// undefined values are excluded and counted. Throws ConfigError when
// `records` is empty.
SweepResult aggregate(const std::vector<RunRecord>& records, SweepAxis axis,
                      const std::vector<double>& grid);

// Writes metrics.csv, pe_histogram.csv, runs.csv and manifest.json into
// out_dir; returns the paths written.
std::vector<std::string> emit_outputs(const ExperimentConfig& cfg, const SweepResult& sweep,
                                      const std::vector<RunRecord>& records,
                                      const std::string& out_dir);

// Reads metrics.csv + manifest.json from a sweep directory and writes
// report.md juxtaposing the CMC and MC mean curves, including whether CMC
// precision dominates over the lower half of the threshold grid.
std::string write_report(const std::string& sweep_dir);

std::string model_to_json(const NetworkParams& params);
NetworkParams model_from_json(const std::string& text);
void save_model(const NetworkParams& params, const std::string& path);
NetworkParams load_model(const std::string& path);

// T-sample MC prediction over a test set with per-input derived rng
// streams; accuracy is the fraction of argmax-of-mean hits.
struct EvalOutput {
  double accuracy = 0.0;
  std::vector<PeOutcome> outcomes;
};
EvalOutput mc_evaluate(const NetworkParams& model, const LabeledDataset& test, Index t_samples,
                       std::uint64_t predict_seed);

std::string to_string(ModelKind k);
std::string to_string(DatasetKind k);

}  // namespace cmcdrop
