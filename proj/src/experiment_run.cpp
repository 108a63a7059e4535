#include <atomic>
#include <cmath>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cmcdrop/errors.hpp"
#include "cmcdrop/experiment.hpp"
#include "cmcdrop/format.hpp"

namespace cmcdrop {

SplitData build_data(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  const std::uint64_t split_seed = derive_seed(run_seed, "split");
  if (cfg.dataset == DatasetKind::mnist) {
    LabeledDataset full = to_dataset(load_mnist_idx(cfg.mnist_images, cfg.mnist_labels));
    SplitData data;
    if (!cfg.mnist_test_images.empty()) {
      auto parts = split_dataset(full, {cfg.train_n, cfg.val_n, 0, split_seed});
      data.train = std::move(parts[0]);
      data.val = std::move(parts[1]);
      data.test = to_dataset(load_mnist_idx(cfg.mnist_test_images, cfg.mnist_test_labels));
    } else {
      auto parts = split_dataset(full, {cfg.train_n, cfg.val_n, cfg.test_n, split_seed});
      data.train = std::move(parts[0]);
      data.val = std::move(parts[1]);
      data.test = std::move(parts[2]);
    }
    return data;
  }

  const std::uint64_t data_seed = derive_seed(run_seed, "data");
  LabeledDataset full = cfg.dataset == DatasetKind::moons
                            ? make_moons(cfg.n, cfg.noise, data_seed)
                            : make_circles(cfg.n, cfg.noise, cfg.circle_factor, data_seed);
  auto parts = split_dataset(full, {cfg.train_n, cfg.val_n, cfg.test_n, split_seed});
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
}

std::vector<LayerSpec> build_layer_specs(const ExperimentConfig& cfg, ModelKind kind,
                                         double dropout_p, std::uint64_t run_seed) {
  std::vector<LayerSpec> specs;
  Index in = static_cast<Index>(cfg.input_dim());
  for (std::size_t h : cfg.hidden_dims) {
    specs.push_back({in, static_cast<Index>(h), cfg.hidden_activation, std::nullopt});
    in = static_cast<Index>(h);
  }
  if (cfg.loss == LossKind::bce) {
    specs.push_back({in, 1, Activation::sigmoid, std::nullopt});
  } else {
    specs.push_back({in, static_cast<Index>(cfg.class_count()), Activation::softmax,
                     std::nullopt});
  }

  for (std::size_t idx : cfg.dropout_layers) {
    DropoutAttachment att;
    att.p = dropout_p;
    if (kind == ModelKind::mc) {
      att.kind = DropoutKind::traditional;
    } else {
      att.kind = DropoutKind::controlled;
      att.bank = build_mask_bank(cfg.hidden_dims[idx], cfg.n_sample, dropout_p,
                                 derive_seed(run_seed, "bank", idx));
    }
    specs[idx].dropout = std::move(att);
  }
  return specs;
}

namespace {

double batch_loss(const ForwardTrace& trace, const std::vector<int>& labels, LossKind loss) {
  if (loss == LossKind::bce) return loss_bce(trace.output().col(0), labels);
  return loss_nll(trace.output(), labels);
}

double dataset_loss(const NetworkParams& params, const LabeledDataset& ds, LossKind loss) {
  Rng unused(0);
  ForwardTrace trace = forward(params, ds.features, ForwardMode::eval_deterministic, unused);
  return batch_loss(trace, ds.labels, loss);
}

}  // namespace

TrainedModel train_with_checkpoint(const ExperimentConfig& cfg, ModelKind kind,
                                   NetworkParams params, const LabeledDataset& train,
                                   const LabeledDataset& val, std::uint64_t run_seed) {
  if (train.size() == 0 || val.size() == 0) {
    throw ConfigError("training needs non-empty train and validation sets");
  }

  Rng shuffle_rng = substream(run_seed, "shuffle");
  Rng mask_rng =
      substream(run_seed, kind == ModelKind::cmc ? "mask/cmc" : "mask/mc");
  OptimizerState opt = make_optimizer(params, cfg.learning_rate, cfg.momentum);

  const std::size_t n = static_cast<std::size_t>(train.size());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainedModel best;
  best.params = params;
  const std::size_t epochs = cfg.epochs_for(kind);
  best.history.reserve(epochs);

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    for (std::size_t i = n; i-- > 1;) {
      std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
    }

    double train_loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, n - start);
      Matrix xb(static_cast<Index>(bs), train.dim());
      std::vector<int> yb(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        xb.row(static_cast<Index>(i)) =
            train.features.row(static_cast<Index>(order[start + i]));
        yb[i] = train.labels[order[start + i]];
      }
      try {
        ForwardTrace trace = forward(params, xb, ForwardMode::train, mask_rng, cfg.mask_mode);
        const double loss = batch_loss(trace, yb, cfg.loss);
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite training loss");
        }
        train_loss_sum += loss * static_cast<double>(bs);
        GradientSet grads = backward(trace, params, yb, cfg.loss);
        sgd_step(params, grads, opt);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " +
                           e.what());
      }
    }

    double val_loss;
    try {
      val_loss = dataset_loss(params, val, cfg.loss);
      if (!std::isfinite(val_loss)) throw NumericError("non-finite validation loss");
    } catch (const NumericError& e) {
      throw NumericError("validation diverged at epoch " + std::to_string(epoch) + ": " +
                         e.what());
    }

    best.history.push_back({train_loss_sum / static_cast<double>(n), val_loss});
    if (best.best_epoch == 0 || val_loss < best.best_val_loss) {
      best.params = params;
      best.best_epoch = epoch;
      best.best_val_loss = val_loss;
    }
  }
  return best;
}

EvalOutput mc_evaluate(const NetworkParams& model, const LabeledDataset& test, Index t_samples,
                       std::uint64_t predict_seed) {
  if (test.size() == 0) throw ConfigError("evaluation needs a non-empty test set");
  EvalOutput out;
  out.outcomes.reserve(static_cast<std::size_t>(test.size()));
  std::size_t hits = 0;
  for (Index i = 0; i < test.size(); ++i) {
    Rng rng(derive_seed(predict_seed, "input", static_cast<std::uint64_t>(i)));
    const PredictiveSamples samples = mc_predict(model, test.features.row(i), t_samples, rng);
    const MeanPrediction pred = predictive_entropy(samples);
    const bool correct =
        pred.predicted_class == static_cast<Index>(test.labels[static_cast<std::size_t>(i)]);
    hits += correct ? 1 : 0;
    out.outcomes.push_back({pred.pe, correct});
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(test.size());
  return out;
}

namespace {

std::vector<double> absolute_grid(const ExperimentConfig& cfg) {
  if (cfg.sweep == SweepAxis::rate) return {cfg.absolute_tau(cfg.fixed_tau)};
  std::vector<double> grid;
  grid.reserve(cfg.tau_grid.size());
  for (double v : cfg.tau_grid) grid.push_back(cfg.absolute_tau(v));
  return grid;
}

RunRecord run_single(const ExperimentConfig& cfg, ModelKind kind, double rate, std::size_t rep,
                     const SplitData& data, const std::vector<double>& abs_grid,
                     bool rate_axis) {
  const std::uint64_t run_seed = cfg.base_seed + rep;
  std::vector<LayerSpec> specs = build_layer_specs(cfg, kind, rate, run_seed);
  NetworkParams params = init_network(specs, derive_seed(run_seed, "init"));
  TrainedModel trained =
      train_with_checkpoint(cfg, kind, std::move(params), data.train, data.val, run_seed);

  const std::uint64_t predict_seed =
      derive_seed(run_seed, kind == ModelKind::cmc ? "predict/cmc" : "predict/mc");
  EvalOutput eval = mc_evaluate(trained.params, data.test,
                                static_cast<Index>(cfg.t_samples), predict_seed);

  RunRecord rec;
  rec.run_id = to_string(kind) + (rate_axis ? "-p" + format_double(rate) : "") + "-r" +
               std::to_string(rep);
  rec.seed = run_seed;
  rec.kind = kind;
  rec.grid_value = rate;
  rec.best_epoch = trained.best_epoch;
  rec.best_val_loss = trained.best_val_loss;
  rec.test_accuracy = eval.accuracy;
  rec.per_tau = threshold_sweep(eval.outcomes, abs_grid);
  rec.pe_outcomes = std::move(eval.outcomes);
  return rec;
}

template <typename Fn>
void parallel_for(std::size_t n_jobs, std::size_t parallel, Fn&& fn) {
  if (parallel <= 1 || n_jobs <= 1) {
    for (std::size_t i = 0; i < n_jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  const std::size_t workers = std::min(parallel, n_jobs);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n_jobs; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

struct JobSlot {
  std::vector<RunRecord> records;
  std::vector<std::string> failures;
};

ExperimentResult collect(std::vector<JobSlot> slots) {
  ExperimentResult result;
  for (auto& slot : slots) {
    for (auto& r : slot.records) result.records.push_back(std::move(r));
    for (auto& f : slot.failures) result.failures.push_back(std::move(f));
  }
  return result;
}

void run_kinds_for_rep(const ExperimentConfig& cfg, const std::vector<ModelKind>& kinds,
                       double rate, std::size_t rep, const std::vector<double>& abs_grid,
                       bool rate_axis, JobSlot& slot) {
  SplitData data;
  try {
    data = build_data(cfg, cfg.base_seed + rep);
  } catch (const std::exception& e) {
    slot.failures.push_back("rep " + std::to_string(rep) + ": " + e.what());
    return;
  }
  for (ModelKind kind : kinds) {
    try {
      slot.records.push_back(run_single(cfg, kind, rate, rep, data, abs_grid, rate_axis));
    } catch (const std::exception& e) {
      std::string cell = rate_axis ? " rate " + format_double(rate) : "";
      slot.failures.push_back("rep " + std::to_string(rep) + cell + " " + to_string(kind) +
                              ": " + e.what());
    }
  }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t parallel) {
  validate(cfg);
  const std::vector<double> grid = absolute_grid(cfg);
  std::vector<JobSlot> slots(cfg.repetitions);
  parallel_for(cfg.repetitions, parallel, [&](std::size_t rep) {
    run_kinds_for_rep(cfg, {cfg.model}, cfg.dropout_p, rep, grid, false, slots[rep]);
  });
  return collect(std::move(slots));
}

ExperimentResult run_tau_sweep(const ExperimentConfig& cfg, std::size_t parallel) {
  validate(cfg);
  if (cfg.sweep != SweepAxis::tau) throw ConfigError("config sweep axis is not tau");
  const std::vector<double> grid = absolute_grid(cfg);
  std::vector<JobSlot> slots(cfg.repetitions);
  parallel_for(cfg.repetitions, parallel, [&](std::size_t rep) {
    run_kinds_for_rep(cfg, {ModelKind::cmc, ModelKind::mc}, cfg.dropout_p, rep, grid, false,
                      slots[rep]);
  });
  return collect(std::move(slots));
}

ExperimentResult run_rate_sweep(const ExperimentConfig& cfg, std::size_t parallel) {
  validate(cfg);
  if (cfg.sweep != SweepAxis::rate) throw ConfigError("config sweep axis is not rate");
  const std::vector<double> grid = absolute_grid(cfg);
  const std::size_t n_jobs = cfg.rate_grid.size() * cfg.repetitions;
  std::vector<JobSlot> slots(n_jobs);
  parallel_for(n_jobs, parallel, [&](std::size_t job) {
    const double rate = cfg.rate_grid[job / cfg.repetitions];
    const std::size_t rep = job % cfg.repetitions;
    run_kinds_for_rep(cfg, {ModelKind::cmc, ModelKind::mc}, rate, rep, grid, true, slots[job]);
  });
  return collect(std::move(slots));
}

}  // namespace cmcdrop
