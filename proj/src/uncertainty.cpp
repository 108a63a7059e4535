#include "cmcdrop/uncertainty.hpp"

#include <cmath>
#include <string>

#include "cmcdrop/errors.hpp"

namespace cmcdrop {

void UncertaintyCounts::add(Outcome o) {
  switch (o) {
    case Outcome::TC: ++tc; break;
    case Outcome::TU: ++tu; break;
    case Outcome::FC: ++fc; break;
    case Outcome::FU: ++fu; break;
  }
}

PredictiveSamples mc_predict(const NetworkParams& params, const Vector& input, Index t_samples,
                             Rng& rng) {
  if (t_samples < 1) throw ConfigError("mc_predict needs at least one sample");
  if (input.size() != params.input_dim()) {
    throw ConfigError("input dim " + std::to_string(input.size()) +
                      " does not match network input dim " +
                      std::to_string(params.input_dim()));
  }

  // T copies of the input with per-example masks is the same computation as
  // T independent stochastic passes, but runs as one gemm per layer.
  Matrix batch = input.transpose().replicate(t_samples, 1);
  ForwardTrace trace =
      forward(params, batch, ForwardMode::eval_mc, rng, MaskMode::per_example);
  const Matrix& out = trace.output();

  PredictiveSamples result;
  if (out.cols() == 1) {
    result.samples.resize(t_samples, 2);
    result.samples.col(0) = 1.0 - out.col(0).array();
    result.samples.col(1) = out.col(0);
  } else {
    result.samples = out;
  }
  return result;
}

MeanPrediction predictive_entropy(const PredictiveSamples& samples) {
  if (samples.t() < 1 || samples.class_count() < 2) {
    throw ConfigError("predictive entropy needs samples over at least two classes");
  }
  MeanPrediction pred;
  pred.mean_dist = samples.samples.colwise().mean().transpose();

  pred.predicted_class = 0;
  for (Index c = 1; c < pred.mean_dist.size(); ++c) {
    if (pred.mean_dist[c] > pred.mean_dist[pred.predicted_class]) pred.predicted_class = c;
  }

  double pe = 0.0;
  for (Index c = 0; c < pred.mean_dist.size(); ++c) {
    const double q = pred.mean_dist[c];
    if (q > 0.0) pe -= q * std::log(q);
  }
  pred.pe = pe;
  return pred;
}

Outcome classify_outcome(const MeanPrediction& pred, int label, double tau) {
  const bool correct = pred.predicted_class == static_cast<Index>(label);
  const bool certain = pred.pe < tau;
  if (correct) return certain ? Outcome::TC : Outcome::FU;
  return certain ? Outcome::FC : Outcome::TU;
}

UncertaintyMetrics compute_metrics(const UncertaintyCounts& counts) {
  if (counts.total() == 0) throw ConfigError("metrics over zero outcomes");
  UncertaintyMetrics m;
  const auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.u_sen = ratio(counts.tu, counts.tu + counts.fc);
  m.u_spec = ratio(counts.tc, counts.tc + counts.fu);
  m.u_prec = ratio(counts.tu, counts.tu + counts.fu);
  m.u_acc = ratio(counts.tu + counts.tc, counts.total());
  return m;
}

namespace {

void check_grid(const std::vector<double>& tau_grid) {
  if (tau_grid.empty()) throw ConfigError("empty threshold grid");
  for (std::size_t i = 1; i < tau_grid.size(); ++i) {
    if (!(tau_grid[i] > tau_grid[i - 1])) {
      throw ConfigError("threshold grid must be strictly ascending");
    }
  }
}

}  // namespace

std::vector<ThresholdRow> threshold_sweep(const std::vector<PeOutcome>& outcomes,
                                          const std::vector<double>& tau_grid) {
  check_grid(tau_grid);
  if (outcomes.empty()) throw ConfigError("threshold sweep over zero outcomes");

  std::vector<ThresholdRow> rows;
  rows.reserve(tau_grid.size());
  for (double tau : tau_grid) {
    ThresholdRow row;
    row.tau = tau;
    for (const auto& o : outcomes) {
      const bool certain = o.pe < tau;
      if (o.correct) {
        row.counts.add(certain ? Outcome::TC : Outcome::FU);
      } else {
        row.counts.add(certain ? Outcome::FC : Outcome::TU);
      }
    }
    row.metrics = compute_metrics(row.counts);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ThresholdRow> threshold_sweep(const std::vector<PredictiveSamples>& samples,
                                          const std::vector<int>& labels,
                                          const std::vector<double>& tau_grid) {
  if (samples.size() != labels.size()) {
    throw ConfigError("sample and label counts differ");
  }
  std::vector<PeOutcome> outcomes;
  outcomes.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const MeanPrediction pred = predictive_entropy(samples[i]);
    outcomes.push_back({pred.pe, pred.predicted_class == static_cast<Index>(labels[i])});
  }
  return threshold_sweep(outcomes, tau_grid);
}

}  // namespace cmcdrop
