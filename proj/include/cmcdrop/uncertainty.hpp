#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cmcdrop/matrix.hpp"
#include "cmcdrop/nn.hpp"

namespace cmcdrop {

// T stochastic forward passes for one input; each row is a class
// probability distribution.
struct PredictiveSamples {
  Matrix samples;  // T x C

  Index t() const { return samples.rows(); }
  Index class_count() const { return samples.cols(); }
};

struct MeanPrediction {
  Vector mean_dist;        // per-class average over the T samples
  Index predicted_class;   // argmax, ties broken by lowest index
  double pe;               // predictive entropy, nats
};

enum class Outcome { TC, TU, FC, FU };

struct UncertaintyCounts {
  std::size_t tc = 0, tu = 0, fc = 0, fu = 0;

  std::size_t total() const { return tc + tu + fc + fu; }
  void add(Outcome o);
};

// Undefined metrics (zero denominator) are left unset.
struct UncertaintyMetrics {
  std::optional<double> u_sen, u_spec, u_prec, u_acc;
};

// T forward passes in eval_mc mode on a single input; for a 1-unit sigmoid
// head the row is expanded to the two-class distribution [1-p, p].
PredictiveSamples mc_predict(const NetworkParams& params, const Vector& input, Index t_samples,
                             Rng& rng);

MeanPrediction predictive_entropy(const PredictiveSamples& samples);

// Certain iff pe < tau (strict); ties count as uncertain.
Outcome classify_outcome(const MeanPrediction& pred, int label, double tau);

// u_sen = TU/(TU+FC), u_spec = TC/(TC+FU), u_prec = TU/(TU+FU),
// u_acc = (TU+TC)/total. Throws ConfigError on all-zero counts.
UncertaintyMetrics compute_metrics(const UncertaintyCounts& counts);

struct ThresholdRow {
  double tau = 0.0;
  UncertaintyCounts counts;
  UncertaintyMetrics metrics;
};

// Per-input evaluation already reduced to (pe, correct).
struct PeOutcome {
  double pe = 0.0;
  bool correct = false;
};

std::vector<ThresholdRow> threshold_sweep(const std::vector<PeOutcome>& outcomes,
                                          const std::vector<double>& tau_grid);

std::vector<ThresholdRow> threshold_sweep(const std::vector<PredictiveSamples>& samples,
                                          const std::vector<int>& labels,
                                          const std::vector<double>& tau_grid);

}  // namespace cmcdrop
