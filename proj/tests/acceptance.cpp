// End-to-end acceptance gate. Each numbered check prints one [PASS]/[FAIL]
// line; the exit code is the number of failures. Run from the repository
// root so the bundled MNIST subset resolves.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmcdrop/datasets.hpp"
#include "cmcdrop/dropout.hpp"
#include "cmcdrop/errors.hpp"
#include "cmcdrop/experiment.hpp"
#include "cmcdrop/nn.hpp"
#include "cmcdrop/rng.hpp"
#include "cmcdrop/uncertainty.hpp"

using namespace cmcdrop;

namespace {

struct CheckFailure {
  std::string message;
};

void require(bool cond, const std::string& message) {
  if (!cond) throw CheckFailure{message};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- 1. mask bank properties ----------------------------------------------

std::string check_bank_properties() {
  const double p_values[] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  Rng rng(20250814);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t s = 1 + rng.uniform_index(12);
    const double p = p_values[rng.uniform_index(7)];
    const std::size_t cap = std::min<std::size_t>((std::size_t{1} << s) - 1, 64);
    const std::size_t n = 1 + rng.uniform_index(cap);
    const MaskBank bank = build_mask_bank(s, n, p, rng.next_u64());
    require(bank.n_sample() == n, "bank size mismatch");
    const double keep = 1.0 / (1.0 - p);
    std::set<std::vector<double>> seen;
    for (const auto& mask : bank.masks) {
      require(mask.size() == s, "mask length mismatch");
      bool any_kept = false;
      for (double e : mask.entries) {
        require(e == 0.0 || e == keep, "mask entry outside {0, 1/(1-p)}");
        any_kept |= e != 0.0;
      }
      require(any_kept, "all-zero mask in bank");
      seen.insert(mask.entries);
    }
    require(seen.size() == n, "duplicate masks in bank");
  }
  bool threw = false;
  try {
    build_mask_bank(2, 4, 0.3, 1);
  } catch (const ConfigError&) {
    threw = true;
  }
  require(threw, "infeasible bank (S=2, n=4) did not raise");
  return "1000 random banks valid, infeasible case raises";
}

// ---- 2. configuration counting ---------------------------------------------

std::string check_counting() {
  require(count_possible_masks(3) == 7, "count_possible_masks(3) != 7");
  BigInt bound = 1;
  for (int i = 0; i < 29; ++i) bound *= 10;
  require(count_possible_masks(100) > bound, "count_possible_masks(100) <= 1e29");

  std::vector<LayerSpec> specs(3);
  specs[0] = {2, 3, Activation::relu,
              DropoutAttachment{DropoutKind::controlled, 0.3, build_mask_bank(3, 2, 0.3, 11)}};
  specs[1] = {3, 3, Activation::relu,
              DropoutAttachment{DropoutKind::controlled, 0.3, build_mask_bank(3, 2, 0.3, 12)}};
  specs[2] = {3, 1, Activation::sigmoid, std::nullopt};
  const NetworkParams net = init_network(specs, 13);
  Matrix x(1, 2);
  x << 0.4, -0.2;
  Rng rng(14);
  std::set<std::vector<double>> joint;
  for (int i = 0; i < 10000; ++i) {
    const ForwardTrace trace = forward(net, x, ForwardMode::eval_mc, rng);
    std::vector<double> key;
    for (int l = 0; l < 2; ++l) {
      const Matrix& m = *trace.masks[l];
      key.insert(key.end(), m.data(), m.data() + m.size());
    }
    joint.insert(std::move(key));
  }
  require(joint.size() == 4,
          "expected exactly 4 joint mask configurations, saw " + std::to_string(joint.size()));
  return "7 masks for S=3, >1e29 for S=100, 4 joint configurations observed";
}

// ---- 3. finite-difference gradient check -----------------------------------

struct GradCase {
  std::vector<LayerSpec> specs;
  LossKind loss = LossKind::bce;
  MaskMode mode = MaskMode::per_batch;
  Matrix batch;
  std::vector<int> labels;
  std::uint64_t mask_seed = 0;
};

double loss_of(const GradCase& c, const NetworkParams& net) {
  Rng rng(c.mask_seed);  // identical mask stream on every evaluation
  const ForwardTrace trace = forward(net, c.batch, ForwardMode::train, rng, c.mode);
  return c.loss == LossKind::bce ? loss_bce(trace.output().col(0), c.labels)
                                 : loss_nll(trace.output(), c.labels);
}

double max_grad_error(const GradCase& c, NetworkParams net) {
  Rng rng(c.mask_seed);
  const ForwardTrace trace = forward(net, c.batch, ForwardMode::train, rng, c.mode);
  const GradientSet grads = backward(trace, net, c.labels, c.loss);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto probe = [&](double* param, double analytic) {
      const double saved = *param;
      *param = saved + h;
      const double up = loss_of(c, net);
      *param = saved - h;
      const double down = loss_of(c, net);
      *param = saved;
      const double fd = (up - down) / (2.0 * h);
      const double scale = std::max({1.0, std::abs(fd), std::abs(analytic)});
      worst = std::max(worst, std::abs(fd - analytic) / scale);
    };
    Matrix& w = net.layers[l].weight;
    for (Index i = 0; i < w.size(); ++i) probe(w.data() + i, grads.weight_grads[l](i));
    Vector& b = net.layers[l].bias;
    for (Index i = 0; i < b.size(); ++i) probe(b.data() + i, grads.bias_grads[l](i));
  }
  return worst;
}

GradCase random_case(Rng& rng, LossKind loss) {
  GradCase c;
  c.loss = loss;
  c.mode = rng.bernoulli(0.5) ? MaskMode::per_batch : MaskMode::per_example;
  c.mask_seed = rng.next_u64();
  const int n_layers = 1 + static_cast<int>(rng.uniform_index(3));
  const int classes = loss == LossKind::bce ? 2 : 2 + static_cast<int>(rng.uniform_index(3));
  Index in_dim = 2 + static_cast<Index>(rng.uniform_index(9));
  for (int l = 0; l < n_layers; ++l) {
    LayerSpec spec;
    spec.input_dim = in_dim;
    const bool final_layer = l == n_layers - 1;
    spec.output_dim =
        final_layer ? (loss == LossKind::bce ? 1 : classes) : 2 + static_cast<Index>(rng.uniform_index(9));
    spec.activation = final_layer
                          ? (loss == LossKind::bce ? Activation::sigmoid : Activation::softmax)
                          : Activation::relu;
    if (!final_layer) {
      const std::size_t choice = rng.uniform_index(3);
      if (choice == 1) {
        spec.dropout = DropoutAttachment{DropoutKind::traditional, 0.3, std::nullopt};
      } else if (choice == 2) {
        spec.dropout = DropoutAttachment{
            DropoutKind::controlled, 0.3,
            build_mask_bank(static_cast<std::size_t>(spec.output_dim), 3, 0.3, rng.next_u64())};
      }
    }
    c.specs.push_back(spec);
    in_dim = spec.output_dim;
  }
  const Index batch = 5;
  c.batch = Matrix(batch, c.specs.front().input_dim);
  for (Index i = 0; i < c.batch.size(); ++i) c.batch.data()[i] = rng.normal();
  for (Index i = 0; i < batch; ++i) c.labels.push_back(static_cast<int>(rng.uniform_index(classes)));
  return c;
}

// Central differences are only valid away from the loss's non-smooth
// points: relu kinks within h of zero and labeled probabilities inside the
// loss clamp. Draws violating either margin are rejected, not checked.
bool fd_compatible(const GradCase& c, const NetworkParams& net) {
  Rng rng(c.mask_seed);
  const ForwardTrace trace = forward(net, c.batch, ForwardMode::train, rng, c.mode);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (net.layers[l].spec.activation != Activation::relu) continue;
    if (trace.pre_activations[l].cwiseAbs().minCoeff() < 1e-3) return false;
  }
  const Matrix& out = trace.output();
  for (Index i = 0; i < out.rows(); ++i) {
    const int y = c.labels[static_cast<std::size_t>(i)];
    const double p = c.loss == LossKind::bce ? (y == 1 ? out(i, 0) : 1.0 - out(i, 0))
                                             : out(i, y);
    if (p < 1e-8) return false;
  }
  return true;
}

std::string check_gradients() {
  Rng rng(424243);
  double worst = 0.0;
  int checked = 0;
  while (checked < 20) {
    const GradCase c = random_case(rng, checked % 2 == 0 ? LossKind::bce : LossKind::nll);
    const NetworkParams net = init_network(c.specs, rng.next_u64());
    if (!fd_compatible(c, net)) continue;
    worst = std::max(worst, max_grad_error(c, net));
    require(worst < 1e-4,
            "gradient mismatch " + fmt(worst) + " on network " + std::to_string(checked));
    ++checked;
  }
  return "20 random networks, max relative error " + fmt(worst);
}

// ---- 4. predictive entropy values ------------------------------------------

std::string check_entropy() {
  PredictiveSamples onehot{Matrix::Zero(7, 5)};
  onehot.samples.col(2).setOnes();
  const MeanPrediction a = predictive_entropy(onehot);
  require(a.pe == 0.0, "one-hot PE nonzero: " + fmt(a.pe));
  require(a.predicted_class == 2, "one-hot argmax wrong");

  PredictiveSamples uniform{Matrix::Constant(3, 6, 1.0 / 6.0)};
  const MeanPrediction b = predictive_entropy(uniform);
  require(std::abs(b.pe - std::log(6.0)) <= 1e-12, "uniform PE != ln C: " + fmt(b.pe));

  PredictiveSamples binary{Matrix(2, 2)};
  binary.samples << 1.0, 0.0, 0.4, 0.6;
  const MeanPrediction d = predictive_entropy(binary);
  require(std::abs(d.pe - 0.610864) <= 1e-6, "two-sample binary PE off: " + fmt(d.pe));
  return "one-hot 0, uniform ln C, mixed binary 0.610864";
}

// ---- 5. metric endpoints and monotonicity -----------------------------------

std::string check_metric_sweeps() {
  Rng rng(99881);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 5 + rng.uniform_index(56);
    std::vector<PeOutcome> outcomes;
    double max_pe = 0.0;
    bool any_wrong = false, any_right = false;
    for (std::size_t i = 0; i < n; ++i) {
      PeOutcome o;
      o.pe = rng.uniform01() * std::log(4.0);
      o.correct = rng.bernoulli(0.6);
      max_pe = std::max(max_pe, o.pe);
      (o.correct ? any_right : any_wrong) = true;
      outcomes.push_back(o);
    }
    std::vector<double> grid{0.0};
    for (int g = 0; g < 6; ++g) grid.push_back(rng.uniform01() * std::log(4.0));
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    grid.push_back(max_pe + 1.0);

    const std::vector<ThresholdRow> rows = threshold_sweep(outcomes, grid);
    for (const auto& row : rows) require(row.counts.total() == n, "counts do not partition");
    if (any_wrong) {
      require(rows.front().metrics.u_sen == 1.0, "u_sen != 1 below all pe");
      require(rows.back().metrics.u_sen == 0.0, "u_sen != 0 above all pe");
    }
    if (any_right) {
      require(rows.front().metrics.u_spec == 0.0, "u_spec != 0 below all pe");
      require(rows.back().metrics.u_spec == 1.0, "u_spec != 1 above all pe");
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i - 1].metrics.u_spec && rows[i].metrics.u_spec) {
        require(*rows[i].metrics.u_spec >= *rows[i - 1].metrics.u_spec, "u_spec decreased");
      }
      if (rows[i - 1].metrics.u_sen && rows[i].metrics.u_sen) {
        require(*rows[i].metrics.u_sen <= *rows[i - 1].metrics.u_sen, "u_sen increased");
      }
    }
  }
  return "100 random sample sets: endpoints, monotonicity, partition";
}

// ---- 6. uniform mask sampling ------------------------------------------------

std::string check_uniform_sampling() {
  const MaskBank bank = build_mask_bank(10, 10, 0.3, 5150);
  Rng rng(5151);
  std::vector<std::size_t> counts(10, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const DropoutMask& m = sample_mask(bank, rng);
    counts[static_cast<std::size_t>(&m - bank.masks.data())]++;
  }
  const double expected = draws / 10.0;
  double chi2 = 0.0;
  for (std::size_t c : counts) {
    const double d = static_cast<double>(c) - expected;
    chi2 += d * d / expected;
  }
  // chi-square critical value, 9 degrees of freedom, significance 0.001
  require(chi2 < 27.877164871256568, "chi-square statistic " + fmt(chi2));
  return "chi-square " + fmt(chi2) + " < 27.877 over 1e5 draws";
}

// ---- 7-10. end-to-end sweeps --------------------------------------------------

struct SweepArtifacts {
  ExperimentConfig cfg;
  ExperimentResult result;
  std::filesystem::path dir;
};

SweepArtifacts run_preset_sweep(const std::string& preset, std::size_t reps,
                                const std::filesystem::path& dir) {
  SweepArtifacts a;
  a.cfg = preset_config(preset);
  if (reps != 0) a.cfg.repetitions = reps;
  validate(a.cfg);
  a.result = run_tau_sweep(a.cfg);
  for (const auto& f : a.result.failures) {
    throw CheckFailure{"sweep run failed: " + f};
  }
  const SweepResult sweep = aggregate(a.result.records, a.cfg.sweep, a.cfg.tau_grid);
  std::filesystem::remove_all(dir);
  emit_outputs(a.cfg, sweep, a.result.records, dir.string());
  a.dir = dir;
  return a;
}

std::string accuracy_summary(const ExperimentResult& result, ModelKind kind, double floor,
                             std::size_t min_pass, std::size_t expected_runs) {
  std::size_t runs = 0, passed = 0;
  double lo = 1.0;
  for (const auto& rec : result.records) {
    if (rec.kind != kind) continue;
    ++runs;
    lo = std::min(lo, rec.test_accuracy);
    if (rec.test_accuracy >= floor) ++passed;
  }
  require(runs == expected_runs, to_string(kind) + ": expected " + std::to_string(expected_runs) +
                                     " runs, got " + std::to_string(runs));
  require(passed >= min_pass, to_string(kind) + ": only " + std::to_string(passed) + "/" +
                                  std::to_string(runs) + " runs reached accuracy " + fmt(floor) +
                                  " (min " + fmt(lo) + ")");
  return to_string(kind) + " " + std::to_string(passed) + "/" + std::to_string(runs) +
         " >= " + fmt(floor) + " (min " + fmt(lo) + ")";
}

std::string check_moons_end_to_end(const SweepArtifacts& moons) {
  const std::string cmc = accuracy_summary(moons.result, ModelKind::cmc, 0.85, 18, 20);
  const std::string mc = accuracy_summary(moons.result, ModelKind::mc, 0.85, 18, 20);
  return cmc + "; " + mc;
}

std::string pe_separation(const ExperimentResult& result, ModelKind kind) {
  double pe_wrong = 0.0, pe_right = 0.0;
  std::size_t n_wrong = 0, n_right = 0;
  for (const auto& rec : result.records) {
    if (rec.kind != kind) continue;
    for (const auto& o : rec.pe_outcomes) {
      (o.correct ? pe_right : pe_wrong) += o.pe;
      (o.correct ? n_right : n_wrong) += 1;
    }
  }
  require(n_wrong > 0 && n_right > 0, to_string(kind) + ": degenerate outcome split");
  const double mean_wrong = pe_wrong / static_cast<double>(n_wrong);
  const double mean_right = pe_right / static_cast<double>(n_right);
  require(mean_wrong > mean_right,
          to_string(kind) + ": misclassified mean PE " + fmt(mean_wrong) +
              " not above correct mean PE " + fmt(mean_right));
  return to_string(kind) + " PE " + fmt(mean_wrong) + " > " + fmt(mean_right);
}

std::string check_mnist_end_to_end(const std::filesystem::path& tmp) {
  require(std::filesystem::exists("data/mnist10k/images-idx3-ubyte"),
          "bundled MNIST subset not found (run from the repository root)");
  const SweepArtifacts mnist = run_preset_sweep("mnist10k-tau-sweep", 3, tmp / "mnist");
  // floor derived from the no-dropout baseline at this data scale (8k train
  // examples reach ~0.92-0.93; the full-MNIST preset targets higher)
  const std::string cmc_acc = accuracy_summary(mnist.result, ModelKind::cmc, 0.90, 3, 3);
  const std::string mc_acc = accuracy_summary(mnist.result, ModelKind::mc, 0.90, 3, 3);
  const std::string cmc_pe = pe_separation(mnist.result, ModelKind::cmc);
  const std::string mc_pe = pe_separation(mnist.result, ModelKind::mc);
  return cmc_acc + "; " + mc_acc + "; " + cmc_pe + "; " + mc_pe;
}

std::string check_determinism(const SweepArtifacts& first, const std::filesystem::path& tmp) {
  const SweepArtifacts second = run_preset_sweep(first.cfg.name, 0, tmp / "moons_rerun");
  for (const char* file : {"metrics.csv", "pe_histogram.csv", "runs.csv"}) {
    require(read_file(first.dir / file) == read_file(second.dir / file),
            std::string(file) + " differs between identical runs");
  }
  return "metrics.csv, pe_histogram.csv, runs.csv byte-identical on rerun";
}

std::string check_report(const SweepArtifacts& moons) {
  const std::string path = write_report(moons.dir.string());
  const std::string report = read_file(path);
  for (const char* section : {"## u_acc", "## u_sen", "## u_spec", "## u_prec"}) {
    require(report.find(section) != std::string::npos,
            std::string("report missing section ") + section);
  }
  const auto pos = report.find("Lower-half precision comparison");
  require(pos != std::string::npos, "report missing lower-half precision comparison");
  const auto line_end = report.find('\n', report.find("CMC mean u_prec", pos));
  const auto line_start = report.rfind('\n', report.find("CMC mean u_prec", pos)) + 1;
  return report.substr(line_start, line_end - line_start);
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  const std::filesystem::path tmp =
      std::filesystem::temp_directory_path() / "cmcdrop_acceptance";
  std::filesystem::remove_all(tmp);
  std::filesystem::create_directories(tmp);

  int failures = 0;
  SweepArtifacts moons;  // shared by checks 7, 9 and 10
  bool moons_ready = false;

  const auto run_check = [&](int number, const std::string& name,
                             const std::function<std::string()>& body,
                             double budget_seconds = 0.0) {
    const auto start = clock::now();
    std::string detail;
    bool ok = true;
    try {
      detail = body();
    } catch (const CheckFailure& f) {
      ok = false;
      detail = f.message;
    } catch (const std::exception& e) {
      ok = false;
      detail = e.what();
    }
    const double seconds = std::chrono::duration<double>(clock::now() - start).count();
    if (ok && budget_seconds > 0.0 && seconds > budget_seconds) {
      ok = false;
      detail = "exceeded " + fmt(budget_seconds) + "s budget";
    }
    std::printf("[%s] %2d. %s: %s [%.1fs]\n", ok ? "PASS" : "FAIL", number, name.c_str(),
                detail.c_str(), seconds);
    std::fflush(stdout);
    if (!ok) ++failures;
  };

  run_check(1, "mask bank properties", check_bank_properties, 10.0);
  run_check(2, "mask configuration counting", check_counting);
  run_check(3, "backprop vs central finite differences", check_gradients, 30.0);
  run_check(4, "predictive entropy reference values", check_entropy);
  run_check(5, "uncertainty metric endpoints and monotonicity", check_metric_sweeps);
  run_check(6, "uniform sampling from the mask bank", check_uniform_sampling);
  run_check(7, "two-moons end-to-end sweep (R=20, T=100)", [&] {
    moons = run_preset_sweep("moons-tau-sweep", 0, tmp / "moons");
    moons_ready = true;
    return check_moons_end_to_end(moons);
  });
  run_check(8, "MNIST subset end-to-end sweep (R=3)",
            [&] { return check_mnist_end_to_end(tmp); });
  run_check(9, "byte-identical rerun of the two-moons preset", [&] {
    require(moons_ready, "skipped: two-moons sweep unavailable");
    return check_determinism(moons, tmp);
  });
  run_check(10, "sweep report with lower-half precision flag", [&] {
    require(moons_ready, "skipped: two-moons sweep unavailable");
    return check_report(moons);
  });

  std::printf("%d/10 checks passed\n", 10 - failures);
  return failures;
}
