#include <cmath>
#include <set>
#include <vector>

#include "cmcdrop/errors.hpp"
#include "cmcdrop/uncertainty.hpp"
#include "doctest.h"

using namespace cmcdrop;

namespace {

NetworkParams controlled_net(std::size_t bank_size) {
  DropoutAttachment att;
  att.kind = DropoutKind::controlled;
  att.p = 0.5;
  att.bank = build_mask_bank(3, bank_size, 0.5, 77);
  std::vector<LayerSpec> specs = {{2, 3, Activation::relu, att},
                                  {3, 3, Activation::relu, att},
                                  {3, 1, Activation::sigmoid, std::nullopt}};
  specs[1].dropout->bank = build_mask_bank(3, bank_size, 0.5, 78);
  return init_network(specs, 11);
}

PredictiveSamples from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  PredictiveSamples s;
  s.samples.resize(static_cast<Index>(rows.size()),
                   static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& row : rows) {
    Index j = 0;
    for (double v : row) s.samples(i, j++) = v;
    ++i;
  }
  return s;
}

}  // namespace

TEST_CASE("mc_predict without dropout is constant") {
  const NetworkParams net = init_network({{2, 4, Activation::relu, std::nullopt},
                                          {4, 1, Activation::sigmoid, std::nullopt}},
                                         3);
  Rng rng(1);
  Vector x(2);
  x << 0.2, -0.4;
  const PredictiveSamples s = mc_predict(net, x, 5, rng);
  CHECK(s.t() == 5);
  CHECK(s.class_count() == 2);
  for (Index t = 1; t < 5; ++t) CHECK(s.samples.row(t) == s.samples.row(0));
  for (Index t = 0; t < 5; ++t) {
    CHECK(s.samples.row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("two 2-mask banks admit at most four output rows") {
  const NetworkParams net = controlled_net(2);
  Rng rng(5);
  Vector x(2);
  x << 1.0, 1.0;
  const PredictiveSamples s = mc_predict(net, x, 400, rng);
  std::set<double> distinct;
  for (Index t = 0; t < s.t(); ++t) distinct.insert(s.samples(t, 1));
  CHECK(distinct.size() <= 4);
}

TEST_CASE("mc_predict validates its arguments") {
  const NetworkParams net = init_network({{2, 1, Activation::sigmoid, std::nullopt}}, 1);
  Rng rng(1);
  Vector x(2);
  x << 0.0, 0.0;
  CHECK_THROWS_AS(mc_predict(net, x, 0, rng), ConfigError);
  Vector bad(3);
  bad << 0.0, 0.0, 0.0;
  CHECK_THROWS_AS(mc_predict(net, bad, 3, rng), ConfigError);
}

TEST_CASE("predictive entropy endpoints and a worked case") {
  const PredictiveSamples onehot = from_rows({{0.0, 0.0, 1.0}, {0.0, 0.0, 1.0}});
  const MeanPrediction certain = predictive_entropy(onehot);
  CHECK(certain.pe == 0.0);
  CHECK(certain.predicted_class == 2);

  const PredictiveSamples uniform = from_rows({{0.25, 0.25, 0.25, 0.25}});
  CHECK(predictive_entropy(uniform).pe ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  const PredictiveSamples mixed = from_rows({{0.9, 0.1}, {0.5, 0.5}});
  const MeanPrediction pred = predictive_entropy(mixed);
  CHECK(pred.mean_dist[0] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(pred.pe == doctest::Approx(0.610864302054893463).epsilon(1e-9));
  CHECK(pred.predicted_class == 0);

  const PredictiveSamples tied = from_rows({{0.5, 0.5}});
  CHECK(predictive_entropy(tied).predicted_class == 0);  // lowest index wins ties
}

TEST_CASE("outcome taxonomy and the tie rule") {
  MeanPrediction pred;
  pred.predicted_class = 1;

  pred.pe = 0.1;
  CHECK(classify_outcome(pred, 1, 0.5) == Outcome::TC);
  CHECK(classify_outcome(pred, 0, 0.5) == Outcome::FC);
  pred.pe = 0.6;
  CHECK(classify_outcome(pred, 1, 0.5) == Outcome::FU);
  CHECK(classify_outcome(pred, 0, 0.5) == Outcome::TU);
  pred.pe = 0.5;
  CHECK(classify_outcome(pred, 1, 0.5) == Outcome::FU);  // pe == tau is uncertain
}

TEST_CASE("metrics match hand arithmetic with undefined sentinels") {
  UncertaintyCounts counts{70, 10, 5, 15};
  const UncertaintyMetrics m = compute_metrics(counts);
  CHECK(*m.u_acc == doctest::Approx(0.80).epsilon(1e-12));
  CHECK(*m.u_sen == doctest::Approx(10.0 / 15.0).epsilon(1e-12));
  CHECK(*m.u_spec == doctest::Approx(70.0 / 85.0).epsilon(1e-12));
  CHECK(*m.u_prec == doctest::Approx(0.40).epsilon(1e-12));

  const UncertaintyMetrics only_tc = compute_metrics({10, 0, 0, 0});
  CHECK(*only_tc.u_acc == 1.0);
  CHECK(*only_tc.u_spec == 1.0);
  CHECK_FALSE(only_tc.u_sen.has_value());
  CHECK_FALSE(only_tc.u_prec.has_value());

  CHECK_THROWS_AS(compute_metrics({0, 0, 0, 0}), ConfigError);
}

TEST_CASE("threshold sweep endpoints, partition and monotonicity") {
  Rng rng(404);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 20 + rng.uniform_index(80);
    std::vector<PeOutcome> outcomes(n);
    bool any_wrong = false;
    for (auto& o : outcomes) {
      o.pe = 0.01 + 0.6 * rng.uniform01();
      o.correct = rng.bernoulli(0.8);
      any_wrong = any_wrong || !o.correct;
    }
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(0.7 * i / 20.0);
    const auto rows = threshold_sweep(outcomes, grid);
    REQUIRE(rows.size() == grid.size());

    for (const auto& row : rows) CHECK(row.counts.total() == n);
    // tau = 0 below every pe: everything uncertain
    CHECK(*rows.front().metrics.u_spec == 0.0);
    if (any_wrong) CHECK(*rows.front().metrics.u_sen == 1.0);
    // tau above every pe: everything certain
    CHECK(*rows.back().metrics.u_spec == 1.0);
    if (any_wrong) CHECK(*rows.back().metrics.u_sen == 0.0);

    for (std::size_t i = 1; i < rows.size(); ++i) {
      CHECK(*rows[i].metrics.u_spec >= *rows[i - 1].metrics.u_spec);
      if (rows[i].metrics.u_sen && rows[i - 1].metrics.u_sen) {
        CHECK(*rows[i].metrics.u_sen <= *rows[i - 1].metrics.u_sen);
      }
      CHECK(rows[i].counts.tc >= rows[i - 1].counts.tc);
      CHECK(rows[i].counts.fc >= rows[i - 1].counts.fc);
      CHECK(rows[i].counts.tu <= rows[i - 1].counts.tu);
      CHECK(rows[i].counts.fu <= rows[i - 1].counts.fu);
    }
  }
}

TEST_CASE("sample-based sweep agrees with reduced outcomes") {
  std::vector<PredictiveSamples> samples;
  samples.push_back(from_rows({{0.9, 0.1}, {0.8, 0.2}}));
  samples.push_back(from_rows({{0.4, 0.6}, {0.6, 0.4}}));
  samples.push_back(from_rows({{0.1, 0.9}, {0.3, 0.7}}));
  const std::vector<int> labels = {0, 1, 0};

  std::vector<PeOutcome> reduced;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const MeanPrediction p = predictive_entropy(samples[i]);
    reduced.push_back({p.pe, p.predicted_class == static_cast<Index>(labels[i])});
  }

  const std::vector<double> grid = {0.0, 0.3, 0.6, 0.7};
  const auto a = threshold_sweep(samples, labels, grid);
  const auto b = threshold_sweep(reduced, grid);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].counts.tc == b[i].counts.tc);
    CHECK(a[i].counts.tu == b[i].counts.tu);
    CHECK(a[i].counts.fc == b[i].counts.fc);
    CHECK(a[i].counts.fu == b[i].counts.fu);
  }

  CHECK_THROWS_AS(threshold_sweep(reduced, {}), ConfigError);
  CHECK_THROWS_AS(threshold_sweep(reduced, {0.5, 0.4}), ConfigError);
  CHECK_THROWS_AS(threshold_sweep(std::vector<PeOutcome>{}, grid), ConfigError);
  CHECK_THROWS_AS(threshold_sweep(samples, {0, 1}, grid), ConfigError);
}
