#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cmcdrop/errors.hpp"
#include "cmcdrop/experiment.hpp"
#include "cmcdrop/format.hpp"

namespace cmcdrop {

using ordered_json = nlohmann::ordered_json;

namespace {

MetricAgg aggregate_metric(const std::vector<std::optional<double>>& values) {
  MetricAgg agg;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++agg.n_defined;
    } else {
      ++agg.n_undefined;
    }
  }
  if (agg.n_defined == 0) return agg;
  const double mean = sum / static_cast<double>(agg.n_defined);
  agg.mean = mean;
  if (agg.n_defined == 1) {
    agg.stddev = 0.0;
  } else {
    double ss = 0.0;
    for (const auto& v : values) {
      if (v) ss += (*v - mean) * (*v - mean);
    }
    agg.stddev = std::sqrt(ss / static_cast<double>(agg.n_defined - 1));
  }
  return agg;
}

}  // namespace

SweepResult aggregate(const std::vector<RunRecord>& records, SweepAxis axis,
                      const std::vector<double>& grid) {
  if (records.empty()) throw ConfigError("aggregate needs at least one record");
  if (grid.empty()) throw ConfigError("aggregate needs a non-empty grid");
  if (axis == SweepAxis::tau) {
    for (const auto& rec : records) {
      if (rec.per_tau.size() != grid.size()) {
        throw ConfigError("record " + rec.run_id + " does not cover the threshold grid");
      }
    }
  }

  SweepResult result;
  result.axis = axis;
  result.grid = grid;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    for (ModelKind kind : {ModelKind::cmc, ModelKind::mc}) {
      std::vector<std::optional<double>> acc, sen, spec, prec;
      for (const auto& rec : records) {
        if (rec.kind != kind) continue;
        if (axis == SweepAxis::rate && rec.grid_value != grid[gi]) continue;
        const UncertaintyMetrics& m =
            axis == SweepAxis::tau ? rec.per_tau[gi].metrics : rec.per_tau.front().metrics;
        acc.push_back(m.u_acc);
        sen.push_back(m.u_sen);
        spec.push_back(m.u_spec);
        prec.push_back(m.u_prec);
      }
      if (acc.empty()) continue;
      SweepRow row;
      row.grid_value = grid[gi];
      row.kind = kind;
      row.u_acc = aggregate_metric(acc);
      row.u_sen = aggregate_metric(sen);
      row.u_spec = aggregate_metric(spec);
      row.u_prec = aggregate_metric(prec);
      result.rows.push_back(std::move(row));
    }
  }
  if (result.rows.empty()) throw ConfigError("no records matched the grid");
  return result;
}

namespace {

std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

void write_metrics_csv(const SweepResult& sweep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "grid,model,u_acc_mean,u_acc_std,u_sen_mean,u_sen_std,u_spec_mean,u_spec_std,"
         "u_prec_mean,u_prec_std,n_undefined\n";
  for (const auto& row : sweep.rows) {
    out << format_double(row.grid_value) << "," << to_string(row.kind) << ","
        << opt_field(row.u_acc.mean) << "," << opt_field(row.u_acc.stddev) << ","
        << opt_field(row.u_sen.mean) << "," << opt_field(row.u_sen.stddev) << ","
        << opt_field(row.u_spec.mean) << "," << opt_field(row.u_spec.stddev) << ","
        << opt_field(row.u_prec.mean) << "," << opt_field(row.u_prec.stddev) << ","
        << row.n_undefined_total() << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

void write_pe_histogram_csv(const ExperimentConfig& cfg, const std::vector<RunRecord>& records,
                            const std::string& path) {
  constexpr std::size_t kBins = 50;
  const double pe_max = std::log(static_cast<double>(cfg.class_count()));
  const double width = pe_max / static_cast<double>(kBins);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "model,correct,bin,bin_left,bin_right,count,density\n";
  for (ModelKind kind : {ModelKind::cmc, ModelKind::mc}) {
    bool any = false;
    for (const auto& rec : records) any = any || rec.kind == kind;
    if (!any) continue;
    for (int correct = 1; correct >= 0; --correct) {
      std::vector<std::size_t> counts(kBins, 0);
      std::size_t total = 0;
      for (const auto& rec : records) {
        if (rec.kind != kind) continue;
        for (const auto& o : rec.pe_outcomes) {
          if (o.correct != (correct == 1)) continue;
          const auto bin = std::min(
              kBins - 1, static_cast<std::size_t>(std::max(0.0, o.pe / width)));
          ++counts[bin];
          ++total;
        }
      }
      for (std::size_t b = 0; b < kBins; ++b) {
        const double density =
            total == 0 ? 0.0
                       : static_cast<double>(counts[b]) /
                             (static_cast<double>(total) * width);
        out << to_string(kind) << "," << correct << "," << b << ","
            << format_double(width * static_cast<double>(b)) << ","
            << format_double(width * static_cast<double>(b + 1)) << "," << counts[b] << ","
            << format_double(density) << "\n";
      }
    }
  }
  if (!out) throw IoError("failed writing " + path);
}

void write_runs_csv(const std::vector<RunRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "run_id,seed,model,grid_value,best_epoch,best_val_loss,test_accuracy,n_test\n";
  for (const auto& rec : records) {
    out << rec.run_id << "," << rec.seed << "," << to_string(rec.kind) << ","
        << format_double(rec.grid_value) << "," << rec.best_epoch << ","
        << format_double(rec.best_val_loss) << "," << format_double(rec.test_accuracy) << ","
        << rec.pe_outcomes.size() << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

void write_manifest(const ExperimentConfig& cfg, const SweepResult& sweep,
                    std::size_t record_count, const std::string& path) {
  ordered_json manifest;
  manifest["config"] = ordered_json::parse(config_to_json(cfg));
  ordered_json meta;
  meta["axis"] = sweep.axis == SweepAxis::tau ? "tau" : "rate";
  meta["grid"] = sweep.grid;
  meta["record_count"] = record_count;
  meta["format_version"] = 1;
  manifest["meta"] = meta;

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace

std::vector<std::string> emit_outputs(const ExperimentConfig& cfg, const SweepResult& sweep,
                                      const std::vector<RunRecord>& records,
                                      const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  const std::string metrics = out_dir + "/metrics.csv";
  const std::string histogram = out_dir + "/pe_histogram.csv";
  const std::string runs = out_dir + "/runs.csv";
  const std::string manifest = out_dir + "/manifest.json";
  write_metrics_csv(sweep, metrics);
  write_pe_histogram_csv(cfg, records, histogram);
  write_runs_csv(records, runs);
  write_manifest(cfg, sweep, records.size(), manifest);
  return {metrics, histogram, runs, manifest};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

struct MetricsRow {
  std::optional<double> mean[4];  // u_acc, u_sen, u_spec, u_prec
};

std::string fmt_cell(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream ss;
  ss.precision(4);
  ss << std::fixed << *v;
  return ss.str();
}

}  // namespace

std::string write_report(const std::string& sweep_dir) {
  std::ifstream mf(sweep_dir + "/manifest.json");
  if (!mf) throw IoError("cannot open " + sweep_dir + "/manifest.json");
  ordered_json manifest;
  try {
    mf >> manifest;
  } catch (const std::exception& e) {
    throw IoError(std::string("invalid manifest: ") + e.what());
  }
  const ExperimentConfig cfg = config_from_json(manifest["config"].dump());
  const std::string axis = manifest["meta"]["axis"].get<std::string>();
  const std::vector<double> grid = manifest["meta"]["grid"].get<std::vector<double>>();

  std::ifstream csv(sweep_dir + "/metrics.csv");
  if (!csv) throw IoError("cannot open " + sweep_dir + "/metrics.csv");
  std::string line;
  if (!std::getline(csv, line)) throw IoError("empty metrics.csv");

  // (grid string, model) -> metric means, preserving the file's grid order.
  std::vector<std::string> grid_order;
  std::map<std::pair<std::string, std::string>, MetricsRow> cells;
  while (std::getline(csv, line)) {
    const auto f = split_csv_line(line);
    if (f.size() < 11) throw IoError("malformed metrics.csv row: " + line);
    if (grid_order.empty() || grid_order.back() != f[0]) {
      if (std::find(grid_order.begin(), grid_order.end(), f[0]) == grid_order.end()) {
        grid_order.push_back(f[0]);
      }
    }
    MetricsRow row;
    const std::size_t mean_cols[4] = {2, 4, 6, 8};
    for (int m = 0; m < 4; ++m) {
      const std::string& cell = f[mean_cols[m]];
      if (!cell.empty()) row.mean[m] = std::stod(cell);
    }
    cells[{f[0], f[1]}] = row;
  }

  const char* metric_names[4] = {"u_acc", "u_sen", "u_spec", "u_prec"};
  std::ostringstream md;
  md << "# Sweep report: " << cfg.name << "\n\n";
  md << "- dataset: " << to_string(cfg.dataset) << "\n";
  md << "- axis: " << axis << " (" << grid.size() << " grid cells)\n";
  md << "- repetitions: " << cfg.repetitions << ", T = " << cfg.t_samples << "\n";
  md << "- mask mode: "
     << (cfg.mask_mode == MaskMode::per_batch ? "per_batch" : "per_example") << "\n";
  if (axis == "tau") {
    md << "- threshold unit: "
       << (cfg.tau_unit == TauUnit::fraction ? "fraction of ln(classes)" : "absolute nats")
       << "\n";
  } else {
    md << "- fixed tau: " << format_double(cfg.fixed_tau) << "\n";
  }
  md << "\nMean metric per grid cell (over defined repetitions; '-' = undefined in all "
        "repetitions).\n";

  for (int m = 0; m < 4; ++m) {
    md << "\n## " << metric_names[m] << "\n\n";
    md << "| " << axis << " | cmc | mc |\n|---|---|---|\n";
    for (const auto& g : grid_order) {
      const auto cmc = cells.find({g, "cmc"});
      const auto mc = cells.find({g, "mc"});
      md << "| " << g << " | "
         << (cmc != cells.end() ? fmt_cell(cmc->second.mean[m]) : "-") << " | "
         << (mc != cells.end() ? fmt_cell(mc->second.mean[m]) : "-") << " |\n";
    }
  }

  // Lower-half precision comparison: cells up to the grid midpoint where
  // both models have a defined mean.
  std::size_t comparable = 0, cmc_ahead = 0;
  const std::size_t lower_half = (grid_order.size() + 1) / 2;
  for (std::size_t gi = 0; gi < lower_half; ++gi) {
    const auto cmc = cells.find({grid_order[gi], "cmc"});
    const auto mc = cells.find({grid_order[gi], "mc"});
    if (cmc == cells.end() || mc == cells.end()) continue;
    if (!cmc->second.mean[3] || !mc->second.mean[3]) continue;
    ++comparable;
    if (*cmc->second.mean[3] >= *mc->second.mean[3] - 1e-12) ++cmc_ahead;
  }
  md << "\n## Lower-half precision comparison\n\n";
  if (comparable == 0) {
    md << "No grid cells in the lower half had u_prec defined for both models.\n";
  } else {
    md << "CMC mean u_prec >= MC mean u_prec in " << cmc_ahead << " of " << comparable
       << " comparable cells over the lower half of the grid: "
       << (cmc_ahead == comparable ? "yes" : "no") << ".\n";
  }

  const std::string path = sweep_dir + "/report.md";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << md.str();
  if (!out) throw IoError("failed writing " + path);
  return path;
}

namespace {

ordered_json matrix_to_json(const Matrix& m) {
  ordered_json rows = ordered_json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const ordered_json& j, Index rows, Index cols,
                        const std::string& what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) {
    throw IoError("bad " + what + " row count");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw IoError("bad " + what + " column count");
    }
    for (Index jj = 0; jj < cols; ++jj) {
      m(i, jj) = row[static_cast<std::size_t>(jj)].get<double>();
    }
  }
  return m;
}

}  // namespace

std::string model_to_json(const NetworkParams& params) {
  ordered_json j;
  ordered_json layers = ordered_json::array();
  for (const auto& layer : params.layers) {
    ordered_json l;
    l["input_dim"] = layer.spec.input_dim;
    l["output_dim"] = layer.spec.output_dim;
    l["activation"] = to_string(layer.spec.activation);
    if (layer.spec.dropout) {
      ordered_json d;
      const auto& att = *layer.spec.dropout;
      d["kind"] = att.kind == DropoutKind::traditional ? "traditional" : "controlled";
      d["p"] = att.p;
      if (att.bank) {
        d["bank"] = ordered_json::parse(bank_to_json(*att.bank));
      } else {
        d["bank"] = nullptr;
      }
      l["dropout"] = std::move(d);
    } else {
      l["dropout"] = nullptr;
    }
    l["weight"] = matrix_to_json(layer.weight);
    ordered_json bias = ordered_json::array();
    for (Index i = 0; i < layer.bias.size(); ++i) bias.push_back(layer.bias[i]);
    l["bias"] = std::move(bias);
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  return j.dump(2);
}

NetworkParams model_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw IoError(std::string("invalid model JSON: ") + e.what());
  }
  if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].empty()) {
    throw IoError("model JSON needs a non-empty layers array");
  }

  NetworkParams params;
  Index prev_out = -1;
  for (const auto& l : j["layers"]) {
    Layer layer;
    try {
      layer.spec.input_dim = l.at("input_dim").get<Index>();
      layer.spec.output_dim = l.at("output_dim").get<Index>();
      layer.spec.activation = activation_from_string(l.at("activation").get<std::string>());
      if (!l.at("dropout").is_null()) {
        const auto& d = l.at("dropout");
        DropoutAttachment att;
        const std::string kind = d.at("kind").get<std::string>();
        if (kind == "traditional") {
          att.kind = DropoutKind::traditional;
        } else if (kind == "controlled") {
          att.kind = DropoutKind::controlled;
        } else {
          throw IoError("unknown dropout kind '" + kind + "'");
        }
        att.p = d.at("p").get<double>();
        if (!d.at("bank").is_null()) att.bank = bank_from_json(d.at("bank").dump());
        if (att.kind == DropoutKind::controlled && !att.bank) {
          throw IoError("controlled dropout layer without a bank");
        }
        layer.spec.dropout = std::move(att);
      }
      layer.weight = matrix_from_json(l.at("weight"), layer.spec.output_dim,
                                      layer.spec.input_dim, "weight");
      const auto& bias = l.at("bias");
      if (!bias.is_array() || static_cast<Index>(bias.size()) != layer.spec.output_dim) {
        throw IoError("bad bias length");
      }
      layer.bias.resize(layer.spec.output_dim);
      for (Index i = 0; i < layer.spec.output_dim; ++i) {
        layer.bias[i] = bias[static_cast<std::size_t>(i)].get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("invalid model JSON: ") + e.what());
    }
    if (prev_out >= 0 && layer.spec.input_dim != prev_out) {
      throw IoError("model layer dims do not chain");
    }
    if (!all_finite(layer.weight)) throw IoError("non-finite model weights");
    prev_out = layer.spec.output_dim;
    params.layers.push_back(std::move(layer));
  }
  return params;
}

void save_model(const NetworkParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << model_to_json(params) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

NetworkParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace cmcdrop
