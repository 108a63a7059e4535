#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cmcdrop/errors.hpp"
#include "cmcdrop/experiment.hpp"
#include "cmcdrop/format.hpp"

namespace {

using namespace cmcdrop;

struct ConfigArgs {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& args) {
  auto* config = cmd->add_option("--config", args.config_path, "config file (flat text or JSON)");
  auto* preset = cmd->add_option("--preset", args.preset, "named preset configuration");
  config->excludes(preset);
  cmd->add_option("--seed", args.seed, "override base_seed");
  cmd->add_option("--reps", args.reps, "override repetitions");
}

ExperimentConfig resolve_config(const ConfigArgs& args) {
  ExperimentConfig cfg;
  if (!args.preset.empty()) {
    cfg = preset_config(args.preset);
  } else if (!args.config_path.empty()) {
    cfg = load_config(args.config_path);
  } else {
    throw ConfigError("either --config or --preset is required");
  }
  if (args.seed) cfg.base_seed = *args.seed;
  if (args.reps) cfg.repetitions = *args.reps;
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
}

void write_config_echo(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::ofstream out(out_dir + "/config.json");
  if (!out) throw IoError("cannot write " + out_dir + "/config.json");
  out << config_to_json(cfg) << "\n";
}

int cmd_generate_data(const ConfigArgs& args, const std::string& out_dir) {
  ExperimentConfig cfg = resolve_config(args);
  validate(cfg);
  ensure_dir(out_dir);

  const std::uint64_t run_seed = cfg.base_seed;
  LabeledDataset full;
  if (cfg.dataset == DatasetKind::mnist) {
    full = to_dataset(load_mnist_idx(cfg.mnist_images, cfg.mnist_labels));
  } else if (cfg.dataset == DatasetKind::moons) {
    full = make_moons(cfg.n, cfg.noise, derive_seed(run_seed, "data"));
  } else {
    full = make_circles(cfg.n, cfg.noise, cfg.circle_factor, derive_seed(run_seed, "data"));
  }
  write_dataset_csv(full, out_dir + "/dataset.csv");

  SplitData data = build_data(cfg, run_seed);
  write_dataset_csv(data.train, out_dir + "/train.csv");
  write_dataset_csv(data.val, out_dir + "/val.csv");
  write_dataset_csv(data.test, out_dir + "/test.csv");
  write_config_echo(cfg, out_dir);
  std::cout << "wrote dataset.csv, train.csv, val.csv, test.csv to " << out_dir << "\n";
  return 0;
}

int cmd_train(const ConfigArgs& args, const std::string& out_dir) {
  ExperimentConfig cfg = resolve_config(args);
  validate(cfg);
  ensure_dir(out_dir);

  const std::uint64_t run_seed = cfg.base_seed;
  SplitData data = build_data(cfg, run_seed);
  auto specs = build_layer_specs(cfg, cfg.model, cfg.dropout_p, run_seed);
  NetworkParams params = init_network(specs, derive_seed(run_seed, "init"));
  TrainedModel trained =
      train_with_checkpoint(cfg, cfg.model, std::move(params), data.train, data.val, run_seed);

  save_model(trained.params, out_dir + "/model.json");
  std::ofstream hist(out_dir + "/history.csv");
  if (!hist) throw IoError("cannot write " + out_dir + "/history.csv");
  hist << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < trained.history.size(); ++e) {
    hist << e + 1 << "," << format_double(trained.history[e].train_loss) << ","
         << format_double(trained.history[e].val_loss) << "\n";
  }
  write_config_echo(cfg, out_dir);
  std::cout << "trained " << to_string(cfg.model) << " model: best epoch "
            << trained.best_epoch << ", val loss " << format_double(trained.best_val_loss)
            << "; wrote model.json, history.csv to " << out_dir << "\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const ConfigArgs& args,
                 const std::string& out_dir) {
  ExperimentConfig cfg = resolve_config(args);
  validate(cfg);
  ensure_dir(out_dir);

  NetworkParams model = load_model(model_path);
  SplitData data = build_data(cfg, cfg.base_seed);
  const std::uint64_t predict_seed = derive_seed(
      cfg.base_seed, cfg.model == ModelKind::cmc ? "predict/cmc" : "predict/mc");
  EvalOutput eval = mc_evaluate(model, data.test, static_cast<Index>(cfg.t_samples),
                                predict_seed);

  std::vector<double> grid;
  if (cfg.sweep == SweepAxis::tau) {
    for (double v : cfg.tau_grid) grid.push_back(cfg.absolute_tau(v));
  } else {
    grid.push_back(cfg.absolute_tau(cfg.fixed_tau));
  }
  const auto rows = threshold_sweep(eval.outcomes, grid);

  std::ofstream metrics(out_dir + "/eval_metrics.csv");
  if (!metrics) throw IoError("cannot write " + out_dir + "/eval_metrics.csv");
  metrics << "tau,tc,tu,fc,fu,u_acc,u_sen,u_spec,u_prec\n";
  const auto opt_field = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };
  for (const auto& row : rows) {
    metrics << format_double(row.tau) << "," << row.counts.tc << "," << row.counts.tu << ","
            << row.counts.fc << "," << row.counts.fu << "," << opt_field(row.metrics.u_acc)
            << "," << opt_field(row.metrics.u_sen) << "," << opt_field(row.metrics.u_spec)
            << "," << opt_field(row.metrics.u_prec) << "\n";
  }

  std::ofstream pe(out_dir + "/pe_outcomes.csv");
  if (!pe) throw IoError("cannot write " + out_dir + "/pe_outcomes.csv");
  pe << "index,pe,correct\n";
  for (std::size_t i = 0; i < eval.outcomes.size(); ++i) {
    pe << i << "," << format_double(eval.outcomes[i].pe) << ","
       << (eval.outcomes[i].correct ? 1 : 0) << "\n";
  }
  write_config_echo(cfg, out_dir);
  std::cout << "test accuracy " << format_double(eval.accuracy)
            << "; wrote eval_metrics.csv, pe_outcomes.csv to " << out_dir << "\n";
  return 0;
}

int cmd_sweep(const ConfigArgs& args, const std::string& out_dir, std::size_t parallel) {
  ExperimentConfig cfg = resolve_config(args);
  validate(cfg);

  ExperimentResult result = cfg.sweep == SweepAxis::tau ? run_tau_sweep(cfg, parallel)
                                                        : run_rate_sweep(cfg, parallel);
  for (const auto& f : result.failures) std::cerr << "warning: skipped " << f << "\n";
  const std::vector<double>& grid =
      cfg.sweep == SweepAxis::tau ? cfg.tau_grid : cfg.rate_grid;
  SweepResult sweep = aggregate(result.records, cfg.sweep, grid);
  const auto paths = emit_outputs(cfg, sweep, result.records, out_dir);
  std::cout << result.records.size() << " runs aggregated";
  if (!result.failures.empty()) std::cout << " (" << result.failures.size() << " skipped)";
  std::cout << "; wrote:\n";
  for (const auto& p : paths) std::cout << "  " << p << "\n";
  return 0;
}

int cmd_report(const std::string& dir) {
  const std::string path = write_report(dir);
  std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controlled-dropout uncertainty experiments"};
  app.require_subcommand(1);

  ConfigArgs gen_args, train_args, eval_args, sweep_args;
  std::string gen_out, train_out, eval_out, sweep_out, report_dir, eval_model;
  std::size_t parallel = 1;

  auto* gen = app.add_subcommand("generate-data", "write dataset and split CSVs");
  add_config_flags(gen, gen_args);
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train one model and save it");
  add_config_flags(train, train_args);
  train->add_option("--out", train_out, "output directory")->required();

  auto* eval = app.add_subcommand("evaluate", "MC-evaluate a saved model on the test split");
  eval->add_option("model", eval_model, "model.json path")->required();
  add_config_flags(eval, eval_args);
  eval->add_option("--out", eval_out, "output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "run the configured threshold or rate sweep");
  add_config_flags(sweep, sweep_args);
  sweep->add_option("--out", sweep_out, "output directory")->required();
  sweep->add_option("--parallel", parallel, "worker threads across repetitions");

  auto* report = app.add_subcommand("report", "summarize a sweep directory as markdown");
  report->add_option("dir", report_dir, "sweep output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_data(gen_args, gen_out);
    if (train->parsed()) return cmd_train(train_args, train_out);
    if (eval->parsed()) return cmd_evaluate(eval_model, eval_args, eval_out);
    if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_out, parallel);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
