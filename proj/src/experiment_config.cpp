#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cmcdrop/errors.hpp"
#include "cmcdrop/experiment.hpp"

namespace cmcdrop {

using ordered_json = nlohmann::ordered_json;

std::string to_string(ModelKind k) { return k == ModelKind::mc ? "mc" : "cmc"; }

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::moons: return "moons";
    case DatasetKind::circles: return "circles";
    case DatasetKind::mnist: return "mnist";
  }
  return "unknown";
}

namespace {

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mc") return ModelKind::mc;
  if (s == "cmc") return ModelKind::cmc;
  throw ConfigError("unknown model kind '" + s + "' (expected mc or cmc)");
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "moons") return DatasetKind::moons;
  if (s == "circles") return DatasetKind::circles;
  if (s == "mnist") return DatasetKind::mnist;
  throw ConfigError("unknown dataset '" + s + "'");
}

LossKind loss_from_string(const std::string& s) {
  if (s == "bce") return LossKind::bce;
  if (s == "nll") return LossKind::nll;
  throw ConfigError("unknown loss '" + s + "'");
}

std::string to_string(LossKind k) { return k == LossKind::bce ? "bce" : "nll"; }

SweepAxis sweep_from_string(const std::string& s) {
  if (s == "tau") return SweepAxis::tau;
  if (s == "rate") return SweepAxis::rate;
  throw ConfigError("unknown sweep axis '" + s + "'");
}

std::string to_string(SweepAxis a) { return a == SweepAxis::tau ? "tau" : "rate"; }

TauUnit tau_unit_from_string(const std::string& s) {
  if (s == "absolute") return TauUnit::absolute;
  if (s == "fraction") return TauUnit::fraction;
  throw ConfigError("unknown tau unit '" + s + "'");
}

std::string to_string(TauUnit u) { return u == TauUnit::absolute ? "absolute" : "fraction"; }

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "per_batch") return MaskMode::per_batch;
  if (s == "per_example") return MaskMode::per_example;
  throw ConfigError("unknown mask mode '" + s + "'");
}

std::string to_string(MaskMode m) {
  return m == MaskMode::per_batch ? "per_batch" : "per_example";
}

// Evaluated as scaled integers so decimal steps land on the shortest
// representable doubles (0.075 rather than 0.07500000000000001).
std::vector<double> linspace_grid(double start, double step, std::size_t count) {
  const double scale = 1e6;
  const double start_n = std::round(start * scale);
  const double step_n = std::round(step * scale);
  std::vector<double> grid(count);
  for (std::size_t i = 0; i < count; ++i) {
    grid[i] = (start_n + step_n * static_cast<double>(i)) / scale;
  }
  return grid;
}

void check_grid_field(const std::vector<double>& grid, const std::string& field, double lo,
                      double hi, bool hi_inclusive) {
  if (grid.empty()) throw ConfigError(field + " must not be empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = grid[i];
    const bool in_range = v >= lo && (hi_inclusive ? v <= hi : v < hi);
    if (!in_range) throw ConfigError(field + " value out of range");
    if (i > 0 && !(v > grid[i - 1])) throw ConfigError(field + " must be strictly ascending");
  }
}

}  // namespace

double ExperimentConfig::absolute_tau(double grid_value) const {
  if (tau_unit == TauUnit::fraction) {
    return grid_value * std::log(static_cast<double>(class_count()));
  }
  return grid_value;
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.dataset == DatasetKind::mnist) {
    if (cfg.mnist_images.empty() || cfg.mnist_labels.empty()) {
      throw ConfigError("mnist dataset needs mnist_images and mnist_labels paths");
    }
    if (cfg.mnist_test_images.empty() != cfg.mnist_test_labels.empty()) {
      throw ConfigError("mnist test files must be given as a pair");
    }
    if (cfg.loss != LossKind::nll) throw ConfigError("mnist requires the nll loss");
  } else {
    if (cfg.n < 2) throw ConfigError("n must be at least 2");
    if (!(cfg.noise >= 0.0)) throw ConfigError("noise must be non-negative");
    if (cfg.dataset == DatasetKind::circles &&
        !(cfg.circle_factor > 0.0 && cfg.circle_factor < 1.0)) {
      throw ConfigError("circle_factor must lie in (0, 1)");
    }
    if (cfg.train_n + cfg.val_n + cfg.test_n > cfg.n) {
      throw ConfigError("train_n + val_n + test_n exceeds n");
    }
    if (cfg.loss != LossKind::bce) throw ConfigError(to_string(cfg.dataset) +
                                                     " requires the bce loss");
  }
  if (cfg.train_n < 1 || cfg.val_n < 1) throw ConfigError("train_n and val_n must be positive");
  if (cfg.dataset != DatasetKind::mnist || cfg.mnist_test_images.empty()) {
    if (cfg.test_n < 1) throw ConfigError("test_n must be positive");
  }

  if (cfg.hidden_dims.empty()) throw ConfigError("hidden_dims must not be empty");
  for (std::size_t d : cfg.hidden_dims) {
    if (d < 1) throw ConfigError("hidden_dims entries must be positive");
  }
  for (std::size_t i = 0; i < cfg.dropout_layers.size(); ++i) {
    if (cfg.dropout_layers[i] >= cfg.hidden_dims.size()) {
      throw ConfigError("dropout_layers index out of range of hidden_dims");
    }
    if (i > 0 && cfg.dropout_layers[i] <= cfg.dropout_layers[i - 1]) {
      throw ConfigError("dropout_layers must be strictly ascending");
    }
  }

  if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0)) {
    throw ConfigError("dropout_p must lie in [0, 1)");
  }
  if (cfg.n_sample < 1) throw ConfigError("n_sample must be at least 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (cfg.t_samples < 1) throw ConfigError("t_samples must be at least 1");
  if (cfg.repetitions < 1) throw ConfigError("repetitions must be at least 1");

  if (cfg.sweep == SweepAxis::tau) {
    const double hi = cfg.tau_unit == TauUnit::fraction
                          ? 1.0
                          : std::numeric_limits<double>::infinity();
    check_grid_field(cfg.tau_grid, "tau_grid", 0.0, hi, true);
  } else {
    check_grid_field(cfg.rate_grid, "rate_grid", 0.0, 1.0, false);
    if (!(cfg.fixed_tau >= 0.0)) throw ConfigError("fixed_tau must be non-negative");
  }
}

std::vector<std::string> preset_names() {
  return {"moons-tau-sweep", "moons-rate-sweep", "circles-tau-sweep", "mnist-tau-sweep",
          "mnist10k-tau-sweep"};
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig cfg;
  cfg.name = name;
  if (name == "moons-tau-sweep" || name == "moons-rate-sweep" ||
      name == "circles-tau-sweep") {
    cfg.dataset = name == "circles-tau-sweep" ? DatasetKind::circles : DatasetKind::moons;
    cfg.n = 10000;
    cfg.noise = cfg.dataset == DatasetKind::circles ? 0.07 : 0.3;
    cfg.circle_factor = 0.8;
    cfg.train_n = 8000;
    cfg.val_n = 1000;
    cfg.test_n = 1000;
    cfg.hidden_dims = {20, 20, 20};
    cfg.dropout_layers = {0, 1};
    cfg.dropout_p = 0.3;
    cfg.n_sample = 10;
    cfg.learning_rate = 0.08;
    cfg.momentum = 0.0;
    cfg.loss = LossKind::bce;
    cfg.epochs = 300;
    cfg.batch_size = 64;
    cfg.t_samples = 100;
    cfg.repetitions = 20;
    if (name == "moons-rate-sweep") {
      cfg.sweep = SweepAxis::rate;
      cfg.rate_grid = linspace_grid(0.1, 0.1, 7);
      cfg.fixed_tau = 0.5;
    } else {
      cfg.sweep = SweepAxis::tau;
      cfg.tau_unit = TauUnit::absolute;
      cfg.tau_grid = linspace_grid(0.0, 0.025, 29);
    }
    return cfg;
  }
  if (name == "mnist-tau-sweep" || name == "mnist10k-tau-sweep") {
    cfg.dataset = DatasetKind::mnist;
    cfg.hidden_dims = {320, 50};
    cfg.dropout_layers = {0, 1};
    cfg.dropout_p = 0.5;
    cfg.n_sample = 20;
    cfg.learning_rate = 0.001;
    cfg.momentum = 0.9;
    cfg.loss = LossKind::nll;
    cfg.batch_size = 64;
    cfg.t_samples = 100;
    cfg.repetitions = 20;
    cfg.sweep = SweepAxis::tau;
    cfg.tau_unit = TauUnit::fraction;
    cfg.tau_grid = linspace_grid(0.0, 0.05, 21);
    if (name == "mnist-tau-sweep") {
      cfg.mnist_images = "data/mnist/train-images-idx3-ubyte";
      cfg.mnist_labels = "data/mnist/train-labels-idx1-ubyte";
      cfg.mnist_test_images = "data/mnist/t10k-images-idx3-ubyte";
      cfg.mnist_test_labels = "data/mnist/t10k-labels-idx1-ubyte";
      cfg.train_n = 50000;
      cfg.val_n = 10000;
      cfg.test_n = 10000;
      cfg.epochs = 70;
      cfg.epochs_mc = 100;
    } else {
      cfg.mnist_images = "data/mnist10k/images-idx3-ubyte";
      cfg.mnist_labels = "data/mnist10k/labels-idx1-ubyte";
      cfg.train_n = 8000;
      cfg.val_n = 1000;
      cfg.test_n = 1000;
      cfg.epochs = 30;
      cfg.epochs_mc = 40;
    }
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse '" + v + "' as a number for key '" + key + "'");
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const unsigned long long u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse '" + v + "' as an integer for key '" + key + "'");
  }
}

std::size_t parse_count(const std::string& v, const std::string& key) {
  return static_cast<std::size_t>(parse_u64(v, key));
}

std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  for (const auto& part : split_commas(v)) out.push_back(parse_double(part, key));
  return out;
}

std::vector<std::size_t> parse_count_list(const std::string& v, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& part : split_commas(v)) out.push_back(parse_count(part, key));
  return out;
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") {
    cfg = preset_config(value);
  } else if (key == "name") {
    cfg.name = value;
  } else if (key == "dataset") {
    cfg.dataset = dataset_kind_from_string(value);
  } else if (key == "n") {
    cfg.n = parse_count(value, key);
  } else if (key == "noise") {
    cfg.noise = parse_double(value, key);
  } else if (key == "circle_factor") {
    cfg.circle_factor = parse_double(value, key);
  } else if (key == "train_n") {
    cfg.train_n = parse_count(value, key);
  } else if (key == "val_n") {
    cfg.val_n = parse_count(value, key);
  } else if (key == "test_n") {
    cfg.test_n = parse_count(value, key);
  } else if (key == "mnist_images") {
    cfg.mnist_images = value;
  } else if (key == "mnist_labels") {
    cfg.mnist_labels = value;
  } else if (key == "mnist_test_images") {
    cfg.mnist_test_images = value;
  } else if (key == "mnist_test_labels") {
    cfg.mnist_test_labels = value;
  } else if (key == "hidden_dims") {
    cfg.hidden_dims = parse_count_list(value, key);
  } else if (key == "hidden_activation") {
    cfg.hidden_activation = activation_from_string(value);
  } else if (key == "dropout_layers") {
    cfg.dropout_layers = parse_count_list(value, key);
  } else if (key == "model") {
    cfg.model = model_kind_from_string(value);
  } else if (key == "dropout_p") {
    cfg.dropout_p = parse_double(value, key);
  } else if (key == "n_sample") {
    cfg.n_sample = parse_count(value, key);
  } else if (key == "mask_mode") {
    cfg.mask_mode = mask_mode_from_string(value);
  } else if (key == "learning_rate") {
    cfg.learning_rate = parse_double(value, key);
  } else if (key == "momentum") {
    cfg.momentum = parse_double(value, key);
  } else if (key == "loss") {
    cfg.loss = loss_from_string(value);
  } else if (key == "epochs") {
    cfg.epochs = parse_count(value, key);
  } else if (key == "epochs_mc") {
    cfg.epochs_mc = parse_count(value, key);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_count(value, key);
  } else if (key == "t_samples") {
    cfg.t_samples = parse_count(value, key);
  } else if (key == "sweep") {
    cfg.sweep = sweep_from_string(value);
  } else if (key == "tau_unit") {
    cfg.tau_unit = tau_unit_from_string(value);
  } else if (key == "tau_grid") {
    cfg.tau_grid = parse_double_list(value, key);
  } else if (key == "fixed_tau") {
    cfg.fixed_tau = parse_double(value, key);
  } else if (key == "rate_grid") {
    cfg.rate_grid = parse_double_list(value, key);
  } else if (key == "repetitions") {
    cfg.repetitions = parse_count(value, key);
  } else if (key == "base_seed") {
    cfg.base_seed = parse_u64(value, key);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    apply_key(cfg, key, value);
  }
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["name"] = cfg.name;
  j["dataset"] = to_string(cfg.dataset);
  j["n"] = cfg.n;
  j["noise"] = cfg.noise;
  j["circle_factor"] = cfg.circle_factor;
  j["train_n"] = cfg.train_n;
  j["val_n"] = cfg.val_n;
  j["test_n"] = cfg.test_n;
  j["mnist_images"] = cfg.mnist_images;
  j["mnist_labels"] = cfg.mnist_labels;
  j["mnist_test_images"] = cfg.mnist_test_images;
  j["mnist_test_labels"] = cfg.mnist_test_labels;
  j["hidden_dims"] = cfg.hidden_dims;
  j["hidden_activation"] = to_string(cfg.hidden_activation);
  j["dropout_layers"] = cfg.dropout_layers;
  j["model"] = to_string(cfg.model);
  j["dropout_p"] = cfg.dropout_p;
  j["n_sample"] = cfg.n_sample;
  j["mask_mode"] = to_string(cfg.mask_mode);
  j["learning_rate"] = cfg.learning_rate;
  j["momentum"] = cfg.momentum;
  j["loss"] = to_string(cfg.loss);
  j["epochs"] = cfg.epochs;
  j["epochs_mc"] = cfg.epochs_mc;
  j["batch_size"] = cfg.batch_size;
  j["t_samples"] = cfg.t_samples;
  j["sweep"] = to_string(cfg.sweep);
  j["tau_unit"] = to_string(cfg.tau_unit);
  j["tau_grid"] = cfg.tau_grid;
  j["fixed_tau"] = cfg.fixed_tau;
  j["rate_grid"] = cfg.rate_grid;
  j["repetitions"] = cfg.repetitions;
  j["base_seed"] = cfg.base_seed;
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw IoError(std::string("invalid config JSON: ") + e.what());
  }
  if (j.contains("config")) j = j["config"];  // manifest shape
  if (!j.is_object()) throw ConfigError("config JSON must be an object");

  ExperimentConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (value.is_string()) {
        apply_key(cfg, key, value.get<std::string>());
      } else if (value.is_array()) {
        std::string joined;
        for (const auto& item : value) {
          if (!joined.empty()) joined += ",";
          joined += item.dump();
        }
        apply_key(cfg, key, joined);
      } else {
        apply_key(cfg, key, value.dump());
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    return config_from_json(buf.str());
  }
  return parse_config_text(buf.str());
}

}  // namespace cmcdrop
