#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cmcdrop/datasets.hpp"
#include "cmcdrop/dropout.hpp"
#include "cmcdrop/errors.hpp"
#include "cmcdrop/experiment.hpp"
#include "cmcdrop/nn.hpp"
#include "cmcdrop/rng.hpp"
#include "cmcdrop/uncertainty.hpp"

namespace py = pybind11;
using namespace cmcdrop;

namespace {

py::int_ to_py_int(const BigInt& v) {
  const std::string s = v.str();
  PyObject* obj = PyLong_FromString(s.c_str(), nullptr, 10);
  if (!obj) throw py::error_already_set();
  return py::reinterpret_steal<py::int_>(obj);
}

std::vector<PeOutcome> zip_outcomes(const std::vector<double>& pe,
                                    const std::vector<bool>& correct) {
  if (pe.size() != correct.size()) throw ConfigError("pe and correct lengths differ");
  std::vector<PeOutcome> out(pe.size());
  for (std::size_t i = 0; i < pe.size(); ++i) out[i] = {pe[i], correct[i]};
  return out;
}

ExperimentResult run_sweep(const ExperimentConfig& cfg, std::size_t parallel) {
  return cfg.sweep == SweepAxis::tau ? run_tau_sweep(cfg, parallel)
                                     : run_rate_sweep(cfg, parallel);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Controlled-dropout uncertainty estimation core";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("uniform01", &Rng::uniform01)
      .def("normal", &Rng::normal)
      .def("bernoulli", &Rng::bernoulli, py::arg("p"))
      .def("uniform_index", &Rng::uniform_index, py::arg("n"))
      .def("next_u64", &Rng::next_u64);

  py::class_<MaskBank>(m, "MaskBank")
      .def_readonly("layer_size", &MaskBank::layer_size)
      .def_readonly("dropout_rate", &MaskBank::dropout_rate)
      .def_readonly("creation_seed", &MaskBank::creation_seed)
      .def_property_readonly("n_sample", &MaskBank::n_sample)
      .def_property_readonly("masks",
                             [](const MaskBank& b) {
                               std::vector<std::vector<double>> out;
                               for (const auto& mask : b.masks) out.push_back(mask.entries);
                               return out;
                             })
      .def("__len__", &MaskBank::n_sample);

  m.def("count_possible_masks",
        [](std::size_t s) { return to_py_int(count_possible_masks(s)); },
        py::arg("layer_size"));
  m.def("build_mask_bank", &build_mask_bank, py::arg("layer_size"), py::arg("n_sample"),
        py::arg("p"), py::arg("seed"));
  m.def("sample_mask",
        [](const MaskBank& bank, Rng& rng) { return sample_mask(bank, rng).entries; },
        py::arg("bank"), py::arg("rng"));
  m.def("bank_to_json", &bank_to_json, py::arg("bank"));
  m.def("bank_from_json", &bank_from_json, py::arg("text"));

  py::class_<LabeledDataset>(m, "LabeledDataset")
      .def_readonly("features", &LabeledDataset::features)
      .def_readonly("labels", &LabeledDataset::labels)
      .def_readonly("class_count", &LabeledDataset::class_count)
      .def("__len__", &LabeledDataset::size);

  m.def("make_moons", &make_moons, py::arg("n"), py::arg("noise"), py::arg("seed"));
  m.def("make_circles", &make_circles, py::arg("n"), py::arg("noise"), py::arg("factor"),
        py::arg("seed"));
  m.def("split_dataset",
        [](const LabeledDataset& ds, std::size_t train_n, std::size_t val_n, std::size_t test_n,
           std::uint64_t seed) {
          auto parts = split_dataset(ds, SplitSpec{train_n, val_n, test_n, seed});
          return py::make_tuple(parts[0], parts[1], parts[2]);
        },
        py::arg("dataset"), py::arg("train_n"), py::arg("val_n"), py::arg("test_n"),
        py::arg("seed"));
  m.def("load_mnist",
        [](const std::string& images, const std::string& labels) {
          return to_dataset(load_mnist_idx(images, labels));
        },
        py::arg("images_path"), py::arg("labels_path"));
  m.def("write_dataset_csv", &write_dataset_csv, py::arg("dataset"), py::arg("path"));

  py::class_<MeanPrediction>(m, "MeanPrediction")
      .def_readonly("mean_dist", &MeanPrediction::mean_dist)
      .def_readonly("predicted_class", &MeanPrediction::predicted_class)
      .def_readonly("pe", &MeanPrediction::pe);

  m.def("predictive_entropy",
        [](const Matrix& samples) { return predictive_entropy(PredictiveSamples{samples}); },
        py::arg("samples"), "Mean distribution, argmax and entropy of T stacked sample rows");

  py::enum_<Outcome>(m, "Outcome")
      .value("TC", Outcome::TC)
      .value("TU", Outcome::TU)
      .value("FC", Outcome::FC)
      .value("FU", Outcome::FU);

  m.def("classify_outcome", &classify_outcome, py::arg("prediction"), py::arg("label"),
        py::arg("tau"));

  py::class_<UncertaintyCounts>(m, "UncertaintyCounts")
      .def(py::init([](std::size_t tc, std::size_t tu, std::size_t fc, std::size_t fu) {
             return UncertaintyCounts{tc, tu, fc, fu};
           }),
           py::arg("tc") = 0, py::arg("tu") = 0, py::arg("fc") = 0, py::arg("fu") = 0)
      .def_readwrite("tc", &UncertaintyCounts::tc)
      .def_readwrite("tu", &UncertaintyCounts::tu)
      .def_readwrite("fc", &UncertaintyCounts::fc)
      .def_readwrite("fu", &UncertaintyCounts::fu)
      .def("total", &UncertaintyCounts::total);

  py::class_<UncertaintyMetrics>(m, "UncertaintyMetrics")
      .def_readonly("u_sen", &UncertaintyMetrics::u_sen)
      .def_readonly("u_spec", &UncertaintyMetrics::u_spec)
      .def_readonly("u_prec", &UncertaintyMetrics::u_prec)
      .def_readonly("u_acc", &UncertaintyMetrics::u_acc);

  m.def("compute_metrics", &compute_metrics, py::arg("counts"));

  py::class_<ThresholdRow>(m, "ThresholdRow")
      .def_readonly("tau", &ThresholdRow::tau)
      .def_readonly("counts", &ThresholdRow::counts)
      .def_readonly("metrics", &ThresholdRow::metrics);

  m.def("threshold_sweep",
        [](const std::vector<double>& pe, const std::vector<bool>& correct,
           const std::vector<double>& tau_grid) {
          return threshold_sweep(zip_outcomes(pe, correct), tau_grid);
        },
        py::arg("pe"), py::arg("correct"), py::arg("tau_grid"));

  py::enum_<DatasetKind>(m, "DatasetKind")
      .value("moons", DatasetKind::moons)
      .value("circles", DatasetKind::circles)
      .value("mnist", DatasetKind::mnist);
  py::enum_<ModelKind>(m, "ModelKind")
      .value("mc", ModelKind::mc)
      .value("cmc", ModelKind::cmc);
  py::enum_<SweepAxis>(m, "SweepAxis")
      .value("tau", SweepAxis::tau)
      .value("rate", SweepAxis::rate);
  py::enum_<TauUnit>(m, "TauUnit")
      .value("absolute", TauUnit::absolute)
      .value("fraction", TauUnit::fraction);
  py::enum_<LossKind>(m, "LossKind")
      .value("bce", LossKind::bce)
      .value("nll", LossKind::nll);
  py::enum_<MaskMode>(m, "MaskMode")
      .value("per_batch", MaskMode::per_batch)
      .value("per_example", MaskMode::per_example);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("name", &ExperimentConfig::name)
      .def_readwrite("dataset", &ExperimentConfig::dataset)
      .def_readwrite("n", &ExperimentConfig::n)
      .def_readwrite("noise", &ExperimentConfig::noise)
      .def_readwrite("circle_factor", &ExperimentConfig::circle_factor)
      .def_readwrite("train_n", &ExperimentConfig::train_n)
      .def_readwrite("val_n", &ExperimentConfig::val_n)
      .def_readwrite("test_n", &ExperimentConfig::test_n)
      .def_readwrite("mnist_images", &ExperimentConfig::mnist_images)
      .def_readwrite("mnist_labels", &ExperimentConfig::mnist_labels)
      .def_readwrite("mnist_test_images", &ExperimentConfig::mnist_test_images)
      .def_readwrite("mnist_test_labels", &ExperimentConfig::mnist_test_labels)
      .def_readwrite("hidden_dims", &ExperimentConfig::hidden_dims)
      .def_readwrite("dropout_layers", &ExperimentConfig::dropout_layers)
      .def_readwrite("model", &ExperimentConfig::model)
      .def_readwrite("dropout_p", &ExperimentConfig::dropout_p)
      .def_readwrite("n_sample", &ExperimentConfig::n_sample)
      .def_readwrite("mask_mode", &ExperimentConfig::mask_mode)
      .def_readwrite("learning_rate", &ExperimentConfig::learning_rate)
      .def_readwrite("momentum", &ExperimentConfig::momentum)
      .def_readwrite("loss", &ExperimentConfig::loss)
      .def_readwrite("epochs", &ExperimentConfig::epochs)
      .def_readwrite("epochs_mc", &ExperimentConfig::epochs_mc)
      .def_readwrite("batch_size", &ExperimentConfig::batch_size)
      .def_readwrite("t_samples", &ExperimentConfig::t_samples)
      .def_readwrite("sweep", &ExperimentConfig::sweep)
      .def_readwrite("tau_unit", &ExperimentConfig::tau_unit)
      .def_readwrite("tau_grid", &ExperimentConfig::tau_grid)
      .def_readwrite("fixed_tau", &ExperimentConfig::fixed_tau)
      .def_readwrite("rate_grid", &ExperimentConfig::rate_grid)
      .def_readwrite("repetitions", &ExperimentConfig::repetitions)
      .def_readwrite("base_seed", &ExperimentConfig::base_seed)
      .def("class_count", &ExperimentConfig::class_count)
      .def("absolute_tau", &ExperimentConfig::absolute_tau, py::arg("grid_value"))
      .def("to_json", [](const ExperimentConfig& cfg) { return config_to_json(cfg); });

  m.def("validate", &validate, py::arg("config"));
  m.def("preset_names", &preset_names);
  m.def("preset_config", &preset_config, py::arg("name"));
  m.def("parse_config_text", &parse_config_text, py::arg("text"));
  m.def("config_from_json", &config_from_json, py::arg("text"));
  m.def("load_config", &load_config, py::arg("path"));

  py::class_<PeOutcome>(m, "PeOutcome")
      .def_readonly("pe", &PeOutcome::pe)
      .def_readonly("correct", &PeOutcome::correct);

  py::class_<RunRecord>(m, "RunRecord")
      .def_readonly("run_id", &RunRecord::run_id)
      .def_readonly("seed", &RunRecord::seed)
      .def_readonly("kind", &RunRecord::kind)
      .def_readonly("grid_value", &RunRecord::grid_value)
      .def_readonly("best_epoch", &RunRecord::best_epoch)
      .def_readonly("best_val_loss", &RunRecord::best_val_loss)
      .def_readonly("test_accuracy", &RunRecord::test_accuracy)
      .def_readonly("pe_outcomes", &RunRecord::pe_outcomes)
      .def_readonly("per_tau", &RunRecord::per_tau);

  py::class_<ExperimentResult>(m, "ExperimentResult")
      .def_readonly("records", &ExperimentResult::records)
      .def_readonly("failures", &ExperimentResult::failures);

  m.def("run_experiment", &run_experiment, py::arg("config"), py::arg("parallel") = 1,
        py::call_guard<py::gil_scoped_release>());
  m.def("run_tau_sweep", &run_tau_sweep, py::arg("config"), py::arg("parallel") = 1,
        py::call_guard<py::gil_scoped_release>());
  m.def("run_rate_sweep", &run_rate_sweep, py::arg("config"), py::arg("parallel") = 1,
        py::call_guard<py::gil_scoped_release>());

  m.def("run_sweep_to_dir",
        [](const ExperimentConfig& cfg, const std::string& out_dir, std::size_t parallel) {
          validate(cfg);
          ExperimentResult result;
          {
            py::gil_scoped_release release;
            result = run_sweep(cfg, parallel);
          }
          const auto& grid = cfg.sweep == SweepAxis::tau ? cfg.tau_grid : cfg.rate_grid;
          const SweepResult sweep = aggregate(result.records, cfg.sweep, grid);
          auto paths = emit_outputs(cfg, sweep, result.records, out_dir);
          return py::make_tuple(paths, result.failures);
        },
        py::arg("config"), py::arg("out_dir"), py::arg("parallel") = 1,
        "Run the configured sweep, aggregate and write the output files; "
        "returns (paths, failure diagnostics)");
  m.def("write_report", &write_report, py::arg("sweep_dir"));

  py::class_<NetworkParams>(m, "NetworkParams")
      .def_property_readonly("input_dim", &NetworkParams::input_dim)
      .def_property_readonly("output_dim", &NetworkParams::output_dim)
      .def("__len__", [](const NetworkParams& p) { return p.layers.size(); });

  py::class_<EvalOutput>(m, "EvalOutput")
      .def_readonly("accuracy", &EvalOutput::accuracy)
      .def_readonly("outcomes", &EvalOutput::outcomes);

  m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
  m.def("load_model", &load_model, py::arg("path"));
  m.def("mc_evaluate", &mc_evaluate, py::arg("model"), py::arg("test"), py::arg("t_samples"),
        py::arg("predict_seed"), py::call_guard<py::gil_scoped_release>());
}
