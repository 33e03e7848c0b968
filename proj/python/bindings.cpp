// Python bindings: numpy in and out, JSON text for configs, opaque handles
// for datasets, window splits, and models. Heavy lifting stays in the C++
// core; this layer only converts representations.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "samba/common.hpp"
#include "samba/eval.hpp"
#include "samba/io.hpp"
#include "samba/model.hpp"
#include "samba/synth.hpp"
#include "samba/tensor.hpp"

namespace py = pybind11;
using namespace samba;

namespace {

py::array_t<double> to_array(const Tensor& t) {
    py::array_t<double> out({t.rows(), t.cols()});
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

Tensor to_tensor(const py::array& arr) {
    const py::array_t<double> a = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a || a.ndim() != 2) throw DimensionError("expected a 2-D float array");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    std::vector<double> values(a.data(), a.data() + rows * cols);
    return Tensor::leaf(std::move(values), rows, cols);
}

const std::vector<Window>& split_of(const WindowSet& ws, const std::string& name) {
    if (name == "train") return ws.train;
    if (name == "val") return ws.val;
    if (name == "test") return ws.test;
    throw ArgumentError("unknown split '" + name + "' (expected train, val, test)");
}

py::dict report_to_dict(const EvalReport& r) {
    py::dict d;
    d["direction"] = direction_name(r.direction);
    d["metric_window_s"] = r.metric_window_s;
    d["mean_spearman"] = r.mean_spearman;
    d["per_parcel"] = r.per_parcel;
    d["windows_evaluated"] = r.windows_evaluated;
    d["windows_skipped"] = r.windows_skipped;
    d["skipped"] = r.skipped;
    return d;
}

}  // namespace

PYBIND11_MODULE(_samba, m) {
    m.doc() = "Bidirectional electrophysiological/hemodynamic signal translation core";

    // Base first so the more specific translators below run before it.
    const py::object base = py::register_exception<Error>(m, "SambaError", PyExc_RuntimeError);
    py::register_exception<DimensionError>(m, "SambaDimensionError", base);
    py::register_exception<ArgumentError>(m, "SambaArgumentError", base);
    py::register_exception<ContractError>(m, "SambaContractError", base);
    py::register_exception<ConfigError>(m, "SambaConfigError", base);
    py::register_exception<DataError>(m, "SambaDataError", base);
    py::register_exception<NumericError>(m, "SambaNumericError", base);

    m.def("spearman", &spearman, py::arg("a"), py::arg("b"),
          "Rank correlation with average ties");

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("num_subjects", [](const Dataset& d) { return d.subjects.size(); })
        .def_property_readonly("config_json",
                               [](const Dataset& d) { return synth_config_to_json_text(d.config); })
        .def("electro", [](const Dataset& d, std::size_t i) { return to_array(d.subjects.at(i).electro); },
             py::arg("subject"), "Source-parcel recording, parcels x samples")
        .def("hemo", [](const Dataset& d, std::size_t i) { return to_array(d.subjects.at(i).hemo); },
             py::arg("subject"), "Target-parcel recording, parcels x samples")
        .def("labels", [](const Dataset& d, std::size_t i) { return d.subjects.at(i).labels; },
             py::arg("subject"), "Stimulus class per segment")
        .def("save", [](const Dataset& d, const std::filesystem::path& dir) { save_dataset(d, dir); },
             py::arg("dir"));

    m.def("default_synth_config", [] { return synth_config_to_json_text(default_synth_config()); });
    m.def("spectral_synth_config", [] { return synth_config_to_json_text(spectral_synth_config()); });
    m.def("generate", [](const std::string& config_json) {
              return generate(synth_config_from_json_text(config_json));
          },
          py::arg("config_json"), "Simulate a paired dataset from a JSON generator config");
    m.def("load_dataset", [](const std::filesystem::path& dir) { return load_dataset(dir); },
          py::arg("dir"));

    py::class_<WindowSet>(m, "WindowSet")
        .def_property_readonly("counts", [](const WindowSet& ws) {
            return py::make_tuple(ws.train.size(), ws.val.size(), ws.test.size());
        });
    m.def("split_windows", &split_windows, py::arg("dataset"), py::arg("window_s") = 64.0,
          py::arg("train_frac") = 0.7, py::arg("val_frac") = 0.15,
          "Carve non-overlapping windows, split contiguously per subject");

    m.def("default_model_config", [] { return model_config_to_json_text(ModelConfig{}); });
    m.def("default_train_config", [] { return train_config_to_json_text(TrainConfig{}); });
    m.def("config_hash", [](const std::string& model_json, const std::string& train_json) {
              return config_hash(model_config_from_json_text(model_json),
                                 train_config_from_json_text(train_json));
          },
          py::arg("model_json"), py::arg("train_json"));

    py::class_<Model>(m, "Model")
        .def_property_readonly("config_json",
                               [](const Model& mo) { return model_config_to_json_text(mo.config); })
        .def_property_readonly("direction",
                               [](const Model& mo) { return direction_name(mo.config.direction); })
        .def_property_readonly("epochs_completed",
                               [](const Model& mo) { return mo.epochs_completed; })
        .def("set_target_graph",
             [](Model& mo, const WindowSet& ws) { set_target_graph(mo, ws.train); },
             py::arg("windows"),
             "Freeze the output-parcel graph from the training windows (forward direction)")
        .def("train",
             [](Model& mo, const WindowSet& ws, const std::string& train_json) {
                 const TrainConfig tc = train_config_from_json_text(train_json);
                 const TrainResult result = train(mo, ws, tc);
                 py::list history;
                 for (const EpochStats& e : result.history) {
                     py::dict d;
                     d["epoch"] = e.epoch;
                     d["total"] = e.total;
                     d["match"] = e.l_match;
                     d["reg"] = e.l_reg;
                     d["val_spearman"] = e.val_spearman;
                     history.append(d);
                 }
                 return history;
             },
             py::arg("windows"), py::arg("train_json"),
             "Run the training loop; returns one stats dict per epoch")
        .def("translate",
             [](const Model& mo, const py::array& window) {
                 NoGradGuard no_grad;
                 const Tensor in = to_tensor(window);
                 if (mo.config.direction == Direction::E2H) return to_array(forward_e2h(mo, in));
                 return to_array(forward_h2e(mo, in).prediction);
             },
             py::arg("window"), "Translate one window (parcels x samples) to the other modality")
        .def("evaluate",
             [](const Model& mo, const WindowSet& ws, const std::string& split,
                double metric_window_s) {
                 return report_to_dict(evaluate(mo, split_of(ws, split), metric_window_s));
             },
             py::arg("windows"), py::arg("split") = "test", py::arg("metric_window_s") = 60.0)
        .def("hrf_parameters", [](const Model& mo) {
                 NoGradGuard no_grad;
                 return to_array(mo.hrf_parameters());
             },
             "Per-parcel response-kernel parameters, parcels x 6")
        .def("wavelet_alphas", [](const Model& mo) {
                 NoGradGuard no_grad;
                 return to_array(mo.wavelet_alphas());
             },
             "Band attention weights, rows sum to 1")
        .def("save", [](const Model& mo, const std::filesystem::path& file) {
                 const TrainConfig tc;
                 save_checkpoint(mo, tc, nullptr, file);
             },
             py::arg("file"));

    m.def("build_model", [](const std::string& model_json, std::uint64_t seed) {
              return build_model(model_config_from_json_text(model_json), seed);
          },
          py::arg("model_json"), py::arg("seed") = 0);
    m.def("load_checkpoint", [](const std::filesystem::path& file) {
              return std::move(load_checkpoint(file).model);
          },
          py::arg("file"), "Load the model from a checkpoint (optimizer state is dropped)");

    m.def("evaluate_oracle", [](const Dataset& ds, const WindowSet& ws, const std::string& split,
                                double metric_window_s) {
              return report_to_dict(evaluate_oracle(ds, split_of(ws, split), metric_window_s));
          },
          py::arg("dataset"), py::arg("windows"), py::arg("split") = "test",
          py::arg("metric_window_s") = 60.0,
          "Score the ground-truth reference translator (forward direction)");
}
