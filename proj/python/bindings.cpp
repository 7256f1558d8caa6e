#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "slidegcd/cli.hpp"
#include "slidegcd/pipeline.hpp"

namespace py = pybind11;
using namespace slidegcd;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

MatrixF matrix_from_array(const FloatArray& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  MatrixF m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.storage().begin());
  return m;
}

template <class T>
py::array_t<T> array_from_matrix(const Matrix<T>& m) {
  py::array_t<T> a({m.rows(), m.cols()});
  std::copy(m.storage().begin(), m.storage().end(), a.mutable_data());
  return a;
}

PatchBag make_bag(const FloatArray& embeddings, int label, std::string slide_id) {
  PatchBag b;
  b.embeddings = matrix_from_array(embeddings);
  b.label = label;
  b.slide_id = std::move(slide_id);
  return b;
}

py::dict prediction_to_dict(const Prediction& p) {
  py::list neighbors;
  for (const auto& n : p.neighbors) {
    py::dict d;
    d["node"] = n.node;
    d["source"] = n.source;
    d["label"] = n.label;
    neighbors.append(d);
  }
  py::dict d;
  d["predicted"] = p.predicted;
  d["probabilities"] = p.probabilities;
  d["graph_probabilities"] = p.graph_probabilities;
  d["mil_probabilities"] = p.mil_probabilities;
  d["neighbors"] = neighbors;
  return d;
}

py::dict log_record_to_dict(const LogRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["stage"] = r.stage;
  d["step"] = r.step;
  d["lr"] = r.lr;
  d["l_ce_mil"] = r.ce_mil;
  d["l_ce_graph"] = r.ce_graph;
  d["l_kd"] = r.kd;
  d["l_update"] = r.update;
  d["total"] = r.total;
  d["accepted"] = r.accepted;
  return d;
}

InferOptions conv_option(const std::optional<std::string>& conv) {
  InferOptions o;
  if (conv) o.conv = parse_conv_variant(*conv);
  return o;
}

}  // namespace

PYBIND11_MODULE(_slidegcd, m) {
  m.doc() = "Slide-level graph collaborative classification (C++ core)";

  auto base = py::register_exception<Error>(m, "SlideGCDError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<PatchBag>(m, "PatchBag")
      .def(py::init(&make_bag), py::arg("embeddings"), py::arg("label") = 0,
           py::arg("slide_id") = "")
      .def_readwrite("slide_id", &PatchBag::slide_id)
      .def_readwrite("label", &PatchBag::label)
      .def_property_readonly("embeddings",
                             [](const PatchBag& b) { return array_from_matrix(b.embeddings); })
      .def("__repr__", [](const PatchBag& b) {
        return "PatchBag('" + b.slide_id + "', label=" + std::to_string(b.label) + ", " +
               b.embeddings.shape_str() + ")";
      });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("bags", &Dataset::bags)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def_readonly("train", &Dataset::train)
      .def_readonly("val", &Dataset::val)
      .def_readonly("test", &Dataset::test)
      .def_property_readonly("patch_dim", &Dataset::patch_dim)
      .def("split", [](const Dataset& d, const std::string& name) {
        if (name == "train") return split_bags(d, d.train);
        if (name == "val") return split_bags(d, d.val);
        if (name == "test") return split_bags(d, d.test);
        throw InputError("unknown split '" + name + "' (expected train|val|test)");
      });

  m.def(
      "generate_synthetic",
      [](const py::object& spec) {
        nlohmann::json doc = {{"synthetic", spec.is_none() ? nlohmann::json::object()
                                                              : from_python(spec)}};
        return generate_synthetic(*parse_run_config(doc, {}).synthetic);
      },
      py::arg("spec") = py::none(),
      "Synthetic MIL dataset; spec keys as in the run configuration's 'synthetic' block.");

  m.def("load_bag", [](const std::filesystem::path& p) { return load_bag_file(p); });
  m.def("write_bag", &write_bag_file, py::arg("bag"), py::arg("path"));
  m.def("load_manifest", &load_manifest_bags, py::arg("path"));
  m.def("dataset_from_manifests", &dataset_from_manifests, py::arg("train"), py::arg("val"),
        py::arg("test"), py::arg("num_classes"));

  m.def(
      "default_config", [] { return to_python(TrainConfig{}.to_json()); },
      "Reference training configuration as a dict.");

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("config",
                             [](const Checkpoint& c) { return to_python(c.model.config.to_json()); })
      .def_property_readonly("config_hash",
                             [](const Checkpoint& c) { return c.model.config.hash(); })
      .def_property_readonly("log",
                             [](const Checkpoint& c) {
                               py::list out;
                               for (const auto& r : c.log) out.append(log_record_to_dict(r));
                               return out;
                             })
      .def_property_readonly("buffer_embeddings",
                             [](const Checkpoint& c) { return array_from_matrix(c.model.buffer.stacked()); })
      .def_property_readonly("buffer_labels",
                             [](const Checkpoint& c) { return c.model.buffer.stacked_labels(); })
      .def_property_readonly("buffer_checksum",
                             [](const Checkpoint& c) { return c.model.buffer.checksum(); })
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); })
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def("to_bytes",
           [](const Checkpoint& c) { return py::bytes(serialize_checkpoint(c)); })
      .def_static("from_bytes",
                  [](const py::bytes& b) { return deserialize_checkpoint(std::string(b)); })
      .def(
          "infer",
          [](const Checkpoint& c, const PatchBag& bag, std::optional<std::string> conv) {
            return prediction_to_dict(infer(c, bag, conv_option(conv)));
          },
          py::arg("bag"), py::arg("conv") = py::none())
      .def(
          "evaluate",
          [](const Checkpoint& c, const std::vector<PatchBag>& bags,
             std::optional<std::string> conv) {
            return to_python(eval_report_to_json(evaluate(c, bags, conv_option(conv)),
                                                 c.model.config.hash()));
          },
          py::arg("bags"), py::arg("conv") = py::none())
      .def("embed",
           [](const Checkpoint& c, const std::vector<PatchBag>& bags) {
             return array_from_matrix(embed_slides(c, bags));
           })
      .def(
          "export_graph",
          [](const Checkpoint& c, const std::filesystem::path& dir,
             const std::vector<PatchBag>& queries) {
            write_graph_tsv(export_graph(c, queries), dir);
          },
          py::arg("out_dir"), py::arg("queries") = std::vector<PatchBag>{});

  m.def(
      "train",
      [](const py::object& config, const Dataset& ds) {
        const nlohmann::json j = config.is_none() ? nlohmann::json::object() : from_python(config);
        const TrainConfig tc = TrainConfig::from_json(j);
        py::gil_scoped_release release;
        return train(tc, ds);
      },
      py::arg("config"), py::arg("dataset"),
      "Two-stage training; config keys as in the run configuration (unknown keys rejected).");

  m.def(
      "build_hyperedges",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& nodes,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& projection,
         std::size_t k) {
        auto to_matrix = [](const auto& a) {
          if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
          MatrixD mat(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
          std::copy(a.data(), a.data() + a.size(), mat.storage().begin());
          return mat;
        };
        return build_graph(to_matrix(nodes), to_matrix(projection), k).hyperedges;
      },
      py::arg("nodes"), py::arg("projection"), py::arg("k"),
      "kNN hyperedges: each node followed by its k nearest neighbours.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line interface; returns (exit_code, stdout, stderr).");
}
