#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <string>
#include <vector>

#include "conr/errors.hpp"
#include "conr/gradcheck.hpp"
#include "conr/network.hpp"
#include "conr/synthdata.hpp"
#include "conr/tensor.hpp"

#ifdef CONR_WITH_CLI
#include "cli.hpp"
#endif

namespace py = pybind11;
using namespace conr;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

template <typename Img>
Array to_array(const Img& img) {
  Array a({img.height, img.width, 4});
  std::copy(img.data.begin(), img.data.end(), a.mutable_data());
  return a;
}

template <typename Img>
Img from_array(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 4) throw py::value_error("expected an H x W x 4 float array");
  Img img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

class PyModel {
 public:
  PyModel(int base_channels, int detector_channels, std::uint64_t seed)
      : model_(make_config(base_channels, detector_channels), seed) {}

  void load(const std::string& path) { load_checkpoint(model_.params(), path); }
  void save(const std::string& path) const { save_checkpoint(model_.params(), path); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : model_.params().entries()) n += e.tensor.size();
    return n;
  }

  Array render(const std::vector<Array>& sheet, const Array& udp, int message_blocks) const {
    if (sheet.empty()) throw py::value_error("the sheet needs at least one view");
    std::vector<Tensor<float>> views;
    for (const auto& v : sheet) views.push_back(to_tensor<float>(from_array<RgbaImage>(v)));
    NoGradGuard ng;
    const auto out = model_.renderer_forward(model_.encode_sheet(views),
                                             to_tensor<float>(from_array<UdpImage>(udp)), message_blocks);
    return to_array(to_rgba(out));
  }

  Array detect(const Array& image) const {
    NoGradGuard ng;
    return to_array(to_udp(model_.detector_forward(to_tensor<float>(from_array<RgbaImage>(image)))));
  }

 private:
  static ModelConfig make_config(int base, int det) {
    ModelConfig c;
    c.base_channels = base;
    c.detector_channels = det;
    c.validate();
    return c;
  }

  Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_conr, m) {
  m.doc() = "Bindings of the conr core library";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  m.def("character_json", [](std::uint64_t seed) { return character_to_json(gen_character(seed)); },
        py::arg("seed"));
  m.def(
      "pose_json",
      [](std::uint64_t pose_seed, std::uint64_t character_seed) {
        const auto spec = gen_character(character_seed);
        return pose_to_json(gen_pose(pose_seed, spec), build_mesh(spec).skeleton);
      },
      py::arg("pose_seed"), py::arg("character_seed"));

  // (rgba, udp) of a generated character in a generated pose.
  m.def(
      "render_pose",
      [](std::uint64_t character_seed, std::uint64_t pose_seed, int resolution) {
        const auto spec = gen_character(character_seed);
        const auto mesh = build_mesh(spec);
        const auto r = render_pose(mesh, bake_landmarks(mesh), gen_pose(pose_seed, spec), resolution);
        return py::make_tuple(to_array(r.rgba), to_array(r.udp));
      },
      py::arg("character_seed"), py::arg("pose_seed"), py::arg("resolution") = 64);

  m.def("read_udp", [](const std::string& p) { return to_array(read_udp(p)); }, py::arg("path"));
  m.def("write_udp", [](const Array& a, const std::string& p) { write_udp(from_array<UdpImage>(a), p); },
        py::arg("udp"), py::arg("path"));
  m.def("read_png", [](const std::string& p) { return to_array(read_png(p)); }, py::arg("path"));
  m.def("write_png", [](const Array& a, const std::string& p) { write_png(from_array<RgbaImage>(a), p); },
        py::arg("rgba"), py::arg("path"));

  m.def(
      "split_dataset",
      [](const std::vector<std::uint64_t>& seeds, int ratio, std::uint64_t shuffle_seed) {
        const auto s = split_dataset(seeds, ratio, shuffle_seed);
        return py::make_tuple(s.train, s.val);
      },
      py::arg("seeds"), py::arg("ratio") = 16, py::arg("shuffle_seed") = 0);

  // One dict per op: name, worst relative error, pass flag.
  m.def(
      "gradcheck",
      [](int instances, double tolerance, std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_gradcheck(tensor_gradcheck_cases(), instances, tolerance, seed)) {
          py::dict d;
          d["op"] = r.op;
          d["max_rel_error"] = r.max_rel_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("instances") = 10, py::arg("tolerance") = 1e-3, py::arg("seed") = 0);

  py::class_<PyModel>(m, "Model")
      .def(py::init<int, int, std::uint64_t>(), py::arg("base_channels") = 16, py::arg("detector_channels") = 16,
           py::arg("seed") = 0)
      .def("load", &PyModel::load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def_property_readonly("parameter_count", &PyModel::parameter_count)
      .def("render", &PyModel::render, py::arg("sheet"), py::arg("udp"), py::arg("message_blocks") = 3)
      .def("detect", &PyModel::detect, py::arg("image"));

#ifdef CONR_WITH_CLI
  // Runs the command-line tool in process; returns its exit code.
  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"conr"};
        for (const auto& a : args) argv.push_back(a.c_str());
        return cli::run(static_cast<int>(argv.size()), argv.data(), std::cout, std::cerr);
      },
      py::arg("args"));
#else
  m.def("cli", [](const std::vector<std::string>&) -> int {
    throw std::runtime_error("built without the command-line tool");
  });
#endif
}
