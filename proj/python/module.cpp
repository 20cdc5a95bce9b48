#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "asft/anchor.hpp"
#include "asft/checkpoint.hpp"
#include "asft/cli.hpp"
#include "asft/errors.hpp"
#include "asft/landscape.hpp"
#include "asft/safetyeval.hpp"
#include "asft/trainer.hpp"

namespace py = pybind11;
using namespace asft;

namespace {

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> a(std::vector<py::ssize_t>(t.dims().begin(), t.dims().end()));
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Tensor from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
  return Tensor(dims, std::vector<double>(a.data(), a.data() + a.size()));
}

py::dict checkpoint_to_dict(const Checkpoint& c) {
  py::dict tensors;
  for (const auto& [name, t] : c.entries()) tensors[py::str(name)] = to_array(t);
  return tensors;
}

py::dict report_dict(const SafetyReport& r) {
  py::dict d;
  d["hs"] = r.hs;
  d["fa"] = r.fa;
  d["safety"] = r.safety();
  d["n_harmful_eval"] = r.n_harmful_eval;
  d["n_unsafe"] = r.n_unsafe;
  d["n_task_eval"] = r.n_task_eval;
  d["n_correct"] = r.n_correct;
  return d;
}

AlignmentAnchor single_layer_anchor(const py::array_t<double>& direction, const std::string& mode, std::size_t k) {
  return AlignmentAnchor::from_directions({{"W", from_array(direction)}}, AnchorKind::Aligned,
                                          parse_projection_mode(mode), k);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Alignment-direction-constrained fine-tuning core";

  static py::exception<Error> base_error(m, "AsftError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base_error, (e.kind() + ": " + e.what()).c_str());
    }
  });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run_cli(args, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs a CLI subcommand in-process; returns (exit_code, stdout, stderr).");

  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    const Checkpoint c = load(path);
    py::dict meta;
    meta["model_kind"] = c.meta.model_kind;
    meta["creation_seed"] = c.meta.creation_seed;
    meta["attributes"] = c.meta.attributes;
    return py::make_tuple(checkpoint_to_dict(c), meta);
  }, py::arg("path"), "Returns (tensors, meta) with tensors as float64 arrays in file order.");

  m.def("save_checkpoint", [](const std::vector<std::pair<std::string, py::array_t<double>>>& tensors,
                               const std::filesystem::path& path, const std::string& model_kind) {
    Checkpoint c(model_kind);
    for (const auto& [name, a] : tensors) c.add(name, from_array(a));
    save(c, path);
  }, py::arg("tensors"), py::arg("path"), py::arg("model_kind") = "", "Saves (name, array) pairs as float64.");

  m.def("project", [](const py::array_t<double>& direction, const py::array_t<double>& update,
                      const std::string& mode, std::size_t k) {
    const AlignmentAnchor a = single_layer_anchor(direction, mode, k);
    const auto d = a.decompose({{"W", from_array(update)}}).at("W");
    return py::make_tuple(to_array(d.proj), to_array(d.orth));
  }, py::arg("direction"), py::arg("update"), py::arg("mode") = "fro", py::arg("k") = 8,
     "Splits an update into (proj, orth) with respect to an anchor direction.");

  m.def("penalty", [](const py::array_t<double>& direction, const py::array_t<double>& update,
                      const std::string& mode, std::size_t k) {
    return single_layer_anchor(direction, mode, k).penalty({{"W", from_array(update)}});
  }, py::arg("direction"), py::arg("update"), py::arg("mode") = "fro", py::arg("k") = 8);

  m.def("evaluate", [](const std::filesystem::path& model, const std::filesystem::path& corpus_dir) {
    const Checkpoint c = load(model);
    const Corpus corpus = load_corpus(corpus_dir);
    return report_dict(evaluate(MlpModel::from_checkpoint(c), nullptr, corpus.task_test, corpus.harmful_test));
  }, py::arg("model"), py::arg("corpus_dir"));

  m.def("mix_poison_counts", [](std::uint64_t corpus_seed, double p, std::size_t n, std::uint64_t seed) {
    CorpusParams params;
    params.seed = corpus_seed;
    const Corpus c = gen_corpus(params);
    const Dataset mixed = mix_poison(c.task_train, c.harmful_pool, p, n, seed);
    std::size_t harmful = 0;
    for (const auto& e : mixed.examples) harmful += e.harmful ? 1 : 0;
    return py::make_tuple(mixed.size() - harmful, harmful);
  }, py::arg("corpus_seed"), py::arg("p"), py::arg("n"), py::arg("seed"),
     "Returns (benign, harmful) counts of a poisoned mix drawn from a generated corpus.");

  m.def("epl", [](const std::vector<double>& safety, double a, std::optional<double> tau) {
    LandscapeGrid g;
    g.axis1 = symmetric_axis(a, safety.size());
    g.safety = safety;
    g.hs.resize(safety.size());
    g.fa.resize(safety.size());
    const EplResult r = epl(g, DirectionKind::Aligned, tau);
    return py::make_tuple(r.epl, r.tau);
  }, py::arg("safety"), py::arg("a") = 1.0, py::arg("tau") = py::none(),
     "EPL of a symmetric 1D safety profile on [-a, a]; returns (epl, tau).");
}
