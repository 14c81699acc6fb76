#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ptrm/checkpoint.hpp"
#include "ptrm/harness.hpp"
#include "ptrm/inference.hpp"
#include "ptrm/metrics.hpp"
#include "ptrm/puzzles.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

// Configs cross the boundary as JSON text; the Python side wraps them.
py::tuple run_verb(const std::string& verb, const std::string& config) {
  std::ostringstream log;
  json cfg;
  try {
    cfg = json::parse(config);
  } catch (const json::exception& e) {
    return py::make_tuple(static_cast<int>(ptrm::kExitConfig), std::string("config error: ") + e.what() + "\n");
  }
  int code;
  {
    py::gil_scoped_release release;
    code = ptrm::run_command(verb, cfg, log);
  }
  return py::make_tuple(code, log.str());
}

ptrm::CorrectnessMatrix matrix_from(const std::vector<std::vector<bool>>& correct,
                                    const std::vector<std::vector<double>>& q,
                                    const std::vector<std::vector<std::vector<int>>>& answers) {
  const std::size_t p = correct.size(), k = p ? correct.front().size() : 0;
  ptrm::CorrectnessMatrix m(p, k);
  for (std::size_t i = 0; i < p; ++i) {
    if (correct[i].size() != k) throw std::invalid_argument("every puzzle needs the same rollout count");
    for (std::size_t j = 0; j < k; ++j) {
      const auto idx = m.index(i, j);
      m.correct[idx] = correct[i][j];
      if (!q.empty()) m.q[idx] = q.at(i).at(j);
      if (!answers.empty()) {
        m.answers.push_back(answers.at(i).at(j));
        m.hashes[idx] = ptrm::hash_answer(m.answers.back());
      }
    }
  }
  return m;
}

py::dict result_dict(const ptrm::InferenceResult& r) {
  py::list records;
  for (const auto& rec : r.records) {
    py::dict d;
    d["k"] = rec.k;
    d["answer"] = rec.answer;
    d["q"] = rec.q;
    records.append(d);
  }
  py::dict out;
  out["answer"] = r.answer;
  out["selected"] = r.selected;
  out["records"] = records;
  return out;
}

class Model {
 public:
  explicit Model(const std::filesystem::path& dir) : ck_(ptrm::load_checkpoint(dir)) {}

  std::string config() const {
    json j = ck_.params.config;
    return j.dump();
  }
  std::string manifest() const { return ck_.manifest.dump(); }

  py::dict deterministic(const std::vector<int>& x, int depth) const {
    ptrm::InferenceResult r;
    {
      py::gil_scoped_release release;
      r = ptrm::deterministic_infer(ck_.params, x, depth > 0 ? depth : ck_.params.config.supervision_steps);
    }
    return result_dict(r);
  }

  py::dict sample(const std::vector<int>& x, int rollouts, int depth, double sigma, std::uint64_t seed,
                  const std::string& selector) const {
    ptrm::InferenceConfig cfg;
    cfg.rollouts = rollouts;
    cfg.depth = depth > 0 ? depth : ck_.params.config.supervision_steps;
    cfg.sigma = sigma;
    cfg.master_seed = seed;
    cfg.selector = ptrm::parse_selector(selector);
    ptrm::InferenceResult r;
    {
      py::gil_scoped_release release;
      r = ptrm::ptrm_infer(ck_.params, x, cfg);
    }
    return result_dict(r);
  }

 private:
  ptrm::LoadedCheckpoint ck_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the ptrm package";

  py::register_exception<ptrm::ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<ptrm::CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  m.def("commands", &ptrm::command_names);
  m.def("run", &run_verb, py::arg("verb"), py::arg("config_json"),
        "Runs a CLI verb on a JSON config; returns (exit_code, log).");

  m.def("solve_sudoku", &ptrm::solve_sudoku, py::arg("grid"), py::arg("box_rows"), py::arg("box_cols"),
        py::arg("limit") = 0);
  m.def("count_sudoku_solutions", &ptrm::count_sudoku_solutions, py::arg("grid"), py::arg("box_rows"),
        py::arg("box_cols"), py::arg("limit"));

  m.def("pass_at_k", [](const std::vector<std::vector<bool>>& correct, std::size_t k) {
    return ptrm::pass_at_k(matrix_from(correct, {}, {}), k);
  }, py::arg("correct"), py::arg("k"));
  m.def("best_q_at_k", [](const std::vector<std::vector<bool>>& correct, const std::vector<std::vector<double>>& q,
                          std::size_t k) { return ptrm::best_q_at_k(matrix_from(correct, q, {}), k); },
        py::arg("correct"), py::arg("q"), py::arg("k"));
  m.def("mode_at_k", [](const std::vector<std::vector<bool>>& correct,
                        const std::vector<std::vector<std::vector<int>>>& answers,
                        std::size_t k) { return ptrm::mode_at_k(matrix_from(correct, {}, answers), k); },
        py::arg("correct"), py::arg("answers"), py::arg("k"));

  m.def("pca_project", [](const std::vector<std::vector<double>>& latents) {
    const auto p = ptrm::pca_project(latents);
    py::dict out;
    out["coords"] = p.coords;
    out["variance"] = std::vector<double>{p.plane.variance[0], p.plane.variance[1]};
    out["total_variance"] = p.total_variance;
    out["mean"] = p.plane.mean;
    return out;
  }, py::arg("latents"));

  m.def("cost_estimate", &ptrm::cost_estimate, py::arg("seconds"), py::arg("hourly_rate") = 2.50);

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint_dir"))
      .def("config_json", &Model::config)
      .def("manifest_json", &Model::manifest)
      .def("deterministic", &Model::deterministic, py::arg("x"), py::arg("depth") = 0)
      .def("sample", &Model::sample, py::arg("x"), py::arg("rollouts") = 1, py::arg("depth") = 0,
           py::arg("sigma") = 0.0, py::arg("seed") = 0, py::arg("selector") = "best-q");
}
