// spawnlab/bindings/py_spawnlab.cc

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABILITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Python bindings over the experiment drivers and metric helpers. The
// interface is JSON-at-the-boundary: configs, reports, and spawned
// embeddings cross as strings with the same bytes the CLI writes, so
// Python-driven runs stay bitwise comparable with shell-driven ones.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "spawnlab/errors.hpp"
#include "spawnlab/experiment.hpp"

namespace py = pybind11;
using namespace spawnlab;

namespace {

Matrix matrix_of(const std::vector<Vec>& rows, const char* what) {
  if (rows.empty()) return Matrix();
  const int cols = static_cast<int>(rows[0].size());
  Matrix m(static_cast<int>(rows.size()), cols);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int>(rows[r].size()) != cols)
      throw ConfigError(std::string(what) + ": ragged rows");
    m.set_row(static_cast<int>(r), rows[r]);
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_spawnlab, m) {
  m.doc() =
      "speaker-generation workbench core: synthetic corpora, joint and "
      "variational training of a toy multi-speaker synthesizer with a "
      "metadata-conditioned mixture prior, prior sampling, and "
      "embedding-space evaluation";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError",
                                         PyExc_ArithmeticError);

  m.def(
      "canonical_config",
      [](const std::string& text) {
        return canonical_config_json(parse_experiment_config(text));
      },
      py::arg("config_json"),
      "Validate a config and return its canonical JSON form (fixed key "
      "order, defaults materialized). Equal experiments canonicalize to "
      "identical bytes.");

  m.def(
      "config_digest",
      [](const std::string& text) {
        return config_digest(parse_experiment_config(text));
      },
      py::arg("config_json"),
      "16-hex-digit digest of the canonical config; stamped into every "
      "artifact for provenance.");

  m.def(
      "gen_data",
      [](const std::string& config_json, const std::string& out_dir) {
        return run_gen_data(parse_experiment_config(config_json), out_dir);
      },
      py::arg("config_json"), py::arg("out_dir"),
      "Generate the configured synthetic corpus into out_dir; returns a "
      "one-line summary.");

  m.def(
      "train",
      [](const std::string& config_json, const std::string& corpus_dir,
         const std::string& out_dir, bool resume) {
        run_train(parse_experiment_config(config_json), corpus_dir, out_dir,
                  resume);
      },
      py::arg("config_json"), py::arg("corpus_dir"), py::arg("out_dir"),
      py::arg("resume") = false,
      "Train the configured objective; writes config.json, log.jsonl and "
      "checkpoint.json under out_dir (one kl_<target>/ subdirectory per "
      "entry when the config sweeps kl_target).");

  m.def(
      "spawn",
      [](const std::string& checkpoint_path, const std::string& locale,
         const std::string& gender, int n, double temperature, uint64_t seed) {
        const TrainerState st = load_checkpoint(checkpoint_path);
        const std::vector<Vec> embeddings =
            spawn_speakers(st, locale, gender, n, temperature, seed);
        return spawn_to_json(st, locale, gender, temperature, seed, embeddings);
      },
      py::arg("checkpoint_path"), py::arg("locale"), py::arg("gender"),
      py::arg("n") = 1, py::arg("temperature") = 1.0, py::arg("seed") = 0,
      "Sample n new speaker embeddings from the trained prior for the given "
      "metadata; returns the spawn JSON document.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint_path, const std::string& corpus_dir,
         uint64_t seed, bool export_distances) {
        const TrainerState st = load_checkpoint(checkpoint_path);
        const Corpus full = load_corpus(corpus_dir);
        std::string csv;
        const EvalReport report =
            run_eval(st, full, seed, export_distances ? &csv : nullptr);
        py::object csv_obj =
            export_distances ? py::object(py::str(csv)) : py::object(py::none());
        return py::make_tuple(eval_report_to_json(report), csv_obj);
      },
      py::arg("checkpoint_path"), py::arg("corpus_dir"), py::arg("seed") = 0,
      py::arg("export_distances") = false,
      "Evaluate a checkpoint on the held-out split. Returns "
      "(report_json, distances_csv_or_None); the report carries s2t-same, "
      "s2t, s2s, g2s, g2g.");

  m.def(
      "probe",
      [](const std::string& config_json, const std::string& corpus_dir) {
        return run_probe(parse_experiment_config(config_json),
                         load_corpus(corpus_dir));
      },
      py::arg("config_json"), py::arg("corpus_dir"),
      "Half-vs-half prior generalization probe; returns JSONL whose first "
      "line echoes the config and digest.");

  m.def(
      "prior_log_prob",
      [](const std::string& checkpoint_path, const std::string& locale,
         const std::string& gender, const Vec& embedding) {
        const TrainerState st = load_checkpoint(checkpoint_path);
        SpeakerMetadata c;
        c.locale = locale;
        c.gender = gender;
        return prior_log_prob(st.prior, c, embedding);
      },
      py::arg("checkpoint_path"), py::arg("locale"), py::arg("gender"),
      py::arg("embedding"),
      "Log-density of an embedding under the checkpoint's conditional prior.");

  m.def("cosine_distance", &cosine_distance, py::arg("a"), py::arg("b"),
        "1 - cosine similarity, in [0, 2]; raises on zero vectors.");

  m.def(
      "median_min_distance",
      [](const std::vector<Vec>& a, const std::vector<Vec>& b,
         bool exclude_same_index) {
        return median_min_distance(matrix_of(a, "median_min_distance"),
                                   matrix_of(b, "median_min_distance"),
                                   exclude_same_index);
      },
      py::arg("a"), py::arg("b"), py::arg("exclude_same_index"),
      "Median over rows of a of the minimum cosine distance to rows of b; "
      "with exclude_same_index, row j skips b's row j.");

  m.def(
      "median_same_distance",
      [](const std::vector<Vec>& a, const std::vector<Vec>& b) {
        return median_same_distance(matrix_of(a, "median_same_distance"),
                                    matrix_of(b, "median_same_distance"));
      },
      py::arg("a"), py::arg("b"),
      "Median over j of the aligned cosine distance d(a_j, b_j).");
}
