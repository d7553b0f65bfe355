// spawnlab/tools/spawnlab_main.cc

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

// Command-line front end. Every command is a pure function of
// (config, input files, seed): run it twice and the outputs match byte for
// byte. Exit codes: 0 success, 2 configuration/validation error,
// 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "spawnlab/errors.hpp"
#include "spawnlab/experiment.hpp"

namespace fs = std::filesystem;
using namespace spawnlab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << content;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"speaker-generation workbench: synthetic corpora, two training "
               "objectives, prior sampling, and embedding-space evaluation"};
  app.require_subcommand(1);

  std::string config_path, corpus_dir, out_dir, checkpoint_path;
  std::string locale, gender, out_path;
  bool resume = false;
  bool export_distances = false;
  int num = 1;
  double temperature = 1.0;
  uint64_t seed = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--config", config_path, "experiment config JSON")->required();
  gen->add_option("--out", out_dir, "corpus output directory")->required();

  CLI::App* train = app.add_subcommand("train", "train the configured objective");
  train->add_option("--config", config_path, "experiment config JSON")->required();
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train->add_option("--out", out_dir, "run directory (config.json, log.jsonl, "
                    "checkpoint.json; kl_<target>/ per sweep entry)")->required();
  train->add_flag("--resume", resume, "continue from the run directory's checkpoint");

  CLI::App* spawn = app.add_subcommand("spawn", "sample new speaker embeddings "
                                                "from a trained prior");
  spawn->add_option("--checkpoint", checkpoint_path, "trained checkpoint.json")
      ->required();
  spawn->add_option("--locale", locale, "metadata locale")->required();
  spawn->add_option("--gender", gender, "metadata gender")->required();
  spawn->add_option("-n,--num", num, "number of embeddings")->capture_default_str();
  spawn->add_option("--temperature", temperature, "sampling temperature")
      ->capture_default_str();
  spawn->add_option("--seed", seed, "sampling seed")->capture_default_str();
  spawn->add_option("--out", out_path, "also write the JSON here");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the "
                                              "held-out split");
  eval->add_option("--checkpoint", checkpoint_path, "trained checkpoint.json")
      ->required();
  eval->add_option("--corpus", corpus_dir, "corpus directory")->required();
  eval->add_option("--seed", seed, "evaluation seed")->capture_default_str();
  eval->add_option("--out", out_dir,
                   "directory for report.json (default: the checkpoint's)");
  eval->add_flag("--export-distances", export_distances,
                 "also write the pairwise distance CSV next to the report");

  CLI::App* probe = app.add_subcommand("probe", "train/eval prior log-prob probe "
                                                "for overfitting");
  probe->add_option("--config", config_path, "experiment config JSON")->required();
  probe->add_option("--corpus", corpus_dir, "corpus directory")->required();
  probe->add_option("--out", out_dir, "directory for probe.jsonl (optional)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (app.got_subcommand(gen)) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    std::cout << run_gen_data(cfg, out_dir) << "\n";
    return 0;
  }

  if (app.got_subcommand(train)) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    run_train(cfg, corpus_dir, out_dir, resume);
    if (cfg.objective == "vb" && cfg.kl_targets.size() > 1) {
      for (double target : cfg.kl_targets)
        std::cout << "trained " << out_dir << "/" << kl_target_dir_name(target)
                  << " (" << cfg.steps << " steps)\n";
    } else {
      std::cout << "trained " << out_dir << " (" << cfg.steps << " steps)\n";
    }
    std::cout << "config digest " << config_digest(cfg) << "\n";
    return 0;
  }

  if (app.got_subcommand(spawn)) {
    const TrainerState st = load_checkpoint(checkpoint_path);
    const std::vector<Vec> embeddings =
        spawn_speakers(st, locale, gender, num, temperature, seed);
    const std::string out = spawn_to_json(st, locale, gender, temperature, seed,
                                          embeddings);
    std::cout << out;
    if (!out_path.empty()) write_file(out_path, out);
    return 0;
  }

  if (app.got_subcommand(eval)) {
    const TrainerState st = load_checkpoint(checkpoint_path);
    const Corpus full = load_corpus(corpus_dir);
    std::string csv;
    const EvalReport report =
        run_eval(st, full, seed, export_distances ? &csv : nullptr);
    const fs::path dir =
        out_dir.empty() ? fs::path(checkpoint_path).parent_path() : fs::path(out_dir);
    fs::create_directories(dir.empty() ? fs::path(".") : dir);
    write_file((dir / "report.json").string(), eval_report_to_json(report));
    if (export_distances) write_file((dir / "distances.csv").string(), csv);
    std::cout << format_report_table(report);
    std::cout << "config digest " << report.config_digest << "\n";
    return 0;
  }

  if (app.got_subcommand(probe)) {
    const ExperimentConfig cfg = load_experiment_config(config_path);
    const Corpus corpus = load_corpus(corpus_dir);
    const std::string out = run_probe(cfg, corpus);
    std::cout << out;
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      write_file((fs::path(out_dir) / "probe.jsonl").string(), out);
    }
    return 0;
  }

  return kExitConfig;  // unreachable: require_subcommand(1)
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
