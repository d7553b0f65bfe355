// spawnlab/experiment.hpp

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

// Experiment plumbing: the JSON experiment config with canonicalization and
// digesting, trainer state with checkpoint round-trips, and the command
// drivers behind the CLI (gen-data / train / spawn / eval / probe). Every
// driver output is a pure function of (config, input files, seeds) down to
// the byte level.

#ifndef SPAWNLAB_EXPERIMENT_HPP_
#define SPAWNLAB_EXPERIMENT_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spawnlab/corpus.hpp"
#include "spawnlab/evalmetrics.hpp"
#include "spawnlab/matrix.hpp"
#include "spawnlab/prior.hpp"
#include "spawnlab/synth.hpp"
#include "spawnlab/train.hpp"

namespace spawnlab {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

// Parsed experiment description. Invariants enforced by the parser:
//  * objective is "tacospawn" or "vb";
//  * for "vb", exactly one of kl_targets / beta is given (beta may be the
//    string "strict-bayes", resolved to J/I at training time);
//  * corpus/train/eval seeds are stated in the file, never defaulted.
struct ExperimentConfig {
  // corpus block (optional; required by gen-data)
  bool has_corpus = false;
  SynthConfig corpus;  // cells resolved (explicit or via make_separated_cells)
  uint64_t corpus_seed = 0;

  // model block
  int model_token_embed_dim = 8;
  int model_hidden = 32;
  int speaker_dim = 8;
  int extractor_dim = 16;
  uint64_t extractor_seed = 0;

  std::string objective = "tacospawn";

  // vb block
  std::vector<double> kl_targets;      // nonempty => closed-loop beta
  std::optional<double> fixed_beta;    // set => open-loop beta
  bool strict_bayes = false;           // beta = J/I, overrides fixed_beta value
  double eta = 1e-3;                   // controller step size
  bool omega_lr_rescale = false;       // scale the prior's VB gradient by 1/beta
  double posterior_sigma_init = 0.1;   // initial posterior stddev

  // prior block
  int prior_components = 10;
  int prior_hidden = 32;
  double prior_sigma_floor = 1e-3;
  ConditioningSet conditioning;

  // train block
  long steps = 5000;
  int batch_size = 32;
  double lr = 1e-3;
  uint64_t train_seed = 0;
  long checkpoint_interval = 500;

  // eval block
  double eval_fraction = 0.1;
  uint64_t eval_seed = 0;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Throws ParseError on malformed JSON, ConfigError on schema violations
// (unknown keys included, so typos fail loudly).
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Fixed key order, defaults materialized; equal configs produce identical
// bytes. parse(canonical(cfg)) == cfg.
std::string canonical_config_json(const ExperimentConfig& cfg);

// 16 hex digits of FNV-1a over the canonical form; stamped into every output.
std::string config_digest(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Trainer state and checkpoints
// ---------------------------------------------------------------------------

struct TrainerState {
  ExperimentConfig cfg;
  double kl_target = -1.0;  // the resolved target for this run; < 0 when none
  long step = 0;

  SynthParams synth;
  Matrix table;              // tacospawn embeddings
  PosteriorTable posterior;  // vb posteriors
  PriorNet prior;
  ExtractorParams extractor;

  AdamState synth_adam;
  AdamState emb_adam;  // table (tacospawn) or posterior (vb)
  AdamState prior_adam;

  BetaController ctrl;          // used when kl_target >= 0
  double resolved_beta = 0.0;   // open-loop beta (fixed or strict-Bayes J/I)

  bool is_vb() const { return cfg.objective == "vb"; }
  bool uses_controller() const { return is_vb() && kl_target >= 0.0; }
};

// Builds fresh state for one run against the training split. For sweeps pass
// the single target this run should chase; std::nullopt means "whatever the
// config says" (its sole target, or its fixed/strict beta, or tacospawn).
TrainerState init_trainer(const ExperimentConfig& cfg, const Corpus& train_corpus,
                          std::optional<double> kl_target = std::nullopt);

// One optimization step; the batch comes from RngStream(train seed, "batch",
// step) and, for vb, noise from ("reparam", step) / ("kl", step). Returns the
// step's log record (already serialized field selection per objective).
struct StepLogEntry {
  long step = 0;
  double synth_loss = 0.0;
  double prior_nll = 0.0;  // tacospawn only
  double kl_actual = 0.0;  // vb only
  double beta = 0.0;       // vb only
};

StepLogEntry trainer_step(TrainerState& state, const StepContext& ctx);

// Single-line JSON for log.jsonl (no trailing newline).
std::string step_log_line(const TrainerState& state, const StepLogEntry& entry);

// Checkpoint round-trip. The extractor is stored as (dims, seed) and its
// projection regenerated on load; everything else round-trips bit-exactly,
// so save(load(x)) == x byte-for-byte.
std::string checkpoint_to_json(const TrainerState& state);
TrainerState checkpoint_from_json(const std::string& text);
void save_checkpoint(const TrainerState& state, const std::string& path);
TrainerState load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Command drivers (the CLI is a thin shell over these)
// ---------------------------------------------------------------------------

// Generates the synthetic corpus and saves it under out_dir. Returns a short
// human-readable summary (speakers, utterances, dims).
std::string run_gen_data(const ExperimentConfig& cfg, const std::string& out_dir);

// Trains under out_dir: writes config.json, log.jsonl, checkpoint.json.
// A kl_target sweep (>1 targets) writes each run into out_dir/kl_<target>/.
// With resume=true continues from out_dir's checkpoint (config digests must
// match); the log is truncated back to the checkpoint step first, so an
// interrupted-and-resumed run is byte-identical to an uninterrupted one.
// On NumericalError the last periodic checkpoint stays on disk untouched.
void run_train(const ExperimentConfig& cfg, const std::string& corpus_dir,
               const std::string& out_dir, bool resume = false);

// n prior draws at the given temperature for one metadata row, from
// RngStream(seed, "spawn"). Labels must exist in the checkpoint's vocab.
std::vector<Vec> spawn_speakers(const TrainerState& state, const std::string& locale,
                                const std::string& gender, int n, double temperature,
                                uint64_t seed);

std::string spawn_to_json(const TrainerState& state, const std::string& locale,
                          const std::string& gender, double temperature,
                          uint64_t seed, const std::vector<Vec>& embeddings);

// Re-derives the eval split from the checkpoint's config, computes the
// report, and optionally the s/g distance CSV (distances_csv may be null).
EvalReport run_eval(const TrainerState& state, const Corpus& full_corpus,
                    uint64_t seed, std::string* distances_csv);

// Five metrics in report column order, as a two-line console table.
std::string format_report_table(const EvalReport& report);

// Runs the generalization probe on the full corpus; returns probe.jsonl
// content: first line echoes {config, config_digest}, then one record per
// checkpoint.
std::string run_probe(const ExperimentConfig& cfg, const Corpus& corpus);

// Shared by drivers and tests: the sweep subdirectory name for a target.
std::string kl_target_dir_name(double kl_target);

}  // namespace spawnlab

#endif  // SPAWNLAB_EXPERIMENT_HPP_
