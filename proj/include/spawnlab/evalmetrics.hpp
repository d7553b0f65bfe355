// spawnlab/evalmetrics.hpp

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

// Objective speaker-similarity evaluation. Builds speaker-level vectors from
// ground-truth audio ("t"), synthesized training speakers ("s"), and freshly
// generated speakers ("g"), then reduces pairwise cosine distances to the
// five report metrics (s2t-same, s2t, s2s, g2s, g2g). Also hosts the
// prior-generalization probe, which trains with the prior fitted to only half
// the speakers and tracks its log-probability on the held-out half.

#ifndef SPAWNLAB_EVALMETRICS_HPP_
#define SPAWNLAB_EVALMETRICS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "spawnlab/corpus.hpp"
#include "spawnlab/matrix.hpp"
#include "spawnlab/prior.hpp"
#include "spawnlab/synth.hpp"
#include "spawnlab/train.hpp"

namespace spawnlab {

// One row of speaker-level vectors per speaker, aligned with corpus speaker
// ids. kind is "t" (ground truth), "s" (synthesized training speakers), or
// "g" (generated speakers).
struct SpeakerVectorTable {
  std::string kind;
  Matrix vectors;  // J x E_v

  int num_speakers() const { return vectors.rows(); }
};

// Trained-model pieces the evaluation needs. Exactly one of table/posterior
// must be set for kinds "s"/"g"; prior is required for kind "g" only.
struct EvalModel {
  const SynthParams* synth = nullptr;
  const Matrix* table = nullptr;              // joint objective's embeddings
  const PosteriorTable* posterior = nullptr;  // variational posteriors
  const PriorNet* prior = nullptr;
};

// d(a, b) = 1 - cos(angle between a and b), clamped into [0, 2] against
// round-off. Throws NumericalError when either vector is exactly zero and
// ConfigError on a length mismatch.
double cosine_distance(const Vec& a, const Vec& b);

// Builds the J x E_v table for one kind:
//   "t": average extractor outputs over each speaker's eval utterances.
//   "s": embed each training speaker (learned table row, or for variational
//        models one draw from q_j via RngStream(seed, "posterior-draw", j)),
//        synthesize their eval texts, extract, average.
//   "g": sample one new embedding per training speaker from the prior at
//        temperature 1 conditioned on that speaker's metadata, via
//        RngStream(seed, "generate", j); synthesize the same eval texts.
// Throws ConfigError when a speaker has no eval utterances, on an unknown
// kind, or when the model pieces required by the kind are missing.
SpeakerVectorTable speaker_level_vectors(const std::string& kind,
                                         const Corpus& corpus_eval,
                                         const EvalModel& model,
                                         const ExtractorParams& extractor,
                                         uint64_t seed);

// For each row j of a: the minimum cosine distance to rows of b (skipping
// k == j when exclude_same_index); returns the median over j, with an even
// row count averaging the two central order statistics. Throws ConfigError
// unless a and b have the same shape with at least two rows.
double median_min_distance(const Matrix& a, const Matrix& b,
                           bool exclude_same_index);

// Median over j of the aligned distances d(a_j, b_j). Throws ConfigError on
// a shape mismatch or empty input.
double median_same_distance(const Matrix& a, const Matrix& b);

struct EvalReport {
  double s2t_same = 0.0;  // median_j d(s_j, t_j)
  double s2t = 0.0;       // median_j min_{k != j} d(s_j, t_k)
  double s2s = 0.0;       // median_j min_{k != j} d(s_j, s_k)
  double g2s = 0.0;       // median_j min_{k != j} d(g_j, s_k)
  double g2g = 0.0;       // median_j min_{k != j} d(g_j, g_k)
  int num_speakers = 0;
  uint64_t seed = 0;
  std::string config_digest;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Builds the t/s/g tables and reduces them to the five metrics.
EvalReport eval_report(const Corpus& corpus_eval, const EvalModel& model,
                       const ExtractorParams& extractor, uint64_t seed,
                       const std::string& config_digest = "");

// Deterministic JSON with a fixed key order; parse inverts it exactly.
std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

// Full pairwise cosine-distance matrix over the concatenated rows of the
// given tables, as CSV. Row/column labels are "<kind>:<index>" with the index
// local to each table; the diagonal is exactly 0 and the matrix is written
// symmetrically from one triangle.
std::string export_distance_matrix(const std::vector<SpeakerVectorTable>& tables);

// ---------------------------------------------------------------------------
// Prior-generalization probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
  SynthDims dims;           // cond_width is overwritten from the corpus header
  PriorNetConfig prior;
  AdamConfig adam;
  int steps = 2000;
  int batch_size = 32;
  int checkpoint_interval = 100;
};

struct ProbeRecord {
  long step = 0;
  double train_half_logprob = 0.0;  // mean_j log p(S_j | C_j), fitted half
  double eval_half_logprob = 0.0;   // same over the held-out half

  friend bool operator==(const ProbeRecord&, const ProbeRecord&) = default;
};

// Trains the joint objective on the full corpus, but the prior's NLL only
// covers a random half of the speakers (chosen once from
// RngStream(seed, "probe-half"); floor(J/2) speakers). Every speaker still
// receives a learned embedding through the synthesis term. Records the mean
// per-speaker prior log-probability on both halves every
// checkpoint_interval steps and at the final step. Throws ConfigError for
// fewer than four speakers.
std::vector<ProbeRecord> prior_generalization_probe(const Corpus& corpus,
                                                    const ProbeConfig& cfg,
                                                    uint64_t seed);

// One compact JSON object per line, in record order.
std::string probe_records_to_jsonl(const std::vector<ProbeRecord>& records);

}  // namespace spawnlab

#endif  // SPAWNLAB_EVALMETRICS_HPP_
