// spawnlab/corpus.hpp
//
// Corpus data model: speakers with locale/gender metadata, utterances of
// integer token sequences with real-valued frame matrices, a synthetic-corpus
// generator with known ground truth, per-speaker eval splits, and the on-disk
// directory format (header.json / speakers.csv / utterances.jsonl).

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

#ifndef SPAWNLAB_CORPUS_HPP_
#define SPAWNLAB_CORPUS_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spawnlab/matrix.hpp"

namespace spawnlab {

struct SpeakerMetadata {
  int speaker_id = 0;
  std::string locale;
  std::string gender;

  friend bool operator==(const SpeakerMetadata&, const SpeakerMetadata&) = default;
};

struct Utterance {
  int utt_id = 0;
  int speaker_id = 0;
  std::vector<int> tokens;  // each in [0, vocab_size)
  Matrix frames;            // T x frame_dim

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct CorpusHeader {
  int vocab_size = 0;  // V
  int frame_dim = 0;   // F
  std::vector<std::string> locales;
  std::vector<std::string> genders;
  uint64_t seed = 0;

  friend bool operator==(const CorpusHeader&, const CorpusHeader&) = default;
};

// Ground-truth mixture for one (locale, gender) cell of a synthetic corpus.
struct TrueMixture {
  Vec weights;    // K*
  Matrix means;   // K* x truth_dim
  Matrix scales;  // K* x truth_dim

  friend bool operator==(const TrueMixture&, const TrueMixture&) = default;
};

// Present only for synthetic corpora: the latent speaker vectors each speaker
// was drawn from, the generating mixtures per metadata cell, and the affine
// frame generator, kept so tests can reconstruct frames independently.
struct CorpusTruth {
  int dim = 0;     // latent speaker dim
  Matrix vectors;  // J x dim
  std::map<std::string, TrueMixture> mixtures;  // key "locale|gender"
  Matrix token_embed;   // V x token_embed_dim
  Matrix mix_token;     // frame_dim x token_embed_dim
  Matrix mix_speaker;   // frame_dim x dim
  Vec bias;             // frame_dim
  double noise_scale = 0.0;

  friend bool operator==(const CorpusTruth&, const CorpusTruth&) = default;
};

struct Corpus {
  CorpusHeader header;
  std::vector<SpeakerMetadata> speakers;
  std::vector<Utterance> utterances;
  std::optional<CorpusTruth> truth;

  int num_speakers() const { return static_cast<int>(speakers.size()); }
  int num_utterances() const { return static_cast<int>(utterances.size()); }

  // Utterance indices grouped by speaker_id, each group in corpus order.
  std::vector<std::vector<int>> utterances_by_speaker() const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct CellMixtureConfig {
  std::string locale;
  std::string gender;
  Vec weights;
  Matrix means;   // K* x truth_dim
  Matrix scales;  // K* x truth_dim

  friend bool operator==(const CellMixtureConfig&, const CellMixtureConfig&) = default;
};

struct SynthConfig {
  int num_speakers = 0;
  int utterances_per_speaker = 0;
  int vocab_size = 0;
  int min_tokens = 1;
  int max_tokens = 1;
  int frame_dim = 0;
  int token_embed_dim = 4;
  int truth_dim = 0;
  std::vector<std::string> locales;
  std::vector<std::string> genders;
  std::vector<CellMixtureConfig> cells;  // speakers assigned round-robin
  double noise_scale = 0.0;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

// Which metadata fields condition the prior. The synthesizer always sees the
// full locale+gender encoding; this set applies to the prior input only.
struct ConditioningSet {
  bool locale = false;
  bool gender = false;

  bool empty() const { return !locale && !gender; }
  std::vector<std::string> to_strings() const;
  static ConditioningSet from_strings(const std::vector<std::string>& fields);

  friend bool operator==(const ConditioningSet&, const ConditioningSet&) = default;
};

// Pure function of (cfg, seed). Frames follow
//   y_t = A e(x_t) + B z_j + b + Laplace(0, noise_scale)
// with A, B, b, e fixed matrices drawn from the seed and z_j the speaker's
// truth vector sampled from its cell mixture.
Corpus generate_synthetic_corpus(const SynthConfig& cfg, uint64_t seed);

// Per-speaker stratified split; eval count per speaker is
// max(1, round(fraction * n_j)). Throws ConfigError if any speaker cannot
// keep at least one utterance on each side.
std::pair<Corpus, Corpus> split_eval(const Corpus& corpus, double fraction, uint64_t seed);

// Concatenated one-hot blocks for the conditioned fields, locale block first.
// Empty conditioning yields a zero-length vector.
Vec one_hot_metadata(const SpeakerMetadata& c, const ConditioningSet& conditioning,
                     const CorpusHeader& header);

int one_hot_width(const ConditioningSet& conditioning, const CorpusHeader& header);

// Directory layout: header.json, speakers.csv, utterances.jsonl.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

// Consistency checks shared by the generator and the loader.
void validate_corpus(const Corpus& corpus);

// Convenience for building test corpora: one mixture component per
// (locale, gender) cell, centers spread deterministically from the seed with
// the given separation, all scales equal.
std::vector<CellMixtureConfig> make_separated_cells(
    const std::vector<std::string>& locales, const std::vector<std::string>& genders,
    int truth_dim, double separation, double scale, uint64_t seed);

std::string cell_key(const std::string& locale, const std::string& gender);

}  // namespace spawnlab

#endif  // SPAWNLAB_CORPUS_HPP_
