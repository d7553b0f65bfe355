// spawnlab/corpus.cc

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

#include "spawnlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "spawnlab/errors.hpp"
#include "spawnlab/rng.hpp"

namespace spawnlab {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::vector<int>> Corpus::utterances_by_speaker() const {
  std::vector<std::vector<int>> groups(speakers.size());
  for (int i = 0; i < num_utterances(); ++i) {
    int j = utterances[i].speaker_id;
    if (j < 0 || j >= num_speakers())
      throw ConfigError("utterance " + std::to_string(utterances[i].utt_id) +
                        " references unknown speaker_id " + std::to_string(j));
    groups[j].push_back(i);
  }
  return groups;
}

std::vector<std::string> ConditioningSet::to_strings() const {
  std::vector<std::string> out;
  if (locale) out.push_back("locale");
  if (gender) out.push_back("gender");
  return out;
}

ConditioningSet ConditioningSet::from_strings(const std::vector<std::string>& fields) {
  ConditioningSet set;
  for (const auto& f : fields) {
    if (f == "locale")
      set.locale = true;
    else if (f == "gender")
      set.gender = true;
    else
      throw ConfigError("unknown conditioning field '" + f + "' (expected locale or gender)");
  }
  return set;
}

std::string cell_key(const std::string& locale, const std::string& gender) {
  return locale + "|" + gender;
}

namespace {

int find_label(const std::vector<std::string>& vocab, const std::string& label,
               const char* field) {
  auto it = std::find(vocab.begin(), vocab.end(), label);
  if (it == vocab.end())
    throw ConfigError(std::string("unknown ") + field + " label '" + label + "'");
  return static_cast<int>(it - vocab.begin());
}

void check_vocab(const std::vector<std::string>& vocab, const char* field) {
  if (vocab.empty()) throw ConfigError(std::string("empty ") + field + " vocabulary");
  for (const auto& label : vocab) {
    if (label.empty()) throw ConfigError(std::string(field) + " vocabulary has empty label");
    if (label.find(',') != std::string::npos || label.find('|') != std::string::npos ||
        label.find('\n') != std::string::npos)
      throw ConfigError(std::string(field) + " label '" + label + "' contains , | or newline");
  }
  auto sorted = vocab;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError(std::string(field) + " vocabulary has duplicate labels");
}

void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.num_speakers <= 0) throw ConfigError("num_speakers must be >= 1");
  if (cfg.utterances_per_speaker <= 0) throw ConfigError("utterances_per_speaker must be >= 1");
  if (cfg.vocab_size <= 0) throw ConfigError("vocab_size must be >= 1");
  if (cfg.frame_dim <= 0) throw ConfigError("frame_dim must be >= 1");
  if (cfg.token_embed_dim <= 0) throw ConfigError("token_embed_dim must be >= 1");
  if (cfg.truth_dim <= 0) throw ConfigError("truth_dim must be >= 1");
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens)
    throw ConfigError("need 1 <= min_tokens <= max_tokens");
  if (cfg.noise_scale < 0.0) throw ConfigError("noise_scale must be >= 0");
  check_vocab(cfg.locales, "locale");
  check_vocab(cfg.genders, "gender");
  if (cfg.cells.empty()) throw ConfigError("at least one (locale, gender) cell mixture required");
  for (const auto& cell : cfg.cells) {
    find_label(cfg.locales, cell.locale, "locale");
    find_label(cfg.genders, cell.gender, "gender");
    int k = static_cast<int>(cell.weights.size());
    if (k == 0) throw ConfigError("cell mixture must have at least one component");
    if (cell.means.rows() != k || cell.scales.rows() != k ||
        cell.means.cols() != cfg.truth_dim || cell.scales.cols() != cfg.truth_dim)
      throw ConfigError("cell mixture shapes must be K* x truth_dim");
    double total = 0.0;
    for (double w : cell.weights) {
      if (w < 0.0) throw ConfigError("cell mixture weights must be nonnegative");
      total += w;
    }
    if (total <= 0.0) throw ConfigError("cell mixture weights must not all be zero");
    for (size_t i = 0; i < cell.scales.size(); ++i)
      if (cell.scales.data()[i] <= 0.0) throw ConfigError("cell mixture scales must be positive");
  }
}

}  // namespace

Corpus generate_synthetic_corpus(const SynthConfig& cfg, uint64_t seed) {
  validate_synth_config(cfg);

  Corpus corpus;
  corpus.header.vocab_size = cfg.vocab_size;
  corpus.header.frame_dim = cfg.frame_dim;
  corpus.header.locales = cfg.locales;
  corpus.header.genders = cfg.genders;
  corpus.header.seed = seed;

  CorpusTruth truth;
  truth.dim = cfg.truth_dim;
  truth.noise_scale = cfg.noise_scale;
  for (const auto& cell : cfg.cells) {
    TrueMixture mix;
    mix.weights = cell.weights;
    mix.means = cell.means;
    mix.scales = cell.scales;
    truth.mixtures[cell_key(cell.locale, cell.gender)] = mix;
  }

  // Fixed generator pieces, all from the seed.
  RngStream mat_rng(seed, "gen-matrices");
  truth.token_embed = Matrix(cfg.vocab_size, cfg.token_embed_dim);
  for (size_t i = 0; i < truth.token_embed.size(); ++i)
    truth.token_embed.data()[i] = mat_rng.normal();
  truth.mix_token = Matrix(cfg.frame_dim, cfg.token_embed_dim);
  double a_scale = 1.0 / std::sqrt(static_cast<double>(cfg.token_embed_dim));
  for (size_t i = 0; i < truth.mix_token.size(); ++i)
    truth.mix_token.data()[i] = a_scale * mat_rng.normal();
  truth.mix_speaker = Matrix(cfg.frame_dim, cfg.truth_dim);
  double b_scale = 1.0 / std::sqrt(static_cast<double>(cfg.truth_dim));
  for (size_t i = 0; i < truth.mix_speaker.size(); ++i)
    truth.mix_speaker.data()[i] = b_scale * mat_rng.normal();
  truth.bias.resize(cfg.frame_dim);
  for (int f = 0; f < cfg.frame_dim; ++f) truth.bias[f] = 0.2 * mat_rng.normal();

  // Speakers: round-robin over the declared cells, truth vector from the
  // cell's mixture.
  RngStream truth_rng(seed, "gen-truth");
  truth.vectors = Matrix(cfg.num_speakers, cfg.truth_dim);
  for (int j = 0; j < cfg.num_speakers; ++j) {
    const auto& cell = cfg.cells[j % cfg.cells.size()];
    corpus.speakers.push_back({j, cell.locale, cell.gender});
    size_t k = truth_rng.categorical(cell.weights);
    for (int d = 0; d < cfg.truth_dim; ++d)
      truth.vectors(j, d) =
          cell.means(static_cast<int>(k), d) +
          cell.scales(static_cast<int>(k), d) * truth_rng.normal();
  }

  RngStream token_rng(seed, "gen-tokens");
  RngStream noise_rng(seed, "gen-noise");
  int utt_id = 0;
  for (int j = 0; j < cfg.num_speakers; ++j) {
    for (int u = 0; u < cfg.utterances_per_speaker; ++u) {
      Utterance utt;
      utt.utt_id = utt_id++;
      utt.speaker_id = j;
      int len = cfg.min_tokens +
                static_cast<int>(token_rng.uniform_int(
                    static_cast<uint64_t>(cfg.max_tokens - cfg.min_tokens + 1)));
      utt.tokens.resize(len);
      for (int t = 0; t < len; ++t)
        utt.tokens[t] = static_cast<int>(token_rng.uniform_int(cfg.vocab_size));
      utt.frames = Matrix(len, cfg.frame_dim);
      for (int t = 0; t < len; ++t) {
        const double* e = truth.token_embed.row(utt.tokens[t]);
        for (int f = 0; f < cfg.frame_dim; ++f) {
          double acc = 0.0;
          for (int k = 0; k < cfg.token_embed_dim; ++k) acc += truth.mix_token(f, k) * e[k];
          for (int d = 0; d < cfg.truth_dim; ++d)
            acc += truth.mix_speaker(f, d) * truth.vectors(j, d);
          acc += truth.bias[f];
          if (cfg.noise_scale > 0.0) acc += noise_rng.laplace(cfg.noise_scale);
          utt.frames(t, f) = acc;
        }
      }
      corpus.utterances.push_back(std::move(utt));
    }
  }

  corpus.truth = std::move(truth);
  validate_corpus(corpus);
  return corpus;
}

std::pair<Corpus, Corpus> split_eval(const Corpus& corpus, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in (0, 1)");
  auto groups = corpus.utterances_by_speaker();

  std::vector<char> is_eval(corpus.num_utterances(), 0);
  for (int j = 0; j < corpus.num_speakers(); ++j) {
    auto& group = groups[j];
    int n = static_cast<int>(group.size());
    if (n < 2)
      throw ConfigError("speaker " + std::to_string(j) + " has " + std::to_string(n) +
                        " utterances; need >= 2 to split");
    int k = std::max<long>(1, std::lround(fraction * n));
    if (k > n - 1)
      throw ConfigError("split fraction " + std::to_string(fraction) + " leaves speaker " +
                        std::to_string(j) + " with zero train utterances");
    RngStream rng(seed, "split", static_cast<uint64_t>(j));
    // Fisher-Yates, then the first k shuffled entries go to eval.
    for (int i = n - 1; i > 0; --i) {
      int swap = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
      std::swap(group[i], group[swap]);
    }
    for (int i = 0; i < k; ++i) is_eval[group[i]] = 1;
  }

  Corpus train, eval;
  train.header = eval.header = corpus.header;
  train.speakers = eval.speakers = corpus.speakers;
  train.truth = eval.truth = corpus.truth;
  for (int i = 0; i < corpus.num_utterances(); ++i) {
    if (is_eval[i])
      eval.utterances.push_back(corpus.utterances[i]);
    else
      train.utterances.push_back(corpus.utterances[i]);
  }
  return {std::move(train), std::move(eval)};
}

int one_hot_width(const ConditioningSet& conditioning, const CorpusHeader& header) {
  int w = 0;
  if (conditioning.locale) w += static_cast<int>(header.locales.size());
  if (conditioning.gender) w += static_cast<int>(header.genders.size());
  return w;
}

Vec one_hot_metadata(const SpeakerMetadata& c, const ConditioningSet& conditioning,
                     const CorpusHeader& header) {
  Vec out;
  out.reserve(one_hot_width(conditioning, header));
  if (conditioning.locale) {
    int idx = find_label(header.locales, c.locale, "locale");
    for (int i = 0; i < static_cast<int>(header.locales.size()); ++i)
      out.push_back(i == idx ? 1.0 : 0.0);
  }
  if (conditioning.gender) {
    int idx = find_label(header.genders, c.gender, "gender");
    for (int i = 0; i < static_cast<int>(header.genders.size()); ++i)
      out.push_back(i == idx ? 1.0 : 0.0);
  }
  return out;
}

void validate_corpus(const Corpus& corpus) {
  check_vocab(corpus.header.locales, "locale");
  check_vocab(corpus.header.genders, "gender");
  if (corpus.header.vocab_size <= 0) throw ConfigError("header vocab_size must be >= 1");
  if (corpus.header.frame_dim <= 0) throw ConfigError("header frame_dim must be >= 1");
  for (int j = 0; j < corpus.num_speakers(); ++j) {
    const auto& spk = corpus.speakers[j];
    if (spk.speaker_id != j)
      throw ConfigError("speaker ids must be dense 0..J-1; row " + std::to_string(j) +
                        " has id " + std::to_string(spk.speaker_id));
    find_label(corpus.header.locales, spk.locale, "locale");
    find_label(corpus.header.genders, spk.gender, "gender");
  }
  for (const auto& utt : corpus.utterances) {
    if (utt.speaker_id < 0 || utt.speaker_id >= corpus.num_speakers())
      throw ConfigError("utterance " + std::to_string(utt.utt_id) +
                        " references unknown speaker_id " + std::to_string(utt.speaker_id));
    if (utt.tokens.empty())
      throw ConfigError("utterance " + std::to_string(utt.utt_id) + " has no tokens");
    for (int tok : utt.tokens)
      if (tok < 0 || tok >= corpus.header.vocab_size)
        throw ConfigError("utterance " + std::to_string(utt.utt_id) + " token " +
                          std::to_string(tok) + " outside [0, " +
                          std::to_string(corpus.header.vocab_size) + ")");
    if (utt.frames.rows() != static_cast<int>(utt.tokens.size()) ||
        utt.frames.cols() != corpus.header.frame_dim)
      throw ConfigError("utterance " + std::to_string(utt.utt_id) + " frame shape " +
                        std::to_string(utt.frames.rows()) + "x" +
                        std::to_string(utt.frames.cols()) + " inconsistent with header");
  }
  if (corpus.truth) {
    const auto& truth = *corpus.truth;
    if (truth.vectors.rows() != corpus.num_speakers() || truth.vectors.cols() != truth.dim)
      throw ConfigError("truth block must contain one vector of dim " +
                        std::to_string(truth.dim) + " per speaker");
  }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw ParseError(std::string(what) + ": expected array of rows");
  int rows = static_cast<int>(j.size());
  if (rows == 0) return Matrix();
  if (!j[0].is_array()) throw ParseError(std::string(what) + ": expected nested arrays");
  int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols)
      throw ParseError(std::string(what) + ": ragged rows");
    for (int c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

json truth_to_json(const CorpusTruth& truth) {
  json mixtures = json::object();
  for (const auto& [key, mix] : truth.mixtures) {
    mixtures[key] = {{"weights", mix.weights},
                     {"means", matrix_to_json(mix.means)},
                     {"scales", matrix_to_json(mix.scales)}};
  }
  return {{"dim", truth.dim},
          {"vectors", matrix_to_json(truth.vectors)},
          {"mixtures", std::move(mixtures)},
          {"token_embed", matrix_to_json(truth.token_embed)},
          {"mix_token", matrix_to_json(truth.mix_token)},
          {"mix_speaker", matrix_to_json(truth.mix_speaker)},
          {"bias", truth.bias},
          {"noise_scale", truth.noise_scale}};
}

CorpusTruth truth_from_json(const json& j) {
  CorpusTruth truth;
  truth.dim = j.at("dim").get<int>();
  truth.vectors = matrix_from_json(j.at("vectors"), "truth.vectors");
  for (const auto& [key, mix_json] : j.at("mixtures").items()) {
    TrueMixture mix;
    mix.weights = mix_json.at("weights").get<Vec>();
    mix.means = matrix_from_json(mix_json.at("means"), "truth mixture means");
    mix.scales = matrix_from_json(mix_json.at("scales"), "truth mixture scales");
    truth.mixtures[key] = std::move(mix);
  }
  truth.token_embed = matrix_from_json(j.at("token_embed"), "truth.token_embed");
  truth.mix_token = matrix_from_json(j.at("mix_token"), "truth.mix_token");
  truth.mix_speaker = matrix_from_json(j.at("mix_speaker"), "truth.mix_speaker");
  truth.bias = j.at("bias").get<Vec>();
  truth.noise_scale = j.at("noise_scale").get<double>();
  return truth;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
  validate_corpus(corpus);
  fs::create_directories(dir);

  json header = {{"vocab_size", corpus.header.vocab_size},
                 {"frame_dim", corpus.header.frame_dim},
                 {"locales", corpus.header.locales},
                 {"genders", corpus.header.genders},
                 {"seed", corpus.header.seed}};
  if (corpus.truth) header["truth"] = truth_to_json(*corpus.truth);
  std::ofstream hf(fs::path(dir) / "header.json");
  if (!hf) throw ParseError("cannot write " + dir + "/header.json");
  hf << header.dump(2) << "\n";

  std::ofstream sf(fs::path(dir) / "speakers.csv");
  if (!sf) throw ParseError("cannot write " + dir + "/speakers.csv");
  sf << "speaker_id,locale,gender\n";
  for (const auto& spk : corpus.speakers)
    sf << spk.speaker_id << "," << spk.locale << "," << spk.gender << "\n";

  std::ofstream uf(fs::path(dir) / "utterances.jsonl");
  if (!uf) throw ParseError("cannot write " + dir + "/utterances.jsonl");
  for (const auto& utt : corpus.utterances) {
    json record = {{"utt_id", utt.utt_id},
                   {"speaker_id", utt.speaker_id},
                   {"tokens", utt.tokens},
                   {"frames", matrix_to_json(utt.frames)}};
    uf << record.dump() << "\n";
  }
}

Corpus load_corpus(const std::string& dir) {
  const fs::path header_path = fs::path(dir) / "header.json";
  if (!fs::exists(header_path))
    throw ParseError(header_path.string() + ": missing corpus header");

  Corpus corpus;
  {
    std::ifstream hf(header_path);
    json header;
    try {
      header = json::parse(hf);
    } catch (const json::exception& e) {
      throw ParseError(header_path.string() + ": " + e.what());
    }
    try {
      corpus.header.vocab_size = header.at("vocab_size").get<int>();
      corpus.header.frame_dim = header.at("frame_dim").get<int>();
      corpus.header.locales = header.at("locales").get<std::vector<std::string>>();
      corpus.header.genders = header.at("genders").get<std::vector<std::string>>();
      corpus.header.seed = header.at("seed").get<uint64_t>();
      if (header.contains("truth")) corpus.truth = truth_from_json(header["truth"]);
    } catch (const json::exception& e) {
      throw ParseError(header_path.string() + ": " + e.what());
    }
  }

  {
    const fs::path speakers_path = fs::path(dir) / "speakers.csv";
    std::ifstream sf(speakers_path);
    if (!sf) throw ParseError(speakers_path.string() + ": missing speakers file");
    std::string line;
    int line_no = 0;
    while (std::getline(sf, line)) {
      ++line_no;
      if (line_no == 1) {
        if (line != "speaker_id,locale,gender")
          throw ParseError(speakers_path.string() + ":1: bad csv header '" + line + "'");
        continue;
      }
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string id_str, locale, gender;
      if (!std::getline(ss, id_str, ',') || !std::getline(ss, locale, ',') ||
          !std::getline(ss, gender))
        throw ParseError(speakers_path.string() + ":" + std::to_string(line_no) +
                         ": expected speaker_id,locale,gender");
      try {
        corpus.speakers.push_back({std::stoi(id_str), locale, gender});
      } catch (const std::exception&) {
        throw ParseError(speakers_path.string() + ":" + std::to_string(line_no) +
                         ": bad speaker_id '" + id_str + "'");
      }
    }
  }

  {
    const fs::path utt_path = fs::path(dir) / "utterances.jsonl";
    std::ifstream uf(utt_path);
    if (!uf) throw ParseError(utt_path.string() + ": missing utterances file");
    std::string line;
    int line_no = 0;
    while (std::getline(uf, line)) {
      ++line_no;
      if (line.empty()) continue;
      json record;
      try {
        record = json::parse(line);
        Utterance utt;
        utt.utt_id = record.at("utt_id").get<int>();
        utt.speaker_id = record.at("speaker_id").get<int>();
        utt.tokens = record.at("tokens").get<std::vector<int>>();
        utt.frames = matrix_from_json(record.at("frames"), "frames");
        corpus.utterances.push_back(std::move(utt));
      } catch (const json::exception& e) {
        throw ParseError(utt_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      } catch (const ParseError& e) {
        throw ParseError(utt_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  validate_corpus(corpus);
  return corpus;
}

std::vector<CellMixtureConfig> make_separated_cells(
    const std::vector<std::string>& locales, const std::vector<std::string>& genders,
    int truth_dim, double separation, double scale, uint64_t seed) {
  RngStream rng(seed, "cell-centers");
  std::vector<CellMixtureConfig> cells;
  for (const auto& locale : locales) {
    for (const auto& gender : genders) {
      CellMixtureConfig cell;
      cell.locale = locale;
      cell.gender = gender;
      cell.weights = {1.0};
      cell.means = Matrix(1, truth_dim);
      cell.scales = Matrix(1, truth_dim, scale);
      // Random directions are near-orthogonal for truth_dim >= 4, which keeps
      // the cell centers pairwise separated by about separation * sqrt(2).
      Vec direction = rng.normal_vec(truth_dim);
      double n = norm2(direction);
      for (int d = 0; d < truth_dim; ++d) cell.means(0, d) = separation * direction[d] / n;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

}  // namespace spawnlab
