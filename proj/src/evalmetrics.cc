// spawnlab/evalmetrics.cc

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

#include "spawnlab/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "spawnlab/errors.hpp"
#include "spawnlab/jsonutil.hpp"
#include "spawnlab/rng.hpp"

namespace spawnlab {

namespace {

double median_of(std::vector<double> values, const char* what) {
  if (values.empty()) throw ConfigError(std::string(what) + ": no values to take a median of");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void check_aligned_tables(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows())
    throw ConfigError(std::string(what) + ": tables have different row counts");
  if (a.cols() != b.cols())
    throw ConfigError(std::string(what) + ": tables have different vector dims");
}

// Mean of extractor outputs over the given utterance frame matrices; the mean
// of unit vectors is deliberately left un-normalized.
Vec mean_extracted(const ExtractorParams& extractor, const std::vector<Matrix>& frame_sets) {
  Vec acc(extractor.out_dim, 0.0);
  for (const Matrix& frames : frame_sets) {
    Vec v = extract_speaker_vector(extractor, frames);
    for (int d = 0; d < extractor.out_dim; ++d) acc[d] += v[d];
  }
  const double inv = 1.0 / static_cast<double>(frame_sets.size());
  for (double& x : acc) x *= inv;
  return acc;
}

Vec posterior_draw(const PosteriorTable& posterior, int j, uint64_t seed) {
  RngStream rng(seed, "posterior-draw", static_cast<uint64_t>(j));
  const int dim = posterior.dim();
  Vec eps = rng.normal_vec(dim);
  Vec s(dim);
  for (int d = 0; d < dim; ++d)
    s[d] = posterior.mu(j, d) + posterior_sigma(posterior.rho(j, d)) * eps[d];
  return s;
}

}  // namespace

double cosine_distance(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ConfigError("cosine_distance: length mismatch");
  if (a.empty()) throw ConfigError("cosine_distance: empty vectors");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0)
    throw NumericalError("cosine_distance: zero vector has no direction");
  const double d = 1.0 - dot(a, b) / (na * nb);
  return std::min(2.0, std::max(0.0, d));
}

SpeakerVectorTable speaker_level_vectors(const std::string& kind,
                                         const Corpus& corpus_eval,
                                         const EvalModel& model,
                                         const ExtractorParams& extractor,
                                         uint64_t seed) {
  if (kind != "t" && kind != "s" && kind != "g")
    throw ConfigError("speaker_level_vectors: kind must be one of t, s, g");
  const int num_speakers = corpus_eval.num_speakers();
  if (num_speakers == 0) throw ConfigError("speaker_level_vectors: corpus has no speakers");

  const std::vector<std::vector<int>> by_speaker = corpus_eval.utterances_by_speaker();
  for (int j = 0; j < num_speakers; ++j)
    if (by_speaker[j].empty())
      throw ConfigError("speaker_level_vectors: speaker " + std::to_string(j) +
                        " has no eval utterances");

  if (kind != "t") {
    if (model.synth == nullptr)
      throw ConfigError("speaker_level_vectors: kind " + kind + " needs a synthesizer");
    const bool has_table = model.table != nullptr;
    const bool has_posterior = model.posterior != nullptr;
    if (kind == "s" && has_table == has_posterior)
      throw ConfigError(
          "speaker_level_vectors: kind s needs exactly one of table/posterior");
    if (has_table && model.table->rows() != num_speakers)
      throw ConfigError("speaker_level_vectors: table rows != speaker count");
    if (has_posterior && model.posterior->num_speakers() != num_speakers)
      throw ConfigError("speaker_level_vectors: posterior rows != speaker count");
    if (kind == "g" && model.prior == nullptr)
      throw ConfigError("speaker_level_vectors: kind g needs the trained prior");
  }

  const ConditioningSet full_cond{true, true};
  SpeakerVectorTable out;
  out.kind = kind;
  out.vectors = Matrix(num_speakers, extractor.out_dim);

  for (int j = 0; j < num_speakers; ++j) {
    std::vector<Matrix> frame_sets;
    frame_sets.reserve(by_speaker[j].size());

    if (kind == "t") {
      for (int u : by_speaker[j]) frame_sets.push_back(corpus_eval.utterances[u].frames);
    } else {
      Vec embedding;
      if (kind == "s") {
        embedding = model.table != nullptr ? model.table->row_vec(j)
                                           : posterior_draw(*model.posterior, j, seed);
      } else {
        RngStream rng(seed, "generate", static_cast<uint64_t>(j));
        embedding = sample_speaker(*model.prior, corpus_eval.speakers[j], 1.0, rng);
      }
      const Vec cond =
          one_hot_metadata(corpus_eval.speakers[j], full_cond, corpus_eval.header);
      for (int u : by_speaker[j]) {
        const Utterance& utt = corpus_eval.utterances[u];
        frame_sets.push_back(synthesize(*model.synth, utt.tokens, embedding, cond));
      }
    }
    out.vectors.set_row(j, mean_extracted(extractor, frame_sets));
  }
  return out;
}

double median_min_distance(const Matrix& a, const Matrix& b, bool exclude_same_index) {
  check_aligned_tables(a, b, "median_min_distance");
  if (a.rows() < 2) throw ConfigError("median_min_distance: need at least two rows");

  std::vector<double> mins;
  mins.reserve(a.rows());
  for (int j = 0; j < a.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    const Vec aj = a.row_vec(j);
    for (int k = 0; k < b.rows(); ++k) {
      if (exclude_same_index && k == j) continue;
      best = std::min(best, cosine_distance(aj, b.row_vec(k)));
    }
    mins.push_back(best);
  }
  return median_of(std::move(mins), "median_min_distance");
}

double median_same_distance(const Matrix& a, const Matrix& b) {
  check_aligned_tables(a, b, "median_same_distance");
  if (a.rows() == 0) throw ConfigError("median_same_distance: empty tables");
  std::vector<double> dists;
  dists.reserve(a.rows());
  for (int j = 0; j < a.rows(); ++j)
    dists.push_back(cosine_distance(a.row_vec(j), b.row_vec(j)));
  return median_of(std::move(dists), "median_same_distance");
}

EvalReport eval_report(const Corpus& corpus_eval, const EvalModel& model,
                       const ExtractorParams& extractor, uint64_t seed,
                       const std::string& config_digest) {
  const SpeakerVectorTable t = speaker_level_vectors("t", corpus_eval, model, extractor, seed);
  const SpeakerVectorTable s = speaker_level_vectors("s", corpus_eval, model, extractor, seed);
  const SpeakerVectorTable g = speaker_level_vectors("g", corpus_eval, model, extractor, seed);

  EvalReport report;
  report.s2t_same = median_same_distance(s.vectors, t.vectors);
  report.s2t = median_min_distance(s.vectors, t.vectors, true);
  report.s2s = median_min_distance(s.vectors, s.vectors, true);
  report.g2s = median_min_distance(g.vectors, s.vectors, true);
  report.g2g = median_min_distance(g.vectors, g.vectors, true);
  report.num_speakers = corpus_eval.num_speakers();
  report.seed = seed;
  report.config_digest = config_digest;
  return report;
}

std::string eval_report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["s2t_same"] = report.s2t_same;
  j["s2t"] = report.s2t;
  j["s2s"] = report.s2s;
  j["g2s"] = report.g2s;
  j["g2g"] = report.g2g;
  j["num_speakers"] = report.num_speakers;
  j["seed"] = report.seed;
  j["config_digest"] = report.config_digest;
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("eval report: ") + e.what());
  }
  try {
    EvalReport report;
    report.s2t_same = j.at("s2t_same").get<double>();
    report.s2t = j.at("s2t").get<double>();
    report.s2s = j.at("s2s").get<double>();
    report.g2s = j.at("g2s").get<double>();
    report.g2g = j.at("g2g").get<double>();
    report.num_speakers = j.at("num_speakers").get<int>();
    report.seed = j.at("seed").get<uint64_t>();
    report.config_digest = j.at("config_digest").get<std::string>();
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("eval report: ") + e.what());
  }
}

std::string export_distance_matrix(const std::vector<SpeakerVectorTable>& tables) {
  std::vector<std::string> labels;
  std::vector<Vec> rows;
  for (const SpeakerVectorTable& table : tables) {
    for (int j = 0; j < table.vectors.rows(); ++j) {
      labels.push_back(table.kind + ":" + std::to_string(j));
      rows.push_back(table.vectors.row_vec(j));
    }
  }
  const size_t n = rows.size();
  for (size_t i = 1; i < n; ++i)
    if (rows[i].size() != rows[0].size())
      throw ConfigError("export_distance_matrix: tables have different vector dims");

  // One triangle computed, mirrored; the diagonal is 0 by definition rather
  // than by round-trip through the distance formula.
  Matrix dist(static_cast<int>(n), static_cast<int>(n));
  for (size_t i = 0; i < n; ++i)
    for (size_t k = i + 1; k < n; ++k) {
      const double d = cosine_distance(rows[i], rows[k]);
      dist(static_cast<int>(i), static_cast<int>(k)) = d;
      dist(static_cast<int>(k), static_cast<int>(i)) = d;
    }

  std::ostringstream csv;
  csv << "label";
  for (const std::string& label : labels) csv << ',' << label;
  csv << '\n';
  for (size_t i = 0; i < n; ++i) {
    csv << labels[i];
    for (size_t k = 0; k < n; ++k)
      csv << ',' << format_double(dist(static_cast<int>(i), static_cast<int>(k)));
    csv << '\n';
  }
  return csv.str();
}

// ---------------------------------------------------------------------------
// Prior-generalization probe
// ---------------------------------------------------------------------------

namespace {

double mean_prior_logprob(const PriorNet& prior, const Matrix& table,
                          const std::vector<SpeakerMetadata>& speakers,
                          const std::vector<int>& half) {
  double acc = 0.0;
  for (int j : half) acc += prior_log_prob(prior, speakers[j], table.row_vec(j));
  return acc / static_cast<double>(half.size());
}

}  // namespace

std::vector<ProbeRecord> prior_generalization_probe(const Corpus& corpus,
                                                    const ProbeConfig& cfg,
                                                    uint64_t seed) {
  const int num_speakers = corpus.num_speakers();
  if (num_speakers < 4)
    throw ConfigError("prior_generalization_probe: need at least 4 speakers");
  if (cfg.steps <= 0 || cfg.batch_size <= 0 || cfg.checkpoint_interval <= 0)
    throw ConfigError("prior_generalization_probe: steps, batch size and interval must be positive");
  if (cfg.prior.dim != cfg.dims.speaker_dim)
    throw ConfigError("prior_generalization_probe: prior dim != speaker dim");

  // Split speakers once: a shuffled half the prior fits, a held-out half it
  // only ever scores.
  std::vector<int> order(num_speakers);
  std::iota(order.begin(), order.end(), 0);
  RngStream half_rng(seed, "probe-half");
  for (int i = num_speakers - 1; i > 0; --i) {
    const int k = static_cast<int>(half_rng.uniform_int(static_cast<uint64_t>(i) + 1));
    std::swap(order[i], order[k]);
  }
  const std::vector<int> train_half(order.begin(), order.begin() + num_speakers / 2);
  const std::vector<int> eval_half(order.begin() + num_speakers / 2, order.end());

  SynthDims dims = cfg.dims;
  dims.cond_width = one_hot_width(ConditioningSet{true, true}, corpus.header);
  SynthParams synth = make_synth_params(dims, seed);
  Matrix table = init_speaker_table(num_speakers, dims.speaker_dim, seed);
  PriorNet prior = make_prior_net(cfg.prior, corpus.header, seed);

  AdamState synth_adam, table_adam, prior_adam;
  synth_adam.init(synth_param_ptrs(synth).size(), cfg.adam);
  table_adam.init(table.size(), cfg.adam);
  prior_adam.init(prior_param_ptrs(prior).size(), cfg.adam);

  const StepContext ctx = make_step_context(corpus);
  const int num_utts = corpus.num_utterances();

  std::vector<ProbeRecord> records;
  for (int step = 0; step < cfg.steps; ++step) {
    RngStream batch_rng(seed, "batch", static_cast<uint64_t>(step));
    std::vector<int> batch(cfg.batch_size);
    for (int& b : batch)
      b = static_cast<int>(batch_rng.uniform_int(static_cast<uint64_t>(num_utts)));

    tacospawn_step(ctx, batch, synth, table, prior, synth_adam, table_adam,
                   prior_adam, /*compute_prior_term=*/true, &train_half);

    const bool at_interval = (step + 1) % cfg.checkpoint_interval == 0;
    if (at_interval || step + 1 == cfg.steps) {
      ProbeRecord rec;
      rec.step = step + 1;
      rec.train_half_logprob = mean_prior_logprob(prior, table, corpus.speakers, train_half);
      rec.eval_half_logprob = mean_prior_logprob(prior, table, corpus.speakers, eval_half);
      records.push_back(rec);
    }
  }
  return records;
}

std::string probe_records_to_jsonl(const std::vector<ProbeRecord>& records) {
  std::string out;
  for (const ProbeRecord& rec : records) {
    nlohmann::ordered_json j;
    j["step"] = rec.step;
    j["train_half_logprob"] = rec.train_half_logprob;
    j["eval_half_logprob"] = rec.eval_half_logprob;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace spawnlab
