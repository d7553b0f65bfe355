// spawnlab/experiment.cc

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

#include "spawnlab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "spawnlab/errors.hpp"
#include "spawnlab/jsonutil.hpp"
#include "spawnlab/rng.hpp"

namespace spawnlab {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Typed config field access; every schema violation is a ConfigError naming
// the offending block and key.
// ---------------------------------------------------------------------------

void check_keys(const json& obj, const std::string& block,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("config: unknown key \"" + key + "\" in " + block);
  }
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

long get_integer(const json& obj, const std::string& block, const char* key,
                 std::optional<long> def = std::nullopt) {
  const json* v = find(obj, key);
  if (!v) {
    if (def) return *def;
    throw ConfigError("config: " + block + " requires \"" + key + "\"");
  }
  if (!v->is_number_integer())
    throw ConfigError("config: " + block + "." + key + " must be an integer");
  return v->get<long>();
}

double get_number(const json& obj, const std::string& block, const char* key,
                  std::optional<double> def = std::nullopt) {
  const json* v = find(obj, key);
  if (!v) {
    if (def) return *def;
    throw ConfigError("config: " + block + " requires \"" + key + "\"");
  }
  if (!v->is_number())
    throw ConfigError("config: " + block + "." + key + " must be a number");
  return v->get<double>();
}

uint64_t get_seed(const json& obj, const std::string& block, const char* key,
                  std::optional<uint64_t> def = std::nullopt) {
  const json* v = find(obj, key);
  if (!v) {
    if (def) return *def;
    throw ConfigError("config: " + block + " requires an explicit \"" + key + "\"");
  }
  if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<long long>() < 0))
    throw ConfigError("config: " + block + "." + key + " must be a nonnegative integer");
  return v->get<uint64_t>();
}

bool get_bool(const json& obj, const std::string& block, const char* key, bool def) {
  const json* v = find(obj, key);
  if (!v) return def;
  if (!v->is_boolean())
    throw ConfigError("config: " + block + "." + key + " must be a boolean");
  return v->get<bool>();
}

std::vector<std::string> get_string_array(const json& obj, const std::string& block,
                                          const char* key) {
  const json* v = find(obj, key);
  if (!v) throw ConfigError("config: " + block + " requires \"" + key + "\"");
  if (!v->is_array())
    throw ConfigError("config: " + block + "." + key + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& x : *v) {
    if (!x.is_string())
      throw ConfigError("config: " + block + "." + key + " must be an array of strings");
    out.push_back(x.get<std::string>());
  }
  return out;
}

int positive_int(long value, const std::string& what) {
  if (value <= 0) throw ConfigError("config: " + what + " must be positive");
  return static_cast<int>(value);
}

CellMixtureConfig parse_cell(const json& obj, int index) {
  const std::string block = "corpus.cells[" + std::to_string(index) + "]";
  if (!obj.is_object()) throw ConfigError("config: " + block + " must be an object");
  check_keys(obj, block, {"locale", "gender", "weights", "means", "scales"});
  CellMixtureConfig cell;
  const json* locale = find(obj, "locale");
  const json* gender = find(obj, "gender");
  if (!locale || !locale->is_string() || !gender || !gender->is_string())
    throw ConfigError("config: " + block + " requires string locale and gender");
  cell.locale = locale->get<std::string>();
  cell.gender = gender->get<std::string>();
  const json* weights = find(obj, "weights");
  if (!weights) throw ConfigError("config: " + block + " requires \"weights\"");
  try {
    cell.weights = vec_from_json(*weights, block + ".weights");
    const json* means = find(obj, "means");
    const json* scales = find(obj, "scales");
    if (!means || !scales)
      throw ConfigError("config: " + block + " requires \"means\" and \"scales\"");
    cell.means = matrix_from_json(*means, block + ".means");
    cell.scales = matrix_from_json(*scales, block + ".scales");
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  return cell;
}

void parse_corpus_block(const json& obj, ExperimentConfig& cfg) {
  const std::string block = "corpus";
  check_keys(obj, block,
             {"num_speakers", "utterances_per_speaker", "vocab_size", "min_tokens",
              "max_tokens", "frame_dim", "token_embed_dim", "truth_dim", "locales",
              "genders", "cells", "cell_separation", "cell_scale", "noise_scale",
              "seed"});
  SynthConfig& c = cfg.corpus;
  c.num_speakers = positive_int(get_integer(obj, block, "num_speakers"), "corpus.num_speakers");
  c.utterances_per_speaker = positive_int(
      get_integer(obj, block, "utterances_per_speaker"), "corpus.utterances_per_speaker");
  c.vocab_size = positive_int(get_integer(obj, block, "vocab_size"), "corpus.vocab_size");
  c.min_tokens = positive_int(get_integer(obj, block, "min_tokens", 3), "corpus.min_tokens");
  c.max_tokens = positive_int(get_integer(obj, block, "max_tokens", 8), "corpus.max_tokens");
  if (c.max_tokens < c.min_tokens)
    throw ConfigError("config: corpus.max_tokens must be >= corpus.min_tokens");
  c.frame_dim = positive_int(get_integer(obj, block, "frame_dim"), "corpus.frame_dim");
  c.token_embed_dim =
      positive_int(get_integer(obj, block, "token_embed_dim", 4), "corpus.token_embed_dim");
  c.truth_dim = positive_int(get_integer(obj, block, "truth_dim"), "corpus.truth_dim");
  c.locales = get_string_array(obj, block, "locales");
  c.genders = get_string_array(obj, block, "genders");
  c.noise_scale = get_number(obj, block, "noise_scale", 0.0);
  if (c.noise_scale < 0.0) throw ConfigError("config: corpus.noise_scale must be >= 0");
  cfg.corpus_seed = get_seed(obj, block, "seed");

  const json* cells = find(obj, "cells");
  if (cells) {
    if (find(obj, "cell_separation") || find(obj, "cell_scale"))
      throw ConfigError(
          "config: corpus.cells and cell_separation/cell_scale are mutually exclusive");
    if (!cells->is_array() || cells->empty())
      throw ConfigError("config: corpus.cells must be a nonempty array");
    for (size_t i = 0; i < cells->size(); ++i)
      c.cells.push_back(parse_cell((*cells)[i], static_cast<int>(i)));
  } else {
    const double separation = get_number(obj, block, "cell_separation", 4.0);
    const double scale = get_number(obj, block, "cell_scale", 0.5);
    if (separation < 0.0) throw ConfigError("config: corpus.cell_separation must be >= 0");
    if (scale <= 0.0) throw ConfigError("config: corpus.cell_scale must be positive");
    c.cells = make_separated_cells(c.locales, c.genders, c.truth_dim, separation, scale,
                                   cfg.corpus_seed);
  }
  cfg.has_corpus = true;
}

void parse_vb_block(const json& obj, ExperimentConfig& cfg) {
  const std::string block = "vb";
  check_keys(obj, block,
             {"kl_target", "beta", "eta", "omega_lr_rescale", "posterior_sigma_init"});
  const json* target = find(obj, "kl_target");
  const json* beta = find(obj, "beta");
  if ((target == nullptr) == (beta == nullptr))
    throw ConfigError("config: vb requires exactly one of \"kl_target\" / \"beta\"");
  if (target) {
    if (target->is_number()) {
      cfg.kl_targets = {target->get<double>()};
    } else if (target->is_array() && !target->empty()) {
      for (const auto& x : *target) {
        if (!x.is_number())
          throw ConfigError("config: vb.kl_target must be a number or array of numbers");
        cfg.kl_targets.push_back(x.get<double>());
      }
    } else {
      throw ConfigError("config: vb.kl_target must be a number or nonempty array");
    }
    for (double t : cfg.kl_targets)
      if (!(t > 0.0)) throw ConfigError("config: vb.kl_target values must be positive");
    for (size_t i = 0; i < cfg.kl_targets.size(); ++i)
      for (size_t k = i + 1; k < cfg.kl_targets.size(); ++k)
        if (kl_target_dir_name(cfg.kl_targets[i]) == kl_target_dir_name(cfg.kl_targets[k]))
          throw ConfigError("config: vb.kl_target values must be distinct");
  } else {
    if (beta->is_string()) {
      if (beta->get<std::string>() != "strict-bayes")
        throw ConfigError("config: vb.beta must be a positive number or \"strict-bayes\"");
      cfg.strict_bayes = true;
    } else if (beta->is_number() && beta->get<double>() > 0.0) {
      cfg.fixed_beta = beta->get<double>();
    } else {
      throw ConfigError("config: vb.beta must be a positive number or \"strict-bayes\"");
    }
  }
  cfg.eta = get_number(obj, block, "eta", 1e-3);
  if (!(cfg.eta > 0.0)) throw ConfigError("config: vb.eta must be positive");
  cfg.omega_lr_rescale = get_bool(obj, block, "omega_lr_rescale", false);
  cfg.posterior_sigma_init = get_number(obj, block, "posterior_sigma_init", 0.1);
  if (!(cfg.posterior_sigma_init > 0.0))
    throw ConfigError("config: vb.posterior_sigma_init must be positive");
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!root.is_object()) throw ParseError("config: top level must be an object");

  try {
    check_keys(root, "top level",
               {"corpus", "model", "objective", "vb", "prior", "train", "eval"});

    ExperimentConfig cfg;

    if (const json* corpus = find(root, "corpus")) {
      if (!corpus->is_object()) throw ConfigError("config: corpus must be an object");
      parse_corpus_block(*corpus, cfg);
    }

    const json empty_obj = json::object();
    const json* model = find(root, "model");
    if (model && !model->is_object()) throw ConfigError("config: model must be an object");
    const json& m = model ? *model : empty_obj;
    check_keys(m, "model",
               {"token_embed_dim", "hidden", "speaker_dim", "extractor_dim",
                "extractor_seed"});
    cfg.model_token_embed_dim =
        positive_int(get_integer(m, "model", "token_embed_dim", 8), "model.token_embed_dim");
    cfg.model_hidden = positive_int(get_integer(m, "model", "hidden", 32), "model.hidden");
    cfg.speaker_dim =
        positive_int(get_integer(m, "model", "speaker_dim", 8), "model.speaker_dim");
    cfg.extractor_dim =
        positive_int(get_integer(m, "model", "extractor_dim", 16), "model.extractor_dim");
    cfg.extractor_seed = get_seed(m, "model", "extractor_seed", uint64_t{0});

    const json* objective = find(root, "objective");
    if (!objective || !objective->is_string())
      throw ConfigError("config: requires \"objective\" (tacospawn or vb)");
    cfg.objective = objective->get<std::string>();
    if (cfg.objective != "tacospawn" && cfg.objective != "vb")
      throw ConfigError("config: objective must be \"tacospawn\" or \"vb\"");

    const json* vb = find(root, "vb");
    if (cfg.objective == "vb") {
      if (!vb || !vb->is_object())
        throw ConfigError("config: objective \"vb\" requires a vb block");
      parse_vb_block(*vb, cfg);
    } else if (vb) {
      throw ConfigError("config: vb block requires objective \"vb\"");
    }

    const json* prior = find(root, "prior");
    if (prior && !prior->is_object()) throw ConfigError("config: prior must be an object");
    const json& p = prior ? *prior : empty_obj;
    check_keys(p, "prior", {"num_components", "hidden", "sigma_floor", "conditioning"});
    cfg.prior_components =
        positive_int(get_integer(p, "prior", "num_components", 10), "prior.num_components");
    cfg.prior_hidden = positive_int(get_integer(p, "prior", "hidden", 32), "prior.hidden");
    cfg.prior_sigma_floor = get_number(p, "prior", "sigma_floor", 1e-3);
    if (!(cfg.prior_sigma_floor > 0.0))
      throw ConfigError("config: prior.sigma_floor must be positive");
    if (find(p, "conditioning"))
      cfg.conditioning =
          ConditioningSet::from_strings(get_string_array(p, "prior", "conditioning"));

    const json* train = find(root, "train");
    if (!train || !train->is_object())
      throw ConfigError("config: requires a train block");
    check_keys(*train, "train", {"steps", "batch_size", "lr", "seed", "checkpoint_interval"});
    cfg.steps = get_integer(*train, "train", "steps", 5000);
    if (cfg.steps <= 0) throw ConfigError("config: train.steps must be positive");
    cfg.batch_size =
        positive_int(get_integer(*train, "train", "batch_size", 32), "train.batch_size");
    cfg.lr = get_number(*train, "train", "lr", 1e-3);
    if (!(cfg.lr > 0.0)) throw ConfigError("config: train.lr must be positive");
    cfg.train_seed = get_seed(*train, "train", "seed");
    cfg.checkpoint_interval = get_integer(*train, "train", "checkpoint_interval", 500);
    if (cfg.checkpoint_interval <= 0)
      throw ConfigError("config: train.checkpoint_interval must be positive");

    const json* eval = find(root, "eval");
    if (!eval || !eval->is_object()) throw ConfigError("config: requires an eval block");
    check_keys(*eval, "eval", {"fraction", "seed"});
    cfg.eval_fraction = get_number(*eval, "eval", "fraction", 0.1);
    if (!(cfg.eval_fraction > 0.0 && cfg.eval_fraction < 1.0))
      throw ConfigError("config: eval.fraction must be in (0, 1)");
    cfg.eval_seed = get_seed(*eval, "eval", "seed");

    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

std::string canonical_config_json(const ExperimentConfig& cfg) {
  ordered_json root;
  if (cfg.has_corpus) {
    ordered_json c;
    c["num_speakers"] = cfg.corpus.num_speakers;
    c["utterances_per_speaker"] = cfg.corpus.utterances_per_speaker;
    c["vocab_size"] = cfg.corpus.vocab_size;
    c["min_tokens"] = cfg.corpus.min_tokens;
    c["max_tokens"] = cfg.corpus.max_tokens;
    c["frame_dim"] = cfg.corpus.frame_dim;
    c["token_embed_dim"] = cfg.corpus.token_embed_dim;
    c["truth_dim"] = cfg.corpus.truth_dim;
    c["locales"] = cfg.corpus.locales;
    c["genders"] = cfg.corpus.genders;
    ordered_json cells = ordered_json::array();
    for (const CellMixtureConfig& cell : cfg.corpus.cells) {
      ordered_json jc;
      jc["locale"] = cell.locale;
      jc["gender"] = cell.gender;
      jc["weights"] = vec_to_json(cell.weights);
      jc["means"] = matrix_to_json(cell.means);
      jc["scales"] = matrix_to_json(cell.scales);
      cells.push_back(std::move(jc));
    }
    c["cells"] = std::move(cells);
    c["noise_scale"] = cfg.corpus.noise_scale;
    c["seed"] = cfg.corpus_seed;
    root["corpus"] = std::move(c);
  }

  ordered_json m;
  m["token_embed_dim"] = cfg.model_token_embed_dim;
  m["hidden"] = cfg.model_hidden;
  m["speaker_dim"] = cfg.speaker_dim;
  m["extractor_dim"] = cfg.extractor_dim;
  m["extractor_seed"] = cfg.extractor_seed;
  root["model"] = std::move(m);

  root["objective"] = cfg.objective;

  if (cfg.objective == "vb") {
    ordered_json v;
    if (!cfg.kl_targets.empty()) {
      v["kl_target"] = cfg.kl_targets;
    } else if (cfg.strict_bayes) {
      v["beta"] = "strict-bayes";
    } else {
      v["beta"] = *cfg.fixed_beta;
    }
    v["eta"] = cfg.eta;
    v["omega_lr_rescale"] = cfg.omega_lr_rescale;
    v["posterior_sigma_init"] = cfg.posterior_sigma_init;
    root["vb"] = std::move(v);
  }

  ordered_json p;
  p["num_components"] = cfg.prior_components;
  p["hidden"] = cfg.prior_hidden;
  p["sigma_floor"] = cfg.prior_sigma_floor;
  p["conditioning"] = cfg.conditioning.to_strings();
  root["prior"] = std::move(p);

  ordered_json t;
  t["steps"] = cfg.steps;
  t["batch_size"] = cfg.batch_size;
  t["lr"] = cfg.lr;
  t["seed"] = cfg.train_seed;
  t["checkpoint_interval"] = cfg.checkpoint_interval;
  root["train"] = std::move(t);

  ordered_json e;
  e["fraction"] = cfg.eval_fraction;
  e["seed"] = cfg.eval_seed;
  root["eval"] = std::move(e);

  return root.dump(2) + "\n";
}

std::string config_digest(const ExperimentConfig& cfg) {
  return format_hex16(fnv1a64(canonical_config_json(cfg)));
}

std::string kl_target_dir_name(double kl_target) {
  return "kl_" + format_double(kl_target);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

TrainerState init_trainer(const ExperimentConfig& cfg, const Corpus& train_corpus,
                          std::optional<double> kl_target) {
  TrainerState st;
  st.cfg = cfg;

  const CorpusHeader& header = train_corpus.header;
  SynthDims dims;
  dims.vocab_size = header.vocab_size;
  dims.token_embed_dim = cfg.model_token_embed_dim;
  dims.hidden = cfg.model_hidden;
  dims.frame_dim = header.frame_dim;
  dims.speaker_dim = cfg.speaker_dim;
  dims.cond_width = one_hot_width(ConditioningSet{true, true}, header);

  const int num_speakers = train_corpus.num_speakers();
  if (num_speakers == 0) throw ConfigError("trainer: corpus has no speakers");

  st.synth = make_synth_params(dims, cfg.train_seed);
  st.prior = make_prior_net(
      PriorNetConfig{cfg.prior_components, cfg.speaker_dim, cfg.prior_hidden,
                     cfg.prior_sigma_floor, cfg.conditioning},
      header, cfg.train_seed);
  st.extractor = make_extractor(cfg.extractor_dim, header.frame_dim, cfg.extractor_seed);

  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  st.synth_adam.init(synth_param_ptrs(st.synth).size(), adam);
  st.prior_adam.init(prior_param_ptrs(st.prior).size(), adam);

  if (cfg.objective == "tacospawn") {
    st.table = init_speaker_table(num_speakers, cfg.speaker_dim, cfg.train_seed);
    st.emb_adam.init(st.table.size(), adam);
    return st;
  }

  st.posterior = make_posterior_table(num_speakers, cfg.speaker_dim,
                                      cfg.posterior_sigma_init, cfg.train_seed);
  st.emb_adam.init(posterior_param_ptrs(st.posterior).size(), adam);

  if (kl_target) {
    st.kl_target = *kl_target;
    if (!(st.kl_target > 0.0)) throw ConfigError("trainer: kl_target must be positive");
  } else if (cfg.kl_targets.size() == 1) {
    st.kl_target = cfg.kl_targets[0];
  } else if (cfg.kl_targets.size() > 1) {
    throw ConfigError("trainer: sweep config needs an explicit kl_target per run");
  }

  if (st.kl_target >= 0.0) {
    st.ctrl.kl_target = st.kl_target;
    st.ctrl.eta = cfg.eta;
    // beta starts tiny so the controller approaches a binding target from
    // above (its fast direction): crushing KL with large beta is quick, but
    // recovering from an early crush is rate-limited by how fast synthesis
    // gradients re-sharpen the posteriors.
    st.ctrl.lambda = softplus_inverse(1e-3);
  } else if (cfg.strict_bayes) {
    // One utterance is one observation: beta = J / I over the training split.
    st.resolved_beta = static_cast<double>(num_speakers) /
                       static_cast<double>(train_corpus.num_utterances());
  } else {
    st.resolved_beta = *cfg.fixed_beta;
  }
  return st;
}

StepLogEntry trainer_step(TrainerState& st, const StepContext& ctx) {
  if (!ctx.corpus) throw ConfigError("trainer: step context has no corpus");
  const long step = st.step;
  RngStream batch_rng(st.cfg.train_seed, "batch", static_cast<uint64_t>(step));
  std::vector<int> batch(st.cfg.batch_size);
  for (int& b : batch)
    b = static_cast<int>(
        batch_rng.uniform_int(static_cast<uint64_t>(ctx.corpus->num_utterances())));

  StepLogEntry entry;
  entry.step = step + 1;
  if (!st.is_vb()) {
    const TacoStepResult res = tacospawn_step(ctx, batch, st.synth, st.table, st.prior,
                                              st.synth_adam, st.emb_adam, st.prior_adam);
    entry.synth_loss = res.synth_loss;
    entry.prior_nll = res.prior_nll;
  } else {
    RngStream reparam(st.cfg.train_seed, "reparam", static_cast<uint64_t>(step));
    RngStream kl(st.cfg.train_seed, "kl", static_cast<uint64_t>(step));
    BetaController* ctrl = st.uses_controller() ? &st.ctrl : nullptr;
    const double beta_now = ctrl ? st.ctrl.beta() : st.resolved_beta;
    const double omega_scale = st.cfg.omega_lr_rescale ? 1.0 / beta_now : 1.0;
    const VbStepResult res =
        vb_step(ctx, batch, st.synth, st.posterior, st.prior, reparam, kl, st.synth_adam,
                st.emb_adam, st.prior_adam, ctrl, st.resolved_beta, omega_scale);
    entry.synth_loss = res.synth_loss;
    entry.kl_actual = res.kl_actual;
    entry.beta = res.beta;
  }
  st.step = step + 1;
  return entry;
}

std::string step_log_line(const TrainerState& st, const StepLogEntry& entry) {
  ordered_json j;
  j["step"] = entry.step;
  j["synth_loss"] = entry.synth_loss;
  if (st.is_vb()) {
    j["kl_actual"] = entry.kl_actual;
    j["beta"] = entry.beta;
  } else {
    j["prior_nll"] = entry.prior_nll;
  }
  return j.dump();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointSchema = "spawnlab-checkpoint-v1";

ordered_json adam_to_json(const AdamState& a) {
  ordered_json j;
  j["m"] = vec_to_json(a.m);
  j["v"] = vec_to_json(a.v);
  j["step"] = a.step;
  return j;
}

AdamState adam_from_json(const json& j, const AdamConfig& cfg, const std::string& what) {
  AdamState a;
  a.cfg = cfg;
  a.m = vec_from_json(j.at("m"), what + ".m");
  a.v = vec_from_json(j.at("v"), what + ".v");
  a.step = j.at("step").get<long>();
  if (a.m.size() != a.v.size()) throw ParseError(what + ": m/v size mismatch");
  return a;
}

}  // namespace

std::string checkpoint_to_json(const TrainerState& st) {
  ordered_json ck;
  ck["schema"] = kCheckpointSchema;
  ck["config"] = ordered_json::parse(canonical_config_json(st.cfg));
  ck["config_digest"] = config_digest(st.cfg);
  ck["step"] = st.step;
  ck["kl_target"] = st.kl_target;
  ck["resolved_beta"] = st.resolved_beta;
  ck["lambda"] = st.ctrl.lambda;

  ordered_json synth;
  ordered_json dims;
  dims["vocab_size"] = st.synth.dims.vocab_size;
  dims["token_embed_dim"] = st.synth.dims.token_embed_dim;
  dims["hidden"] = st.synth.dims.hidden;
  dims["frame_dim"] = st.synth.dims.frame_dim;
  dims["speaker_dim"] = st.synth.dims.speaker_dim;
  dims["cond_width"] = st.synth.dims.cond_width;
  synth["dims"] = std::move(dims);
  synth["token_embed"] = matrix_to_json(st.synth.token_embed);
  synth["w_hidden"] = matrix_to_json(st.synth.w_hidden);
  synth["b_hidden"] = vec_to_json(st.synth.b_hidden);
  synth["w_out"] = matrix_to_json(st.synth.w_out);
  synth["b_out"] = vec_to_json(st.synth.b_out);
  ck["synth"] = std::move(synth);

  if (st.is_vb()) {
    ordered_json q;
    q["mu"] = matrix_to_json(st.posterior.mu);
    q["rho"] = matrix_to_json(st.posterior.rho);
    ck["posterior"] = std::move(q);
  } else {
    ck["table"] = matrix_to_json(st.table);
  }

  ordered_json prior;
  prior["num_components"] = st.prior.cfg.num_components;
  prior["dim"] = st.prior.cfg.dim;
  prior["hidden"] = st.prior.cfg.hidden;
  prior["sigma_floor"] = st.prior.cfg.sigma_floor;
  prior["conditioning"] = st.prior.cfg.conditioning.to_strings();
  prior["locales"] = st.prior.locales;
  prior["genders"] = st.prior.genders;
  prior["w_hidden"] = matrix_to_json(st.prior.w_hidden);
  prior["b_hidden"] = vec_to_json(st.prior.b_hidden);
  prior["w_alpha"] = matrix_to_json(st.prior.w_alpha);
  prior["b_alpha"] = vec_to_json(st.prior.b_alpha);
  prior["w_mean"] = matrix_to_json(st.prior.w_mean);
  prior["b_mean"] = vec_to_json(st.prior.b_mean);
  prior["w_scale"] = matrix_to_json(st.prior.w_scale);
  prior["b_scale"] = vec_to_json(st.prior.b_scale);
  ck["prior"] = std::move(prior);

  ordered_json ex;
  ex["out_dim"] = st.extractor.out_dim;
  ex["frame_dim"] = st.extractor.frame_dim;
  ex["seed"] = st.extractor.seed;
  ck["extractor"] = std::move(ex);

  ordered_json adam;
  adam["synth"] = adam_to_json(st.synth_adam);
  adam["embedding"] = adam_to_json(st.emb_adam);
  adam["prior"] = adam_to_json(st.prior_adam);
  ck["adam"] = std::move(adam);

  return ck.dump(2) + "\n";
}

TrainerState checkpoint_from_json(const std::string& text) {
  json ck;
  try {
    ck = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (ck.at("schema").get<std::string>() != kCheckpointSchema)
      throw ParseError("checkpoint: unknown schema");

    TrainerState st;
    st.cfg = parse_experiment_config(ck.at("config").dump());
    st.step = ck.at("step").get<long>();
    st.kl_target = ck.at("kl_target").get<double>();
    st.resolved_beta = ck.at("resolved_beta").get<double>();
    st.ctrl.lambda = ck.at("lambda").get<double>();
    st.ctrl.kl_target = st.kl_target >= 0.0 ? st.kl_target : 0.0;
    st.ctrl.eta = st.cfg.eta;

    const json& synth = ck.at("synth");
    const json& dims = synth.at("dims");
    st.synth.dims.vocab_size = dims.at("vocab_size").get<int>();
    st.synth.dims.token_embed_dim = dims.at("token_embed_dim").get<int>();
    st.synth.dims.hidden = dims.at("hidden").get<int>();
    st.synth.dims.frame_dim = dims.at("frame_dim").get<int>();
    st.synth.dims.speaker_dim = dims.at("speaker_dim").get<int>();
    st.synth.dims.cond_width = dims.at("cond_width").get<int>();
    st.synth.token_embed = matrix_from_json(synth.at("token_embed"), "synth.token_embed");
    st.synth.w_hidden = matrix_from_json(synth.at("w_hidden"), "synth.w_hidden");
    st.synth.b_hidden = vec_from_json(synth.at("b_hidden"), "synth.b_hidden");
    st.synth.w_out = matrix_from_json(synth.at("w_out"), "synth.w_out");
    st.synth.b_out = vec_from_json(synth.at("b_out"), "synth.b_out");

    if (st.cfg.objective == "vb") {
      const json& q = ck.at("posterior");
      st.posterior.mu = matrix_from_json(q.at("mu"), "posterior.mu");
      st.posterior.rho = matrix_from_json(q.at("rho"), "posterior.rho");
    } else {
      st.table = matrix_from_json(ck.at("table"), "table");
    }

    const json& prior = ck.at("prior");
    st.prior.cfg.num_components = prior.at("num_components").get<int>();
    st.prior.cfg.dim = prior.at("dim").get<int>();
    st.prior.cfg.hidden = prior.at("hidden").get<int>();
    st.prior.cfg.sigma_floor = prior.at("sigma_floor").get<double>();
    st.prior.cfg.conditioning =
        ConditioningSet::from_strings(prior.at("conditioning").get<std::vector<std::string>>());
    st.prior.locales = prior.at("locales").get<std::vector<std::string>>();
    st.prior.genders = prior.at("genders").get<std::vector<std::string>>();
    st.prior.w_hidden = matrix_from_json(prior.at("w_hidden"), "prior.w_hidden");
    st.prior.b_hidden = vec_from_json(prior.at("b_hidden"), "prior.b_hidden");
    st.prior.w_alpha = matrix_from_json(prior.at("w_alpha"), "prior.w_alpha");
    st.prior.b_alpha = vec_from_json(prior.at("b_alpha"), "prior.b_alpha");
    st.prior.w_mean = matrix_from_json(prior.at("w_mean"), "prior.w_mean");
    st.prior.b_mean = vec_from_json(prior.at("b_mean"), "prior.b_mean");
    st.prior.w_scale = matrix_from_json(prior.at("w_scale"), "prior.w_scale");
    st.prior.b_scale = vec_from_json(prior.at("b_scale"), "prior.b_scale");

    const json& ex = ck.at("extractor");
    st.extractor = make_extractor(ex.at("out_dim").get<int>(), ex.at("frame_dim").get<int>(),
                                  ex.at("seed").get<uint64_t>());

    const AdamConfig adam{st.cfg.lr, 0.9, 0.999, 1e-8};
    st.synth_adam = adam_from_json(ck.at("adam").at("synth"), adam, "adam.synth");
    st.emb_adam = adam_from_json(ck.at("adam").at("embedding"), adam, "adam.embedding");
    st.prior_adam = adam_from_json(ck.at("adam").at("prior"), adam, "adam.prior");
    return st;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TrainerState& st, const std::string& path) {
  // Write-then-rename keeps the previous checkpoint intact if we die midway.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ConfigError("cannot write checkpoint: " + tmp);
    out << checkpoint_to_json(st);
  }
  fs::rename(tmp, path);
}

TrainerState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

std::string run_gen_data(const ExperimentConfig& cfg, const std::string& out_dir) {
  if (!cfg.has_corpus)
    throw ConfigError("gen-data: config has no corpus block");
  const Corpus corpus = generate_synthetic_corpus(cfg.corpus, cfg.corpus_seed);
  fs::create_directories(out_dir);
  save_corpus(corpus, out_dir);

  std::ostringstream msg;
  msg << "corpus: " << corpus.num_speakers() << " speakers, " << corpus.num_utterances()
      << " utterances, vocab " << corpus.header.vocab_size << ", frame_dim "
      << corpus.header.frame_dim << ", locales";
  for (const std::string& l : corpus.header.locales) msg << " " << l;
  msg << ", genders";
  for (const std::string& g : corpus.header.genders) msg << " " << g;
  return msg.str();
}

namespace {

// Drops log records past the checkpoint step so a resumed run's log matches
// an uninterrupted one byte-for-byte.
void truncate_log_to_step(const std::string& path, long step) {
  std::ifstream in(path);
  if (!in) return;  // no log yet, nothing to truncate
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      break;  // partial trailing write; drop it and everything after
    }
    if (!j.contains("step") || j.at("step").get<long>() > step) break;
    kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const std::string& l : kept) out << l << "\n";
}

void run_train_single(const ExperimentConfig& cfg, const Corpus& train_corpus,
                      const std::string& dir, std::optional<double> kl_target,
                      bool resume) {
  fs::create_directories(dir);
  const std::string config_path = dir + "/config.json";
  const std::string log_path = dir + "/log.jsonl";
  const std::string ckpt_path = dir + "/checkpoint.json";

  TrainerState st;
  if (resume && fs::exists(ckpt_path)) {
    st = load_checkpoint(ckpt_path);
    if (config_digest(st.cfg) != config_digest(cfg))
      throw ConfigError("resume: checkpoint config digest does not match --config");
    const double want = kl_target ? *kl_target
                        : (cfg.kl_targets.size() == 1 ? cfg.kl_targets[0] : -1.0);
    if (st.kl_target != want)
      throw ConfigError("resume: checkpoint kl_target does not match this run");
    truncate_log_to_step(log_path, st.step);
  } else {
    st = init_trainer(cfg, train_corpus, kl_target);
    std::ofstream(log_path, std::ios::trunc);
  }

  {
    std::ofstream cfg_out(config_path, std::ios::trunc);
    if (!cfg_out) throw ConfigError("cannot write " + config_path);
    cfg_out << canonical_config_json(cfg);
  }

  const StepContext ctx = make_step_context(train_corpus);
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw ConfigError("cannot write " + log_path);

  if (st.step >= cfg.steps && !fs::exists(ckpt_path)) save_checkpoint(st, ckpt_path);
  while (st.step < cfg.steps) {
    const StepLogEntry entry = trainer_step(st, ctx);
    log << step_log_line(st, entry) << "\n";
    if (st.step % cfg.checkpoint_interval == 0 || st.step == cfg.steps) {
      log.flush();
      save_checkpoint(st, ckpt_path);
    }
  }
}

}  // namespace

void run_train(const ExperimentConfig& cfg, const std::string& corpus_dir,
               const std::string& out_dir, bool resume) {
  const Corpus full = load_corpus(corpus_dir);
  const auto [train_corpus, eval_corpus] = split_eval(full, cfg.eval_fraction, cfg.eval_seed);
  (void)eval_corpus;

  if (cfg.objective == "vb" && cfg.kl_targets.size() > 1) {
    for (double target : cfg.kl_targets)
      run_train_single(cfg, train_corpus, out_dir + "/" + kl_target_dir_name(target),
                       target, resume);
  } else {
    run_train_single(cfg, train_corpus, out_dir, std::nullopt, resume);
  }
}

std::vector<Vec> spawn_speakers(const TrainerState& st, const std::string& locale,
                                const std::string& gender, int n, double temperature,
                                uint64_t seed) {
  if (n <= 0) throw ConfigError("spawn: need n >= 1");
  const auto& locales = st.prior.locales;
  const auto& genders = st.prior.genders;
  if (std::find(locales.begin(), locales.end(), locale) == locales.end())
    throw ConfigError("spawn: unknown locale \"" + locale + "\"");
  if (std::find(genders.begin(), genders.end(), gender) == genders.end())
    throw ConfigError("spawn: unknown gender \"" + gender + "\"");

  SpeakerMetadata c;
  c.locale = locale;
  c.gender = gender;
  RngStream rng(seed, "spawn");
  std::vector<Vec> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(sample_speaker(st.prior, c, temperature, rng));
  return out;
}

std::string spawn_to_json(const TrainerState& st, const std::string& locale,
                          const std::string& gender, double temperature,
                          uint64_t seed, const std::vector<Vec>& embeddings) {
  ordered_json j;
  j["config_digest"] = config_digest(st.cfg);
  j["locale"] = locale;
  j["gender"] = gender;
  j["temperature"] = temperature;
  j["seed"] = seed;
  ordered_json rows = ordered_json::array();
  for (const Vec& e : embeddings) rows.push_back(ordered_json(vec_to_json(e)));
  j["embeddings"] = std::move(rows);
  return j.dump(2) + "\n";
}

EvalReport run_eval(const TrainerState& st, const Corpus& full_corpus, uint64_t seed,
                    std::string* distances_csv) {
  const auto [train_corpus, eval_corpus] =
      split_eval(full_corpus, st.cfg.eval_fraction, st.cfg.eval_seed);
  (void)train_corpus;

  EvalModel model;
  model.synth = &st.synth;
  model.prior = &st.prior;
  if (st.is_vb())
    model.posterior = &st.posterior;
  else
    model.table = &st.table;

  const EvalReport report =
      eval_report(eval_corpus, model, st.extractor, seed, config_digest(st.cfg));

  if (distances_csv) {
    const SpeakerVectorTable s =
        speaker_level_vectors("s", eval_corpus, model, st.extractor, seed);
    const SpeakerVectorTable g =
        speaker_level_vectors("g", eval_corpus, model, st.extractor, seed);
    *distances_csv = export_distance_matrix({s, g});
  }
  return report;
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%10s %8s %8s %8s %8s\n", "s2t-same", "s2t", "s2s",
                "g2s", "g2g");
  out << buf;
  std::snprintf(buf, sizeof buf, "%10.4f %8.4f %8.4f %8.4f %8.4f\n", report.s2t_same,
                report.s2t, report.s2s, report.g2s, report.g2g);
  out << buf;
  return out.str();
}

std::string run_probe(const ExperimentConfig& cfg, const Corpus& corpus) {
  ProbeConfig pc;
  pc.dims.vocab_size = corpus.header.vocab_size;
  pc.dims.token_embed_dim = cfg.model_token_embed_dim;
  pc.dims.hidden = cfg.model_hidden;
  pc.dims.frame_dim = corpus.header.frame_dim;
  pc.dims.speaker_dim = cfg.speaker_dim;
  pc.prior = PriorNetConfig{cfg.prior_components, cfg.speaker_dim, cfg.prior_hidden,
                            cfg.prior_sigma_floor, cfg.conditioning};
  pc.adam = AdamConfig{cfg.lr, 0.9, 0.999, 1e-8};
  pc.steps = static_cast<int>(cfg.steps);
  pc.batch_size = cfg.batch_size;
  pc.checkpoint_interval = static_cast<int>(cfg.checkpoint_interval);

  const std::vector<ProbeRecord> records =
      prior_generalization_probe(corpus, pc, cfg.train_seed);

  ordered_json echo;
  echo["config"] = ordered_json::parse(canonical_config_json(cfg));
  echo["config_digest"] = config_digest(cfg);
  return echo.dump() + "\n" + probe_records_to_jsonl(records);
}

}  // namespace spawnlab
