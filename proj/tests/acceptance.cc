// spawnlab/tests/acceptance.cc

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

// End-to-end acceptance suite. Exercises the shipped configs plus a battery
// of in-process micro-instances, prints exactly one PASS/FAIL line per
// numbered criterion, and exits nonzero when any criterion fails.
//
//   1. Generated speakers blend in: on the reference corpus, g2s and g2g
//      match s2s within 0.05 and s2t-same < s2t, inside a 10-minute budget.
//   2. Capacity sweep trends: as kl_target drops, s2t-same is non-decreasing
//      and s2s is non-increasing across the three sweep runs.
//   3. beta -> 0 recovers the joint objective's synthesis loss within 1e-3
//      after 500 steps from shared initialization.
//   4. Closed-loop beta holds the 100-step trailing mean of the KL within
//      +/-15% of every sweep target over the whole second half of training.
//   5. The half-corpus generalization probe ends with the fitted-half and
//      held-out-half mean prior log-probs within 0.5 nats.
//   6. median_min_distance / median_same_distance agree exactly with a
//      brute-force double loop on 200 random tables up to 50x16.
//   7. Mixture log-densities match hand-computed Gaussian values to 1e-6 and
//      integrate to 1 within 1e-4 (1-D Simpson quadrature).
//   8. Finite-difference checks on synth_nll, prior_nll_loss, and the full
//      variational objective pass at 1e-4 on 20 random instances each.
//   9. Synthesizer and embedding-table trajectories are bit-identical with
//      the prior term enabled and disabled (stop-gradient contract).
//  10. A full gen-data -> train -> eval pipeline repeated with the same seeds
//      produces byte-identical outputs.
//
// Usage: acceptance <configs-dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spawnlab/corpus.hpp"
#include "spawnlab/errors.hpp"
#include "spawnlab/evalmetrics.hpp"
#include "spawnlab/experiment.hpp"
#include "spawnlab/matrix.hpp"
#include "spawnlab/prior.hpp"
#include "spawnlab/rng.hpp"
#include "spawnlab/synth.hpp"
#include "spawnlab/train.hpp"
#include "testutil.hpp"

using namespace spawnlab;
using spawnlab::testing::two_cluster_config;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

// Runs one criterion body; an escaped exception scores as FAIL, not a crash.
template <typename Fn>
void criterion(int number, Fn body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(number, false, std::string("unexpected exception: ") + e.what());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream out;
  out << std::setprecision(precision) << x;
  return out.str();
}

// Model sized to a two_cluster_config corpus (V=12, F=8, 2 locales + 1
// gender); speaker dim and hidden width are free.
SynthDims tiny_dims(int speaker_dim, int hidden = 16) {
  SynthDims dims;
  dims.vocab_size = 12;
  dims.token_embed_dim = 4;
  dims.hidden = hidden;
  dims.frame_dim = 8;
  dims.speaker_dim = speaker_dim;
  dims.cond_width = 3;
  return dims;
}

std::vector<int> draw_batch(const Corpus& corpus, int size, uint64_t seed, uint64_t step) {
  RngStream rng(seed, "batch", step);
  std::vector<int> batch(size);
  for (int& b : batch)
    b = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(corpus.num_utterances())));
  return batch;
}

Matrix random_table(int rows, int cols, uint64_t seed, uint64_t counter) {
  RngStream rng(seed, "accept-table", counter);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

// Independent double-loop implementations of the two metric reductions,
// using the same even-count median convention (mean of the two central
// order statistics) so agreement can be demanded bit-for-bit.
double brute_median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double brute_median_min(const Matrix& a, const Matrix& b, bool exclude) {
  std::vector<double> mins;
  for (int j = 0; j < a.rows(); ++j) {
    double best = 1e300;
    for (int k = 0; k < b.rows(); ++k) {
      if (exclude && k == j) continue;
      best = std::min(best, cosine_distance(a.row_vec(j), b.row_vec(k)));
    }
    mins.push_back(best);
  }
  return brute_median(mins);
}

double brute_median_same(const Matrix& a, const Matrix& b) {
  std::vector<double> aligned;
  for (int j = 0; j < a.rows(); ++j)
    aligned.push_back(cosine_distance(a.row_vec(j), b.row_vec(j)));
  return brute_median(aligned);
}

// Trailing-`window` means of `series` for 1-based steps in (half, steps];
// returns the min and max over those windows plus the out-of-band count.
struct TrailingStats {
  double lo = 1e300;
  double hi = -1e300;
  int violations = 0;
};

TrailingStats trailing_window_stats(const std::vector<double>& series, int window,
                                    double band_lo, double band_hi) {
  TrailingStats stats;
  const size_t half = series.size() / 2;
  double sum = 0.0;
  for (size_t t = 0; t < series.size(); ++t) {
    sum += series[t];
    if (t >= static_cast<size_t>(window)) sum -= series[t - window];
    if (t + 1 <= half || t + 1 < static_cast<size_t>(window)) continue;
    const double mean = sum / window;
    stats.lo = std::min(stats.lo, mean);
    stats.hi = std::max(stats.hi, mean);
    if (mean < band_lo || mean > band_hi) ++stats.violations;
  }
  return stats;
}

std::vector<double> kl_series_from_log(const fs::path& log_path) {
  std::ifstream in(log_path);
  if (!in) throw ConfigError("cannot read " + log_path.string());
  std::vector<double> kl;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    kl.push_back(nlohmann::json::parse(line).at("kl_actual").get<double>());
  }
  return kl;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <configs-dir>\n", argv[0]);
    return 2;
  }
  const fs::path configs = argv[1];
  const fs::path scratch = fs::temp_directory_path() / "spawnlab-acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  const fs::path corpus_dir = scratch / "corpus";
  const fs::path ref_run = scratch / "ref_run";
  const fs::path sweep_run = scratch / "sweep_run";

  ExperimentConfig ref_cfg = load_experiment_config((configs / "reference.json").string());
  ExperimentConfig sweep_cfg = load_experiment_config((configs / "vb_sweep.json").string());
  ExperimentConfig probe_cfg = load_experiment_config((configs / "probe.json").string());

  // ------------------------------------------------------------------
  // 1. Generated speakers are statistically interchangeable with
  //    synthesized training speakers on the reference corpus.
  // ------------------------------------------------------------------
  criterion(1, [&] {
    const auto t0 = std::chrono::steady_clock::now();
    run_gen_data(ref_cfg, corpus_dir.string());
    run_train(ref_cfg, corpus_dir.string(), ref_run.string());
    const TrainerState state = load_checkpoint((ref_run / "checkpoint.json").string());
    const Corpus corpus = load_corpus(corpus_dir.string());
    const EvalReport rep = run_eval(state, corpus, 0, nullptr);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const double gs_gap = std::abs(rep.g2s - rep.s2s);
    const double gg_gap = std::abs(rep.g2g - rep.s2s);
    const bool ok = gs_gap <= 0.05 && gg_gap <= 0.05 && rep.s2t_same < rep.s2t &&
                    seconds <= 600.0;
    report(1, ok,
           "|g2s-s2s|=" + fmt(gs_gap) + " |g2g-s2s|=" + fmt(gg_gap) +
               " (limit 0.05), s2t-same=" + fmt(rep.s2t_same) + " < s2t=" + fmt(rep.s2t) +
               ", runtime " + fmt(seconds, 3) + "s (limit 600s)");
  });

  // ------------------------------------------------------------------
  // 2. Sweep trends: lowering the KL target trades fidelity (s2t-same up)
  //    for diversity collapse (s2s down), monotonically across the sweep.
  // ------------------------------------------------------------------
  criterion(2, [&] {
    run_train(sweep_cfg, corpus_dir.string(), sweep_run.string());
    const Corpus corpus = load_corpus(corpus_dir.string());
    std::vector<double> s2t_same, s2s;
    for (double target : sweep_cfg.kl_targets) {
      const fs::path run = sweep_run / kl_target_dir_name(target);
      const TrainerState state = load_checkpoint((run / "checkpoint.json").string());
      const EvalReport rep = run_eval(state, corpus, 0, nullptr);
      s2t_same.push_back(rep.s2t_same);
      s2s.push_back(rep.s2s);
    }
    bool ok = true;
    for (size_t i = 1; i < s2t_same.size(); ++i) {
      if (s2t_same[i] < s2t_same[i - 1]) ok = false;  // must not drop as target falls
      if (s2s[i] > s2s[i - 1]) ok = false;            // must not rise as target falls
    }
    std::string detail = "kl_target [";
    for (size_t i = 0; i < sweep_cfg.kl_targets.size(); ++i)
      detail += (i ? ", " : "") + fmt(sweep_cfg.kl_targets[i]);
    detail += "]: s2t-same [";
    for (size_t i = 0; i < s2t_same.size(); ++i) detail += (i ? ", " : "") + fmt(s2t_same[i]);
    detail += "] non-decreasing, s2s [";
    for (size_t i = 0; i < s2s.size(); ++i) detail += (i ? ", " : "") + fmt(s2s[i]);
    detail += "] non-increasing";
    report(2, ok, detail);
  });

  // ------------------------------------------------------------------
  // 3. With beta pinned near zero and near-deterministic posteriors, the
  //    variational trainer reproduces the joint trainer's synthesis loss.
  // ------------------------------------------------------------------
  criterion(3, [&] {
    const Corpus corpus = load_corpus(corpus_dir.string());
    const auto [train_split, eval_split] =
        split_eval(corpus, ref_cfg.eval_fraction, ref_cfg.eval_seed);
    (void)eval_split;
    const StepContext ctx = make_step_context(train_split);

    ExperimentConfig taco = ref_cfg;
    taco.steps = 500;
    ExperimentConfig vb = taco;
    vb.objective = "vb";
    vb.kl_targets.clear();
    vb.fixed_beta = 1e-8;
    vb.posterior_sigma_init = 1e-6;

    TrainerState taco_state = init_trainer(taco, train_split);
    TrainerState vb_state = init_trainer(vb, train_split);
    double taco_loss = 0.0, vb_loss = 0.0;
    for (long s = 0; s < taco.steps; ++s) taco_loss = trainer_step(taco_state, ctx).synth_loss;
    for (long s = 0; s < vb.steps; ++s) vb_loss = trainer_step(vb_state, ctx).synth_loss;

    const double gap = std::abs(taco_loss - vb_loss);
    report(3, gap <= 1e-3,
           "synth loss after 500 shared-init steps: joint " + fmt(taco_loss, 6) +
               " vs beta=1e-8 variational " + fmt(vb_loss, 6) + ", |gap| " + fmt(gap, 3) +
               " (limit 1e-3)");
  });

  // ------------------------------------------------------------------
  // 4. The beta controller keeps every sweep run's trailing-100 KL mean
  //    inside +/-15% of its target throughout the second half of training.
  // ------------------------------------------------------------------
  criterion(4, [&] {
    bool ok = true;
    std::string detail;
    for (double target : sweep_cfg.kl_targets) {
      const fs::path log_path = sweep_run / kl_target_dir_name(target) / "log.jsonl";
      const std::vector<double> kl = kl_series_from_log(log_path);
      const TrailingStats stats =
          trailing_window_stats(kl, 100, 0.85 * target, 1.15 * target);
      if (stats.violations > 0) ok = false;
      if (!detail.empty()) detail += "; ";
      detail += kl_target_dir_name(target) + " trailing mean in [" + fmt(stats.lo) + ", " +
                fmt(stats.hi) + "] vs band [" + fmt(0.85 * target) + ", " +
                fmt(1.15 * target) + "], " + std::to_string(stats.violations) +
                " violations";
    }
    report(4, ok, detail);
  });

  // ------------------------------------------------------------------
  // 5. Prior generalization: fitted-half vs held-out-half log-prob gap.
  // ------------------------------------------------------------------
  criterion(5, [&] {
    const Corpus corpus =
        generate_synthetic_corpus(probe_cfg.corpus, probe_cfg.corpus_seed);
    ProbeConfig pc;
    pc.dims.vocab_size = corpus.header.vocab_size;
    pc.dims.token_embed_dim = probe_cfg.model_token_embed_dim;
    pc.dims.hidden = probe_cfg.model_hidden;
    pc.dims.frame_dim = corpus.header.frame_dim;
    pc.dims.speaker_dim = probe_cfg.speaker_dim;
    pc.prior = PriorNetConfig{probe_cfg.prior_components, probe_cfg.speaker_dim,
                              probe_cfg.prior_hidden, probe_cfg.prior_sigma_floor,
                              probe_cfg.conditioning};
    pc.adam = AdamConfig{probe_cfg.lr, 0.9, 0.999, 1e-8};
    pc.steps = static_cast<int>(probe_cfg.steps);
    pc.batch_size = probe_cfg.batch_size;
    pc.checkpoint_interval = static_cast<int>(probe_cfg.checkpoint_interval);

    const std::vector<ProbeRecord> records =
        prior_generalization_probe(corpus, pc, probe_cfg.train_seed);
    const ProbeRecord last = records.back();
    const double gap = std::abs(last.train_half_logprob - last.eval_half_logprob);
    report(5, gap <= 0.5,
           "final mean prior log-prob: fitted half " + fmt(last.train_half_logprob) +
               ", held-out half " + fmt(last.eval_half_logprob) + ", |gap| " + fmt(gap) +
               " nats (limit 0.5)");
  });

  // ------------------------------------------------------------------
  // 6. Metric reductions agree exactly with a brute-force double loop.
  // ------------------------------------------------------------------
  criterion(6, [&] {
    int mismatches = 0;
    for (uint64_t trial = 0; trial < 200; ++trial) {
      RngStream shape_rng(4242, "accept-shapes", trial);
      const int rows = 2 + static_cast<int>(shape_rng.uniform_int(49));  // up to 50
      const int cols = 1 + static_cast<int>(shape_rng.uniform_int(16));  // up to 16
      const Matrix a = random_table(rows, cols, 4243, 2 * trial);
      const Matrix b = random_table(rows, cols, 4243, 2 * trial + 1);
      const bool exclude = trial % 2 == 0;
      if (median_min_distance(a, b, exclude) != brute_median_min(a, b, exclude))
        ++mismatches;
      if (median_same_distance(a, b) != brute_median_same(a, b)) ++mismatches;
    }
    report(6, mismatches == 0,
           "200 random tables up to 50x16: " + std::to_string(mismatches) +
               " mismatches against the brute-force reference (exact comparison)");
  });

  // ------------------------------------------------------------------
  // 7. Closed-form density values and quadrature normalization.
  // ------------------------------------------------------------------
  criterion(7, [&] {
    double max_err = 0.0;
    auto check = [&](double got, double want) {
      max_err = std::max(max_err, std::abs(got - want));
    };
    {
      MoGParams p{{1.0}, Matrix(1, 1, 0.0), Matrix(1, 1, 1.0)};
      check(mog_log_prob(p, {0.0}), -0.9189385332046727);
    }
    {
      MoGParams p{{0.5, 0.5}, Matrix(2, 1), Matrix(2, 1, 1.0)};
      p.means(1, 0) = 1.0;
      check(mog_log_prob(p, {0.0}), -1.1380087295845114);
    }
    {
      MoGParams p{{1.0}, Matrix(1, 3, 0.0), Matrix(1, 3, 1.0)};
      check(mog_log_prob(p, {0.0, 0.0, 0.0}), 3 * -0.9189385332046727);
    }
    {
      // A conditioning net pinned to N(mean, sigma^2 I): fresh heads are
      // zero, so the biases carry the whole mixture.
      Corpus corpus = generate_synthetic_corpus(two_cluster_config(3, 2), 700);
      PriorNetConfig pcfg;
      pcfg.num_components = 1;
      pcfg.dim = 3;
      pcfg.hidden = 2;
      PriorNet net = make_prior_net(pcfg, corpus.header, 0);
      net.w_hidden.set_zero();
      const Vec mean = {0.3, -1.2, 0.7};
      const double sigma = 0.6;
      for (int d = 0; d < 3; ++d) net.b_mean[d] = mean[d];
      for (double& b : net.b_scale) b = softplus_inverse(sigma);
      const double at_mean = -3.0 * (std::log(sigma) + 0.5 * std::log(2.0 * M_PI));
      check(prior_log_prob(net, {0, "us", "f"}, mean), at_mean);
      Vec off = mean;
      for (double& x : off) x += sigma;  // one sigma out in every dimension
      check(prior_log_prob(net, {0, "us", "f"}, off), at_mean - 1.5);
    }

    MoGParams p{{0.3, 0.7}, Matrix(2, 1), Matrix(2, 1)};
    p.means(0, 0) = -1.5;
    p.means(1, 0) = 2.0;
    p.scales(0, 0) = 0.7;
    p.scales(1, 0) = 1.8;
    const int n = 6000;  // even; composite Simpson over [-30, 30]
    const double a = -30.0, b = 30.0, step = (b - a) / n;
    double total = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = a + i * step;
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      total += w * std::exp(mog_log_prob(p, {x}));
    }
    total *= step / 3.0;
    const double quad_err = std::abs(total - 1.0);

    report(7, max_err <= 1e-6 && quad_err <= 1e-4,
           "max |log-density error| " + fmt(max_err, 3) + " (limit 1e-6), |integral-1| " +
               fmt(quad_err, 3) + " (limit 1e-4)");
  });

  // ------------------------------------------------------------------
  // 8. Gradient integrity on 20 random instances per loss.
  // ------------------------------------------------------------------
  criterion(8, [&] {
    double max_synth = 0.0, max_prior = 0.0, max_vb = 0.0;

    for (uint64_t i = 0; i < 20; ++i) {
      const int sd = 2 + static_cast<int>(i % 3);
      SynthParams params =
          make_synth_params(tiny_dims(sd, 4 + 4 * static_cast<int>(i % 2)), 300 + i);
      RngStream rng(320 + i, "inst");
      std::vector<int> tokens(2 + i % 4);
      for (int& t : tokens) t = static_cast<int>(rng.uniform_int(12));
      const Vec s = rng.normal_vec(sd);
      const Vec cond = {1.0, 0.0, 1.0};
      Matrix y = synth_forward(params, tokens, s, cond);
      // Push every frame off the model output so the l1 loss stays away
      // from its kink during finite differencing.
      for (size_t k = 0; k < y.size(); ++k)
        y.data()[k] += (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.1 + 0.5 * rng.uniform());
      SynthGrads grads;
      grads.init_like(params);
      synth_nll_backward(params, y, tokens, s, cond, 1.0, &grads, nullptr);
      Vec analytic;
      for (double* g : synth_grad_ptrs(grads)) analytic.push_back(*g);
      auto loss = [&]() { return synth_nll(params, y, tokens, s, cond); };
      max_synth = std::max(max_synth, grad_check(loss, synth_param_ptrs(params), analytic));
    }

    const ConditioningSet cond_cycle[3] = {{false, false}, {true, false}, {true, true}};
    for (uint64_t i = 0; i < 20; ++i) {
      const Corpus corpus = generate_synthetic_corpus(two_cluster_config(3, 2), 400 + i);
      PriorNetConfig pcfg;
      pcfg.num_components = 1 + static_cast<int>(i % 3);
      pcfg.dim = 2 + static_cast<int>(i % 2);
      pcfg.hidden = 4;
      pcfg.conditioning = cond_cycle[i % 3];
      PriorNet net = make_prior_net(pcfg, corpus.header, 410 + i);
      RngStream rng(420 + i, "perturb");
      for (double* p : prior_param_ptrs(net)) *p += 0.3 * rng.normal();
      Matrix table(3, pcfg.dim);
      for (size_t k = 0; k < table.size(); ++k) table.data()[k] = rng.normal();
      PriorGrads grads;
      grads.init_like(net);
      prior_nll_loss(net, table, corpus.speakers, &grads);
      Vec analytic;
      for (double* g : prior_grad_ptrs(grads)) analytic.push_back(*g);
      auto loss = [&]() { return prior_nll_loss(net, table, corpus.speakers, nullptr); };
      max_prior = std::max(max_prior, grad_check(loss, prior_param_ptrs(net), analytic));
    }

    for (uint64_t i = 0; i < 20; ++i) {
      const Corpus corpus =
          generate_synthetic_corpus(two_cluster_config(4, 3, 4.0, 0.3, 0.1), 500 + i);
      const StepContext ctx = make_step_context(corpus);
      const int dim = 2 + static_cast<int>(i % 2);
      SynthParams synth = make_synth_params(tiny_dims(dim, 8), 510 + i);
      PosteriorTable posterior = make_posterior_table(4, dim, 0.3, 520 + i);
      PriorNetConfig pcfg;
      pcfg.num_components = 2;
      pcfg.dim = dim;
      pcfg.hidden = 4;
      pcfg.conditioning = {true, false};
      PriorNet prior = make_prior_net(pcfg, corpus.header, 530 + i);
      RngStream perturb(540 + i, "perturb");
      for (double* p : prior_param_ptrs(prior)) *p += 0.3 * perturb.normal();

      const std::vector<int> batch = draw_batch(corpus, 6, 550 + i, 0);
      RngStream reparam(560 + i, "reparam", 0), kl(560 + i, "kl", 0);
      const VbDraws draws = draw_vb_noise(6, 4, dim, reparam, kl);
      const double beta = 0.3 + 0.02 * i;

      SynthGrads sg;
      sg.init_like(synth);
      PosteriorGrads ng;
      ng.init_like(posterior);
      PriorGrads pg;
      pg.init_like(prior);
      vb_objective(ctx, batch, synth, posterior, prior, beta, draws, &sg, &ng, &pg,
                   nullptr, nullptr, nullptr);
      std::vector<double*> params = synth_param_ptrs(synth);
      Vec analytic;
      for (double* g : synth_grad_ptrs(sg)) analytic.push_back(*g);
      for (double* p : posterior_param_ptrs(posterior)) params.push_back(p);
      for (double* g : posterior_grad_ptrs(ng)) analytic.push_back(*g);
      for (double* p : prior_param_ptrs(prior)) params.push_back(p);
      for (double* g : prior_grad_ptrs(pg)) analytic.push_back(*g);
      auto loss = [&]() {
        return vb_objective(ctx, batch, synth, posterior, prior, beta, draws, nullptr,
                            nullptr, nullptr, nullptr, nullptr, nullptr);
      };
      max_vb = std::max(max_vb, grad_check(loss, params, analytic));
    }

    report(8, max_synth <= 1e-4 && max_prior <= 1e-4 && max_vb <= 1e-4,
           "max relative gradient error over 20 instances each: synth " + fmt(max_synth, 3) +
               ", prior " + fmt(max_prior, 3) + ", variational " + fmt(max_vb, 3) +
               " (limit 1e-4)");
  });

  // ------------------------------------------------------------------
  // 9. Stop-gradient contract: the prior term must not move the
  //    synthesizer or the embedding table.
  // ------------------------------------------------------------------
  criterion(9, [&] {
    const Corpus corpus = generate_synthetic_corpus(two_cluster_config(4, 4, 4.0, 0.3), 900);
    const StepContext ctx = make_step_context(corpus);
    auto run = [&](bool with_prior) {
      SynthParams synth = make_synth_params(tiny_dims(3), 901);
      Matrix table = init_speaker_table(4, 3, 901);
      PriorNetConfig pcfg;
      pcfg.num_components = 2;
      pcfg.dim = 3;
      pcfg.hidden = 4;
      PriorNet prior = make_prior_net(pcfg, corpus.header, 901);
      AdamState sa, ta, pa;
      sa.init(synth_param_ptrs(synth).size(), {});
      ta.init(table.size(), {});
      pa.init(prior_param_ptrs(prior).size(), {});
      for (uint64_t step = 0; step < 50; ++step)
        tacospawn_step(ctx, draw_batch(corpus, 8, 902, step), synth, table, prior, sa, ta,
                       pa, with_prior);
      return std::make_pair(synth, table);
    };
    const auto [synth_on, table_on] = run(true);
    const auto [synth_off, table_off] = run(false);
    const bool ok = synth_on == synth_off && table_on == table_off;
    report(9, ok,
           std::string("50-step synthesizer and table trajectories with prior term ") +
               (ok ? "on/off are bit-identical" : "on/off DIVERGED"));
  });

  // ------------------------------------------------------------------
  // 10. Byte-level determinism of a repeated full pipeline.
  // ------------------------------------------------------------------
  criterion(10, [&] {
    ExperimentConfig cfg = ref_cfg;
    cfg.steps = 500;
    auto pipeline = [&](const fs::path& dir) {
      const fs::path corpus_out = dir / "corpus";
      const fs::path run_out = dir / "run";
      run_gen_data(cfg, corpus_out.string());
      run_train(cfg, corpus_out.string(), run_out.string());
      const TrainerState state = load_checkpoint((run_out / "checkpoint.json").string());
      const Corpus corpus = load_corpus(corpus_out.string());
      std::string csv;
      const EvalReport rep = run_eval(state, corpus, 0, &csv);
      return std::make_tuple(eval_report_to_json(rep), csv,
                             read_file(run_out / "checkpoint.json"),
                             read_file(run_out / "log.jsonl"));
    };
    const auto first = pipeline(scratch / "pipeline_a");
    const auto second = pipeline(scratch / "pipeline_b");
    const bool ok = first == second;
    report(10, ok,
           std::string("repeated gen-data/train/eval pipeline: report, distance matrix, "
                       "checkpoint, and step log are ") +
               (ok ? "byte-identical" : "NOT byte-identical"));
  });

  fs::remove_all(scratch);
  if (g_failures > 0) {
    std::printf("%d of 10 criteria FAILED\n", g_failures);
    return 1;
  }
  std::printf("all 10 criteria passed\n");
  return 0;
}
