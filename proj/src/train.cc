// spawnlab/train.cc

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

#include "spawnlab/train.hpp"

#include <cmath>
#include <limits>

#include "spawnlab/errors.hpp"

namespace spawnlab {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;

std::vector<double*> matrix_ptrs(Matrix& m) {
  std::vector<double*> out;
  out.reserve(m.size());
  for (size_t i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  return out;
}

void check_batch(const StepContext& ctx, const std::vector<int>& batch) {
  if (!ctx.corpus) throw ConfigError("step context has no corpus");
  if (batch.empty()) throw ConfigError("training batch must be nonempty");
  for (int b : batch)
    if (b < 0 || b >= ctx.corpus->num_utterances())
      throw ConfigError("batch references utterance index " + std::to_string(b) +
                        " outside the corpus");
}

void check_finite_loss(double value, const char* what) {
  if (!std::isfinite(value))
    throw NumericalError(std::string("non-finite ") + what +
                         "; training aborted (last finite checkpoint is kept)");
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void adam_update(const std::vector<double*>& params,
                 const std::vector<double*>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size())
    throw ConfigError("adam_update: params/grads/state sizes disagree");

  state.step += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    double g = *grads[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    double m_hat = state.m[i] / bc1;
    double v_hat = state.v[i] / bc2;
    *params[i] -= state.cfg.lr * m_hat / (std::sqrt(v_hat) + state.cfg.eps);
  }
}

// ---------------------------------------------------------------------------
// Posterior table and beta controller
// ---------------------------------------------------------------------------

void PosteriorGrads::init_like(const PosteriorTable& table) {
  mu = Matrix(table.mu.rows(), table.mu.cols());
  rho = Matrix(table.rho.rows(), table.rho.cols());
}

void PosteriorGrads::set_zero() {
  mu.set_zero();
  rho.set_zero();
}

PosteriorTable make_posterior_table(int num_speakers, int dim, double sigma_init,
                                    uint64_t seed) {
  if (sigma_init <= 0.0) throw ConfigError("posterior sigma_init must be > 0");
  PosteriorTable table;
  table.mu = init_speaker_table(num_speakers, dim, seed);
  table.rho = Matrix(num_speakers, dim, softplus_inverse(sigma_init));
  return table;
}

double posterior_sigma(double rho) {
  return std::max(softplus(rho), kPosteriorSigmaFloor);
}

void update_beta(BetaController& ctrl, double kl_actual) {
  if (!std::isfinite(kl_actual))
    throw NumericalError("beta controller fed a non-finite KL estimate");
  ctrl.lambda += ctrl.eta * (kl_actual - ctrl.kl_target);
}

// ---------------------------------------------------------------------------
// Step context
// ---------------------------------------------------------------------------

StepContext make_step_context(const Corpus& corpus) {
  StepContext ctx;
  ctx.corpus = &corpus;
  // The synthesizer always sees the full metadata one-hot, regardless of
  // what subset the prior conditions on.
  ConditioningSet full{true, true};
  ctx.synth_cond.reserve(corpus.speakers.size());
  for (const auto& spk : corpus.speakers)
    ctx.synth_cond.push_back(one_hot_metadata(spk, full, corpus.header));
  return ctx;
}

// ---------------------------------------------------------------------------
// Joint objective step
// ---------------------------------------------------------------------------

TacoStepResult tacospawn_step(const StepContext& ctx, const std::vector<int>& batch,
                              SynthParams& synth, Matrix& table, PriorNet& prior,
                              AdamState& synth_adam, AdamState& table_adam,
                              AdamState& prior_adam, bool compute_prior_term,
                              const std::vector<int>* prior_speakers) {
  check_batch(ctx, batch);
  const Corpus& corpus = *ctx.corpus;
  if (table.rows() != corpus.num_speakers())
    throw ConfigError("speaker table rows != corpus speaker count");

  SynthGrads synth_grads;
  synth_grads.init_like(synth);
  Matrix table_grads(table.rows(), table.cols());

  TacoStepResult result;
  const double weight = 1.0 / batch.size();
  Vec ds;
  for (int b : batch) {
    const Utterance& utt = corpus.utterances[b];
    const int j = utt.speaker_id;
    ds.assign(table.cols(), 0.0);
    result.synth_loss += weight * synth_nll_backward(synth, utt.frames, utt.tokens,
                                                     table.row_vec(j), ctx.synth_cond[j],
                                                     weight, &synth_grads, &ds);
    double* row = table_grads.row(j);
    for (int d = 0; d < table.cols(); ++d) row[d] += ds[d];
  }
  check_finite_loss(result.synth_loss, "synthesis loss");

  // Prior term over every speaker; its gradient reaches omega only, so the
  // theta/table updates below are identical whether or not we compute it.
  PriorGrads prior_grads;
  if (compute_prior_term) {
    prior_grads.init_like(prior);
    if (prior_speakers == nullptr) {
      result.prior_nll = prior_nll_loss(prior, table, corpus.speakers, &prior_grads);
    } else {
      // Restricted prior term: gather the chosen rows so the NLL (and the
      // omega gradient behind it) averages over that subset only.
      Matrix sub_table(static_cast<int>(prior_speakers->size()), table.cols());
      std::vector<SpeakerMetadata> sub_speakers;
      sub_speakers.reserve(prior_speakers->size());
      for (size_t i = 0; i < prior_speakers->size(); ++i) {
        const int j = (*prior_speakers)[i];
        if (j < 0 || j >= corpus.num_speakers())
          throw ConfigError("prior speaker subset index out of range");
        sub_table.set_row(static_cast<int>(i), table.row_vec(j));
        sub_speakers.push_back(corpus.speakers[j]);
      }
      result.prior_nll = prior_nll_loss(prior, sub_table, sub_speakers, &prior_grads);
    }
    check_finite_loss(result.prior_nll, "prior NLL");
  } else {
    result.prior_nll = std::numeric_limits<double>::quiet_NaN();
  }

  adam_update(synth_param_ptrs(synth), synth_grad_ptrs(synth_grads), synth_adam);
  adam_update(matrix_ptrs(table), matrix_ptrs(table_grads), table_adam);
  if (compute_prior_term)
    adam_update(prior_param_ptrs(prior), prior_grad_ptrs(prior_grads), prior_adam);
  return result;
}

// ---------------------------------------------------------------------------
// Variational objective
// ---------------------------------------------------------------------------

VbDraws draw_vb_noise(int batch_size, int num_speakers, int dim,
                      RngStream& reparam_rng, RngStream& kl_rng) {
  VbDraws draws;
  draws.batch_eps.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) draws.batch_eps.push_back(reparam_rng.normal_vec(dim));
  draws.speaker_eps.reserve(num_speakers);
  for (int j = 0; j < num_speakers; ++j) draws.speaker_eps.push_back(kl_rng.normal_vec(dim));
  return draws;
}

double vb_objective(const StepContext& ctx, const std::vector<int>& batch,
                    const SynthParams& synth, const PosteriorTable& posterior,
                    const PriorNet& prior, double beta, const VbDraws& draws,
                    SynthGrads* synth_grads, PosteriorGrads* posterior_grads,
                    PriorGrads* prior_grads, double* synth_loss_out,
                    double* kl_actual_out, int* floor_hits_out) {
  check_batch(ctx, batch);
  const Corpus& corpus = *ctx.corpus;
  const int num_speakers = corpus.num_speakers();
  const int dim = posterior.dim();
  if (posterior.num_speakers() != num_speakers)
    throw ConfigError("posterior table rows != corpus speaker count");
  if (static_cast<int>(draws.batch_eps.size()) != static_cast<int>(batch.size()) ||
      static_cast<int>(draws.speaker_eps.size()) != num_speakers)
    throw ConfigError("vb noise draws do not match batch/speaker counts");
  if (beta < 0.0) throw ConfigError("beta must be >= 0");

  // Per-speaker sigmas with the underflow floor; floored entries pass no
  // gradient to rho.
  Matrix sigma(num_speakers, dim);
  Matrix dsigma_drho(num_speakers, dim);
  int floor_hits = 0;
  for (int j = 0; j < num_speakers; ++j) {
    for (int d = 0; d < dim; ++d) {
      double sp = softplus(posterior.rho(j, d));
      if (sp < kPosteriorSigmaFloor) {
        sigma(j, d) = kPosteriorSigmaFloor;
        dsigma_drho(j, d) = 0.0;
        ++floor_hits;
      } else {
        sigma(j, d) = sp;
        dsigma_drho(j, d) = sigmoid(posterior.rho(j, d));
      }
    }
  }

  // Synthesis term: one reparameterized sample per batch utterance.
  double synth_loss = 0.0;
  const double weight = 1.0 / batch.size();
  Vec s_tilde(dim), ds;
  for (size_t i = 0; i < batch.size(); ++i) {
    const Utterance& utt = corpus.utterances[batch[i]];
    const int j = utt.speaker_id;
    const Vec& eps = draws.batch_eps[i];
    for (int d = 0; d < dim; ++d)
      s_tilde[d] = posterior.mu(j, d) + sigma(j, d) * eps[d];
    ds.assign(dim, 0.0);
    synth_loss += weight * synth_nll_backward(synth, utt.frames, utt.tokens, s_tilde,
                                              ctx.synth_cond[j], weight, synth_grads,
                                              posterior_grads ? &ds : nullptr);
    if (posterior_grads) {
      for (int d = 0; d < dim; ++d) {
        posterior_grads->mu(j, d) += ds[d];
        posterior_grads->rho(j, d) += ds[d] * eps[d] * dsigma_drho(j, d);
      }
    }
  }

  // KL term over ALL speakers, single sample each. With s = mu + sigma*eps,
  // log q(s) = -D/2 ln(2pi) - sum_d ln sigma_d - |eps|^2/2, which depends on
  // nu only through -sum ln sigma; the remaining nu gradient flows through
  // the prior density's dependence on the sampled point.
  double kl_sum = 0.0;
  Vec dlogp_ds(dim);
  const double kl_weight = -beta / num_speakers;  // loss has -beta/J * log p
  for (int j = 0; j < num_speakers; ++j) {
    const Vec& eps = draws.speaker_eps[j];
    double log_q = -0.5 * dim * kLogTwoPi;
    for (int d = 0; d < dim; ++d) {
      s_tilde[d] = posterior.mu(j, d) + sigma(j, d) * eps[d];
      log_q += -std::log(sigma(j, d)) - 0.5 * eps[d] * eps[d];
    }
    std::fill(dlogp_ds.begin(), dlogp_ds.end(), 0.0);
    double log_p = prior_log_prob_backward(prior, corpus.speakers[j], s_tilde, kl_weight,
                                           prior_grads,
                                           posterior_grads ? &dlogp_ds : nullptr);
    kl_sum += log_q - log_p;
    if (posterior_grads) {
      // dlogp_ds already carries -beta/J d(log p)/ds = dLoss/dmu_j.
      for (int d = 0; d < dim; ++d) {
        posterior_grads->mu(j, d) += dlogp_ds[d];
        posterior_grads->rho(j, d) +=
            (-(beta / num_speakers) / sigma(j, d) + dlogp_ds[d] * eps[d]) *
            dsigma_drho(j, d);
      }
    }
  }
  const double kl_actual = kl_sum / num_speakers;

  if (synth_loss_out) *synth_loss_out = synth_loss;
  if (kl_actual_out) *kl_actual_out = kl_actual;
  if (floor_hits_out) *floor_hits_out = floor_hits;
  return synth_loss + beta * kl_actual;
}

VbStepResult vb_step(const StepContext& ctx, const std::vector<int>& batch,
                     SynthParams& synth, PosteriorTable& posterior, PriorNet& prior,
                     RngStream& reparam_rng, RngStream& kl_rng,
                     AdamState& synth_adam, AdamState& posterior_adam,
                     AdamState& prior_adam, BetaController* ctrl, double fixed_beta,
                     double omega_grad_scale) {
  const double beta = ctrl ? ctrl->beta() : fixed_beta;
  if (!(omega_grad_scale > 0.0))
    throw ConfigError("vb_step: omega_grad_scale must be positive");
  VbDraws draws = draw_vb_noise(static_cast<int>(batch.size()),
                                ctx.corpus ? ctx.corpus->num_speakers() : 0,
                                posterior.dim(), reparam_rng, kl_rng);

  SynthGrads synth_grads;
  synth_grads.init_like(synth);
  PosteriorGrads posterior_grads;
  posterior_grads.init_like(posterior);
  PriorGrads prior_grads;
  prior_grads.init_like(prior);

  VbStepResult result;
  result.beta = beta;
  vb_objective(ctx, batch, synth, posterior, prior, beta, draws, &synth_grads,
               &posterior_grads, &prior_grads, &result.synth_loss, &result.kl_actual,
               &result.sigma_floor_hits);
  check_finite_loss(result.synth_loss, "synthesis loss");
  check_finite_loss(result.kl_actual, "KL estimate");

  if (omega_grad_scale != 1.0) {
    for (double* g : prior_grad_ptrs(prior_grads)) *g *= omega_grad_scale;
  }

  adam_update(synth_param_ptrs(synth), synth_grad_ptrs(synth_grads), synth_adam);
  adam_update(posterior_param_ptrs(posterior), posterior_grad_ptrs(posterior_grads),
              posterior_adam);
  adam_update(prior_param_ptrs(prior), prior_grad_ptrs(prior_grads), prior_adam);

  if (ctrl) update_beta(*ctrl, result.kl_actual);
  return result;
}

double kl_term(const PosteriorTable& posterior, const PriorNet& prior,
               const std::vector<SpeakerMetadata>& speakers, RngStream& rng,
               int n_samples) {
  if (n_samples < 1) throw ConfigError("kl_term needs n_samples >= 1");
  const int num_speakers = static_cast<int>(speakers.size());
  if (posterior.num_speakers() != num_speakers)
    throw ConfigError("posterior table rows != metadata rows");
  const int dim = posterior.dim();

  // One shared draw per sample index, reused across speakers: duplicating a
  // speaker then provably leaves the estimate unchanged.
  double total = 0.0;
  Vec s(dim);
  for (int n = 0; n < n_samples; ++n) {
    Vec eps = rng.normal_vec(dim);
    for (int j = 0; j < num_speakers; ++j) {
      double log_q = -0.5 * dim * kLogTwoPi;
      for (int d = 0; d < dim; ++d) {
        double sg = posterior_sigma(posterior.rho(j, d));
        s[d] = posterior.mu(j, d) + sg * eps[d];
        log_q += -std::log(sg) - 0.5 * eps[d] * eps[d];
      }
      total += log_q - prior_log_prob(prior, speakers[j], s);
    }
  }
  return total / (static_cast<double>(n_samples) * num_speakers);
}

double grad_check(const std::function<double()>& loss_fn,
                  const std::vector<double*>& params,
                  const std::vector<double>& analytic_grads, double eps) {
  if (params.size() != analytic_grads.size())
    throw ConfigError("grad_check: gradient count != parameter count");
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    const double saved = *params[i];
    *params[i] = saved + eps;
    const double up = loss_fn();
    *params[i] = saved - eps;
    const double down = loss_fn();
    *params[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    // Floor the denominator above ulp(loss) / (2 * eps) so exact-zero
    // gradients compare as equal instead of amplifying round-off in fd.
    const double err = std::abs(analytic_grads[i] - fd) /
                       std::max(1e-6, std::abs(analytic_grads[i]) + std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

std::vector<double*> posterior_param_ptrs(PosteriorTable& table) {
  std::vector<double*> out = matrix_ptrs(table.mu);
  std::vector<double*> rho = matrix_ptrs(table.rho);
  out.insert(out.end(), rho.begin(), rho.end());
  return out;
}

std::vector<double*> posterior_grad_ptrs(PosteriorGrads& grads) {
  std::vector<double*> out = matrix_ptrs(grads.mu);
  std::vector<double*> rho = matrix_ptrs(grads.rho);
  out.insert(out.end(), rho.begin(), rho.end());
  return out;
}

}  // namespace spawnlab
