// spawnlab/train.hpp

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

// Optimization engine for the two training objectives:
//
//  * joint: minibatch synthesis loss plus the prior's NLL over the whole
//    speaker table, with the table stop-gradiented inside the prior term --
//    theta and S receive only synthesis gradients, omega only prior
//    gradients.
//  * variational: per-speaker diagonal-Gaussian posteriors q_j trained with
//    one reparameterized sample per utterance, plus beta times a
//    single-sample KL estimate averaged over ALL speakers (not just the
//    minibatch), with beta tuned by a proportional controller in
//    softplus-space to hit a KL target.
//
// Plus Adam and a finite-difference gradient-check utility.

#ifndef SPAWNLAB_TRAIN_HPP_
#define SPAWNLAB_TRAIN_HPP_

#include <functional>
#include <limits>
#include <vector>

#include "spawnlab/corpus.hpp"
#include "spawnlab/matrix.hpp"
#include "spawnlab/prior.hpp"
#include "spawnlab/rng.hpp"
#include "spawnlab/synth.hpp"

namespace spawnlab {

// Posterior sigma entries are clamped here when softplus(rho) underflows;
// each clamp increments the step's floor-hit counter.
inline constexpr double kPosteriorSigmaFloor = 1e-6;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  AdamConfig cfg;
  Vec m;  // first moments, aligned with the parameter group
  Vec v;  // second moments
  long step = 0;

  void init(size_t param_count, const AdamConfig& config) {
    cfg = config;
    m.assign(param_count, 0.0);
    v.assign(param_count, 0.0);
    step = 0;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam step over a flat parameter group. Throws
// ConfigError when params/grads/state sizes disagree.
void adam_update(const std::vector<double*>& params,
                 const std::vector<double*>& grads, AdamState& state);

// ---------------------------------------------------------------------------
// Posteriors and the beta controller
// ---------------------------------------------------------------------------

struct PosteriorTable {
  Matrix mu;   // J x D
  Matrix rho;  // J x D; sigma = max(softplus(rho), kPosteriorSigmaFloor)

  int num_speakers() const { return mu.rows(); }
  int dim() const { return mu.cols(); }

  friend bool operator==(const PosteriorTable&, const PosteriorTable&) = default;
};

struct PosteriorGrads {
  Matrix mu;
  Matrix rho;

  void init_like(const PosteriorTable& table);
  void set_zero();
};

// mu rows are drawn from the same "speaker-init" stream as the joint
// objective's speaker table, so both objectives share their embedding init;
// rho starts at softplus_inverse(sigma_init) everywhere.
PosteriorTable make_posterior_table(int num_speakers, int dim, double sigma_init,
                                    uint64_t seed);

// sigma for one posterior entry, with the underflow floor applied.
double posterior_sigma(double rho);

struct BetaController {
  double lambda = 0.0;  // beta = softplus(lambda)
  double kl_target = 0.0;
  double eta = 1e-3;  // controller step size

  // softplus(lambda), floored at the smallest positive normal double so the
  // beta > 0 invariant survives exp() underflow at extreme lambda.
  double beta() const {
    return std::max(softplus(lambda), std::numeric_limits<double>::min());
  }

  friend bool operator==(const BetaController&, const BetaController&) = default;
};

// lambda += eta * (kl_actual - kl_target). Throws NumericalError on a
// non-finite KL estimate.
void update_beta(BetaController& ctrl, double kl_actual);

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

// Per-speaker inputs shared by every step: the training split and the full
// metadata one-hot each speaker presents to the synthesizer.
struct StepContext {
  const Corpus* corpus = nullptr;
  std::vector<Vec> synth_cond;  // per speaker: [locale one-hot; gender one-hot]
};

StepContext make_step_context(const Corpus& corpus);

struct TacoStepResult {
  double synth_loss = 0.0;
  double prior_nll = 0.0;  // NaN when the prior term was skipped
};

// One joint-objective step: minibatch mean synthesis loss drives theta and
// the table; the prior NLL over all J table rows drives omega. Setting
// compute_prior_term=false skips the prior term entirely -- the table and
// theta updates must be bit-identical either way, which the tests pin.
// When prior_speakers is non-null the prior NLL averages over just those
// speaker indices instead of all J (used by the generalization probe).
TacoStepResult tacospawn_step(const StepContext& ctx, const std::vector<int>& batch,
                              SynthParams& synth, Matrix& table, PriorNet& prior,
                              AdamState& synth_adam, AdamState& table_adam,
                              AdamState& prior_adam, bool compute_prior_term = true,
                              const std::vector<int>* prior_speakers = nullptr);

// Frozen standard-normal draws for one VB objective evaluation: one D-vector
// per batch utterance (reparameterized synthesis sample) and one per speaker
// (KL estimate). Kept explicit so gradient checks can re-evaluate the
// objective at fixed noise.
struct VbDraws {
  std::vector<Vec> batch_eps;
  std::vector<Vec> speaker_eps;
};

VbDraws draw_vb_noise(int batch_size, int num_speakers, int dim,
                      RngStream& reparam_rng, RngStream& kl_rng);

// The full variational objective at fixed noise:
//   (1/B) sum_batch synth_nll(theta, y_u, x_u, mu_j + sigma_j eps_u, c_j)
//   + beta * (1/J) sum_all_j [log q_j(s_j) - log p_omega(s_j | C_j)],
//   s_j = mu_j + sigma_j eps_j.
// Returns the total; optionally accumulates gradients for theta, nu, omega
// and reports the two pieces and the sigma floor-hit count.
double vb_objective(const StepContext& ctx, const std::vector<int>& batch,
                    const SynthParams& synth, const PosteriorTable& posterior,
                    const PriorNet& prior, double beta, const VbDraws& draws,
                    SynthGrads* synth_grads, PosteriorGrads* posterior_grads,
                    PriorGrads* prior_grads, double* synth_loss_out,
                    double* kl_actual_out, int* floor_hits_out);

struct VbStepResult {
  double synth_loss = 0.0;
  double kl_actual = 0.0;
  double beta = 0.0;  // the value used for this step's gradients
  int sigma_floor_hits = 0;
};

// One variational step. Noise comes from the two provided streams; beta is
// softplus(ctrl->lambda) when ctrl is non-null (and ctrl is updated with the
// fresh KL estimate after the parameter update), else fixed_beta.
// omega_grad_scale multiplies the prior's gradient before its Adam update
// (pass 1/beta to undo the beta/J weighting of the prior term; must be > 0).
VbStepResult vb_step(const StepContext& ctx, const std::vector<int>& batch,
                     SynthParams& synth, PosteriorTable& posterior, PriorNet& prior,
                     RngStream& reparam_rng, RngStream& kl_rng,
                     AdamState& synth_adam, AdamState& posterior_adam,
                     AdamState& prior_adam, BetaController* ctrl,
                     double fixed_beta = 0.0, double omega_grad_scale = 1.0);

// Multi-sample KL estimate: (1/J) sum_j mean_n [log q_j(s) - log p(s|C_j)],
// s = mu_j + sigma_j eps_n with one shared eps draw per sample index, reused
// across speakers -- duplicating a speaker leaves the estimate unchanged
// exactly. Diagnostics only; vb_step has its own single-sample path.
double kl_term(const PosteriorTable& posterior, const PriorNet& prior,
               const std::vector<SpeakerMetadata>& speakers, RngStream& rng,
               int n_samples);

// Central finite differences against the supplied analytic gradient:
// max over coordinates of |g_a - g_fd| / max(1e-6, |g_a| + |g_fd|).
// The denominator floor sits above the finite-difference noise floor
// (one ulp of the loss over 2*eps), so a coordinate whose true gradient
// is exactly zero scores as agreement rather than as noise.
// loss_fn must re-evaluate the objective at the current parameter values.
double grad_check(const std::function<double()>& loss_fn,
                  const std::vector<double*>& params,
                  const std::vector<double>& analytic_grads, double eps = 1e-4);

std::vector<double*> posterior_param_ptrs(PosteriorTable& table);
std::vector<double*> posterior_grad_ptrs(PosteriorGrads& grads);

}  // namespace spawnlab

#endif  // SPAWNLAB_TRAIN_HPP_
