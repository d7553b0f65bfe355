// spawnlab/prior.hpp

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

// Metadata-conditioned mixture-of-Gaussians prior over speaker embeddings.
// A small dense net maps the one-hot (locale, gender) encoding -- or a fixed
// constant when the conditioning set is empty -- to mixture weights (softmax),
// component means, and component scales (softplus with a floor).

#ifndef SPAWNLAB_PRIOR_HPP_
#define SPAWNLAB_PRIOR_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "spawnlab/corpus.hpp"
#include "spawnlab/matrix.hpp"
#include "spawnlab/rng.hpp"

namespace spawnlab {

// Mixture parameters for one metadata condition: K weights summing to one,
// K x D means, K x D per-dimension standard deviations.
struct MoGParams {
  Vec weights;
  Matrix means;
  Matrix scales;

  int num_components() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.cols(); }

  friend bool operator==(const MoGParams&, const MoGParams&) = default;
};

struct PriorNetConfig {
  int num_components = 10;  // K
  int dim = 8;              // D, must match the speaker-embedding dim
  int hidden = 32;          // width of the single tanh hidden layer
  double sigma_floor = 1e-3;
  ConditioningSet conditioning;

  friend bool operator==(const PriorNetConfig&, const PriorNetConfig&) = default;
};

// The prior's parameters plus everything needed to encode metadata on its
// own: the conditioning set and the label vocabularies it was built against.
struct PriorNet {
  PriorNetConfig cfg;
  std::vector<std::string> locales;
  std::vector<std::string> genders;

  // in_dim = one-hot width, or 1 for the constant unconditional input.
  Matrix w_hidden;  // hidden x in_dim
  Vec b_hidden;     // hidden
  Matrix w_alpha;   // K x hidden, zero at init so alpha starts uniform
  Vec b_alpha;      // K
  Matrix w_mean;    // K*D x hidden, zero at init
  Vec b_mean;       // K*D, component means spread over a small ball
  Matrix w_scale;   // K*D x hidden, zero at init
  Vec b_scale;      // K*D, softplus_inverse(initial sigma)

  int in_dim() const { return w_hidden.cols(); }

  friend bool operator==(const PriorNet&, const PriorNet&) = default;
};

// Gradient accumulator shaped like a PriorNet's parameters.
struct PriorGrads {
  Matrix w_hidden;
  Vec b_hidden;
  Matrix w_alpha;
  Vec b_alpha;
  Matrix w_mean;
  Vec b_mean;
  Matrix w_scale;
  Vec b_scale;

  void init_like(const PriorNet& net);
  void set_zero();
};

// Builds a freshly initialized net: hidden weights N(0, 1/sqrt(in_dim)), all
// head weights zero (so alpha starts exactly uniform), mean biases uniform in
// a ball of radius 0.1 to break component symmetry, scale biases set so every
// sigma starts at 1. Draws from RngStream(seed, "prior-init").
PriorNet make_prior_net(const PriorNetConfig& cfg, const CorpusHeader& header,
                        uint64_t seed);

// Runs the dense net for one metadata row. Deterministic; throws ConfigError
// for labels missing from the net's vocabularies.
MoGParams prior_params(const PriorNet& net, const SpeakerMetadata& c);

// log sum_k alpha_k N(s; mu_k, diag(sigma_k^2)) via log-sum-exp.
// Throws ConfigError when s has the wrong dimension or params are invalid.
double mog_log_prob(const MoGParams& params, const Vec& s);

double prior_log_prob(const PriorNet& net, const SpeakerMetadata& c, const Vec& s);

// log p plus gradients: accumulates weight * d(log p)/d(omega) into *grads
// and weight * d(log p)/d(s) into *ds (both optional). Callers fold loss
// prefactors (e.g. -1/J) into weight.
double prior_log_prob_backward(const PriorNet& net, const SpeakerMetadata& c,
                               const Vec& s, double weight, PriorGrads* grads,
                               Vec* ds);

// Draws component k ~ Categorical(alpha), then mu_k + temperature * sigma_k
// * eps. The categorical and the D normals are always consumed, so streams
// stay aligned across temperatures. Temperature 0 returns the sampled
// component's mean; negative temperature throws ConfigError.
Vec mog_sample(const MoGParams& params, double temperature, RngStream& rng);

Vec sample_speaker(const PriorNet& net, const SpeakerMetadata& c,
                   double temperature, RngStream& rng);

// -(1/J) sum_j log p_omega(S_j | C_j) over all rows of S. Gradients flow to
// omega only (the table is treated as constants); pass grads=nullptr to skip
// the backward pass. Throws ConfigError on an empty speaker list or when
// row counts differ.
double prior_nll_loss(const PriorNet& net, const Matrix& table,
                      const std::vector<SpeakerMetadata>& speakers,
                      PriorGrads* grads);

// Aligned flat views of parameters and gradients, used by the optimizer and
// by finite-difference checks.
std::vector<double*> prior_param_ptrs(PriorNet& net);
std::vector<double*> prior_grad_ptrs(PriorGrads& grads);

}  // namespace spawnlab

#endif  // SPAWNLAB_PRIOR_HPP_
