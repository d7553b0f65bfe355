// spawnlab/synth.hpp

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

// Toy multi-speaker synthesizer: a per-token MLP mapping
// [token embedding; speaker embedding; metadata one-hot] -> frame, trained
// with a per-element L1 loss (the fixed-scale Laplace NLL up to an additive
// ln 2 per element). Also hosts the trainable speaker-embedding table and the
// fixed seeded extractor that stands in for a d-vector model.

#ifndef SPAWNLAB_SYNTH_HPP_
#define SPAWNLAB_SYNTH_HPP_

#include <cstdint>
#include <vector>

#include "spawnlab/matrix.hpp"

namespace spawnlab {

struct SynthDims {
  int vocab_size = 20;      // V
  int token_embed_dim = 8;  // E_tok
  int hidden = 32;          // H
  int frame_dim = 16;       // F
  int speaker_dim = 8;      // D
  int cond_width = 0;       // metadata one-hot width (locales + genders)

  int input_width() const { return token_embed_dim + speaker_dim + cond_width; }

  friend bool operator==(const SynthDims&, const SynthDims&) = default;
};

struct SynthParams {
  SynthDims dims;
  Matrix token_embed;  // V x E_tok
  Matrix w_hidden;     // H x input_width
  Vec b_hidden;        // H
  Matrix w_out;        // F x H
  Vec b_out;           // F

  friend bool operator==(const SynthParams&, const SynthParams&) = default;
};

struct SynthGrads {
  Matrix token_embed;
  Matrix w_hidden;
  Vec b_hidden;
  Matrix w_out;
  Vec b_out;

  void init_like(const SynthParams& params);
  void set_zero();
};

// Fixed linear projection of the mean frame; serialized as (seed, dims) only,
// the matrix is regenerated. Treat projection as immutable after creation.
struct ExtractorParams {
  int out_dim = 16;  // E_v
  int frame_dim = 16;
  uint64_t seed = 0;
  Matrix projection;  // out_dim x frame_dim

  friend bool operator==(const ExtractorParams&, const ExtractorParams&) = default;
};

// Parameter factories. Draws come from RngStream(seed, <purpose>) with
// purposes "synth-init", "speaker-init", "extractor-init".
SynthParams make_synth_params(const SynthDims& dims, uint64_t seed);

// J x D table, i.i.d. N(0, 0.1^2); rows align with corpus speaker ids.
Matrix init_speaker_table(int num_speakers, int dim, uint64_t seed);

ExtractorParams make_extractor(int out_dim, int frame_dim, uint64_t seed);

// y_hat_t = W_out tanh(W_h [e(x_t); s; cond] + b_h) + b_out. Deterministic.
// Throws ConfigError for out-of-range tokens or dimension mismatches.
Matrix synth_forward(const SynthParams& params, const std::vector<int>& tokens,
                     const Vec& s, const Vec& cond);

// Synthesis at temperature zero is the Laplace location parameter, i.e. the
// forward pass itself; named separately to mirror the generation pathway.
Matrix synthesize(const SynthParams& params, const std::vector<int>& tokens,
                  const Vec& s, const Vec& cond);

// Mean over all T x F elements of |y - y_hat|.
double synth_nll(const SynthParams& params, const Matrix& y,
                 const std::vector<int>& tokens, const Vec& s, const Vec& cond);

// As synth_nll, and accumulates weight * d(loss)/d(theta) into *grads and
// weight * d(loss)/d(s) into *ds (each optional).
double synth_nll_backward(const SynthParams& params, const Matrix& y,
                          const std::vector<int>& tokens, const Vec& s,
                          const Vec& cond, double weight, SynthGrads* grads,
                          Vec* ds);

// normalize(P * mean_t frames_t). Throws ConfigError on empty frames or a
// frame-dim mismatch, NumericalError if the projected mean is exactly zero.
Vec extract_speaker_vector(const ExtractorParams& extractor, const Matrix& frames);

// Aligned flat parameter/gradient views for the optimizer and FD checks.
std::vector<double*> synth_param_ptrs(SynthParams& params);
std::vector<double*> synth_grad_ptrs(SynthGrads& grads);

}  // namespace spawnlab

#endif  // SPAWNLAB_SYNTH_HPP_
