// spawnlab/tests/test_synth.cc

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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "spawnlab/errors.hpp"
#include "spawnlab/prior.hpp"
#include "spawnlab/synth.hpp"
#include "testutil.hpp"

using namespace spawnlab;
using spawnlab::testing::two_cluster_config;

namespace {

SynthDims small_dims() {
  SynthDims dims;
  dims.vocab_size = 6;
  dims.token_embed_dim = 3;
  dims.hidden = 5;
  dims.frame_dim = 4;
  dims.speaker_dim = 2;
  dims.cond_width = 3;
  return dims;
}

struct Instance {
  SynthParams params;
  std::vector<int> tokens;
  Vec s, cond;
  Matrix y;
};

// Random instance whose residuals are bounded away from zero, so the L1 kink
// cannot sit inside the finite-difference stencil.
Instance random_instance(uint64_t seed, double margin = 0.05) {
  Instance inst;
  inst.params = make_synth_params(small_dims(), seed);
  RngStream rng(seed, "test-instance");
  int t_count = 2 + static_cast<int>(rng.uniform_int(3));
  for (int t = 0; t < t_count; ++t)
    inst.tokens.push_back(static_cast<int>(rng.uniform_int(small_dims().vocab_size)));
  inst.s = rng.normal_vec(small_dims().speaker_dim);
  inst.cond = {0.0, 1.0, 1.0};
  inst.y = synth_forward(inst.params, inst.tokens, inst.s, inst.cond);
  for (size_t i = 0; i < inst.y.size(); ++i) {
    double offset = margin + 0.5 * rng.uniform();
    inst.y.data()[i] += rng.uniform() < 0.5 ? -offset : offset;
  }
  return inst;
}

}  // namespace

TEST_CASE("forward pass basics") {
  SynthDims dims = small_dims();
  SynthParams params = make_synth_params(dims, 3);
  std::vector<int> tokens = {0, 2, 5};
  Vec s = {0.1, -0.2};
  Vec cond = {1.0, 0.0, 1.0};

  SUBCASE("deterministic") {
    CHECK(synth_forward(params, tokens, s, cond) == synth_forward(params, tokens, s, cond));
  }
  SUBCASE("zero weights collapse to the output bias") {
    SynthParams zero = params;
    zero.token_embed.set_zero();
    zero.w_hidden.set_zero();
    std::fill(zero.b_hidden.begin(), zero.b_hidden.end(), 0.0);
    zero.w_out.set_zero();
    zero.b_out = {1.0, -2.0, 0.5, 0.0};
    Matrix out = synth_forward(zero, tokens, s, cond);
    for (int t = 0; t < out.rows(); ++t)
      for (int f = 0; f < out.cols(); ++f) CHECK(out(t, f) == zero.b_out[f]);
  }
  SUBCASE("speaker embedding changes the output when its block is active") {
    Vec s2 = {0.4, 0.3};
    CHECK_FALSE(synth_forward(params, tokens, s, cond) ==
                synth_forward(params, tokens, s2, cond));
    SynthParams blocked = params;
    for (int i = 0; i < dims.hidden; ++i)
      for (int d = 0; d < dims.speaker_dim; ++d)
        blocked.w_hidden(i, dims.token_embed_dim + d) = 0.0;
    CHECK(synth_forward(blocked, tokens, s, cond) ==
          synth_forward(blocked, tokens, s2, cond));
  }
  SUBCASE("metadata acts only through its one-hot block") {
    Vec cond2 = {0.0, 1.0, 0.0};
    CHECK_FALSE(synth_forward(params, tokens, s, cond) ==
                synth_forward(params, tokens, s, cond2));
    SynthParams blocked = params;
    for (int i = 0; i < dims.hidden; ++i)
      for (int m = 0; m < dims.cond_width; ++m)
        blocked.w_hidden(i, dims.token_embed_dim + dims.speaker_dim + m) = 0.0;
    CHECK(synth_forward(blocked, tokens, s, cond) ==
          synth_forward(blocked, tokens, s, cond2));
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(synth_forward(params, {6}, s, cond), ConfigError);
    CHECK_THROWS_AS(synth_forward(params, {}, s, cond), ConfigError);
    CHECK_THROWS_AS(synth_forward(params, tokens, {0.1}, cond), ConfigError);
    CHECK_THROWS_AS(synth_forward(params, tokens, s, {1.0}), ConfigError);
  }
}

TEST_CASE("synthesize is the forward pass, bit-exact") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Instance inst = random_instance(seed);
    CHECK(synthesize(inst.params, inst.tokens, inst.s, inst.cond) ==
          synth_forward(inst.params, inst.tokens, inst.s, inst.cond));
  }
}

TEST_CASE("generated-speaker path runs without reference audio") {
  PriorNetConfig pcfg;
  pcfg.num_components = 2;
  pcfg.dim = small_dims().speaker_dim;
  CorpusHeader header;
  header.vocab_size = small_dims().vocab_size;
  header.frame_dim = small_dims().frame_dim;
  header.locales = {"us"};
  header.genders = {"f", "m"};
  PriorNet net = make_prior_net(pcfg, header, 4);
  RngStream rng(5, "spawn");
  Vec s = sample_speaker(net, {0, "us", "f"}, 1.0, rng);

  SynthParams params = make_synth_params(small_dims(), 6);
  Matrix frames = synthesize(params, {1, 2, 3}, s, {1.0, 1.0, 0.0});
  CHECK(frames.rows() == 3);
  CHECK(all_finite(frames));
}

TEST_CASE("L1 loss values") {
  SynthParams params = make_synth_params(small_dims(), 7);
  std::vector<int> tokens = {1, 4};
  Vec s = {0.2, 0.1};
  Vec cond = {1.0, 0.0, 0.0};

  SUBCASE("loss at the forward output is zero") {
    Matrix y = synth_forward(params, tokens, s, cond);
    CHECK(synth_nll(params, y, tokens, s, cond) == 0.0);
  }
  SUBCASE("all-ones target against a zero net gives exactly one") {
    SynthParams zero = params;
    for (double* p : synth_param_ptrs(zero)) *p = 0.0;
    Matrix ones(2, small_dims().frame_dim, 1.0);
    CHECK(synth_nll(zero, ones, tokens, s, cond) == 1.0);
  }
  SUBCASE("repeating the utterance leaves the mean unchanged") {
    Matrix y = synth_forward(params, tokens, s, cond);
    for (size_t i = 0; i < y.size(); ++i) y.data()[i] += 0.3;
    double base = synth_nll(params, y, tokens, s, cond);

    std::vector<int> tokens2 = {1, 4, 1, 4};
    Matrix y2(4, y.cols());
    for (int t = 0; t < 4; ++t) y2.set_row(t, y.row_vec(t % 2));
    CHECK(synth_nll(params, y2, tokens2, s, cond) == doctest::Approx(base).epsilon(1e-12));
  }
  SUBCASE("shape mismatch is rejected") {
    Matrix y(3, small_dims().frame_dim);
    CHECK_THROWS_AS(synth_nll(params, y, tokens, s, cond), ConfigError);
  }
}

TEST_CASE("analytic synthesizer gradients match finite differences") {
  double worst = 0.0;
  for (uint64_t seed = 50; seed < 55; ++seed) {
    Instance inst = random_instance(seed);
    SynthGrads grads;
    grads.init_like(inst.params);
    Vec ds(inst.s.size(), 0.0);
    synth_nll_backward(inst.params, inst.y, inst.tokens, inst.s, inst.cond, 1.0,
                       &grads, &ds);

    const double eps = 1e-4;
    auto params = synth_param_ptrs(inst.params);
    auto gptrs = synth_grad_ptrs(grads);
    REQUIRE(params.size() == gptrs.size());
    for (size_t i = 0; i < params.size(); ++i) {
      double saved = *params[i];
      *params[i] = saved + eps;
      double up = synth_nll(inst.params, inst.y, inst.tokens, inst.s, inst.cond);
      *params[i] = saved - eps;
      double down = synth_nll(inst.params, inst.y, inst.tokens, inst.s, inst.cond);
      *params[i] = saved;
      double fd = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(*gptrs[i] - fd) /
                                  std::max(1e-8, std::abs(*gptrs[i]) + std::abs(fd)));
    }
    for (size_t d = 0; d < inst.s.size(); ++d) {
      Vec up_s = inst.s, down_s = inst.s;
      up_s[d] += eps;
      down_s[d] -= eps;
      double fd = (synth_nll(inst.params, inst.y, inst.tokens, up_s, inst.cond) -
                   synth_nll(inst.params, inst.y, inst.tokens, down_s, inst.cond)) /
                  (2 * eps);
      worst = std::max(worst,
                       std::abs(ds[d] - fd) / std::max(1e-8, std::abs(ds[d]) + std::abs(fd)));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("the synthesizer family contains the oracle generator") {
  // Build theta from the oracle's affine map: route each frame dim through
  // one tanh unit at a tiny scale so the linearization error is far below
  // the assertion tolerance (tanh(tx)/t = x - t^2 x^3/3 + ...).
  SynthConfig cfg = two_cluster_config(4, 3, 8.0, 0.2, /*noise_scale=*/0.0);
  Corpus corpus = generate_synthetic_corpus(cfg, 70);
  const CorpusTruth& truth = *corpus.truth;

  SynthDims dims;
  dims.vocab_size = cfg.vocab_size;
  dims.token_embed_dim = cfg.token_embed_dim;
  dims.frame_dim = cfg.frame_dim;
  dims.speaker_dim = cfg.truth_dim;
  dims.hidden = cfg.frame_dim;  // one unit per output dim
  dims.cond_width = 0;

  const double t = std::ldexp(1.0, -40);
  SynthParams params;
  params.dims = dims;
  params.token_embed = truth.token_embed;
  params.w_hidden = Matrix(dims.hidden, dims.input_width());
  for (int f = 0; f < cfg.frame_dim; ++f) {
    for (int k = 0; k < cfg.token_embed_dim; ++k)
      params.w_hidden(f, k) = t * truth.mix_token(f, k);
    for (int d = 0; d < cfg.truth_dim; ++d)
      params.w_hidden(f, cfg.token_embed_dim + d) = t * truth.mix_speaker(f, d);
  }
  params.b_hidden.assign(dims.hidden, 0.0);
  params.w_out = Matrix(dims.frame_dim, dims.hidden);
  for (int f = 0; f < dims.frame_dim; ++f) params.w_out(f, f) = 1.0 / t;
  params.b_out = truth.bias;

  double worst = 0.0;
  for (const auto& utt : corpus.utterances) {
    double nll = synth_nll(params, utt.frames, utt.tokens,
                           truth.vectors.row_vec(utt.speaker_id), {});
    worst = std::max(worst, nll);
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("extractor") {
  SUBCASE("identity projection returns the normalized mean frame") {
    ExtractorParams ex;
    ex.out_dim = 3;
    ex.frame_dim = 3;
    ex.projection = Matrix(3, 3);
    for (int i = 0; i < 3; ++i) ex.projection(i, i) = 1.0;
    Matrix frames(4, 3);
    for (int t = 0; t < 4; ++t) frames.set_row(t, {3.0, 0.0, 4.0});
    Vec v = extract_speaker_vector(ex, frames);
    CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(v[1] == 0.0);
    CHECK(v[2] == doctest::Approx(0.8).epsilon(1e-12));
  }
  SUBCASE("scale and frame order do not matter; norm is one") {
    ExtractorParams ex = make_extractor(5, 4, 21);
    RngStream rng(22, "frames");
    Matrix frames(6, 4);
    for (size_t i = 0; i < frames.size(); ++i) frames.data()[i] = rng.normal();

    Vec base = extract_speaker_vector(ex, frames);
    CHECK(std::abs(norm2(base) - 1.0) <= 1e-9);

    Matrix scaled = frames;
    for (size_t i = 0; i < scaled.size(); ++i) scaled.data()[i] *= 3.0;
    Vec v_scaled = extract_speaker_vector(ex, scaled);
    for (int i = 0; i < 5; ++i) CHECK(v_scaled[i] == doctest::Approx(base[i]).epsilon(1e-12));

    Matrix permuted(6, 4);
    std::vector<int> order = {5, 2, 0, 4, 1, 3};
    for (int t = 0; t < 6; ++t) permuted.set_row(t, frames.row_vec(order[t]));
    Vec v_perm = extract_speaker_vector(ex, permuted);
    for (int i = 0; i < 5; ++i) CHECK(v_perm[i] == doctest::Approx(base[i]).epsilon(1e-12));
  }
  SUBCASE("same seed regenerates the same projection") {
    CHECK(make_extractor(5, 4, 21) == make_extractor(5, 4, 21));
    CHECK_FALSE(make_extractor(5, 4, 21) == make_extractor(5, 4, 22));
  }
  SUBCASE("degenerate input raises") {
    ExtractorParams ex = make_extractor(5, 4, 21);
    Matrix zeros(3, 4);
    CHECK_THROWS_AS(extract_speaker_vector(ex, zeros), NumericalError);
    CHECK_THROWS_AS(extract_speaker_vector(ex, Matrix()), ConfigError);
    CHECK_THROWS_AS(extract_speaker_vector(ex, Matrix(2, 7)), ConfigError);
  }
}

TEST_CASE("speaker table init has the documented scale") {
  Matrix table = init_speaker_table(200, 8, 31);
  CHECK(table.rows() == 200);
  double sq = 0.0;
  for (size_t i = 0; i < table.size(); ++i) sq += table.data()[i] * table.data()[i];
  double stddev = std::sqrt(sq / table.size());
  CHECK(stddev == doctest::Approx(0.1).epsilon(0.1));
  CHECK(init_speaker_table(200, 8, 31) == table);
}
