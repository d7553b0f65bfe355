// spawnlab/synth.cc

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

#include "spawnlab/synth.hpp"

#include <cmath>

#include "spawnlab/errors.hpp"
#include "spawnlab/rng.hpp"

namespace spawnlab {

namespace {

void check_inputs(const SynthParams& params, const std::vector<int>& tokens,
                  const Vec& s, const Vec& cond) {
  const SynthDims& dims = params.dims;
  if (tokens.empty()) throw ConfigError("synth_forward needs at least one token");
  for (int tok : tokens)
    if (tok < 0 || tok >= dims.vocab_size)
      throw ConfigError("token " + std::to_string(tok) + " outside [0, " +
                        std::to_string(dims.vocab_size) + ")");
  if (static_cast<int>(s.size()) != dims.speaker_dim)
    throw ConfigError("speaker embedding has dim " + std::to_string(s.size()) +
                      ", synthesizer expects " + std::to_string(dims.speaker_dim));
  if (static_cast<int>(cond.size()) != dims.cond_width)
    throw ConfigError("metadata one-hot has width " + std::to_string(cond.size()) +
                      ", synthesizer expects " + std::to_string(dims.cond_width));
}

// Hidden activations for one token; input layout [e(x_t); s; cond].
void hidden_for_token(const SynthParams& params, int token, const Vec& s,
                      const Vec& cond, Vec* hidden) {
  const SynthDims& dims = params.dims;
  const double* e = params.token_embed.row(token);
  hidden->resize(dims.hidden);
  for (int i = 0; i < dims.hidden; ++i) {
    double acc = params.b_hidden[i];
    const double* w = params.w_hidden.row(i);
    int col = 0;
    for (int k = 0; k < dims.token_embed_dim; ++k) acc += w[col++] * e[k];
    for (int d = 0; d < dims.speaker_dim; ++d) acc += w[col++] * s[d];
    for (int m = 0; m < dims.cond_width; ++m) acc += w[col++] * cond[m];
    (*hidden)[i] = std::tanh(acc);
  }
}

}  // namespace

void SynthGrads::init_like(const SynthParams& params) {
  token_embed = Matrix(params.token_embed.rows(), params.token_embed.cols());
  w_hidden = Matrix(params.w_hidden.rows(), params.w_hidden.cols());
  b_hidden.assign(params.b_hidden.size(), 0.0);
  w_out = Matrix(params.w_out.rows(), params.w_out.cols());
  b_out.assign(params.b_out.size(), 0.0);
}

void SynthGrads::set_zero() {
  token_embed.set_zero();
  w_hidden.set_zero();
  std::fill(b_hidden.begin(), b_hidden.end(), 0.0);
  w_out.set_zero();
  std::fill(b_out.begin(), b_out.end(), 0.0);
}

SynthParams make_synth_params(const SynthDims& dims, uint64_t seed) {
  if (dims.vocab_size <= 0 || dims.token_embed_dim <= 0 || dims.hidden <= 0 ||
      dims.frame_dim <= 0 || dims.speaker_dim <= 0 || dims.cond_width < 0)
    throw ConfigError("synthesizer dims must be positive (cond_width may be 0)");

  RngStream rng(seed, "synth-init");
  SynthParams params;
  params.dims = dims;
  params.token_embed = Matrix(dims.vocab_size, dims.token_embed_dim);
  for (size_t i = 0; i < params.token_embed.size(); ++i)
    params.token_embed.data()[i] = rng.normal();

  params.w_hidden = Matrix(dims.hidden, dims.input_width());
  double wh_scale = 1.0 / std::sqrt(static_cast<double>(dims.input_width()));
  for (size_t i = 0; i < params.w_hidden.size(); ++i)
    params.w_hidden.data()[i] = wh_scale * rng.normal();
  params.b_hidden.assign(dims.hidden, 0.0);

  params.w_out = Matrix(dims.frame_dim, dims.hidden);
  double wo_scale = 1.0 / std::sqrt(static_cast<double>(dims.hidden));
  for (size_t i = 0; i < params.w_out.size(); ++i)
    params.w_out.data()[i] = wo_scale * rng.normal();
  params.b_out.assign(dims.frame_dim, 0.0);
  return params;
}

Matrix init_speaker_table(int num_speakers, int dim, uint64_t seed) {
  if (num_speakers <= 0 || dim <= 0)
    throw ConfigError("speaker table needs positive speaker count and dim");
  RngStream rng(seed, "speaker-init");
  Matrix table(num_speakers, dim);
  for (size_t i = 0; i < table.size(); ++i) table.data()[i] = 0.1 * rng.normal();
  return table;
}

ExtractorParams make_extractor(int out_dim, int frame_dim, uint64_t seed) {
  if (out_dim <= 0 || frame_dim <= 0)
    throw ConfigError("extractor dims must be positive");
  ExtractorParams ex;
  ex.out_dim = out_dim;
  ex.frame_dim = frame_dim;
  ex.seed = seed;
  ex.projection = Matrix(out_dim, frame_dim);
  RngStream rng(seed, "extractor-init");
  double scale = 1.0 / std::sqrt(static_cast<double>(frame_dim));
  for (size_t i = 0; i < ex.projection.size(); ++i)
    ex.projection.data()[i] = scale * rng.normal();
  return ex;
}

Matrix synth_forward(const SynthParams& params, const std::vector<int>& tokens,
                     const Vec& s, const Vec& cond) {
  check_inputs(params, tokens, s, cond);
  const SynthDims& dims = params.dims;
  Matrix out(static_cast<int>(tokens.size()), dims.frame_dim);
  Vec hidden;
  for (size_t t = 0; t < tokens.size(); ++t) {
    hidden_for_token(params, tokens[t], s, cond, &hidden);
    for (int f = 0; f < dims.frame_dim; ++f) {
      double acc = params.b_out[f];
      const double* w = params.w_out.row(f);
      for (int i = 0; i < dims.hidden; ++i) acc += w[i] * hidden[i];
      out(static_cast<int>(t), f) = acc;
    }
  }
  return out;
}

Matrix synthesize(const SynthParams& params, const std::vector<int>& tokens,
                  const Vec& s, const Vec& cond) {
  return synth_forward(params, tokens, s, cond);
}

double synth_nll(const SynthParams& params, const Matrix& y,
                 const std::vector<int>& tokens, const Vec& s, const Vec& cond) {
  return synth_nll_backward(params, y, tokens, s, cond, 0.0, nullptr, nullptr);
}

double synth_nll_backward(const SynthParams& params, const Matrix& y,
                          const std::vector<int>& tokens, const Vec& s,
                          const Vec& cond, double weight, SynthGrads* grads,
                          Vec* ds) {
  check_inputs(params, tokens, s, cond);
  const SynthDims& dims = params.dims;
  const int t_count = static_cast<int>(tokens.size());
  if (y.rows() != t_count || y.cols() != dims.frame_dim)
    throw ConfigError("target frames are " + std::to_string(y.rows()) + "x" +
                      std::to_string(y.cols()) + ", expected " +
                      std::to_string(t_count) + "x" + std::to_string(dims.frame_dim));

  const double inv_n = 1.0 / (static_cast<double>(t_count) * dims.frame_dim);
  double loss = 0.0;
  Vec hidden, d_out(dims.frame_dim), d_hidden(dims.hidden);
  if (ds && static_cast<int>(ds->size()) != dims.speaker_dim)
    ds->assign(dims.speaker_dim, 0.0);

  for (int t = 0; t < t_count; ++t) {
    hidden_for_token(params, tokens[t], s, cond, &hidden);
    for (int f = 0; f < dims.frame_dim; ++f) {
      double acc = params.b_out[f];
      const double* w = params.w_out.row(f);
      for (int i = 0; i < dims.hidden; ++i) acc += w[i] * hidden[i];
      double r = acc - y(t, f);
      loss += std::abs(r) * inv_n;
      // Subgradient: sign(0) = 0.
      d_out[f] = (r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) * inv_n * weight;
    }
    if (!grads && !ds) continue;

    std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
    for (int f = 0; f < dims.frame_dim; ++f) {
      if (grads) {
        double* gw = grads->w_out.row(f);
        for (int i = 0; i < dims.hidden; ++i) gw[i] += d_out[f] * hidden[i];
        grads->b_out[f] += d_out[f];
      }
      const double* w = params.w_out.row(f);
      for (int i = 0; i < dims.hidden; ++i) d_hidden[i] += d_out[f] * w[i];
    }
    const double* e = params.token_embed.row(tokens[t]);
    double* ge = grads ? grads->token_embed.row(tokens[t]) : nullptr;
    for (int i = 0; i < dims.hidden; ++i) {
      double dpre = d_hidden[i] * (1.0 - hidden[i] * hidden[i]);
      const double* w = params.w_hidden.row(i);
      if (grads) {
        double* gw = grads->w_hidden.row(i);
        int col = 0;
        for (int k = 0; k < dims.token_embed_dim; ++k) gw[col++] += dpre * e[k];
        for (int d = 0; d < dims.speaker_dim; ++d) gw[col++] += dpre * s[d];
        for (int m = 0; m < dims.cond_width; ++m) gw[col++] += dpre * cond[m];
        grads->b_hidden[i] += dpre;
        for (int k = 0; k < dims.token_embed_dim; ++k) ge[k] += dpre * w[k];
      }
      if (ds)
        for (int d = 0; d < dims.speaker_dim; ++d)
          (*ds)[d] += dpre * w[dims.token_embed_dim + d];
    }
  }
  return loss;
}

Vec extract_speaker_vector(const ExtractorParams& extractor, const Matrix& frames) {
  if (frames.rows() == 0) throw ConfigError("extractor needs at least one frame");
  if (frames.cols() != extractor.frame_dim)
    throw ConfigError("frames have dim " + std::to_string(frames.cols()) +
                      ", extractor expects " + std::to_string(extractor.frame_dim));

  Vec mean(extractor.frame_dim, 0.0);
  for (int t = 0; t < frames.rows(); ++t)
    for (int f = 0; f < frames.cols(); ++f) mean[f] += frames(t, f);
  for (double& m : mean) m /= frames.rows();

  Vec v(extractor.out_dim, 0.0);
  for (int i = 0; i < extractor.out_dim; ++i)
    for (int f = 0; f < extractor.frame_dim; ++f)
      v[i] += extractor.projection(i, f) * mean[f];

  double n = norm2(v);
  if (n == 0.0)
    throw NumericalError("extractor input projects to the zero vector");
  for (double& x : v) x /= n;
  return v;
}

std::vector<double*> synth_param_ptrs(SynthParams& params) {
  std::vector<double*> out;
  auto add_mat = [&](Matrix& m) {
    for (size_t i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  auto add_vec = [&](Vec& v) {
    for (auto& x : v) out.push_back(&x);
  };
  add_mat(params.token_embed);
  add_mat(params.w_hidden);
  add_vec(params.b_hidden);
  add_mat(params.w_out);
  add_vec(params.b_out);
  return out;
}

std::vector<double*> synth_grad_ptrs(SynthGrads& grads) {
  std::vector<double*> out;
  auto add_mat = [&](Matrix& m) {
    for (size_t i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  auto add_vec = [&](Vec& v) {
    for (auto& x : v) out.push_back(&x);
  };
  add_mat(grads.token_embed);
  add_mat(grads.w_hidden);
  add_vec(grads.b_hidden);
  add_mat(grads.w_out);
  add_vec(grads.b_out);
  return out;
}

}  // namespace spawnlab
