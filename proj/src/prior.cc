// spawnlab/prior.cc

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

#include "spawnlab/prior.hpp"

#include <cmath>
#include <limits>

#include "spawnlab/errors.hpp"

namespace spawnlab {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;  // ln(2*pi)

void validate_net_config(const PriorNetConfig& cfg) {
  if (cfg.num_components <= 0) throw ConfigError("prior needs at least one component");
  if (cfg.dim <= 0) throw ConfigError("prior dim must be >= 1");
  if (cfg.hidden <= 0) throw ConfigError("prior hidden width must be >= 1");
  if (cfg.sigma_floor <= 0.0) throw ConfigError("sigma_floor must be > 0");
}

// The net input for a metadata row: the concatenated one-hot blocks, or a
// single constant 1 when nothing is conditioned on.
Vec net_input(const PriorNet& net, const SpeakerMetadata& c) {
  CorpusHeader header;
  header.locales = net.locales;
  header.genders = net.genders;
  Vec x = one_hot_metadata(c, net.cfg.conditioning, header);
  if (x.empty()) x.push_back(1.0);
  if (static_cast<int>(x.size()) != net.in_dim())
    throw ConfigError("prior net input width mismatch");
  return x;
}

// Everything the backward pass needs from the forward pass.
struct PriorForward {
  Vec input;       // in_dim
  Vec hidden;      // tanh activations
  Vec alpha_pre;   // K logits
  Vec scale_pre;   // K*D raw softplus inputs
  MoGParams params;
};

PriorForward run_net(const PriorNet& net, const SpeakerMetadata& c) {
  const int k = net.cfg.num_components;
  const int d = net.cfg.dim;
  const int h = net.cfg.hidden;

  PriorForward fwd;
  fwd.input = net_input(net, c);
  fwd.hidden.resize(h);
  for (int i = 0; i < h; ++i) {
    double acc = net.b_hidden[i];
    for (int j = 0; j < net.in_dim(); ++j) acc += net.w_hidden(i, j) * fwd.input[j];
    fwd.hidden[i] = std::tanh(acc);
  }

  fwd.alpha_pre.resize(k);
  for (int i = 0; i < k; ++i) {
    double acc = net.b_alpha[i];
    for (int j = 0; j < h; ++j) acc += net.w_alpha(i, j) * fwd.hidden[j];
    fwd.alpha_pre[i] = acc;
  }
  // Softmax with max subtraction.
  double m = fwd.alpha_pre[0];
  for (double v : fwd.alpha_pre) m = std::max(m, v);
  double z = 0.0;
  fwd.params.weights.resize(k);
  for (int i = 0; i < k; ++i) {
    fwd.params.weights[i] = std::exp(fwd.alpha_pre[i] - m);
    z += fwd.params.weights[i];
  }
  for (int i = 0; i < k; ++i) fwd.params.weights[i] /= z;

  fwd.params.means = Matrix(k, d);
  fwd.params.scales = Matrix(k, d);
  fwd.scale_pre.resize(static_cast<size_t>(k) * d);
  for (int i = 0; i < k; ++i) {
    for (int dd = 0; dd < d; ++dd) {
      int row = i * d + dd;
      double mean = net.b_mean[row];
      double scale = net.b_scale[row];
      for (int j = 0; j < h; ++j) {
        mean += net.w_mean(row, j) * fwd.hidden[j];
        scale += net.w_scale(row, j) * fwd.hidden[j];
      }
      fwd.params.means(i, dd) = mean;
      fwd.scale_pre[row] = scale;
      fwd.params.scales(i, dd) = std::max(softplus(scale), net.cfg.sigma_floor);
    }
  }
  return fwd;
}

void validate_mog(const MoGParams& params) {
  const int k = params.num_components();
  const int d = params.dim();
  if (k == 0) throw ConfigError("mixture must have at least one component");
  if (params.means.rows() != k || params.scales.rows() != k || params.scales.cols() != d)
    throw ConfigError("mixture weights/means/scales shapes inconsistent");
  double total = 0.0;
  for (double w : params.weights) {
    if (!(w >= 0.0)) throw ConfigError("mixture weights must be >= 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw ConfigError("mixture weights must sum to 1 within 1e-6");
  for (size_t i = 0; i < params.scales.size(); ++i)
    if (!(params.scales.data()[i] > 0.0))
      throw ConfigError("mixture scales must be > 0");
}

// Per-component log alpha_k + log N(s; mu_k, diag sigma_k^2), then the
// log-sum-exp and, optionally, responsibilities r_k.
double mog_log_prob_impl(const MoGParams& params, const Vec& s, Vec* resp) {
  validate_mog(params);
  const int k = params.num_components();
  const int d = params.dim();
  if (static_cast<int>(s.size()) != d)
    throw ConfigError("mog_log_prob: point has dim " + std::to_string(s.size()) +
                      ", mixture has dim " + std::to_string(d));

  Vec terms(k, -std::numeric_limits<double>::infinity());
  for (int i = 0; i < k; ++i) {
    if (params.weights[i] == 0.0) continue;
    double t = std::log(params.weights[i]) - 0.5 * d * kLogTwoPi;
    for (int dd = 0; dd < d; ++dd) {
      double sigma = params.scales(i, dd);
      double zz = (s[dd] - params.means(i, dd)) / sigma;
      t -= std::log(sigma) + 0.5 * zz * zz;
    }
    terms[i] = t;
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double t : terms) m = std::max(m, t);
  if (!std::isfinite(m)) throw NumericalError("mixture density vanished everywhere");
  double z = 0.0;
  for (double t : terms) z += std::exp(t - m);
  double logp = m + std::log(z);
  if (resp) {
    resp->resize(k);
    for (int i = 0; i < k; ++i) (*resp)[i] = std::exp(terms[i] - logp);
  }
  return logp;
}

}  // namespace

void PriorGrads::init_like(const PriorNet& net) {
  w_hidden = Matrix(net.w_hidden.rows(), net.w_hidden.cols());
  b_hidden.assign(net.b_hidden.size(), 0.0);
  w_alpha = Matrix(net.w_alpha.rows(), net.w_alpha.cols());
  b_alpha.assign(net.b_alpha.size(), 0.0);
  w_mean = Matrix(net.w_mean.rows(), net.w_mean.cols());
  b_mean.assign(net.b_mean.size(), 0.0);
  w_scale = Matrix(net.w_scale.rows(), net.w_scale.cols());
  b_scale.assign(net.b_scale.size(), 0.0);
}

void PriorGrads::set_zero() {
  w_hidden.set_zero();
  std::fill(b_hidden.begin(), b_hidden.end(), 0.0);
  w_alpha.set_zero();
  std::fill(b_alpha.begin(), b_alpha.end(), 0.0);
  w_mean.set_zero();
  std::fill(b_mean.begin(), b_mean.end(), 0.0);
  w_scale.set_zero();
  std::fill(b_scale.begin(), b_scale.end(), 0.0);
}

PriorNet make_prior_net(const PriorNetConfig& cfg, const CorpusHeader& header,
                        uint64_t seed) {
  validate_net_config(cfg);
  PriorNet net;
  net.cfg = cfg;
  net.locales = header.locales;
  net.genders = header.genders;

  int in_dim = std::max(1, one_hot_width(cfg.conditioning, header));
  const int k = cfg.num_components;
  const int d = cfg.dim;
  const int h = cfg.hidden;

  RngStream rng(seed, "prior-init");
  net.w_hidden = Matrix(h, in_dim);
  double w_scale_init = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (size_t i = 0; i < net.w_hidden.size(); ++i)
    net.w_hidden.data()[i] = w_scale_init * rng.normal();
  net.b_hidden.assign(h, 0.0);

  net.w_alpha = Matrix(k, h);  // zero: alpha starts exactly uniform
  net.b_alpha.assign(k, 0.0);
  net.w_mean = Matrix(k * d, h);
  net.w_scale = Matrix(k * d, h);

  // Component mean biases: uniform in a ball of radius 0.1 so components are
  // distinguishable from step one without moving the prior away from the
  // speaker-table init scale.
  net.b_mean.assign(static_cast<size_t>(k) * d, 0.0);
  for (int i = 0; i < k; ++i) {
    Vec dir = rng.normal_vec(d);
    double n = norm2(dir);
    double radius = 0.1 * std::pow(rng.uniform(), 1.0 / d);
    for (int dd = 0; dd < d; ++dd) net.b_mean[i * d + dd] = radius * dir[dd] / n;
  }

  // Scale biases: sigma starts at 1 everywhere (well above the floor).
  net.b_scale.assign(static_cast<size_t>(k) * d, softplus_inverse(1.0));
  return net;
}

MoGParams prior_params(const PriorNet& net, const SpeakerMetadata& c) {
  return run_net(net, c).params;
}

double mog_log_prob(const MoGParams& params, const Vec& s) {
  return mog_log_prob_impl(params, s, nullptr);
}

double prior_log_prob(const PriorNet& net, const SpeakerMetadata& c, const Vec& s) {
  return mog_log_prob(prior_params(net, c), s);
}

double prior_log_prob_backward(const PriorNet& net, const SpeakerMetadata& c,
                               const Vec& s, double weight, PriorGrads* grads,
                               Vec* ds) {
  PriorForward fwd = run_net(net, c);
  Vec resp;
  double logp = mog_log_prob_impl(fwd.params, s, &resp);
  if (!grads && !ds) return logp;

  const int k = net.cfg.num_components;
  const int d = net.cfg.dim;
  const int h = net.cfg.hidden;
  const MoGParams& p = fwd.params;

  // d(log p) w.r.t. mixture parameters.
  Vec d_alpha_pre(k);  // via softmax: r_k - alpha_k
  Matrix d_mean(k, d), d_scale(k, d);
  for (int i = 0; i < k; ++i) {
    d_alpha_pre[i] = resp[i] - p.weights[i];
    for (int dd = 0; dd < d; ++dd) {
      double sigma = p.scales(i, dd);
      double diff = s[dd] - p.means(i, dd);
      d_mean(i, dd) = resp[i] * diff / (sigma * sigma);
      d_scale(i, dd) = resp[i] * (diff * diff / (sigma * sigma * sigma) - 1.0 / sigma);
    }
  }

  if (ds) {
    if (static_cast<int>(ds->size()) != d) ds->assign(d, 0.0);
    for (int dd = 0; dd < d; ++dd) {
      double acc = 0.0;
      for (int i = 0; i < k; ++i) {
        double sigma = p.scales(i, dd);
        acc += resp[i] * (p.means(i, dd) - s[dd]) / (sigma * sigma);
      }
      (*ds)[dd] += weight * acc;
    }
  }

  if (grads) {
    // Heads, chaining the softplus floor: below the floor the scale head gets
    // no gradient.
    Vec d_hidden(h, 0.0);
    for (int i = 0; i < k; ++i) {
      grads->b_alpha[i] += weight * d_alpha_pre[i];
      for (int j = 0; j < h; ++j) {
        grads->w_alpha(i, j) += weight * d_alpha_pre[i] * fwd.hidden[j];
        d_hidden[j] += d_alpha_pre[i] * net.w_alpha(i, j);
      }
      for (int dd = 0; dd < d; ++dd) {
        int row = i * d + dd;
        double du = 0.0;
        if (softplus(fwd.scale_pre[row]) > net.cfg.sigma_floor)
          du = d_scale(i, dd) * sigmoid(fwd.scale_pre[row]);
        grads->b_mean[row] += weight * d_mean(i, dd);
        grads->b_scale[row] += weight * du;
        for (int j = 0; j < h; ++j) {
          grads->w_mean(row, j) += weight * d_mean(i, dd) * fwd.hidden[j];
          grads->w_scale(row, j) += weight * du * fwd.hidden[j];
          d_hidden[j] += d_mean(i, dd) * net.w_mean(row, j) + du * net.w_scale(row, j);
        }
      }
    }
    // Hidden layer (tanh' = 1 - h^2); the input is data, not a parameter.
    for (int i = 0; i < h; ++i) {
      double dpre = d_hidden[i] * (1.0 - fwd.hidden[i] * fwd.hidden[i]);
      grads->b_hidden[i] += weight * dpre;
      for (int j = 0; j < net.in_dim(); ++j)
        grads->w_hidden(i, j) += weight * dpre * fwd.input[j];
    }
  }
  return logp;
}

Vec mog_sample(const MoGParams& params, double temperature, RngStream& rng) {
  validate_mog(params);
  if (temperature < 0.0) throw ConfigError("sampling temperature must be >= 0");
  const int d = params.dim();
  size_t k = rng.categorical(params.weights);
  Vec s(d);
  for (int dd = 0; dd < d; ++dd) {
    double eps = rng.normal();  // always consumed so streams stay aligned
    s[dd] = params.means(static_cast<int>(k), dd) +
            temperature * params.scales(static_cast<int>(k), dd) * eps;
  }
  return s;
}

Vec sample_speaker(const PriorNet& net, const SpeakerMetadata& c,
                   double temperature, RngStream& rng) {
  return mog_sample(prior_params(net, c), temperature, rng);
}

double prior_nll_loss(const PriorNet& net, const Matrix& table,
                      const std::vector<SpeakerMetadata>& speakers,
                      PriorGrads* grads) {
  const int j_count = static_cast<int>(speakers.size());
  if (j_count == 0) throw ConfigError("prior_nll_loss needs at least one speaker");
  if (table.rows() != j_count)
    throw ConfigError("speaker table rows (" + std::to_string(table.rows()) +
                      ") != metadata rows (" + std::to_string(j_count) + ")");
  if (table.cols() != net.cfg.dim)
    throw ConfigError("speaker table dim != prior dim");

  double loss = 0.0;
  double weight = -1.0 / j_count;
  for (int j = 0; j < j_count; ++j) {
    double logp = prior_log_prob_backward(net, speakers[j], table.row_vec(j), weight,
                                          grads, /*ds=*/nullptr);
    loss -= logp / j_count;
  }
  return loss;
}

std::vector<double*> prior_param_ptrs(PriorNet& net) {
  std::vector<double*> out;
  auto add_mat = [&](Matrix& m) {
    for (size_t i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  auto add_vec = [&](Vec& v) {
    for (auto& x : v) out.push_back(&x);
  };
  add_mat(net.w_hidden);
  add_vec(net.b_hidden);
  add_mat(net.w_alpha);
  add_vec(net.b_alpha);
  add_mat(net.w_mean);
  add_vec(net.b_mean);
  add_mat(net.w_scale);
  add_vec(net.b_scale);
  return out;
}

std::vector<double*> prior_grad_ptrs(PriorGrads& grads) {
  std::vector<double*> out;
  auto add_mat = [&](Matrix& m) {
    for (size_t i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  auto add_vec = [&](Vec& v) {
    for (auto& x : v) out.push_back(&x);
  };
  add_mat(grads.w_hidden);
  add_vec(grads.b_hidden);
  add_mat(grads.w_alpha);
  add_vec(grads.b_alpha);
  add_mat(grads.w_mean);
  add_vec(grads.b_mean);
  add_mat(grads.w_scale);
  add_vec(grads.b_scale);
  return out;
}

}  // namespace spawnlab
