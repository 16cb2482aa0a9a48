#ifndef SNF_VI_HPP
#define SNF_VI_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "snf/amortize.hpp"
#include "snf/diff.hpp"
#include "snf/distributions.hpp"
#include "snf/flows.hpp"
#include "snf/random.hpp"

namespace snf {

struct TrainingConfig {
  double learning_rate = 0.0005;
  Index anneal_epochs = 100;
  Index batch = 32;
  Index epochs = 200;
  std::uint64_t seed = 0;
  Index importance_samples = 5000;
  Index eval_samples = 50000;  // sample count for the final free-energy estimate

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("TrainingConfig: learning_rate must be > 0");
    if (anneal_epochs < 1) throw ConfigError("TrainingConfig: anneal_epochs must be >= 1");
    if (batch < 1) throw ConfigError("TrainingConfig: batch must be >= 1");
    if (epochs < 0) throw ConfigError("TrainingConfig: epochs must be >= 0");
    if (importance_samples < 1) throw ConfigError("TrainingConfig: importance_samples must be >= 1");
    if (eval_samples < 1) throw ConfigError("TrainingConfig: eval_samples must be >= 1");
  }
};

inline double anneal_beta(Index epoch, const TrainingConfig& cfg) {
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(cfg.anneal_epochs));
}

// ---------------------------------------------------------------------------
// Generic parameter-block plumbing over any model exposing for_each_param.
// Enumeration order is fixed by the model, so collect / assign / gradients
// stay aligned by index.

template <class Model>
std::vector<Matrix> collect_parameters(const Model& m) {
  std::vector<Matrix> out;
  m.for_each_param([&](const char*, const auto& p) { out.emplace_back(p); });
  return out;
}

template <class Model>
std::vector<std::string> parameter_names(const Model& m) {
  std::vector<std::string> out;
  m.for_each_param([&](const char* name, const auto&) { out.emplace_back(name); });
  return out;
}

template <class Model, class Scalar>
void assign_parameters(Model& m, const std::vector<MatrixX<Scalar>>& blocks) {
  std::size_t k = 0;
  m.for_each_param([&](const char*, auto& p) {
    if (k >= blocks.size()) throw DimensionError("assign_parameters: too few blocks");
    p = blocks[k++];
  });
  if (k != blocks.size()) throw DimensionError("assign_parameters: too many blocks");
}

// ---------------------------------------------------------------------------
// Flow-stack log-density of a reparameterized sample.

template <class Scalar>
struct FlowSampleT {
  VectorX<Scalar> z;  // z_K
  Scalar log_q;       // log q_K(z_K)
};

// log q_K(z_K) = log q_0(z_0) - sum_k log|det J_k| at z_0 = mu + sigma .* eps.
template <class Scalar>
FlowSampleT<Scalar> log_q_k(const DiagGaussianT<Scalar>& base, const FlowStackT<Scalar>& stack,
                            const Vector& eps) {
  VectorX<Scalar> z0 = sample_base(base, eps);
  Scalar lq = base_log_prob_from_eps(base, eps);
  FlowStep<Scalar> out = stack_forward(stack, z0);
  return {std::move(out.z), lq - out.log_det};
}

// Monte-Carlo reverse-KL surrogate F = mean_s [log q_K(z_s) - log target(z_s)].
// Columns of eps are the fixed standard-normal draws (common random numbers).
template <class Scalar>
Scalar free_energy_target(const DiagGaussianT<Scalar>& base, const FlowStackT<Scalar>& stack,
                          const TargetDensity& target, const Matrix& eps) {
  if (eps.cols() < 1) throw DimensionError("free_energy_target: need at least one sample");
  Scalar f(0);
  for (Index s = 0; s < eps.cols(); ++s) {
    FlowSampleT<Scalar> fs = log_q_k(base, stack, eps.col(s));
    Scalar lt = target.log_density(fs.z);
    if (!std::isfinite(value_of(lt))) {
      throw NumericalError("free_energy_target: non-finite target log-density");
    }
    f += fs.log_q - lt;
  }
  return f / Scalar(static_cast<double>(eps.cols()));
}

// ---------------------------------------------------------------------------
// Toy VAE pieces: gated dense encoder, Bernoulli decoder.

template <class Scalar>
struct GatedDenseT {
  MatrixX<Scalar> w, v;  // out x in
  VectorX<Scalar> b, c;  // out

  template <class S2>
  GatedDenseT<S2> cast() const {
    return {w.template cast<S2>(), v.template cast<S2>(), b.template cast<S2>(),
            c.template cast<S2>()};
  }
};
using GatedDense = GatedDenseT<double>;

// (Wx + b) .* sigmoid(Vx + c)
template <class Scalar>
VectorX<Scalar> gated_dense_apply(const GatedDenseT<Scalar>& l, const VectorX<Scalar>& x) {
  VectorX<Scalar> a = l.w * x + l.b;
  VectorX<Scalar> g = l.v * x + l.c;
  VectorX<Scalar> out(a.size());
  for (Index i = 0; i < a.size(); ++i) out[i] = a[i] * logistic(g[i]);
  return out;
}

// log p(x | logits) for x in {0,1}^n under independent Bernoullis:
// sum_i x_i log sigmoid(l_i) + (1 - x_i) log(1 - sigmoid(l_i)).
template <class Scalar>
Scalar bernoulli_log_prob(const VectorX<Scalar>& logits, const Vector& x) {
  if (logits.size() != x.size()) throw DimensionError("bernoulli_log_prob: size mismatch");
  Scalar lp(0);
  for (Index i = 0; i < x.size(); ++i) {
    lp -= x[i] * softplus(-logits[i]) + (1.0 - x[i]) * softplus(logits[i]);
  }
  return lp;
}

template <class Scalar>
struct VaeModelT {
  Index data_dim = 0;
  GatedDenseT<Scalar> enc1, enc2;  // X -> E -> E
  HypernetworkT<Scalar> hyper;
  GatedDenseT<Scalar> dec1;  // D -> E
  MatrixX<Scalar> dec_w;     // X x E
  VectorX<Scalar> dec_b;     // X

  template <class S2>
  VaeModelT<S2> cast() const {
    VaeModelT<S2> out;
    out.data_dim = data_dim;
    out.enc1 = enc1.template cast<S2>();
    out.enc2 = enc2.template cast<S2>();
    out.hyper = hyper.template cast<S2>();
    out.dec1 = dec1.template cast<S2>();
    out.dec_w = dec_w.template cast<S2>();
    out.dec_b = dec_b.template cast<S2>();
    return out;
  }

  template <class F>
  void for_each_param(F&& f) {
    f("enc1.w", enc1.w);
    f("enc1.b", enc1.b);
    f("enc1.v", enc1.v);
    f("enc1.c", enc1.c);
    f("enc2.w", enc2.w);
    f("enc2.b", enc2.b);
    f("enc2.v", enc2.v);
    f("enc2.c", enc2.c);
    hyper.for_each_param(f);
    f("dec1.w", dec1.w);
    f("dec1.b", dec1.b);
    f("dec1.v", dec1.v);
    f("dec1.c", dec1.c);
    f("dec.out.w", dec_w);
    f("dec.out.b", dec_b);
  }
  template <class F>
  void for_each_param(F&& f) const {
    const_cast<VaeModelT*>(this)->for_each_param(
        [&](const char* name, auto& p) { f(name, std::as_const(p)); });
  }

  VectorX<Scalar> encode(const Vector& x) const {
    VectorX<Scalar> xs = x.template cast<Scalar>();
    return gated_dense_apply(enc2, gated_dense_apply(enc1, xs));
  }
  VectorX<Scalar> decode_logits(const VectorX<Scalar>& z) const {
    return dec_w * gated_dense_apply(dec1, z) + dec_b;
  }
};
using VaeModel = VaeModelT<double>;

// F(x) = beta * (log q_K(z|x) - log p(z)) - log p(x|z) at a fixed noise draw.
// The annealing prefactor multiplies the sampled KL surrogate only.
template <class Scalar>
Scalar vae_free_energy_datum(const VaeModelT<Scalar>& m, const Vector& x, const Vector& eps,
                             double beta, const Activation& act = {}) {
  VectorX<Scalar> features = m.encode(x);
  AmortizedPosteriorT<Scalar> post = amortize(m.hyper, features, act);
  FlowSampleT<Scalar> fs = log_q_k(post.base, post.stack, eps);
  Scalar log_prior = std_normal_log_prob(fs.z);
  Scalar log_lik = bernoulli_log_prob(m.decode_logits(fs.z), x);
  return Scalar(beta) * (fs.log_q - log_prior) - log_lik;
}

// Mean free energy over a batch; eps column s pairs with data[s].
template <class Scalar>
Scalar vae_free_energy_batch(const VaeModelT<Scalar>& m, const std::vector<Vector>& data,
                             const Matrix& eps, double beta, const Activation& act = {}) {
  if (data.empty()) throw DimensionError("vae_free_energy_batch: empty batch");
  if (eps.cols() != static_cast<Index>(data.size())) {
    throw DimensionError("vae_free_energy_batch: eps/data count mismatch");
  }
  Scalar f(0);
  for (std::size_t s = 0; s < data.size(); ++s) {
    f += vae_free_energy_datum(m, data[s], eps.col(static_cast<Index>(s)), beta, act);
  }
  return f / Scalar(static_cast<double>(data.size()));
}

// ---------------------------------------------------------------------------
// Direct (non-amortized) parameterization for fitting bare targets: raw
// per-flow blocks plus base mu / log sigma, constrained through the same
// builders the hypernetwork uses.

template <class Scalar>
struct TargetModelT {
  AmortizationConfig config;
  VectorX<Scalar> mu, log_sigma;
  std::vector<VectorX<Scalar>> flow_raw;   // K raw blocks (non-IAF variants)
  std::vector<MadeParamsT<Scalar>> made;   // K conditioners (IAF)

  template <class S2>
  TargetModelT<S2> cast() const {
    TargetModelT<S2> out;
    out.config = config;
    out.mu = mu.template cast<S2>();
    out.log_sigma = log_sigma.template cast<S2>();
    out.flow_raw.reserve(flow_raw.size());
    for (const auto& r : flow_raw) out.flow_raw.push_back(r.template cast<S2>());
    out.made.reserve(made.size());
    for (const auto& m : made) out.made.push_back(m.template cast<S2>());
    return out;
  }

  template <class F>
  void for_each_param(F&& f) {
    f("base.mu", mu);
    f("base.log_sigma", log_sigma);
    for (std::size_t k = 0; k < flow_raw.size(); ++k) {
      f(("flow[" + std::to_string(k) + "].raw").c_str(), flow_raw[k]);
    }
    for (std::size_t k = 0; k < made.size(); ++k) {
      std::string base = "made[" + std::to_string(k) + "].";
      f((base + "w_in").c_str(), made[k].w_in);
      f((base + "b_in").c_str(), made[k].b_in);
      f((base + "w_hidden").c_str(), made[k].w_hidden);
      f((base + "b_hidden").c_str(), made[k].b_hidden);
      f((base + "w_mu").c_str(), made[k].w_mu);
      f((base + "b_mu").c_str(), made[k].b_mu);
      f((base + "w_s").c_str(), made[k].w_s);
      f((base + "b_s").c_str(), made[k].b_s);
      f((base + "context").c_str(), made[k].context);
    }
  }
  template <class F>
  void for_each_param(F&& f) const {
    const_cast<TargetModelT*>(this)->for_each_param(
        [&](const char* name, auto& p) { f(name, std::as_const(p)); });
  }
};
using TargetModel = TargetModelT<double>;

TargetModel make_target_model(const AmortizationConfig& c, Rng& rng);

template <class Scalar>
AmortizedPosteriorT<Scalar> build_posterior(const TargetModelT<Scalar>& m,
                                            const Activation& act = {}) {
  const AmortizationConfig& c = m.config;
  AmortizedPosteriorT<Scalar> out;
  out.base.mu = m.mu;
  out.base.log_sigma = m.log_sigma;
  out.stack.activation = act;
  out.stack.flows.reserve(static_cast<std::size_t>(c.num_flows));
  if (c.variant == FlowVariant::Iaf) {
    for (const auto& mp : m.made) out.stack.flows.emplace_back(mp);
  } else {
    for (Index k = 0; k < c.num_flows; ++k) {
      out.stack.flows.push_back(
          build_flow(c.variant, m.flow_raw[static_cast<std::size_t>(k)], c.latent_dim, k, c, act));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainers, estimator, dataset (implemented in vi.cpp).

struct TraceRow {
  Index epoch = 0;
  double beta = 1.0;
  double train_f = 0.0;
  double val_f = 0.0;
  double wallclock = 0.0;
};

struct AdamState {
  std::vector<Matrix> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};
void adam_step(AdamState& st, std::vector<Matrix>& params, const std::vector<Matrix>& grads,
               double lr);

struct NllEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Importance-sampled negative log-likelihood:
// -log( (1/S) sum_s exp(log_joint(z_s) - log q_K(z_s)) ), log-sum-exp
// stabilized; the standard error comes from the delta method on the weight
// mean. log_joint receives z_K.
template <class LogJoint>
NllEstimate estimate_nll(const DiagGaussian& base, const FlowStack& stack,
                         const LogJoint& log_joint, Index s_count, Rng& rng) {
  if (s_count < 1) throw ConfigError("estimate_nll: need S >= 1");
  std::vector<double> logw(static_cast<std::size_t>(s_count));
  double max_lw = -std::numeric_limits<double>::infinity();
  for (Index s = 0; s < s_count; ++s) {
    Vector eps = rng.normal_vector(base.dim());
    FlowSampleT<double> fs = log_q_k(base, stack, eps);
    double lw = log_joint(fs.z) - fs.log_q;
    logw[static_cast<std::size_t>(s)] = lw;
    max_lw = std::max(max_lw, lw);
  }
  if (!std::isfinite(max_lw)) {
    throw NumericalError("estimate_nll: all importance weights vanished or non-finite");
  }
  double sum_u = 0.0, sum_u2 = 0.0;
  for (double lw : logw) {
    double u = std::exp(lw - max_lw);
    sum_u += u;
    sum_u2 += u * u;
  }
  const double n = static_cast<double>(s_count);
  const double mean_u = sum_u / n;
  NllEstimate out;
  out.value = -(max_lw + std::log(mean_u));
  if (s_count > 1) {
    double var_u = std::max(0.0, (sum_u2 - n * mean_u * mean_u) / (n - 1.0));
    out.std_error = std::sqrt(var_u / n) / mean_u;
  }
  return out;
}

struct FitResult {
  std::vector<TraceRow> trace;
  double final_f = 0.0;
  bool diverged = false;
  TargetModel model;
};

FitResult fit_target(const TrainingConfig& cfg, const TargetDensity& target,
                     const AmortizationConfig& arch);

// Synthetic axis-aligned bars on a side x side grid. Train images are kept
// as per-pixel Bernoulli probabilities and re-binarized every epoch; the
// validation set is binarized once at construction.
struct BarsDataset {
  Index side = 8;
  std::vector<Vector> train_p;
  std::vector<Vector> val_x;

  Index data_dim() const { return side * side; }
  // Fully determined by (sizes, side, seed): rebuildable from a config alone.
  static BarsDataset make(Index n_train, Index n_val, Index side, std::uint64_t seed);
};

struct VaeArchitecture {
  Index data_dim = 64;
  AmortizationConfig amortization;
};

VaeModel make_vae_model(const VaeArchitecture& arch, Rng& rng);

// Per-datum NLL wrapper: amortizes the posterior for x and uses the decoder
// joint log p(x, z) = log p(x | z) + log p(z).
NllEstimate estimate_nll_vae(const VaeModel& m, const Vector& x, Index s_count, Rng& rng);

struct VaeResult {
  std::vector<TraceRow> trace;
  double final_train_f = 0.0;
  double final_val_f = 0.0;
  bool diverged = false;
  VaeModel model;
  NllEstimate nll;                 // mean over the validation set
  double val_neg_elbo_mean = 0.0;  // fresh single-sample draws, validation set
  double val_neg_elbo_se = 0.0;
};

VaeResult train_toy_vae(const TrainingConfig& cfg, const BarsDataset& data,
                        const VaeArchitecture& arch);

// Validation free energy at beta = 1 with a fixed noise matrix (one column
// per validation datum); reused for checkpoint re-evaluation.
double vae_validation_f(const VaeModel& m, const std::vector<Vector>& val_x, const Matrix& eps);

// The fixed validation noise used in traces, derived from the seed alone so
// a reloaded checkpoint reproduces the trace's val_F exactly.
Matrix validation_noise(std::uint64_t seed, Index dim, Index count);

}  // namespace snf

#endif  // SNF_VI_HPP
