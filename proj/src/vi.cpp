#include "snf/vi.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace snf {

namespace {

constexpr std::uint64_t kBarsTag = 0xba55;
constexpr std::uint64_t kValNoiseTag = 0x7a1e;
constexpr std::uint64_t kModelTag = 0x0de1;
constexpr std::uint64_t kTrainTag = 0x7a41;
constexpr std::uint64_t kEvalTag = 0xe7a1;
constexpr std::uint64_t kNllTag = 0x11ab;

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vector binarize(const Vector& p, Rng& rng) {
  Vector x(p.size());
  for (Index i = 0; i < p.size(); ++i) x[i] = rng.bernoulli(p[i]) ? 1.0 : 0.0;
  return x;
}

}  // namespace

void adam_step(AdamState& st, std::vector<Matrix>& params, const std::vector<Matrix>& grads,
               double lr) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: block count mismatch");
  if (st.m.empty()) {
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
      st.m.push_back(Matrix::Zero(p.rows(), p.cols()));
      st.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (st.m.size() != params.size()) throw DimensionError("adam_step: state/params mismatch");
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * grads[k];
    st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * grads[k].cwiseProduct(grads[k]);
    Matrix m_hat = st.m[k] / bc1;
    Matrix v_hat = st.v[k] / bc2;
    params[k].array() -= lr * m_hat.array() / (v_hat.array().sqrt() + st.eps);
  }
}

TargetModel make_target_model(const AmortizationConfig& c, Rng& rng) {
  c.validate();
  const double scale = 0.01;
  TargetModel m;
  m.config = c;
  m.mu = Vector::Zero(c.latent_dim);
  m.log_sigma = Vector::Zero(c.latent_dim);
  if (c.variant == FlowVariant::Iaf) {
    for (Index k = 0; k < c.num_flows; ++k) {
      MadeParams p = make_made_params<double>(c.latent_dim, c.made_width);
      p.w_in = scale * rng.normal_matrix(c.made_width, c.latent_dim);
      p.w_hidden = scale * rng.normal_matrix(c.made_width, c.made_width);
      p.w_mu = scale * rng.normal_matrix(c.latent_dim, c.made_width);
      p.w_s = scale * rng.normal_matrix(c.latent_dim, c.made_width);
      p.b_s.setConstant(kGateBiasInit);
      m.made.push_back(std::move(p));
    }
  } else {
    const Index p = c.flow_param_dim();
    for (Index k = 0; k < c.num_flows; ++k) {
      m.flow_raw.push_back(scale * rng.normal_vector(p));
    }
  }
  return m;
}

FitResult fit_target(const TrainingConfig& cfg, const TargetDensity& target,
                     const AmortizationConfig& arch) {
  cfg.validate();
  arch.validate();
  if (target.dim != arch.latent_dim) throw ConfigError("fit_target: target dim != D");

  const auto t0 = std::chrono::steady_clock::now();
  const Index d = arch.latent_dim;

  Rng model_rng(mix_seed(cfg.seed, kModelTag));
  Rng train_rng(mix_seed(cfg.seed, kTrainTag));
  const Matrix val_eps = validation_noise(cfg.seed, d, 1024);

  FitResult out;
  out.model = make_target_model(arch, model_rng);

  auto objective_value = [&](const TargetModel& m, const Matrix& eps) {
    AmortizedPosterior post = build_posterior(m);
    return free_energy_target(post.base, post.stack, target, eps);
  };

  AdamState adam;
  std::vector<std::string> names = parameter_names(out.model);
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    TraceRow row;
    row.epoch = epoch;
    row.beta = 1.0;  // no annealing against a bare target: F is already the full objective
    try {
      Matrix eps = train_rng.normal_matrix(d, cfg.batch);
      std::vector<Matrix> blocks = collect_parameters(out.model);
      auto obj = [&](const auto& bl) {
        using S = typename std::decay_t<decltype(bl[0])>::Scalar;
        TargetModelT<S> ms = out.model.cast<S>();
        assign_parameters(ms, bl);
        AmortizedPosteriorT<S> post = build_posterior(ms);
        return free_energy_target(post.base, post.stack, target, eps);
      };
      row.train_f = obj(blocks);
      std::vector<Matrix> grads = ad::gradients(obj, blocks, &names);
      adam_step(adam, blocks, grads, cfg.learning_rate);
      assign_parameters(out.model, blocks);
      row.val_f = objective_value(out.model, val_eps);
    } catch (const Error&) {
      out.diverged = true;
    }
    row.wallclock = seconds_since(t0);
    if (!std::isfinite(row.train_f) || !std::isfinite(row.val_f)) out.diverged = true;
    out.trace.push_back(row);
    if (out.diverged) break;
  }

  if (out.diverged) {
    out.final_f = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  Rng eval_rng(mix_seed(cfg.seed, kEvalTag));
  out.final_f = objective_value(out.model, eval_rng.normal_matrix(d, cfg.eval_samples));
  return out;
}

// ---------------------------------------------------------------------------

BarsDataset BarsDataset::make(Index n_train, Index n_val, Index side, std::uint64_t seed) {
  if (n_train < 1 || n_val < 1 || side < 2) throw ConfigError("BarsDataset: bad sizes");
  Rng rng(mix_seed(seed, kBarsTag));
  BarsDataset ds;
  ds.side = side;

  auto sample_probabilities = [&]() {
    Vector p = Vector::Constant(side * side, 0.05);
    const bool horizontal = rng.bernoulli(0.5);
    const Index bars = rng.integer(1, 3);
    for (Index b = 0; b < bars; ++b) {
      const Index idx = rng.integer(0, side - 1);
      for (Index t = 0; t < side; ++t) {
        const Index pixel = horizontal ? idx * side + t : t * side + idx;
        p[pixel] = 0.9;
      }
    }
    return p;
  };

  ds.train_p.reserve(static_cast<std::size_t>(n_train));
  for (Index n = 0; n < n_train; ++n) ds.train_p.push_back(sample_probabilities());
  ds.val_x.reserve(static_cast<std::size_t>(n_val));
  for (Index n = 0; n < n_val; ++n) {
    Vector p = sample_probabilities();
    ds.val_x.push_back(binarize(p, rng));
  }
  return ds;
}

Matrix validation_noise(std::uint64_t seed, Index dim, Index count) {
  Rng rng(mix_seed(seed, kValNoiseTag));
  return rng.normal_matrix(dim, count);
}

VaeModel make_vae_model(const VaeArchitecture& arch, Rng& rng) {
  arch.amortization.validate();
  if (arch.data_dim < 1) throw ConfigError("make_vae_model: data_dim must be >= 1");
  const Index x = arch.data_dim;
  const Index e = arch.amortization.feature_dim;
  const Index d = arch.amortization.latent_dim;

  auto gated = [&](Index out, Index in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    GatedDense l;
    l.w = s * rng.normal_matrix(out, in);
    l.v = s * rng.normal_matrix(out, in);
    l.b = Vector::Zero(out);
    l.c = Vector::Zero(out);
    return l;
  };

  VaeModel m;
  m.data_dim = x;
  m.enc1 = gated(e, x);
  m.enc2 = gated(e, e);
  m.hyper = make_hypernetwork(arch.amortization, rng);
  m.dec1 = gated(e, d);
  m.dec_w = (1.0 / std::sqrt(static_cast<double>(e))) * rng.normal_matrix(x, e);
  m.dec_b = Vector::Zero(x);
  return m;
}

NllEstimate estimate_nll_vae(const VaeModel& m, const Vector& x, Index s_count, Rng& rng) {
  Vector features = m.encode(x);
  AmortizedPosterior post = amortize(m.hyper, features);
  auto log_joint = [&](const Vector& z) {
    return bernoulli_log_prob(m.decode_logits(z), x) + std_normal_log_prob(z);
  };
  return estimate_nll(post.base, post.stack, log_joint, s_count, rng);
}

double vae_validation_f(const VaeModel& m, const std::vector<Vector>& val_x, const Matrix& eps) {
  return vae_free_energy_batch(m, val_x, eps, 1.0);
}

VaeResult train_toy_vae(const TrainingConfig& cfg, const BarsDataset& data,
                        const VaeArchitecture& arch) {
  cfg.validate();
  arch.amortization.validate();
  if (data.data_dim() != arch.data_dim) throw ConfigError("train_toy_vae: data_dim mismatch");
  if (data.train_p.empty() || data.val_x.empty()) throw ConfigError("train_toy_vae: empty dataset");

  const auto t0 = std::chrono::steady_clock::now();
  const Index d = arch.amortization.latent_dim;
  const Index n_train = static_cast<Index>(data.train_p.size());
  const Index n_val = static_cast<Index>(data.val_x.size());

  Rng model_rng(mix_seed(cfg.seed, kModelTag));
  Rng train_rng(mix_seed(cfg.seed, kTrainTag));
  const Matrix val_eps = validation_noise(cfg.seed, d, n_val);

  VaeResult out;
  out.model = make_vae_model(arch, model_rng);

  AdamState adam;
  std::vector<std::string> names = parameter_names(out.model);
  std::vector<Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), Index{0});

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double beta = anneal_beta(epoch, cfg);
    TraceRow row;
    row.epoch = epoch;
    row.beta = beta;
    try {
      std::shuffle(order.begin(), order.end(), train_rng.engine());
      double f_sum = 0.0;
      Index f_count = 0;
      for (Index start = 0; start < n_train; start += cfg.batch) {
        const Index bsz = std::min<Index>(cfg.batch, n_train - start);
        std::vector<Vector> batch;
        batch.reserve(static_cast<std::size_t>(bsz));
        for (Index s = 0; s < bsz; ++s) {
          // Dynamic binarization: a fresh Bernoulli draw per visit.
          batch.push_back(binarize(data.train_p[static_cast<std::size_t>(order[
              static_cast<std::size_t>(start + s)])], train_rng));
        }
        Matrix eps = train_rng.normal_matrix(d, bsz);
        std::vector<Matrix> blocks = collect_parameters(out.model);
        auto obj = [&](const auto& bl) {
          using S = typename std::decay_t<decltype(bl[0])>::Scalar;
          VaeModelT<S> ms = out.model.cast<S>();
          assign_parameters(ms, bl);
          return vae_free_energy_batch(ms, batch, eps, beta);
        };
        f_sum += obj(blocks) * static_cast<double>(bsz);
        f_count += bsz;
        std::vector<Matrix> grads = ad::gradients(obj, blocks, &names);
        adam_step(adam, blocks, grads, cfg.learning_rate);
        assign_parameters(out.model, blocks);
      }
      row.train_f = f_sum / static_cast<double>(f_count);
      row.val_f = vae_validation_f(out.model, data.val_x, val_eps);
    } catch (const Error&) {
      out.diverged = true;
    }
    row.wallclock = seconds_since(t0);
    if (!std::isfinite(row.train_f) || !std::isfinite(row.val_f)) out.diverged = true;
    out.trace.push_back(row);
    if (out.diverged) break;
  }

  if (!out.trace.empty() && !out.diverged) {
    out.final_train_f = out.trace.back().train_f;
    out.final_val_f = out.trace.back().val_f;
  } else if (out.diverged) {
    out.final_train_f = std::numeric_limits<double>::quiet_NaN();
    out.final_val_f = std::numeric_limits<double>::quiet_NaN();
    return out;
  } else {
    out.final_val_f = vae_validation_f(out.model, data.val_x, val_eps);
    out.final_train_f = out.final_val_f;
  }

  // Importance-sampled NLL over the validation set, plus fresh single-sample
  // negative-ELBO statistics for the bound-ordering report.
  Rng nll_rng(mix_seed(cfg.seed, kNllTag));
  double nll_sum = 0.0, nll_var_sum = 0.0;
  for (const Vector& x : data.val_x) {
    NllEstimate e = estimate_nll_vae(out.model, x, cfg.importance_samples, nll_rng);
    nll_sum += e.value;
    nll_var_sum += e.std_error * e.std_error;
  }
  out.nll.value = nll_sum / static_cast<double>(n_val);
  out.nll.std_error = std::sqrt(nll_var_sum) / static_cast<double>(n_val);

  const Index draws_per_datum = 8;
  double s1 = 0.0, s2 = 0.0;
  Index count = 0;
  for (const Vector& x : data.val_x) {
    for (Index k = 0; k < draws_per_datum; ++k) {
      Vector eps = nll_rng.normal_vector(d);
      double f = vae_free_energy_datum(out.model, x, eps, 1.0);
      s1 += f;
      s2 += f * f;
      ++count;
    }
  }
  const double n = static_cast<double>(count);
  out.val_neg_elbo_mean = s1 / n;
  const double var = std::max(0.0, (s2 - n * out.val_neg_elbo_mean * out.val_neg_elbo_mean) /
                                       (n - 1.0));
  out.val_neg_elbo_se = std::sqrt(var / n);
  return out;
}

}  // namespace snf
