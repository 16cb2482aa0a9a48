#ifndef SNF_AMORTIZE_HPP
#define SNF_AMORTIZE_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "snf/distributions.hpp"
#include "snf/flows.hpp"
#include "snf/random.hpp"

// Hypernetwork: maps an encoder feature vector to base-distribution and flow
// parameters. Flow heads are weight-only linear maps so the closed-form
// parameter counts equal the enumerated tensor sizes exactly; base heads are
// affine and accounted separately. For IAF the MADE weights are direct
// parameters independent of the features; only the context vector is
// feature-dependent.

namespace snf {

enum class FlowVariant { Planar, OrthogonalSylvester, HouseholderSylvester, TriangularSylvester, Iaf };

inline const char* variant_name(FlowVariant v) {
  switch (v) {
    case FlowVariant::Planar: return "planar";
    case FlowVariant::OrthogonalSylvester: return "osnf";
    case FlowVariant::HouseholderSylvester: return "hsnf";
    case FlowVariant::TriangularSylvester: return "tsnf";
    case FlowVariant::Iaf: return "iaf";
  }
  return "?";
}

struct AmortizationConfig {
  FlowVariant variant = FlowVariant::TriangularSylvester;
  Index feature_dim = 0;  // E
  Index latent_dim = 0;   // D
  Index num_flows = 0;    // K
  Index bottleneck = 0;   // M, O-variant
  Index reflections = 0;  // H, H-variant
  Index made_width = 0;   // C, IAF
  double ortho_eps = kDefaultOrthoTolerance;

  void validate() const {
    if (feature_dim < 1) throw ConfigError("AmortizationConfig: E must be >= 1");
    if (latent_dim < 1) throw ConfigError("AmortizationConfig: D must be >= 1");
    if (num_flows < 0) throw ConfigError("AmortizationConfig: K must be >= 0");
    if (variant == FlowVariant::OrthogonalSylvester &&
        (bottleneck < 1 || bottleneck > latent_dim)) {
      throw ConfigError("AmortizationConfig: need 1 <= M <= D");
    }
    if (variant == FlowVariant::HouseholderSylvester && reflections < 1) {
      throw ConfigError("AmortizationConfig: need H >= 1");
    }
    if (variant == FlowVariant::Iaf && made_width < latent_dim) {
      throw ConfigError("AmortizationConfig: need C >= D");
    }
  }

  // Per-flow head output width; 0 for IAF, whose flow parameters do not pass
  // through a head.
  Index flow_param_dim() const {
    const Index d = latent_dim;
    switch (variant) {
      case FlowVariant::Planar: return 2 * d + 1;
      case FlowVariant::OrthogonalSylvester:
        return bottleneck * d + 2 * bottleneck * bottleneck + bottleneck;
      case FlowVariant::HouseholderSylvester: return reflections * d + 2 * d * d + d;
      case FlowVariant::TriangularSylvester: return 2 * d * d + d;
      case FlowVariant::Iaf: return 0;
    }
    return 0;
  }
};

// Closed-form count of flow-related weight parameters.
inline std::int64_t count_parameters(const AmortizationConfig& c) {
  c.validate();
  const std::int64_t d = c.latent_dim, e = c.feature_dim, k = c.num_flows;
  switch (c.variant) {
    case FlowVariant::Planar:
      return 2 * e * d * k + e * k;
    case FlowVariant::OrthogonalSylvester: {
      const std::int64_t m = c.bottleneck;
      return k * e * (m * d + 2 * m * m + m);
    }
    case FlowVariant::HouseholderSylvester: {
      const std::int64_t h = c.reflections;
      return k * e * (h * d + 2 * d * d + d);
    }
    case FlowVariant::TriangularSylvester:
      return k * e * (2 * d * d + d);
    case FlowVariant::Iaf: {
      const std::int64_t cw = c.made_width;
      return k == 0 ? 0 : e * cw + k * (cw * cw + 3 * cw * d);
    }
  }
  return 0;
}

template <class Scalar>
struct HypernetworkT {
  AmortizationConfig config;

  MatrixX<Scalar> base_mu_w, base_log_sigma_w;  // D x E
  VectorX<Scalar> base_mu_b, base_log_sigma_b;  // D

  std::vector<MatrixX<Scalar>> flow_head_w;  // K heads, P x E, weight-only

  MatrixX<Scalar> context_w;              // C x E (IAF), weight-only
  std::vector<MadeParamsT<Scalar>> made;  // K conditioners (IAF)

  template <class S2>
  HypernetworkT<S2> cast() const {
    HypernetworkT<S2> out;
    out.config = config;
    out.base_mu_w = base_mu_w.template cast<S2>();
    out.base_log_sigma_w = base_log_sigma_w.template cast<S2>();
    out.base_mu_b = base_mu_b.template cast<S2>();
    out.base_log_sigma_b = base_log_sigma_b.template cast<S2>();
    out.flow_head_w.reserve(flow_head_w.size());
    for (const auto& wgt : flow_head_w) out.flow_head_w.push_back(wgt.template cast<S2>());
    out.context_w = context_w.template cast<S2>();
    out.made.reserve(made.size());
    for (const auto& m : made) out.made.push_back(m.template cast<S2>());
    return out;
  }

  template <class F>
  void for_each_param(F&& f) {
    f("base.mu.w", base_mu_w);
    f("base.mu.b", base_mu_b);
    f("base.log_sigma.w", base_log_sigma_w);
    f("base.log_sigma.b", base_log_sigma_b);
    for (std::size_t k = 0; k < flow_head_w.size(); ++k) {
      f(("flow[" + std::to_string(k) + "].head.w").c_str(), flow_head_w[k]);
    }
    if (config.variant == FlowVariant::Iaf && config.num_flows > 0) {
      f("context.w", context_w);
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
      }
    }
  }

  template <class F>
  void for_each_param(F&& f) const {
    const_cast<HypernetworkT*>(this)->for_each_param(
        [&](const char* name, auto& p) { f(name, std::as_const(p)); });
  }
};
using Hypernetwork = HypernetworkT<double>;

// Weight init N(0, 0.01^2), biases zero: flows start near the identity.
// Gate-bias init for gated IAF: sigma(2) ~ 0.88, so the flow starts close to
// the identity instead of halving the latent (sigma(0) = 0.5 would).
inline constexpr double kGateBiasInit = 2.0;

inline Hypernetwork make_hypernetwork(const AmortizationConfig& c, Rng& rng) {
  c.validate();
  const Index d = c.latent_dim, e = c.feature_dim;
  const double scale = 0.01;
  Hypernetwork h;
  h.config = c;
  h.base_mu_w = scale * rng.normal_matrix(d, e);
  h.base_log_sigma_w = scale * rng.normal_matrix(d, e);
  h.base_mu_b = Vector::Zero(d);
  h.base_log_sigma_b = Vector::Zero(d);
  h.context_w = Matrix::Zero(0, 0);
  if (c.variant == FlowVariant::Iaf) {
    if (c.num_flows > 0) {
      h.context_w = scale * rng.normal_matrix(c.made_width, e);
      for (Index k = 0; k < c.num_flows; ++k) {
        MadeParams m = make_made_params<double>(d, c.made_width);
        m.w_in = scale * rng.normal_matrix(c.made_width, d);
        m.w_hidden = scale * rng.normal_matrix(c.made_width, c.made_width);
        m.w_mu = scale * rng.normal_matrix(d, c.made_width);
        m.w_s = scale * rng.normal_matrix(d, c.made_width);
        m.b_s.setConstant(kGateBiasInit);
        h.made.push_back(std::move(m));
      }
    }
  } else {
    const Index p = c.flow_param_dim();
    for (Index k = 0; k < c.num_flows; ++k) {
      h.flow_head_w.push_back(scale * rng.normal_matrix(p, e));
    }
  }
  return h;
}

// Enumerated element count of the flow-related weight tensors in a
// constructed hypernetwork. Independent path from count_parameters: walks
// the actual tensors and sums their sizes.
inline std::int64_t enumerate_flow_parameters(const Hypernetwork& h) {
  std::int64_t total = 0;
  for (const auto& wgt : h.flow_head_w) total += wgt.size();
  if (h.config.variant == FlowVariant::Iaf && !h.made.empty()) {
    total += h.context_w.size();
    for (const auto& m : h.made) {
      total += m.w_in.size() + m.w_hidden.size() + m.w_mu.size() + m.w_s.size();
    }
  }
  return total;
}

// Bias and base-head elements, reported separately from the flow count.
inline std::int64_t enumerate_auxiliary_parameters(const Hypernetwork& h) {
  std::int64_t total = h.base_mu_w.size() + h.base_mu_b.size() + h.base_log_sigma_w.size() +
                       h.base_log_sigma_b.size();
  for (const auto& m : h.made) {
    total += m.b_in.size() + m.b_hidden.size() + m.b_mu.size() + m.b_s.size();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Raw-to-constrained builders shared by the hypernetwork and by direct
// (non-amortized) parameterizations. Raw layouts are column-major flats in
// the order the §-style counts enumerate them.

namespace detail {

template <class Scalar>
UpperTriangular<Scalar> build_triangular(const VectorX<Scalar>& raw, Index m) {
  MatrixX<Scalar> full(m, m);
  for (Index j = 0; j < m; ++j)
    for (Index i = 0; i < m; ++i) full(i, j) = raw[j * m + i];
  using std::tanh;
  for (Index i = 0; i < m; ++i) full(i, i) = tanh(full(i, i));
  return UpperTriangular<Scalar>(full);
}

}  // namespace detail

// Planar parameters from a raw block [u | w | b] with the invertibility
// projection applied. A zero w makes the transform a constant shift with
// unit Jacobian; the projection is skipped there (it has a pole at w = 0).
template <class Scalar>
PlanarParamsT<Scalar> build_planar(const VectorX<Scalar>& raw, Index d) {
  if (raw.size() != 2 * d + 1) throw DimensionError("build_planar: raw size mismatch");
  VectorX<Scalar> u = raw.head(d);
  VectorX<Scalar> w = raw.segment(d, d);
  if (value_of(w.dot(w)) > 1e-30) u = project_planar(u, w);
  return {std::move(u), std::move(w), raw[2 * d]};
}

// Raw D*M block to a Björck-ready seed: soft-clipped in Frobenius norm, then
// offset by the leading identity block. That keeps every singular value of
// the seed inside [0.61, 1.39] and hence ||Q0^T Q0 - I||_2 <= 0.932 < 1, the
// convergence precondition, for any raw input. The clip branch is taken in
// value space but the scale itself stays differentiable.
template <class Scalar>
MatrixX<Scalar> orthogonal_seed(const VectorX<Scalar>& raw, Index d, Index m) {
  if (raw.size() < m * d) throw DimensionError("orthogonal_seed: raw block too short");
  MatrixX<Scalar> seed(d, m);
  for (Index j = 0; j < m; ++j)
    for (Index i = 0; i < d; ++i) seed(i, j) = raw[j * d + i];

  const double clip = 0.39;
  Scalar sumsq(0);
  for (Index j = 0; j < m; ++j)
    for (Index i = 0; i < d; ++i) sumsq += seed(i, j) * seed(i, j);
  if (value_of(sumsq) > clip * clip) {
    using std::sqrt;
    seed *= Scalar(clip) / sqrt(sumsq);
  }
  for (Index j = 0; j < m; ++j) seed(j, j) += Scalar(1);
  return seed;
}

// Orthogonal variant; gradients flow through the clip and through the
// unrolled orthogonalization.
template <class Scalar>
SylvesterParamsT<Scalar> build_sylvester_o(const VectorX<Scalar>& raw, Index d, Index m,
                                           double ortho_eps, const Activation& act) {
  if (raw.size() != m * d + 2 * m * m + m) throw DimensionError("build_sylvester_o: raw size");
  auto bj = bjorck_orthogonalize(orthogonal_seed(raw, d, m), ortho_eps);
  SylvesterParamsT<Scalar> p;
  p.variant = SylvesterVariant::Orthogonal;
  p.q = std::move(bj.q);
  p.r = detail::build_triangular(VectorX<Scalar>(raw.segment(m * d, m * m)), m);
  p.r_tilde = detail::build_triangular(VectorX<Scalar>(raw.segment(m * d + m * m, m * m)), m);
  p.bias = raw.tail(m);
  validate_sylvester(p, act);
  return p;
}

// Householder variant: raw reflection vectors, with a unit-basis fallback for
// the measure-zero zero-vector case (reflections are scale-free).
template <class Scalar>
SylvesterParamsT<Scalar> build_sylvester_h(const VectorX<Scalar>& raw, Index d, Index h,
                                           const Activation& act) {
  if (raw.size() != h * d + 2 * d * d + d) throw DimensionError("build_sylvester_h: raw size");
  std::vector<VectorX<Scalar>> vs;
  vs.reserve(static_cast<std::size_t>(h));
  for (Index i = 0; i < h; ++i) {
    VectorX<Scalar> v = raw.segment(i * d, d);
    double norm2 = 0.0;
    for (Index t = 0; t < d; ++t) norm2 += value_of(v[t]) * value_of(v[t]);
    if (norm2 < 1e-24) {
      v = VectorX<Scalar>::Zero(d);
      v[i % d] = Scalar(1);
    }
    vs.push_back(std::move(v));
  }
  SylvesterParamsT<Scalar> p;
  p.variant = SylvesterVariant::Householder;
  p.q = HouseholderChain<Scalar>(d, std::move(vs));
  p.r = detail::build_triangular(VectorX<Scalar>(raw.segment(h * d, d * d)), d);
  p.r_tilde = detail::build_triangular(VectorX<Scalar>(raw.segment(h * d + d * d, d * d)), d);
  p.bias = raw.tail(d);
  validate_sylvester(p, act);
  return p;
}

template <class Scalar>
SylvesterParamsT<Scalar> build_sylvester_t(const VectorX<Scalar>& raw, Index d,
                                           PermutationTag tag, const Activation& act) {
  if (raw.size() != 2 * d * d + d) throw DimensionError("build_sylvester_t: raw size");
  SylvesterParamsT<Scalar> p;
  p.variant = SylvesterVariant::Triangular;
  p.q = tag;
  p.r = detail::build_triangular(VectorX<Scalar>(raw.head(d * d)), d);
  p.r_tilde = detail::build_triangular(VectorX<Scalar>(raw.segment(d * d, d * d)), d);
  p.bias = raw.tail(d);
  validate_sylvester(p, act);
  return p;
}

template <class Scalar>
FlowParamsT<Scalar> build_flow(FlowVariant variant, const VectorX<Scalar>& raw, Index d,
                               Index flow_index, const AmortizationConfig& c,
                               const Activation& act) {
  switch (variant) {
    case FlowVariant::Planar: return build_planar(raw, d);
    case FlowVariant::OrthogonalSylvester:
      return build_sylvester_o(raw, d, c.bottleneck, c.ortho_eps, act);
    case FlowVariant::HouseholderSylvester:
      return build_sylvester_h(raw, d, c.reflections, act);
    case FlowVariant::TriangularSylvester:
      return build_sylvester_t(
          raw, d, flow_index % 2 == 0 ? PermutationTag::Identity : PermutationTag::Reverse, act);
    case FlowVariant::Iaf:
      throw ConfigError("build_flow: IAF parameters do not come from a head");
  }
  throw ConfigError("build_flow: unknown variant");
}

template <class Scalar>
struct AmortizedPosteriorT {
  DiagGaussianT<Scalar> base;
  FlowStackT<Scalar> stack;
};
using AmortizedPosterior = AmortizedPosteriorT<double>;

// Produces constrained, invariant-satisfying parameters from features. For
// IAF the MADE weights are taken as-is and only the context slot depends on
// the features.
template <class Scalar>
AmortizedPosteriorT<Scalar> amortize(const HypernetworkT<Scalar>& h,
                                     const VectorX<Scalar>& features,
                                     const Activation& act = {}) {
  const AmortizationConfig& c = h.config;
  if (features.size() != c.feature_dim) throw DimensionError("amortize: feature dim mismatch");

  AmortizedPosteriorT<Scalar> out;
  out.base.mu = h.base_mu_w * features + h.base_mu_b;
  out.base.log_sigma = h.base_log_sigma_w * features + h.base_log_sigma_b;
  out.stack.activation = act;
  out.stack.flows.reserve(static_cast<std::size_t>(c.num_flows));

  if (c.variant == FlowVariant::Iaf) {
    if (c.num_flows > 0) {
      VectorX<Scalar> context = h.context_w * features;
      for (Index k = 0; k < c.num_flows; ++k) {
        MadeParamsT<Scalar> m = h.made[static_cast<std::size_t>(k)];
        m.context = context;
        out.stack.flows.emplace_back(std::move(m));
      }
    }
  } else {
    for (Index k = 0; k < c.num_flows; ++k) {
      VectorX<Scalar> raw = h.flow_head_w[static_cast<std::size_t>(k)] * features;
      out.stack.flows.push_back(build_flow(c.variant, raw, c.latent_dim, k, c, act));
    }
  }
  return out;
}

}  // namespace snf

#endif  // SNF_AMORTIZE_HPP
