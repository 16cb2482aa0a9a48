#ifndef SNF_FLOWS_HPP
#define SNF_FLOWS_HPP

#include <cstdlib>
#include <utility>
#include <variant>
#include <vector>

#include "snf/activation.hpp"
#include "snf/errors.hpp"
#include "snf/linalg.hpp"
#include "snf/scalar.hpp"

// Flow transformations and their exact log-det-Jacobians: planar flows, the
// general and QR-factored Sylvester flows (orthogonal / Householder /
// triangular variants) and gated IAF with MADE conditioners.

namespace snf {

inline constexpr double kSingularDetGuard = 1e-12;

template <class Scalar>
struct FlowStep {
  VectorX<Scalar> z;
  Scalar log_det;
};

// ---------------------------------------------------------------------------
// Planar flow: z' = z + u h(w^T z + b).

template <class Scalar>
struct PlanarParamsT {
  VectorX<Scalar> u;
  VectorX<Scalar> w;
  Scalar b{};

  template <class S2>
  PlanarParamsT<S2> cast() const {
    return {u.template cast<S2>(), w.template cast<S2>(), S2(value_of(b))};
  }
};
using PlanarParams = PlanarParamsT<double>;

// u-hat = u + (m(w^T u) - w^T u) w / ||w||^2 with m(x) = -1 + softplus(x),
// which guarantees u-hat^T w >= -1 and leaves feasible u nearly unchanged.
template <class Scalar>
VectorX<Scalar> project_planar(const VectorX<Scalar>& u, const VectorX<Scalar>& w) {
  if (u.size() != w.size()) throw DimensionError("project_planar: dim mismatch");
  Scalar ww = w.dot(w);
  if (!(value_of(ww) > 0.0)) throw NumericalError("project_planar: zero w");
  Scalar wu = w.dot(u);
  Scalar m = Scalar(-1) + softplus(wu);
  return u + w * ((m - wu) / ww);
}

template <class Scalar>
FlowStep<Scalar> planar_forward(const PlanarParamsT<Scalar>& p, const VectorX<Scalar>& z,
                                const Activation& act = {}) {
  if (p.u.size() != z.size() || p.w.size() != z.size()) {
    throw DimensionError("planar_forward: dim mismatch");
  }
  Scalar pre = p.w.dot(z) + p.b;
  Scalar hv = act.h(pre);
  Scalar hp = act.h_prime(pre);
  Scalar det = Scalar(1) + p.u.dot(p.w) * hp;
  if (std::abs(value_of(det)) < kSingularDetGuard) {
    throw SingularJacobianError("planar_forward: |det| below guard");
  }
  using std::abs;
  using std::log;
  return {z + p.u * hv, log(abs(det))};
}

// ---------------------------------------------------------------------------
// General Sylvester flow z' = z + A h(Bz + b). Not invertible in general;
// kept as an oracle target. det J = det(I_M + diag(h'(Bz+b)) B A).

template <class Scalar>
struct GeneralSylvesterParamsT {
  MatrixX<Scalar> a;      // D x M
  MatrixX<Scalar> b_mat;  // M x D
  VectorX<Scalar> bias;   // M

  template <class S2>
  GeneralSylvesterParamsT<S2> cast() const {
    return {a.template cast<S2>(), b_mat.template cast<S2>(), bias.template cast<S2>()};
  }
};
using GeneralSylvesterParams = GeneralSylvesterParamsT<double>;

template <class Scalar>
FlowStep<Scalar> general_sylvester_forward(const GeneralSylvesterParamsT<Scalar>& p,
                                           const VectorX<Scalar>& z, const Activation& act) {
  const Index d = p.a.rows();
  const Index m = p.a.cols();
  if (p.b_mat.rows() != m || p.b_mat.cols() != d || p.bias.size() != m || z.size() != d) {
    throw DimensionError("general_sylvester_forward: shapes do not conform");
  }
  if (m > d) throw DimensionError("general_sylvester_forward: M > D");

  VectorX<Scalar> pre = p.b_mat * z + p.bias;
  VectorX<Scalar> hv(m), hp(m);
  for (Index i = 0; i < m; ++i) {
    hv[i] = act.h(pre[i]);
    hp[i] = act.h_prime(pre[i]);
  }
  MatrixX<Scalar> factor = MatrixX<Scalar>::Identity(m, m);
  factor += hp.asDiagonal() * (p.b_mat * p.a);
  Scalar det = dense_det<Scalar>(factor);
  if (std::abs(value_of(det)) < kSingularDetGuard) {
    throw SingularJacobianError("general_sylvester_forward: singular M x M factor");
  }
  using std::abs;
  using std::log;
  return {z + p.a * hv, log(abs(det))};
}

// ---------------------------------------------------------------------------
// QR Sylvester flow z' = z + QR h(R~ Q^T z + b).

enum class SylvesterVariant { Orthogonal, Householder, Triangular };
enum class PermutationTag { Identity, Reverse };

template <class Scalar>
struct SylvesterParamsT {
  SylvesterVariant variant = SylvesterVariant::Triangular;
  std::variant<OrthonormalColumns<Scalar>, HouseholderChain<Scalar>, PermutationTag> q =
      PermutationTag::Identity;
  UpperTriangular<Scalar> r{0};
  UpperTriangular<Scalar> r_tilde{0};
  VectorX<Scalar> bias;

  Index bottleneck() const { return r.dim(); }

  Index ambient_dim() const {
    if (const auto* oc = std::get_if<OrthonormalColumns<Scalar>>(&q)) return oc->ambient_dim();
    if (const auto* hc = std::get_if<HouseholderChain<Scalar>>(&q)) return hc->ambient_dim();
    return r.dim();
  }

  template <class S2>
  SylvesterParamsT<S2> cast() const {
    SylvesterParamsT<S2> out{variant,
                             PermutationTag::Identity,
                             UpperTriangular<S2>(r.matrix().template cast<S2>().eval()),
                             UpperTriangular<S2>(r_tilde.matrix().template cast<S2>().eval()),
                             bias.template cast<S2>()};
    if (const auto* oc = std::get_if<OrthonormalColumns<Scalar>>(&q)) {
      out.q = OrthonormalColumns<S2>(oc->matrix().template cast<S2>().eval(),
                                     std::max(oc->residual() * 2.0, kDefaultOrthoTolerance));
    } else if (const auto* hc = std::get_if<HouseholderChain<Scalar>>(&q)) {
      std::vector<VectorX<S2>> vs;
      for (const auto& v : hc->vectors()) vs.push_back(v.template cast<S2>().eval());
      out.q = HouseholderChain<S2>(hc->ambient_dim(), std::move(vs));
    } else {
      out.q = std::get<PermutationTag>(q);
    }
    return out;
  }
};
using SylvesterParams = SylvesterParamsT<double>;

// Invertibility condition on the diagonals plus shape coherence between the
// orthogonal factor and the triangular pair.
template <class Scalar>
void validate_sylvester(const SylvesterParamsT<Scalar>& p, const Activation& act) {
  const Index m = p.r.dim();
  if (p.r_tilde.dim() != m || p.bias.size() != m) {
    throw DimensionError("SylvesterParams: R, R~ and bias sizes disagree");
  }
  switch (p.variant) {
    case SylvesterVariant::Orthogonal: {
      const auto* oc = std::get_if<OrthonormalColumns<Scalar>>(&p.q);
      if (oc == nullptr) throw DimensionError("SylvesterParams: O variant needs orthonormal Q");
      if (oc->num_cols() != m) throw DimensionError("SylvesterParams: Q has wrong column count");
      if (m > oc->ambient_dim()) throw DimensionError("SylvesterParams: M > D");
      break;
    }
    case SylvesterVariant::Householder: {
      const auto* hc = std::get_if<HouseholderChain<Scalar>>(&p.q);
      if (hc == nullptr) throw DimensionError("SylvesterParams: H variant needs reflection chain");
      if (hc->ambient_dim() != m) throw DimensionError("SylvesterParams: H variant needs M = D");
      break;
    }
    case SylvesterVariant::Triangular: {
      if (!std::holds_alternative<PermutationTag>(p.q)) {
        throw DimensionError("SylvesterParams: T variant needs a permutation tag");
      }
      break;
    }
  }
  for (Index i = 0; i < m; ++i) {
    double prod = value_of(p.r.diag(i)) * value_of(p.r_tilde.diag(i));
    if (!(1.0 + act.derivative_bound() * prod > 0.0)) {
      throw NonInvertibleError("SylvesterParams: diagonal product violates invertibility bound");
    }
  }
}

namespace detail {

template <class Scalar>
VectorX<Scalar> apply_q(const SylvesterParamsT<Scalar>& p, const VectorX<Scalar>& v) {
  if (const auto* oc = std::get_if<OrthonormalColumns<Scalar>>(&p.q)) return oc->matrix() * v;
  if (const auto* hc = std::get_if<HouseholderChain<Scalar>>(&p.q)) return householder_apply(*hc, v);
  return std::get<PermutationTag>(p.q) == PermutationTag::Identity
             ? v
             : VectorX<Scalar>(v.reverse());
}

template <class Scalar>
VectorX<Scalar> apply_q_transpose(const SylvesterParamsT<Scalar>& p, const VectorX<Scalar>& z) {
  if (const auto* oc = std::get_if<OrthonormalColumns<Scalar>>(&p.q)) {
    return oc->matrix().transpose() * z;
  }
  if (const auto* hc = std::get_if<HouseholderChain<Scalar>>(&p.q)) {
    return householder_apply_transpose(*hc, z);
  }
  return std::get<PermutationTag>(p.q) == PermutationTag::Identity
             ? z
             : VectorX<Scalar>(z.reverse());
}

}  // namespace detail

// log det J = sum_i log|1 + h'_i (R~ R)_ii|; both triangular, so the diagonal
// of R~ R is the entrywise product of the two diagonals and the sum is O(M).
template <class Scalar>
FlowStep<Scalar> sylvester_forward(const SylvesterParamsT<Scalar>& p, const VectorX<Scalar>& z,
                                   const Activation& act) {
  const Index m = p.r.dim();
  if (z.size() != p.ambient_dim()) throw DimensionError("sylvester_forward: dim mismatch");

  VectorX<Scalar> qtz = detail::apply_q_transpose(p, z);
  VectorX<Scalar> v = qtz.head(m);
  VectorX<Scalar> pre = p.r_tilde.matrix() * v + p.bias;

  VectorX<Scalar> hv(m);
  Scalar log_det(0);
  using std::abs;
  using std::log;
  for (Index i = 0; i < m; ++i) {
    hv[i] = act.h(pre[i]);
    Scalar term = Scalar(1) + act.h_prime(pre[i]) * p.r.diag(i) * p.r_tilde.diag(i);
    if (std::abs(value_of(term)) < kSingularDetGuard) {
      throw SingularJacobianError("sylvester_forward: log-det term below guard");
    }
    log_det += log(abs(term));
  }
  return {z + detail::apply_q(p, (p.r.matrix() * hv).eval()), log_det};
}

// ---------------------------------------------------------------------------
// Gated IAF step with a three-stage MADE conditioner:
//   h_z = ELU(MaskedLinear(z)); h = ELU(MaskedLinear(h_z + context));
//   mu = MaskedLinear(h); s = MaskedLinear(h);
//   z' = sigmoid(s) . z + (1 - sigmoid(s)) . mu.
// Strict masking makes the Jacobian lower triangular with diagonal
// sigmoid(s), so log det = sum_i log sigmoid(s_i).

template <class Scalar>
struct MadeParamsT {
  Index dim = 0;    // D
  Index width = 0;  // C
  // 0/1 masks, fixed at construction.
  Matrix mask_in, mask_hidden, mask_out;
  MatrixX<Scalar> w_in, w_hidden, w_mu, w_s;
  VectorX<Scalar> b_in, b_hidden, b_mu, b_s;
  VectorX<Scalar> context;  // h_context slot, length C

  template <class S2>
  MadeParamsT<S2> cast() const {
    MadeParamsT<S2> out;
    out.dim = dim;
    out.width = width;
    out.mask_in = mask_in;
    out.mask_hidden = mask_hidden;
    out.mask_out = mask_out;
    out.w_in = w_in.template cast<S2>();
    out.w_hidden = w_hidden.template cast<S2>();
    out.w_mu = w_mu.template cast<S2>();
    out.w_s = w_s.template cast<S2>();
    out.b_in = b_in.template cast<S2>();
    out.b_hidden = b_hidden.template cast<S2>();
    out.b_mu = b_mu.template cast<S2>();
    out.b_s = b_s.template cast<S2>();
    out.context = context.template cast<S2>();
    return out;
  }
};
using MadeParams = MadeParamsT<double>;

// Degree assignment over the natural order 1..D. Hidden unit k gets degree
// 1 + (k mod (D-1)); input j has degree j+1; output i has degree i+1.
// A hidden unit sees inputs with degree <= its own, an output sees hidden
// units with strictly smaller degree, so output i never reaches input j >= i.
inline std::vector<int> made_degrees(Index dim, Index width) {
  std::vector<int> deg(static_cast<std::size_t>(width));
  Index span = dim > 1 ? dim - 1 : 1;
  for (Index k = 0; k < width; ++k) deg[static_cast<std::size_t>(k)] = 1 + int(k % span);
  return deg;
}

template <class Scalar>
MadeParamsT<Scalar> make_made_params(Index dim, Index width) {
  if (width < dim) throw DimensionError("make_made_params: width C must be >= D");
  MadeParamsT<Scalar> p;
  p.dim = dim;
  p.width = width;
  std::vector<int> deg = made_degrees(dim, width);
  p.mask_in = Matrix::Zero(width, dim);
  p.mask_hidden = Matrix::Zero(width, width);
  p.mask_out = Matrix::Zero(dim, width);
  for (Index k = 0; k < width; ++k) {
    for (Index j = 0; j < dim; ++j) {
      if (deg[static_cast<std::size_t>(k)] >= j + 1) p.mask_in(k, j) = 1.0;
    }
    for (Index k1 = 0; k1 < width; ++k1) {
      if (deg[static_cast<std::size_t>(k)] >= deg[static_cast<std::size_t>(k1)]) {
        p.mask_hidden(k, k1) = 1.0;
      }
    }
    for (Index i = 0; i < dim; ++i) {
      if (deg[static_cast<std::size_t>(k)] < i + 1) p.mask_out(i, k) = 1.0;
    }
  }
  p.w_in = MatrixX<Scalar>::Zero(width, dim);
  p.w_hidden = MatrixX<Scalar>::Zero(width, width);
  p.w_mu = MatrixX<Scalar>::Zero(dim, width);
  p.w_s = MatrixX<Scalar>::Zero(dim, width);
  p.b_in = VectorX<Scalar>::Zero(width);
  p.b_hidden = VectorX<Scalar>::Zero(width);
  p.b_mu = VectorX<Scalar>::Zero(dim);
  p.b_s = VectorX<Scalar>::Zero(dim);
  p.context = VectorX<Scalar>::Zero(width);
  return p;
}

namespace detail {

// Masked conditioner: (mu, s) as functions of z and context. Output i only
// reaches inputs with index < i through the degree masks.
template <class Scalar>
std::pair<VectorX<Scalar>, VectorX<Scalar>> iaf_conditioner(const MadeParamsT<Scalar>& p,
                                                            const VectorX<Scalar>& z,
                                                            const VectorX<Scalar>& context) {
  if (z.size() != p.dim) throw DimensionError("iaf_forward: dim mismatch");
  if (context.size() != p.width) throw DimensionError("iaf_forward: context width mismatch");

  VectorX<Scalar> h_z = p.w_in.cwiseProduct(p.mask_in) * z + p.b_in;
  for (Index k = 0; k < p.width; ++k) h_z[k] = elu(h_z[k]);
  VectorX<Scalar> h = h_z + context;
  h = p.w_hidden.cwiseProduct(p.mask_hidden) * h + p.b_hidden;
  for (Index k = 0; k < p.width; ++k) h[k] = elu(h[k]);
  VectorX<Scalar> mu = p.w_mu.cwiseProduct(p.mask_out) * h + p.b_mu;
  VectorX<Scalar> s = p.w_s.cwiseProduct(p.mask_out) * h + p.b_s;
  return {std::move(mu), std::move(s)};
}

}  // namespace detail

template <class Scalar>
FlowStep<Scalar> iaf_forward(const MadeParamsT<Scalar>& p, const VectorX<Scalar>& z,
                             const VectorX<Scalar>& context) {
  auto [mu, s] = detail::iaf_conditioner(p, z, context);

  VectorX<Scalar> out(p.dim);
  Scalar log_det(0);
  for (Index i = 0; i < p.dim; ++i) {
    Scalar gate = logistic(s[i]);
    if (value_of(gate) <= 0.0) {
      throw SingularJacobianError("iaf_forward: gate underflowed to zero");
    }
    out[i] = gate * z[i] + (Scalar(1) - gate) * mu[i];
    log_det += -softplus(-s[i]);  // log sigmoid(s_i), stable for large |s|
  }
  return {std::move(out), log_det};
}

template <class Scalar>
FlowStep<Scalar> iaf_forward(const MadeParamsT<Scalar>& p, const VectorX<Scalar>& z) {
  return iaf_forward(p, z, p.context);
}

// ---------------------------------------------------------------------------
// Flow stacks.

template <class Scalar>
using FlowParamsT = std::variant<PlanarParamsT<Scalar>, SylvesterParamsT<Scalar>, MadeParamsT<Scalar>>;
using FlowParams = FlowParamsT<double>;

template <class Scalar>
struct FlowStackT {
  std::vector<FlowParamsT<Scalar>> flows;
  Activation activation;

  template <class S2>
  FlowStackT<S2> cast() const {
    FlowStackT<S2> out;
    out.activation = activation;
    out.flows.reserve(flows.size());
    for (const auto& f : flows) {
      std::visit([&](const auto& p) { out.flows.emplace_back(p.template cast<S2>()); }, f);
    }
    return out;
  }
};
using FlowStack = FlowStackT<double>;

template <class Scalar>
Index flow_dim(const FlowParamsT<Scalar>& f) {
  if (const auto* p = std::get_if<PlanarParamsT<Scalar>>(&f)) return p->u.size();
  if (const auto* p = std::get_if<SylvesterParamsT<Scalar>>(&f)) return p->ambient_dim();
  return std::get<MadeParamsT<Scalar>>(f).dim;
}

// Shared dimension, invertibility bounds, and the identity-first alternation
// of T-variant permutation tags.
template <class Scalar>
void validate_stack(const FlowStackT<Scalar>& s, Index expected_dim = -1) {
  Index d = expected_dim;
  int t_count = 0;
  for (const auto& f : s.flows) {
    Index fd = flow_dim(f);
    if (d < 0) d = fd;
    if (fd != d) throw DimensionError("FlowStack: flows disagree on D");
    if (const auto* p = std::get_if<PlanarParamsT<Scalar>>(&f)) {
      if (value_of(p->u.dot(p->w)) < -1.0 - 1e-12) {
        throw NonInvertibleError("FlowStack: planar u^T w below -1");
      }
    }
    if (const auto* p = std::get_if<SylvesterParamsT<Scalar>>(&f)) {
      validate_sylvester(*p, s.activation);
      if (p->variant == SylvesterVariant::Triangular) {
        PermutationTag expect = (t_count % 2 == 0) ? PermutationTag::Identity
                                                   : PermutationTag::Reverse;
        if (std::get<PermutationTag>(p->q) != expect) {
          throw DimensionError("FlowStack: T-variant tags must alternate starting with identity");
        }
        ++t_count;
      }
    }
  }
}

// Applies the flows in order, accumulating the log-det sum. IAF conditioners
// after the first flow see the variables in reverse order (an explicit
// permutation with unit |det|). `trajectory`, when given, receives each
// intermediate z including the input and the output.
template <class Scalar>
FlowStep<Scalar> stack_forward(const FlowStackT<Scalar>& s, const VectorX<Scalar>& z0,
                               std::vector<VectorX<Scalar>>* trajectory = nullptr) {
  VectorX<Scalar> z = z0;
  Scalar sum(0);
  if (trajectory != nullptr) trajectory->push_back(z);
  for (std::size_t k = 0; k < s.flows.size(); ++k) {
    FlowStep<Scalar> step = std::visit(
        [&](const auto& p) -> FlowStep<Scalar> {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, PlanarParamsT<Scalar>>) {
            return planar_forward(p, z, s.activation);
          } else if constexpr (std::is_same_v<P, SylvesterParamsT<Scalar>>) {
            return sylvester_forward(p, z, s.activation);
          } else {
            if (k > 0) {
              VectorX<Scalar> rev = z.reverse();
              return iaf_forward(p, rev);
            }
            return iaf_forward(p, z);
          }
        },
        s.flows[k]);
    z = std::move(step.z);
    sum += step.log_det;
    if (trajectory != nullptr) trajectory->push_back(z);
  }
  return {std::move(z), sum};
}

}  // namespace snf

#endif  // SNF_FLOWS_HPP
