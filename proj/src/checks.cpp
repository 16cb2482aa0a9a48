#include "snf/checks.hpp"

#include <cmath>
#include <iterator>
#include <limits>
#include <utility>

#include "snf/diff.hpp"
#include "snf/inversion.hpp"
#include "snf/linalg.hpp"
#include "snf/vi.hpp"

namespace snf {

namespace {

// Stable per-case stream: reordering or resizing the grid never shifts the
// draws of other cases.
Rng case_rng(std::uint64_t seed, std::uint64_t suite, std::uint64_t cell, std::uint64_t instance) {
  return Rng(mix_seed(mix_seed(mix_seed(seed, suite), cell), instance));
}

std::vector<Index> dim_grid(Index max_dim) {
  std::vector<Index> dims;
  for (Index d : {2, 3, 5, 8}) {
    if (d <= max_dim) dims.push_back(d);
  }
  if (dims.empty() || (dims.back() != max_dim && max_dim <= 32)) {
    dims.push_back(std::max<Index>(2, max_dim));
  }
  return dims;
}

FlowStep<double> flow_forward(const FlowParams& f, const Vector& z, const Activation& act) {
  return std::visit(
      [&](const auto& p) -> FlowStep<double> {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, PlanarParams>) {
          return planar_forward(p, z, act);
        } else if constexpr (std::is_same_v<P, SylvesterParams>) {
          return sylvester_forward(p, z, act);
        } else {
          return iaf_forward(p, z);
        }
      },
      f);
}

std::string case_name(const std::string& variant, Index dim, Index instance) {
  return variant + "/d" + std::to_string(dim) + "/i" + std::to_string(instance);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& z, double step) {
  const Index d = z.size();
  Vector probe = z;
  probe[0] += step;
  const Index n = f(probe).size();
  Matrix j(n, d);
  for (Index c = 0; c < d; ++c) {
    Vector zp = z, zm = z;
    zp[c] += step;
    zm[c] -= step;
    j.col(c) = (f(zp) - f(zm)) / (2.0 * step);
  }
  return j;
}

double fd_log_abs_det_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& z,
                               double step) {
  double det = dense_det<double>(fd_jacobian(f, z, step));
  return std::log(std::abs(det));
}

namespace detail {

Vector invert_iaf(const MadeParams& p, const Vector& z_prime, const Vector& context) {
  if (z_prime.size() != p.dim) throw DimensionError("invert_iaf: dim mismatch");
  Vector z = Vector::Zero(p.dim);
  for (Index i = 0; i < p.dim; ++i) {
    // Entries < i of z are already final; (mu_i, s_i) ignore entries >= i.
    auto [mu, s] = iaf_conditioner(p, z, context);
    double gate = logistic(s[i]);
    if (gate <= 0.0) throw SingularJacobianError("invert_iaf: gate underflowed to zero");
    z[i] = (z_prime[i] - (1.0 - gate) * mu[i]) / gate;
  }
  return z;
}

}  // namespace detail

Vector invert_stack(const FlowStack& stack, const Vector& z_k, double tol) {
  Vector z = z_k;
  for (std::size_t k = stack.flows.size(); k-- > 0;) {
    z = std::visit(
        [&](const auto& p) -> Vector {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, PlanarParams>) {
            return invert_planar(p, z, stack.activation, tol);
          } else if constexpr (std::is_same_v<P, SylvesterParams>) {
            return invert_sylvester(p, z, stack.activation, tol);
          } else {
            Vector v = detail::invert_iaf(p, z, p.context);
            if (k > 0) {
              Vector r = v.reverse();
              return r;
            }
            return v;
          }
        },
        stack.flows[k]);
  }
  return z;
}

double pushforward_log_density(const DiagGaussian& base, const FlowStack& stack, const Vector& z,
                               double tol) {
  Vector z0 = invert_stack(stack, z, tol);
  FlowStep<double> fwd = stack_forward(stack, z0);
  return base_log_prob(base, z0) - fwd.log_det;
}

double integrate_pushforward_2d(const DiagGaussian& base, const FlowStack& stack, Index grid,
                                double lo, double hi) {
  if (base.dim() != 2) throw DimensionError("integrate_pushforward_2d: base must be 2-D");
  validate_stack(stack, 2);
  const double h = (hi - lo) / static_cast<double>(grid);
  double total = 0.0;
  Vector z(2);
  for (Index i = 0; i < grid; ++i) {
    z[0] = lo + (static_cast<double>(i) + 0.5) * h;
    for (Index j = 0; j < grid; ++j) {
      z[1] = lo + (static_cast<double>(j) + 0.5) * h;
      total += std::exp(pushforward_log_density(base, stack, z));
    }
  }
  return total * h * h;
}

FlowParams make_random_flow(const InstanceSpec& spec, Index flow_index, Rng& rng, double scale) {
  const Index d = spec.dim;
  if (spec.variant == FlowVariant::Iaf) {
    const Index c = spec.made_width;
    MadeParams p = make_made_params<double>(d, c);
    p.w_in = scale * rng.normal_matrix(c, d);
    p.w_hidden = scale * rng.normal_matrix(c, c);
    p.w_mu = scale * rng.normal_matrix(d, c);
    p.w_s = scale * rng.normal_matrix(d, c);
    p.b_in = 0.1 * rng.normal_vector(c);
    p.b_hidden = 0.1 * rng.normal_vector(c);
    p.b_mu = 0.1 * rng.normal_vector(d);
    p.b_s = 0.1 * rng.normal_vector(d);
    p.context = scale * rng.normal_vector(c);
    return p;
  }
  AmortizationConfig c;
  c.variant = spec.variant;
  c.feature_dim = 1;
  c.latent_dim = d;
  c.num_flows = 1;
  c.bottleneck = spec.bottleneck;
  c.reflections = spec.reflections;
  c.made_width = spec.made_width;
  c.ortho_eps = spec.ortho_eps;
  Vector raw = scale * rng.normal_vector(c.flow_param_dim());
  return build_flow(c.variant, raw, d, flow_index, c, Activation{});
}

FlowStack make_random_stack(const InstanceSpec& spec, Index num_flows, Rng& rng, double scale) {
  FlowStack stack;
  stack.flows.reserve(static_cast<std::size_t>(num_flows));
  for (Index k = 0; k < num_flows; ++k) {
    stack.flows.push_back(make_random_flow(spec, k, rng, scale));
  }
  validate_stack(stack, spec.dim);
  return stack;
}

// ---------------------------------------------------------------------------

SuiteResult run_logdet_suite(const CheckOptions& opt) {
  SuiteResult out{"logdet", {}};
  const double tol = 1e-6;
  const Activation act{};
  const std::vector<std::pair<std::string, FlowVariant>> variants = {
      {"planar", FlowVariant::Planar},
      {"osnf", FlowVariant::OrthogonalSylvester},
      {"hsnf", FlowVariant::HouseholderSylvester},
      {"tsnf", FlowVariant::TriangularSylvester},
      {"iaf", FlowVariant::Iaf}};

  for (Index d : dim_grid(opt.max_dim)) {
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      for (Index i = 0; i < opt.instances; ++i) {
        Rng rng = case_rng(opt.seed, 1, static_cast<std::uint64_t>(vi) * 64 +
                                            static_cast<std::uint64_t>(d),
                           static_cast<std::uint64_t>(i));
        CheckCase c;
        c.name = case_name(variants[vi].first, d, i);
        c.variant = variants[vi].first;
        c.dim = d;
        c.tolerance = tol;
        try {
          InstanceSpec spec;
          spec.variant = variants[vi].second;
          spec.dim = d;
          spec.bottleneck = 1 + (i % d);
          spec.reflections = 1 + (i % std::min<Index>(d, 3));
          spec.made_width = d + 2 + (i % 2);
          FlowParams f = make_random_flow(spec, i, rng);
          Vector z = rng.normal_vector(d);
          double analytic = flow_forward(f, z, act).log_det;
          auto fwd = [&](const Vector& x) { return flow_forward(f, x, act).z; };
          c.metric = std::abs(analytic - fd_log_abs_det_jacobian(fwd, z));
          c.pass = c.metric <= tol;
        } catch (const Error& e) {
          c.metric = kInf;
          c.pass = false;
          c.note = e.what();
        }
        out.cases.push_back(std::move(c));
      }
    }
    // General (unfactored) Sylvester transform alongside the QR variants.
    for (Index i = 0; i < opt.instances; ++i) {
      Rng rng = case_rng(opt.seed, 1, 5 * 64 + static_cast<std::uint64_t>(d),
                         static_cast<std::uint64_t>(i));
      CheckCase c;
      c.name = case_name("gsnf", d, i);
      c.variant = "gsnf";
      c.dim = d;
      c.tolerance = tol;
      try {
        const Index m = std::max<Index>(1, d / 2);
        GeneralSylvesterParams p{0.5 * rng.normal_matrix(d, m), 0.5 * rng.normal_matrix(m, d),
                                 0.3 * rng.normal_vector(m)};
        Vector z = rng.normal_vector(d);
        double analytic = general_sylvester_forward(p, z, act).log_det;
        auto fwd = [&](const Vector& x) { return general_sylvester_forward(p, x, act).z; };
        c.metric = std::abs(analytic - fd_log_abs_det_jacobian(fwd, z));
        c.pass = c.metric <= tol;
      } catch (const Error& e) {
        c.metric = kInf;
        c.pass = false;
        c.note = e.what();
      }
      out.cases.push_back(std::move(c));
    }
  }
  return out;
}

SuiteResult run_inverse_suite(const CheckOptions& opt) {
  SuiteResult out{"inverse", {}};
  const double tol = 1e-8;
  const double perp_tol = 1e-14;
  const Activation act{};
  const std::vector<std::pair<std::string, FlowVariant>> variants = {
      {"planar", FlowVariant::Planar},
      {"osnf", FlowVariant::OrthogonalSylvester},
      {"hsnf", FlowVariant::HouseholderSylvester},
      {"tsnf", FlowVariant::TriangularSylvester},
      {"iaf", FlowVariant::Iaf}};

  for (Index d : dim_grid(opt.max_dim)) {
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      for (Index i = 0; i < opt.instances; ++i) {
        Rng rng = case_rng(opt.seed, 2, static_cast<std::uint64_t>(vi) * 64 +
                                            static_cast<std::uint64_t>(d),
                           static_cast<std::uint64_t>(i));
        CheckCase c;
        c.name = case_name(variants[vi].first, d, i);
        c.variant = variants[vi].first;
        c.dim = d;
        c.tolerance = tol;
        try {
          InstanceSpec spec;
          spec.variant = variants[vi].second;
          spec.dim = d;
          spec.bottleneck = std::max<Index>(1, d / 2);  // keeps M < D for d >= 2
          spec.reflections = 1 + (i % std::min<Index>(d, 3));
          spec.made_width = d + 2;
          // The constructive inverse assumes Q^T Q = I; its round-trip error
          // scales with the orthogonalization residual, so demand near-machine
          // orthonormality here (a couple of extra Bjorck steps).
          spec.ortho_eps = 1e-12;
          FlowParams f = make_random_flow(spec, i, rng);
          Vector z = rng.normal_vector(d);
          Vector z_prime = flow_forward(f, z, act).z;
          Vector z_back = std::visit(
              [&](const auto& p) -> Vector {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, PlanarParams>) {
                  return invert_planar(p, z_prime, act, 1e-10);
                } else if constexpr (std::is_same_v<P, SylvesterParams>) {
                  return invert_sylvester(p, z_prime, act, 1e-10);
                } else {
                  return detail::invert_iaf(p, z_prime, p.context);
                }
              },
              f);
          c.metric = (z_back - z).cwiseAbs().maxCoeff();
          c.pass = c.metric <= tol;
          if (const auto* sp = std::get_if<SylvesterParams>(&f)) {
            if (sp->variant == SylvesterVariant::Orthogonal && sp->bottleneck() < d) {
              const Matrix& q = std::get<OrthonormalColumns<double>>(sp->q).matrix();
              Vector diff = z_back - z;
              Vector perp = diff - q * (q.transpose() * diff);
              c.secondary = perp.cwiseAbs().maxCoeff();
              c.pass = c.pass && c.secondary <= perp_tol;
            }
          }
        } catch (const Error& e) {
          c.metric = kInf;
          c.pass = false;
          c.note = e.what();
        }
        out.cases.push_back(std::move(c));
      }
    }
  }
  return out;
}

SuiteResult run_ortho_suite(const CheckOptions& opt) {
  SuiteResult out{"ortho", {}};
  const double tol = kDefaultOrthoTolerance;
  const double scales[] = {0.01, 0.6, 3.0};

  for (Index d : dim_grid(opt.max_dim)) {
    const Index ms[] = {std::max<Index>(1, d / 2), d};
    for (Index m : ms) {
      for (Index i = 0; i < opt.instances; ++i) {
        Rng rng = case_rng(opt.seed, 3, static_cast<std::uint64_t>(d) * 64 +
                                            static_cast<std::uint64_t>(m),
                           static_cast<std::uint64_t>(i));
        CheckCase c;
        c.name = "osnf/d" + std::to_string(d) + "/m" + std::to_string(m) + "/i" +
                 std::to_string(i);
        c.variant = "osnf";
        c.dim = d;
        c.tolerance = tol;
        try {
          double scale = scales[i % 3];
          Vector raw = scale * rng.normal_vector(m * d);
          Matrix seed = orthogonal_seed(raw, d, m);
          Matrix gram_residual =
              seed.transpose() * seed - Matrix::Identity(m, m);
          c.secondary = spectral_norm_sym(gram_residual);
          BjorckResult<double> bj = bjorck_orthogonalize(seed, tol, kDefaultBjorckSteps);
          c.metric = bj.residual;
          c.steps = bj.steps;
          c.monotone = bj.monotone;
          c.pass = bj.residual <= tol && bj.steps <= kDefaultBjorckSteps && bj.monotone;
        } catch (const Error& e) {
          c.metric = kInf;
          c.pass = false;
          c.note = e.what();
        }
        out.cases.push_back(std::move(c));
      }
    }
  }
  return out;
}

SuiteResult run_made_suite(const CheckOptions& opt) {
  SuiteResult out{"made", {}};
  const double tol = 1e-7;
  for (Index d : dim_grid(opt.max_dim)) {
    const Index widths[] = {d, d + 3};
    for (Index w : widths) {
      for (Index i = 0; i < opt.instances; ++i) {
        Rng rng = case_rng(opt.seed, 4, static_cast<std::uint64_t>(d) * 64 +
                                            static_cast<std::uint64_t>(w),
                           static_cast<std::uint64_t>(i));
        CheckCase c;
        c.name = "made/d" + std::to_string(d) + "/c" + std::to_string(w) + "/i" +
                 std::to_string(i);
        c.variant = "iaf";
        c.dim = d;
        c.tolerance = tol;
        try {
          InstanceSpec spec;
          spec.variant = FlowVariant::Iaf;
          spec.dim = d;
          spec.made_width = w;
          FlowParams f = make_random_flow(spec, 0, rng, 0.8);
          const auto& p = std::get<MadeParams>(f);
          Vector z = rng.normal_vector(d);
          auto fwd = [&](const Vector& x) { return iaf_forward(p, x).z; };
          Matrix j = fd_jacobian(fwd, z);
          double worst = 0.0;
          for (Index r = 0; r < d; ++r) {
            for (Index col = r + 1; col < d; ++col) {
              worst = std::max(worst, std::abs(j(r, col)));
            }
          }
          c.metric = worst;
          c.pass = worst <= tol;
        } catch (const Error& e) {
          c.metric = kInf;
          c.pass = false;
          c.note = e.what();
        }
        out.cases.push_back(std::move(c));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient suite. Each case wraps one parameterized operation (or a full
// objective) and compares recorded gradients against central differences.

namespace {

void push_grad_case(SuiteResult& out, const std::string& name, Index dim, double metric,
                    double tol, const std::string& note = {}) {
  CheckCase c;
  c.name = name;
  c.variant = "grad";
  c.dim = dim;
  c.metric = metric;
  c.tolerance = tol;
  c.pass = std::isfinite(metric) && metric <= tol;
  c.note = note;
  out.cases.push_back(std::move(c));
}

template <class Objective>
void grad_case(SuiteResult& out, const std::string& name, Index dim, Objective&& obj,
               std::vector<Matrix> blocks, const std::vector<std::string>& names,
               double tol = 1e-4) {
  try {
    auto reports = ad::grad_check(obj, std::move(blocks), names);
    double worst = 0.0;
    for (const auto& r : reports) worst = std::max(worst, r.max_rel_error);
    push_grad_case(out, name, dim, worst, tol);
  } catch (const Error& e) {
    push_grad_case(out, name, dim, kInf, tol, e.what());
  }
}

}  // namespace

SuiteResult run_grad_suite(const CheckOptions& opt) {
  SuiteResult out{"grad", {}};
  const Activation act{};
  const Index reps = std::min<Index>(std::max<Index>(opt.instances, 1), 3);

  for (Index i = 0; i < reps; ++i) {
    const auto tag = static_cast<std::uint64_t>(i);

    {  // planar: output sum + log-det through the projection
      const Index d = 3;
      Rng rng = case_rng(opt.seed, 5, 0, tag);
      Vector raw = 0.5 * rng.normal_vector(2 * d + 1);
      Vector z = rng.normal_vector(d);
      grad_case(
          out, case_name("grad-planar", d, i), d,
          [d, act](const auto& blocks) {
            using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
            auto p = build_planar(VectorX<S>(blocks[0].col(0)), d);
            FlowStep<S> step = planar_forward(p, VectorX<S>(blocks[1].col(0)), act);
            return S(step.z.sum() + step.log_det);
          },
          {Matrix(raw), Matrix(z)}, {"raw", "z"});
    }

    {  // general Sylvester: dense-determinant path
      const Index d = 3, m = 2;
      Rng rng = case_rng(opt.seed, 5, 1, tag);
      Matrix a = 0.4 * rng.normal_matrix(d, m);
      Matrix b = 0.4 * rng.normal_matrix(m, d);
      Vector bias = 0.3 * rng.normal_vector(m);
      Vector z = rng.normal_vector(d);
      grad_case(
          out, case_name("grad-gsnf", d, i), d,
          [act](const auto& blocks) {
            using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
            GeneralSylvesterParamsT<S> p{blocks[0], blocks[1], VectorX<S>(blocks[2].col(0))};
            FlowStep<S> step = general_sylvester_forward(p, VectorX<S>(blocks[3].col(0)), act);
            return S(step.z.sum() + step.log_det);
          },
          {a, b, Matrix(bias), Matrix(z)}, {"a", "b", "bias", "z"});
    }

    {  // orthogonal variant: through the clip and the unrolled iteration
      const Index d = 4, m = 2;
      Rng rng = case_rng(opt.seed, 5, 2, tag);
      Vector raw = 0.5 * rng.normal_vector(m * d + 2 * m * m + m);
      Vector z = rng.normal_vector(d);
      grad_case(
          out, case_name("grad-osnf", d, i), d,
          [d, m, act](const auto& blocks) {
            using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
            auto p = build_sylvester_o(VectorX<S>(blocks[0].col(0)), d, m, 1e-12, act);
            FlowStep<S> step = sylvester_forward(p, VectorX<S>(blocks[1].col(0)), act);
            return S(step.z.sum() + step.log_det);
          },
          {Matrix(raw), Matrix(z)}, {"raw", "z"});
    }

    {  // Householder variant
      const Index d = 3, h = 2;
      Rng rng = case_rng(opt.seed, 5, 3, tag);
      Vector raw = 0.5 * rng.normal_vector(h * d + 2 * d * d + d);
      Vector z = rng.normal_vector(d);
      grad_case(
          out, case_name("grad-hsnf", d, i), d,
          [d, h, act](const auto& blocks) {
            using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
            auto p = build_sylvester_h(VectorX<S>(blocks[0].col(0)), d, h, act);
            FlowStep<S> step = sylvester_forward(p, VectorX<S>(blocks[1].col(0)), act);
            return S(step.z.sum() + step.log_det);
          },
          {Matrix(raw), Matrix(z)}, {"raw", "z"});
    }

    {  // triangular variant, both permutation tags
      const Index d = 3;
      for (int tagged = 0; tagged < 2; ++tagged) {
        Rng rng = case_rng(opt.seed, 5, 4 + static_cast<std::uint64_t>(tagged), tag);
        Vector raw = 0.5 * rng.normal_vector(2 * d * d + d);
        Vector z = rng.normal_vector(d);
        PermutationTag ptag = tagged == 0 ? PermutationTag::Identity : PermutationTag::Reverse;
        grad_case(
            out, case_name(tagged == 0 ? "grad-tsnf-id" : "grad-tsnf-rev", d, i), d,
            [d, ptag, act](const auto& blocks) {
              using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
              auto p = build_sylvester_t(VectorX<S>(blocks[0].col(0)), d, ptag, act);
              FlowStep<S> step = sylvester_forward(p, VectorX<S>(blocks[1].col(0)), act);
              return S(step.z.sum() + step.log_det);
            },
            {Matrix(raw), Matrix(z)}, {"raw", "z"});
      }
    }

    {  // gated IAF: all conditioner tensors, context, input
      const Index d = 3, c = 5;
      Rng rng = case_rng(opt.seed, 5, 6, tag);
      Matrix w_in = 0.5 * rng.normal_matrix(c, d);
      Matrix w_hidden = 0.5 * rng.normal_matrix(c, c);
      Matrix w_mu = 0.5 * rng.normal_matrix(d, c);
      Matrix w_s = 0.5 * rng.normal_matrix(d, c);
      Vector b_in = 0.1 * rng.normal_vector(c), b_hidden = 0.1 * rng.normal_vector(c);
      Vector b_mu = 0.1 * rng.normal_vector(d), b_s = 0.1 * rng.normal_vector(d);
      Vector context = 0.5 * rng.normal_vector(c);
      Vector z = rng.normal_vector(d);
      grad_case(
          out, case_name("grad-iaf", d, i), d,
          [d, c](const auto& blocks) {
            using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
            MadeParamsT<S> p = make_made_params<S>(d, c);
            p.w_in = blocks[0];
            p.w_hidden = blocks[1];
            p.w_mu = blocks[2];
            p.w_s = blocks[3];
            p.b_in = blocks[4].col(0);
            p.b_hidden = blocks[5].col(0);
            p.b_mu = blocks[6].col(0);
            p.b_s = blocks[7].col(0);
            FlowStep<S> step = iaf_forward(p, VectorX<S>(blocks[9].col(0)),
                                           VectorX<S>(blocks[8].col(0)));
            return S(step.z.sum() + step.log_det);
          },
          {w_in, w_hidden, w_mu, w_s, Matrix(b_in), Matrix(b_hidden), Matrix(b_mu), Matrix(b_s),
           Matrix(context), Matrix(z)},
          {"w_in", "w_hidden", "w_mu", "w_s", "b_in", "b_hidden", "b_mu", "b_s", "context", "z"});
    }

    {  // base distribution: reparameterized sample and its log-density
      const Index d = 3;
      Rng rng = case_rng(opt.seed, 5, 7, tag);
      Vector mu = rng.normal_vector(d);
      Vector log_sigma = 0.3 * rng.normal_vector(d);
      Matrix eps = rng.normal_matrix(d, 2);
      grad_case(
          out, case_name("grad-base", d, i), d,
          [eps](const auto& blocks) {
            using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
            DiagGaussianT<S> g{blocks[0].col(0), blocks[1].col(0)};
            S total(0);
            for (Index s = 0; s < eps.cols(); ++s) {
              VectorX<S> z0 = sample_base(g, eps.col(s));
              total += base_log_prob_from_eps(g, eps.col(s)) + z0.sum();
            }
            return total;
          },
          {Matrix(mu), Matrix(log_sigma)}, {"mu", "log_sigma"});
    }
  }

  {  // free energy of a direct-parameter fit, T-variant K=2
    const Index d = 3;
    Rng rng = case_rng(opt.seed, 5, 8, 0);
    AmortizationConfig cfg;
    cfg.variant = FlowVariant::TriangularSylvester;
    cfg.feature_dim = 1;
    cfg.latent_dim = d;
    cfg.num_flows = 2;
    TargetModel tm = make_target_model(cfg, rng);
    // Move off the all-near-zero init so the test point is generic.
    tm.mu = 0.3 * rng.normal_vector(d);
    tm.log_sigma = 0.2 * rng.normal_vector(d);
    for (auto& rawb : tm.flow_raw) rawb = 0.4 * rng.normal_vector(rawb.size());
    TargetDensity target = TargetDensity::standard_normal(d);
    Matrix eps = rng.normal_matrix(d, 3);
    std::vector<Matrix> blocks = collect_parameters(tm);
    std::vector<std::string> names = parameter_names(tm);
    grad_case(
        out, "grad-fit-free-energy/d3", d,
        [tm, target, eps](const auto& blocks) {
          using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
          TargetModelT<S> ms = tm.template cast<S>();
          assign_parameters(ms, blocks);
          AmortizedPosteriorT<S> post = build_posterior(ms);
          return free_energy_target(post.base, post.stack, target, eps);
        },
        std::move(blocks), names);
  }

  {  // full amortized objectives at tiny dims, one per head family
    struct VaeCase {
      const char* name;
      FlowVariant variant;
    };
    const VaeCase vcases[] = {{"grad-vae-elbo-tsnf", FlowVariant::TriangularSylvester},
                              {"grad-vae-elbo-osnf", FlowVariant::OrthogonalSylvester},
                              {"grad-vae-elbo-iaf", FlowVariant::Iaf},
                              {"grad-vae-elbo-planar", FlowVariant::Planar},
                              {"grad-vae-elbo-hsnf", FlowVariant::HouseholderSylvester}};
    for (std::size_t vc = 0; vc < std::size(vcases); ++vc) {
      Rng rng = case_rng(opt.seed, 5, 16 + vc, 0);
      VaeArchitecture arch;
      arch.data_dim = 6;
      arch.amortization.variant = vcases[vc].variant;
      arch.amortization.feature_dim = 3;
      arch.amortization.latent_dim = 2;
      arch.amortization.num_flows = 2;
      arch.amortization.bottleneck = 2;
      arch.amortization.reflections = 2;
      arch.amortization.made_width = 3;
      arch.amortization.ortho_eps = 1e-12;
      VaeModel vm = make_vae_model(arch, rng);
      // Perturb the heads so flows are away from identity.
      vm.for_each_param([&](const char*, auto& p) {
        p += 0.2 * rng.normal_matrix(p.rows(), p.cols());
      });
      std::vector<Vector> data;
      for (int n = 0; n < 2; ++n) {
        Vector x(arch.data_dim);
        for (Index t = 0; t < x.size(); ++t) x[t] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        data.push_back(std::move(x));
      }
      Matrix eps = rng.normal_matrix(arch.amortization.latent_dim, 2);
      std::vector<Matrix> blocks = collect_parameters(vm);
      std::vector<std::string> names = parameter_names(vm);
      grad_case(
          out, std::string(vcases[vc].name) + "/d2", 2,
          [vm, data, eps](const auto& blocks) {
            using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
            VaeModelT<S> ms = vm.template cast<S>();
            assign_parameters(ms, blocks);
            return vae_free_energy_batch(ms, data, eps, 0.7);
          },
          std::move(blocks), names);
    }
  }

  {  // constant-on-the-manifold objective: ||Q e_1||^2 == 1, gradient ~ 0
    const Index d = 3, m = 2;
    Rng rng = case_rng(opt.seed, 5, 32, 0);
    Vector raw = 0.5 * rng.normal_vector(m * d);
    Matrix seed = orthogonal_seed(raw, d, m);
    try {
      std::vector<std::string> names = {"q0"};
      auto obj = [](const auto& blocks) {
        using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
        auto bj = bjorck_orthogonalize(blocks[0], 1e-12);
        VectorX<S> q1 = bj.q.matrix().col(0);
        return S(q1.dot(q1));
      };
      std::vector<Matrix> blocks = {seed};
      std::vector<Matrix> grads = ad::gradients(obj, blocks, &names);
      push_grad_case(out, "grad-bjorck-constant/d3", d, grads[0].cwiseAbs().maxCoeff(), 1e-6);
    } catch (const Error& e) {
      push_grad_case(out, "grad-bjorck-constant/d3", d, kInf, 1e-6, e.what());
    }
  }

  return out;
}

std::vector<SuiteResult> run_check_suites(const std::string& name, const CheckOptions& opt) {
  if (opt.max_dim < 2) throw ConfigError("check: --dims must be >= 2");
  if (opt.instances < 1) throw ConfigError("check: instance count must be >= 1");
  std::vector<SuiteResult> out;
  if (name == "logdet" || name == "all") out.push_back(run_logdet_suite(opt));
  if (name == "inverse" || name == "all") out.push_back(run_inverse_suite(opt));
  if (name == "ortho" || name == "all") out.push_back(run_ortho_suite(opt));
  if (name == "grad" || name == "all") out.push_back(run_grad_suite(opt));
  if (name == "made" || name == "all") out.push_back(run_made_suite(opt));
  if (out.empty()) {
    throw ConfigError("check: unknown suite '" + name +
                      "' (expected logdet|inverse|ortho|grad|made|all)");
  }
  return out;
}

}  // namespace snf
