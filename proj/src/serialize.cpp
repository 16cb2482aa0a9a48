#include "snf/serialize.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace snf {

namespace {

void expect(bool cond, const std::string& message) {
  if (!cond) throw ConfigError(message);
}

double number_from_json(const Json& j, const std::string& where) {
  expect(j.is_number(), where + ": expected a number");
  return j.get<double>();
}

}  // namespace

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  expect(j.is_array(), "matrix: expected an array of rows");
  const Index rows = static_cast<Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  expect(j[0].is_array(), "matrix: expected nested row arrays");
  const Index cols = static_cast<Index>(j[0].size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    expect(row.is_array() && static_cast<Index>(row.size()) == cols,
           "matrix: ragged row lengths");
    for (Index c = 0; c < cols; ++c) {
      m(i, c) = number_from_json(row[static_cast<std::size_t>(c)], "matrix entry");
    }
  }
  return m;
}

Json vector_to_json(const Vector& v) {
  Json arr = Json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const Json& j) {
  expect(j.is_array(), "vector: expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) {
    v[i] = number_from_json(j[static_cast<std::size_t>(i)], "vector entry");
  }
  return v;
}

// ---------------------------------------------------------------------------
// snf-params/1

namespace {

Json flow_to_json(const FlowParams& f) {
  Json out = Json::object();
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, PlanarParams>) {
          out["u"] = vector_to_json(p.u);
          out["w"] = vector_to_json(p.w);
          out["b"] = p.b;
        } else if constexpr (std::is_same_v<P, SylvesterParams>) {
          if (const auto* q = std::get_if<OrthonormalColumns<double>>(&p.q)) {
            out["q"] = matrix_to_json(q->matrix());
          } else if (const auto* hh = std::get_if<HouseholderChain<double>>(&p.q)) {
            Json vs = Json::array();
            for (const auto& v : hh->vectors()) vs.push_back(vector_to_json(v));
            out["q"] = std::move(vs);
          } else {
            out["q"] = std::get<PermutationTag>(p.q) == PermutationTag::Identity ? "identity"
                                                                                 : "reverse";
          }
          out["r"] = matrix_to_json(p.r.matrix());
          out["r_tilde"] = matrix_to_json(p.r_tilde.matrix());
          out["b"] = vector_to_json(p.bias);
        } else {
          out["w_in"] = matrix_to_json(p.w_in);
          out["b_in"] = vector_to_json(p.b_in);
          out["w_hidden"] = matrix_to_json(p.w_hidden);
          out["b_hidden"] = vector_to_json(p.b_hidden);
          out["w_mu"] = matrix_to_json(p.w_mu);
          out["b_mu"] = vector_to_json(p.b_mu);
          out["w_s"] = matrix_to_json(p.w_s);
          out["b_s"] = vector_to_json(p.b_s);
          out["context"] = vector_to_json(p.context);
        }
      },
      f);
  return out;
}

FlowParams flow_from_json(const Json& j, FlowVariant variant) {
  expect(j.is_object(), "flow: expected an object");
  switch (variant) {
    case FlowVariant::Planar: {
      PlanarParams p;
      p.u = vector_from_json(j.at("u"));
      p.w = vector_from_json(j.at("w"));
      p.b = number_from_json(j.at("b"), "planar b");
      return p;
    }
    case FlowVariant::OrthogonalSylvester:
    case FlowVariant::HouseholderSylvester:
    case FlowVariant::TriangularSylvester: {
      SylvesterParams p;
      p.r = UpperTriangular<double>(matrix_from_json(j.at("r")));
      p.r_tilde = UpperTriangular<double>(matrix_from_json(j.at("r_tilde")));
      p.bias = vector_from_json(j.at("b"));
      if (variant == FlowVariant::OrthogonalSylvester) {
        p.variant = SylvesterVariant::Orthogonal;
        p.q = OrthonormalColumns<double>(matrix_from_json(j.at("q")));
      } else if (variant == FlowVariant::HouseholderSylvester) {
        p.variant = SylvesterVariant::Householder;
        const Json& vs = j.at("q");
        expect(vs.is_array() && !vs.empty(), "hsnf: q must be a list of reflection vectors");
        std::vector<Vector> vectors;
        vectors.reserve(vs.size());
        for (const auto& v : vs) vectors.push_back(vector_from_json(v));
        p.q = HouseholderChain<double>(vectors.front().size(), std::move(vectors));
      } else {
        p.variant = SylvesterVariant::Triangular;
        const std::string tag = j.at("q").get<std::string>();
        expect(tag == "identity" || tag == "reverse", "tsnf: q must be identity|reverse");
        p.q = tag == "identity" ? PermutationTag::Identity : PermutationTag::Reverse;
      }
      return p;
    }
    case FlowVariant::Iaf: {
      Matrix w_in = matrix_from_json(j.at("w_in"));
      MadeParams p = make_made_params<double>(w_in.cols(), w_in.rows());
      p.w_in = std::move(w_in);
      p.b_in = vector_from_json(j.at("b_in"));
      p.w_hidden = matrix_from_json(j.at("w_hidden"));
      p.b_hidden = vector_from_json(j.at("b_hidden"));
      p.w_mu = matrix_from_json(j.at("w_mu"));
      p.b_mu = vector_from_json(j.at("b_mu"));
      p.w_s = matrix_from_json(j.at("w_s"));
      p.b_s = vector_from_json(j.at("b_s"));
      p.context = vector_from_json(j.at("context"));
      expect(p.w_hidden.rows() == p.width && p.w_hidden.cols() == p.width &&
                 p.w_mu.rows() == p.dim && p.w_mu.cols() == p.width && p.w_s.rows() == p.dim &&
                 p.w_s.cols() == p.width && p.b_in.size() == p.width &&
                 p.b_hidden.size() == p.width && p.b_mu.size() == p.dim &&
                 p.b_s.size() == p.dim && p.context.size() == p.width,
             "iaf: inconsistent tensor shapes");
      return p;
    }
  }
  throw ConfigError("flow: unknown variant");
}

}  // namespace

Json posterior_to_json(const DiagGaussian& base, const FlowStack& stack, FlowVariant variant) {
  Json out;
  out["schema"] = "snf-params/1";
  out["variant"] = variant_name(variant);
  out["activation"] = "tanh";
  out["D"] = base.dim();
  Json b;
  b["mu"] = vector_to_json(base.mu);
  b["log_sigma"] = vector_to_json(base.log_sigma);
  out["base"] = std::move(b);
  Json flows = Json::array();
  for (const auto& f : stack.flows) flows.push_back(flow_to_json(f));
  out["flows"] = std::move(flows);
  return out;
}

LoadedPosterior posterior_from_json(const Json& j) {
  expect(j.is_object(), "params: expected an object");
  expect(j.contains("schema") && j.at("schema") == "snf-params/1",
         "params: unsupported schema (want snf-params/1)");
  if (j.contains("activation")) {
    expect(j.at("activation") == "tanh", "params: unsupported activation");
  }
  LoadedPosterior out;
  out.variant = variant_from_string(j.at("variant").get<std::string>());
  const Json& b = j.at("base");
  out.base.mu = vector_from_json(b.at("mu"));
  out.base.log_sigma = vector_from_json(b.at("log_sigma"));
  expect(out.base.mu.size() == out.base.log_sigma.size(), "params: base size mismatch");
  for (const auto& f : j.at("flows")) {
    out.stack.flows.push_back(flow_from_json(f, out.variant));
  }
  validate_stack(out.stack, out.base.dim());
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration.

FlowVariant variant_from_string(const std::string& s) {
  if (s == "planar") return FlowVariant::Planar;
  if (s == "osnf") return FlowVariant::OrthogonalSylvester;
  if (s == "hsnf") return FlowVariant::HouseholderSylvester;
  if (s == "tsnf") return FlowVariant::TriangularSylvester;
  if (s == "iaf") return FlowVariant::Iaf;
  throw ConfigError("unknown variant '" + s + "' (expected planar|osnf|hsnf|tsnf|iaf)");
}

AmortizationConfig ExperimentConfig::amortization() const {
  AmortizationConfig a;
  a.variant = variant;
  a.feature_dim = feature_dim > 0 ? feature_dim : 1;
  a.latent_dim = latent_dim;
  a.num_flows = num_flows;
  a.bottleneck = bottleneck;
  a.reflections = reflections;
  a.made_width = made_width;
  return a;
}

TargetDensity ExperimentConfig::target() const {
  if (target_kind == TargetDensity::Kind::CorrelatedGaussian2D) {
    return TargetDensity::correlated_gaussian(target_rho);
  }
  return TargetDensity::standard_normal(latent_dim);
}

TextLocation locate_byte(const std::string& text, std::size_t byte) {
  std::size_t pos = byte > 0 ? byte - 1 : 0;
  pos = std::min(pos, text.size());
  TextLocation loc;
  for (std::size_t i = 0; i < pos; ++i) {
    if (text[i] == '\n') {
      ++loc.line;
      loc.column = 1;
    } else {
      ++loc.column;
    }
  }
  return loc;
}

Json parse_json_document(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    TextLocation loc = locate_byte(text, e.byte);
    throw ConfigError("JSON parse error at line " + std::to_string(loc.line) + ", column " +
                      std::to_string(loc.column) + ": " + e.what());
  }
}

namespace {

Index count_field(const Json& j, const std::string& key, Index fallback, Index min_value) {
  if (!j.contains(key)) {
    expect(fallback >= 0, "config: missing required key '" + key + "'");
    return fallback;
  }
  const Json& v = j.at(key);
  expect(v.is_number_integer(), "config: '" + key + "' must be an integer");
  const auto raw = v.get<std::int64_t>();
  expect(raw >= min_value, "config: '" + key + "' must be >= " + std::to_string(min_value));
  return static_cast<Index>(raw);
}

void reject_unknown(const Json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& item : j.items()) {
    expect(allowed.count(item.key()) == 1, "config: unknown key '" + item.key() + "'" + where);
  }
}

}  // namespace

ExperimentConfig experiment_config_from_json(const Json& j, ConfigContext context) {
  expect(j.is_object(), "config: expected a JSON object");
  reject_unknown(j,
                 {"variant", "D", "M", "H", "C", "K", "E", "seed", "learning_rate",
                  "anneal_epochs", "batch", "epochs", "importance_samples", "eval_samples",
                  "target", "dataset"},
                 "");

  ExperimentConfig c;
  expect(j.contains("variant"), "config: missing required key 'variant'");
  expect(j.at("variant").is_string(), "config: 'variant' must be a string");
  c.variant = variant_from_string(j.at("variant").get<std::string>());

  c.latent_dim = count_field(j, "D", -1, 1);
  c.num_flows = count_field(j, "K", -1, 0);
  c.bottleneck = count_field(j, "M", 0, 0);
  c.reflections = count_field(j, "H", 0, 0);
  c.made_width = count_field(j, "C", 0, 0);
  c.feature_dim = count_field(j, "E", 0, 0);

  expect(j.contains("seed"), "config: missing required key 'seed' (seeds are mandatory)");
  expect(j.at("seed").is_number_integer() && j.at("seed").get<std::int64_t>() >= 0,
         "config: 'seed' must be a non-negative integer");
  c.training.seed = j.at("seed").get<std::uint64_t>();

  if (j.contains("learning_rate")) {
    c.training.learning_rate = number_from_json(j.at("learning_rate"), "config: learning_rate");
  }
  c.training.anneal_epochs = count_field(j, "anneal_epochs", c.training.anneal_epochs, 1);
  c.training.batch = count_field(j, "batch", c.training.batch, 1);
  c.training.epochs = count_field(j, "epochs", c.training.epochs, 0);
  c.training.importance_samples =
      count_field(j, "importance_samples", c.training.importance_samples, 1);
  c.training.eval_samples = count_field(j, "eval_samples", c.training.eval_samples, 1);
  c.training.validate();

  if (j.contains("target")) {
    expect(context == ConfigContext::FitTarget, "config: 'target' only applies to fit-target");
    const Json& t = j.at("target");
    expect(t.is_object(), "config: 'target' must be an object");
    reject_unknown(t, {"type", "rho"}, " in 'target'");
    expect(t.contains("type") && t.at("type").is_string(), "config: target.type must be a string");
    const std::string type = t.at("type").get<std::string>();
    if (type == "standard_normal") {
      expect(!t.contains("rho"), "config: target.rho only applies to correlated_gaussian");
      c.target_kind = TargetDensity::Kind::StandardNormal;
    } else if (type == "correlated_gaussian") {
      expect(t.contains("rho"), "config: correlated_gaussian needs target.rho");
      c.target_rho = number_from_json(t.at("rho"), "config: target.rho");
      expect(std::abs(c.target_rho) < 1.0, "config: |target.rho| must be < 1");
      expect(c.latent_dim == 2, "config: correlated_gaussian target needs D = 2");
      c.target_kind = TargetDensity::Kind::CorrelatedGaussian2D;
    } else {
      throw ConfigError("config: unknown target.type '" + type + "'");
    }
    c.has_target = true;
  }

  if (j.contains("dataset")) {
    expect(context == ConfigContext::TrainVae, "config: 'dataset' only applies to train-vae");
    const Json& ds = j.at("dataset");
    expect(ds.is_object(), "config: 'dataset' must be an object");
    reject_unknown(ds, {"train_size", "val_size", "side"}, " in 'dataset'");
    c.dataset.train_size = count_field(ds, "train_size", c.dataset.train_size, 1);
    c.dataset.val_size = count_field(ds, "val_size", c.dataset.val_size, 1);
    c.dataset.side = count_field(ds, "side", c.dataset.side, 2);
  }

  switch (context) {
    case ConfigContext::FitTarget:
      expect(c.has_target, "config: fit-target needs a 'target' object");
      break;
    case ConfigContext::TrainVae:
      expect(c.feature_dim >= 1, "config: train-vae needs E >= 1");
      break;
    case ConfigContext::Params:
      expect(c.feature_dim >= 1, "config: params needs E >= 1");
      expect(c.bottleneck >= 1, "config: params needs M >= 1");
      expect(c.reflections >= 1, "config: params needs H >= 1");
      expect(c.made_width >= c.latent_dim, "config: params needs C >= D");
      break;
  }
  c.amortization().validate();
  return c;
}

ExperimentConfig parse_experiment_config(const std::string& text, ConfigContext context) {
  return experiment_config_from_json(parse_json_document(text), context);
}

Json experiment_config_to_json(const ExperimentConfig& c, ConfigContext context) {
  Json j;
  j["variant"] = variant_name(c.variant);
  j["D"] = c.latent_dim;
  j["K"] = c.num_flows;
  if (c.bottleneck > 0) j["M"] = c.bottleneck;
  if (c.reflections > 0) j["H"] = c.reflections;
  if (c.made_width > 0) j["C"] = c.made_width;
  if (c.feature_dim > 0) j["E"] = c.feature_dim;
  j["seed"] = c.training.seed;
  j["learning_rate"] = c.training.learning_rate;
  j["anneal_epochs"] = c.training.anneal_epochs;
  j["batch"] = c.training.batch;
  j["epochs"] = c.training.epochs;
  j["importance_samples"] = c.training.importance_samples;
  j["eval_samples"] = c.training.eval_samples;
  if (context == ConfigContext::FitTarget && c.has_target) {
    Json t;
    if (c.target_kind == TargetDensity::Kind::CorrelatedGaussian2D) {
      t["type"] = "correlated_gaussian";
      t["rho"] = c.target_rho;
    } else {
      t["type"] = "standard_normal";
    }
    j["target"] = std::move(t);
  }
  if (context == ConfigContext::TrainVae) {
    Json ds;
    ds["train_size"] = c.dataset.train_size;
    ds["val_size"] = c.dataset.val_size;
    ds["side"] = c.dataset.side;
    j["dataset"] = std::move(ds);
  }
  return j;
}

ExperimentConfig load_experiment_config(const std::string& path, ConfigContext context) {
  return parse_experiment_config(read_text_file(path), context);
}

// ---------------------------------------------------------------------------
// snf-model/1

Json vae_checkpoint_to_json(const VaeModel& m, const Json& config_echo) {
  Json out;
  out["schema"] = "snf-model/1";
  out["config"] = config_echo;
  out["data_dim"] = m.data_dim;
  Json params = Json::object();
  m.for_each_param([&](const char* name, const auto& p) {
    params[name] = matrix_to_json(Matrix(p));
  });
  out["params"] = std::move(params);
  return out;
}

VaeModel vae_checkpoint_from_json(const Json& j) {
  expect(j.is_object() && j.contains("schema") && j.at("schema") == "snf-model/1",
         "model: unsupported schema (want snf-model/1)");
  ExperimentConfig cfg = experiment_config_from_json(j.at("config"), ConfigContext::TrainVae);
  VaeArchitecture arch;
  arch.data_dim = cfg.dataset.side * cfg.dataset.side;
  arch.amortization = cfg.amortization();
  Rng shape_rng(0);
  VaeModel m = make_vae_model(arch, shape_rng);
  expect(j.contains("data_dim") && j.at("data_dim").is_number_integer() &&
             j.at("data_dim").get<Index>() == m.data_dim,
         "model: data_dim does not match the config");

  const Json& params = j.at("params");
  expect(params.is_object(), "model: 'params' must be an object");
  std::size_t seen = 0;
  m.for_each_param([&](const char* name, auto& p) {
    expect(params.contains(name), std::string("model: missing tensor '") + name + "'");
    Matrix loaded = matrix_from_json(params.at(name));
    expect(loaded.rows() == p.rows() && loaded.cols() == p.cols(),
           std::string("model: tensor '") + name + "' has the wrong shape");
    p = loaded;
    ++seen;
  });
  expect(seen == params.size(), "model: extra tensors in 'params'");
  return m;
}

// ---------------------------------------------------------------------------
// snf-report/1

Json check_report_to_json(const std::string& suite_name, const CheckOptions& opt,
                          const std::vector<SuiteResult>& suites) {
  Json out;
  out["schema"] = "snf-report/1";
  out["suite"] = suite_name;
  out["seed"] = opt.seed;
  out["dims"] = opt.max_dim;
  out["instances"] = opt.instances;
  bool all_pass = true;
  Json arr = Json::array();
  for (const auto& s : suites) {
    Json js;
    js["suite"] = s.suite;
    js["passed"] = static_cast<Index>(s.cases.size()) - s.failures();
    js["failed"] = s.failures();
    Json cases = Json::array();
    for (const auto& c : s.cases) {
      Json jc;
      jc["name"] = c.name;
      jc["variant"] = c.variant;
      jc["dim"] = c.dim;
      jc["metric"] = c.metric;
      jc["tolerance"] = c.tolerance;
      jc["secondary"] = c.secondary;
      jc["steps"] = c.steps;
      jc["monotone"] = c.monotone;
      jc["pass"] = c.pass;
      jc["note"] = c.note;
      cases.push_back(std::move(jc));
    }
    js["cases"] = std::move(cases);
    arr.push_back(std::move(js));
    all_pass = all_pass && s.pass();
  }
  out["suites"] = std::move(arr);
  out["pass"] = all_pass;
  return out;
}

// ---------------------------------------------------------------------------
// Files.

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  out << content;
  out.flush();
  if (!out) throw Error("write failed: " + path);
}

void require_writable(const std::string& path, bool force) {
  if (!force && std::filesystem::exists(path)) {
    throw ConfigError("refusing to overwrite existing " + path + " (pass --force)");
  }
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,beta,train_F,val_F,wallclock\n";
  for (const auto& r : trace) {
    os << r.epoch << ',' << r.beta << ',' << r.train_f << ',' << r.val_f << ',' << r.wallclock
       << '\n';
  }
  return os.str();
}

}  // namespace snf
