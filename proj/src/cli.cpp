#include "snf/cli.hpp"

#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "snf/serialize.hpp"

namespace snf {

namespace {

namespace fs = std::filesystem;

std::string out_path(const std::string& dir, const char* file) {
  return (fs::path(dir) / file).string();
}

void require_out_dir(const CliOptions& opt) {
  if (opt.out_dir.empty()) throw ConfigError(opt.command + " needs --out DIR");
  fs::create_directories(opt.out_dir);
}

ExperimentConfig load_config(const CliOptions& opt, ConfigContext context) {
  if (opt.config_path.empty()) throw ConfigError(opt.command + " needs --config PATH");
  ExperimentConfig cfg = load_experiment_config(opt.config_path, context);
  if (opt.seed_set) cfg.training.seed = opt.seed;
  if (opt.importance_samples > 0) cfg.training.importance_samples = opt.importance_samples;
  return cfg;
}

std::string format_double(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace

int cmd_check(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  CheckOptions copt;
  copt.seed = opt.seed;
  copt.max_dim = opt.dims;
  std::vector<SuiteResult> suites = run_check_suites(opt.suite, copt);
  Json report = check_report_to_json(opt.suite, copt, suites);
  std::string text = report.dump(2);
  text += '\n';
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    const std::string path = out_path(opt.out_dir, "report.json");
    require_writable(path, opt.force);
    write_text_file(path, text);
  }
  out << text;
  if (report.at("pass").get<bool>()) return kExitOk;
  for (const auto& s : suites) {
    for (const auto& c : s.cases) {
      if (c.pass) continue;
      err << "FAIL " << s.suite << '/' << c.name << " metric=" << format_double(c.metric, 3)
          << " tol=" << format_double(c.tolerance, 3);
      if (!c.note.empty()) err << " note=" << c.note;
      err << '\n';
    }
  }
  return kExitPropertyFailure;
}

int cmd_fit_target(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_config(opt, ConfigContext::FitTarget);
  require_out_dir(opt);
  const std::string trace_path = out_path(opt.out_dir, "trace.csv");
  const std::string params_path = out_path(opt.out_dir, "params.json");
  require_writable(trace_path, opt.force);
  require_writable(params_path, opt.force);

  FitResult res = fit_target(cfg.training, cfg.target(), cfg.amortization());
  write_text_file(trace_path, trace_to_csv(res.trace));
  if (res.diverged) {
    err << "fit-target: objective became non-finite; trace written, no params\n";
    return kExitDivergence;
  }
  AmortizedPosterior post = build_posterior(res.model);
  write_text_file(params_path,
                  posterior_to_json(post.base, post.stack, cfg.variant).dump(2) + "\n");
  out << "fit-target " << variant_name(cfg.variant) << " D=" << cfg.latent_dim
      << " K=" << cfg.num_flows << " epochs=" << cfg.training.epochs
      << " final_F=" << format_double(res.final_f, 10) << '\n';
  return kExitOk;
}

int cmd_train_vae(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_config(opt, ConfigContext::TrainVae);
  require_out_dir(opt);
  const std::string trace_path = out_path(opt.out_dir, "trace.csv");
  const std::string model_path = out_path(opt.out_dir, "model.json");
  const std::string nll_path = out_path(opt.out_dir, "nll.json");
  require_writable(trace_path, opt.force);
  require_writable(model_path, opt.force);
  require_writable(nll_path, opt.force);

  BarsDataset data = BarsDataset::make(cfg.dataset.train_size, cfg.dataset.val_size,
                                       cfg.dataset.side, cfg.training.seed);
  VaeArchitecture arch;
  arch.data_dim = data.data_dim();
  arch.amortization = cfg.amortization();
  VaeResult res = train_toy_vae(cfg.training, data, arch);
  write_text_file(trace_path, trace_to_csv(res.trace));
  if (res.diverged) {
    err << "train-vae: objective became non-finite; trace written, no checkpoint\n";
    return kExitDivergence;
  }

  Json echo = experiment_config_to_json(cfg, ConfigContext::TrainVae);
  write_text_file(model_path, vae_checkpoint_to_json(res.model, echo).dump(2) + "\n");

  Json nll;
  nll["schema"] = "snf-nll/1";
  nll["importance_samples"] = cfg.training.importance_samples;
  nll["estimate"] = res.nll.value;
  nll["std_error"] = res.nll.std_error;
  nll["val_neg_elbo"] = res.val_neg_elbo_mean;
  nll["val_neg_elbo_std_error"] = res.val_neg_elbo_se;
  nll["final_val_F"] = res.final_val_f;
  nll["final_train_F"] = res.final_train_f;
  write_text_file(nll_path, nll.dump(2) + "\n");

  out << "train-vae " << variant_name(cfg.variant) << " D=" << cfg.latent_dim
      << " K=" << cfg.num_flows << " final_val_F=" << format_double(res.final_val_f, 10)
      << " nll=" << format_double(res.nll.value, 10) << " (se "
      << format_double(res.nll.std_error, 4) << ")\n";
  return kExitOk;
}

int cmd_params(const CliOptions& opt, std::ostream& out, std::ostream&) {
  ExperimentConfig cfg = load_config(opt, ConfigContext::Params);
  static constexpr FlowVariant kVariants[] = {
      FlowVariant::Planar, FlowVariant::OrthogonalSylvester, FlowVariant::HouseholderSylvester,
      FlowVariant::TriangularSylvester, FlowVariant::Iaf};
  out << std::left << std::setw(8) << "variant" << std::right << std::setw(14) << "formula"
      << std::setw(14) << "enumerated" << std::setw(8) << "match" << '\n';
  bool all_match = true;
  Rng rng(cfg.training.seed);
  for (FlowVariant v : kVariants) {
    AmortizationConfig a = cfg.amortization();
    a.variant = v;
    const std::int64_t formula = count_parameters(a);
    Hypernetwork h = make_hypernetwork(a, rng);
    const std::int64_t enumerated = enumerate_flow_parameters(h);
    const bool match = formula == enumerated;
    all_match = all_match && match;
    out << std::left << std::setw(8) << variant_name(v) << std::right << std::setw(14) << formula
        << std::setw(14) << enumerated << std::setw(8) << (match ? "yes" : "NO") << '\n';
  }
  return all_match ? kExitOk : kExitPropertyFailure;
}

int run_cli(const CliOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    if (opt.command == "check") return cmd_check(opt, out, err);
    if (opt.command == "fit-target") return cmd_fit_target(opt, out, err);
    if (opt.command == "train-vae") return cmd_train_vae(opt, out, err);
    if (opt.command == "params") return cmd_params(opt, out, err);
    throw ConfigError("unknown command '" + opt.command + "'");
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitPropertyFailure;
  }
}

}  // namespace snf
