#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "snf/serialize.hpp"
#include "snf/vi.hpp"

using namespace snf;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "snf_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path golden(const char* name) { return fs::path(SNF_GOLDEN_DIR) / name; }

CliRun run_cli_binary(const std::string& args) {
  static int counter = 0;
  const fs::path out_file = scratch_root() / ("stdout." + std::to_string(counter));
  const fs::path err_file = scratch_root() / ("stderr." + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string("\"") + SNF_CLI_BINARY + "\" " + args + " > \"" +
                          out_file.string() + "\" 2> \"" + err_file.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(out_file.string());
  r.err = read_text_file(err_file.string());
  return r;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

}  // namespace

TEST_CASE("check emits a byte-stable passing report") {
  CliRun a = run_cli_binary("check --suite logdet --dims 3 --seed 5");
  CliRun b = run_cli_binary("check --suite logdet --dims 3 --seed 5");
  CHECK(a.code == 0);
  CHECK(a.out == b.out);  // reruns are byte-identical

  Json report = parse_json_document(a.out);
  CHECK(report.at("schema") == "snf-report/1");
  CHECK(report.at("suite") == "logdet");
  CHECK(report.at("seed") == 5);
  CHECK(report.at("pass") == true);
  REQUIRE(report.at("suites").size() == 1);
  CHECK(report.at("suites")[0].at("failed") == 0);
  CHECK(report.at("suites")[0].at("cases").size() > 0);
}

TEST_CASE("check --out mirrors stdout and guards against overwrites") {
  const fs::path dir = scratch_root() / "check_out";
  const std::string args = "check --suite ortho --dims 3 --seed 1 --out \"" + dir.string() + "\"";
  CliRun first = run_cli_binary(args);
  CHECK(first.code == 0);
  CHECK(read_text_file((dir / "report.json").string()) == first.out);

  CliRun blocked = run_cli_binary(args);
  CHECK(blocked.code == 2);
  CHECK(blocked.err.find("--force") != std::string::npos);

  CliRun forced = run_cli_binary(args + " --force");
  CHECK(forced.code == 0);
  CHECK(forced.out == first.out);
}

TEST_CASE("usage errors and unknown suites exit with the config code") {
  CHECK(run_cli_binary("check --suite bogus").code == 2);
  CHECK(run_cli_binary("check --no-such-flag").code == 2);
  CHECK(run_cli_binary("").code == 2);              // a subcommand is required
  CHECK(run_cli_binary("fit-target").code == 2);    // --config is required
  CliRun no_out = run_cli_binary("fit-target --config \"" + golden("fit_target.json").string() +
                                 "\"");
  CHECK(no_out.code == 2);
  CHECK(no_out.err.find("--out") != std::string::npos);
}

TEST_CASE("malformed or over-specified configs are diagnosed") {
  const fs::path broken = scratch_root() / "broken.json";
  write_text_file(broken.string(), "{\n  \"variant\": \"tsnf\",\n  \"D\": 2,\n");
  CliRun r = run_cli_binary("fit-target --config \"" + broken.string() + "\" --out \"" +
                            (scratch_root() / "broken_out").string() + "\"");
  CHECK(r.code == 2);
  CHECK(r.err.find("line") != std::string::npos);
  CHECK(r.err.find("column") != std::string::npos);

  const fs::path unknown = scratch_root() / "unknown.json";
  write_text_file(unknown.string(),
                  "{\"variant\": \"tsnf\", \"D\": 2, \"K\": 1, \"seed\": 1, \"bogus\": 4,"
                  " \"target\": {\"type\": \"standard_normal\"}}");
  CliRun u = run_cli_binary("fit-target --config \"" + unknown.string() + "\" --out \"" +
                            (scratch_root() / "unknown_out").string() + "\"");
  CHECK(u.code == 2);
  CHECK(u.err.find("bogus") != std::string::npos);
}

TEST_CASE("fit-target writes a trace and a loadable posterior") {
  const fs::path dir = scratch_root() / "fit_out";
  CliRun r = run_cli_binary("fit-target --config \"" + golden("fit_target.json").string() +
                            "\" --out \"" + dir.string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("fit-target tsnf D=2 K=2 epochs=5") == 0);
  CHECK(r.out.find("final_F=") != std::string::npos);

  std::vector<std::string> csv = split_lines(read_text_file((dir / "trace.csv").string()));
  REQUIRE(csv.size() == 6);  // header + one row per epoch
  CHECK(csv[0] == "epoch,beta,train_F,val_F,wallclock");
  CHECK(csv[1].substr(0, 2) == "0,");

  LoadedPosterior post =
      posterior_from_json(parse_json_document(read_text_file((dir / "params.json").string())));
  CHECK(post.variant == FlowVariant::TriangularSylvester);
  CHECK(post.base.dim() == 2);
  CHECK(post.stack.flows.size() == 2);
  FlowStep<double> step = stack_forward(post.stack, Vector(Vector::Zero(2)));
  CHECK(std::isfinite(step.log_det));
}

TEST_CASE("golden posterior document loads and re-serializes to the same content") {
  Json doc = parse_json_document(read_text_file(golden("posterior_tsnf.json").string()));
  LoadedPosterior post = posterior_from_json(doc);
  CHECK(post.variant == FlowVariant::TriangularSylvester);
  CHECK(post.base.mu[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(post.base.mu[1] == doctest::Approx(-0.2).epsilon(1e-15));
  REQUIRE(post.stack.flows.size() == 2);
  const auto& f0 = std::get<SylvesterParams>(post.stack.flows[0]);
  const auto& f1 = std::get<SylvesterParams>(post.stack.flows[1]);
  CHECK(std::get<PermutationTag>(f0.q) == PermutationTag::Identity);
  CHECK(std::get<PermutationTag>(f1.q) == PermutationTag::Reverse);
  CHECK(f0.r.diag(0) == 0.5);
  CHECK(f0.r_tilde(0, 1) == 0.1);

  // Same document after a load/serialize round-trip: the schema is pinned.
  Json again = posterior_to_json(post.base, post.stack, post.variant);
  CHECK(again == doc);

  Vector z(2);
  z << 0.3, -0.5;
  FlowStep<double> step = stack_forward(post.stack, z);
  CHECK(std::isfinite(step.log_det));
  CHECK(step.log_det != 0.0);
}

TEST_CASE("train-vae checkpoint reproduces its recorded validation score") {
  const fs::path dir = scratch_root() / "vae_out";
  CliRun r = run_cli_binary("train-vae --config \"" + golden("train_vae.json").string() +
                            "\" --out \"" + dir.string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("train-vae tsnf D=2 K=1") == 0);

  Json nll = parse_json_document(read_text_file((dir / "nll.json").string()));
  CHECK(nll.at("schema") == "snf-nll/1");
  CHECK(nll.at("importance_samples") == 10);
  CHECK(std::isfinite(nll.at("estimate").get<double>()));
  CHECK(nll.at("std_error").get<double>() >= 0.0);

  Json model_doc = parse_json_document(read_text_file((dir / "model.json").string()));
  CHECK(model_doc.at("schema") == "snf-model/1");
  VaeModel model = vae_checkpoint_from_json(model_doc);
  ExperimentConfig cfg =
      experiment_config_from_json(model_doc.at("config"), ConfigContext::TrainVae);
  CHECK(cfg.training.seed == 2);

  // Dataset and validation noise rebuild from the embedded config alone, so
  // the stored final_val_F must match bit for bit.
  BarsDataset data = BarsDataset::make(cfg.dataset.train_size, cfg.dataset.val_size,
                                       cfg.dataset.side, cfg.training.seed);
  Matrix eps = validation_noise(cfg.training.seed, cfg.latent_dim, cfg.dataset.val_size);
  CHECK(vae_validation_f(model, data.val_x, eps) == nll.at("final_val_F").get<double>());

  std::vector<std::string> csv = split_lines(read_text_file((dir / "trace.csv").string()));
  REQUIRE(csv.size() == 3);  // header + two epochs
  CHECK(csv[0] == "epoch,beta,train_F,val_F,wallclock");
}

TEST_CASE("seed and importance-sample overrides land in the artifacts") {
  const fs::path dir = scratch_root() / "vae_override";
  CliRun r = run_cli_binary("train-vae --config \"" + golden("train_vae.json").string() +
                            "\" --out \"" + dir.string() + "\" --seed 99 --importance-samples 3");
  REQUIRE(r.code == 0);
  Json nll = parse_json_document(read_text_file((dir / "nll.json").string()));
  CHECK(nll.at("importance_samples") == 3);
  Json model_doc = parse_json_document(read_text_file((dir / "model.json").string()));
  CHECK(model_doc.at("config").at("seed") == 99);
}

TEST_CASE("params table reports matching counts for every variant") {
  CliRun r = run_cli_binary("params --config \"" + golden("params.json").string() + "\"");
  REQUIRE(r.code == 0);
  std::vector<std::string> lines = split_lines(r.out);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0].find("variant") != std::string::npos);
  const char* names[] = {"planar", "osnf", "hsnf", "tsnf", "iaf"};
  for (int i = 0; i < 5; ++i) {
    CHECK(lines[static_cast<std::size_t>(i + 1)].find(names[i]) == 0);
    CHECK(lines[static_cast<std::size_t>(i + 1)].rfind("yes") != std::string::npos);
    CHECK(lines[static_cast<std::size_t>(i + 1)].find("NO") == std::string::npos);
  }
}
