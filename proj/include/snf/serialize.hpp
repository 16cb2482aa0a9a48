#ifndef SNF_SERIALIZE_HPP
#define SNF_SERIALIZE_HPP

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "snf/amortize.hpp"
#include "snf/checks.hpp"
#include "snf/distributions.hpp"
#include "snf/vi.hpp"

// JSON schemas (versioned by a "schema" tag): snf-params/1 for a posterior
// (base + constrained flows), snf-model/1 for a full toy-VAE checkpoint,
// snf-report/1 for check-suite reports. Traces go to CSV. Matrices are
// nested row arrays; doubles survive a round-trip bit-exactly.

namespace snf {

using Json = nlohmann::ordered_json;

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

// ---------------------------------------------------------------------------
// snf-params/1

Json posterior_to_json(const DiagGaussian& base, const FlowStack& stack, FlowVariant variant);

struct LoadedPosterior {
  FlowVariant variant = FlowVariant::TriangularSylvester;
  DiagGaussian base;
  FlowStack stack;
};
LoadedPosterior posterior_from_json(const Json& j);

// ---------------------------------------------------------------------------
// Experiment configuration. Unknown keys anywhere in the document are
// rejected; seeds are mandatory (no wall-clock seeding).

struct DatasetConfig {
  Index train_size = 512;
  Index val_size = 128;
  Index side = 8;
};

struct ExperimentConfig {
  FlowVariant variant = FlowVariant::TriangularSylvester;
  Index latent_dim = 0;    // D
  Index bottleneck = 0;    // M
  Index reflections = 0;   // H
  Index made_width = 0;    // C
  Index num_flows = 0;     // K
  Index feature_dim = 0;   // E
  TrainingConfig training;
  TargetDensity::Kind target_kind = TargetDensity::Kind::StandardNormal;
  double target_rho = 0.0;
  bool has_target = false;
  DatasetConfig dataset;

  AmortizationConfig amortization() const;
  TargetDensity target() const;
};

enum class ConfigContext { FitTarget, TrainVae, Params };

FlowVariant variant_from_string(const std::string& s);

// Parses and validates; throws ConfigError with line/column diagnostics on
// malformed JSON and with the offending key on schema violations.
ExperimentConfig parse_experiment_config(const std::string& text, ConfigContext context);
ExperimentConfig load_experiment_config(const std::string& path, ConfigContext context);
ExperimentConfig experiment_config_from_json(const Json& j, ConfigContext context);

// Inverse of experiment_config_from_json for the same context; used to embed
// the effective config (after CLI overrides) into checkpoints.
Json experiment_config_to_json(const ExperimentConfig& c, ConfigContext context);

// Raw document echo for embedding into checkpoints (comments none, parsed).
Json parse_json_document(const std::string& text);

// ---------------------------------------------------------------------------
// snf-model/1

Json vae_checkpoint_to_json(const VaeModel& m, const Json& config_echo);
VaeModel vae_checkpoint_from_json(const Json& j);

// ---------------------------------------------------------------------------
// snf-report/1

Json check_report_to_json(const std::string& suite_name, const CheckOptions& opt,
                          const std::vector<SuiteResult>& suites);

// ---------------------------------------------------------------------------
// Files.

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Refuses to overwrite an existing path unless force is set.
void require_writable(const std::string& path, bool force);

// CSV trace: header epoch,beta,train_F,val_F,wallclock.
std::string trace_to_csv(const std::vector<TraceRow>& trace);

struct TextLocation {
  std::size_t line = 1;
  std::size_t column = 1;
};
TextLocation locate_byte(const std::string& text, std::size_t byte);

}  // namespace snf

#endif  // SNF_SERIALIZE_HPP
