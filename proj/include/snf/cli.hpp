#ifndef SNF_CLI_HPP
#define SNF_CLI_HPP

#include <cstdint>
#include <iosfwd>
#include <string>

#include "snf/scalar.hpp"

// Command front end. Exit codes: 0 ok, 1 property failure, 2 config error,
// 3 divergence. All commands are deterministic given (config, seed) and
// refuse to overwrite existing outputs unless forced.

namespace snf {

struct CliOptions {
  std::string command;  // check | fit-target | train-vae | params
  std::string config_path;
  std::string out_dir;
  std::string suite = "all";
  std::uint64_t seed = 0;
  bool seed_set = false;
  Index dims = 8;
  Index importance_samples = 0;  // 0: use the config value
  bool force = false;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitPropertyFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDivergence = 3;

int cmd_check(const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_fit_target(const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_train_vae(const CliOptions& opt, std::ostream& out, std::ostream& err);
int cmd_params(const CliOptions& opt, std::ostream& out, std::ostream& err);

// Dispatch plus error-to-exit-code mapping.
int run_cli(const CliOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace snf

#endif  // SNF_CLI_HPP
