#pragma once
// Command-line front end. run_cli is the whole program minus process setup, so
// tests can drive it with argument vectors.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddiag/drdid.hpp"
#include "ddiag/oracle.hpp"
#include "ddiag/panel.hpp"

namespace ddiag {

inline constexpr int kSchemaVersion = 1;

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitEstimation = 2;

struct RunConfig {
  std::string input;
  std::optional<PanelSchema> schema;
  std::string method = "aipw";  // twfe | ra | ipw | aipw
  CovariateSpec covariates;
  std::string comparison = "never_treated";
  int anticipation = 0;
  int bootstrap_reps = 0;
  std::uint64_t seed = 1;
  bool trim = false;
  std::string output_dir = "ddiag_out";
  std::vector<std::string> formats{"json", "csv", "svg"};
  int threads = 0;  // 0 = hardware concurrency
  bool drop_always_treated = false;
  std::optional<int> t_star;  // two-period TWFE on the pair (t_star - 1, t_star)
  std::optional<std::string> region;
  std::vector<std::string> functionals;

  // Unknown keys are errors.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  bool wants(const std::string& format) const;
};

struct OracleCheck {
  std::string fixture, check;
  double value = 0.0, tolerance = 0.0;
  bool pass = false;
};

// Closure and weight-sum checks for one DGP.
std::vector<OracleCheck> oracle_check_dgp(const oracle::DiscreteDgp& dgp);

// Resolves a fixture name (with or without .json) against the fixture
// directory, or returns the path unchanged when it exists.
std::filesystem::path resolve_fixture(const std::string& name_or_path);
std::filesystem::path default_fixture_dir();

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ddiag
