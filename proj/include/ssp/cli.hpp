#ifndef SSP_CLI_HPP
#define SSP_CLI_HPP

#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssp/geo.hpp"
#include "ssp/model.hpp"
#include "ssp/synth.hpp"
#include "ssp/trainer.hpp"

namespace ssp {

/// A required upstream file is absent; exits with its own status code so
/// pipeline drivers can tell "run the earlier stage" from real failures.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::string& what, const std::string& path)
      : std::runtime_error("missing artifact: " + what + " (" + path + ")") {}
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs, from one JSON file plus flag overrides. The full
/// resolved config is echoed into every artifact header.
struct RunConfig {
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  DepthGrid depth_grid{5.0, 1980.0, 1.0};
  GridGeometry region{5.5, 150.5, 1.0, 1.0, 12, 12};
  std::vector<TimeKey> months;        // synthesised months; defaults to train+test
  std::vector<TimeKey> train_months;
  std::vector<TimeKey> test_months;
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;                  // geometry/grid/months mirrored from above
  std::string basis_scope = "cell";
  std::vector<double> eval_depths = {200.0, 300.0, 500.0};

  nlohmann::json echo() const;        // one-line JSON of the resolved config
  void finalize();                    // mirrors shared fields, validates
};

RunConfig run_config_from_json(const nlohmann::json& j);

/// exit codes: 0 ok, 1 stage failure, 2 config error, 3 missing artifact
int run_cli(const std::vector<std::string>& args);

}  // namespace ssp

#endif  // SSP_CLI_HPP
