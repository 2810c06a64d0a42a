#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ror/attack.hpp"
#include "ror/defense.hpp"
#include "ror/model.hpp"

namespace ror {

// Bad user input: schema violations, out-of-range values, unknown keys.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Settings shared by every CLI command. Unknown keys are rejected.
struct RunConfig {
  double alpha = kDefaultAlpha;
  std::optional<std::size_t> m_max;
  double ber = 3e-4;
  std::size_t trials = 500;
  std::uint64_t base_seed = 0;
  std::size_t n_flips = 50;
  FailureRule failure;
  DType dtype = DType::i8;
  bool requantize = true;
  std::vector<std::size_t> layer_opt_outs;
  std::optional<double> lossless_tol;
  unsigned workers = 0;
  std::vector<double> alphas{9.0, 6.0, 3.0};
  CandidatePolicy candidate_policy;
  ToyModelSpec model;
  CalibrationSpec calibration;
  std::size_t probe_tokens = 64;
  std::uint64_t probe_seed = 2002;

  DefenseConfig defense() const;
  void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

DType parse_dtype(const std::string& s);
ScaleMode parse_scale_mode(const std::string& s);

}  // namespace ror
