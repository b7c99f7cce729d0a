#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "efficomm/pipeline.hpp"
#include "efficomm/scenario.hpp"

namespace efficomm {

/// Every knob of a run. One master seed drives the scene generator, the
/// training-mode gate and the random weights.
struct CliConfig {
  std::uint64_t seed = 0;
  std::int64_t frames = 10;
  ScenarioConfig scenario;
  PipelineConfig pipeline;
  AgrArchitecture agr_arch;
  MoeArchitecture moe_arch;
  std::filesystem::path agr_weights;               // empty: random from the seed
  std::vector<std::filesystem::path> moe_weights;  // one per scale, or empty
  std::filesystem::path output_dir;
  bool dump_payloads = false;
  bool trace = true;

  void set_seed(std::uint64_t s);

  /// Throws ConfigError naming the first offending field.
  void validate() const;

  /// All settings as sorted INI text; stable across reruns.
  std::string canonical_text() const;

  /// Random weights from the seed unless weight files are configured.
  ModelWeights load_weights() const;
};

/// Parses INI text. Relative weight and output paths resolve against `base_dir`.
/// Unknown sections or keys, duplicates and malformed values are ConfigErrors.
CliConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
CliConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the canonical config text and the serialized weights, as hex.
std::string run_fingerprint(const CliConfig& cfg, const ModelWeights& weights);

std::string_view to_string(GatingMode mode);
std::string_view to_string(StMode mode);

}  // namespace efficomm
