#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace mstate::config {

struct PipelineConfig {
  std::uint64_t seed = 0;

  // paths
  std::filesystem::path prices;
  std::filesystem::path sector_map;
  std::filesystem::path out = "out";

  // ingest / preprocess
  double min_coverage = 0.995;
  int n = 13;
  int tau = 40;

  // cluster
  int k = 8;
  std::optional<std::uint64_t> kmeans_seed;  // derived from `seed` when unset
  double kmeans_tol = 1e-6;
  int kmeans_max_iter = 300;
  std::string kmeans_init = "greedy_spread";

  // explain / aggregate
  std::string beta_scope = "members";
  std::string method = "mode-mode";  // drives relevant_mask.csv

  // surrogate
  int runs = 100;
  int epochs = 100;
  int width_divisor = 1;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::string optimizer = "adam";
  int threads = 0;

  // synth
  int synth_tickers_per_sector = 5;
  int synth_days = 1000;
  double synth_missing_probability = 0.002;

  /// Throws PipelineError("config", "validate", ...) on out-of-range values.
  void validate() const;

  std::uint64_t effective_kmeans_seed() const;
};

/// Stable per-stage seed: splitmix64 of the global seed mixed with the
/// FNV-1a hash of `stage`.
std::uint64_t derive_seed(std::uint64_t global, std::string_view stage);

/// Overlays a JSON document on `base`. Unknown keys are rejected.
PipelineConfig apply_json(PipelineConfig base, const nlohmann::json& doc);
PipelineConfig load(const std::filesystem::path& path, PipelineConfig base = {});

nlohmann::json to_json(const PipelineConfig& config);
void write(const PipelineConfig& config, const std::filesystem::path& path);

}  // namespace mstate::config
