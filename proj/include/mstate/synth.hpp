#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mstate/date.hpp"
#include "mstate/ingest.hpp"
#include "mstate/preprocess.hpp"
#include "mstate/sectors.hpp"

namespace mstate::synth {

/// Labelled blobs in feature space whose centres differ only on the
/// relevant columns.
struct PlantedDataset {
  Eigen::MatrixXd features;  // N x dim
  std::vector<int> labels;
  std::vector<std::size_t> relevant_features;  // ascending
  Eigen::MatrixXd centers;                     // k x dim
  std::uint64_t seed = 0;
  int k = 0;
};

/// Each relevant column is the signature of one cluster: column c moves the
/// centre of cluster c mod k by +separation, and clusters j >= |relevant|
/// take -separation on column j - |relevant| (so k <= 2 |relevant|). Each
/// column has one global base value in [-0.5, 0.5]; every instance adds
/// isotropic N(0, noise^2) to all columns. Values are clipped to [-1, 1].
/// Labels are balanced (i mod k) and shuffled, so n >= k puts every label in use.
PlantedDataset generate_planted(int k, std::size_t n, std::vector<std::size_t> relevant, double separation,
                                double noise, std::uint64_t seed, std::size_t dim = kFeatureCount);

/// Rows of a planted dataset as consecutive daily feature vectors from `start`.
preprocess::FeatureMatrix to_feature_matrix(const PlantedDataset& data,
                                            Date start = Date{std::chrono::year{2000}, std::chrono::January,
                                                              std::chrono::day{3}});

struct SyntheticPriceConfig {
  int tickers_per_sector = 5;
  int days = 1000;
  std::array<double, kSectorCount> drift{};  // daily log drift
  std::array<double, kSectorCount> volatility{};
  std::array<double, kSectorCount> common_weight{};  // share of the sector shock from the market factor, [0, 1]
  double idiosyncratic_weight = 0.1;                 // share of a ticker's shock that is its own, [0, 1]
  double missing_probability = 0.0;                  // [0, 0.05]
  std::uint64_t seed = 0;

  /// Drift 2e-4, volatility 0.01 to 0.028, common weights 0 to 0.9.
  static SyntheticPriceConfig defaults();
  void validate() const;
};

/// Weekday dates starting 2000-01-03, tickers named <sector><nn> (e.g. "IT03").
/// Starting prices 100, geometric random walks with
///   shock = sqrt(1-iota) * (sqrt(w_s) g_t + sqrt(1-w_s) e_{s,t}) + sqrt(iota) eta_{i,t}.
ingest::PriceTable generate_prices(const SyntheticPriceConfig& config);
ingest::SectorMap sector_map(const SyntheticPriceConfig& config);

/// Exhaustive nearest-centroid search in extended precision; ties to the lowest id.
int brute_force_assign(const Eigen::MatrixXd& centroids, const Eigen::Ref<const Eigen::VectorXd>& vector);

}  // namespace mstate::synth
