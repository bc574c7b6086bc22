#include "mstate/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "mstate/error.hpp"

namespace mstate::synth {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

std::string ticker_name(std::size_t sector, int index) {
  const std::string num = std::to_string(index + 1);
  return std::string(kSectorLabels[sector]) + (num.size() < 2 ? "0" : "") + num;
}

bool is_weekend(const Date& d) {
  const std::chrono::weekday wd{std::chrono::sys_days{d}};
  return wd == std::chrono::Saturday || wd == std::chrono::Sunday;
}

}  // namespace

PlantedDataset generate_planted(int k, std::size_t n, std::vector<std::size_t> relevant, double separation,
                                double noise, std::uint64_t seed, std::size_t dim) {
  if (k < 2) throw PipelineError("synth", "generate_planted", "k must be >= 2");
  if (n < static_cast<std::size_t>(k)) throw PipelineError("synth", "generate_planted", "need n >= k");
  std::sort(relevant.begin(), relevant.end());
  relevant.erase(std::unique(relevant.begin(), relevant.end()), relevant.end());
  if (relevant.empty()) throw PipelineError("synth", "generate_planted", "relevant set is empty");
  if (relevant.back() >= dim) throw PipelineError("synth", "generate_planted", "relevant column out of range");
  if (!(separation > 0.0) || !std::isfinite(separation)) {
    throw PipelineError("synth", "generate_planted", "separation must be finite and > 0");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) {
    throw PipelineError("synth", "generate_planted", "noise must be finite and >= 0");
  }

  auto rng = make_rng(seed, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> base_dist(-0.5, 0.5);

  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::RowVectorXd base(d);
  for (Eigen::Index c = 0; c < d; ++c) base(c) = base_dist(rng);

  const auto r = static_cast<Eigen::Index>(relevant.size());
  if (k > 2 * r) {
    throw PipelineError("synth", "generate_planted",
                        "k = " + std::to_string(k) + " needs at least " + std::to_string((k + 1) / 2) +
                            " relevant columns");
  }
  Eigen::MatrixXd offsets = Eigen::MatrixXd::Zero(k, r);
  for (Eigen::Index c = 0; c < r; ++c) offsets(c % k, c) = separation;
  for (int j = static_cast<int>(r); j < k; ++j) offsets(j, j - r) = -separation;

  PlantedDataset out;
  out.k = k;
  out.seed = seed;
  out.relevant_features = relevant;
  out.centers = base.replicate(k, 1);
  for (int j = 0; j < k; ++j) {
    for (Eigen::Index c = 0; c < r; ++c) out.centers(j, static_cast<Eigen::Index>(relevant[c])) += offsets(j, c);
  }

  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = static_cast<int>(i % static_cast<std::size_t>(k));
  std::shuffle(out.labels.begin(), out.labels.end(), rng);

  out.features.resize(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index c = 0; c < d; ++c) {
      const double v = out.centers(out.labels[i], c) + noise * gauss(rng);
      out.features(row, c) = std::clamp(v, -1.0, 1.0);
    }
  }
  return out;
}

preprocess::FeatureMatrix to_feature_matrix(const PlantedDataset& data, Date start) {
  preprocess::FeatureMatrix fm;
  fm.values = data.features;
  std::chrono::sys_days day{start};
  for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
    fm.dates.emplace_back(day);
    day += std::chrono::days{1};
  }
  return fm;
}

SyntheticPriceConfig SyntheticPriceConfig::defaults() {
  SyntheticPriceConfig c;
  for (std::size_t s = 0; s < kSectorCount; ++s) {
    c.drift[s] = 2e-4;
    c.volatility[s] = 0.01 + 0.002 * static_cast<double>(s);
    c.common_weight[s] = 0.1 * static_cast<double>(s);
  }
  return c;
}

void SyntheticPriceConfig::validate() const {
  auto fail = [](const std::string& detail) { throw PipelineError("synth", "generate_prices", detail); };
  if (tickers_per_sector < 1) fail("tickers_per_sector must be >= 1");
  if (days < 2) fail("days must be >= 2");
  for (std::size_t s = 0; s < kSectorCount; ++s) {
    if (!std::isfinite(drift[s])) fail("non-finite drift");
    if (!(volatility[s] > 0.0) || !std::isfinite(volatility[s])) fail("volatility must be finite and > 0");
    if (!(common_weight[s] >= 0.0 && common_weight[s] <= 1.0)) fail("common weight outside [0, 1]");
  }
  if (!(idiosyncratic_weight >= 0.0 && idiosyncratic_weight <= 1.0)) fail("idiosyncratic weight outside [0, 1]");
  if (!(missing_probability >= 0.0 && missing_probability <= 0.05)) fail("missing probability outside [0, 0.05]");
}

ingest::PriceTable generate_prices(const SyntheticPriceConfig& config) {
  config.validate();
  const int per = config.tickers_per_sector;
  ingest::PriceTable table;
  for (std::size_t s = 0; s < kSectorCount; ++s) {
    for (int t = 0; t < per; ++t) table.tickers.push_back(ticker_name(s, t));
  }
  std::chrono::sys_days day{Date{std::chrono::year{2000}, std::chrono::January, std::chrono::day{3}}};
  while (static_cast<int>(table.dates.size()) < config.days) {
    if (!is_weekend(Date{day})) table.dates.emplace_back(day);
    day += std::chrono::days{1};
  }

  auto rng = make_rng(config.seed, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution missing(config.missing_probability);
  const auto cols = static_cast<Eigen::Index>(kSectorCount) * per;
  table.prices.resize(config.days, cols);
  Eigen::VectorXd log_price = Eigen::VectorXd::Constant(cols, std::log(100.0));
  const double own = std::sqrt(config.idiosyncratic_weight);
  const double shared = std::sqrt(1.0 - config.idiosyncratic_weight);
  for (int t = 0; t < config.days; ++t) {
    if (t > 0) {
      const double market = gauss(rng);
      for (std::size_t s = 0; s < kSectorCount; ++s) {
        const double w = config.common_weight[s];
        const double sector_shock = std::sqrt(w) * market + std::sqrt(1.0 - w) * gauss(rng);
        const double vol = config.volatility[s];
        for (int i = 0; i < per; ++i) {
          const double shock = shared * sector_shock + own * gauss(rng);
          log_price(static_cast<Eigen::Index>(s) * per + i) += config.drift[s] - 0.5 * vol * vol + vol * shock;
        }
      }
    }
    for (Eigen::Index c = 0; c < cols; ++c) table.prices(t, c) = std::exp(log_price(c));
  }
  if (config.missing_probability > 0.0) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (int t = 0; t < config.days; ++t) {
        if (missing(rng)) table.prices(t, c) = ingest::kMissing;
      }
    }
  }
  return table;
}

ingest::SectorMap sector_map(const SyntheticPriceConfig& config) {
  ingest::SectorMap map;
  for (std::size_t s = 0; s < kSectorCount; ++s) {
    for (int t = 0; t < config.tickers_per_sector; ++t) map.assignments[ticker_name(s, t)] = static_cast<Sector>(s);
  }
  return map;
}

int brute_force_assign(const Eigen::MatrixXd& centroids, const Eigen::Ref<const Eigen::VectorXd>& vector) {
  if (centroids.cols() != vector.size()) throw PipelineError("synth", "brute_force_assign", "dimension mismatch");
  if (centroids.rows() == 0) throw PipelineError("synth", "brute_force_assign", "no centroids");
  int best = 0;
  long double best_dist = 0.0L;
  for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
    long double dist = 0.0L;
    for (Eigen::Index c = 0; c < vector.size(); ++c) {
      const long double diff = static_cast<long double>(vector(c)) - static_cast<long double>(centroids(j, c));
      dist += diff * diff;
    }
    if (j == 0 || dist < best_dist) {
      best = static_cast<int>(j);
      best_dist = dist;
    }
  }
  return best;
}

}  // namespace mstate::synth
