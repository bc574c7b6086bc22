#include <doctest.h>

#include <set>

#include "mstate/error.hpp"
#include "mstate/synth.hpp"
#include "support.hpp"

using namespace mstate;
using namespace mstate::synth;

namespace {

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd x = a.array() - a.mean();
  const Eigen::ArrayXd y = b.array() - b.mean();
  return (x * y).sum() / std::sqrt(x.square().sum() * y.square().sum());
}

Eigen::VectorXd log_returns(const ingest::PriceTable& t, Eigen::Index col) {
  const Eigen::Index n = t.prices.rows();
  return (t.prices.col(col).tail(n - 1).array() / t.prices.col(col).head(n - 1).array()).log().matrix();
}

}  // namespace

TEST_CASE("planted datasets are reproducible and well formed") {
  const auto a = generate_planted(4, 200, {30, 2, 17, 9}, 0.3, 0.05, 5);
  const auto b = generate_planted(4, 200, {30, 2, 17, 9}, 0.3, 0.05, 5);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  CHECK(a.relevant_features == std::vector<std::size_t>{2, 9, 17, 30});
  CHECK(a.features.rows() == 200);
  CHECK(a.features.cols() == 45);
  CHECK(a.features.cwiseAbs().maxCoeff() <= 1.0);
  std::vector<int> counts(4, 0);
  for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
  CHECK(counts == std::vector<int>{50, 50, 50, 50});
  CHECK(generate_planted(4, 200, {30, 2, 17, 9}, 0.3, 0.05, 6).features != a.features);
}

TEST_CASE("centres differ only on relevant columns") {
  const auto d = generate_planted(5, 100, {1, 4, 8}, 0.2, 0.0, 3);
  const std::set<std::size_t> relevant(d.relevant_features.begin(), d.relevant_features.end());
  for (Eigen::Index c = 0; c < 45; ++c) {
    const auto col = d.centers.col(c);
    const bool varies = col.maxCoeff() != col.minCoeff();
    CHECK(varies == (relevant.count(static_cast<std::size_t>(c)) == 1));
  }
  // distinct centres
  for (int i = 0; i < 5; ++i) {
    for (int j = i + 1; j < 5; ++j) CHECK(d.centers.row(i) != d.centers.row(j));
  }
  // noiseless instances sit on their centres
  for (Eigen::Index r = 0; r < d.features.rows(); ++r) {
    CHECK(d.features.row(r) == d.centers.row(d.labels[static_cast<std::size_t>(r)]));
  }
}

TEST_CASE("two clusters on a single relevant column") {
  const auto d = generate_planted(2, 50, {0}, 0.4, 0.0, 1);
  CHECK(d.centers(0, 0) - d.centers(1, 0) == doctest::Approx(0.8));
  CHECK(d.centers.rightCols(44).row(0) == d.centers.rightCols(44).row(1));
}

TEST_CASE("planted generator validation") {
  CHECK_THROWS_AS(generate_planted(1, 10, {0}, 0.2, 0.1, 1), PipelineError);
  CHECK_THROWS_AS(generate_planted(3, 2, {0, 1}, 0.2, 0.1, 1), PipelineError);
  CHECK_THROWS_AS(generate_planted(3, 10, {0}, 0.2, 0.1, 1), PipelineError);
  CHECK_THROWS_AS(generate_planted(2, 10, {}, 0.2, 0.1, 1), PipelineError);
  CHECK_THROWS_AS(generate_planted(2, 10, {45}, 0.2, 0.1, 1), PipelineError);
  CHECK_THROWS_AS(generate_planted(2, 10, {0}, 0.0, 0.1, 1), PipelineError);
  CHECK_THROWS_AS(generate_planted(2, 10, {0}, 0.2, -0.1, 1), PipelineError);
}

TEST_CASE("planted rows become dated feature vectors") {
  const auto d = generate_planted(2, 5, {3}, 0.2, 0.1, 2);
  const auto fm = to_feature_matrix(d);
  CHECK(fm.size() == 5);
  CHECK(format_date(fm.dates[0]) == "2000-01-03");
  CHECK(format_date(fm.dates[4]) == "2000-01-07");
  CHECK(fm.values == d.features);
}

TEST_CASE("synthetic prices") {
  auto cfg = SyntheticPriceConfig::defaults();
  cfg.days = 120;
  cfg.tickers_per_sector = 2;
  cfg.seed = 4;
  const auto t = generate_prices(cfg);
  CHECK(t.tickers.size() == 20);
  CHECK(t.tickers.front() == "E01");
  CHECK(t.dates.size() == 120);
  CHECK(t.missing_count() == 0);
  CHECK((t.prices.array() > 0.0).all());
  for (std::size_t i = 1; i < t.dates.size(); ++i) {
    const auto wd = std::chrono::weekday{std::chrono::sys_days{t.dates[i]}};
    CHECK(wd != std::chrono::Saturday);
    CHECK(wd != std::chrono::Sunday);
  }
  const auto again = generate_prices(cfg);
  CHECK(again.prices == t.prices);

  const auto map = sector_map(cfg);
  CHECK(map.assignments.size() == 20);
  CHECK(map.assignments.at("IT01") == Sector::IT);

  cfg.missing_probability = 0.05;
  const auto holes = generate_prices(cfg);
  CHECK(holes.missing_count() > 0);
  cfg.missing_probability = 0.5;
  CHECK_THROWS_AS(cfg.validate(), PipelineError);
}

TEST_CASE("market factor weight controls sector correlation") {
  auto cfg = SyntheticPriceConfig::defaults();
  cfg.days = 800;
  cfg.tickers_per_sector = 1;
  cfg.idiosyncratic_weight = 0.0;
  cfg.seed = 9;
  cfg.common_weight.fill(1.0);
  const auto tied = generate_prices(cfg);
  CHECK(correlation(log_returns(tied, 0), log_returns(tied, 5)) > 0.999);

  cfg.common_weight.fill(0.0);
  const auto loose = generate_prices(cfg);
  CHECK(std::abs(correlation(log_returns(loose, 0), log_returns(loose, 5))) < 0.15);
}

TEST_CASE("exhaustive assignment") {
  Eigen::MatrixXd c(3, 2);
  c << 0, 0, 2, 0, -2, 0;
  CHECK(brute_force_assign(c, Eigen::Vector2d(1.5, 0.1)) == 1);
  CHECK(brute_force_assign(c, Eigen::Vector2d(1.0, 0.0)) == 0);
  CHECK(brute_force_assign(c, Eigen::Vector2d(-1.0, 0.0)) == 0);
  CHECK_THROWS_AS(brute_force_assign(c, Eigen::Vector3d(0, 0, 0)), PipelineError);
}
