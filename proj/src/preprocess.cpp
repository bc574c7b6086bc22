#include "mstate/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "dated_csv.hpp"
#include "mstate/error.hpp"

namespace mstate::preprocess {

namespace {

// A window counts as constant when its variance is below this fraction of its
// mean square; rounding leaves ~1e-32 on genuinely constant data.
constexpr double kZeroVarianceRel = 1e-20;

bool zero_variance(double variance, double mean_square) {
  return variance <= kZeroVarianceRel * mean_square;
}

}  // namespace

FeatureVector FeatureMatrix::row(std::size_t i) const {
  return {dates.at(i), values.row(static_cast<Eigen::Index>(i)).transpose()};
}

NormalizedReturnTable local_normalize(const ingest::ReturnTable& returns, int n) {
  if (n < 2) throw PipelineError("preprocess", "local_normalize", "window n must be >= 2");
  const Eigen::Index rows = returns.returns.rows();
  if (rows < n) {
    throw PipelineError("preprocess", "local_normalize",
                        "need at least n=" + std::to_string(n) + " return rows, got " +
                            std::to_string(rows));
  }
  const Eigen::Index cols = returns.returns.cols();
  NormalizedReturnTable out;
  out.window = n;
  out.values.resize(rows - n + 1, cols);
  for (Eigen::Index t = n - 1; t < rows; ++t) {
    const auto window = returns.returns.middleRows(t - n + 1, n);
    for (Eigen::Index s = 0; s < cols; ++s) {
      const auto x = window.col(s).array();
      const double mean = x.mean();
      const double variance = (x - mean).square().mean();
      if (zero_variance(variance, x.square().mean())) {
        throw PipelineError("preprocess", "local_normalize",
                            "zero variance window ending " +
                                format_date(returns.dates[static_cast<std::size_t>(t)]) +
                                " for sector " + std::string(kSectorLabels.at(static_cast<std::size_t>(s))));
      }
      out.values(t - n + 1, s) = (returns.returns(t, s) - mean) / std::sqrt(variance);
    }
    out.dates.push_back(returns.dates[static_cast<std::size_t>(t)]);
  }
  return out;
}

std::vector<CorrelationMatrix> rolling_correlation(const NormalizedReturnTable& norm, int tau) {
  if (tau < 3) throw PipelineError("preprocess", "rolling_correlation", "window tau must be >= 3");
  const Eigen::Index rows = norm.values.rows();
  if (norm.values.cols() != static_cast<Eigen::Index>(kSectorCount)) {
    throw PipelineError("preprocess", "rolling_correlation", "expected 10 sector columns");
  }
  if (rows < tau) {
    throw PipelineError("preprocess", "rolling_correlation",
                        "need at least tau=" + std::to_string(tau) + " rows, got " +
                            std::to_string(rows));
  }
  std::vector<CorrelationMatrix> out;
  out.reserve(static_cast<std::size_t>(rows - tau + 1));
  for (Eigen::Index t = tau - 1; t < rows; ++t) {
    const auto window = norm.values.middleRows(t - tau + 1, tau);
    const Eigen::RowVectorXd mean = window.colwise().mean();
    const Eigen::MatrixXd centered = window.rowwise() - mean;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(tau);
    const Eigen::ArrayXd mean_square = window.array().square().colwise().mean().transpose();

    Eigen::Array<double, kSectorCount, 1> sd;
    for (Eigen::Index s = 0; s < sd.size(); ++s) {
      if (zero_variance(cov(s, s), mean_square(s))) {
        throw PipelineError("preprocess", "rolling_correlation",
                            "zero variance window ending " +
                                format_date(norm.dates[static_cast<std::size_t>(t)]) +
                                " for sector " + std::string(kSectorLabels.at(static_cast<std::size_t>(s))));
      }
      sd(s) = std::sqrt(cov(s, s));
    }

    CorrelationMatrix m;
    m.date = norm.dates[static_cast<std::size_t>(t)];
    m.window = tau;
    for (Eigen::Index i = 0; i < m.entries.rows(); ++i) {
      m.entries(i, i) = 1.0;
      for (Eigen::Index j = i + 1; j < m.entries.cols(); ++j) {
        const double c = std::clamp(cov(i, j) / (sd(i) * sd(j)), -1.0, 1.0);
        m.entries(i, j) = c;
        m.entries(j, i) = c;
      }
    }
    out.push_back(m);
  }
  return out;
}

FeatureVector flatten(const CorrelationMatrix& matrix) {
  FeatureVector v;
  v.date = matrix.date;
  v.values.resize(static_cast<Eigen::Index>(kFeatureCount));
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    const auto [i, j] = feature_pair(f);
    v.values(static_cast<Eigen::Index>(f)) =
        matrix.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return v;
}

CorrelationMatrix unflatten(const FeatureVector& vector) {
  if (vector.values.size() != static_cast<Eigen::Index>(kFeatureCount)) {
    throw PipelineError("preprocess", "unflatten", "feature vector must have 45 entries");
  }
  CorrelationMatrix m;
  m.date = vector.date;
  m.entries.setIdentity();
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    const auto [i, j] = feature_pair(f);
    const double c = vector.values(static_cast<Eigen::Index>(f));
    m.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c;
    m.entries(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = c;
  }
  return m;
}

FeatureMatrix stack(const std::vector<FeatureVector>& vectors) {
  FeatureMatrix out;
  out.values.resize(static_cast<Eigen::Index>(vectors.size()), static_cast<Eigen::Index>(kFeatureCount));
  for (std::size_t r = 0; r < vectors.size(); ++r) {
    out.dates.push_back(vectors[r].date);
    out.values.row(static_cast<Eigen::Index>(r)) = vectors[r].values.transpose();
  }
  return out;
}

std::string check_invariants(const CorrelationMatrix& matrix, double eig_tol) {
  const auto& c = matrix.entries;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    if (c(i, i) != 1.0) return "diagonal entry " + std::to_string(i) + " is not exactly 1";
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      if (c(i, j) != c(j, i)) return "not symmetric";
      if (!(c(i, j) >= -1.0 && c(i, j) <= 1.0)) return "entry outside [-1, 1]";
    }
  }
  Eigen::SelfAdjointEigenSolver<SectorMatrix> solver(c, Eigen::EigenvaluesOnly);
  const double min_eig = solver.eigenvalues().minCoeff();
  if (min_eig < -eig_tol) return "minimum eigenvalue " + std::to_string(min_eig) + " below tolerance";
  return {};
}

std::vector<std::string> feature_columns() {
  std::vector<std::string> cols;
  for (std::size_t f = 0; f < kFeatureCount; ++f) cols.push_back(feature_name(f));
  return cols;
}

void write_features(const FeatureMatrix& features, const std::filesystem::path& path) {
  detail::write_dated_matrix(path, feature_columns(), features.dates, features.values);
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  detail::DatedMatrix m;
  try {
    m = detail::read_dated_matrix(path, feature_columns());
  } catch (const std::exception& e) {
    throw PipelineError("preprocess", "load_features", e.what());
  }
  if (!m.values.allFinite()) throw PipelineError("preprocess", "load_features", "missing feature values");
  return {std::move(m.dates), std::move(m.values)};
}

}  // namespace mstate::preprocess
