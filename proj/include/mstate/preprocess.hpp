#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mstate/date.hpp"
#include "mstate/ingest.hpp"
#include "mstate/sectors.hpp"

namespace mstate::preprocess {

/// Returns standardised by their trailing n-day mean and (population)
/// standard deviation. Row t is the return on dates[t].
struct NormalizedReturnTable {
  std::vector<Date> dates;
  Eigen::MatrixXd values;  // rows x kSectorCount
  int window = 0;
};

using SectorMatrix = Eigen::Matrix<double, kSectorCount, kSectorCount>;

/// Pearson correlations of the tau normalised returns ending on `date`.
struct CorrelationMatrix {
  Date date;
  SectorMatrix entries;
  int window = 0;
};

/// Upper triangle of a correlation matrix in row-major order, see feature_pair().
struct FeatureVector {
  Date date;
  Eigen::VectorXd values;  // kFeatureCount entries
};

/// Row-stacked feature vectors; the unit the downstream stages work on.
struct FeatureMatrix {
  std::vector<Date> dates;
  Eigen::MatrixXd values;  // N x kFeatureCount

  std::size_t size() const { return dates.size(); }
  FeatureVector row(std::size_t i) const;
};

inline constexpr int kDefaultNormalizationWindow = 13;
inline constexpr int kDefaultCorrelationWindow = 40;

/// r_t = (R_t - <R>_n) / sqrt(<R^2>_n - <R>_n^2) over the trailing window
/// {t-n+1, ..., t}; the first n-1 rows are dropped. Throws on a window with
/// zero variance, naming the date and sector.
NormalizedReturnTable local_normalize(const ingest::ReturnTable& returns, int n);

/// One matrix per trailing window of tau rows, stride one day.
std::vector<CorrelationMatrix> rolling_correlation(const NormalizedReturnTable& norm, int tau);

FeatureVector flatten(const CorrelationMatrix& matrix);

/// Inverse of flatten with a unit diagonal.
CorrelationMatrix unflatten(const FeatureVector& vector);

FeatureMatrix stack(const std::vector<FeatureVector>& vectors);

/// Empty string when every invariant holds (exact symmetry, exact unit
/// diagonal, entries in [-1, 1], minimum eigenvalue >= -eig_tol); otherwise a
/// description of the first violation.
std::string check_invariants(const CorrelationMatrix& matrix, double eig_tol = 1e-8);

std::vector<std::string> feature_columns();
void write_features(const FeatureMatrix& features, const std::filesystem::path& path);
FeatureMatrix load_features(const std::filesystem::path& path);

}  // namespace mstate::preprocess
