#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mstate/relevance.hpp"

namespace mstate::aggregate {

enum class Method {
  kMedian,    // per-feature median relevance
  kModeMode,  // how often a feature is an instance's most relevant one
};

std::string to_string(Method method);
Method parse_method(const std::string& name);

/// Global relevance of each feature within one cluster.
struct AggregatedRelevance {
  int cluster_id = 0;
  Method method = Method::kModeMode;
  Eigen::VectorXd scores;  // median relevance or win counts
  std::size_t instance_count = 0;
};

/// Scores sorted ascending; permutation[pos] is the feature at that position.
struct RelevanceCurve {
  int cluster_id = 0;
  Method method = Method::kModeMode;
  Eigen::VectorXd sorted_scores;
  std::vector<std::size_t> permutation;
};

/// Single change point on a sorted curve. Candidate m splits positions
/// [0, m) from [m, N); everything at or right of map_index is relevant.
struct ChangePointResult {
  RelevanceCurve curve;
  std::vector<int> candidates;  // 2 .. N-2
  Eigen::VectorXd posterior;    // aligned with candidates
  int map_index = 0;
  std::vector<bool> relevant_mask;  // indexed by feature
};

/// Posterior over split positions of an arbitrary curve (see bayesian_changepoint).
struct ChangePointScan {
  std::vector<int> candidates;
  Eigen::VectorXd posterior;
  int map_index = 0;
};

inline constexpr std::size_t kMinCurveLength = 5;

/// Per-feature median over the instances of `cluster_id`; even counts use the
/// midpoint of the two central values.
AggregatedRelevance median_aggregate(const std::vector<relevance::RelevanceVector>& relevances,
                                     int cluster_id);

/// Counts, per feature, the instances of `cluster_id` whose largest signed
/// relevance sits on that feature (ties to the lowest feature index).
AggregatedRelevance mode_mode(const std::vector<relevance::RelevanceVector>& relevances, int cluster_id);

/// One aggregate per cluster 0..k-1.
std::vector<AggregatedRelevance> aggregate_all(const std::vector<relevance::RelevanceVector>& relevances,
                                               int k, Method method);

/// Stable ascending sort; equal scores keep feature-index order.
RelevanceCurve sort_curve(const AggregatedRelevance& agg);

/// Two independent least-squares lines left and right of each split m, noise
/// level marginalised with a scale-invariant prior:
///   log p(m | y) = -((N - 4) / 2) log(RSS_left(m) + RSS_right(m)) + const.
/// Splits with vanishing RSS (exact piecewise-linear data) take all the mass.
/// The maximum goes to the larger m on ties.
ChangePointScan changepoint_scan(const Eigen::VectorXd& values);

ChangePointResult bayesian_changepoint(const RelevanceCurve& curve);

/// Features (ascending index) at or right of the change point.
std::vector<std::size_t> select_relevant(const ChangePointResult& result);

/// Best feature of every cluster (highest score, ties to the lowest index).
/// A cluster whose best feature is already taken contributes its next-best
/// one instead, so the result holds one distinct feature per cluster, in
/// cluster order.
std::vector<std::size_t> top_feature_per_cluster(const std::vector<AggregatedRelevance>& aggregates);

void write_aggregates(const std::vector<AggregatedRelevance>& aggregates, const std::filesystem::path& path);
std::vector<AggregatedRelevance> load_aggregates(const std::filesystem::path& path);

void write_changepoints(const std::vector<ChangePointResult>& results, const std::filesystem::path& path);
std::vector<ChangePointResult> load_changepoints(const std::filesystem::path& path);

/// `rank,feature,score,is_relevant` rows for one curve.
void write_elbow(const ChangePointResult& result, const std::filesystem::path& path);

/// `cluster_id,<45 feature columns>` with 1 for relevant features.
void write_relevant_mask(const std::vector<ChangePointResult>& results, const std::filesystem::path& path);

/// Feature label used in files: the sector pair name for 45-dimensional data,
/// "x<i>" otherwise.
std::string feature_label(std::size_t feature, std::size_t dim);

}  // namespace mstate::aggregate
