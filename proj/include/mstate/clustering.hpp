#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mstate/date.hpp"
#include "mstate/preprocess.hpp"

namespace mstate::clustering {

enum class Init {
  kGreedySpread,  // greedy k-means++ (D^2 sampling, best of several candidates)
  kUniform,       // k distinct data points drawn uniformly
};

std::string to_string(Init init);
Init parse_init(const std::string& name);

struct KMeansOptions {
  int k = 8;
  std::uint64_t seed = 0;
  int max_iter = 300;
  double tol = 1e-6;
  Init init = Init::kGreedySpread;
};

/// Fitted market states: k centroids in feature space.
struct ClusterModel {
  Eigen::MatrixXd centroids;  // k x dim
  std::uint64_t seed = 0;
  double tol = 0.0;
  int max_iter = 0;
  Init init = Init::kGreedySpread;
  double inertia = 0.0;
  int iterations_run = 0;

  int k() const { return static_cast<int>(centroids.rows()); }
  Eigen::Index dim() const { return centroids.cols(); }
};

struct Assignment {
  Date date{};
  int cluster_id = 0;
  double distance = 0.0;
};

struct KMeansResult {
  ClusterModel model;
  std::vector<int> labels;              // label of each row under the final centroids
  std::vector<double> inertia_history;  // inertia after each assignment step
  int repairs = 0;                      // empty clusters reseeded during the run
};

/// Lloyd's algorithm on the rows of `data`. Stops when no centroid moves by
/// more than tol, or after max_iter iterations.
KMeansResult fit_kmeans(const Eigen::MatrixXd& data, const KMeansOptions& options);

/// Nearest centroid by Euclidean distance; ties go to the lowest id.
Assignment assign(const ClusterModel& model, const Eigen::Ref<const Eigen::VectorXd>& vector);
Assignment assign(const ClusterModel& model, const preprocess::FeatureVector& vector);
std::vector<Assignment> assign_all(const ClusterModel& model, const preprocess::FeatureMatrix& features);

/// Reseeds every centroid without members to the point farthest from its
/// current centroid (taken only from clusters that keep at least one member),
/// moving that point's label. `sq_dist` holds each point's squared distance to
/// its labelled centroid and is updated. Returns the number of reseeded centroids.
int repair_empty_clusters(const Eigen::MatrixXd& data, Eigen::MatrixXd& centroids,
                          std::vector<int>& labels, std::vector<double>& sq_dist);

void write_model(const ClusterModel& model, const std::filesystem::path& path);
ClusterModel load_model(const std::filesystem::path& path);

void write_assignments(const std::vector<Assignment>& assignments, const std::filesystem::path& path);
std::vector<Assignment> load_assignments(const std::filesystem::path& path);

}  // namespace mstate::clustering
