#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mstate::surrogate {

enum class Activation { kSelu, kRelu, kLeaky, kSoftmax };
enum class LayerKind { kDense, kDropout };

std::string to_string(Activation activation);
Activation parse_activation(const std::string& name);

/// SELU constants.
inline constexpr double kSeluAlpha = 1.67326324;
inline constexpr double kSeluScale = 1.05070098;

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  int units = 0;                          // dense only
  Activation activation = Activation::kRelu;
  double parameter = 0.0;                 // leaky slope or dropout rate
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  int input_dim = 8;
  int output_dim = 8;

  /// dense 256 selu, dense 128 relu, dense 128 relu, dense 1024 leaky(0.05),
  /// dense 128 leaky(0.01), dropout 0.3, dense output_dim softmax.
  static NetworkSpec table1(int input_dim = 8, int output_dim = 8);

  /// Hidden widths divided by `divisor` (at least one unit each).
  NetworkSpec scaled(int divisor) const;

  /// Throws PipelineError unless the final layer is a softmax dense layer of
  /// output_dim units and every dropout rate lies in (0, 1).
  void validate() const;
};

struct DenseParams {
  Eigen::MatrixXd weights;  // units x inputs
  Eigen::VectorXd bias;
};

struct TrainedNetwork {
  NetworkSpec spec;
  std::vector<DenseParams> dense;  // one per dense layer, in order
  std::uint64_t seed = 0;
  int epochs_trained = 0;

  std::size_t parameter_count() const;
};

double activation(Activation kind, double parameter, double z);
double activation_derivative(Activation kind, double parameter, double z);

/// Max-shifted softmax.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Fan-in scaled uniform weights U(-sqrt(3/fan_in), sqrt(3/fan_in)), zero biases.
TrainedNetwork initialize(const NetworkSpec& spec, std::uint64_t seed);

/// Class probabilities for one input. Dropout is applied (with inverted
/// scaling) only when training_mode is set, drawing masks from `rng`.
Eigen::VectorXd forward(const TrainedNetwork& net, const Eigen::VectorXd& x, bool training_mode,
                        std::mt19937_64& rng);

/// Inference-mode probabilities for the columns of `inputs` (input_dim x n).
Eigen::MatrixXd predict_proba(const TrainedNetwork& net, const Eigen::MatrixXd& inputs);

/// Mean categorical cross-entropy over the columns of `inputs` and its
/// gradient with respect to every dense parameter, dropout off.
struct LossGradient {
  double loss = 0.0;
  std::vector<DenseParams> grads;
};
LossGradient loss_and_gradient(const TrainedNetwork& net, const Eigen::MatrixXd& inputs,
                               const std::vector<int>& labels);

enum class Optimizer { kAdam, kSgd };

struct TrainConfig {
  int epochs = 100;
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;      // 0 = full batch
  bool track_loss = false;  // record full training-split loss before training and after each epoch
};

struct TrainResult {
  TrainedNetwork network;
  double test_accuracy = 0.0;
  double validation_accuracy = 0.0;
  std::vector<double> train_loss;  // filled when track_loss is set
};

struct Split {
  std::vector<std::size_t> train, test, validation;
};

/// Seeded random partition into thirds (train gets n/3, test n/3, validation the rest).
Split split_thirds(std::size_t n, std::uint64_t seed);

/// Trains on the training third and reports accuracy on the test third.
/// `features` is N x input_dim, labels lie in [0, output_dim).
TrainResult train(const NetworkSpec& spec, const Eigen::MatrixXd& features, const std::vector<int>& labels,
                  std::uint64_t seed, const TrainConfig& config = {});

/// Fraction of argmax predictions equal to the labels.
double accuracy(const TrainedNetwork& net, const Eigen::MatrixXd& features, const std::vector<int>& labels);

/// Largest relative error |a - n| / max(|a|, |n|, 1e-6) between analytic
/// gradients and central differences over every parameter of a network
/// initialised from `seed`. Dropout layers are inactive.
double gradient_check(const NetworkSpec& spec, const Eigen::VectorXd& x, int label, std::uint64_t seed,
                      double step = 1e-5);
double gradient_check(const TrainedNetwork& net, const Eigen::VectorXd& x, int label, double step = 1e-5);

struct AccuracyReport {
  std::string method;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  std::vector<std::vector<std::size_t>> selections;  // feature columns per run
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::optional<TrainedNetwork> first_network;
};

/// Mean and population standard deviation over the accuracies.
AccuracyReport make_report(std::string method, std::vector<std::uint64_t> seeds, std::vector<double> accuracies);

struct ComparisonConfig {
  int runs = 100;
  std::uint64_t base_seed = 0;       // run r trains with base_seed + r
  std::uint64_t selection_seed = 0;  // drives the random column draws
  NetworkSpec spec = NetworkSpec::table1();
  TrainConfig train;
  int threads = 0;  // 0 = hardware concurrency
};

/// Trains `runs` networks on (a) the mode-mode columns, (b) the median columns
/// and (c) a fresh uniform draw from the leftover pool (all columns minus the
/// union of (a) and (b)) per run. Returns reports in that order.
std::vector<AccuracyReport> compare_selections(const Eigen::MatrixXd& features_full, const std::vector<int>& labels,
                                               const std::vector<std::size_t>& mode_mode_columns,
                                               const std::vector<std::size_t>& median_columns,
                                               const ComparisonConfig& config);

/// Column subset of `features` in the given order.
Eigen::MatrixXd select_columns(const Eigen::MatrixXd& features, const std::vector<std::size_t>& columns);

void write_report_csv(const std::vector<AccuracyReport>& reports, const std::filesystem::path& path);
std::vector<AccuracyReport> load_report_csv(const std::filesystem::path& path);
void write_summary_json(const std::vector<AccuracyReport>& reports, const std::filesystem::path& path);

/// Gaussian kernel density of each report's accuracies on a shared grid
/// (`method,accuracy,density`), Silverman bandwidth.
void write_density_csv(const std::vector<AccuracyReport>& reports, const std::filesystem::path& path,
                       int grid_points = 200);

void write_network(const TrainedNetwork& net, const std::filesystem::path& path);
TrainedNetwork load_network(const std::filesystem::path& path);

}  // namespace mstate::surrogate
