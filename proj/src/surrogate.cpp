#include "mstate/surrogate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include <json.hpp>

#include "mstate/csv.hpp"
#include "mstate/error.hpp"

namespace mstate::surrogate {

namespace {

using json = nlohmann::json;

// Independent random streams per purpose, all derived from one seed.
enum class Stream : std::uint64_t { kInit = 1, kSplit = 2, kShuffle = 3, kDropout = 4 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input of each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of dense layers (empty for dropout)
  std::vector<Eigen::MatrixXd> masks;   // dropout masks (empty otherwise)
};

Eigen::MatrixXd column_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) out.col(c) = softmax(logits.col(c));
  return out;
}

// Returns the final-layer logits; `cache` (optional) receives what backprop needs.
Eigen::MatrixXd run_forward(const TrainedNetwork& net, const Eigen::MatrixXd& inputs, bool training,
                            std::mt19937_64* rng, ForwardCache* cache) {
  Eigen::MatrixXd a = inputs;
  std::size_t dense_index = 0;
  const auto& layers = net.spec.layers;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& layer = layers[li];
    if (cache) cache->inputs.push_back(a);
    if (layer.kind == LayerKind::kDropout) {
      Eigen::MatrixXd mask;
      if (training) {
        const double keep = 1.0 - layer.parameter;
        std::bernoulli_distribution draw(keep);
        mask.resize(a.rows(), a.cols());
        for (Eigen::Index c = 0; c < mask.cols(); ++c) {
          for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = draw(*rng) ? 1.0 / keep : 0.0;
        }
        a = a.cwiseProduct(mask);
      }
      if (cache) {
        cache->pre.emplace_back();
        cache->masks.push_back(std::move(mask));
      }
      continue;
    }
    const DenseParams& p = net.dense[dense_index++];
    Eigen::MatrixXd z = p.weights * a;
    z.colwise() += p.bias;
    if (!z.allFinite()) {
      throw PipelineError("surrogate", "forward", "non-finite value in layer " + std::to_string(li));
    }
    if (layer.activation == Activation::kSoftmax) {
      // Final layer: return logits; softmax is applied by the caller.
      if (cache) {
        cache->pre.push_back(z);
        cache->masks.emplace_back();
      }
      return z;
    }
    a = z.unaryExpr([&](double v) { return activation(layer.activation, layer.parameter, v); });
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->masks.emplace_back();
    }
  }
  throw PipelineError("surrogate", "forward", "network has no softmax output layer");
}

// Mean cross-entropy of the logits' columns against the labels.
double cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double m = logits.col(c).maxCoeff();
    const double log_sum = m + std::log((logits.col(c).array() - m).exp().sum());
    total += log_sum - logits(labels[static_cast<std::size_t>(c)], c);
  }
  return total / static_cast<double>(logits.cols());
}

// Gradients of mean cross-entropy; `probs` are the softmax outputs of the cached pass.
std::vector<DenseParams> backward(const TrainedNetwork& net, const ForwardCache& cache, const Eigen::MatrixXd& probs,
                                  const std::vector<int>& labels) {
  const auto batch = static_cast<double>(probs.cols());
  Eigen::MatrixXd grad = probs;
  for (Eigen::Index c = 0; c < grad.cols(); ++c) grad(labels[static_cast<std::size_t>(c)], c) -= 1.0;
  grad /= batch;  // d loss / d logits

  std::vector<DenseParams> grads(net.dense.size());
  std::size_t dense_index = net.dense.size();
  const auto& layers = net.spec.layers;
  bool is_output = true;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const LayerSpec& layer = layers[li];
    if (layer.kind == LayerKind::kDropout) {
      if (cache.masks[li].size() > 0) grad = grad.cwiseProduct(cache.masks[li]);
      continue;
    }
    --dense_index;
    if (!is_output) {
      const Eigen::MatrixXd& z = cache.pre[li];
      grad = grad.cwiseProduct(
          z.unaryExpr([&](double v) { return activation_derivative(layer.activation, layer.parameter, v); }));
    }
    is_output = false;
    const DenseParams& p = net.dense[dense_index];
    grads[dense_index].weights = grad * cache.inputs[li].transpose();
    grads[dense_index].bias = grad.rowwise().sum();
    if (dense_index > 0) grad = p.weights.transpose() * grad;
  }
  return grads;
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& features, const std::vector<std::size_t>& rows,
                               std::size_t begin, std::size_t end) {
  Eigen::MatrixXd out(features.cols(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i) {
    out.col(static_cast<Eigen::Index>(i - begin)) = features.row(static_cast<Eigen::Index>(rows[i])).transpose();
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<std::size_t>& rows,
                               std::size_t begin, std::size_t end) {
  std::vector<int> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(labels[rows[i]]);
  return out;
}

double accuracy_on(const TrainedNetwork& net, const Eigen::MatrixXd& features, const std::vector<int>& labels,
                   const std::vector<std::size_t>& rows) {
  if (rows.empty()) return 0.0;
  const Eigen::MatrixXd logits = run_forward(net, gather_columns(features, rows, 0, rows.size()), false, nullptr, nullptr);
  std::size_t hits = 0;
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < logits.rows(); ++r) {
      if (logits(r, c) > logits(best, c)) best = r;
    }
    hits += best == labels[rows[static_cast<std::size_t>(c)]] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

json spec_to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    json j;
    j["kind"] = l.kind == LayerKind::kDense ? "dense" : "dropout";
    if (l.kind == LayerKind::kDense) {
      j["units"] = l.units;
      j["activation"] = to_string(l.activation);
    }
    j["parameter"] = l.parameter;
    layers.push_back(j);
  }
  return {{"input_dim", spec.input_dim}, {"output_dim", spec.output_dim}, {"layers", layers}};
}

NetworkSpec spec_from_json(const json& doc) {
  NetworkSpec spec;
  spec.input_dim = doc.at("input_dim").get<int>();
  spec.output_dim = doc.at("output_dim").get<int>();
  for (const auto& j : doc.at("layers")) {
    LayerSpec l;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "dense") {
      l.kind = LayerKind::kDense;
      l.units = j.at("units").get<int>();
      l.activation = parse_activation(j.at("activation").get<std::string>());
    } else if (kind == "dropout") {
      l.kind = LayerKind::kDropout;
    } else {
      throw PipelineError("surrogate", "load_network", "unknown layer kind '" + kind + "'");
    }
    l.parameter = j.value("parameter", 0.0);
    spec.layers.push_back(l);
  }
  spec.validate();
  return spec;
}

}  // namespace

std::string to_string(Activation activation) {
  switch (activation) {
    case Activation::kSelu: return "selu";
    case Activation::kRelu: return "relu";
    case Activation::kLeaky: return "leaky";
    case Activation::kSoftmax: return "softmax";
  }
  return "unknown";
}

Activation parse_activation(const std::string& name) {
  if (name == "selu") return Activation::kSelu;
  if (name == "relu") return Activation::kRelu;
  if (name == "leaky") return Activation::kLeaky;
  if (name == "softmax") return Activation::kSoftmax;
  throw PipelineError("surrogate", "parse_activation", "unknown activation '" + name + "'");
}

NetworkSpec NetworkSpec::table1(int input_dim, int output_dim) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.output_dim = output_dim;
  spec.layers = {
      {LayerKind::kDense, 256, Activation::kSelu, 0.0},
      {LayerKind::kDense, 128, Activation::kRelu, 0.0},
      {LayerKind::kDense, 128, Activation::kRelu, 0.0},
      {LayerKind::kDense, 1024, Activation::kLeaky, 0.05},
      {LayerKind::kDense, 128, Activation::kLeaky, 0.01},
      {LayerKind::kDropout, 0, Activation::kRelu, 0.3},
      {LayerKind::kDense, output_dim, Activation::kSoftmax, 0.0},
  };
  return spec;
}

NetworkSpec NetworkSpec::scaled(int divisor) const {
  if (divisor < 1) throw PipelineError("surrogate", "scaled", "divisor must be >= 1");
  NetworkSpec out = *this;
  for (std::size_t i = 0; i + 1 < out.layers.size(); ++i) {
    auto& l = out.layers[i];
    if (l.kind == LayerKind::kDense) l.units = std::max(1, l.units / divisor);
  }
  return out;
}

void NetworkSpec::validate() const {
  if (input_dim < 1 || output_dim < 2) {
    throw PipelineError("surrogate", "validate", "input_dim must be >= 1 and output_dim >= 2");
  }
  if (layers.empty()) throw PipelineError("surrogate", "validate", "network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const bool last = i + 1 == layers.size();
    if (l.kind == LayerKind::kDropout) {
      if (!(l.parameter > 0.0 && l.parameter < 1.0)) {
        throw PipelineError("surrogate", "validate", "dropout rate must lie in (0, 1)");
      }
      if (last) throw PipelineError("surrogate", "validate", "final layer must be dense softmax");
      continue;
    }
    if (l.units < 1) throw PipelineError("surrogate", "validate", "dense layer needs >= 1 unit");
    if ((l.activation == Activation::kSoftmax) != last) {
      throw PipelineError("surrogate", "validate", "softmax is only allowed on the final dense layer");
    }
  }
  if (layers.back().units != output_dim) {
    throw PipelineError("surrogate", "validate",
                        "final layer has " + std::to_string(layers.back().units) + " units, expected " +
                            std::to_string(output_dim));
  }
}

std::size_t TrainedNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : dense) n += static_cast<std::size_t>(p.weights.size() + p.bias.size());
  return n;
}

double activation(Activation kind, double parameter, double z) {
  switch (kind) {
    case Activation::kRelu: return std::max(0.0, z);
    case Activation::kLeaky: return std::max(parameter * z, z);
    case Activation::kSelu: return z >= 0.0 ? kSeluScale * z : kSeluScale * kSeluAlpha * std::expm1(z);
    case Activation::kSoftmax: break;
  }
  throw PipelineError("surrogate", "activation", "softmax is not an elementwise activation");
}

double activation_derivative(Activation kind, double parameter, double z) {
  switch (kind) {
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kLeaky: return z > 0.0 ? 1.0 : parameter;
    case Activation::kSelu: return z >= 0.0 ? kSeluScale : kSeluScale * kSeluAlpha * std::exp(z);
    case Activation::kSoftmax: break;
  }
  throw PipelineError("surrogate", "activation_derivative", "softmax is not an elementwise activation");
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::ArrayXd e = (logits.array() - logits.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

TrainedNetwork initialize(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  TrainedNetwork net;
  net.spec = spec;
  net.seed = seed;
  auto rng = make_rng(seed, Stream::kInit);
  int fan_in = spec.input_dim;
  for (const auto& layer : spec.layers) {
    if (layer.kind != LayerKind::kDense) continue;
    const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseParams p;
    p.weights.resize(layer.units, fan_in);
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c) {
      for (Eigen::Index r = 0; r < p.weights.rows(); ++r) p.weights(r, c) = dist(rng);
    }
    p.bias = Eigen::VectorXd::Zero(layer.units);
    net.dense.push_back(std::move(p));
    fan_in = layer.units;
  }
  return net;
}

Eigen::VectorXd forward(const TrainedNetwork& net, const Eigen::VectorXd& x, bool training_mode,
                        std::mt19937_64& rng) {
  if (x.size() != net.spec.input_dim) throw PipelineError("surrogate", "forward", "input dimension mismatch");
  if (!x.allFinite()) throw PipelineError("surrogate", "forward", "non-finite input");
  const Eigen::MatrixXd logits = run_forward(net, x, training_mode, &rng, nullptr);
  return softmax(logits.col(0));
}

Eigen::MatrixXd predict_proba(const TrainedNetwork& net, const Eigen::MatrixXd& inputs) {
  if (inputs.rows() != net.spec.input_dim) {
    throw PipelineError("surrogate", "predict_proba", "input dimension mismatch");
  }
  return column_softmax(run_forward(net, inputs, false, nullptr, nullptr));
}

LossGradient loss_and_gradient(const TrainedNetwork& net, const Eigen::MatrixXd& inputs,
                               const std::vector<int>& labels) {
  ForwardCache cache;
  const Eigen::MatrixXd logits = run_forward(net, inputs, false, nullptr, &cache);
  LossGradient out;
  out.loss = cross_entropy(logits, labels);
  out.grads = backward(net, cache, column_softmax(logits), labels);
  return out;
}

Split split_thirds(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(seed, Stream::kSplit);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t third = n / 3;
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(third));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(third),
                order.begin() + static_cast<std::ptrdiff_t>(2 * third));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(2 * third), order.end());
  return s;
}

TrainResult train(const NetworkSpec& spec, const Eigen::MatrixXd& features, const std::vector<int>& labels,
                  std::uint64_t seed, const TrainConfig& config) {
  spec.validate();
  const auto n = static_cast<std::size_t>(features.rows());
  if (features.cols() != spec.input_dim) {
    throw PipelineError("surrogate", "train",
                        "features have " + std::to_string(features.cols()) + " columns, network expects " +
                            std::to_string(spec.input_dim));
  }
  if (labels.size() != n) throw PipelineError("surrogate", "train", "label count differs from row count");
  if (n < 24) throw PipelineError("surrogate", "train", "need at least 24 samples, got " + std::to_string(n));
  for (int l : labels) {
    if (l < 0 || l >= spec.output_dim) {
      throw PipelineError("surrogate", "train", "label " + std::to_string(l) + " outside [0, output_dim)");
    }
  }
  if (!features.allFinite()) throw PipelineError("surrogate", "train", "non-finite features");
  if (config.epochs < 0 || config.batch_size < 0 || !(config.learning_rate > 0.0)) {
    throw PipelineError("surrogate", "train", "invalid training configuration");
  }

  const Split split = split_thirds(n, seed);
  if (split.train.empty() || split.test.empty() || split.validation.empty()) {
    throw PipelineError("surrogate", "train", "split with an empty part");
  }

  TrainResult result;
  result.network = initialize(spec, seed);
  TrainedNetwork& net = result.network;
  auto shuffle_rng = make_rng(seed, Stream::kShuffle);
  auto dropout_rng = make_rng(seed, Stream::kDropout);

  std::vector<DenseParams> m1, m2;
  for (const auto& p : net.dense) {
    m1.push_back({Eigen::MatrixXd::Zero(p.weights.rows(), p.weights.cols()), Eigen::VectorXd::Zero(p.bias.size())});
  }
  m2 = m1;
  long step = 0;

  const Eigen::MatrixXd train_x = gather_columns(features, split.train, 0, split.train.size());
  const std::vector<int> train_y = gather_labels(labels, split.train, 0, split.train.size());
  auto track = [&] {
    if (!config.track_loss) return;
    result.train_loss.push_back(cross_entropy(run_forward(net, train_x, false, nullptr, nullptr), train_y));
  };
  track();

  std::vector<std::size_t> order = split.train;
  const std::size_t batch = config.batch_size == 0 ? order.size() : static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      const Eigen::MatrixXd x = gather_columns(features, order, begin, end);
      const std::vector<int> y = gather_labels(labels, order, begin, end);
      ForwardCache cache;
      const Eigen::MatrixXd logits = run_forward(net, x, true, &dropout_rng, &cache);
      epoch_loss += cross_entropy(logits, y) * static_cast<double>(end - begin);
      const auto grads = backward(net, cache, column_softmax(logits), y);

      ++step;
      for (std::size_t d = 0; d < net.dense.size(); ++d) {
        auto& p = net.dense[d];
        const auto& g = grads[d];
        if (config.optimizer == Optimizer::kSgd) {
          p.weights -= config.learning_rate * g.weights;
          p.bias -= config.learning_rate * g.bias;
          continue;
        }
        const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
        auto adam = [&](auto& param, auto& first, auto& second, const auto& grad) {
          first = config.beta1 * first + (1.0 - config.beta1) * grad;
          second = config.beta2 * second + (1.0 - config.beta2) * grad.cwiseProduct(grad);
          param.array() -= config.learning_rate * (first.array() / c1) /
                           ((second.array() / c2).sqrt() + config.epsilon);
        };
        adam(p.weights, m1[d].weights, m2[d].weights, g.weights);
        adam(p.bias, m1[d].bias, m2[d].bias, g.bias);
      }
    }
    if (!std::isfinite(epoch_loss)) {
      throw PipelineError("surrogate", "train",
                          "non-finite loss (seed " + std::to_string(seed) + ", epoch " + std::to_string(epoch) + ")");
    }
    net.epochs_trained = epoch + 1;
    track();
  }

  result.test_accuracy = accuracy_on(net, features, labels, split.test);
  result.validation_accuracy = accuracy_on(net, features, labels, split.validation);
  return result;
}

double accuracy(const TrainedNetwork& net, const Eigen::MatrixXd& features, const std::vector<int>& labels) {
  std::vector<std::size_t> rows(static_cast<std::size_t>(features.rows()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return accuracy_on(net, features, labels, rows);
}

double gradient_check(const TrainedNetwork& net, const Eigen::VectorXd& x, int label, double step) {
  constexpr double kFloor = 1e-6;  // central-difference roundoff is ~1e-11 absolute
  const std::vector<int> labels{label};
  const Eigen::MatrixXd input = x;
  const LossGradient analytic = loss_and_gradient(net, input, labels);

  TrainedNetwork probe = net;
  auto loss_at = [&] { return cross_entropy(run_forward(probe, input, false, nullptr, nullptr), labels); };
  double worst = 0.0;
  auto check = [&](double& param, double grad) {
    const double saved = param;
    param = saved + step;
    const double up = loss_at();
    param = saved - step;
    const double down = loss_at();
    param = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(grad - numeric) / std::max({std::abs(grad), std::abs(numeric), kFloor});
    worst = std::max(worst, err);
  };
  for (std::size_t d = 0; d < probe.dense.size(); ++d) {
    auto& p = probe.dense[d];
    for (Eigen::Index i = 0; i < p.weights.size(); ++i) check(p.weights.data()[i], analytic.grads[d].weights.data()[i]);
    for (Eigen::Index i = 0; i < p.bias.size(); ++i) check(p.bias(i), analytic.grads[d].bias(i));
  }
  return worst;
}

double gradient_check(const NetworkSpec& spec, const Eigen::VectorXd& x, int label, std::uint64_t seed, double step) {
  return gradient_check(initialize(spec, seed), x, label, step);
}

AccuracyReport make_report(std::string method, std::vector<std::uint64_t> seeds, std::vector<double> accuracies) {
  AccuracyReport r;
  r.method = std::move(method);
  r.seeds = std::move(seeds);
  r.accuracies = std::move(accuracies);
  if (!r.accuracies.empty()) {
    const auto n = static_cast<double>(r.accuracies.size());
    r.mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : r.accuracies) ss += (a - r.mean) * (a - r.mean);
    r.std = std::sqrt(ss / n);
  }
  return r;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& features, const std::vector<std::size_t>& columns) {
  Eigen::MatrixXd out(features.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] >= static_cast<std::size_t>(features.cols())) {
      throw PipelineError("surrogate", "select_columns", "column " + std::to_string(columns[c]) + " out of range");
    }
    out.col(static_cast<Eigen::Index>(c)) = features.col(static_cast<Eigen::Index>(columns[c]));
  }
  return out;
}

std::vector<AccuracyReport> compare_selections(const Eigen::MatrixXd& features_full, const std::vector<int>& labels,
                                               const std::vector<std::size_t>& mode_mode_columns,
                                               const std::vector<std::size_t>& median_columns,
                                               const ComparisonConfig& config) {
  if (config.runs < 1) throw PipelineError("surrogate", "compare_selections", "runs must be >= 1");
  const std::size_t count = mode_mode_columns.size();
  if (count == 0 || median_columns.size() != count) {
    throw PipelineError("surrogate", "compare_selections", "selections must be non-empty and of equal size");
  }
  std::set<std::size_t> used(mode_mode_columns.begin(), mode_mode_columns.end());
  used.insert(median_columns.begin(), median_columns.end());
  std::vector<std::size_t> pool;
  for (std::size_t c = 0; c < static_cast<std::size_t>(features_full.cols()); ++c) {
    if (!used.count(c)) pool.push_back(c);
  }
  if (pool.size() < count) {
    throw PipelineError("surrogate", "compare_selections",
                        "leftover pool has " + std::to_string(pool.size()) + " columns, need " + std::to_string(count));
  }

  NetworkSpec spec = config.spec;
  spec.input_dim = static_cast<int>(count);
  spec.validate();

  const auto runs = static_cast<std::size_t>(config.runs);
  std::vector<std::vector<std::size_t>> selections(3 * runs);
  for (std::size_t r = 0; r < runs; ++r) {
    selections[r] = mode_mode_columns;
    selections[runs + r] = median_columns;
    std::seed_seq seq{static_cast<std::uint32_t>(config.selection_seed),
                      static_cast<std::uint32_t>(config.selection_seed >> 32), static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> draw;
    std::sample(pool.begin(), pool.end(), std::back_inserter(draw), static_cast<std::ptrdiff_t>(count), rng);
    selections[2 * runs + r] = std::move(draw);
  }

  std::vector<double> acc(3 * runs, 0.0);
  std::vector<std::optional<TrainedNetwork>> firsts(3);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t job = next++; job < 3 * runs; job = next++) {
      try {
        const std::size_t r = job % runs;
        const Eigen::MatrixXd x = select_columns(features_full, selections[job]);
        TrainResult res = train(spec, x, labels, config.base_seed + r, config.train);
        acc[job] = res.test_accuracy;
        if (r == 0) firsts[job / runs] = std::move(res.network);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned threads = config.threads > 0 ? static_cast<unsigned>(config.threads) : std::thread::hardware_concurrency();
  threads = std::clamp<unsigned>(threads, 1u, static_cast<unsigned>(3 * runs));
  std::vector<std::thread> pool_threads;
  for (unsigned t = 1; t < threads; ++t) pool_threads.emplace_back(worker);
  worker();
  for (auto& t : pool_threads) t.join();
  if (failure) std::rethrow_exception(failure);

  const std::array<const char*, 3> names{"mode-mode", "median", "random"};
  std::vector<AccuracyReport> reports;
  for (std::size_t g = 0; g < 3; ++g) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < runs; ++r) seeds.push_back(config.base_seed + r);
    AccuracyReport rep = make_report(names[g], std::move(seeds),
                                     std::vector<double>(acc.begin() + static_cast<std::ptrdiff_t>(g * runs),
                                                         acc.begin() + static_cast<std::ptrdiff_t>((g + 1) * runs)));
    rep.selections.assign(selections.begin() + static_cast<std::ptrdiff_t>(g * runs),
                          selections.begin() + static_cast<std::ptrdiff_t>((g + 1) * runs));
    rep.first_network = std::move(firsts[g]);
    reports.push_back(std::move(rep));
  }
  return reports;
}

void write_report_csv(const std::vector<AccuracyReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PipelineError("surrogate", "write_report_csv", "cannot write '" + path.string() + "'");
  csv::write_row(out, {"method", "seed", "accuracy"});
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.accuracies.size(); ++i) {
      csv::write_row(out, {r.method, std::to_string(r.seeds[i]), csv::format_double(r.accuracies[i])});
    }
  }
}

std::vector<AccuracyReport> load_report_csv(const std::filesystem::path& path) {
  csv::Table table;
  try {
    table = csv::read(path);
  } catch (const std::exception& e) {
    throw PipelineError("surrogate", "load_report_csv", e.what());
  }
  if (table.header != std::vector<std::string>{"method", "seed", "accuracy"}) {
    throw PipelineError("surrogate", "load_report_csv", "header must be 'method,seed,accuracy'");
  }
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<std::uint64_t>, std::vector<double>>> groups;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    const auto acc = cells.size() == 3 ? csv::parse_double(cells[2]) : std::nullopt;
    if (!acc) {
      throw PipelineError("surrogate", "load_report_csv", "malformed row at line " + std::to_string(table.line_numbers[r]));
    }
    if (!groups.count(cells[0])) order.push_back(cells[0]);
    auto& g = groups[cells[0]];
    g.first.push_back(std::stoull(cells[1]));
    g.second.push_back(*acc);
  }
  std::vector<AccuracyReport> out;
  for (const auto& m : order) out.push_back(make_report(m, groups[m].first, groups[m].second));
  return out;
}

void write_summary_json(const std::vector<AccuracyReport>& reports, const std::filesystem::path& path) {
  json doc = json::object();
  for (const auto& r : reports) {
    doc[r.method] = {{"runs", r.accuracies.size()}, {"mean", r.mean}, {"std", r.std}};
    if (!r.selections.empty() && r.method != "random") {
      doc[r.method]["features"] = r.selections.front();
    }
  }
  std::ofstream out(path);
  if (!out) throw PipelineError("surrogate", "write_summary_json", "cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

void write_density_csv(const std::vector<AccuracyReport>& reports, const std::filesystem::path& path, int grid_points) {
  double lo = 1.0;
  double hi = 0.0;
  std::vector<double> bandwidths;
  for (const auto& r : reports) {
    const double n = static_cast<double>(std::max<std::size_t>(r.accuracies.size(), 1));
    const double h = r.std > 0.0 ? 1.06 * r.std * std::pow(n, -0.2) : 1e-3;
    bandwidths.push_back(h);
    for (double a : r.accuracies) {
      lo = std::min(lo, a - 3.0 * h);
      hi = std::max(hi, a + 3.0 * h);
    }
  }
  std::ofstream out(path);
  if (!out) throw PipelineError("surrogate", "write_density_csv", "cannot write '" + path.string() + "'");
  csv::write_row(out, {"method", "accuracy", "density"});
  if (hi < lo || grid_points < 2) return;
  for (std::size_t g = 0; g < reports.size(); ++g) {
    const auto& r = reports[g];
    const double h = bandwidths[g];
    for (int i = 0; i < grid_points; ++i) {
      const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid_points - 1);
      double density = 0.0;
      for (double a : r.accuracies) {
        const double u = (x - a) / h;
        density += std::exp(-0.5 * u * u);
      }
      density /= static_cast<double>(r.accuracies.size()) * h * std::sqrt(2.0 * M_PI);
      csv::write_row(out, {r.method, csv::format_double(x), csv::format_double(density)});
    }
  }
}

void write_network(const TrainedNetwork& net, const std::filesystem::path& path) {
  json params = json::array();
  for (const auto& p : net.dense) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(p.weights.size()));
    for (Eigen::Index r = 0; r < p.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.weights.cols(); ++c) w.push_back(p.weights(r, c));
    }
    params.push_back({{"rows", p.weights.rows()},
                      {"cols", p.weights.cols()},
                      {"weights", w},
                      {"bias", std::vector<double>(p.bias.begin(), p.bias.end())}});
  }
  json doc = {{"spec", spec_to_json(net.spec)}, {"seed", net.seed}, {"epochs", net.epochs_trained}, {"parameters", params}};
  std::ofstream out(path);
  if (!out) throw PipelineError("surrogate", "write_network", "cannot write '" + path.string() + "'");
  out << doc.dump() << '\n';
}

TrainedNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("surrogate", "load_network", "cannot open '" + path.string() + "'");
  try {
    const json doc = json::parse(in);
    TrainedNetwork net;
    net.spec = spec_from_json(doc.at("spec"));
    net.seed = doc.at("seed").get<std::uint64_t>();
    net.epochs_trained = doc.at("epochs").get<int>();
    int fan_in = net.spec.input_dim;
    std::size_t d = 0;
    const auto& params = doc.at("parameters");
    for (const auto& layer : net.spec.layers) {
      if (layer.kind != LayerKind::kDense) continue;
      const auto& p = params.at(d++);
      const auto rows = p.at("rows").get<Eigen::Index>();
      const auto cols = p.at("cols").get<Eigen::Index>();
      const auto w = p.at("weights").get<std::vector<double>>();
      const auto b = p.at("bias").get<std::vector<double>>();
      if (rows != layer.units || cols != fan_in || static_cast<Eigen::Index>(w.size()) != rows * cols ||
          static_cast<Eigen::Index>(b.size()) != rows) {
        throw std::runtime_error("parameter shapes do not match the spec");
      }
      DenseParams dp;
      dp.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.data(), rows, cols);
      dp.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
      net.dense.push_back(std::move(dp));
      fan_in = layer.units;
    }
    if (d != params.size()) throw std::runtime_error("extra parameter blocks");
    return net;
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError("surrogate", "load_network", e.what());
  }
}

}  // namespace mstate::surrogate
