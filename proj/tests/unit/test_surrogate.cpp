#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mstate/csv.hpp"
#include "mstate/error.hpp"
#include "mstate/surrogate.hpp"
#include "support.hpp"

using namespace mstate;
using namespace mstate::surrogate;

namespace {

// Gaussian blobs around well separated class means.
void blobs(int classes, int n, int dim, double spread, unsigned seed, Eigen::MatrixXd& x, std::vector<int>& y) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, spread);
  x.resize(n, dim);
  y.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = i % classes;
    y[static_cast<std::size_t>(i)] = c;
    for (int d = 0; d < dim; ++d) x(i, d) = (d % classes == c ? 1.0 : 0.0) + g(rng);
  }
}

NetworkSpec small_spec(int in, int out) {
  NetworkSpec s;
  s.input_dim = in;
  s.output_dim = out;
  s.layers = {{LayerKind::kDense, 6, Activation::kSelu, 0.0},
              {LayerKind::kDense, 5, Activation::kLeaky, 0.1},
              {LayerKind::kDropout, 0, Activation::kRelu, 0.5},
              {LayerKind::kDense, out, Activation::kSoftmax, 0.0}};
  return s;
}

}  // namespace

TEST_CASE("activations") {
  CHECK(activation(Activation::kSelu, 0, -1.0) == doctest::Approx(-1.1113307284689349).epsilon(1e-12));
  CHECK(activation(Activation::kSelu, 0, 1.0) == doctest::Approx(1.05070098).epsilon(1e-15));
  CHECK(activation(Activation::kSelu, 0, -2.0) == doctest::Approx(-1.5201664558147385).epsilon(1e-12));
  CHECK(activation(Activation::kRelu, 0, -3.0) == 0.0);
  CHECK(activation(Activation::kLeaky, 0.05, -2.0) == doctest::Approx(-0.1));
  CHECK(activation(Activation::kLeaky, 0.05, 2.0) == 2.0);
  CHECK_THROWS_AS(activation(Activation::kSoftmax, 0, 1.0), PipelineError);
  for (double z : {-1.3, -0.2, 0.4, 2.2}) {
    for (Activation a : {Activation::kSelu, Activation::kRelu, Activation::kLeaky}) {
      const double h = 1e-6;
      const double numeric = (activation(a, 0.05, z + h) - activation(a, 0.05, z - h)) / (2 * h);
      CHECK(activation_derivative(a, 0.05, z) == doctest::Approx(numeric).epsilon(1e-6));
    }
  }
  CHECK(parse_activation(to_string(Activation::kLeaky)) == Activation::kLeaky);
}

TEST_CASE("softmax is shift-stable") {
  const auto p = softmax(Eigen::Vector3d(1000.0, 1001.0, 1002.0));
  CHECK(p.allFinite());
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p(2) == doctest::Approx(0.6652409557748219));
}

TEST_CASE("default architecture") {
  const auto s = NetworkSpec::table1(8, 8);
  REQUIRE(s.layers.size() == 7);
  CHECK(s.layers[0].units == 256);
  CHECK(s.layers[0].activation == Activation::kSelu);
  CHECK(s.layers[3].units == 1024);
  CHECK(s.layers[3].parameter == 0.05);
  CHECK(s.layers[4].parameter == 0.01);
  CHECK(s.layers[5].kind == LayerKind::kDropout);
  CHECK(s.layers[5].parameter == 0.3);
  CHECK(s.layers[6].units == 8);
  const auto q = s.scaled(4);
  CHECK(q.layers[0].units == 64);
  CHECK(q.layers[3].units == 256);
  CHECK(q.layers[6].units == 8);
  CHECK_THROWS_AS(s.scaled(0), PipelineError);
  auto bad = s;
  bad.layers.pop_back();
  CHECK_THROWS_AS(bad.validate(), PipelineError);
  const auto net = initialize(s, 1);
  CHECK(net.parameter_count() == 8u * 256 + 256 + 256u * 128 + 128 + 128u * 128 + 128 + 128u * 1024 + 1024 +
                                     1024u * 128 + 128 + 128u * 8 + 8);
}

TEST_CASE("initialisation bounds") {
  const auto net = initialize(NetworkSpec::table1(), 3);
  for (const auto& p : net.dense) {
    const double bound = std::sqrt(3.0 / static_cast<double>(p.weights.cols()));
    CHECK(p.weights.cwiseAbs().maxCoeff() <= bound);
    CHECK(p.bias.isZero());
  }
}

TEST_CASE("forward pass matches a direct computation") {
  const auto spec = small_spec(4, 3);
  const auto net = initialize(spec, 9);
  const Eigen::Vector4d x(0.3, -0.7, 0.1, 0.9);
  Eigen::VectorXd a = x;
  std::size_t d = 0;
  for (const auto& layer : spec.layers) {
    if (layer.kind == LayerKind::kDropout) continue;
    const Eigen::VectorXd z = net.dense[d].weights * a + net.dense[d].bias;
    ++d;
    if (layer.activation == Activation::kSoftmax) {
      const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
      a = e / e.sum();
    } else {
      a = z.unaryExpr([&](double v) { return activation(layer.activation, layer.parameter, v); });
    }
  }
  std::mt19937_64 rng(1);
  const auto p = forward(net, x, false, rng);
  CHECK((p - a).cwiseAbs().maxCoeff() < 1e-10);
  const auto batch = predict_proba(net, x);
  CHECK((batch.col(0) - a).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(forward(net, Eigen::Vector3d::Zero(), false, rng), PipelineError);
}

TEST_CASE("training-mode dropout is random and inference is not") {
  const auto net = initialize(small_spec(4, 3), 2);
  const Eigen::Vector4d x(1, 2, 3, 4);
  std::mt19937_64 rng(5);
  const auto a = forward(net, x, false, rng);
  const auto b = forward(net, x, false, rng);
  CHECK(a == b);
  bool differs = false;
  for (int i = 0; i < 10 && !differs; ++i) differs = forward(net, x, true, rng) != a;
  CHECK(differs);
}

TEST_CASE("analytic gradients agree with finite differences") {
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(8, -0.8, 0.7);
  CHECK(gradient_check(NetworkSpec::table1().scaled(8), x, 3, 1) <= 1e-4);
  CHECK(gradient_check(NetworkSpec::table1().scaled(4), x, 0, 2) <= 1e-4);
  CHECK(gradient_check(small_spec(8, 4), x, 2, 3) <= 1e-5);

  NetworkSpec linear;
  linear.input_dim = 8;
  linear.output_dim = 8;
  linear.layers = {{LayerKind::kDense, 8, Activation::kSoftmax, 0.0}};
  CHECK(gradient_check(linear, x, 5, 4) <= 1e-6);
}

TEST_CASE("gradient of a zero network") {
  NetworkSpec linear;
  linear.input_dim = 3;
  linear.output_dim = 2;
  linear.layers = {{LayerKind::kDense, 2, Activation::kSoftmax, 0.0}};
  auto net = initialize(linear, 1);
  net.dense[0].weights.setZero();
  const Eigen::Vector3d x(1.0, -2.0, 0.5);
  const auto lg = loss_and_gradient(net, x, {0});
  CHECK(lg.loss == doctest::Approx(std::log(2.0)));
  // dL/dz = p - y = (-0.5, 0.5)
  CHECK(lg.grads[0].bias(0) == doctest::Approx(-0.5));
  CHECK(lg.grads[0].weights(1, 1) == doctest::Approx(-1.0));
  CHECK(gradient_check(net, x, 0) <= 1e-6);
}

TEST_CASE("split into thirds") {
  const auto s = split_thirds(100, 4);
  CHECK(s.train.size() == 33);
  CHECK(s.test.size() == 33);
  CHECK(s.validation.size() == 34);
  std::vector<int> seen(100, 0);
  for (const auto* part : {&s.train, &s.test, &s.validation}) {
    for (auto i : *part) ++seen[i];
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  CHECK(split_thirds(100, 4).train == s.train);
  CHECK(split_thirds(100, 5).train != s.train);
}

TEST_CASE("separable classes are learned") {
  Eigen::MatrixXd x;
  std::vector<int> y;
  blobs(3, 300, 8, 0.1, 1, x, y);
  TrainConfig cfg;
  cfg.epochs = 40;
  const auto r = train(NetworkSpec::table1(8, 3).scaled(8), x, y, 11, cfg);
  CHECK(r.test_accuracy >= 0.98);
  CHECK(r.validation_accuracy >= 0.98);
  CHECK(r.network.epochs_trained == 40);
  CHECK(accuracy(r.network, x, y) >= 0.98);
}

TEST_CASE("random labels stay near chance") {
  Eigen::MatrixXd x;
  std::vector<int> y;
  blobs(4, 600, 8, 1.0, 2, x, y);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> label(0, 3);
  for (auto& v : y) v = label(rng);
  TrainConfig cfg;
  cfg.epochs = 10;
  const auto r = train(NetworkSpec::table1(8, 4).scaled(8), x, y, 5, cfg);
  CHECK(r.test_accuracy < 0.4);
}

TEST_CASE("training is deterministic for a seed") {
  Eigen::MatrixXd x;
  std::vector<int> y;
  blobs(2, 60, 4, 0.5, 4, x, y);
  TrainConfig cfg;
  cfg.epochs = 5;
  const auto a = train(small_spec(4, 2), x, y, 8, cfg);
  const auto b = train(small_spec(4, 2), x, y, 8, cfg);
  CHECK(a.test_accuracy == b.test_accuracy);
  for (std::size_t i = 0; i < a.network.dense.size(); ++i) {
    CHECK(a.network.dense[i].weights == b.network.dense[i].weights);
  }
}

TEST_CASE("full-batch descent lowers the loss every epoch") {
  Eigen::MatrixXd x;
  std::vector<int> y;
  blobs(3, 90, 6, 0.3, 6, x, y);
  NetworkSpec spec;
  spec.input_dim = 6;
  spec.output_dim = 3;
  spec.layers = {{LayerKind::kDense, 8, Activation::kSelu, 0.0}, {LayerKind::kDense, 3, Activation::kSoftmax, 0.0}};
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.optimizer = Optimizer::kSgd;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 0;
  cfg.track_loss = true;
  const auto r = train(spec, x, y, 3, cfg);
  REQUIRE(r.train_loss.size() == 31);
  for (std::size_t e = 1; e < r.train_loss.size(); ++e) CHECK(r.train_loss[e] < r.train_loss[e - 1]);
}

TEST_CASE("train validates input") {
  Eigen::MatrixXd x;
  std::vector<int> y;
  blobs(2, 30, 4, 0.5, 7, x, y);
  CHECK_THROWS_AS(train(small_spec(4, 2), x.topRows(20), std::vector<int>(y.begin(), y.begin() + 20), 1),
                  PipelineError);
  auto bad = y;
  bad[0] = 2;
  CHECK_THROWS_AS(train(small_spec(4, 2), x, bad, 1), PipelineError);
  CHECK_THROWS_AS(train(small_spec(5, 2), x, y, 1), PipelineError);
}

TEST_CASE("reports") {
  const auto one = make_report("m", {1}, {0.7});
  CHECK(one.mean == 0.7);
  CHECK(one.std == 0.0);
  const auto two = make_report("m", {1, 2}, {0.5, 0.7});
  CHECK(two.mean == doctest::Approx(0.6));
  CHECK(two.std == doctest::Approx(0.1));
}

TEST_CASE("selection comparison") {
  Eigen::MatrixXd x;
  std::vector<int> y;
  blobs(2, 60, 10, 0.3, 8, x, y);
  ComparisonConfig cfg;
  cfg.runs = 2;
  cfg.base_seed = 40;
  cfg.selection_seed = 9;
  cfg.spec = small_spec(2, 2);
  cfg.train.epochs = 3;
  cfg.threads = 2;
  const auto reports = compare_selections(x, y, {0, 1}, {2, 3}, cfg);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].method == "mode-mode");
  CHECK(reports[1].method == "median");
  CHECK(reports[2].method == "random");
  CHECK(reports[0].seeds == std::vector<std::uint64_t>{40, 41});
  for (const auto& sel : reports[2].selections) {
    REQUIRE(sel.size() == 2);
    for (auto c : sel) CHECK(c >= 4);
  }
  CHECK(reports[0].first_network.has_value());

  cfg.threads = 1;
  const auto again = compare_selections(x, y, {0, 1}, {2, 3}, cfg);
  for (std::size_t g = 0; g < 3; ++g) {
    CHECK(again[g].accuracies == reports[g].accuracies);
    CHECK(again[g].selections == reports[g].selections);
  }

  CHECK_THROWS_AS(compare_selections(x, y, {0, 1, 2, 3}, {4, 5, 6, 7}, cfg), PipelineError);
  CHECK_THROWS_AS(compare_selections(x, y, {0, 1}, {2}, cfg), PipelineError);

  test::TempDir dir("sur");
  write_report_csv(reports, dir / "r.csv");
  const auto back = load_report_csv(dir / "r.csv");
  REQUIRE(back.size() == 3);
  CHECK(back[2].accuracies == reports[2].accuracies);
  CHECK(back[1].mean == reports[1].mean);
  write_summary_json(reports, dir / "s.json");
  write_density_csv(reports, dir / "d.csv", 50);
  CHECK(csv::read(dir / "d.csv").rows.size() == 150);
}

TEST_CASE("network JSON round trip") {
  test::TempDir dir("net");
  const auto net = initialize(NetworkSpec::table1(8, 8).scaled(8), 12);
  write_network(net, dir / "n.json");
  const auto back = load_network(dir / "n.json");
  CHECK(back.seed == 12);
  CHECK(back.spec.layers.size() == net.spec.layers.size());
  REQUIRE(back.dense.size() == net.dense.size());
  for (std::size_t i = 0; i < net.dense.size(); ++i) {
    CHECK(back.dense[i].weights == net.dense[i].weights);
    CHECK(back.dense[i].bias == net.dense[i].bias);
  }
}
