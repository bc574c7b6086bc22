#include "mstate/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "mstate/csv.hpp"
#include "mstate/error.hpp"
#include "mstate/sectors.hpp"

namespace mstate::aggregate {

namespace {

using json = nlohmann::json;

// Splits whose residual sum of squares falls below this fraction of the
// curve's total sum of squares count as exact fits.
constexpr double kExactFitRel = 1e-20;

std::vector<const relevance::RelevanceVector*> members_of(
    const std::vector<relevance::RelevanceVector>& relevances, int cluster_id, const char* op) {
  std::vector<const relevance::RelevanceVector*> members;
  for (const auto& rv : relevances) {
    if (rv.cluster_id == cluster_id) members.push_back(&rv);
  }
  if (members.empty()) {
    throw PipelineError("aggregate", op, "empty cluster " + std::to_string(cluster_id));
  }
  for (const auto* rv : members) {
    if (rv->rho.size() != members.front()->rho.size()) {
      throw PipelineError("aggregate", op, "relevance vectors differ in length");
    }
  }
  return members;
}

// Residual sum of squares of the least-squares line through (x, y[x]) for x in [begin, end).
double segment_rss(const Eigen::VectorXd& y, Eigen::Index begin, Eigen::Index end) {
  const auto n = static_cast<double>(end - begin);
  const auto seg = y.segment(begin, end - begin).array();
  const Eigen::ArrayXd x = Eigen::ArrayXd::LinSpaced(end - begin, static_cast<double>(begin),
                                                     static_cast<double>(end - 1));
  const double x_mean = x.sum() / n;
  const double y_mean = seg.sum() / n;
  const double sxx = (x - x_mean).square().sum();
  const double slope = ((x - x_mean) * (seg - y_mean)).sum() / sxx;
  return (seg - (y_mean + slope * (x - x_mean))).square().sum();
}

std::vector<std::size_t> ranking(const Eigen::VectorXd& scores) {
  std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
  });
  return order;
}

}  // namespace

std::string to_string(Method method) { return method == Method::kMedian ? "median" : "mode-mode"; }

Method parse_method(const std::string& name) {
  if (name == "median") return Method::kMedian;
  if (name == "mode-mode") return Method::kModeMode;
  throw PipelineError("aggregate", "parse_method", "unknown aggregation method '" + name + "'");
}

std::string feature_label(std::size_t feature, std::size_t dim) {
  return dim == kFeatureCount ? feature_name(feature) : "x" + std::to_string(feature);
}

AggregatedRelevance median_aggregate(const std::vector<relevance::RelevanceVector>& relevances,
                                     int cluster_id) {
  const auto members = members_of(relevances, cluster_id, "median_aggregate");
  const Eigen::Index dim = members.front()->rho.size();
  AggregatedRelevance agg;
  agg.cluster_id = cluster_id;
  agg.method = Method::kMedian;
  agg.instance_count = members.size();
  agg.scores.resize(dim);
  std::vector<double> column(members.size());
  const std::size_t mid = members.size() / 2;
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (std::size_t m = 0; m < members.size(); ++m) column[m] = members[m]->rho(i);
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid), column.end());
    double median = column[mid];
    if (members.size() % 2 == 0) {
      const double lower = *std::max_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid));
      median = 0.5 * (lower + median);
    }
    agg.scores(i) = median;
  }
  return agg;
}

AggregatedRelevance mode_mode(const std::vector<relevance::RelevanceVector>& relevances, int cluster_id) {
  const auto members = members_of(relevances, cluster_id, "mode_mode");
  AggregatedRelevance agg;
  agg.cluster_id = cluster_id;
  agg.method = Method::kModeMode;
  agg.instance_count = members.size();
  agg.scores = Eigen::VectorXd::Zero(members.front()->rho.size());
  for (const auto* rv : members) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < rv->rho.size(); ++i) {
      if (rv->rho(i) > rv->rho(best)) best = i;
    }
    agg.scores(best) += 1.0;
  }
  return agg;
}

std::vector<AggregatedRelevance> aggregate_all(const std::vector<relevance::RelevanceVector>& relevances,
                                               int k, Method method) {
  std::vector<AggregatedRelevance> out;
  for (int j = 0; j < k; ++j) {
    out.push_back(method == Method::kMedian ? median_aggregate(relevances, j) : mode_mode(relevances, j));
  }
  return out;
}

RelevanceCurve sort_curve(const AggregatedRelevance& agg) {
  RelevanceCurve curve;
  curve.cluster_id = agg.cluster_id;
  curve.method = agg.method;
  curve.permutation.resize(static_cast<std::size_t>(agg.scores.size()));
  std::iota(curve.permutation.begin(), curve.permutation.end(), std::size_t{0});
  std::stable_sort(curve.permutation.begin(), curve.permutation.end(), [&](std::size_t a, std::size_t b) {
    return agg.scores(static_cast<Eigen::Index>(a)) < agg.scores(static_cast<Eigen::Index>(b));
  });
  curve.sorted_scores.resize(agg.scores.size());
  for (std::size_t p = 0; p < curve.permutation.size(); ++p) {
    curve.sorted_scores(static_cast<Eigen::Index>(p)) =
        agg.scores(static_cast<Eigen::Index>(curve.permutation[p]));
  }
  return curve;
}

ChangePointScan changepoint_scan(const Eigen::VectorXd& values) {
  const Eigen::Index n = values.size();
  if (n < static_cast<Eigen::Index>(kMinCurveLength)) {
    throw PipelineError("aggregate", "bayesian_changepoint",
                        "curve has " + std::to_string(n) + " points; minimum length is " +
                            std::to_string(kMinCurveLength));
  }
  if (!values.allFinite()) throw PipelineError("aggregate", "bayesian_changepoint", "non-finite curve");

  ChangePointScan scan;
  std::vector<double> rss;
  for (Eigen::Index m = 2; m <= n - 2; ++m) {
    scan.candidates.push_back(static_cast<int>(m));
    rss.push_back(segment_rss(values, 0, m) + segment_rss(values, m, n));
  }
  const double sst = (values.array() - values.mean()).square().sum();
  const double exact = kExactFitRel * sst;

  const auto count = static_cast<Eigen::Index>(rss.size());
  scan.posterior = Eigen::VectorXd::Zero(count);
  std::size_t exact_fits = 0;
  for (double r : rss) exact_fits += r <= exact ? 1 : 0;
  if (exact_fits > 0) {
    for (Eigen::Index c = 0; c < count; ++c) {
      if (rss[static_cast<std::size_t>(c)] <= exact) {
        scan.posterior(c) = 1.0 / static_cast<double>(exact_fits);
      }
    }
  } else {
    const double exponent = static_cast<double>(n - 4) / 2.0;
    Eigen::VectorXd log_post(count);
    for (Eigen::Index c = 0; c < count; ++c) log_post(c) = -exponent * std::log(rss[static_cast<std::size_t>(c)]);
    scan.posterior = (log_post.array() - log_post.maxCoeff()).exp().matrix();
    scan.posterior /= scan.posterior.sum();
  }
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < count; ++c) {
    if (scan.posterior(c) >= scan.posterior(best)) best = c;
  }
  scan.map_index = scan.candidates[static_cast<std::size_t>(best)];
  return scan;
}

ChangePointResult bayesian_changepoint(const RelevanceCurve& curve) {
  ChangePointScan scan = changepoint_scan(curve.sorted_scores);
  ChangePointResult result;
  result.curve = curve;
  result.candidates = std::move(scan.candidates);
  result.posterior = std::move(scan.posterior);
  result.map_index = scan.map_index;
  result.relevant_mask.assign(curve.permutation.size(), false);
  for (std::size_t p = static_cast<std::size_t>(result.map_index); p < curve.permutation.size(); ++p) {
    result.relevant_mask[curve.permutation[p]] = true;
  }
  return result;
}

std::vector<std::size_t> select_relevant(const ChangePointResult& result) {
  std::vector<std::size_t> features;
  for (std::size_t f = 0; f < result.relevant_mask.size(); ++f) {
    if (result.relevant_mask[f]) features.push_back(f);
  }
  return features;
}

std::vector<std::size_t> top_feature_per_cluster(const std::vector<AggregatedRelevance>& aggregates) {
  std::set<std::size_t> taken;
  std::vector<std::size_t> chosen;
  for (const auto& agg : aggregates) {
    for (std::size_t f : ranking(agg.scores)) {
      if (taken.insert(f).second) {
        chosen.push_back(f);
        break;
      }
    }
  }
  return chosen;
}

void write_aggregates(const std::vector<AggregatedRelevance>& aggregates, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PipelineError("aggregate", "write_aggregates", "cannot write '" + path.string() + "'");
  csv::write_row(out, {"cluster_id", "method", "feature", "score"});
  for (const auto& agg : aggregates) {
    const auto dim = static_cast<std::size_t>(agg.scores.size());
    for (std::size_t f = 0; f < dim; ++f) {
      csv::write_row(out, {std::to_string(agg.cluster_id), to_string(agg.method), feature_label(f, dim),
                           csv::format_double(agg.scores(static_cast<Eigen::Index>(f)))});
    }
  }
}

std::vector<AggregatedRelevance> load_aggregates(const std::filesystem::path& path) {
  csv::Table table;
  try {
    table = csv::read(path);
  } catch (const std::exception& e) {
    throw PipelineError("aggregate", "load_aggregates", e.what());
  }
  if (table.header != std::vector<std::string>{"cluster_id", "method", "feature", "score"}) {
    throw PipelineError("aggregate", "load_aggregates", "header must be 'cluster_id,method,feature,score'");
  }
  // Keyed by (method, cluster) to restore file order deterministically.
  std::map<std::pair<int, int>, std::vector<std::pair<std::size_t, double>>> groups;
  std::vector<std::pair<int, int>> order;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    const std::string where = "line " + std::to_string(table.line_numbers[r]);
    if (cells.size() != 4) throw PipelineError("aggregate", "load_aggregates", where + ": wrong cell count");
    const auto id = csv::parse_double(cells[0]);
    const auto score = csv::parse_double(cells[3]);
    if (!id || !score) throw PipelineError("aggregate", "load_aggregates", where + ": malformed");
    const int method = static_cast<int>(parse_method(cells[1]));
    std::optional<std::size_t> feature = parse_feature_name(cells[2]);
    if (!feature && cells[2].size() > 1 && cells[2][0] == 'x') {
      const auto idx = csv::parse_double(cells[2].substr(1));
      if (idx) feature = static_cast<std::size_t>(*idx);
    }
    if (!feature) throw PipelineError("aggregate", "load_aggregates", where + ": unknown feature '" + cells[2] + "'");
    const std::pair<int, int> key{method, static_cast<int>(*id)};
    if (!groups.count(key)) order.push_back(key);
    groups[key].emplace_back(*feature, *score);
  }
  std::map<int, std::size_t> counts;  // cluster -> instance count from the mode-mode rows
  std::vector<AggregatedRelevance> out;
  for (const auto& key : order) {
    const auto& entries = groups[key];
    AggregatedRelevance agg;
    agg.method = static_cast<Method>(key.first);
    agg.cluster_id = key.second;
    agg.scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(entries.size()));
    for (const auto& [f, s] : entries) {
      if (f >= entries.size()) throw PipelineError("aggregate", "load_aggregates", "feature index out of range");
      agg.scores(static_cast<Eigen::Index>(f)) = s;
    }
    if (agg.method == Method::kModeMode) {
      agg.instance_count = static_cast<std::size_t>(std::llround(agg.scores.sum()));
      counts[agg.cluster_id] = agg.instance_count;
    }
    out.push_back(std::move(agg));
  }
  for (auto& agg : out) {
    if (agg.method == Method::kMedian && counts.count(agg.cluster_id)) agg.instance_count = counts[agg.cluster_id];
  }
  return out;
}

void write_changepoints(const std::vector<ChangePointResult>& results, const std::filesystem::path& path) {
  json doc = json::array();
  for (const auto& r : results) {
    const std::size_t dim = r.curve.permutation.size();
    json entry;
    entry["cluster_id"] = r.curve.cluster_id;
    entry["method"] = to_string(r.curve.method);
    entry["candidates"] = r.candidates;
    entry["posterior"] = std::vector<double>(r.posterior.begin(), r.posterior.end());
    entry["map_index"] = r.map_index;
    std::vector<std::string> sorted_features;
    for (std::size_t f : r.curve.permutation) sorted_features.push_back(feature_label(f, dim));
    entry["sorted_features"] = sorted_features;
    entry["sorted_scores"] = std::vector<double>(r.curve.sorted_scores.begin(), r.curve.sorted_scores.end());
    std::vector<std::string> relevant;
    for (std::size_t f : select_relevant(r)) relevant.push_back(feature_label(f, dim));
    entry["relevant_features"] = relevant;
    doc.push_back(entry);
  }
  std::ofstream out(path);
  if (!out) throw PipelineError("aggregate", "write_changepoints", "cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

std::vector<ChangePointResult> load_changepoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PipelineError("aggregate", "load_changepoints", "cannot open '" + path.string() + "'");
  try {
    const json doc = json::parse(in);
    std::vector<ChangePointResult> out;
    for (const auto& entry : doc) {
      ChangePointResult r;
      r.curve.cluster_id = entry.at("cluster_id").get<int>();
      r.curve.method = parse_method(entry.at("method").get<std::string>());
      const auto names = entry.at("sorted_features").get<std::vector<std::string>>();
      const auto scores = entry.at("sorted_scores").get<std::vector<double>>();
      if (names.size() != scores.size()) throw std::runtime_error("sorted arrays differ in length");
      for (const auto& name : names) {
        auto f = parse_feature_name(name);
        if (!f && name.size() > 1 && name[0] == 'x') f = std::stoul(name.substr(1));
        if (!f) throw std::runtime_error("unknown feature '" + name + "'");
        r.curve.permutation.push_back(*f);
      }
      r.curve.sorted_scores = Eigen::Map<const Eigen::VectorXd>(scores.data(), static_cast<Eigen::Index>(scores.size()));
      r.candidates = entry.at("candidates").get<std::vector<int>>();
      const auto post = entry.at("posterior").get<std::vector<double>>();
      r.posterior = Eigen::Map<const Eigen::VectorXd>(post.data(), static_cast<Eigen::Index>(post.size()));
      r.map_index = entry.at("map_index").get<int>();
      r.relevant_mask.assign(names.size(), false);
      for (std::size_t p = static_cast<std::size_t>(r.map_index); p < names.size(); ++p) {
        r.relevant_mask[r.curve.permutation[p]] = true;
      }
      out.push_back(std::move(r));
    }
    return out;
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError("aggregate", "load_changepoints", e.what());
  }
}

void write_elbow(const ChangePointResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PipelineError("aggregate", "write_elbow", "cannot write '" + path.string() + "'");
  csv::write_row(out, {"rank", "feature", "score", "is_relevant"});
  const std::size_t dim = result.curve.permutation.size();
  for (std::size_t p = 0; p < dim; ++p) {
    const std::size_t f = result.curve.permutation[p];
    csv::write_row(out, {std::to_string(p), feature_label(f, dim),
                         csv::format_double(result.curve.sorted_scores(static_cast<Eigen::Index>(p))),
                         result.relevant_mask[f] ? "1" : "0"});
  }
}

void write_relevant_mask(const std::vector<ChangePointResult>& results, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PipelineError("aggregate", "write_relevant_mask", "cannot write '" + path.string() + "'");
  if (results.empty()) return;
  const std::size_t dim = results.front().relevant_mask.size();
  std::vector<std::string> row{"cluster_id"};
  for (std::size_t f = 0; f < dim; ++f) row.push_back(feature_label(f, dim));
  csv::write_row(out, row);
  for (const auto& r : results) {
    row.assign(1, std::to_string(r.curve.cluster_id));
    for (bool b : r.relevant_mask) row.push_back(b ? "1" : "0");
    csv::write_row(out, row);
  }
}

}  // namespace mstate::aggregate
