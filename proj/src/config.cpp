#include "mstate/config.hpp"

#include <fstream>
#include <set>

#include "mstate/aggregate.hpp"
#include "mstate/clustering.hpp"
#include "mstate/error.hpp"
#include "mstate/relevance.hpp"

namespace mstate::config {

namespace {

using json = nlohmann::json;

[[noreturn]] void invalid(const std::string& detail) { throw PipelineError("config", "validate", detail); }

void reject_unknown(const json& object, const std::set<std::string>& allowed, const std::string& where) {
  if (!object.is_object()) throw PipelineError("config", "load", where + " must be an object");
  for (const auto& item : object.items()) {
    if (!allowed.count(item.key())) {
      throw PipelineError("config", "load", "unknown key '" + where + (where.empty() ? "" : ".") + item.key() + "'");
    }
  }
}

template <typename T>
void read(const json& object, const char* key, T& target) {
  if (object.contains(key)) target = object.at(key).get<T>();
}

}  // namespace

void PipelineConfig::validate() const {
  if (!(min_coverage > 0.0 && min_coverage <= 1.0)) invalid("ingest.min_coverage must lie in (0, 1]");
  if (n < 2) invalid("preprocess.n must be >= 2");
  if (tau < 3) invalid("preprocess.tau must be >= 3");
  if (k < 2) invalid("cluster.k must be >= 2");
  if (!(kmeans_tol >= 0.0)) invalid("cluster.tol must be >= 0");
  if (kmeans_max_iter < 1) invalid("cluster.max_iter must be >= 1");
  if (runs < 1) invalid("surrogate.runs must be >= 1");
  if (epochs < 0) invalid("surrogate.epochs must be >= 0");
  if (width_divisor < 1) invalid("surrogate.width_divisor must be >= 1");
  if (batch_size < 0) invalid("surrogate.batch_size must be >= 0");
  if (!(learning_rate > 0.0)) invalid("surrogate.learning_rate must be > 0");
  if (optimizer != "adam" && optimizer != "sgd") invalid("surrogate.optimizer must be 'adam' or 'sgd'");
  if (threads < 0) invalid("surrogate.threads must be >= 0");
  if (synth_tickers_per_sector < 1) invalid("synth.tickers_per_sector must be >= 1");
  if (synth_days < 2) invalid("synth.days must be >= 2");
  if (!(synth_missing_probability >= 0.0 && synth_missing_probability <= 0.05)) {
    invalid("synth.missing_probability must lie in [0, 0.05]");
  }
  try {
    clustering::parse_init(kmeans_init);
    relevance::parse_beta_scope(beta_scope);
    aggregate::parse_method(method);
  } catch (const PipelineError& e) {
    invalid(e.what());
  }
}

std::uint64_t PipelineConfig::effective_kmeans_seed() const {
  return kmeans_seed ? *kmeans_seed : derive_seed(seed, "cluster");
}

std::uint64_t derive_seed(std::uint64_t global, std::string_view stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stage) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = global ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

PipelineConfig apply_json(PipelineConfig c, const json& doc) {
  try {
    reject_unknown(doc, {"seed", "paths", "ingest", "preprocess", "cluster", "explain", "aggregate", "surrogate", "synth"},
                   "");
    read(doc, "seed", c.seed);
    if (doc.contains("paths")) {
      const auto& p = doc.at("paths");
      reject_unknown(p, {"prices", "sector_map", "out"}, "paths");
      if (p.contains("prices")) c.prices = p.at("prices").get<std::string>();
      if (p.contains("sector_map")) c.sector_map = p.at("sector_map").get<std::string>();
      if (p.contains("out")) c.out = p.at("out").get<std::string>();
    }
    if (doc.contains("ingest")) {
      reject_unknown(doc.at("ingest"), {"min_coverage"}, "ingest");
      read(doc.at("ingest"), "min_coverage", c.min_coverage);
    }
    if (doc.contains("preprocess")) {
      const auto& p = doc.at("preprocess");
      reject_unknown(p, {"n", "tau"}, "preprocess");
      read(p, "n", c.n);
      read(p, "tau", c.tau);
    }
    if (doc.contains("cluster")) {
      const auto& p = doc.at("cluster");
      reject_unknown(p, {"k", "seed", "tol", "max_iter", "init"}, "cluster");
      read(p, "k", c.k);
      if (p.contains("seed")) {
        if (p.at("seed").is_null()) {
          c.kmeans_seed.reset();
        } else {
          c.kmeans_seed = p.at("seed").get<std::uint64_t>();
        }
      }
      read(p, "tol", c.kmeans_tol);
      read(p, "max_iter", c.kmeans_max_iter);
      read(p, "init", c.kmeans_init);
    }
    if (doc.contains("explain")) {
      reject_unknown(doc.at("explain"), {"beta_scope"}, "explain");
      read(doc.at("explain"), "beta_scope", c.beta_scope);
    }
    if (doc.contains("aggregate")) {
      reject_unknown(doc.at("aggregate"), {"method"}, "aggregate");
      read(doc.at("aggregate"), "method", c.method);
    }
    if (doc.contains("surrogate")) {
      const auto& p = doc.at("surrogate");
      reject_unknown(p, {"runs", "epochs", "width_divisor", "batch_size", "learning_rate", "optimizer", "threads"},
                     "surrogate");
      read(p, "runs", c.runs);
      read(p, "epochs", c.epochs);
      read(p, "width_divisor", c.width_divisor);
      read(p, "batch_size", c.batch_size);
      read(p, "learning_rate", c.learning_rate);
      read(p, "optimizer", c.optimizer);
      read(p, "threads", c.threads);
    }
    if (doc.contains("synth")) {
      const auto& p = doc.at("synth");
      reject_unknown(p, {"tickers_per_sector", "days", "missing_probability"}, "synth");
      read(p, "tickers_per_sector", c.synth_tickers_per_sector);
      read(p, "days", c.synth_days);
      read(p, "missing_probability", c.synth_missing_probability);
    }
  } catch (const json::exception& e) {
    throw PipelineError("config", "load", e.what());
  }
  return c;
}

PipelineConfig load(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw PipelineError("config", "load", "cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw PipelineError("config", "load", path.string() + ": " + e.what());
  }
  return apply_json(std::move(base), doc);
}

json to_json(const PipelineConfig& c) {
  json doc;
  doc["seed"] = c.seed;
  doc["paths"] = {{"prices", c.prices.string()}, {"sector_map", c.sector_map.string()}, {"out", c.out.string()}};
  doc["ingest"] = {{"min_coverage", c.min_coverage}};
  doc["preprocess"] = {{"n", c.n}, {"tau", c.tau}};
  doc["cluster"] = {{"k", c.k},
                    {"seed", c.effective_kmeans_seed()},
                    {"tol", c.kmeans_tol},
                    {"max_iter", c.kmeans_max_iter},
                    {"init", c.kmeans_init}};
  doc["explain"] = {{"beta_scope", c.beta_scope}};
  doc["aggregate"] = {{"method", c.method}};
  doc["surrogate"] = {{"runs", c.runs},
                      {"epochs", c.epochs},
                      {"width_divisor", c.width_divisor},
                      {"batch_size", c.batch_size},
                      {"learning_rate", c.learning_rate},
                      {"optimizer", c.optimizer},
                      {"threads", c.threads}};
  doc["synth"] = {{"tickers_per_sector", c.synth_tickers_per_sector},
                  {"days", c.synth_days},
                  {"missing_probability", c.synth_missing_probability}};
  return doc;
}

void write(const PipelineConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw PipelineError("config", "write", "cannot write '" + path.string() + "'");
  out << to_json(config).dump(2) << '\n';
}

}  // namespace mstate::config
