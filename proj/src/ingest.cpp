#include "mstate/ingest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "dated_csv.hpp"
#include "mstate/csv.hpp"
#include "mstate/error.hpp"

namespace mstate::detail {

void write_dated_matrix(const std::filesystem::path& path, const std::vector<std::string>& columns,
                        const std::vector<Date>& dates, const Eigen::MatrixXd& values) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  std::vector<std::string> row{"date"};
  row.insert(row.end(), columns.begin(), columns.end());
  csv::write_row(out, row);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    row.assign(1, format_date(dates[static_cast<std::size_t>(r)]));
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      row.push_back(v != v ? std::string() : csv::format_double(v));
    }
    csv::write_row(out, row);
  }
}

DatedMatrix read_dated_matrix(const std::filesystem::path& path,
                              const std::vector<std::string>& expected) {
  const csv::Table table = csv::read(path);
  if (table.header.empty() || table.header.front() != "date") {
    throw std::runtime_error("'" + path.string() + "': first column must be 'date'");
  }
  DatedMatrix m;
  m.columns.assign(table.header.begin() + 1, table.header.end());
  if (!expected.empty() && m.columns != expected) {
    throw std::runtime_error("'" + path.string() + "': unexpected columns");
  }
  const auto cols = static_cast<Eigen::Index>(m.columns.size());
  m.values.resize(static_cast<Eigen::Index>(table.rows.size()), cols);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    if (cells.size() != m.columns.size() + 1) {
      throw std::runtime_error("'" + path.string() + "' line " +
                               std::to_string(table.line_numbers[r]) + ": wrong cell count");
    }
    const auto date = parse_date(cells[0]);
    if (!date) {
      throw std::runtime_error("'" + path.string() + "' line " +
                               std::to_string(table.line_numbers[r]) + ": bad date '" + cells[0] +
                               "'");
    }
    m.dates.push_back(*date);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto v = csv::parse_double(cells[static_cast<std::size_t>(c) + 1]);
      m.values(static_cast<Eigen::Index>(r), c) = v ? *v : ingest::kMissing;
    }
  }
  return m;
}

}  // namespace mstate::detail

namespace mstate::ingest {

namespace {

std::vector<std::string> sector_columns() {
  return {kSectorLabels.begin(), kSectorLabels.end()};
}

}  // namespace

double PriceTable::coverage(Eigen::Index ticker) const {
  if (prices.rows() == 0) return 0.0;
  Eigen::Index present = 0;
  for (Eigen::Index r = 0; r < prices.rows(); ++r) present += is_missing(prices(r, ticker)) ? 0 : 1;
  return static_cast<double>(present) / static_cast<double>(prices.rows());
}

Eigen::Index PriceTable::missing_count() const {
  return prices.unaryExpr([](double v) -> Eigen::Index { return is_missing(v) ? 1 : 0; }).sum();
}

PriceTable load_prices(const std::filesystem::path& path) {
  csv::Table raw;
  try {
    raw = csv::read(path);
  } catch (const std::exception& e) {
    throw PipelineError("ingest", "load_prices", e.what());
  }
  if (raw.header.empty() || raw.header.front() != "date") {
    throw PipelineError("ingest", "load_prices", "malformed header: first column must be 'date'");
  }
  PriceTable table;
  table.tickers.assign(raw.header.begin() + 1, raw.header.end());
  if (table.tickers.empty()) throw PipelineError("ingest", "load_prices", "zero tickers");
  std::set<std::string> seen;
  for (const auto& t : table.tickers) {
    if (t.empty()) throw PipelineError("ingest", "load_prices", "malformed header: empty ticker name");
    if (!seen.insert(t).second) {
      throw PipelineError("ingest", "load_prices", "malformed header: duplicate ticker '" + t + "'");
    }
  }

  struct Row {
    Date date;
    std::size_t source;
  };
  std::vector<Row> order;
  order.reserve(raw.rows.size());
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& cells = raw.rows[r];
    const std::string where = "line " + std::to_string(raw.line_numbers[r]);
    if (cells.size() != table.tickers.size() + 1) {
      throw PipelineError("ingest", "load_prices", where + ": expected " +
                                                       std::to_string(table.tickers.size() + 1) +
                                                       " cells, got " + std::to_string(cells.size()));
    }
    const auto date = parse_date(cells[0]);
    if (!date) throw PipelineError("ingest", "load_prices", where + ": bad date '" + cells[0] + "'");
    order.push_back({*date, r});
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const Row& a, const Row& b) { return a.date < b.date; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i].date == order[i - 1].date) {
      throw PipelineError("ingest", "load_prices",
                          "duplicate dates (" + format_date(order[i].date) + ")");
    }
  }

  const auto rows = static_cast<Eigen::Index>(order.size());
  const auto cols = static_cast<Eigen::Index>(table.tickers.size());
  table.prices.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = order[static_cast<std::size_t>(r)];
    table.dates.push_back(row.date);
    const auto& cells = raw.rows[row.source];
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto v = csv::parse_double(cells[static_cast<std::size_t>(c) + 1]);
      table.prices(r, c) = (v && *v > 0.0 && std::isfinite(*v)) ? *v : kMissing;
    }
  }
  return table;
}

void write_prices(const PriceTable& table, const std::filesystem::path& path) {
  detail::write_dated_matrix(path, table.tickers, table.dates, table.prices);
}

SectorMap load_sector_map(const std::filesystem::path& path) {
  csv::Table raw;
  try {
    raw = csv::read(path);
  } catch (const std::exception& e) {
    throw PipelineError("ingest", "load_sector_map", e.what());
  }
  if (raw.header != std::vector<std::string>{"ticker", "sector"}) {
    throw PipelineError("ingest", "load_sector_map", "header must be 'ticker,sector'");
  }
  SectorMap map;
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& cells = raw.rows[r];
    const std::string where = "line " + std::to_string(raw.line_numbers[r]);
    if (cells.size() != 2 || cells[0].empty()) {
      throw PipelineError("ingest", "load_sector_map", where + ": malformed row");
    }
    const auto sector = parse_sector(cells[1]);
    if (!sector) {
      throw PipelineError("ingest", "load_sector_map", where + ": unknown sector '" + cells[1] + "'");
    }
    if (!map.assignments.emplace(cells[0], *sector).second) {
      throw PipelineError("ingest", "load_sector_map",
                          where + ": ticker '" + cells[0] + "' mapped twice");
    }
  }
  return map;
}

void write_sector_map(const SectorMap& map, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  csv::write_row(out, {"ticker", "sector"});
  for (const auto& [ticker, sector] : map.assignments) {
    csv::write_row(out, {ticker, std::string(sector_label(sector))});
  }
}

PriceTable filter_coverage(const PriceTable& table, double min_coverage) {
  if (!(min_coverage > 0.0 && min_coverage <= 1.0)) {
    throw PipelineError("ingest", "filter_coverage", "min_coverage must lie in (0, 1]");
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < table.prices.cols(); ++c) {
    if (table.coverage(c) >= min_coverage) keep.push_back(c);
  }
  if (keep.empty()) throw PipelineError("ingest", "filter_coverage", "empty table after filtering");

  PriceTable out;
  out.dates = table.dates;
  out.prices.resize(table.prices.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.tickers.push_back(table.tickers[static_cast<std::size_t>(keep[i])]);
    out.prices.col(static_cast<Eigen::Index>(i)) = table.prices.col(keep[i]);
  }
  return out;
}

PriceTable interpolate_missing(const PriceTable& table) {
  PriceTable out = table;
  const Eigen::Index rows = table.prices.rows();
  for (Eigen::Index c = 0; c < table.prices.cols(); ++c) {
    std::vector<Eigen::Index> present;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!is_missing(table.prices(r, c))) present.push_back(r);
    }
    if (present.size() < 2) {
      throw PipelineError("ingest", "interpolate_missing",
                          "ticker '" + table.tickers[static_cast<std::size_t>(c)] +
                              "' has fewer than 2 present values");
    }
    auto col = out.prices.col(c);
    for (Eigen::Index r = 0; r < present.front(); ++r) col(r) = col(present.front());
    for (Eigen::Index r = present.back() + 1; r < rows; ++r) col(r) = col(present.back());
    for (std::size_t p = 1; p < present.size(); ++p) {
      const Eigen::Index lo = present[p - 1];
      const Eigen::Index hi = present[p];
      const double span = static_cast<double>(hi - lo);
      for (Eigen::Index r = lo + 1; r < hi; ++r) {
        const double w = static_cast<double>(r - lo) / span;
        col(r) = (1.0 - w) * col(lo) + w * col(hi);
      }
    }
  }
  return out;
}

SectorPriceTable aggregate_sectors(const PriceTable& table, const SectorMap& map) {
  SectorPriceTable out;
  out.dates = table.dates;
  out.prices = Eigen::MatrixXd::Zero(table.prices.rows(), static_cast<Eigen::Index>(kSectorCount));
  std::array<std::size_t, kSectorCount> members{};
  for (std::size_t c = 0; c < table.tickers.size(); ++c) {
    const auto it = map.assignments.find(table.tickers[c]);
    if (it == map.assignments.end()) {
      throw PipelineError("ingest", "aggregate_sectors",
                          "unmapped ticker '" + table.tickers[c] + "'");
    }
    const auto col = table.prices.col(static_cast<Eigen::Index>(c));
    if (col.unaryExpr([](double v) { return is_missing(v) ? 1.0 : 0.0; }).sum() > 0) {
      throw PipelineError("ingest", "aggregate_sectors",
                          "ticker '" + table.tickers[c] + "' has missing prices");
    }
    const auto s = static_cast<std::size_t>(it->second);
    out.prices.col(static_cast<Eigen::Index>(s)) += col;
    ++members[s];
  }
  for (std::size_t s = 0; s < kSectorCount; ++s) {
    if (members[s] == 0) {
      throw PipelineError("ingest", "aggregate_sectors",
                          "empty sector '" + std::string(kSectorLabels[s]) + "'");
    }
  }
  return out;
}

ReturnTable compute_returns(const SectorPriceTable& table) {
  const Eigen::Index rows = table.prices.rows();
  if (rows < 2) throw PipelineError("ingest", "compute_returns", "fewer than 2 dates");
  if ((table.prices.array() <= 0.0).any() || !table.prices.allFinite()) {
    throw PipelineError("ingest", "compute_returns", "prices must be finite and positive");
  }
  ReturnTable out;
  out.dates.assign(table.dates.begin() + 1, table.dates.end());
  out.returns = (table.prices.bottomRows(rows - 1) - table.prices.topRows(rows - 1)).array() /
                table.prices.topRows(rows - 1).array();
  return out;
}

void write_sector_prices(const SectorPriceTable& table, const std::filesystem::path& path) {
  detail::write_dated_matrix(path, sector_columns(), table.dates, table.prices);
}

void write_returns(const ReturnTable& table, const std::filesystem::path& path) {
  detail::write_dated_matrix(path, sector_columns(), table.dates, table.returns);
}

ReturnTable load_returns(const std::filesystem::path& path) {
  detail::DatedMatrix m;
  try {
    m = detail::read_dated_matrix(path, sector_columns());
  } catch (const std::exception& e) {
    throw PipelineError("ingest", "load_returns", e.what());
  }
  if (!m.values.allFinite()) throw PipelineError("ingest", "load_returns", "missing return values");
  return {std::move(m.dates), std::move(m.values)};
}

}  // namespace mstate::ingest
