#pragma once

#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mstate/date.hpp"
#include "mstate/sectors.hpp"

namespace mstate::ingest {

/// Marker for a missing price cell.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return v != v; }

/// Daily closing prices per ticker. Rows are dates (strictly increasing),
/// columns are tickers; missing cells hold kMissing.
struct PriceTable {
  std::vector<Date> dates;
  std::vector<std::string> tickers;
  Eigen::MatrixXd prices;

  /// Fraction of non-missing cells in a ticker's column.
  double coverage(Eigen::Index ticker) const;
  Eigen::Index missing_count() const;
};

struct SectorMap {
  std::map<std::string, Sector> assignments;
};

/// One aggregated price column per sector, no missing cells.
struct SectorPriceTable {
  std::vector<Date> dates;
  Eigen::MatrixXd prices;  // |dates| x kSectorCount
};

/// Simple returns R_t = (S_{t+1} - S_t) / S_t, labelled with the date of S_{t+1}.
struct ReturnTable {
  std::vector<Date> dates;
  Eigen::MatrixXd returns;  // (T-1) x kSectorCount
};

/// Reads the price CSV (`date,<ticker>,...`). Rows are sorted by date;
/// empty, unparsable or non-positive cells become missing.
PriceTable load_prices(const std::filesystem::path& path);
void write_prices(const PriceTable& table, const std::filesystem::path& path);

/// Reads a `ticker,sector` CSV with the ten sector abbreviations.
SectorMap load_sector_map(const std::filesystem::path& path);
void write_sector_map(const SectorMap& map, const std::filesystem::path& path);

/// Keeps tickers whose non-missing fraction is >= min_coverage, in order.
PriceTable filter_coverage(const PriceTable& table, double min_coverage);

/// Linear interpolation over the date index for interior gaps, constant
/// extrapolation from the nearest present value at the edges.
PriceTable interpolate_missing(const PriceTable& table);

/// Sector price = sum of member ticker prices per date.
SectorPriceTable aggregate_sectors(const PriceTable& table, const SectorMap& map);

ReturnTable compute_returns(const SectorPriceTable& table);

void write_sector_prices(const SectorPriceTable& table, const std::filesystem::path& path);
void write_returns(const ReturnTable& table, const std::filesystem::path& path);
ReturnTable load_returns(const std::filesystem::path& path);

}  // namespace mstate::ingest
