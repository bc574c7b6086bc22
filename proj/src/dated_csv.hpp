#pragma once

// Shared reader/writer for `date,<col>,...` numeric CSVs.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mstate/date.hpp"

namespace mstate::detail {

struct DatedMatrix {
  std::vector<Date> dates;
  std::vector<std::string> columns;
  Eigen::MatrixXd values;
};

void write_dated_matrix(const std::filesystem::path& path, const std::vector<std::string>& columns,
                        const std::vector<Date>& dates, const Eigen::MatrixXd& values);

/// Throws std::runtime_error on schema violations. When `expected` is non-empty
/// the header after `date` must match it exactly.
DatedMatrix read_dated_matrix(const std::filesystem::path& path,
                              const std::vector<std::string>& expected = {});

}  // namespace mstate::detail
