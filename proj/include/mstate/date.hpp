#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace mstate {

using Date = std::chrono::year_month_day;

/// Strict ISO-8601 calendar date (YYYY-MM-DD). Returns nullopt on anything else.
std::optional<Date> parse_date(std::string_view text);

std::string format_date(const Date& date);

}  // namespace mstate
