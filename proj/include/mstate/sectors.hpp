#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

namespace mstate {

/// The ten GICS sectors, in the column order used throughout the pipeline.
enum class Sector : std::size_t { E, M, F, CS, CD, U, T, IT, I, HC };

inline constexpr std::size_t kSectorCount = 10;
inline constexpr std::size_t kFeatureCount = kSectorCount * (kSectorCount - 1) / 2;

inline constexpr std::array<std::string_view, kSectorCount> kSectorLabels = {
    "E", "M", "F", "CS", "CD", "U", "T", "IT", "I", "HC"};

std::string_view sector_label(Sector s);
std::optional<Sector> parse_sector(std::string_view label);

/// Sector pair (i, j), i < j, at a position of the row-major upper triangle:
/// 0 -> (E,M), 1 -> (E,F), ..., 44 -> (I,HC).
std::pair<std::size_t, std::size_t> feature_pair(std::size_t feature);
std::size_t feature_index(std::size_t i, std::size_t j);

/// Column name of a feature, e.g. "E_M".
std::string feature_name(std::size_t feature);
std::optional<std::size_t> parse_feature_name(std::string_view name);

}  // namespace mstate
