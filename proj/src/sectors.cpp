#include "mstate/sectors.hpp"

#include <stdexcept>

namespace mstate {

std::string_view sector_label(Sector s) { return kSectorLabels.at(static_cast<std::size_t>(s)); }

std::optional<Sector> parse_sector(std::string_view label) {
  for (std::size_t i = 0; i < kSectorCount; ++i) {
    if (kSectorLabels[i] == label) return static_cast<Sector>(i);
  }
  return std::nullopt;
}

std::pair<std::size_t, std::size_t> feature_pair(std::size_t feature) {
  if (feature >= kFeatureCount) throw std::out_of_range("feature index out of range");
  std::size_t i = 0;
  std::size_t row_len = kSectorCount - 1;
  while (feature >= row_len) {
    feature -= row_len;
    ++i;
    --row_len;
  }
  return {i, i + 1 + feature};
}

std::size_t feature_index(std::size_t i, std::size_t j) {
  if (i > j) std::swap(i, j);
  if (i == j || j >= kSectorCount) throw std::out_of_range("invalid sector pair");
  // Entries in rows 0..i-1 precede row i.
  const std::size_t before = i * (2 * kSectorCount - i - 1) / 2;
  return before + (j - i - 1);
}

std::string feature_name(std::size_t feature) {
  const auto [i, j] = feature_pair(feature);
  return std::string(kSectorLabels[i]) + "_" + std::string(kSectorLabels[j]);
}

std::optional<std::size_t> parse_feature_name(std::string_view name) {
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    if (feature_name(f) == name) return f;
  }
  return std::nullopt;
}

}  // namespace mstate
