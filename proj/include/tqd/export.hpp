#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tqd/head.hpp"
#include "tqd/tensor.hpp"

namespace tqd {

/// K x K map as CSV, one row per line, shortest round-trip decimals.
void write_map_csv(const std::filesystem::path& path, const Tensor& map);
Tensor read_map_csv(const std::filesystem::path& path);

/// Gray levels round(255 * entry / max_entry), row-major. An all-zero map
/// yields all-zero pixels.
std::vector<std::uint8_t> map_to_pixels(const Tensor& map);
/// Binary (P5) 8-bit PGM of map_to_pixels(map).
void write_pgm(const std::filesystem::path& path, const Tensor& map);

/// Columns: clip_index, weight, score, contribution (weight * score),
/// running_total; a final "total" row carries the weight sum and the final
/// score.
std::string clip_table_csv(const ClipAssessment& assessment);

}  // namespace tqd
