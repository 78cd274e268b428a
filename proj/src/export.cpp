#include "tqd/export.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tqd/errors.hpp"
#include "tqd/format.hpp"

namespace tqd {

void write_map_csv(const std::filesystem::path& path, const Tensor& map) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t rows = map.rows(), cols = map.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) out << ",";
      out << format_double(map(i, j));
    }
    out << "\n";
  }
}

Tensor read_map_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) {
      std::vector<double> row;
      std::stringstream cells(line);
      std::string cell;
      while (std::getline(cells, cell, ',')) {
        try {
          row.push_back(parse_double(cell));
        } catch (const ParseError&) {
          throw ParseError("bad map entry '" + cell + "'", offset);
        }
      }
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw ParseError("ragged map row", offset);
      }
      rows.push_back(std::move(row));
    }
    offset += line.size() + 1;
  }
  if (rows.empty()) throw ParseError("empty map file", 0);
  return Tensor::matrix(rows);
}

std::vector<std::uint8_t> map_to_pixels(const Tensor& map) {
  const auto values = map.data();
  const double max_entry =
      values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  std::vector<std::uint8_t> pixels(values.size(), 0);
  if (!(max_entry > 0.0)) return pixels;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double level = std::round(255.0 * std::max(values[i], 0.0) / max_entry);
    pixels[i] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 255.0));
  }
  return pixels;
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  const auto pixels = map_to_pixels(map);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << map.cols() << " " << map.rows() << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

std::string clip_table_csv(const ClipAssessment& a) {
  std::ostringstream out;
  out << "clip_index,weight,score,contribution,running_total\n";
  double running = 0.0, weight_sum = 0.0;
  for (std::size_t k = 0; k < a.weights.size(); ++k) {
    const double contribution = a.weights[k] * a.scores[k];
    running += contribution;
    weight_sum += a.weights[k];
    out << k << "," << format_double(a.weights[k]) << ","
        << format_double(a.scores[k]) << "," << format_double(contribution)
        << "," << format_double(running) << "\n";
  }
  out << "total," << format_double(weight_sum) << ",,"
      << format_double(a.final_score) << "," << format_double(running) << "\n";
  return out.str();
}

}  // namespace tqd
