#include "bhnd/report.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bhnd/checkpoint.h"

#ifndef BHND_BUILD_ID
#define BHND_BUILD_ID "unknown"
#endif

namespace bhnd::io {

const char* build_id() { return BHND_BUILD_ID; }

namespace {

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path, const char* header) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(file, line) || line != header) {
    throw FormatError(path.string() + ": expected header '" + header + "'");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(file, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 4) throw FormatError(path.string() + ": malformed row '" + line + "'");
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

std::string format_metrics_csv(const RecognizerMetrics& metrics) {
  std::string out = std::string(kRecognizerCsvHeader) + "\n";
  for (const auto& r : metrics) {
    out += std::to_string(r.step) + "," + r.split + "," + number(r.loss) + "," + number(r.accuracy) + "\n";
  }
  return out;
}

std::string format_metrics_csv(const SganMetrics& metrics) {
  std::string out = std::string(kSganCsvHeader) + "\n";
  for (const auto& r : metrics) {
    out += std::to_string(r.step) + "," + number(r.d_loss) + "," + number(r.d_accuracy) + "," + number(r.g_loss) +
           "\n";
  }
  return out;
}

void write_metrics_csv(const RecognizerMetrics& metrics, const std::filesystem::path& path) {
  write_file_atomic(path, format_metrics_csv(metrics));
}

void write_metrics_csv(const SganMetrics& metrics, const std::filesystem::path& path) {
  write_file_atomic(path, format_metrics_csv(metrics));
}

RecognizerMetrics read_recognizer_csv(const std::filesystem::path& path) {
  RecognizerMetrics out;
  for (const auto& f : read_csv_rows(path, kRecognizerCsvHeader)) {
    out.push_back({std::stoll(f[0]), f[1], std::stod(f[2]), std::stod(f[3])});
  }
  return out;
}

SganMetrics read_sgan_csv(const std::filesystem::path& path) {
  SganMetrics out;
  for (const auto& f : read_csv_rows(path, kSganCsvHeader)) {
    out.push_back({std::stoll(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
  }
  return out;
}

GridGeometry grid_geometry(std::int64_t count, std::int64_t tile_h, std::int64_t tile_w, std::int64_t columns) {
  if (count < 1) throw ContractError("image grid needs at least one image");
  if (columns < 1) throw ContractError("image grid needs at least one column");
  const std::int64_t cols = std::min(columns, count);
  const std::int64_t rows = (count + columns - 1) / columns;
  return {cols * tile_w + (cols - 1) * kGridGutter, rows * tile_h + (rows - 1) * kGridGutter};
}

std::vector<std::uint8_t> encode_image_grid(const Tensor<float>& images, std::int64_t columns) {
  if (images.ndim() != 4 || images.dim(1) != 1) {
    throw DimensionError("image grid expects [N,1,H,W], got " + to_string(images.shape()));
  }
  const std::int64_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  const auto geo = grid_geometry(n, h, w, columns);
  const std::string header = "P5\n" + std::to_string(geo.width) + " " + std::to_string(geo.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t origin = out.size();
  out.resize(origin + static_cast<std::size_t>(geo.width * geo.height), 0);
  const auto px = images.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t top = (i / columns) * (h + kGridGutter);
    const std::int64_t left = (i % columns) * (w + kGridGutter);
    for (std::int64_t r = 0; r < h; ++r) {
      for (std::int64_t c = 0; c < w; ++c) {
        const double v = px[static_cast<std::size_t>((i * h + r) * w + c)];
        const double level = std::isfinite(v) ? std::clamp(std::round((v + 1.0) / 2.0 * 255.0), 0.0, 255.0) : 0.0;
        out[origin + static_cast<std::size_t>((top + r) * geo.width + left + c)] = static_cast<std::uint8_t>(level);
      }
    }
  }
  return out;
}

void write_image_grid(const Tensor<float>& images, std::int64_t columns, const std::filesystem::path& path) {
  write_file_atomic(path, encode_image_grid(images, columns));
}

}  // namespace bhnd::io
