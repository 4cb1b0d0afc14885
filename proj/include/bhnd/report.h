#pragma once

#include <filesystem>
#include <string>

#include "bhnd/metrics.h"
#include "bhnd/tensor.h"

namespace bhnd::io {

inline constexpr const char* kRecognizerCsvHeader = "step,split,loss,accuracy";
inline constexpr const char* kSganCsvHeader = "step,d_loss,d_accuracy,g_loss";

/// CSV text, values printed with %.8g.
std::string format_metrics_csv(const RecognizerMetrics& metrics);
std::string format_metrics_csv(const SganMetrics& metrics);
void write_metrics_csv(const RecognizerMetrics& metrics, const std::filesystem::path& path);
void write_metrics_csv(const SganMetrics& metrics, const std::filesystem::path& path);

/// Rows of a metrics CSV written by this module, for resuming into the same
/// output directory.
RecognizerMetrics read_recognizer_csv(const std::filesystem::path& path);
SganMetrics read_sgan_csv(const std::filesystem::path& path);

struct GridGeometry {
  std::int64_t width = 0;
  std::int64_t height = 0;
};

inline constexpr std::int64_t kGridGutter = 2;

GridGeometry grid_geometry(std::int64_t count, std::int64_t tile_h, std::int64_t tile_w, std::int64_t columns);

/// Binary PGM of images[N,1,H,W] in [-1,1], tiled row-major with black
/// gutters; pixel = round((v + 1) / 2 * 255) clamped to [0, 255].
std::vector<std::uint8_t> encode_image_grid(const Tensor<float>& images, std::int64_t columns);
void write_image_grid(const Tensor<float>& images, std::int64_t columns, const std::filesystem::path& path);

/// Compile-time identifier of this build (revision, compiler, build type).
const char* build_id();

}  // namespace bhnd::io
