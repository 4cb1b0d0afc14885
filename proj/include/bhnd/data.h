#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bhnd/tensor.h"

namespace bhnd::data {

enum class Split { train, test, validation };
std::string to_string(Split split);

/// unit: x / 255 in [0, 1]; symmetric: x / 127.5 - 1 in [-1, 1].
enum class Rescale { unit, symmetric };

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::int64_t kImageSize = 32;

/// Byte images as stored on disk, before padding and rescaling.
struct RawImages {
  std::int64_t count = 0;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

struct RawDataset {
  RawImages images;
  std::vector<std::uint8_t> labels;
};

/// Decoded IDX content. Errors report the byte offset where parsing failed.
RawImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

/// Reads a whole file; gzip-compressed files are inflated transparently.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Loads an image/label IDX pair; counts must agree.
RawDataset load_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path);

/// Zero-pads every image to 32x32, centring it (odd margins put the extra
/// pixel on the bottom/right). 32x32 input passes through unchanged.
RawImages pad_to_32(const RawImages& images);

/// One byte value (or any value in [0, 255]) mapped to the requested range.
float rescale_pixel(double value, Rescale mode);

/// Float images [count, 1, rows, cols] in the requested range.
Tensor<float> rescale(const RawImages& images, Rescale mode);

struct Dataset {
  Tensor<float> images;  // [count, 1, 32, 32]
  std::vector<int> labels;
  Split split = Split::train;
  Rescale range = Rescale::unit;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  Dataset subset(std::span<const std::int64_t> indices) const;
  Dataset slice(std::int64_t begin, std::int64_t end) const;
  static Dataset concat(const Dataset& a, const Dataset& b);
};

/// load_idx -> pad_to_32 -> rescale.
Dataset make_dataset(const RawDataset& raw, Split split, Rescale mode);

/// Standard MNIST file names inside `dir`, with or without a .gz suffix.
/// Split::train reads train-*, Split::test reads t10k-*.
Dataset load_split(const std::filesystem::path& dir, Split split, Rescale mode);

Tensor<float> one_hot(int label, int classes);
/// [labels.size(), classes].
Tensor<float> one_hot(std::span<const int> labels, int classes);

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::int64_t> indices;
};

Batch gather(const Dataset& dataset, std::span<const std::int64_t> indices);

/// Reproducible mini-batch order. Epoch e uses a Fisher-Yates permutation
/// drawn from Rng(seed, streams::batch_order, e); batch k of the run is
/// addressable directly, which is what makes resume exact.
class BatchIterator {
 public:
  BatchIterator(std::int64_t dataset_size, std::int64_t batch_size, std::uint64_t seed, bool drop_last);

  std::int64_t batches_per_epoch() const { return batches_per_epoch_; }
  std::vector<std::int64_t> batch(std::int64_t index);
  std::vector<std::int64_t> next() { return batch(cursor_++); }
  void seek(std::int64_t index) { cursor_ = index; }
  std::int64_t position() const { return cursor_; }

 private:
  const std::vector<std::int64_t>& permutation(std::int64_t epoch);

  std::int64_t size_, batch_size_;
  std::uint64_t seed_;
  bool drop_last_;
  std::int64_t batches_per_epoch_;
  std::int64_t cursor_ = 0;
  std::int64_t cached_epoch_ = -1;
  std::vector<std::int64_t> cached_permutation_;
};

}  // namespace bhnd::data
