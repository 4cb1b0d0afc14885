#include "bhnd/data.h"

#include <zlib.h>

#include <numeric>

#include "bhnd/rng.h"

namespace bhnd::data {

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::validation: return "validation";
  }
  return "unknown";
}

namespace {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[offset_ + static_cast<std::size_t>(i)];
    offset_ += 4;
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.subspan(offset_, n);
    offset_ += n;
    return out;
  }

  std::size_t offset() const { return offset_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - offset_ < n) {
      throw FormatError("IDX: truncated " + std::string(what) + " at byte offset " + std::to_string(bytes_.size()) +
                        " (needed " + std::to_string(n) + " bytes from offset " + std::to_string(offset_) + ")");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

void check_magic(std::uint32_t observed, std::uint32_t expected) {
  if (observed != expected) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08X (expected 0x%08X)", observed, expected);
    throw FormatError(std::string("IDX: bad magic ") + buf);
  }
}

}  // namespace

RawImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  check_magic(in.u32("magic"), kIdxImagesMagic);
  RawImages images;
  images.count = in.u32("image count");
  images.rows = in.u32("row count");
  images.cols = in.u32("column count");
  const auto payload = in.take(static_cast<std::size_t>(images.count * images.rows * images.cols), "image payload");
  images.pixels.assign(payload.begin(), payload.end());
  return images;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  check_magic(in.u32("magic"), kIdxLabelsMagic);
  const auto count = in.u32("label count");
  const auto payload = in.take(count, "label payload");
  return {payload.begin(), payload.end()};
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  gzFile file = gzopen(path.c_str(), "rb");
  if (!file) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes;
  std::uint8_t chunk[1 << 16];
  int n;
  while ((n = gzread(file, chunk, sizeof chunk)) > 0) bytes.insert(bytes.end(), chunk, chunk + n);
  int errnum = 0;
  const char* message = gzerror(file, &errnum);
  const std::string error = n < 0 ? std::string(message) : std::string();
  gzclose(file);
  if (n < 0) throw IoError("read failed for " + path.string() + ": " + error);
  return bytes;
}

RawDataset load_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path) {
  RawDataset out;
  try {
    out.images = parse_idx_images(read_file_bytes(image_path));
  } catch (const FormatError& e) {
    throw FormatError(image_path.string() + ": " + e.what());
  }
  try {
    out.labels = parse_idx_labels(read_file_bytes(label_path));
  } catch (const FormatError& e) {
    throw FormatError(label_path.string() + ": " + e.what());
  }
  if (static_cast<std::int64_t>(out.labels.size()) != out.images.count) {
    throw FormatError("IDX count mismatch: " + std::to_string(out.images.count) + " images in " +
                      image_path.string() + " but " + std::to_string(out.labels.size()) + " labels in " +
                      label_path.string());
  }
  return out;
}

RawImages pad_to_32(const RawImages& images) {
  if (images.rows > kImageSize || images.cols > kImageSize) {
    throw ContractError("pad_to_32: images are " + std::to_string(images.rows) + "x" + std::to_string(images.cols) +
                        ", larger than 32x32");
  }
  if (images.rows == kImageSize && images.cols == kImageSize) return images;
  const std::int64_t top = (kImageSize - images.rows) / 2;
  const std::int64_t left = (kImageSize - images.cols) / 2;
  RawImages out{images.count, kImageSize, kImageSize,
                std::vector<std::uint8_t>(static_cast<std::size_t>(images.count * kImageSize * kImageSize), 0)};
  for (std::int64_t i = 0; i < images.count; ++i) {
    for (std::int64_t r = 0; r < images.rows; ++r) {
      const auto* src = images.pixels.data() + (i * images.rows + r) * images.cols;
      auto* dst = out.pixels.data() + (i * kImageSize + top + r) * kImageSize + left;
      std::copy(src, src + images.cols, dst);
    }
  }
  return out;
}

float rescale_pixel(double value, Rescale mode) {
  return static_cast<float>(mode == Rescale::unit ? value / 255.0 : value / 127.5 - 1.0);
}

Tensor<float> rescale(const RawImages& images, Rescale mode) {
  std::vector<float> values(images.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = rescale_pixel(images.pixels[i], mode);
  return Tensor<float>::from({images.count, 1, images.rows, images.cols}, std::move(values));
}

Dataset Dataset::subset(std::span<const std::int64_t> indices) const {
  Batch b = gather(*this, indices);
  return {b.images, b.labels, split, range};
}

Dataset Dataset::slice(std::int64_t begin, std::int64_t end) const {
  if (begin < 0 || end > size() || begin >= end) {
    throw ContractError("Dataset::slice: [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") outside dataset of " + std::to_string(size()));
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(end - begin));
  std::iota(idx.begin(), idx.end(), begin);
  return subset(idx);
}

Dataset Dataset::concat(const Dataset& a, const Dataset& b) {
  if (a.range != b.range) throw ContractError("Dataset::concat: pixel ranges differ");
  std::vector<float> values(a.images.data().begin(), a.images.data().end());
  values.insert(values.end(), b.images.data().begin(), b.images.data().end());
  Dataset out;
  out.images = Tensor<float>::from({a.size() + b.size(), 1, kImageSize, kImageSize}, std::move(values));
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.split = a.split;
  out.range = a.range;
  return out;
}

Dataset make_dataset(const RawDataset& raw, Split split, Rescale mode) {
  Dataset ds;
  ds.images = rescale(pad_to_32(raw.images), mode);
  ds.labels.assign(raw.labels.begin(), raw.labels.end());
  for (int label : ds.labels) {
    if (label < 0 || label > 9) throw FormatError("label " + std::to_string(label) + " outside [0, 9]");
  }
  ds.split = split;
  ds.range = mode;
  return ds;
}

namespace {
std::filesystem::path find_idx(const std::filesystem::path& dir, const std::string& stem) {
  for (const auto& candidate : {dir / stem, dir / (stem + ".gz")}) {
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw IoError("missing IDX file " + (dir / stem).string() + "[.gz]");
}
}  // namespace

Dataset load_split(const std::filesystem::path& dir, Split split, Rescale mode) {
  const std::string prefix = split == Split::test ? "t10k" : "train";
  const auto raw = load_idx(find_idx(dir, prefix + "-images-idx3-ubyte"), find_idx(dir, prefix + "-labels-idx1-ubyte"));
  return make_dataset(raw, split, mode);
}

Tensor<float> one_hot(int label, int classes) {
  if (classes < 1 || label < 0 || label >= classes) {
    throw ContractError("one_hot: label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
  }
  auto t = Tensor<float>::zeros({classes});
  t.mutable_data()[static_cast<std::size_t>(label)] = 1.0f;
  return t;
}

Tensor<float> one_hot(std::span<const int> labels, int classes) {
  std::vector<float> values(labels.size() * static_cast<std::size_t>(classes), 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw ContractError("one_hot: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) +
                          ")");
    }
    values[i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels[i])] = 1.0f;
  }
  return Tensor<float>::from({static_cast<std::int64_t>(labels.size()), classes}, std::move(values));
}

Batch gather(const Dataset& dataset, std::span<const std::int64_t> indices) {
  if (indices.empty()) throw ContractError("gather: empty index list");
  const std::int64_t pixels = dataset.images.numel() / dataset.size();
  const auto src = dataset.images.data();
  std::vector<float> values(indices.size() * static_cast<std::size_t>(pixels));
  Batch batch;
  batch.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto idx = indices[i];
    if (idx < 0 || idx >= dataset.size()) throw ContractError("gather: index " + std::to_string(idx) + " out of range");
    std::copy_n(src.begin() + idx * pixels, pixels, values.begin() + static_cast<std::ptrdiff_t>(i) * pixels);
    batch.labels.push_back(dataset.labels[static_cast<std::size_t>(idx)]);
  }
  Shape shape = dataset.images.shape();
  shape[0] = static_cast<std::int64_t>(indices.size());
  batch.images = Tensor<float>::from(shape, std::move(values));
  batch.indices.assign(indices.begin(), indices.end());
  return batch;
}

BatchIterator::BatchIterator(std::int64_t dataset_size, std::int64_t batch_size, std::uint64_t seed, bool drop_last)
    : size_(dataset_size), batch_size_(batch_size), seed_(seed), drop_last_(drop_last) {
  if (dataset_size < 1) throw ContractError("batch_iter: empty dataset");
  if (batch_size < 1) throw ContractError("batch_iter: batch size must be >= 1");
  batches_per_epoch_ = drop_last ? dataset_size / batch_size : (dataset_size + batch_size - 1) / batch_size;
  if (batches_per_epoch_ == 0) {
    throw ContractError("batch_iter: drop_last with batch size " + std::to_string(batch_size) + " > dataset size " +
                        std::to_string(dataset_size));
  }
}

const std::vector<std::int64_t>& BatchIterator::permutation(std::int64_t epoch) {
  if (epoch != cached_epoch_) {
    cached_permutation_.resize(static_cast<std::size_t>(size_));
    std::iota(cached_permutation_.begin(), cached_permutation_.end(), 0);
    Rng rng(seed_, streams::batch_order, static_cast<std::uint64_t>(epoch));
    for (std::int64_t i = size_ - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(cached_permutation_[static_cast<std::size_t>(i)], cached_permutation_[static_cast<std::size_t>(j)]);
    }
    cached_epoch_ = epoch;
  }
  return cached_permutation_;
}

std::vector<std::int64_t> BatchIterator::batch(std::int64_t index) {
  if (index < 0) throw ContractError("batch index must be non-negative");
  const std::int64_t epoch = index / batches_per_epoch_;
  const std::int64_t begin = (index % batches_per_epoch_) * batch_size_;
  const std::int64_t end = std::min(begin + batch_size_, size_);
  const auto& perm = permutation(epoch);
  return {perm.begin() + begin, perm.begin() + end};
}

}  // namespace bhnd::data
