#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bhnd/models.h"
#include "bhnd/optim.h"

namespace bhnd::io {

inline constexpr char kCheckpointMagic[4] = {'B', 'H', 'N', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
/// Names under this prefix hold optimizer state.
inline constexpr const char* kOptimizerPrefix = "optim/";

enum class DType : std::uint8_t { float32 = 0, int64 = 1 };

struct CheckpointEntry {
  std::string name;
  Shape shape;
  DType dtype = DType::float32;
  std::vector<float> f32;
  std::vector<std::int64_t> i64;
};

/// Serialized form: magic, u32 version, u32 count, entries (u16 name length,
/// UTF-8 name, u8 ndim, u32 dims, u8 dtype, little-endian payload), then a
/// CRC32 of every preceding byte.
std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
/// Validates the CRC before decoding anything.
std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes);

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);
/// Writes a sibling temp file and renames it over `path`.
void write_checkpoint(const std::vector<CheckpointEntry>& entries, const std::filesystem::path& path);

/// Everything a training run needs to resume: tensors that alias live
/// parameters, buffers and optimizer slots, plus named integer counters.
class StateDict {
 public:
  void add_graph(const models::ModelGraph& graph);
  /// Slot tensors under "optim/<param>/<slot>" and the step counter under
  /// "optim/<label>/step".
  void add_optimizer(const std::string& label, optim::Optimizer& optimizer);
  void add_counter(const std::string& name, std::int64_t* value);

  std::vector<CheckpointEntry> snapshot() const;
  /// Exact name match required; missing or unexpected names are all listed
  /// in the error. Shapes and dtypes must agree. Nothing is written unless
  /// every entry validates.
  void restore(const std::vector<CheckpointEntry>& entries);

 private:
  struct Counter {
    std::string name;
    std::int64_t* value;
  };
  struct OptimizerRef {
    std::string name;
    optim::Optimizer* optimizer;
  };
  std::vector<nn::NamedTensor> tensors_;
  std::vector<Counter> counters_;
  std::vector<OptimizerRef> optimizers_;
};

void save_checkpoint(const StateDict& state, const std::filesystem::path& path);
void load_checkpoint(const std::filesystem::path& path, StateDict& state);

/// Single graph plus optional optimizer. Loading considers only the entries
/// that belong to `graph` (and to `optimizer` when given).
void save_checkpoint(const models::ModelGraph& graph, optim::Optimizer* optimizer, const std::filesystem::path& path);
void load_checkpoint(const std::filesystem::path& path, models::ModelGraph& graph,
                     optim::Optimizer* optimizer = nullptr);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Writes `bytes` to a temp file next to `path`, then renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace bhnd::io
