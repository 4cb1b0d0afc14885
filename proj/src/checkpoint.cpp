#include "bhnd/checkpoint.h"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace bhnd::io {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = ::crc32(crc, bytes.data() + offset, n);
    offset += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
void put_payload(std::vector<std::uint8_t>& out, const std::vector<T>& values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), p, p + values.size() * sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[offset_ + static_cast<std::size_t>(i)]) << (8 * i);
    offset_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(offset_, n);
    offset_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - offset_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw FormatError("checkpoint truncated reading " + std::string(what) + " at byte offset " +
                        std::to_string(offset_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_le(out, kCheckpointVersion, 4);
  put_le(out, entries.size(), 4);
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw ContractError("checkpoint entry name too long: " + e.name);
    if (e.shape.size() > 0xFF) throw ContractError("checkpoint entry " + e.name + " has too many dimensions");
    const auto count = static_cast<std::size_t>(numel(e.shape));
    const std::size_t stored = e.dtype == DType::float32 ? e.f32.size() : e.i64.size();
    if (stored != count) throw ContractError("checkpoint entry " + e.name + " payload does not match its shape");
    put_le(out, e.name.size(), 2);
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u8(out, static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) put_le(out, static_cast<std::uint64_t>(d), 4);
    put_u8(out, static_cast<std::uint8_t>(e.dtype));
    if (e.dtype == DType::float32) {
      put_payload(out, e.f32);
    } else {
      put_payload(out, e.i64);
    }
  }
  put_le(out, crc32(out), 4);
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw FormatError("checkpoint too short (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  const auto stored_crc = static_cast<std::uint32_t>(tail.le(4, "crc"));
  const auto actual_crc = crc32(body);
  if (stored_crc != actual_crc) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "checkpoint CRC mismatch: stored 0x%08X, computed 0x%08X", stored_crc, actual_crc);
    throw FormatError(buf);
  }

  Reader in(body);
  in.take(4, "magic");
  const auto version = static_cast<std::uint32_t>(in.le(4, "version"));
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.le(4, "entry count");
  std::vector<CheckpointEntry> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = static_cast<std::size_t>(in.le(2, "name length"));
    const auto name = in.take(name_len, "name");
    e.name.assign(name.begin(), name.end());
    const auto ndim = in.le(1, "ndim");
    for (std::uint64_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<std::int64_t>(in.le(4, "dims")));
    const auto tag = in.le(1, "dtype");
    const auto n = static_cast<std::size_t>(numel(e.shape));
    if (tag == static_cast<std::uint8_t>(DType::float32)) {
      e.dtype = DType::float32;
      const auto payload = in.take(n * sizeof(float), "payload");
      e.f32.resize(n);
      std::memcpy(e.f32.data(), payload.data(), payload.size());
    } else if (tag == static_cast<std::uint8_t>(DType::int64)) {
      e.dtype = DType::int64;
      const auto payload = in.take(n * sizeof(std::int64_t), "payload");
      e.i64.resize(n);
      std::memcpy(e.i64.data(), payload.data(), payload.size());
    } else {
      throw FormatError("checkpoint entry " + e.name + " has unknown dtype tag " + std::to_string(tag));
    }
    entries.push_back(std::move(e));
  }
  if (in.remaining() != 0) throw FormatError("checkpoint has " + std::to_string(in.remaining()) + " trailing bytes");
  return entries;
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write " + tmp.string());
    file.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    file.flush();
    if (!file) {
      file.close();
      std::filesystem::remove(tmp);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_checkpoint(const std::vector<CheckpointEntry>& entries, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(entries));
}

void StateDict::add_graph(const models::ModelGraph& graph) {
  for (auto& p : graph.parameters()) tensors_.push_back(p);
  for (auto& b : graph.buffers()) tensors_.push_back(b);
}

void StateDict::add_optimizer(const std::string& label, optim::Optimizer& optimizer) {
  for (auto& slot : optimizer.buffers()) tensors_.push_back({kOptimizerPrefix + slot.name, slot.tensor});
  optimizers_.push_back({kOptimizerPrefix + label + "/step", &optimizer});
}

void StateDict::add_counter(const std::string& name, std::int64_t* value) { counters_.push_back({name, value}); }

std::vector<CheckpointEntry> StateDict::snapshot() const {
  std::vector<CheckpointEntry> out;
  for (const auto& t : tensors_) {
    const auto d = t.tensor.data();
    out.push_back({t.name, t.tensor.shape(), DType::float32, {d.begin(), d.end()}, {}});
  }
  for (const auto& o : optimizers_) out.push_back({o.name, {}, DType::int64, {}, {o.optimizer->step_count()}});
  for (const auto& c : counters_) out.push_back({c.name, {}, DType::int64, {}, {*c.value}});
  return out;
}

void StateDict::restore(const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) {
    if (!by_name.emplace(e.name, &e).second) throw FormatError("checkpoint repeats entry " + e.name);
  }

  std::set<std::string> expected;
  for (const auto& t : tensors_) expected.insert(t.name);
  for (const auto& o : optimizers_) expected.insert(o.name);
  for (const auto& c : counters_) expected.insert(c.name);

  std::vector<std::string> missing, unexpected;
  for (const auto& name : expected) {
    if (!by_name.count(name)) missing.push_back(name);
  }
  for (const auto& [name, entry] : by_name) {
    if (!expected.count(name)) unexpected.push_back(name);
  }
  if (!missing.empty() || !unexpected.empty()) {
    std::string msg = "checkpoint does not match the model:";
    if (!missing.empty()) {
      msg += " missing [";
      for (std::size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : "") + missing[i];
      msg += "]";
    }
    if (!unexpected.empty()) {
      msg += " unexpected [";
      for (std::size_t i = 0; i < unexpected.size(); ++i) msg += (i ? ", " : "") + unexpected[i];
      msg += "]";
    }
    throw FormatError(msg);
  }

  for (const auto& t : tensors_) {
    const auto& e = *by_name.at(t.name);
    if (e.dtype != DType::float32 || e.shape != t.tensor.shape()) {
      throw FormatError("checkpoint entry " + t.name + " has shape " + to_string(e.shape) + ", model expects " +
                        to_string(t.tensor.shape()));
    }
  }
  auto scalar_i64 = [&](const std::string& name) {
    const auto& e = *by_name.at(name);
    if (e.dtype != DType::int64 || e.i64.size() != 1) throw FormatError("checkpoint entry " + name + " is not a counter");
    return e.i64.front();
  };
  for (const auto& o : optimizers_) scalar_i64(o.name);
  for (const auto& c : counters_) scalar_i64(c.name);

  for (auto& t : tensors_) {
    const auto& e = *by_name.at(t.name);
    auto dst = t.tensor.mutable_data();
    std::copy(e.f32.begin(), e.f32.end(), dst.begin());
  }
  for (auto& o : optimizers_) o.optimizer->set_step_count(scalar_i64(o.name));
  for (auto& c : counters_) *c.value = scalar_i64(c.name);
}

void save_checkpoint(const StateDict& state, const std::filesystem::path& path) {
  write_checkpoint(state.snapshot(), path);
}

void load_checkpoint(const std::filesystem::path& path, StateDict& state) {
  const auto entries = read_checkpoint(path);
  try {
    state.restore(entries);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_checkpoint(const models::ModelGraph& graph, optim::Optimizer* optimizer, const std::filesystem::path& path) {
  StateDict state;
  state.add_graph(graph);
  if (optimizer) state.add_optimizer(graph.name(), *optimizer);
  save_checkpoint(state, path);
}

void load_checkpoint(const std::filesystem::path& path, models::ModelGraph& graph, optim::Optimizer* optimizer) {
  StateDict state;
  state.add_graph(graph);
  if (optimizer) state.add_optimizer(graph.name(), *optimizer);
  // Other graphs, counters and (without an optimizer) optimizer state in the
  // file are not this graph's concern.
  const std::string own = graph.name() + ".";
  std::vector<CheckpointEntry> relevant;
  for (auto& e : read_checkpoint(path)) {
    const bool optim_entry = e.name.rfind(kOptimizerPrefix, 0) == 0;
    const bool own_optim = optim_entry && e.name.rfind(kOptimizerPrefix + own, 0) == 0;
    const bool own_step = e.name == std::string(kOptimizerPrefix) + graph.name() + "/step";
    if (optim_entry ? (optimizer && (own_optim || own_step)) : e.name.rfind(own, 0) == 0) {
      relevant.push_back(std::move(e));
    }
  }
  try {
    state.restore(relevant);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace bhnd::io
