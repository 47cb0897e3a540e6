#include "mistere/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace mistere {

namespace {

void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, bytes);
}

std::uint64_t get_le(std::istream& is, int bytes, const char* what) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), bytes)) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const TensorMap& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write("MSTE", 4);
  put_le(os, kCheckpointVersion, 4);
  for (const auto& [name, t] : tensors) {
    put_le(os, name.size(), 4);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le(os, t.rank(), 4);
    for (std::size_t d : t.shape()) put_le(os, d, 8);
    for (double v : t.data()) put_le(os, std::bit_cast<std::uint64_t>(v), 8);
  }
  if (!os) throw CheckpointError("failed writing " + path.string());
}

TensorMap load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MSTE", 4) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = get_le(is, 4, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  TensorMap out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = get_le(is, 4, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) {
      throw CheckpointError("truncated checkpoint while reading name");
    }
    const auto rank = get_le(is, 4, "rank");
    if (rank == 0 || rank > 8) throw CheckpointError("bad rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = get_le(is, 8, "dims");
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = std::bit_cast<double>(get_le(is, 8, "values"));
    if (!out.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw CheckpointError("duplicate tensor " + name);
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  TensorMap m;
  for (const auto& [name, v] : params) m.emplace(name, v.value());
  save_tensors(path, m);
}

void load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
  TensorMap m = load_tensors(path);
  if (m.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(m.size()) +
                          " tensors, model has " + std::to_string(params.size()));
  }
  for (auto& [name, v] : params) {
    auto it = m.find(name);
    if (it == m.end()) throw CheckpointError("checkpoint lacks parameter " + name);
    if (it->second.shape() != v.shape()) {
      throw CheckpointError("shape mismatch for " + name + ": " +
                            shape_string(it->second.shape()) + " vs " +
                            shape_string(v.shape()));
    }
    v.mutable_value() = std::move(it->second);
  }
}

}  // namespace mistere
