#include "semflow/eval/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace sf {

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw std::runtime_error("read_checkpoint: truncated file " + path);
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_checkpoint: cannot open " + path);
  f.write("SFCK", 4);
  put_u32(f, 1);
  put_u32(f, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::uint64_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size())
      throw std::runtime_error("write_checkpoint: dims/data mismatch for " + t.name);
    put_u32(f, static_cast<std::uint32_t>(t.name.size()));
    f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(f, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(f, d);
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("write_checkpoint: write failed for " + path);
}

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SFCK", 4) != 0)
    throw std::runtime_error("read_checkpoint: bad magic in " + path);
  std::uint32_t version = get_u32(f, path);
  if (version != 1)
    throw std::runtime_error("read_checkpoint: unsupported version in " + path);
  std::uint32_t count = get_u32(f, path);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    std::uint32_t name_len = get_u32(f, path);
    t.name.resize(name_len);
    f.read(t.name.data(), name_len);
    std::uint32_t rank = get_u32(f, path);
    if (rank > 8) throw std::runtime_error("read_checkpoint: corrupt rank in " + path);
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(get_u32(f, path));
      n *= t.dims.back();
    }
    t.data.resize(n);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
    if (!f) throw std::runtime_error("read_checkpoint: truncated file " + path);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace sf
