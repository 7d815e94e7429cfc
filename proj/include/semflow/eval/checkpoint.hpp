#pragma once

// Binary checkpoint format ("SFCK" v1): magic, u32 version, u32 tensor count,
// then per tensor { u32 name_len, name bytes, u32 rank, u32 dims[rank],
// f32 little-endian data }. Tensor names are "<block>.<tensor>".

#include <string>
#include <vector>

#include "semflow/autodiff/param.hpp"

namespace sf {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::string& path);

template <class T>
std::vector<NamedTensor> collect_tensors(const std::vector<const ParamBlock<T>*>& blocks) {
  std::vector<NamedTensor> out;
  for (const auto* block : blocks) {
    for (size_t k = 0; k < block->tensors.size(); ++k) {
      NamedTensor nt;
      nt.name = block->name + "." + block->tensor_names[k];
      const Mat<T>& v = block->tensors[k]->value;
      nt.dims = {static_cast<std::uint32_t>(v.rows()), static_cast<std::uint32_t>(v.cols())};
      nt.data.resize(static_cast<size_t>(v.size()));
      for (Index i = 0; i < v.size(); ++i) nt.data[static_cast<size_t>(i)] =
          static_cast<float>(v.data()[i]);
      out.push_back(std::move(nt));
    }
  }
  return out;
}

template <class T>
void save_checkpoint(const std::string& path, const std::vector<const ParamBlock<T>*>& blocks) {
  write_checkpoint(path, collect_tensors(blocks));
}

// Strict: every stored tensor must match a parameter by name and shape, and
// every parameter must be present in the file.
template <class T>
void load_checkpoint(const std::string& path, const std::vector<ParamBlock<T>*>& blocks) {
  std::vector<NamedTensor> stored = read_checkpoint(path);
  size_t expected = 0;
  for (auto* b : blocks) expected += b->tensors.size();
  if (stored.size() != expected)
    throw std::runtime_error("load_checkpoint: tensor count mismatch in " + path);
  for (auto* block : blocks) {
    for (size_t k = 0; k < block->tensors.size(); ++k) {
      const std::string full = block->name + "." + block->tensor_names[k];
      const NamedTensor* found = nullptr;
      for (const auto& nt : stored)
        if (nt.name == full) { found = &nt; break; }
      if (!found)
        throw std::runtime_error("load_checkpoint: missing tensor " + full + " in " + path);
      Mat<T>& v = block->tensors[k]->value;
      if (found->dims.size() != 2 ||
          found->dims[0] != static_cast<std::uint32_t>(v.rows()) ||
          found->dims[1] != static_cast<std::uint32_t>(v.cols()))
        throw std::runtime_error("load_checkpoint: shape mismatch for " + full + " in " + path);
      for (Index i = 0; i < v.size(); ++i)
        v.data()[i] = static_cast<T>(found->data[static_cast<size_t>(i)]);
    }
  }
}

}  // namespace sf
