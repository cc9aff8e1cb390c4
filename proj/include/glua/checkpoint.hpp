#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "glua/model.hpp"

namespace glua {

/// Binary layout, all integers little-endian:
///   "GLUA" | u32 version=1 | u32 tensor_count |
///   per tensor: u32 name_len | name bytes | u8 dtype (0=f32, 1=f64) |
///               u32 rank | u64 dims[rank] | raw payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& what, std::size_t offset);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

struct CheckpointTensor {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> payload;
};

template <Real T>
std::vector<std::uint8_t> encode_checkpoint(std::span<const Parameter<T>* const> params);
std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointTensor> tensors);
std::vector<CheckpointTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

template <Real T>
void checkpoint_save(const Model<T>& model, const std::filesystem::path& path);
/// Loads weights into a model whose configuration matches the file: names,
/// shapes and dtype must agree tensor by tensor.
template <Real T>
void checkpoint_load(Model<T>& model, const std::filesystem::path& path);

}  // namespace glua
