#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "jqas/tensor.hpp"

namespace jqas {

struct NamedArray {
  std::string name;
  Tensor<float> data;
};

/// Tensor archive used for checkpoints, datasets and subnets:
///   "JQAR" | u32 version | u64 manifest bytes | manifest JSON | u32 array count |
///   per array: u32 name bytes | name | u32 rank | u64 dims[rank] | f32 data |
///   u32 CRC-32 of everything before it.
/// All integers and floats are little-endian.
struct Archive {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  bool has(std::string_view name) const;
  const Tensor<float>& get(std::string_view name) const;
  void put(std::string name, Tensor<float> data);
};

inline constexpr std::uint32_t kArchiveVersion = 1;

std::string encode_archive(const Archive& archive);
Archive decode_archive(std::string_view bytes);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace jqas
