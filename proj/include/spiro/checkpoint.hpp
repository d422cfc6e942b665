#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spiro/tensor.hpp"

namespace spiro::ckpt {

// Layout:
//   "SPFM" | u32 version | u64 manifest length | manifest JSON | payload
// The manifest lists every tensor (name, shape, dtype, byte offset into the
// payload) and every named text section, plus the payload length and its
// FNV-1a-64 checksum. All numbers are little-endian.
inline constexpr char kMagic[4] = {'S', 'P', 'F', 'M'};
inline constexpr std::uint32_t kVersion = 1;

enum class DType { f64, f32 };

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, tc::Tensor>> tensors;
  std::map<std::string, std::string> sections;

  const tc::Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

/// f32 storage rounds every value to single precision.
std::string serialize(const Container& c, DType dtype = DType::f64);
Container deserialize(std::string_view bytes);

void save(const std::string& path, const Container& c, DType dtype = DType::f64);
Container load(const std::string& path);

}  // namespace spiro::ckpt
