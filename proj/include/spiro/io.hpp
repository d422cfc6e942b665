#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace spiro::io {

std::string read_file(const std::string& path);

/// Writes to `<path>.tmp` and renames over `path`.
void atomic_write(const std::string& path, std::string_view bytes);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
std::uint32_t get_u32(std::string_view in, std::size_t offset);
std::uint64_t get_u64(std::string_view in, std::size_t offset);
void put_f64(std::string& out, double v);
void put_f32(std::string& out, float v);
double get_f64(std::string_view in, std::size_t offset);
float get_f32(std::string_view in, std::size_t offset);

}  // namespace spiro::io
