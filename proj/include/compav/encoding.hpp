#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace compav {

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Write to a sibling temp file and rename over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

// Little-endian scalar packing for tensor blocks.
void append_f64(std::vector<std::uint8_t>& out, std::span<const double> values);
void append_f32(std::vector<std::uint8_t>& out, std::span<const double> values);
void append_i32(std::vector<std::uint8_t>& out, std::span<const int> values);
double read_f64(const std::uint8_t* p);
float read_f32(const std::uint8_t* p);
std::int32_t read_i32(const std::uint8_t* p);

}  // namespace compav
