#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "compav/body_model.hpp"

namespace compav {

// .bmdl container: 8-byte magic "BMDL0001", uint64 LE manifest length, JSON
// manifest (counts, tensor dtype/shape/offset/nbytes, landmark table), then
// the contiguous little-endian tensor blocks. Offsets are relative to the
// first byte after the manifest.
std::vector<std::uint8_t> encode_model(const BodyModel& model);
BodyModel decode_model(std::span<const std::uint8_t> bytes);

BodyModel load_model(const std::filesystem::path& path);
void save_model(const BodyModel& model, const std::filesystem::path& path);

}  // namespace compav
