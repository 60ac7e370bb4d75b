#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "compav/canonical.hpp"
#include "compav/mlp_field.hpp"

namespace compav {

inline constexpr int kComponentSchemaVersion = 1;

// One trained style component (hair, hat, ...) living in canonical space.
struct RadianceComponent {
  std::string id;
  MlpField field;
  CanonicalFrame frame;
  std::string prompt;
  std::string keyword;
  nlohmann::json provenance = nlohmann::json::object();

  bool operator==(const RadianceComponent& o) const {
    return id == o.id && field == o.field && frame.neighbors == o.frame.neighbors && frame.tau == o.frame.tau &&
           frame.cutoff == o.frame.cutoff && prompt == o.prompt && keyword == o.keyword && provenance == o.provenance;
  }
};

// .rfc layout: "COMPRFC1", u64 manifest length, JSON manifest, float32
// parameter block. Parameters are stored at float32 precision.
std::vector<std::uint8_t> encode_component(const RadianceComponent& component);
RadianceComponent decode_component(std::span<const std::uint8_t> bytes);
void save_component(const RadianceComponent& component, const std::filesystem::path& path);
RadianceComponent load_component(const std::filesystem::path& path);

// SHA-256 of the encoded component.
std::string component_hash(const RadianceComponent& component);

}  // namespace compav
