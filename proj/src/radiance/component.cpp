#include "compav/component.hpp"

#include <cstring>

#include "compav/encoding.hpp"
#include "compav/errors.hpp"

namespace compav {

using json = nlohmann::json;

namespace {
constexpr char kMagic[8] = {'C', 'O', 'M', 'P', 'R', 'F', 'C', '1'};
}

std::vector<std::uint8_t> encode_component(const RadianceComponent& c) {
  const auto& a = c.field.architecture();
  std::vector<std::uint8_t> block;
  const VecX& p = c.field.parameters();
  append_f32(block, std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
  const json manifest = {
      {"format", "compav-rfc"},
      {"schema_version", kComponentSchemaVersion},
      {"id", c.id},
      {"architecture",
       {{"hidden", a.hidden},
        {"layers", a.layers},
        {"pos_bands", a.pos_bands},
        {"dir_bands", a.dir_bands},
        {"channels", a.channels},
        {"density_bias", a.density_bias}}},
      {"channel_mode", c.field.rgb() ? "rgb" : "latent"},
      {"rgb_adapter", c.field.has_adapter()},
      {"frame", {{"neighbors", c.frame.neighbors}, {"tau", c.frame.tau}, {"cutoff", c.frame.cutoff}}},
      {"provenance", {{"prompt", c.prompt}, {"keyword", c.keyword}, {"extra", c.provenance}}},
      {"blocks", json::array({{{"name", "parameters"}, {"dtype", "f32"}, {"count", p.size()}, {"offset", 0},
                               {"nbytes", block.size()}}})}};
  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), block.begin(), block.end());
  return out;
}

RadianceComponent decode_component(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw LoadError("not a component file (bad magic)");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[8 + i]) << (8 * i);
  if (len > bytes.size() - 16) throw LoadError("component manifest truncated");
  json m;
  try {
    m = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw LoadError(std::string("component manifest: ") + e.what());
  }
  const int version = m.value("schema_version", 0);
  if (version != kComponentSchemaVersion)
    throw LoadError("component schema_version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kComponentSchemaVersion) + ")");
  RadianceComponent c;
  try {
    c.id = m.at("id").get<std::string>();
    const auto& a = m.at("architecture");
    FieldArchitecture arch;
    arch.hidden = a.at("hidden");
    arch.layers = a.at("layers");
    arch.pos_bands = a.at("pos_bands");
    arch.dir_bands = a.at("dir_bands");
    arch.channels = a.at("channels");
    arch.density_bias = a.at("density_bias");
    c.field = MlpField(arch, 0);
    if (m.at("rgb_adapter").get<bool>()) c.field.attach_adapter({});
    const auto& f = m.at("frame");
    c.frame = {f.at("neighbors").get<int>(), f.at("tau").get<double>(), f.at("cutoff").get<double>()};
    const auto& prov = m.at("provenance");
    c.prompt = prov.value("prompt", "");
    c.keyword = prov.value("keyword", "");
    c.provenance = prov.value("extra", json::object());
    const auto& block = m.at("blocks").at(0);
    const std::size_t count = block.at("count");
    const std::size_t offset = block.at("offset");
    const std::size_t data_start = 16 + len;
    if (count != static_cast<std::size_t>(c.field.parameter_count()))
      throw LoadError("component '" + c.id + "': parameter count " + std::to_string(count) +
                      " does not match the architecture (" + std::to_string(c.field.parameter_count()) + ")");
    if (data_start + offset + 4 * count > bytes.size())
      throw LoadError("component '" + c.id + "': parameter block truncated");
    const std::uint8_t* p = bytes.data() + data_start + offset;
    for (std::size_t i = 0; i < count; ++i) c.field.parameters()[static_cast<Eigen::Index>(i)] = read_f32(p + 4 * i);
  } catch (const json::exception& e) {
    throw LoadError(std::string("component manifest: ") + e.what());
  }
  return c;
}

void save_component(const RadianceComponent& component, const std::filesystem::path& path) {
  write_file_atomic(path, encode_component(component));
}

RadianceComponent load_component(const std::filesystem::path& path) {
  try {
    return decode_component(read_file(path));
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

std::string component_hash(const RadianceComponent& component) { return sha256_hex(encode_component(component)); }

}  // namespace compav
