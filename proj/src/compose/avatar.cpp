#include "compav/avatar.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "compav/encoding.hpp"
#include "compav/errors.hpp"
#include "compav/model_io.hpp"

namespace compav {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool usable_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

bool same_frame(const CanonicalFrame& a, const CanonicalFrame& b) {
  return a.neighbors == b.neighbors && a.tau == b.tau && a.cutoff == b.cutoff;
}

void sort_components(std::vector<ComponentAttachment>& list) {
  std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
    return a.order != b.order ? a.order < b.order : a.component.id < b.component.id;
  });
}

std::vector<ComponentAttachment>::iterator find_mut(AvatarRig& rig, const std::string& id) {
  auto it = std::find_if(rig.components.begin(), rig.components.end(),
                         [&](const auto& a) { return a.component.id == id; });
  if (it == rig.components.end()) throw AttachmentError("no component with id '" + id + "' attached");
  return it;
}

std::string model_hash(const BodyModel& model) { return sha256_hex(encode_model(model)); }

json vec_json(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VecX json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

const ComponentAttachment* AvatarRig::find(const std::string& id) const {
  for (const auto& a : components)
    if (a.component.id == id) return &a;
  return nullptr;
}

CanonicalFrame AvatarRig::frame() const {
  return components.empty() ? CanonicalFrame{} : components.front().component.frame;
}

AvatarRig make_rig(std::shared_ptr<const BodyModel> model, const VecX& beta, TextureMap texture) {
  if (!model) throw ParameterError("make_rig: no model");
  AvatarRig rig;
  rig.params = AvatarParams::rest(*model);
  rig.params.beta = beta;
  check_params(*model, rig.params);
  rig.model = std::move(model);
  rig.texture = std::move(texture);
  return rig;
}

AvatarRig attach(AvatarRig rig, RadianceComponent component, std::optional<int> order) {
  const std::string& id = component.id;
  if (!usable_id(id)) throw AttachmentError("component id '" + id + "' must use only letters, digits, '_', '-', '.'");
  if (rig.find(id)) throw AttachmentError("component id '" + id + "' is already attached");
  const int c = component.field.channels();
  if (c != 3 && c != 4) throw AttachmentError("component '" + id + "' has " + std::to_string(c) + " channels");
  if (!rig.components.empty() && !same_frame(rig.frame(), component.frame))
    throw AttachmentError("component '" + id + "' uses different canonical frame constants");
  int o = 0;
  if (order) o = *order;
  else
    for (const auto& a : rig.components) o = std::max(o, a.order + 1);
  rig.components.push_back({std::move(component), o, true});
  sort_components(rig.components);
  return rig;
}

AvatarRig detach(AvatarRig rig, const std::string& id) {
  rig.components.erase(find_mut(rig, id));
  return rig;
}

AvatarRig set_enabled(AvatarRig rig, const std::string& id, bool enabled) {
  find_mut(rig, id)->enabled = enabled;
  return rig;
}

BaseLayer base_layer(const AvatarRig& rig, const PosedBody& body, const Camera& camera,
                     const AvatarRenderOptions& options, Oracle* encoder) {
  BaseLayer layer;
  layer.fragments = rasterize_fragments(body.mesh(), body.bvh(), camera);
  if (options.space == RenderSpace::rgb) {
    layer.features = shade(layer.fragments, rig.texture, rig.filter);
    return layer;
  }
  if (!encoder) throw ConfigError("latent rendering needs an encoder");
  const int f = std::max(1, options.latent_downsample);
  Camera big = camera;
  big.width *= f;
  big.height *= f;
  const FeatureImage rgb =
      f == 1 ? shade(layer.fragments, rig.texture, rig.filter) : rasterize(rig.texture, big, body.mesh(), rig.filter);
  FeatureImage latent = encoder->encode(rgb);
  if (latent.height != camera.height || latent.width != camera.width || latent.channels != 4)
    throw OracleError("encode returned a " + std::to_string(latent.height) + "x" + std::to_string(latent.width) + "x" +
                          std::to_string(latent.channels) + " latent for a " + std::to_string(camera.height) + "x" +
                          std::to_string(camera.width) + " view",
                      false);
  for (std::size_t p = 0; p < latent.pixel_count(); ++p) {
    const bool hit = layer.fragments.covered(p);
    latent.alpha[p] = hit ? 1.0 : 0.0;
    if (!hit)
      for (auto& v : latent.pixel(p)) v = 0.0;
  }
  layer.features = std::move(latent);
  return layer;
}

AvatarRender composite_components(const AvatarRig& rig, const PosedBody& body, const Camera& camera,
                                  const BaseLayer& base, const AvatarRenderOptions& options,
                                  const std::vector<std::string>& skip) {
  const int want = options.space == RenderSpace::latent ? 4 : 3;
  AvatarRender out;
  FeatureImage current = base.features;
  std::vector<double> clear(current.pixel_count(), 1.0);
  for (const auto& a : rig.components) {
    if (!a.enabled || std::find(skip.begin(), skip.end(), a.component.id) != skip.end()) continue;
    if (a.component.field.channels() != want)
      throw ConfigError("component '" + a.component.id + "' renders " + std::to_string(a.component.field.channels()) +
                        " channels but this render needs " + std::to_string(want));
    RenderOptions ro = options.rays;
    ro.seed = Rng::derive_seed(options.rays.seed, a.component.id);
    FeatureImage img = render_image(a.component.field, camera, &body, {&base.fragments, &current}, ro);
    for (std::size_t p = 0; p < clear.size(); ++p) clear[p] *= 1.0 - img.alpha[p];
    current = img;
    out.components.emplace(a.component.id, std::move(img));
  }
  for (std::size_t p = 0; p < clear.size(); ++p)
    current.alpha[p] = base.fragments.covered(p) ? 1.0 : 1.0 - clear[p];
  out.image = std::move(current);
  return out;
}

AvatarRender render_avatar(const AvatarRig& rig, const Camera& camera, const AvatarRenderOptions& options,
                           Oracle* encoder, const AvatarParams* pose) {
  if (!rig.model) throw ParameterError("render_avatar: rig has no model");
  const PosedBody body(*rig.model, pose ? *pose : rig.params, rig.frame());
  const BaseLayer base = base_layer(rig, body, camera, options, encoder);
  return composite_components(rig, body, camera, base, options);
}

AvatarRender animate(const AvatarRig& rig, const VecX& theta, const VecX& psi, const Camera& camera,
                     const AvatarRenderOptions& options, Oracle* encoder) {
  if (!rig.model) throw ParameterError("animate: rig has no model");
  AvatarParams pose = rig.params;
  pose.theta = theta;
  pose.psi = psi;
  check_params(*rig.model, pose);
  return render_avatar(rig, camera, options, encoder, &pose);
}

void save_avatar(const AvatarRig& rig, const fs::path& dir) {
  if (!rig.model) throw ParameterError("save_avatar: rig has no model");
  fs::create_directories(dir / "components");
  json comps = json::array();
  for (const auto& a : rig.components) {
    const std::string file = "components/" + a.component.id + ".rfc";
    save_component(a.component, dir / file);
    comps.push_back({{"id", a.component.id}, {"file", file}, {"order", a.order}, {"enabled", a.enabled},
                     {"sha256", component_hash(a.component)}});
  }
  save_texture(rig.texture, dir / "texture.png");
  json j = {{"format", "compav-avatar"},
            {"schema_version", kAvatarSchemaVersion},
            {"model", {{"path", rig.model_path}, {"sha256", model_hash(*rig.model)}}},
            {"params", {{"beta", vec_json(rig.params.beta)}, {"theta", vec_json(rig.params.theta)},
                        {"psi", vec_json(rig.params.psi)}}},
            {"texture", "texture.png"},
            {"texture_filter", rig.filter == TextureFilter::nearest ? "nearest" : "bilinear"},
            {"components", comps},
            {"provenance", rig.provenance}};
  write_file_atomic(dir / "rig.json", j.dump(2) + "\n");
}

AvatarRig load_avatar(const fs::path& dir, std::shared_ptr<const BodyModel> model) {
  const fs::path rig_path = dir / "rig.json";
  if (!fs::exists(rig_path)) throw LoadError(rig_path.string() + ": not found");
  json j;
  try {
    j = json::parse(std::ifstream(rig_path));
  } catch (const json::exception& e) {
    throw LoadError(rig_path.string() + ": " + e.what());
  }
  try {
    if (j.value("format", "") != "compav-avatar") throw LoadError(rig_path.string() + ": not an avatar bundle");
    const int version = j.at("schema_version").get<int>();
    if (version != kAvatarSchemaVersion)
      throw LoadError(rig_path.string() + ": schema_version " + std::to_string(version) +
                      " is not supported by this build (expects " + std::to_string(kAvatarSchemaVersion) +
                      "); migrate by re-running the compose stage with a matching version of compav");

    std::vector<std::string> missing;
    for (const auto& c : j.at("components"))
      if (!fs::exists(dir / c.at("file").get<std::string>())) missing.push_back(c.at("id").get<std::string>());
    if (!missing.empty()) {
      std::string list;
      for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
      throw LoadError(dir.string() + ": missing component files for: " + list);
    }

    AvatarRig rig;
    rig.model_path = j.at("model").at("path").get<std::string>();
    const std::string want_hash = j.at("model").at("sha256").get<std::string>();
    if (!model) {
      if (rig.model_path.empty()) throw LoadError(rig_path.string() + ": no model path recorded; supply the model");
      fs::path mp = rig.model_path;
      if (mp.is_relative() && !fs::exists(mp)) mp = dir / mp;
      model = std::make_shared<const BodyModel>(load_model(mp));
    }
    if (model_hash(*model) != want_hash) throw LoadError(rig_path.string() + ": model does not match the recorded hash");
    rig.model = std::move(model);

    const json& p = j.at("params");
    rig.params.beta = json_vec(p.at("beta"));
    rig.params.theta = json_vec(p.at("theta"));
    rig.params.psi = json_vec(p.at("psi"));
    try {
      check_params(*rig.model, rig.params);
    } catch (const ParameterError& e) {
      throw LoadError(rig_path.string() + ": " + e.what());
    }
    rig.texture = load_texture(dir / j.at("texture").get<std::string>());
    rig.filter = j.value("texture_filter", "nearest") == "bilinear" ? TextureFilter::bilinear : TextureFilter::nearest;
    for (const auto& c : j.at("components")) {
      ComponentAttachment a{load_component(dir / c.at("file").get<std::string>()), c.at("order").get<int>(),
                            c.at("enabled").get<bool>()};
      if (a.component.id != c.at("id").get<std::string>())
        throw LoadError(rig_path.string() + ": component file for '" + c.at("id").get<std::string>() +
                        "' holds id '" + a.component.id + "'");
      rig.components.push_back(std::move(a));
    }
    sort_components(rig.components);
    rig.provenance = j.value("provenance", json::object());
    return rig;
  } catch (const json::exception& e) {
    throw LoadError(rig_path.string() + ": " + e.what());
  }
}

}  // namespace compav
