#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "compav/component.hpp"
#include "compav/oracle.hpp"
#include "compav/render.hpp"
#include "compav/texture.hpp"

namespace compav {

inline constexpr int kAvatarSchemaVersion = 1;

struct ComponentAttachment {
  RadianceComponent component;
  int order = 0;
  bool enabled = true;
};

// Fitted avatar: shape with the pose stored at θ^c, painted texture and the
// attached components. Treated as a value; attach/detach return new rigs.
struct AvatarRig {
  std::shared_ptr<const BodyModel> model;
  std::string model_path;  // where the model was loaded from, if anywhere
  AvatarParams params;
  TextureMap texture;
  TextureFilter filter = TextureFilter::nearest;
  std::vector<ComponentAttachment> components;  // sorted by (order, id)
  nlohmann::json provenance = nlohmann::json::object();

  const ComponentAttachment* find(const std::string& id) const;
  // Frame shared by the attached components (defaults when none).
  CanonicalFrame frame() const;
};

// (β, θ^c, 0) for the given shape.
AvatarRig make_rig(std::shared_ptr<const BodyModel> model, const VecX& beta, TextureMap texture);

// Throws AttachmentError on a duplicate or unusable id, a channel count other
// than 3 or 4, or frame constants differing from already attached components.
// Default order places the component after every existing one.
AvatarRig attach(AvatarRig rig, RadianceComponent component, std::optional<int> order = {});
AvatarRig detach(AvatarRig rig, const std::string& id);
AvatarRig set_enabled(AvatarRig rig, const std::string& id, bool enabled);

enum class RenderSpace { latent, rgb };

struct AvatarRenderOptions {
  RenderSpace space = RenderSpace::latent;
  RenderOptions rays;
  int latent_downsample = 1;  // from the encoder's health report
};

// Textured mesh for one camera: hits plus c* (latent or RGB), zero where the
// rays miss the mesh. Latent mode needs an encoder.
struct BaseLayer {
  RasterFragments fragments;
  FeatureImage features;
};

BaseLayer base_layer(const AvatarRig& rig, const PosedBody& body, const Camera& camera,
                     const AvatarRenderOptions& options, Oracle* encoder);

struct AvatarRender {
  FeatureImage image;  // alpha: 1 − (1 − coverage)·Π(1 − Ω̂_k)
  std::map<std::string, FeatureImage> components;  // per-component renders (alpha = Ω̂_k)
};

// Composites enabled components one by one in blend order over `base`,
// each using the previous result as its background. Components listed in
// `skip` are left out.
AvatarRender composite_components(const AvatarRig& rig, const PosedBody& body, const Camera& camera,
                                  const BaseLayer& base, const AvatarRenderOptions& options,
                                  const std::vector<std::string>& skip = {});

// Renders the rig at its stored parameters, or at `pose` when given.
AvatarRender render_avatar(const AvatarRig& rig, const Camera& camera, const AvatarRenderOptions& options,
                           Oracle* encoder = nullptr, const AvatarParams* pose = nullptr);

// Reskins with (β*, θ, ψ) and renders; components follow the body.
AvatarRender animate(const AvatarRig& rig, const VecX& theta, const VecX& psi, const Camera& camera,
                     const AvatarRenderOptions& options, Oracle* encoder = nullptr);

// Bundle directory: rig.json, texture.png (+ sidecar), components/<id>.rfc.
void save_avatar(const AvatarRig& rig, const std::filesystem::path& dir);
// Loads the model from the recorded path unless one is supplied; a supplied
// model must match the recorded hash.
AvatarRig load_avatar(const std::filesystem::path& dir, std::shared_ptr<const BodyModel> model = nullptr);

}  // namespace compav
