#include "compav/texture_paint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "compav/adam.hpp"
#include "compav/encoding.hpp"
#include "compav/errors.hpp"
#include "compav/rng.hpp"

namespace compav {

using json = nlohmann::json;

ViewSchedule ViewSchedule::standard(int resolution, double distance, double fov_y_deg) {
  ViewSchedule s;
  auto add = [&](double az, double el, int mirror) {
    s.views.push_back({az, el, distance, fov_y_deg, resolution, resolution});
    s.mirror.push_back(mirror);
  };
  add(0.0, 0.0, 0);
  add(45.0, 0.0, -1);
  add(-45.0, 0.0, 1);
  add(90.0, 0.0, -1);
  add(-90.0, 0.0, 3);
  add(135.0, 0.0, -1);
  add(-135.0, 0.0, 5);
  add(45.0, 30.0, -1);
  add(-45.0, 30.0, 7);
  add(180.0, 0.0, 9);
  return s;
}

void ViewSchedule::validate() const {
  if (views.empty()) throw ConfigError("view schedule is empty");
  if (mirror.size() != views.size()) throw ConfigError("view schedule: mirror list length differs from view count");
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    if (v.width <= 0 || v.height <= 0 || !(v.distance > 0.0) || !(v.fov_y_deg > 0.0 && v.fov_y_deg < 180.0))
      throw ConfigError("view schedule: view " + std::to_string(i + 1) + " has invalid intrinsics");
    if (mirror[i] < -1 || mirror[i] > static_cast<int>(i))
      throw ConfigError("view schedule: view " + std::to_string(i + 1) + " pairs with a later or unknown view");
  }
}

json ViewSchedule::to_json() const {
  json views_json = json::array();
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i];
    views_json.push_back({{"azimuth", v.azimuth_deg},
                          {"elevation", v.elevation_deg},
                          {"distance", v.distance},
                          {"fov_y", v.fov_y_deg},
                          {"width", v.width},
                          {"height", v.height},
                          {"mirror", mirror[i]}});
  }
  return {{"schema_version", 1}, {"views", views_json}};
}

ViewSchedule ViewSchedule::from_json(const json& j) {
  ViewSchedule s;
  try {
    if (j.value("schema_version", 1) != 1) throw ConfigError("view schedule: unsupported schema_version");
    for (const auto& v : j.at("views")) {
      ViewSpec spec;
      spec.azimuth_deg = v.at("azimuth").get<double>();
      spec.elevation_deg = v.value("elevation", 0.0);
      spec.distance = v.value("distance", spec.distance);
      spec.fov_y_deg = v.value("fov_y", spec.fov_y_deg);
      spec.width = v.value("width", spec.width);
      spec.height = v.value("height", spec.height);
      s.views.push_back(spec);
      s.mirror.push_back(v.value("mirror", -1));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("view schedule: ") + e.what());
  }
  s.validate();
  return s;
}

std::string ViewSchedule::hash() const { return sha256_hex(to_json().dump()); }

ViewSchedule load_view_schedule(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return ViewSchedule::from_json(json::parse(bytes.begin(), bytes.end()));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

double symmetry_loss(const FeatureImage& render, const FeatureImage& mirror_target) {
  if (!render.same_shape(mirror_target)) throw ParameterError("symmetry_loss: image shapes differ");
  if (render.data.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < render.data.size(); ++i) {
    const double d = render.data[i] - mirror_target.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(render.data.size());
}

namespace {

void check_target(const FeatureImage& target, const Camera& camera, const char* what) {
  if (target.height != camera.height || target.width != camera.width || target.channels != 3)
    throw ParameterError(std::string("project_view: ") + what + " resolution does not match the view");
  for (double v : target.data)
    if (!std::isfinite(v)) throw InputError(std::string("project_view: ") + what + " has non-finite pixels");
}

}  // namespace

ProjectResult project_view(const TextureMap& previous, const FeatureImage& target, const Camera& camera,
                           const Mesh& mesh, const PaintConfig& config, const FeatureImage* mirror_target) {
  check_target(target, camera, "target image");
  if (mirror_target) check_target(*mirror_target, camera, "mirror target");

  ProjectResult result{previous, 0.0, 0};
  TextureMap& tex = result.texture;
  const RasterFragments frags = rasterize_fragments(mesh, camera);
  const std::vector<double> coverage = texel_coverage(frags, tex, config.filter);
  std::vector<std::size_t> hidden;
  for (std::size_t i = 0; i < coverage.size(); ++i) {
    if (coverage[i] > 0.0) tex.valid[i] = 1;
    else hidden.push_back(i);
  }
  std::size_t covered = 0;
  for (std::size_t p = 0; p < frags.pixels.size(); ++p) covered += frags.covered(p);
  if (covered == 0) return result;
  const double norm = 1.0 / (3.0 * static_cast<double>(covered));

  Adam adam(tex.texels.size(), {.learning_rate = config.learning_rate});
  std::vector<double> grad;
  FeatureImage grad_img(frags.height, frags.width, 3);
  double prev_loss = std::numeric_limits<double>::infinity();
  int flat_steps = 0;
  auto evaluate = [&](bool want_grad) {
    const FeatureImage img = shade(frags, tex, config.filter);
    double loss = 0.0;
    for (std::size_t p = 0; p < frags.pixels.size(); ++p) {
      for (int ch = 0; ch < 3; ++ch) {
        const std::size_t i = p * 3 + ch;
        if (!frags.covered(p)) {
          grad_img.data[i] = 0.0;
          continue;
        }
        const double r = img.data[i] - target.data[i];
        loss += std::abs(r) * norm;
        double g = (r > 0.0) - (r < 0.0);
        if (mirror_target) {
          const double m = img.data[i] - mirror_target->data[i];
          loss += config.lambda_sym * m * m * norm;
          g += config.lambda_sym * 2.0 * m;
        }
        grad_img.data[i] = g * norm;
      }
    }
    if (want_grad) {
      grad.assign(tex.texels.size(), 0.0);
      shade_backward(frags, tex, config.filter, grad_img, grad);
    }
    return loss;
  };

  for (int s = 0; s < config.steps; ++s) {
    const double loss = evaluate(true);
    if (!std::isfinite(loss)) throw NumericError("project_view: loss became non-finite");
    flat_steps = std::abs(prev_loss - loss) < config.early_stop ? flat_steps + 1 : 0;
    if (flat_steps >= std::max(1, config.early_stop_patience) || loss == 0.0) break;
    prev_loss = loss;
    std::vector<double> before(tex.texels);
    adam.step(tex.texels, grad);
    for (double& v : tex.texels) v = std::clamp(v, 0.0, 1.0);
    for (std::size_t i : hidden)
      for (int ch = 0; ch < 3; ++ch) tex.texels[i * 3 + ch] = before[i * 3 + ch];
    ++result.steps;
  }
  result.loss = evaluate(false);
  return result;
}

namespace {

void save_image_bin(const FeatureImage& img, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  const int dims[3] = {img.height, img.width, img.channels};
  append_i32(bytes, dims);
  append_f64(bytes, img.data);
  append_f64(bytes, img.alpha);
  write_file_atomic(path, bytes);
}

FeatureImage load_image_bin(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 12) throw LoadError(path.string() + ": truncated image");
  FeatureImage img(read_i32(bytes.data()), read_i32(bytes.data() + 4), read_i32(bytes.data() + 8));
  if (bytes.size() != 12 + 8 * (img.data.size() + img.alpha.size())) throw LoadError(path.string() + ": truncated image");
  const std::uint8_t* p = bytes.data() + 12;
  for (double& v : img.data) v = read_f64(p), p += 8;
  for (double& v : img.alpha) v = read_f64(p), p += 8;
  return img;
}

std::string config_fingerprint(const PaintConfig& c, const std::string& prompt) {
  json j = {{"uv", {c.uv_height, c.uv_width}},
            {"init", {c.init_color[0], c.init_color[1], c.init_color[2]}},
            {"steps", c.steps},
            {"lr", c.learning_rate},
            {"early_stop", c.early_stop},
            {"patience", c.early_stop_patience},
            {"lambda_sym", c.lambda_sym},
            {"filter", c.filter == TextureFilter::nearest ? "nearest" : "bilinear"},
            {"seed", c.seed},
            {"prompt", prompt}};
  return sha256_hex(j.dump());
}

std::string view_file(int view) {
  char name[32];
  std::snprintf(name, sizeof name, "view_%02d.bin", view);
  return name;
}

}  // namespace

TextureMap paint_texture(const Mesh& mesh, const ViewSchedule& schedule, Oracle& oracle, const std::string& prompt,
                         const PaintConfig& config, const std::filesystem::path& checkpoint_dir) {
  schedule.validate();
  if (!mesh.has_uvs()) throw ConfigError("paint_texture: mesh has no UV coordinates");
  const std::string schedule_hash = schedule.hash();
  const std::string fingerprint = config_fingerprint(config, prompt);

  TextureMap tex(config.uv_height, config.uv_width, config.init_color);
  tex.quantize16();
  std::vector<FeatureImage> generated(schedule.views.size());
  std::size_t start = 0;
  const bool persist = !checkpoint_dir.empty();
  const auto state_path = checkpoint_dir / "state.json";
  if (persist) {
    std::filesystem::create_directories(checkpoint_dir);
    if (std::filesystem::exists(state_path)) {
      const auto bytes = read_file(state_path);
      const json state = json::parse(bytes.begin(), bytes.end());
      if (state.value("schedule_hash", "") == schedule_hash && state.value("config", "") == fingerprint) {
        start = state.at("completed").get<std::size_t>();
        tex = load_texture(checkpoint_dir / "texture.png");
        for (std::size_t i = 0; i < start; ++i) generated[i] = load_image_bin(checkpoint_dir / view_file(static_cast<int>(i + 1)));
      }
    }
  }

  for (std::size_t i = start; i < schedule.views.size(); ++i) {
    const int view_number = static_cast<int>(i + 1);
    const Camera camera = schedule.views[i].camera();
    const RasterFragments frags = rasterize_fragments(mesh, camera);

    GenerateRequest req;
    req.prompt = prompt;
    req.view_index = view_number;
    req.camera = camera;
    req.depth = inverse_depth_image(frags);
    req.current = shade(frags, tex, config.filter);
    req.valid = ScalarImage(frags.height, frags.width, 0.0);
    for (std::size_t p = 0; p < frags.pixels.size(); ++p) {
      if (!frags.covered(p)) continue;
      const TexelTaps taps = texel_taps(tex.height, tex.width, frags.pixels[p].uv, config.filter);
      double w = 0.0;
      for (int k = 0; k < taps.count; ++k) w += taps.weight[k] * tex.valid[static_cast<std::size_t>(taps.texel[k])];
      req.valid.values[p] = w >= 0.5 ? 1.0 : 0.0;
    }
    req.seed = Rng::derive_seed(config.seed, static_cast<std::uint64_t>(view_number));

    try {
      generated[i] = oracle.generate(req);
    } catch (const OracleError& e) {
      throw StageError("paint", view_number, e.what(), "view");
    }
    if (generated[i].height != camera.height || generated[i].width != camera.width || generated[i].channels != 3)
      throw StageError("paint", view_number, "oracle returned an image of the wrong shape", "view");

    FeatureImage mirror_target;
    const int partner = schedule.mirror[i];
    if (partner >= 0) mirror_target = generated[static_cast<std::size_t>(partner)].flipped_horizontal();
    try {
      tex = project_view(tex, generated[i], camera, mesh, config, partner >= 0 ? &mirror_target : nullptr).texture;
    } catch (const Error& e) {
      throw StageError("paint", view_number, e.what(), "view");
    }
    tex.quantize16();

    if (persist) {
      save_image_bin(generated[i], checkpoint_dir / view_file(view_number));
      save_texture(tex, checkpoint_dir / "texture.png", schedule_hash);
      const json state = {{"schema_version", 1},
                          {"schedule_hash", schedule_hash},
                          {"config", fingerprint},
                          {"completed", i + 1}};
      write_file_atomic(state_path, state.dump(2));
    }
  }
  return tex;
}

}  // namespace compav
