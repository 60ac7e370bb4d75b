#include "compav/protocol.hpp"

#include <cmath>
#include <cstring>

#include "compav/encoding.hpp"
#include "compav/errors.hpp"

namespace compav::protocol {

namespace {

std::size_t element_size(const std::string& dtype) {
  if (dtype == "float64") return 8;
  if (dtype == "float32" || dtype == "int32") return 4;
  return 0;
}

const json& member(const json& m, const std::string& key, const std::string& path) {
  if (!m.is_object()) throw ProtocolError(path, "expected an object");
  auto it = m.find(key);
  if (it == m.end()) throw ProtocolError(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

std::string get_string(const json& m, const std::string& key, const std::string& path = {}) {
  const json& v = member(m, key, path);
  if (!v.is_string()) throw ProtocolError(join(path, key), "expected a string");
  return v.get<std::string>();
}

double get_number(const json& m, const std::string& key, const std::string& path = {}) {
  const json& v = member(m, key, path);
  if (!v.is_number()) throw ProtocolError(join(path, key), "expected a number");
  return v.get<double>();
}

int get_int(const json& m, const std::string& key, const std::string& path = {}) {
  const json& v = member(m, key, path);
  if (!v.is_number_integer()) throw ProtocolError(join(path, key), "expected an integer");
  return v.get<int>();
}

std::uint64_t get_u64(const json& m, const std::string& key) {
  const json& v = member(m, key, {});
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ProtocolError(key, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

std::vector<double> decode_tensor(const json& t, const std::string& path, const std::vector<int>& expect,
                                  std::vector<int>* shape_out) {
  if (!t.is_object()) throw ProtocolError(path, "expected a tensor object");
  const json& sj = member(t, "shape", path);
  if (!sj.is_array()) throw ProtocolError(path + ".shape", "expected an array");
  std::vector<int> shape;
  std::size_t count = 1;
  for (const auto& d : sj) {
    if (!d.is_number_integer() || d.get<long>() < 0) throw ProtocolError(path + ".shape", "dimensions must be >= 0");
    shape.push_back(d.get<int>());
    count *= static_cast<std::size_t>(shape.back());
  }
  if (shape.size() != expect.size())
    throw ProtocolError(path + ".shape", "expected rank " + std::to_string(expect.size()) + ", got " +
                                             std::to_string(shape.size()));
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (expect[i] >= 0 && shape[i] != expect[i])
      throw ProtocolError(path + ".shape", "dimension " + std::to_string(i) + " is " + std::to_string(shape[i]) +
                                               ", expected " + std::to_string(expect[i]));
  const std::string dtype = get_string(t, "dtype", path);
  const std::size_t es = element_size(dtype);
  if (es == 0) throw ProtocolError(path + ".dtype", "unknown dtype '" + dtype + "'");
  std::vector<std::uint8_t> bytes;
  try {
    bytes = base64_decode(get_string(t, "data", path));
  } catch (const ProtocolError&) {
    throw;
  } catch (const std::exception& e) {
    throw ProtocolError(path + ".data", e.what());
  }
  if (bytes.size() != count * es)
    throw ProtocolError(path + ".data", std::to_string(bytes.size()) + " bytes for " + std::to_string(count) + " " +
                                            dtype + " values");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* p = bytes.data() + i * es;
    out[i] = dtype == "float64" ? read_f64(p) : dtype == "float32" ? read_f32(p) : read_i32(p);
    if (!std::isfinite(out[i])) throw ProtocolError(path + ".data", "non-finite value");
  }
  if (shape_out) *shape_out = shape;
  return out;
}

std::vector<double> tensor_at(const json& m, const std::string& key, const std::string& path,
                              const std::vector<int>& expect, std::vector<int>* shape = nullptr) {
  return decode_tensor(member(m, key, path), join(path, key), expect, shape);
}

FeatureImage image_at(const json& m, const std::string& key, const std::string& path = {}) {
  const std::string p = join(path, key);
  const json& img = member(m, key, path);
  std::vector<int> shape;
  std::vector<double> data = tensor_at(img, "data", p, {-1, -1, -1}, &shape);
  FeatureImage out(shape[0], shape[1], shape[2]);
  out.data = std::move(data);
  if (img.contains("alpha")) out.alpha = tensor_at(img, "alpha", p, {shape[0], shape[1]});
  return out;
}

ScalarImage scalar_at(const json& m, const std::string& key, const std::string& path = {}) {
  std::vector<int> shape;
  std::vector<double> v = tensor_at(m, key, path, {-1, -1}, &shape);
  ScalarImage out(shape[0], shape[1]);
  out.values = std::move(v);
  return out;
}

Eigen::VectorXd vector_at(const json& m, const std::string& key) {
  const std::vector<double> v = tensor_at(m, key, {}, {-1});
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec3_at(const json& m, const std::string& key, const std::string& path) {
  const json& v = member(m, key, path);
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
    throw ProtocolError(join(path, key), "expected three numbers");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

json vector_json(const Eigen::VectorXd& v) {
  return tensor({v.data(), static_cast<std::size_t>(v.size())}, {static_cast<int>(v.size())});
}

json features_tensor(const FeatureImage& img) { return tensor(img.data, {img.height, img.width, img.channels}); }

FeatureImage features_at(const json& m, const std::string& key, const std::string& path = {}) {
  std::vector<int> shape;
  std::vector<double> data = tensor_at(m, key, path, {-1, -1, -1}, &shape);
  FeatureImage out(shape[0], shape[1], shape[2]);
  out.data = std::move(data);
  return out;
}

template <class F>
void collect(std::vector<std::string>& problems, F&& f) {
  try {
    f();
  } catch (const ProtocolError& e) {
    problems.push_back(e.what());
  } catch (const json::exception& e) {
    problems.push_back(e.what());
  }
}

}  // namespace

json tensor(std::span<const double> values, const std::vector<int>& shape, const std::string& dtype) {
  std::vector<std::uint8_t> bytes;
  if (dtype == "float64") append_f64(bytes, values);
  else if (dtype == "float32") append_f32(bytes, values);
  else throw ParameterError("tensor: unsupported dtype " + dtype);
  return {{"shape", shape}, {"dtype", dtype}, {"data", base64_encode(bytes)}};
}

json tensor(std::span<const int> values, const std::vector<int>& shape) {
  std::vector<std::uint8_t> bytes;
  append_i32(bytes, values);
  return {{"shape", shape}, {"dtype", "int32"}, {"data", base64_encode(bytes)}};
}

std::vector<double> read_tensor(const json& message, const std::string& field, const std::vector<int>& expect,
                                std::vector<int>* shape) {
  return tensor_at(message, field, {}, expect, shape);
}

json image_json(const FeatureImage& image) {
  return {{"data", features_tensor(image)}, {"alpha", tensor(image.alpha, {image.height, image.width})}};
}

FeatureImage read_image(const json& message, const std::string& field) { return image_at(message, field); }

json scalar_image_json(const ScalarImage& image) { return tensor(image.values, {image.height, image.width}); }

ScalarImage read_scalar_image(const json& message, const std::string& field) { return scalar_at(message, field); }

json camera_json(const Camera& c) {
  return {{"position", vec3_json(c.position)}, {"target", vec3_json(c.target)}, {"up", vec3_json(c.up)},
          {"fov_y_deg", c.fov_y_deg},          {"width", c.width},             {"height", c.height}};
}

Camera read_camera(const json& message, const std::string& field) {
  const json& c = member(message, field, {});
  Camera cam;
  cam.position = vec3_at(c, "position", field);
  cam.target = vec3_at(c, "target", field);
  cam.up = vec3_at(c, "up", field);
  cam.fov_y_deg = get_number(c, "fov_y_deg", field);
  cam.width = get_int(c, "width", field);
  cam.height = get_int(c, "height", field);
  return cam;
}

json health_json(const OracleHealth& h) {
  const auto& a = h.schedule.alphas_cumprod;
  return {{"name", h.name},
          {"schema_version", h.schema_version},
          {"capabilities", h.capabilities},
          {"schedule",
           {{"alphas_cumprod", tensor(a, {static_cast<int>(a.size())})}, {"t_min", h.schedule.t_min},
            {"t_max", h.schedule.t_max}}},
          {"latent_channels", h.latent_channels},
          {"latent_downsample", h.latent_downsample}};
}

OracleHealth read_health(const json& m) {
  OracleHealth h;
  h.name = get_string(m, "name");
  h.schema_version = get_int(m, "schema_version");
  const json& caps = member(m, "capabilities", {});
  if (!caps.is_array()) throw ProtocolError("capabilities", "expected an array");
  for (const auto& c : caps) {
    if (!c.is_string()) throw ProtocolError("capabilities", "expected strings");
    h.capabilities.push_back(c.get<std::string>());
  }
  const json& s = member(m, "schedule", {});
  h.schedule.alphas_cumprod = tensor_at(s, "alphas_cumprod", "schedule", {-1});
  h.schedule.t_min = get_int(s, "t_min", "schedule");
  h.schedule.t_max = get_int(s, "t_max", "schedule");
  const int n = static_cast<int>(h.schedule.alphas_cumprod.size());
  if (n == 0) throw ProtocolError("schedule.alphas_cumprod", "empty schedule");
  if (h.schedule.t_min < 0 || h.schedule.t_max >= n || h.schedule.t_min > h.schedule.t_max)
    throw ProtocolError("schedule.t_max", "timestep range outside the schedule");
  h.latent_channels = get_int(m, "latent_channels");
  h.latent_downsample = get_int(m, "latent_downsample");
  if (h.latent_downsample < 1) throw ProtocolError("latent_downsample", "must be >= 1");
  return h;
}

json generate_request(const GenerateRequest& r) {
  return {{"prompt", r.prompt},
          {"view_index", r.view_index},
          {"seed", r.seed},
          {"camera", camera_json(r.camera)},
          {"depth", scalar_image_json(r.depth)},
          {"current", image_json(r.current)},
          {"valid", scalar_image_json(r.valid)}};
}

GenerateRequest read_generate_request(const json& m) {
  GenerateRequest r;
  r.prompt = get_string(m, "prompt");
  r.view_index = get_int(m, "view_index");
  r.seed = get_u64(m, "seed");
  r.camera = read_camera(m, "camera");
  r.depth = scalar_at(m, "depth");
  r.current = image_at(m, "current");
  r.valid = scalar_at(m, "valid");
  return r;
}

json denoise_request(const DenoiseRequest& r) {
  return {{"prompt", r.prompt},
          {"t", r.t},
          {"seed", r.seed},
          {"camera", camera_json(r.camera)},
          {"q", features_tensor(r.q)},
          {"q_t", features_tensor(r.q_t)},
          {"noise", features_tensor(r.noise)}};
}

DenoiseRequest read_denoise_request(const json& m) {
  DenoiseRequest r;
  r.prompt = get_string(m, "prompt");
  r.t = get_int(m, "t");
  r.seed = get_u64(m, "seed");
  r.camera = read_camera(m, "camera");
  r.q = features_at(m, "q");
  r.q_t = features_at(m, "q_t");
  r.noise = features_at(m, "noise");
  if (!r.q_t.same_shape(r.q)) throw ProtocolError("q_t.shape", "differs from q");
  if (!r.noise.same_shape(r.q)) throw ProtocolError("noise.shape", "differs from q");
  return r;
}

json segment_request(const SegmentRequest& r) {
  return {{"keyword", r.keyword},
          {"height", r.height},
          {"width", r.width},
          {"camera", camera_json(r.camera)},
          {"image", image_json(r.image)}};
}

SegmentRequest read_segment_request(const json& m) {
  SegmentRequest r;
  r.keyword = get_string(m, "keyword");
  r.height = get_int(m, "height");
  r.width = get_int(m, "width");
  r.camera = read_camera(m, "camera");
  r.image = image_at(m, "image");
  return r;
}

std::vector<std::string> check_request(const std::string& capability, const json& m) {
  std::vector<std::string> problems;
  collect(problems, [&] {
    if (capability == "health") return;
    if (capability == "generate") read_generate_request(m);
    else if (capability == "denoise") read_denoise_request(m);
    else if (capability == "segment") read_segment_request(m);
    else if (capability == "embed_image" || capability == "encode" || capability == "landmarks") image_at(m, "image");
    else if (capability == "embed_image_vjp") {
      image_at(m, "image");
      vector_at(m, "cotangent");
    } else if (capability == "embed_text") get_string(m, "text");
    else if (capability == "decode") image_at(m, "latent");
    else throw ProtocolError("capability", "unknown capability '" + capability + "'");
  });
  return problems;
}

std::vector<std::string> check_response(const std::string& capability, const json& m) {
  std::vector<std::string> problems;
  collect(problems, [&] {
    if (!m.is_object()) throw ProtocolError("", "response is not an object");
    if (!m.contains("schema_version")) throw ProtocolError("schema_version", "missing field");
  });
  collect(problems, [&] {
    if (capability == "health") read_health(m);
    else if (capability == "generate") image_at(m, "image");
    else if (capability == "denoise") {
      features_at(m, "eps_hat");
      get_number(m, "u_t");
    } else if (capability == "segment") {
      const ScalarImage mask = scalar_at(m, "mask");
      for (double v : mask.values)
        if (v < 0.0 || v > 1.0) throw ProtocolError("mask.data", "values must lie in [0, 1]");
    } else if (capability == "embed_image" || capability == "embed_text") vector_at(m, "embedding");
    else if (capability == "embed_image_vjp") features_at(m, "gradient");
    else if (capability == "encode") image_at(m, "latent");
    else if (capability == "decode") image_at(m, "image");
    else if (capability == "landmarks") {
      std::vector<int> shape;
      tensor_at(m, "points", {}, {-1, 3}, &shape);
      tensor_at(m, "vertices", {}, {shape[0]});
      tensor_at(m, "confidence", {}, {shape[0]});
    } else throw ProtocolError("capability", "unknown capability '" + capability + "'");
  });
  return problems;
}

json error_body(const std::string& code, const std::string& message, const std::string& field, bool retryable,
                const json& request_id) {
  return {{"schema_version", kProtocolVersion},
          {"request_id", request_id},
          {"error", {{"code", code}, {"message", message}, {"field", field}, {"retryable", retryable}}}};
}

json Handler::dispatch(const std::string& cap, const json& m) {
  if (cap == "health") return health_json(oracle_.health());
  if (cap == "generate") return {{"image", image_json(oracle_.generate(read_generate_request(m)))}};
  if (cap == "denoise") {
    const DenoiseResponse r = oracle_.denoise(read_denoise_request(m));
    return {{"eps_hat", features_tensor(r.eps_hat)}, {"u_t", r.u_t}};
  }
  if (cap == "segment") return {{"mask", scalar_image_json(oracle_.segment(read_segment_request(m)))}};
  if (cap == "embed_image") return {{"embedding", vector_json(oracle_.embed_image(image_at(m, "image")))}};
  if (cap == "embed_image_vjp")
    return {{"gradient", features_tensor(oracle_.embed_image_vjp(image_at(m, "image"), vector_at(m, "cotangent")))}};
  if (cap == "embed_text") return {{"embedding", vector_json(oracle_.embed_text(get_string(m, "text")))}};
  if (cap == "encode") return {{"latent", image_json(oracle_.encode(image_at(m, "image")))}};
  if (cap == "decode") return {{"image", image_json(oracle_.decode(image_at(m, "latent")))}};
  if (cap == "landmarks") {
    const LandmarkSet l = oracle_.landmarks(image_at(m, "image"));
    std::vector<double> pts(static_cast<std::size_t>(l.size()) * 3);
    for (int i = 0; i < l.size(); ++i)
      for (int c = 0; c < 3; ++c) pts[static_cast<std::size_t>(3 * i + c)] = l.points(i, c);
    return {{"points", tensor(pts, {l.size(), 3})},
            {"vertices", tensor(std::span<const int>(l.vertices), {l.size()})},
            {"confidence", tensor({l.confidence.data(), static_cast<std::size_t>(l.confidence.size())}, {l.size()})}};
  }
  throw UnsupportedCapability(cap);
}

std::pair<int, json> Handler::handle(const std::string& cap, const std::string& body) {
  if (body.size() > max_payload_)
    return {413, error_body("payload_too_large",
                            "request of " + std::to_string(body.size()) + " bytes exceeds the limit of " +
                                std::to_string(max_payload_) + " bytes",
                            "", false)};
  json m;
  if (body.empty()) {
    m = json{{"schema_version", kProtocolVersion}};
  } else {
    try {
      m = json::parse(body);
    } catch (const json::exception& e) {
      return {400, error_body("bad_request", std::string("invalid JSON: ") + e.what(), "", false)};
    }
  }
  const json rid = m.is_object() && m.contains("request_id") ? m["request_id"] : json(nullptr);
  if (!m.is_object() || !m.contains("schema_version") || !m["schema_version"].is_number_integer())
    return {400, error_body("schema_mismatch", "missing schema_version", "schema_version", false, rid)};
  if (m["schema_version"].get<int>() != kProtocolVersion)
    return {400, error_body("schema_mismatch",
                            "schema_version " + m["schema_version"].dump() + " is not supported (expected " +
                                std::to_string(kProtocolVersion) + ")",
                            "schema_version", false, rid)};
  try {
    json out = dispatch(cap, m);
    out["schema_version"] = kProtocolVersion;
    out["request_id"] = rid;
    return {200, out};
  } catch (const ProtocolError& e) {
    return {400, error_body("bad_request", e.what(), e.field(), false, rid)};
  } catch (const UnsupportedCapability& e) {
    return {501, error_body("unsupported", e.what(), "", false, rid)};
  } catch (const OracleError& e) {
    return {e.retryable() ? 503 : 422, error_body("oracle_error", e.what(), "", e.retryable(), rid)};
  } catch (const ParameterError& e) {
    return {400, error_body("bad_request", e.what(), "", false, rid)};
  } catch (const InputError& e) {
    return {400, error_body("bad_request", e.what(), "", false, rid)};
  } catch (const std::exception& e) {
    return {500, error_body("internal", e.what(), "", true, rid)};
  }
}

}  // namespace compav::protocol
