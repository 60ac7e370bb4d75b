#include "compav/model_io.hpp"

#include <cstring>
#include <json.hpp>
#include <string>

#include "compav/encoding.hpp"
#include "compav/errors.hpp"

namespace compav {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'B', 'M', 'D', 'L', '0', '0', '0', '1'};
constexpr int kSchemaVersion = 1;

struct TensorSpec {
  std::string name;
  std::string dtype;  // "f64" or "i32"
  std::vector<std::int64_t> shape;
};

std::vector<TensorSpec> expected_tensors(std::int64_t nv, std::int64_t nt, std::int64_t nk, std::int64_t nb,
                                         std::int64_t ne, std::int64_t np, std::int64_t nuv, bool has_uv) {
  std::vector<TensorSpec> t = {
      {"template_vertices", "f64", {nv, 3}},
      {"faces", "i32", {nt, 3}},
      {"shape_basis", "f64", {3 * nv, nb}},
      {"expression_basis", "f64", {3 * nv, ne}},
      {"pose_basis", "f64", {3 * nv, np}},
      {"joint_regressor", "f64", {nk, nv}},
      {"skin_weights", "f64", {nk, nv}},
      {"kinematic_parents", "i32", {nk}},
      {"canonical_pose", "f64", {3 * nk + 3}},
  };
  if (has_uv) {
    t.push_back({"uvs", "f64", {nuv, 2}});
    t.push_back({"uv_faces", "i32", {nt, 3}});
  }
  return t;
}

// Row-major flattening of a column-major Eigen matrix.
std::vector<double> row_major(const MatX& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_model(const BodyModel& model) {
  model.validate();
  const std::int64_t nv = model.num_vertices(), nt = model.num_faces(), nk = model.num_joints();
  const bool has_uv = model.uvs.rows() > 0;
  const auto specs = expected_tensors(nv, nt, nk, model.num_shape(), model.num_expression(),
                                      model.pose_basis.cols(), model.uvs.rows(), has_uv);

  std::vector<std::uint8_t> data;
  json tensors = json::array();
  for (const auto& spec : specs) {
    const std::size_t offset = data.size();
    if (spec.name == "template_vertices") append_f64(data, std::span(model.template_vertices.data(), model.template_vertices.size()));
    else if (spec.name == "faces") append_i32(data, std::span(model.faces.data(), model.faces.size()));
    else if (spec.name == "shape_basis") append_f64(data, row_major(model.shape_basis));
    else if (spec.name == "expression_basis") append_f64(data, row_major(model.expression_basis));
    else if (spec.name == "pose_basis") append_f64(data, row_major(model.pose_basis));
    else if (spec.name == "joint_regressor") append_f64(data, row_major(model.joint_regressor));
    else if (spec.name == "skin_weights") append_f64(data, row_major(model.skin_weights));
    else if (spec.name == "kinematic_parents") append_i32(data, model.parents);
    else if (spec.name == "canonical_pose") append_f64(data, std::span(model.canonical_pose.data(), model.canonical_pose.size()));
    else if (spec.name == "uvs") append_f64(data, std::span(model.uvs.data(), model.uvs.size()));
    else if (spec.name == "uv_faces") append_i32(data, std::span(model.uv_faces.data(), model.uv_faces.size()));
    tensors.push_back({{"name", spec.name},
                       {"dtype", spec.dtype},
                       {"shape", spec.shape},
                       {"offset", offset},
                       {"nbytes", data.size() - offset}});
  }
  json landmarks = json::array();
  for (const auto& l : model.landmarks) landmarks.push_back({{"name", l.name}, {"vertex", l.vertex}});
  const json manifest = {
      {"format", "bmdl"},
      {"schema_version", kSchemaVersion},
      {"counts",
       {{"vertices", nv},
        {"faces", nt},
        {"joints", nk},
        {"shape", model.num_shape()},
        {"expression", model.num_expression()},
        {"pose_features", model.pose_basis.cols()},
        {"uvs", model.uvs.rows()}}},
      {"tensors", tensors},
      {"landmarks", landmarks},
  };
  const std::string header = manifest.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const std::uint64_t len = header.size();
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>((len >> (8 * b)) & 0xff));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

BodyModel decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw LoadError("not a bmdl file (bad magic)");
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(bytes[8 + b]) << (8 * b);
  if (len > bytes.size() - 16) throw LoadError("manifest length " + std::to_string(len) + " exceeds file size");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw LoadError(std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::size_t data_start = 16 + len;
  const auto data = bytes.subspan(data_start);

  std::int64_t nv, nt, nk, nb, ne, np, nuv;
  std::vector<LandmarkCorrespondence> landmarks;
  try {
    if (manifest.at("format") != "bmdl") throw LoadError("manifest format field is not 'bmdl'");
    const int version = manifest.at("schema_version");
    if (version != kSchemaVersion)
      throw LoadError("unsupported bmdl schema_version " + std::to_string(version) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");
    const auto& counts = manifest.at("counts");
    nv = counts.at("vertices");
    nt = counts.at("faces");
    nk = counts.at("joints");
    nb = counts.at("shape");
    ne = counts.at("expression");
    np = counts.at("pose_features");
    nuv = counts.at("uvs");
    for (const auto& l : manifest.at("landmarks")) landmarks.push_back({l.at("name"), l.at("vertex")});
  } catch (const json::exception& e) {
    throw LoadError(std::string("manifest schema mismatch: ") + e.what());
  }
  if (nv <= 0 || nk <= 0 || nt < 0 || nb < 0 || ne < 0 || np < 0 || nuv < 0)
    throw LoadError("manifest counts must be non-negative");
  const bool has_uv = nuv > 0;
  const auto specs = expected_tensors(nv, nt, nk, nb, ne, np, nuv, has_uv);

  BodyModel model;
  model.landmarks = std::move(landmarks);
  for (const auto& spec : specs) {
    const json* entry = nullptr;
    for (const auto& t : manifest.at("tensors"))
      if (t.value("name", "") == spec.name) entry = &t;
    if (!entry) throw LoadError("tensor '" + spec.name + "' missing from manifest");
    std::string dtype;
    std::vector<std::int64_t> shape;
    std::uint64_t offset, nbytes;
    try {
      dtype = entry->at("dtype");
      shape = entry->at("shape").get<std::vector<std::int64_t>>();
      offset = entry->at("offset");
      nbytes = entry->at("nbytes");
    } catch (const json::exception& e) {
      throw LoadError("tensor '" + spec.name + "' manifest entry malformed: " + e.what());
    }
    if (dtype != spec.dtype) throw LoadError("tensor '" + spec.name + "' has dtype " + dtype + ", expected " + spec.dtype);
    if (shape != spec.shape) throw LoadError("tensor '" + spec.name + "' shape does not match counts");
    std::uint64_t count = 1;
    for (auto s : shape) count *= static_cast<std::uint64_t>(s);
    const std::uint64_t elem = spec.dtype == "f64" ? 8 : 4;
    if (nbytes != count * elem) throw LoadError("tensor '" + spec.name + "' nbytes does not match shape");
    if (offset > data.size() || nbytes > data.size() - offset)
      throw LoadError("tensor '" + spec.name + "' truncated: block spans bytes [" + std::to_string(data_start + offset) +
                      ", " + std::to_string(data_start + offset + nbytes) + ") but file ends at byte " +
                      std::to_string(bytes.size()));
    const std::uint8_t* p = data.data() + offset;
    auto f64_matrix = [&](Eigen::Index rows, Eigen::Index cols) {
      MatX m(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_f64(p + 8 * (r * cols + c));
      return m;
    };
    auto i32_faces = [&](Eigen::Index rows) {
      Faces f(rows, 3);
      for (Eigen::Index i = 0; i < rows * 3; ++i) f.data()[i] = read_i32(p + 4 * i);
      return f;
    };
    if (spec.name == "template_vertices") model.template_vertices = f64_matrix(nv, 3);
    else if (spec.name == "faces") model.faces = i32_faces(nt);
    else if (spec.name == "shape_basis") model.shape_basis = f64_matrix(3 * nv, nb);
    else if (spec.name == "expression_basis") model.expression_basis = f64_matrix(3 * nv, ne);
    else if (spec.name == "pose_basis") model.pose_basis = f64_matrix(3 * nv, np);
    else if (spec.name == "joint_regressor") model.joint_regressor = f64_matrix(nk, nv);
    else if (spec.name == "skin_weights") model.skin_weights = f64_matrix(nk, nv);
    else if (spec.name == "kinematic_parents") {
      model.parents.resize(static_cast<std::size_t>(nk));
      for (std::int64_t k = 0; k < nk; ++k) model.parents[static_cast<std::size_t>(k)] = read_i32(p + 4 * k);
    } else if (spec.name == "canonical_pose") model.canonical_pose = f64_matrix(3 * nk + 3, 1).col(0);
    else if (spec.name == "uvs") model.uvs = f64_matrix(nuv, 2);
    else if (spec.name == "uv_faces") model.uv_faces = i32_faces(nt);
  }
  model.validate();
  return model;
}

BodyModel load_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_model(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void save_model(const BodyModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_model(model));
}

}  // namespace compav
