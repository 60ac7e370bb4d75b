#pragma once

#include <filesystem>

#include "compav/types.hpp"

namespace compav {

// Triangle mesh with optional per-corner UVs (uv_faces indexes uvs, so seams
// can carry duplicated texture coordinates).
struct Mesh {
  Points vertices;
  Faces faces;
  UVs uvs;
  Faces uv_faces;

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.rows()); }
  bool has_uvs() const { return uvs.rows() > 0 && uv_faces.rows() == faces.rows(); }
};

void write_obj(const Mesh& mesh, const std::filesystem::path& path);

}  // namespace compav
