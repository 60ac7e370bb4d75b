#include "compav/mesh.hpp"

#include <fstream>
#include <iomanip>

#include "compav/errors.hpp"

namespace compav {

void write_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(9);
  for (int i = 0; i < mesh.vertices.rows(); ++i)
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  const bool uv = mesh.has_uvs();
  if (uv)
    for (int i = 0; i < mesh.uvs.rows(); ++i) out << "vt " << mesh.uvs(i, 0) << ' ' << mesh.uvs(i, 1) << '\n';
  for (int f = 0; f < mesh.faces.rows(); ++f) {
    out << 'f';
    for (int c = 0; c < 3; ++c) {
      out << ' ' << mesh.faces(f, c) + 1;
      if (uv) out << '/' << mesh.uv_faces(f, c) + 1;
    }
    out << '\n';
  }
}

}  // namespace compav
