#include "compav/landmark_fit.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <json.hpp>
#include <limits>

#include "compav/adam.hpp"
#include "compav/encoding.hpp"
#include "compav/errors.hpp"

namespace compav {

namespace {

double smooth_abs(double x, double eps) { return std::sqrt(x * x + eps * eps) - eps; }
double smooth_abs_grad(double x, double eps) { return x / std::sqrt(x * x + eps * eps); }

void check_landmarks(const BodyModel& model, const LandmarkSet& l) {
  if (l.points.rows() != l.size() || l.confidence.size() != l.size())
    throw ParameterError("landmark set has inconsistent sizes");
  for (int v : l.vertices)
    if (v < 0 || v >= model.num_vertices()) throw ParameterError("landmark correspondence out of range");
}

}  // namespace

double fit_residual(const BodyModel& model, const AvatarParams& params, const LandmarkSet& landmarks,
                    const FitConfig& config) {
  check_landmarks(model, landmarks);
  const Points posed = skin_vertices(model, params, landmarks.vertices);
  double loss = 0.0;
  for (int i = 0; i < landmarks.size(); ++i) {
    double term = 0.0;
    for (int c = 0; c < 3; ++c) term += smooth_abs(posed(i, c) - landmarks.points(i, c), config.l1_epsilon);
    loss += landmarks.confidence[i] * term;
  }
  return loss + config.reg_weight_shape * params.beta.squaredNorm() + config.reg_weight_expr * params.psi.squaredNorm();
}

ResidualGradient fit_residual_gradient(const BodyModel& model, const AvatarParams& params,
                                       const LandmarkSet& landmarks, const FitConfig& config) {
  check_landmarks(model, landmarks);
  const Points posed = skin_vertices(model, params, landmarks.vertices);
  ResidualGradient out;
  Points g(landmarks.size(), 3);
  for (int i = 0; i < landmarks.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double r = posed(i, c) - landmarks.points(i, c);
      out.loss += landmarks.confidence[i] * smooth_abs(r, config.l1_epsilon);
      g(i, c) = landmarks.confidence[i] * smooth_abs_grad(r, config.l1_epsilon);
    }
  }
  out.loss += config.reg_weight_shape * params.beta.squaredNorm() + config.reg_weight_expr * params.psi.squaredNorm();
  out.grad = skin_vertices_vjp(model, params, landmarks.vertices, g);
  out.grad.beta += 2.0 * config.reg_weight_shape * params.beta;
  out.grad.psi += 2.0 * config.reg_weight_expr * params.psi;
  return out;
}

FitResult fit_shape(const BodyModel& model, const LandmarkSet& landmarks, const FitConfig& config) {
  check_landmarks(model, landmarks);
  if (landmarks.size() < 4) throw FitError("at least 4 landmarks are required, got " + std::to_string(landmarks.size()));
  {
    const Eigen::RowVector3d mean = landmarks.points.colwise().mean();
    const MatX centered = landmarks.points.rowwise() - mean;
    const Eigen::JacobiSVD<MatX> svd(centered);
    const auto s = svd.singularValues();
    if (s[0] <= 0.0 || s[1] <= 1e-9 * s[0]) throw FitError("landmarks are degenerate (collinear)");
  }

  const int nb = model.num_shape(), nt = model.pose_size(), ne = model.num_expression();
  AvatarParams current = AvatarParams::rest(model);
  std::vector<double> flat(static_cast<std::size_t>(nb + nt + ne));
  auto pack = [&](const AvatarParams& p) {
    std::copy(p.beta.data(), p.beta.data() + nb, flat.begin());
    std::copy(p.theta.data(), p.theta.data() + nt, flat.begin() + nb);
    std::copy(p.psi.data(), p.psi.data() + ne, flat.begin() + nb + nt);
  };
  auto unpack = [&](AvatarParams& p) {
    std::copy(flat.begin(), flat.begin() + nb, p.beta.data());
    std::copy(flat.begin() + nb, flat.begin() + nb + nt, p.theta.data());
    std::copy(flat.begin() + nb + nt, flat.end(), p.psi.data());
  };
  pack(current);
  Adam adam(flat.size(), {.learning_rate = config.learning_rate});
  std::vector<double> grad(flat.size());

  FitResult result;
  result.optimized = current;
  double best = std::numeric_limits<double>::infinity();
  double previous = std::numeric_limits<double>::infinity();
  int quiet = 0;
  int it = 0;
  for (; it < config.max_iters; ++it) {
    const ResidualGradient rg = fit_residual_gradient(model, current, landmarks, config);
    if (!std::isfinite(rg.loss)) throw NumericError("landmark fit produced a non-finite loss at iteration " + std::to_string(it));
    if (rg.loss < best) {
      best = rg.loss;
      result.optimized = current;
    }
    if (std::abs(previous - rg.loss) < config.tolerance) {
      if (++quiet >= config.patience) {
        result.converged = true;
        break;
      }
    } else {
      quiet = 0;
    }
    previous = rg.loss;
    std::copy(rg.grad.beta.data(), rg.grad.beta.data() + nb, grad.begin());
    std::fill(grad.begin() + nb, grad.end(), 0.0);
    if (config.optimize_pose) std::copy(rg.grad.theta.data(), rg.grad.theta.data() + nt, grad.begin() + nb);
    if (config.optimize_expression) std::copy(rg.grad.psi.data(), rg.grad.psi.data() + ne, grad.begin() + nb + nt);
    adam.step(flat, grad);
    unpack(current);
  }
  const double final_loss = fit_residual(model, current, landmarks, config);
  if (final_loss < best) {
    best = final_loss;
    result.optimized = current;
  }
  result.loss = best;
  result.iterations = it;
  result.params = AvatarParams::rest(model);
  result.params.beta = result.optimized.beta;
  return result;
}

LandmarkSet load_landmarks(const std::filesystem::path& path, const BodyModel& model) {
  const auto bytes = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw LoadError(path.string() + ": expected a JSON array of landmarks");
  LandmarkSet out;
  out.points.resize(static_cast<Eigen::Index>(doc.size()), 3);
  out.confidence.resize(static_cast<Eigen::Index>(doc.size()));
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    const std::string where = path.string() + ": landmark " + std::to_string(i);
    int vertex = -1;
    if (e.contains("name")) {
      vertex = model.landmark_vertex(e["name"].get<std::string>());
      if (vertex < 0) throw LoadError(where + ": unknown landmark name '" + e["name"].get<std::string>() + "'");
    } else if (e.contains("index")) {
      const int idx = e["index"].get<int>();
      if (idx < 0 || idx >= static_cast<int>(model.landmarks.size()))
        throw LoadError(where + ": index " + std::to_string(idx) + " outside the model landmark table");
      vertex = model.landmarks[static_cast<std::size_t>(idx)].vertex;
    } else {
      throw LoadError(where + ": needs 'index' or 'name'");
    }
    if (!e.contains("xyz") || !e["xyz"].is_array() || e["xyz"].size() != 3) throw LoadError(where + ": 'xyz' must be 3 numbers");
    for (int c = 0; c < 3; ++c) out.points(static_cast<Eigen::Index>(i), c) = e["xyz"][c].get<double>();
    const double conf = e.value("confidence", 1.0);
    if (!(conf >= 0.0 && conf <= 1.0)) throw LoadError(where + ": confidence must be in [0, 1]");
    out.confidence[static_cast<Eigen::Index>(i)] = conf;
    out.vertices.push_back(vertex);
  }
  return out;
}

void save_landmarks(const LandmarkSet& landmarks, const BodyModel& model, const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (int i = 0; i < landmarks.size(); ++i) {
    nlohmann::json e;
    std::string name;
    for (const auto& l : model.landmarks)
      if (l.vertex == landmarks.vertices[static_cast<std::size_t>(i)]) name = l.name;
    if (name.empty()) throw ParameterError("landmark vertex has no entry in the model landmark table");
    e["name"] = name;
    e["xyz"] = {landmarks.points(i, 0), landmarks.points(i, 1), landmarks.points(i, 2)};
    e["confidence"] = landmarks.confidence[i];
    doc.push_back(e);
  }
  write_file_atomic(path, doc.dump(2));
}

}  // namespace compav
