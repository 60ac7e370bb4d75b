#include "compav/pipeline.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>

#include "compav/avatar.hpp"
#include "compav/encoding.hpp"
#include "compav/errors.hpp"
#include "compav/landmark_fit.hpp"
#include "compav/model_io.hpp"
#include "compav/protocol.hpp"
#include "compav/texture_paint.hpp"
#include "compav/toy_model.hpp"
#include "compav/train.hpp"

namespace compav {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json vec_json(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VecX vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 vec3_from(const json& j) { return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()}; }

const char* type_name(const json& j) {
  if (j.is_boolean()) return "a boolean";
  if (j.is_number_integer()) return "an integer";
  if (j.is_number()) return "a number";
  if (j.is_string()) return "a string";
  if (j.is_array()) return "an array";
  if (j.is_object()) return "an object";
  return "null";
}

bool same_kind(const json& expect, const json& got) {
  if (expect.is_number_integer()) return got.is_number_integer();
  if (expect.is_number()) return got.is_number();
  return expect.type() == got.type();
}

// Structural check of `got` against the defaults tree; returns `got` with
// the offending entries removed.
json check_tree(const json& expect, const json& got, const std::string& path, std::vector<std::string>& out) {
  if (!same_kind(expect, got)) {
    out.push_back("'" + path + "' must be " + type_name(expect) + ", got " + type_name(got));
    return json();
  }
  json clean = got;
  if (expect.is_object()) {
    for (auto it = got.begin(); it != got.end(); ++it) {
      const std::string p = path.empty() ? it.key() : path + "." + it.key();
      if (!expect.contains(it.key())) {
        out.push_back("unknown key '" + p + "'");
        clean.erase(it.key());
      } else if (json sub = check_tree(expect[it.key()], it.value(), p, out); sub.is_null()) {
        clean.erase(it.key());
      } else {
        clean[it.key()] = sub;
      }
    }
  } else if (expect.is_array() && !expect.empty()) {
    json items = json::array();
    for (std::size_t i = 0; i < got.size(); ++i)
      if (json sub = check_tree(expect[0], got[i], path + "[" + std::to_string(i) + "]", out); !sub.is_null())
        items.push_back(sub);
    clean = items;
  }
  return clean;
}

void merge(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) merge(base[it.key()], it.value());
    else base[it.key()] = it.value();
  }
}

bool valid_id(const std::string& id) {
  if (id.empty()) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return id != "." && id != "..";
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw LoadError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(p.string() + ": " + e.what());
  }
}

json params_json(const AvatarParams& p) {
  return {{"beta", vec_json(p.beta)}, {"theta", vec_json(p.theta)}, {"psi", vec_json(p.psi)}};
}

AvatarParams params_from(const json& j) {
  AvatarParams p;
  p.beta = vec_from(j.at("beta"));
  p.theta = vec_from(j.at("theta"));
  p.psi = vec_from(j.at("psi"));
  return p;
}

std::shared_ptr<const BodyModel> model_for(const PipelineConfig& c, const fs::path& workspace) {
  if (c.model == "toy") {
    const fs::path saved = workspace / "fit" / "model.bmdl";
    if (fs::exists(saved)) return std::make_shared<const BodyModel>(load_model(saved));
    return std::make_shared<const BodyModel>(make_toy_model());
  }
  return std::make_shared<const BodyModel>(load_model(c.model));
}

VecX synthetic_beta(const PipelineConfig& c, const BodyModel& model) {
  Rng rng(Rng::derive_seed(c.seed, "synthetic.beta"));
  VecX beta(model.num_shape());
  for (auto& b : beta) b = c.synthetic.beta_scale * rng.uniform(-1.0, 1.0);
  return beta;
}

}  // namespace

json PipelineConfig::to_json() const {
  json comps = json::array();
  for (const auto& s : components) comps.push_back({{"id", s.id}, {"prompt", s.prompt}, {"keyword", s.keyword}});
  return {
      {"prompt", prompt},
      {"components", comps},
      {"seed", seed},
      {"model", model},
      {"oracle", {{"mode", oracle.mode}, {"endpoint", oracle.endpoint}, {"timeout", oracle.timeout},
                  {"retries", oracle.retries}}},
      {"stages", {{"refine", stages.refine}, {"render", stages.render}, {"animate", stages.animate}}},
      {"fit", {{"landmarks", fit.landmarks}, {"reference_resolution", fit.reference_resolution},
               {"max_iters", fit.max_iters}, {"learning_rate", fit.learning_rate}, {"reg_shape", fit.reg_shape},
               {"reg_expression", fit.reg_expression}}},
      {"paint", {{"views", paint.views}, {"resolution", paint.resolution}, {"uv_size", paint.uv_size},
                 {"distance", paint.distance}, {"fov", paint.fov}, {"steps", paint.steps},
                 {"learning_rate", paint.learning_rate}, {"lambda_sym", paint.lambda_sym}}},
      {"learn", {{"iterations", learn.iterations}, {"learning_rate", learn.learning_rate},
                 {"resolution", learn.resolution}, {"samples", learn.samples}, {"near", learn.near},
                 {"far", learn.far}, {"lambda_mask", learn.lambda_mask}, {"lambda_sparse", learn.lambda_sparse},
                 {"segment_every", learn.segment_every}, {"hidden", learn.hidden}, {"layers", learn.layers},
                 {"pos_bands", learn.pos_bands}, {"dir_bands", learn.dir_bands}, {"neighbors", learn.neighbors},
                 {"tau", learn.tau}, {"checkpoint_every", learn.checkpoint_every}}},
      {"refine", {{"iterations", refine.iterations}, {"learning_rate", refine.learning_rate},
                  {"resolution", refine.resolution}, {"samples", refine.samples},
                  {"lambda_mask", refine.lambda_mask}, {"lambda_sparse", refine.lambda_sparse},
                  {"lambda_sim", refine.lambda_sim}, {"calibration_pairs", refine.calibration_pairs}}},
      {"render", {{"azimuths", render.azimuths}, {"elevation", render.elevation}, {"distance", render.distance},
                  {"fov", render.fov}, {"resolution", render.resolution}, {"samples", render.samples}}},
      {"animate", {{"frames", animate.frames}, {"azimuth", animate.azimuth}, {"elevation", animate.elevation},
                   {"resolution", animate.resolution}, {"samples", animate.samples},
                   {"expression", animate.expression}, {"jaw", animate.jaw}}},
      {"synthetic", {{"beta_scale", synthetic.beta_scale}, {"target_samples", synthetic.target_samples},
                     {"shell", {{"center", vec3_json(synthetic.shell.center)},
                                {"radii", vec3_json(synthetic.shell.radii)}, {"y_min", synthetic.shell.y_min},
                                {"density", synthetic.shell.density}, {"color", vec3_json(synthetic.shell.color)},
                                {"keyword", synthetic.shell.keyword}}}}},
  };
}

PipelineConfig PipelineConfig::from_json(const json& user) {
  const json defaults = PipelineConfig{}.to_json();
  std::vector<std::string> errors;
  json defaults_with_component = defaults;
  defaults_with_component["components"] = json::array({{{"id", ""}, {"prompt", ""}, {"keyword", ""}}});
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  json clean = check_tree(defaults_with_component, user, "", errors);
  for (const char* key : {"center", "radii", "color"}) {
    const json* v = nullptr;
    if (user.contains("synthetic") && user["synthetic"].is_object() && user["synthetic"].contains("shell") &&
        user["synthetic"]["shell"].is_object() && user["synthetic"]["shell"].contains(key))
      v = &user["synthetic"]["shell"][key];
    if (v && v->is_array() && v->size() != 3)
      errors.push_back("'synthetic.shell." + std::string(key) + "' must have 3 entries");
  }
  if (user.contains("components") && user["components"].is_array())
    for (std::size_t i = 0; i < user["components"].size(); ++i)
      for (const char* key : {"id", "prompt", "keyword"})
        if (user["components"][i].is_object() && !user["components"][i].contains(key))
          errors.push_back("'components[" + std::to_string(i) + "]." + key + "' is required");
  if (clean.contains("components")) {
    json kept = json::array();
    for (const auto& comp : clean["components"])
      if (comp.contains("id") && comp.contains("prompt") && comp.contains("keyword")) kept.push_back(comp);
    clean["components"] = kept;
  }
  for (const char* key : {"center", "radii", "color"})
    if (clean.contains("synthetic") && clean["synthetic"].contains("shell") &&
        clean["synthetic"]["shell"].contains(key) && clean["synthetic"]["shell"][key].size() != 3)
      clean["synthetic"]["shell"].erase(key);

  json j = defaults;
  merge(j, clean);
  PipelineConfig c;
  c.prompt = j["prompt"];
  c.components.clear();
  for (const auto& s : j["components"]) c.components.push_back({s["id"], s["prompt"], s["keyword"]});
  c.seed = j["seed"].get<std::uint64_t>();
  c.model = j["model"];
  const json& o = j["oracle"];
  c.oracle = {o["mode"], o["endpoint"], o["timeout"], o["retries"]};
  c.stages = {j["stages"]["refine"], j["stages"]["render"], j["stages"]["animate"]};
  const json& f = j["fit"];
  c.fit = {f["landmarks"], f["reference_resolution"], f["max_iters"], f["learning_rate"], f["reg_shape"],
           f["reg_expression"]};
  const json& p = j["paint"];
  c.paint = {p["views"], p["resolution"], p["uv_size"], p["distance"], p["fov"], p["steps"], p["learning_rate"],
             p["lambda_sym"]};
  const json& l = j["learn"];
  c.learn = {l["iterations"],  l["learning_rate"], l["resolution"],    l["samples"],   l["near"],
             l["far"],         l["lambda_mask"],   l["lambda_sparse"], l["segment_every"], l["hidden"],
             l["layers"],      l["pos_bands"],     l["dir_bands"],     l["neighbors"], l["tau"],
             l["checkpoint_every"]};
  const json& r = j["refine"];
  c.refine = {r["iterations"],  r["learning_rate"], r["resolution"], r["samples"],
              r["lambda_mask"], r["lambda_sparse"], r["lambda_sim"], r["calibration_pairs"]};
  const json& v = j["render"];
  c.render = {v["azimuths"].get<std::vector<double>>(), v["elevation"], v["distance"], v["fov"], v["resolution"],
              v["samples"]};
  const json& a = j["animate"];
  c.animate = {a["frames"], a["azimuth"], a["elevation"], a["resolution"], a["samples"], a["expression"], a["jaw"]};
  const json& s = j["synthetic"];
  const json& sh = s["shell"];
  c.synthetic.beta_scale = s["beta_scale"];
  c.synthetic.target_samples = s["target_samples"];
  c.synthetic.shell.center = vec3_from(sh["center"]);
  c.synthetic.shell.radii = vec3_from(sh["radii"]);
  c.synthetic.shell.y_min = sh["y_min"];
  c.synthetic.shell.density = sh["density"];
  c.synthetic.shell.color = vec3_from(sh["color"]);
  c.synthetic.shell.keyword = sh["keyword"];

  auto need = [&](bool ok, const std::string& what) {
    if (!ok) errors.push_back(what);
  };
  need(c.oracle.mode == "synthetic" || c.oracle.mode == "bridge", "'oracle.mode' must be 'synthetic' or 'bridge'");
  need(c.oracle.timeout > 0, "'oracle.timeout' must be > 0");
  need(c.oracle.retries >= 0, "'oracle.retries' must be >= 0");
  need(!c.model.empty(), "'model' must name a .bmdl file or 'toy'");
  std::vector<std::string> ids;
  for (const auto& comp : c.components) {
    need(valid_id(comp.id), "component id '" + comp.id + "' may only use letters, digits, '_', '-' and '.'");
    need(std::find(ids.begin(), ids.end(), comp.id) == ids.end(), "duplicate component id '" + comp.id + "'");
    ids.push_back(comp.id);
  }
  need(c.fit.reference_resolution > 0, "'fit.reference_resolution' must be > 0");
  need(c.fit.max_iters >= 0, "'fit.max_iters' must be >= 0");
  need(c.fit.learning_rate > 0, "'fit.learning_rate' must be > 0");
  need(c.fit.reg_shape >= 0 && c.fit.reg_expression >= 0, "'fit' regularization weights must be >= 0");
  need(c.paint.resolution > 0 && c.paint.uv_size > 0, "'paint' resolutions must be > 0");
  need(c.paint.steps >= 0, "'paint.steps' must be >= 0");
  need(c.paint.learning_rate > 0, "'paint.learning_rate' must be > 0");
  need(c.paint.lambda_sym >= 0, "'paint.lambda_sym' must be >= 0");
  need(c.paint.distance > 0 && c.paint.fov > 0 && c.paint.fov < 180, "'paint' camera must have distance > 0 and fov in (0, 180)");
  need(c.learn.iterations >= 0, "'learn.iterations' must be >= 0");
  need(c.learn.learning_rate > 0, "'learn.learning_rate' must be > 0");
  need(c.learn.resolution > 0 && c.learn.samples > 0, "'learn.resolution' and 'learn.samples' must be > 0");
  need(c.learn.near < c.learn.far, "'learn.near' must be below 'learn.far'");
  need(c.learn.lambda_mask >= 0 && c.learn.lambda_sparse >= 0, "'learn' loss weights must be >= 0");
  need(c.learn.segment_every >= 1, "'learn.segment_every' must be >= 1");
  need(c.learn.hidden > 0 && c.learn.layers > 0, "'learn.hidden' and 'learn.layers' must be > 0");
  need(c.learn.pos_bands >= 0 && c.learn.dir_bands >= 0, "'learn' band counts must be >= 0");
  need(c.learn.neighbors >= 1, "'learn.neighbors' must be >= 1");
  need(c.learn.tau > 0, "'learn.tau' must be > 0");
  need(c.learn.checkpoint_every >= 0, "'learn.checkpoint_every' must be >= 0");
  need(c.refine.iterations >= 0, "'refine.iterations' must be >= 0");
  need(c.refine.learning_rate > 0, "'refine.learning_rate' must be > 0");
  need(c.refine.resolution > 0 && c.refine.samples > 0, "'refine.resolution' and 'refine.samples' must be > 0");
  need(c.refine.lambda_mask >= 0 && c.refine.lambda_sparse >= 0 && c.refine.lambda_sim >= 0,
       "'refine' loss weights must be >= 0");
  need(c.refine.calibration_pairs >= 5, "'refine.calibration_pairs' must be >= 5");
  need(!c.render.azimuths.empty(), "'render.azimuths' must not be empty");
  need(c.render.resolution > 0 && c.render.samples > 0, "'render.resolution' and 'render.samples' must be > 0");
  need(c.animate.frames >= 1, "'animate.frames' must be >= 1");
  need(c.animate.resolution > 0 && c.animate.samples > 0, "'animate.resolution' and 'animate.samples' must be > 0");
  need(c.synthetic.beta_scale >= 0, "'synthetic.beta_scale' must be >= 0");
  need(c.synthetic.target_samples > 0, "'synthetic.target_samples' must be > 0");
  need(c.synthetic.shell.radii.minCoeff() > 0, "'synthetic.shell.radii' must be > 0");
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &config;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (parts[i].empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
  }
  (*node)[parts.back()] = value;
}

PipelineConfig load_pipeline_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return PipelineConfig::from_json(j);
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"fit", "paint", "learn", "refine", "compose", "render", "animate"};
  return names;
}

void PipelineLog::event(const std::string& name, const json& fields) const {
  if (!out) return;
  if (json_lines) {
    json e = fields;
    e["event"] = name;
    *out << e.dump() << "\n" << std::flush;
    return;
  }
  *out << "[" << name << "]";
  for (auto it = fields.begin(); it != fields.end(); ++it)
    *out << " " << it.key() << "=" << (it.value().is_string() ? it.value().get<std::string>() : it.value().dump());
  *out << "\n" << std::flush;
}

std::unique_ptr<Oracle> make_synthetic_oracle(const PipelineConfig& c, const fs::path& workspace) {
  auto model = model_for(c, workspace);
  AvatarRig world = make_rig(model, synthetic_beta(c, *model), procedural_texture());
  ProceduralSetup setup;
  setup.shell = c.synthetic.shell;
  setup.target_rays = {c.synthetic.target_samples, -1.0, 1.0, false, 0};
  setup.landmark_beta = world.params.beta;
  setup.seed = Rng::derive_seed(c.seed, "synthetic");
  return make_procedural_oracle(world, setup);
}

// Stage bookkeeping shared by the runners.
struct Pipeline::Context {
  static std::vector<std::string> inputs(const PipelineConfig& c, const std::string& stage) {
    if (stage == "fit") return {};
    if (stage == "paint") return {"fit"};
    if (stage == "learn") return {"paint"};
    if (stage == "refine") return {"learn"};
    if (stage == "compose") return {"paint", c.stages.refine ? "refine" : "learn"};
    if (stage == "render" || stage == "animate") return {"compose"};
    throw ConfigError("unknown stage '" + stage + "'");
  }
};

Pipeline::Pipeline(fs::path workspace, PipelineConfig config, PipelineLog log)
    : workspace_(std::move(workspace)), config_(std::move(config)), log_(log) {}

Pipeline::~Pipeline() = default;

Oracle& Pipeline::oracle() {
  if (!oracle_) {
    if (config_.oracle.mode == "synthetic") {
      oracle_ = make_synthetic_oracle(config_, workspace_);
    } else {
      const char* env = std::getenv(kEndpointEnv);
      HttpOracleOptions o;
      o.timeout_seconds = config_.oracle.timeout;
      oracle_ = std::make_shared<HttpOracle>(env && *env ? env : config_.oracle.endpoint, o);
    }
  }
  return *oracle_;
}

std::uint64_t Pipeline::stage_seed(const std::string& stage) const { return Rng::derive_seed(config_.seed, stage); }

std::string Pipeline::fingerprint(const std::string& stage) const {
  const json all = config_.to_json();
  json parts = {{"stage", stage},
                {"prompt", all["prompt"]},
                {"components", all["components"]},
                {"seed", all["seed"]},
                {"model", all["model"]},
                {"oracle_mode", all["oracle"]["mode"]}};
  if (config_.oracle.mode == "synthetic") parts["synthetic"] = all["synthetic"];
  if (config_.model != "toy" && fs::exists(config_.model)) parts["model_sha256"] = sha256_file(config_.model);
  if (stage == "compose") parts["refine_enabled"] = config_.stages.refine;
  else if (all.contains(stage)) parts[stage] = all[stage];
  if (stage == "fit" && !config_.fit.landmarks.empty() && fs::exists(config_.fit.landmarks))
    parts["landmarks_sha256"] = sha256_file(config_.fit.landmarks);
  if (stage == "paint" && !config_.paint.views.empty() && fs::exists(config_.paint.views))
    parts["views_sha256"] = sha256_file(config_.paint.views);
  return sha256_hex(parts.dump());
}

namespace {

fs::path record_path(const fs::path& ws, const std::string& stage) { return ws / stage / "stage.json"; }

bool outputs_intact(const fs::path& dir, const json& record) {
  if (!record.contains("outputs") || !record["outputs"].is_object()) return false;
  for (auto it = record["outputs"].begin(); it != record["outputs"].end(); ++it) {
    const fs::path p = dir / it.key();
    if (!fs::exists(p) || sha256_file(p) != it.value().get<std::string>()) return false;
  }
  return true;
}

}  // namespace

StageReport Pipeline::run(const std::string& stage) {
  const auto inputs = Context::inputs(config_, stage);

  // A stage is current when its record matches the config, its inputs are
  // current and its outputs are untouched.
  std::function<bool(const std::string&)> current = [&](const std::string& s) {
    const fs::path rec = record_path(workspace_, s);
    if (!fs::exists(rec)) return false;
    json r;
    try {
      r = read_json_file(rec);
    } catch (const LoadError&) {
      return false;
    }
    if (r.value("fingerprint", std::string()) != fingerprint(s)) return false;
    for (const auto& in : Context::inputs(config_, s)) {
      if (!current(in)) return false;
      if (r["inputs"].value(in, std::string()) != sha256_file(record_path(workspace_, in))) return false;
    }
    return outputs_intact(workspace_ / s, r);
  };

  for (const auto& in : inputs) {
    if (!current(in)) {
      const bool stale = fs::exists(record_path(workspace_, in));
      throw PrerequisiteError("stage '" + in + "' required" +
                              (stale ? " (its outputs are stale or incomplete; rerun it)" : std::string()));
    }
  }
  if (current(stage)) {
    log_.event("stage_skipped", {{"stage", stage}, {"reason", "up to date"}});
    StageReport r{stage, true, {}};
    const json rec = read_json_file(record_path(workspace_, stage));
    for (auto it = rec["outputs"].begin(); it != rec["outputs"].end(); ++it)
      r.outputs.push_back(workspace_ / stage / it.key());
    return r;
  }

  fs::create_directories(workspace_ / stage);
  fs::remove(record_path(workspace_, stage));
  log_.event("stage_start", {{"stage", stage}, {"seed", stage_seed(stage)}});
  StageReport report;
  if (stage == "fit") report = run_fit();
  else if (stage == "paint") report = run_paint();
  else if (stage == "learn") report = run_learn();
  else if (stage == "refine") report = run_refine();
  else if (stage == "compose") report = run_compose();
  else if (stage == "render") report = run_render();
  else report = run_animate();
  report.stage = stage;

  json rec = {{"stage", stage}, {"fingerprint", fingerprint(stage)}, {"config", config_.to_json()}};
  rec["inputs"] = json::object();
  for (const auto& in : inputs) rec["inputs"][in] = sha256_file(record_path(workspace_, in));
  rec["outputs"] = json::object();
  for (const auto& p : report.outputs) {
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file())
          rec["outputs"][fs::relative(e.path(), workspace_ / stage).generic_string()] = sha256_file(e.path());
    } else {
      rec["outputs"][fs::relative(p, workspace_ / stage).generic_string()] = sha256_file(p);
    }
  }
  write_file_atomic(record_path(workspace_, stage), rec.dump(2) + "\n");
  log_.event("stage_done", {{"stage", stage}, {"outputs", rec["outputs"].size()}});
  return report;
}

std::vector<StageReport> Pipeline::run_all() {
  std::vector<StageReport> out;
  for (const auto& s : stage_names()) {
    if ((s == "refine" && !config_.stages.refine) || (s == "render" && !config_.stages.render) ||
        (s == "animate" && !config_.stages.animate))
      continue;
    out.push_back(run(s));
  }
  return out;
}

StageReport Pipeline::run_fit() {
  const fs::path dir = workspace_ / "fit";
  StageReport r;
  std::shared_ptr<const BodyModel> model;
  if (config_.model == "toy") {
    model = std::make_shared<const BodyModel>(make_toy_model());
    save_model(*model, dir / "model.bmdl");
    r.outputs.push_back(dir / "model.bmdl");
  } else {
    model = std::make_shared<const BodyModel>(load_model(config_.model));
  }

  LandmarkSet landmarks;
  if (!config_.fit.landmarks.empty()) {
    landmarks = load_landmarks(config_.fit.landmarks, *model);
  } else {
    // Reference portrait from the generator, then detected landmarks.
    const int res = config_.fit.reference_resolution;
    const Camera cam = Camera::orbit(0.0, 0.0, config_.paint.distance, res, res, config_.paint.fov);
    const Mesh mean = skin_mesh(*model, AvatarParams::rest(*model));
    const RasterFragments frags = rasterize_fragments(mean, cam);
    GenerateRequest req;
    req.prompt = config_.prompt;
    req.camera = cam;
    req.depth = inverse_depth_image(frags);
    req.current = FeatureImage(res, res, 3);
    req.valid = ScalarImage(res, res, 0.0);
    req.seed = Rng::derive_seed(stage_seed("fit"), "reference");
    const FeatureImage reference = oracle().generate(req);
    save_image_png(reference, dir / "reference.png");
    r.outputs.push_back(dir / "reference.png");
    landmarks = oracle().landmarks(reference);
  }
  save_landmarks(landmarks, *model, dir / "landmarks.json");
  r.outputs.push_back(dir / "landmarks.json");

  FitConfig fc;
  fc.max_iters = config_.fit.max_iters;
  fc.learning_rate = config_.fit.learning_rate;
  fc.reg_weight_shape = config_.fit.reg_shape;
  fc.reg_weight_expr = config_.fit.reg_expression;
  const FitResult fit = fit_shape(*model, landmarks, fc);
  log_.event("fit_result", {{"loss", fit.loss}, {"iterations", fit.iterations}, {"converged", fit.converged}});
  json out = {{"params", params_json(fit.params)},
              {"optimized", params_json(fit.optimized)},
              {"loss", fit.loss},
              {"iterations", fit.iterations},
              {"converged", fit.converged}};
  write_file_atomic(dir / "params.json", out.dump(2) + "\n");
  r.outputs.push_back(dir / "params.json");
  return r;
}

namespace {

AvatarParams fitted_params(const fs::path& ws) { return params_from(read_json_file(ws / "fit" / "params.json")["params"]); }

TrainConfig learn_config(const PipelineConfig::Learn& l) {
  TrainConfig t;
  t.iterations = l.iterations;
  t.learning_rate = l.learning_rate;
  t.width = t.height = l.resolution;
  t.rays = {l.samples, l.near, l.far, true, 0};
  t.weights.mask = l.lambda_mask;
  t.weights.sparse = l.lambda_sparse;
  t.segment_every = l.segment_every;
  t.architecture.hidden = l.hidden;
  t.architecture.layers = l.layers;
  t.architecture.pos_bands = l.pos_bands;
  t.architecture.dir_bands = l.dir_bands;
  t.frame.neighbors = l.neighbors;
  t.frame.tau = l.tau;
  t.checkpoint_every = l.checkpoint_every;
  return t;
}

}  // namespace

StageReport Pipeline::run_paint() {
  const fs::path dir = workspace_ / "paint";
  auto model = model_for(config_, workspace_);
  const Mesh mesh = skin_mesh(*model, fitted_params(workspace_));
  const ViewSchedule schedule = config_.paint.views.empty()
                                    ? ViewSchedule::standard(config_.paint.resolution, config_.paint.distance,
                                                             config_.paint.fov)
                                    : load_view_schedule(config_.paint.views);
  PaintConfig pc;
  pc.uv_height = pc.uv_width = config_.paint.uv_size;
  pc.steps = config_.paint.steps;
  pc.learning_rate = config_.paint.learning_rate;
  pc.lambda_sym = config_.paint.lambda_sym;
  pc.seed = stage_seed("paint");
  const TextureMap tex = paint_texture(mesh, schedule, oracle(), config_.prompt, pc, dir / "views");
  save_texture(tex, dir / "texture.png", schedule.hash());
  return {"paint", false, {dir / "texture.png", dir / "texture.png.json"}};
}

StageReport Pipeline::run_learn() {
  const fs::path dir = workspace_ / "learn";
  auto model = model_for(config_, workspace_);
  AvatarRig rig = make_rig(model, fitted_params(workspace_).beta, load_texture(workspace_ / "paint" / "texture.png"));
  StageReport r;
  for (const auto& spec : config_.components) {
    TrainConfig t = learn_config(config_.learn);
    t.seed = Rng::derive_seed(stage_seed("learn"), spec.id);
    t.component_id = spec.id;
    t.oracle_retries = config_.oracle.retries;
    t.log_path = dir / (spec.id + ".jsonl");
    t.checkpoint_dir = dir / "checkpoints" / spec.id;
    log_.event("component_start", {{"stage", "learn"}, {"component", spec.id}, {"iterations", t.iterations}});
    TrainResult res = train_component(rig, spec.prompt, spec.keyword, oracle(), t);
    save_component(res.component, dir / (spec.id + ".rfc"));
    r.outputs.push_back(dir / (spec.id + ".rfc"));
    r.outputs.push_back(t.log_path);
    rig = attach(rig, std::move(res.component));
  }
  return r;
}

StageReport Pipeline::run_refine() {
  const fs::path dir = workspace_ / "refine";
  auto model = model_for(config_, workspace_);
  AvatarRig rig = make_rig(model, fitted_params(workspace_).beta, load_texture(workspace_ / "paint" / "texture.png"));
  StageReport r;
  const auto& rc = config_.refine;
  for (const auto& spec : config_.components) {
    const RadianceComponent learned = load_component(workspace_ / "learn" / (spec.id + ".rfc"));
    RefineConfig t;
    static_cast<TrainConfig&>(t) = learn_config(config_.learn);
    t.iterations = rc.iterations;
    t.learning_rate = rc.learning_rate;
    t.width = t.height = rc.resolution;
    t.rays.samples = rc.samples;
    t.weights.mask = rc.lambda_mask;
    t.weights.sparse = rc.lambda_sparse;
    t.weights.sim = rc.lambda_sim;
    t.architecture = learned.field.architecture();
    t.frame = learned.frame;
    t.seed = Rng::derive_seed(stage_seed("refine"), spec.id);
    t.component_id = spec.id;
    t.oracle_retries = config_.oracle.retries;
    t.log_path = dir / (spec.id + ".jsonl");
    t.checkpoint_dir = dir / "checkpoints" / spec.id;
    calibration_pairs(oracle(), rc.calibration_pairs, t.seed, t.calibration_latents, t.calibration_rgb);
    log_.event("component_start", {{"stage", "refine"}, {"component", spec.id}, {"iterations", t.iterations}});
    TrainResult res = refine_component(learned, rig, spec.prompt, oracle(), t);
    save_component(res.component, dir / (spec.id + ".rfc"));
    r.outputs.push_back(dir / (spec.id + ".rfc"));
    r.outputs.push_back(t.log_path);
    rig = attach(rig, std::move(res.component));
  }
  return r;
}

StageReport Pipeline::run_compose() {
  const fs::path dir = workspace_ / "compose";
  auto model = model_for(config_, workspace_);
  AvatarRig rig = make_rig(model, fitted_params(workspace_).beta, load_texture(workspace_ / "paint" / "texture.png"));
  rig.model_path = config_.model == "toy" ? fs::absolute(workspace_ / "fit" / "model.bmdl").string()
                                          : fs::absolute(config_.model).string();
  const std::string source = config_.stages.refine ? "refine" : "learn";
  for (const auto& spec : config_.components)
    rig = attach(rig, load_component(workspace_ / source / (spec.id + ".rfc")));
  rig.provenance = {{"prompt", config_.prompt},
                    {"seed", config_.seed},
                    {"components_from", source},
                    {"config_sha256", sha256_hex(config_.to_json().dump())}};
  fs::remove_all(dir / "avatar");
  save_avatar(rig, dir / "avatar");
  return {"compose", false, {dir / "avatar"}};
}

namespace {

// RGB rendering; latent components are rendered in latent space and decoded.
FeatureImage render_rgb(const AvatarRig& rig, const Camera& cam, int samples, Oracle& oracle,
                        const AvatarParams* pose) {
  bool latent = false;
  for (const auto& a : rig.components) latent = latent || a.component.field.channels() == 4;
  AvatarRenderOptions o;
  o.rays = {samples, -1.0, 1.0, false, 0};
  if (!latent) {
    o.space = RenderSpace::rgb;
    return render_avatar(rig, cam, o, nullptr, pose).image;
  }
  o.space = RenderSpace::latent;
  o.latent_downsample = oracle.health().latent_downsample;
  const FeatureImage z = render_avatar(rig, cam, o, &oracle, pose).image;
  FeatureImage rgb = oracle.decode(z);
  rgb.alpha = z.alpha;
  return rgb;
}

std::string frame_name(const std::string& prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d.png", prefix.c_str(), i);
  return buf;
}

}  // namespace

StageReport Pipeline::run_render() {
  const fs::path dir = workspace_ / "render";
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") fs::remove(e.path());
  const AvatarRig rig = load_avatar(workspace_ / "compose" / "avatar");
  const auto& rc = config_.render;
  StageReport r;
  for (std::size_t i = 0; i < rc.azimuths.size(); ++i) {
    const Camera cam = Camera::orbit(rc.azimuths[i], rc.elevation, rc.distance, rc.resolution, rc.resolution, rc.fov);
    const fs::path out = dir / frame_name("view", static_cast<int>(i));
    save_image_png(render_rgb(rig, cam, rc.samples, oracle(), nullptr), out);
    r.outputs.push_back(out);
  }
  return r;
}

StageReport Pipeline::run_animate() {
  const fs::path dir = workspace_ / "animate";
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") fs::remove(e.path());
  const AvatarRig rig = load_avatar(workspace_ / "compose" / "avatar");
  const auto& ac = config_.animate;
  const Camera cam = Camera::orbit(ac.azimuth, ac.elevation, config_.render.distance, ac.resolution, ac.resolution,
                                   config_.render.fov);
  StageReport r;
  const int joints = rig.model->num_joints();
  for (int f = 0; f < ac.frames; ++f) {
    const double phase = std::sin(2.0 * std::numbers::pi * f / ac.frames);
    AvatarParams pose = rig.params;
    if (pose.psi.size() > 0) pose.psi[0] = ac.expression * phase;
    if (joints > 1) pose.theta[3 * (joints - 1)] += ac.jaw * std::max(phase, 0.0);
    check_params(*rig.model, pose);
    const fs::path out = dir / frame_name("frame", f);
    save_image_png(render_rgb(rig, cam, ac.samples, oracle(), &pose), out);
    r.outputs.push_back(out);
  }
  json meta = {{"frames", ac.frames}, {"expression", ac.expression}, {"jaw", ac.jaw}};
  write_file_atomic(dir / "animation.json", meta.dump(2) + "\n");
  r.outputs.push_back(dir / "animation.json");
  return r;
}

WorkspaceLock::WorkspaceLock(const fs::path& workspace) : path_(workspace / ".compav.lock") {
  fs::create_directories(workspace);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      if (::write(fd, pid.data(), pid.size()) < 0) {
        ::close(fd);
        throw ConfigError("cannot write lock " + path_.string());
      }
      ::close(fd);
      return;
    }
    long holder = 0;
    std::ifstream(path_) >> holder;
    if (holder > 0 && ::kill(static_cast<pid_t>(holder), 0) == 0)
      throw PrerequisiteError("workspace " + workspace.string() + " is locked by process " + std::to_string(holder));
    fs::remove(path_);  // stale
  }
  throw PrerequisiteError("cannot lock workspace " + workspace.string());
}

WorkspaceLock::~WorkspaceLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const LoadError*>(&e) || dynamic_cast<const AttachmentError*>(&e) ||
      dynamic_cast<const ParameterError*>(&e))
    return 2;
  if (dynamic_cast<const PrerequisiteError*>(&e)) return 3;
  if (dynamic_cast<const OracleError*>(&e) || dynamic_cast<const StageError*>(&e)) return 4;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const FitError*>(&e)) return 5;
  return 1;
}

}  // namespace compav
