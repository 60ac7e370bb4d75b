#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "compav/oracle.hpp"
#include "compav/procedural.hpp"

namespace compav {

struct ComponentSpec {
  std::string id;
  std::string prompt;
  std::string keyword;
};

struct PipelineConfig {
  std::string prompt = "a portrait photo of a person";
  std::vector<ComponentSpec> components{{"hair", "short black hair", "hair"}};
  std::uint64_t seed = 0;
  std::string model = "toy";  // .bmdl path, or "toy" for the built-in model

  struct Oracle {
    std::string mode = "synthetic";  // synthetic | bridge
    std::string endpoint = "http://127.0.0.1:8080";
    double timeout = 120.0;
    int retries = 2;
  } oracle;

  struct Stages {
    bool refine = true;
    bool render = true;
    bool animate = true;
  } stages;

  struct Fit {
    std::string landmarks;  // JSON landmark file; empty asks the oracle
    int reference_resolution = 512;
    int max_iters = 2000;
    double learning_rate = 1e-3;
    double reg_shape = 5e-5;
    double reg_expression = 5e-5;
  } fit;

  struct Paint {
    std::string views;  // view schedule file; empty uses the standard ten views
    int resolution = 512;
    int uv_size = 512;
    double distance = 2.5;
    double fov = 40.0;
    int steps = 200;
    double learning_rate = 0.01;
    double lambda_sym = 0.5;
  } paint;

  struct Learn {
    int iterations = 2000;
    double learning_rate = 1e-3;
    int resolution = 64;
    int samples = 96;
    double near = -1.0;
    double far = 1.0;
    double lambda_mask = 0.1;
    double lambda_sparse = 0.0005;
    int segment_every = 10;
    int hidden = 64;
    int layers = 3;
    int pos_bands = 10;
    int dir_bands = 4;
    int neighbors = 6;
    double tau = 0.1;
    int checkpoint_every = 100;
  } learn;

  struct Refine {
    int iterations = 1000;
    double learning_rate = 1e-3;
    int resolution = 480;
    int samples = 128;
    double lambda_mask = 0.1;
    double lambda_sparse = 0.0005;
    double lambda_sim = 1.0;
    int calibration_pairs = 256;
  } refine;

  struct Render {
    std::vector<double> azimuths{0, 45, 90, 180, 270, 315};
    double elevation = 10.0;
    double distance = 2.5;
    double fov = 40.0;
    int resolution = 256;
    int samples = 128;
  } render;

  struct Animate {
    int frames = 8;
    double azimuth = 20.0;
    double elevation = 5.0;
    int resolution = 256;
    int samples = 128;
    double expression = 1.0;  // amplitude of the first expression coefficient
    double jaw = 0.3;         // radians about x on the last joint
  } animate;

  // World of the synthetic oracle.
  struct Synthetic {
    double beta_scale = 0.5;  // ground-truth shape ~ scale · U[-1, 1]
    int target_samples = 96;
    ShellSpec shell;
  } synthetic;

  nlohmann::json to_json() const;
  // Rejects unknown keys and wrong types, then checks ranges; every
  // violation is listed in the ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
};

// "a.b.c=value"; value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);
// File (or {} when empty) plus overrides.
PipelineConfig load_pipeline_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

inline constexpr const char* kEndpointEnv = "COMPAV_ORACLE_ENDPOINT";

const std::vector<std::string>& stage_names();

struct StageReport {
  std::string stage;
  bool skipped = false;  // outputs already matched config and inputs
  std::vector<std::filesystem::path> outputs;
};

// Event sink: human-readable lines, or one JSON object per line.
struct PipelineLog {
  std::ostream* out = nullptr;
  bool json_lines = false;
  void event(const std::string& name, const nlohmann::json& fields = nlohmann::json::object()) const;
};

class Pipeline {
 public:
  Pipeline(std::filesystem::path workspace, PipelineConfig config, PipelineLog log = {});
  ~Pipeline();

  // Throws PrerequisiteError naming the missing stage.
  StageReport run(const std::string& stage);
  std::vector<StageReport> run_all();

  const PipelineConfig& config() const { return config_; }
  // Hash over the parts of the config a stage depends on.
  std::string fingerprint(const std::string& stage) const;
  std::uint64_t stage_seed(const std::string& stage) const;
  // Replaces the oracle built from the config (tests, custom services).
  void set_oracle(std::shared_ptr<compav::Oracle> oracle) { oracle_ = std::move(oracle); }
  compav::Oracle& oracle();

 private:
  struct Context;
  StageReport run_fit();
  StageReport run_paint();
  StageReport run_learn();
  StageReport run_refine();
  StageReport run_compose();
  StageReport run_render();
  StageReport run_animate();

  std::filesystem::path workspace_;
  PipelineConfig config_;
  PipelineLog log_;
  std::shared_ptr<compav::Oracle> oracle_;
};

// Oracle served by the synthetic mode: the procedural world for `config`.
std::unique_ptr<compav::Oracle> make_synthetic_oracle(const PipelineConfig& config,
                                                      const std::filesystem::path& workspace);

// Exclusive per-workspace lock (a pid file); stale locks from dead processes
// are taken over.
class WorkspaceLock {
 public:
  explicit WorkspaceLock(const std::filesystem::path& workspace);
  ~WorkspaceLock();
  WorkspaceLock(const WorkspaceLock&) = delete;
  WorkspaceLock& operator=(const WorkspaceLock&) = delete;

 private:
  std::filesystem::path path_;
};

// 0 ok, 2 config or input, 3 prerequisite, 4 oracle, 5 numeric, 1 otherwise.
int exit_code(const std::exception& e);

}  // namespace compav
