#include <doctest.h>

#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <map>

#include "compav/avatar.hpp"
#include "compav/encoding.hpp"
#include "compav/errors.hpp"
#include "compav/pipeline.hpp"
#include "compav/protocol.hpp"

using namespace compav;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("compav_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

json tiny() {
  return json::parse(R"({
    "fit": {"reference_resolution": 64, "max_iters": 1500},
    "paint": {"resolution": 48, "uv_size": 64, "steps": 30},
    "learn": {"iterations": 30, "resolution": 16, "samples": 16, "hidden": 16, "layers": 2,
              "pos_bands": 3, "dir_bands": 1, "checkpoint_every": 0, "learning_rate": 0.005},
    "refine": {"iterations": 10, "resolution": 24, "samples": 16, "calibration_pairs": 64},
    "render": {"azimuths": [0, 90], "resolution": 48, "samples": 32},
    "animate": {"frames": 3, "resolution": 48, "samples": 32},
    "synthetic": {"target_samples": 32}
  })");
}

std::string error_of(const json& j) {
  try {
    PipelineConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// relative path -> sha256 over every regular file below `dir`
std::map<std::string, std::string> tree_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = sha256_file(e.path());
  return out;
}

}  // namespace

TEST_CASE("config round-trips through json") {
  PipelineConfig c = PipelineConfig::from_json(tiny());
  c.components.push_back({"glasses", "round glasses", "glasses"});
  c.render.azimuths = {10, 20, 30};
  c.seed = 99;
  const json j = c.to_json();
  CHECK(PipelineConfig::from_json(j).to_json() == j);
  CHECK(PipelineConfig::from_json(json::object()).to_json() == PipelineConfig{}.to_json());
  CHECK(j["learn"]["iterations"] == 30);
  CHECK(j["components"].size() == 2);
}

TEST_CASE("config errors list every violation") {
  json j = {{"learn", {{"bogus", 1}, {"iterations", -5}}},
            {"paint", {{"steps", "many"}}},
            {"oracle", {{"mode", "cloud"}}},
            {"components", json::array({{{"id", "a b"}, {"prompt", "p"}, {"keyword", "k"}}, {{"id", "x"}}})}};
  const std::string msg = error_of(j);
  CHECK(msg.find("unknown key 'learn.bogus'") != std::string::npos);
  CHECK(msg.find("'paint.steps' must be an integer") != std::string::npos);
  CHECK(msg.find("'oracle.mode'") != std::string::npos);
  CHECK(msg.find("learn.iterations") != std::string::npos);
  CHECK(msg.find("'components[1].prompt' is required") != std::string::npos);
  CHECK(msg.find("component id 'a b'") != std::string::npos);

  CHECK(error_of({{"components", json::array({{{"id", "h"}, {"prompt", "p"}, {"keyword", "k"}},
                                              {{"id", "h"}, {"prompt", "q"}, {"keyword", "k"}}})}}) != "");
  CHECK(error_of({{"synthetic", {{"shell", {{"radii", {1, 2}}}}}}}) != "");
  CHECK(error_of(tiny()) == "");
}

TEST_CASE("overrides parse JSON values and fall back to strings") {
  json j = json::object();
  apply_override(j, "learn.iterations=12");
  apply_override(j, "prompt=a bust of a man");
  apply_override(j, "render.azimuths=[0, 180]");
  apply_override(j, "stages.animate=false");
  CHECK(j["learn"]["iterations"] == 12);
  CHECK(j["prompt"] == "a bust of a man");
  CHECK(j["render"]["azimuths"] == json({0, 180}));
  CHECK(j["stages"]["animate"] == false);
  CHECK_THROWS_AS(apply_override(j, "noequals"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "=3"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "prompt.x=1"), ConfigError);

  const fs::path dir = scratch("overrides");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << tiny().dump();
  const PipelineConfig c = load_pipeline_config(dir / "c.json", {"learn.iterations=7", "seed=5"});
  CHECK(c.learn.iterations == 7);
  CHECK(c.seed == 5);
  CHECK(c.paint.steps == 30);
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK_THROWS_AS(load_pipeline_config(dir / "bad.json", {}), ConfigError);
  CHECK_THROWS_AS(load_pipeline_config(dir / "missing.json", {}), ConfigError);
}

TEST_CASE("stages refuse to run before their inputs") {
  const fs::path ws = scratch("prereq");
  Pipeline p(ws, PipelineConfig::from_json(tiny()));
  for (const auto& [stage, needed] : std::vector<std::pair<std::string, std::string>>{
           {"paint", "fit"}, {"learn", "paint"}, {"refine", "learn"}, {"compose", "paint"}, {"render", "compose"}}) {
    try {
      p.run(stage);
      FAIL("ran without inputs: " << stage);
    } catch (const PrerequisiteError& e) {
      CHECK(std::string(e.what()).find("stage '" + needed + "' required") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(p.run("sculpt"), ConfigError);
}

TEST_CASE("synthetic run produces a reproducible avatar bundle") {
  const PipelineConfig cfg = PipelineConfig::from_json(tiny());
  const fs::path a = scratch("run_a"), b = scratch("run_b");
  std::ostringstream events;
  {
    Pipeline p(a, cfg, {&events, true});
    const auto reports = p.run_all();
    REQUIRE(reports.size() == stage_names().size());
    for (const auto& r : reports) CHECK_FALSE(r.skipped);
  }
  for (const char* f : {"fit/params.json", "fit/model.bmdl", "paint/texture.png", "learn/hair.rfc", "learn/hair.jsonl",
                        "refine/hair.rfc", "compose/avatar/rig.json", "render/view_000.png", "render/view_001.png",
                        "animate/frame_002.png", "animate/animation.json"})
    CHECK_MESSAGE(fs::exists(a / f), f);

  const AvatarRig rig = load_avatar(a / "compose" / "avatar");
  REQUIRE(rig.components.size() == 1);
  CHECK(rig.components[0].component.id == "hair");
  CHECK(rig.provenance["components_from"] == "refine");

  // Every event is one JSON object per line.
  std::istringstream lines(events.str());
  std::string line;
  int done = 0;
  while (std::getline(lines, line)) done += json::parse(line)["event"] == "stage_done";
  CHECK(done == 7);

  SUBCASE("rerun is a no-op") {
    Pipeline p(a, cfg);
    for (const auto& r : p.run_all()) CHECK(r.skipped);
  }

  SUBCASE("same seed and config give identical bytes") {
    Pipeline(b, cfg).run_all();
    const auto ha = tree_hashes(a), hb = tree_hashes(b);
    REQUIRE(ha.size() == hb.size());
    for (const auto& [rel, h] : ha) {
      // the bundle records the absolute model path
      if (rel == "compose/avatar/rig.json" || rel.ends_with("stage.json")) continue;
      CHECK_MESSAGE(hb.at(rel) == h, rel);
    }
  }

  SUBCASE("config changes mark downstream stages stale") {
    json j = tiny();
    j["paint"]["steps"] = 31;
    Pipeline p(a, PipelineConfig::from_json(j));
    try {
      p.run("render");
      FAIL("render ran on a stale bundle");
    } catch (const PrerequisiteError& e) {
      CHECK(std::string(e.what()).find("stage 'compose' required (its outputs are stale") != std::string::npos);
    }
    CHECK(p.run("fit").skipped);
    CHECK_FALSE(p.run("paint").skipped);
  }

  SUBCASE("tampered outputs are regenerated") {
    std::ofstream(a / "render" / "view_000.png", std::ios::app) << "x";
    Pipeline p(a, cfg);
    CHECK_FALSE(p.run("render").skipped);
    CHECK(p.run("render").skipped);
    CHECK(p.run("animate").skipped);
  }
}

TEST_CASE("seeds are derived per stage") {
  Pipeline p(scratch("seeds"), PipelineConfig{});
  CHECK(p.stage_seed("fit") != p.stage_seed("learn"));
  PipelineConfig other;
  other.seed = 1;
  CHECK(Pipeline(scratch("seeds"), other).stage_seed("fit") != p.stage_seed("fit"));
  CHECK(p.fingerprint("fit") != p.fingerprint("paint"));
  PipelineConfig moved;
  moved.oracle.endpoint = "http://elsewhere:1";
  CHECK(Pipeline(scratch("seeds"), moved).fingerprint("learn") == p.fingerprint("learn"));
}

TEST_CASE("exit codes follow the error taxonomy") {
  CHECK(exit_code(ConfigError("x")) == 2);
  CHECK(exit_code(InputError("x")) == 2);
  CHECK(exit_code(LoadError("x")) == 2);
  CHECK(exit_code(PrerequisiteError("x")) == 3);
  CHECK(exit_code(OracleError("x", true)) == 4);
  CHECK(exit_code(NumericError("x")) == 5);
  CHECK(exit_code(std::runtime_error("x")) == 1);
}

TEST_CASE("workspace lock") {
  const fs::path ws = scratch("lock");
  {
    WorkspaceLock held(ws);
    CHECK(fs::exists(ws / ".compav.lock"));
    CHECK_THROWS_AS(WorkspaceLock second(ws), PrerequisiteError);
  }
  CHECK_FALSE(fs::exists(ws / ".compav.lock"));
  // pid 0 is never a live holder
  std::ofstream(ws / ".compav.lock") << "0\n";
  WorkspaceLock taken(ws);
  long pid = 0;
  std::ifstream(ws / ".compav.lock") >> pid;
  CHECK(pid == ::getpid());
}

TEST_CASE("bridge mode over HTTP matches synthetic mode") {
  json j = tiny();
  const PipelineConfig synth = PipelineConfig::from_json(j);
  j["oracle"] = {{"mode", "bridge"}, {"endpoint", "http://127.0.0.1:1"}, {"timeout", 30.0}};
  const PipelineConfig bridge = PipelineConfig::from_json(j);

  const fs::path a = scratch("bridge_synth"), b = scratch("bridge_http");
  auto served = make_synthetic_oracle(synth, b);
  OracleServer server(*served);
  const int port = server.start();
  ::setenv(kEndpointEnv, ("http://127.0.0.1:" + std::to_string(port)).c_str(), 1);

  Pipeline ps(a, synth), pb(b, bridge);
  for (const char* s : {"fit", "paint", "learn"}) {
    ps.run(s);
    pb.run(s);
  }
  ::unsetenv(kEndpointEnv);
  server.stop();
  for (const char* f : {"fit/params.json", "paint/texture.png", "learn/hair.rfc", "learn/hair.jsonl"})
    CHECK_MESSAGE(sha256_file(a / f) == sha256_file(b / f), f);
}
