#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "compav/encoding.hpp"
#include "compav/errors.hpp"
#include "compav/model_io.hpp"
#include "compav/pipeline.hpp"
#include "compav/protocol.hpp"
#include "compav/toy_model.hpp"

using namespace compav;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct StageArgs {
  std::string workspace = "workspace";
  std::string config;
  std::vector<std::string> overrides;
};

// Explicit --config wins; otherwise the workspace's saved config, then defaults.
PipelineConfig resolve(const StageArgs& a) {
  fs::path path = a.config;
  if (path.empty() && fs::exists(fs::path(a.workspace) / "config.json")) path = fs::path(a.workspace) / "config.json";
  return load_pipeline_config(path, a.overrides);
}

void add_stage_options(CLI::App* cmd, StageArgs& a) {
  cmd->add_option("-w,--workspace", a.workspace, "Workspace directory")->capture_default_str();
  cmd->add_option("-c,--config", a.config, "JSON config file");
  cmd->add_option("--set", a.overrides, "Override a config key (key.path=value)")->take_all();
}

int fail(const std::exception& e, bool json_log) {
  const int code = exit_code(e);
  if (json_log) std::cout << json{{"event", "error"}, {"exit_code", code}, {"message", e.what()}}.dump() << "\n";
  else std::cerr << "compav: " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compositional avatar pipeline"};
  app.require_subcommand(1);
  bool json_log = false;
  app.add_flag("--json", json_log, "Machine-readable JSON-lines events on stdout");

  StageArgs stage_args;
  std::string stage_name;
  std::vector<CLI::App*> stage_cmds;
  const std::map<std::string, std::string> blurbs{
      {"fit", "Fit the body shape to landmarks"},
      {"paint", "Paint the UV texture from generated views"},
      {"learn", "Train latent radiance components"},
      {"refine", "Refine components in RGB"},
      {"compose", "Assemble the avatar bundle"},
      {"render", "Render views of the composed avatar"},
      {"animate", "Render an expression/jaw animation"}};
  for (const auto& s : stage_names()) {
    CLI::App* cmd = app.add_subcommand(s, blurbs.at(s));
    add_stage_options(cmd, stage_args);
    cmd->callback([&stage_name, s] { stage_name = s; });
    stage_cmds.push_back(cmd);
  }
  CLI::App* run = app.add_subcommand("run", "Run every enabled stage in order");
  add_stage_options(run, stage_args);

  CLI::App* show = app.add_subcommand("config", "Print the resolved config");
  add_stage_options(show, stage_args);

  std::string toy_out;
  std::uint64_t toy_seed = 7;
  CLI::App* toy = app.add_subcommand("toy-model", "Write the built-in toy body model");
  toy->add_option("-o,--out", toy_out, "Output .bmdl path")->required();
  toy->add_option("--seed", toy_seed, "Generator seed")->capture_default_str();

  std::string host = "127.0.0.1";
  int port = 8080;
  CLI::App* serve = app.add_subcommand("serve-synthetic", "Serve the synthetic oracle over the wire protocol");
  add_stage_options(serve, stage_args);
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();

  std::string endpoint;
  std::string fixtures;
  CLI::App* conform = app.add_subcommand("conformance", "Check an oracle endpoint against the golden fixtures");
  conform->add_option("--endpoint", endpoint, "Oracle URL (default: $COMPAV_ORACLE_ENDPOINT)");
  conform->add_option("--fixtures", fixtures, "Directory of golden request fixtures")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const PipelineLog log{json_log ? &std::cout : &std::cerr, json_log};
  try {
    if (!stage_name.empty() || run->parsed()) {
      const PipelineConfig cfg = resolve(stage_args);
      const fs::path ws = stage_args.workspace;
      WorkspaceLock lock(ws);
      write_file_atomic(ws / "config.json", cfg.to_json().dump(2) + "\n");
      Pipeline pipeline(ws, cfg, log);
      if (run->parsed()) pipeline.run_all();
      else pipeline.run(stage_name);
      return 0;
    }
    if (show->parsed()) {
      std::cout << resolve(stage_args).to_json().dump(2) << "\n";
      return 0;
    }
    if (toy->parsed()) {
      ToyModelOptions o;
      o.seed = toy_seed;
      save_model(make_toy_model(o), toy_out);
      log.event("wrote", {{"path", toy_out}});
      return 0;
    }
    if (serve->parsed()) {
      const PipelineConfig cfg = resolve(stage_args);
      auto oracle = make_synthetic_oracle(cfg, stage_args.workspace);
      OracleServer server(*oracle);
      log.event("serving", {{"host", host}, {"port", port}});
      server.run(host, port);
      return 0;
    }
    if (conform->parsed()) {
      if (endpoint.empty()) {
        const char* env = std::getenv(kEndpointEnv);
        if (!env || !*env) throw ConfigError("no endpoint given and " + std::string(kEndpointEnv) + " is unset");
        endpoint = env;
      }
      bool ok = true;
      for (const auto& c : conformance_suite(endpoint, fixtures)) {
        ok = ok && c.ok();
        log.event(c.ok() ? "conformance_pass" : "conformance_fail", {{"check", c.name}, {"problems", c.problems}});
      }
      return ok ? 0 : 4;
    }
  } catch (const std::exception& e) {
    return fail(e, json_log);
  }
  return 0;
}
