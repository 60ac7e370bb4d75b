#include <algorithm>
#include <atomic>
#include <fstream>
#include <thread>

#include "compav/errors.hpp"
#include "compav/protocol.hpp"

#include <httplib.h>

namespace compav {

using nlohmann::json;
namespace pr = protocol;

struct OracleServer::Impl {
  explicit Impl(Oracle& oracle, std::size_t max_payload) : handler(oracle, max_payload) {
    server.set_payload_max_length(max_payload);
    auto route = [this](const std::string& cap) {
      return [this, cap](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard<std::mutex> lock(mutex);  // one request at a time per oracle
        auto [status, body] = handler.handle(cap, req.body);
        res.status = status;
        res.set_content(body.dump(), "application/json");
      };
    };
    for (const auto& cap : pr::capabilities()) server.Post("/" + cap, route(cap));
    server.Post("/health", route("health"));
    server.Get("/health", route("health"));
    server.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
      if (res.status == 413) {
        res.set_content(pr::error_body("payload_too_large",
                                       "request exceeds the limit of " + std::to_string(handler.max_payload()) +
                                           " bytes",
                                       "", false)
                            .dump(),
                        "application/json");
      } else if (res.body.empty()) {
        res.set_content(pr::error_body(res.status == 404 ? "unknown_capability" : "bad_request",
                                       "HTTP " + std::to_string(res.status), "", false)
                            .dump(),
                        "application/json");
      }
    });
  }

  pr::Handler handler;
  httplib::Server server;
  std::mutex mutex;
  std::thread thread;
};

OracleServer::OracleServer(Oracle& oracle, std::size_t max_payload)
    : impl_(std::make_unique<Impl>(oracle, max_payload)) {}

OracleServer::~OracleServer() { stop(); }

int OracleServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw ConfigError("cannot bind oracle server to " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void OracleServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port))
    throw ConfigError("cannot serve on " + host + ":" + std::to_string(port));
}

void OracleServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

struct HttpOracle::Impl {
  Impl(const std::string& endpoint, HttpOracleOptions o) : client(endpoint), options(o) {
    if (!client.is_valid()) throw ConfigError("invalid oracle endpoint '" + endpoint + "'");
    const auto secs = static_cast<time_t>(o.timeout_seconds);
    const auto usecs = static_cast<time_t>((o.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
  }
  httplib::Client client;
  HttpOracleOptions options;
  std::atomic<long> counter{0};
};

HttpOracle::HttpOracle(const std::string& endpoint, HttpOracleOptions options)
    : impl_(std::make_unique<Impl>(endpoint, options)) {}

HttpOracle::~HttpOracle() = default;

json HttpOracle::call(const std::string& capability, json body) {
  const std::string rid = "req-" + std::to_string(++impl_->counter);
  body["schema_version"] = kProtocolVersion;
  body["request_id"] = rid;
  const std::string text = body.dump();
  if (text.size() > impl_->options.max_payload)
    throw OracleError(capability + ": request of " + std::to_string(text.size()) + " bytes exceeds the limit of " +
                          std::to_string(impl_->options.max_payload) + " bytes",
                      false);
  auto res = impl_->client.Post("/" + capability, text, "application/json");
  if (!res) throw OracleError(capability + ": transport failure (" + httplib::to_string(res.error()) + ")", true);
  json out;
  try {
    out = json::parse(res->body);
  } catch (const json::exception&) {
    throw OracleError(capability + ": HTTP " + std::to_string(res->status) + " with a non-JSON body",
                      res->status >= 500);
  }
  if (out.is_object() && out.contains("error")) {
    const json& e = out["error"];
    const std::string msg = e.value("message", std::string("unknown error"));
    const std::string field = e.value("field", std::string());
    const std::string code = e.value("code", std::string("error"));
    const bool retry = e.value("retryable", res->status >= 500) && code != "unsupported";
    const std::string what = capability + ": " + code + ": " + msg;
    if (code == "unsupported") throw UnsupportedCapability(capability);
    if (!field.empty()) throw pr::ProtocolError(field, what);
    throw OracleError(what, retry);
  }
  if (res->status != 200)
    throw OracleError(capability + ": HTTP " + std::to_string(res->status), res->status >= 500);
  if (!out.is_object() || !out.contains("schema_version") || out["schema_version"] != kProtocolVersion)
    throw pr::ProtocolError("schema_version", capability + ": response schema_version " +
                                                  (out.is_object() && out.contains("schema_version")
                                                       ? out["schema_version"].dump()
                                                       : std::string("missing")) +
                                                  " does not match " + std::to_string(kProtocolVersion));
  if (out.value("request_id", json()) != rid) throw pr::ProtocolError("request_id", capability + ": not echoed");
  const auto problems = pr::check_response(capability, out);
  if (!problems.empty()) {
    std::string all;
    for (const auto& p : problems) all += (all.empty() ? "" : "; ") + p;
    throw pr::ProtocolError("", capability + " response does not conform: " + all);
  }
  return out;
}

OracleHealth HttpOracle::health() {
  OracleHealth h = pr::read_health(call("health", json::object()));
  if (h.schema_version != kProtocolVersion)
    throw pr::ProtocolError("schema_version", "oracle speaks protocol " + std::to_string(h.schema_version));
  return h;
}

FeatureImage HttpOracle::generate(const GenerateRequest& r) {
  return pr::read_image(call("generate", pr::generate_request(r)), "image");
}

DenoiseResponse HttpOracle::denoise(const DenoiseRequest& r) {
  const json out = call("denoise", pr::denoise_request(r));
  DenoiseResponse d;
  std::vector<int> shape;
  d.eps_hat = FeatureImage(r.q.height, r.q.width, r.q.channels);
  d.eps_hat.data = pr::read_tensor(out, "eps_hat", {r.q.height, r.q.width, r.q.channels});
  d.u_t = out["u_t"].get<double>();
  return d;
}

ScalarImage HttpOracle::segment(const SegmentRequest& r) {
  return pr::read_scalar_image(call("segment", pr::segment_request(r)), "mask");
}

namespace {

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Eigen::VectorXd HttpOracle::embed_image(const FeatureImage& image) {
  return to_vector(pr::read_tensor(call("embed_image", {{"image", pr::image_json(image)}}), "embedding", {-1}));
}

FeatureImage HttpOracle::embed_image_vjp(const FeatureImage& image, const Eigen::VectorXd& cotangent) {
  const json body = {{"image", pr::image_json(image)},
                     {"cotangent", pr::tensor({cotangent.data(), static_cast<std::size_t>(cotangent.size())},
                                              {static_cast<int>(cotangent.size())})}};
  FeatureImage g(image.height, image.width, image.channels);
  g.data = pr::read_tensor(call("embed_image_vjp", body), "gradient", {image.height, image.width, image.channels});
  return g;
}

Eigen::VectorXd HttpOracle::embed_text(const std::string& text) {
  return to_vector(pr::read_tensor(call("embed_text", {{"text", text}}), "embedding", {-1}));
}

FeatureImage HttpOracle::encode(const FeatureImage& rgb) {
  return pr::read_image(call("encode", {{"image", pr::image_json(rgb)}}), "latent");
}

FeatureImage HttpOracle::decode(const FeatureImage& latent) {
  return pr::read_image(call("decode", {{"latent", pr::image_json(latent)}}), "image");
}

LandmarkSet HttpOracle::landmarks(const FeatureImage& image) {
  const json out = call("landmarks", {{"image", pr::image_json(image)}});
  std::vector<int> shape;
  const std::vector<double> pts = pr::read_tensor(out, "points", {-1, 3}, &shape);
  const std::vector<double> ids = pr::read_tensor(out, "vertices", {shape[0]});
  const std::vector<double> conf = pr::read_tensor(out, "confidence", {shape[0]});
  LandmarkSet l;
  l.points.resize(shape[0], 3);
  for (int i = 0; i < shape[0]; ++i)
    for (int c = 0; c < 3; ++c) l.points(i, c) = pts[static_cast<std::size_t>(3 * i + c)];
  for (double v : ids) l.vertices.push_back(static_cast<int>(v));
  l.confidence = to_vector(conf);
  return l;
}

namespace {

ConformanceCheck check_raw(httplib::Client& client, const std::string& name, const std::string& capability,
                           json body, bool supported) {
  ConformanceCheck c{name, {}};
  body["schema_version"] = kProtocolVersion;
  body["request_id"] = name;
  for (const auto& p : pr::check_request(capability, body)) c.problems.push_back("fixture: " + p);
  httplib::Result res = capability == "health" ? client.Get("/health")
                                               : client.Post("/" + capability, body.dump(), "application/json");
  if (!res) {
    c.problems.push_back("transport failure: " + httplib::to_string(res.error()));
    return c;
  }
  json out;
  try {
    out = json::parse(res->body);
  } catch (const json::exception&) {
    c.problems.push_back("HTTP " + std::to_string(res->status) + " with a non-JSON body");
    return c;
  }
  if (!supported) {
    if (res->status != 501 || !out.contains("error") || out["error"].value("code", "") != "unsupported")
      c.problems.push_back("unadvertised capability must answer 501 with code 'unsupported', got HTTP " +
                           std::to_string(res->status));
    return c;
  }
  if (res->status != 200) {
    c.problems.push_back("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    return c;
  }
  if (capability != "health" && out.value("request_id", json()) != name) c.problems.push_back("request_id: not echoed");
  for (const auto& p : pr::check_response(capability, out)) c.problems.push_back(p);
  return c;
}

}  // namespace

std::vector<ConformanceCheck> conformance_suite(const std::string& endpoint, const std::filesystem::path& fixtures) {
  std::vector<ConformanceCheck> out;
  httplib::Client client(endpoint);
  client.set_read_timeout(300, 0);
  OracleHealth health;
  {
    ConformanceCheck c = check_raw(client, "health", "health", json::object(), true);
    if (c.ok()) {
      auto res = client.Get("/health");
      health = pr::read_health(json::parse(res->body));
    }
    out.push_back(c);
    if (!c.ok()) return out;
  }

  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(fixtures))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    json fx;
    try {
      fx = json::parse(in);
    } catch (const json::exception& e) {
      out.push_back({f.filename().string(), {std::string("unreadable fixture: ") + e.what()}});
      continue;
    }
    const std::string cap = fx.value("capability", "");
    if (cap == "health") continue;
    json body = fx.value("request", json::object());
    if (cap == "embed_image_vjp" && health.supports("embed_image")) {
      // The cotangent must match the endpoint's embedding size.
      auto res = client.Post("/embed_image",
                             json{{"schema_version", kProtocolVersion}, {"image", body["image"]}}.dump(),
                             "application/json");
      if (res && res->status == 200) {
        const auto n = static_cast<int>(pr::read_tensor(json::parse(res->body), "embedding", {-1}).size());
        std::vector<double> cot(static_cast<std::size_t>(n), 0.0);
        if (n > 0) cot[0] = 1.0;
        body["cotangent"] = pr::tensor(cot, {n});
      }
    }
    out.push_back(check_raw(client, f.stem().string(), cap, body, health.supports(cap)));
    if (cap == "denoise" && health.supports("denoise") && out.back().ok()) {
      ConformanceCheck rep{"denoise_repeatable", {}};
      body["schema_version"] = kProtocolVersion;
      auto a = client.Post("/denoise", body.dump(), "application/json");
      auto b = client.Post("/denoise", body.dump(), "application/json");
      if (!a || !b || a->status != 200 || b->status != 200) rep.problems.push_back("repeat calls failed");
      else if (json::parse(a->body)["eps_hat"] != json::parse(b->body)["eps_hat"])
        rep.problems.push_back("eps_hat: differs between identical requests");
      out.push_back(rep);
    }
  }

  ConformanceCheck version{"schema_version_refused", {}};
  auto res = client.Post("/embed_text",
                         json{{"schema_version", kProtocolVersion + 1}, {"request_id", "v"}, {"text", "x"}}.dump(),
                         "application/json");
  if (!res) version.problems.push_back("transport failure");
  else if (res->status != 400 || json::parse(res->body)["error"].value("field", "") != "schema_version")
    version.problems.push_back("schema_version mismatch must answer 400 naming 'schema_version', got HTTP " +
                               std::to_string(res->status));
  out.push_back(version);
  return out;
}

}  // namespace compav
