#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "compav/errors.hpp"
#include "compav/oracle.hpp"

// Oracle wire protocol: JSON bodies over HTTP POST, one path per capability
// (/generate, /denoise, ...; /health is GET or POST). Tensors travel as
// {"shape": [...], "dtype": "float64" | "float32" | "int32", "data": base64
// little-endian}. Every request and response carries schema_version; the
// response echoes request_id. Failures are {"error": {"code", "message",
// "field", "retryable"}} with a matching HTTP status.
namespace compav::protocol {

using nlohmann::json;

inline constexpr std::size_t kDefaultMaxPayload = std::size_t{64} << 20;

inline const std::vector<std::string>& capabilities() {
  static const std::vector<std::string> names{"generate", "denoise",     "segment", "embed_image", "embed_image_vjp",
                                              "embed_text", "encode",    "decode",  "landmarks"};
  return names;
}

// Malformed message; `field` is a JSON path such as "q_t.shape".
class ProtocolError : public OracleError {
 public:
  ProtocolError(const std::string& field, const std::string& what)
      : OracleError(field.empty() ? what : field + ": " + what, false), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

json tensor(std::span<const double> values, const std::vector<int>& shape, const std::string& dtype = "float64");
json tensor(std::span<const int> values, const std::vector<int>& shape);
// Decodes and checks the rank (and the shape where an entry is >= 0).
std::vector<double> read_tensor(const json& message, const std::string& field, const std::vector<int>& expect,
                                std::vector<int>* shape = nullptr);

json image_json(const FeatureImage& image);  // {"data": tensor [H,W,C], "alpha": tensor [H,W]}
FeatureImage read_image(const json& message, const std::string& field);
json scalar_image_json(const ScalarImage& image);
ScalarImage read_scalar_image(const json& message, const std::string& field);
json camera_json(const Camera& camera);
Camera read_camera(const json& message, const std::string& field);
json health_json(const OracleHealth& health);
OracleHealth read_health(const json& message);

// Request bodies (without envelope) for each capability.
json generate_request(const GenerateRequest& r);
GenerateRequest read_generate_request(const json& m);
json denoise_request(const DenoiseRequest& r);
DenoiseRequest read_denoise_request(const json& m);
json segment_request(const SegmentRequest& r);
SegmentRequest read_segment_request(const json& m);

// Schema check of a response body for a capability; returns one line per
// problem, each naming the offending field. Empty means conformant.
std::vector<std::string> check_response(const std::string& capability, const json& response);
std::vector<std::string> check_request(const std::string& capability, const json& request);

// Dispatches decoded requests to an oracle and encodes the result or the
// structured error. Returns the HTTP status alongside the body.
class Handler {
 public:
  explicit Handler(Oracle& oracle, std::size_t max_payload = kDefaultMaxPayload)
      : oracle_(oracle), max_payload_(max_payload) {}
  std::pair<int, json> handle(const std::string& capability, const std::string& body);
  std::size_t max_payload() const { return max_payload_; }

 private:
  json dispatch(const std::string& capability, const json& request);
  Oracle& oracle_;
  std::size_t max_payload_;
};

json error_body(const std::string& code, const std::string& message, const std::string& field, bool retryable,
                const json& request_id = nullptr);

}  // namespace compav::protocol

namespace compav {

// HTTP server exposing an oracle. Runs on a background thread.
class OracleServer {
 public:
  explicit OracleServer(Oracle& oracle, std::size_t max_payload = protocol::kDefaultMaxPayload);
  ~OracleServer();
  // Binds (port 0 picks a free port) and starts serving; returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct HttpOracleOptions {
  double timeout_seconds = 120.0;
  std::size_t max_payload = protocol::kDefaultMaxPayload;
};

// Oracle client for the wire protocol. Transport failures and 5xx answers
// raise retryable OracleErrors; 4xx and schema problems do not.
class HttpOracle : public Oracle {
 public:
  // endpoint like "http://127.0.0.1:8080"
  explicit HttpOracle(const std::string& endpoint, HttpOracleOptions options = {});
  ~HttpOracle() override;

  OracleHealth health() override;
  FeatureImage generate(const GenerateRequest& request) override;
  DenoiseResponse denoise(const DenoiseRequest& request) override;
  ScalarImage segment(const SegmentRequest& request) override;
  Eigen::VectorXd embed_image(const FeatureImage& image) override;
  FeatureImage embed_image_vjp(const FeatureImage& image, const Eigen::VectorXd& cotangent) override;
  Eigen::VectorXd embed_text(const std::string& text) override;
  FeatureImage encode(const FeatureImage& rgb) override;
  FeatureImage decode(const FeatureImage& latent) override;
  LandmarkSet landmarks(const FeatureImage& image) override;

  // Raw call: adds the envelope, checks the response schema.
  nlohmann::json call(const std::string& capability, nlohmann::json body);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ConformanceCheck {
  std::string name;
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

// Replays the golden requests in `fixtures` ({"capability", "request"} files)
// against a live endpoint and checks response schemas. Capabilities the
// endpoint does not advertise must answer with the structured 501 error.
// Also checks /health, repeatability of /denoise and refusal of a
// mismatched schema_version.
std::vector<ConformanceCheck> conformance_suite(const std::string& endpoint, const std::filesystem::path& fixtures);

}  // namespace compav
