#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "medvl/errors.hpp"
#include "medvl/grounding.hpp"
#include "medvl/language_model.hpp"
#include "medvl/model_bundle.hpp"
#include "medvl/prompting.hpp"
#include "medvl/vision_encoder.hpp"

namespace medvl {

/// What the service needs from a model. Implementations must be safe to call
/// from several request threads at once.
class InferenceEngine {
 public:
  virtual ~InferenceEngine() = default;
  virtual GenerationResult generate(const ImageTensor& image, const RenderedPrompt& prompt,
                                    const GenerationConfig& gen) const = 0;
  /// Side length the preprocessing step resizes to.
  virtual int image_side() const = 0;
  virtual int vocab_size() const = 0;
  virtual std::string checkpoint_id() const = 0;
  virtual std::uint64_t weight_checksum() const = 0;
};

/// Serves a ModelBundle. Generation only reads the weights.
class BundleEngine : public InferenceEngine {
 public:
  BundleEngine(std::unique_ptr<ModelBundle> bundle, std::string checkpoint_id);

  GenerationResult generate(const ImageTensor& image, const RenderedPrompt& prompt,
                            const GenerationConfig& gen) const override;
  int image_side() const override { return bundle_->config().encoder.image_side; }
  int vocab_size() const override { return bundle_->config().lm.vocab_size; }
  std::string checkpoint_id() const override { return id_; }
  std::uint64_t weight_checksum() const override { return bundle_->store().checksum(); }

 private:
  std::unique_ptr<ModelBundle> bundle_;
  std::string id_;
};

/// Error mapped to an HTTP status.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message, std::string request_id = {})
      : Error(message), status_(status), code_(std::move(code)), request_id_(std::move(request_id)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  const std::string& request_id() const noexcept { return request_id_; }

 private:
  int status_;
  std::string code_;
  std::string request_id_;
};

struct GenerateRequest {
  std::string image_base64;
  std::string task;
  std::string instruction;
  int max_new_tokens = 64;
  std::optional<double> temperature;  // sampling when set and > 0, greedy otherwise
  std::optional<std::uint64_t> seed;
};

/// Throws ServiceError(400) on missing or mistyped fields.
GenerateRequest parse_generate_request(const nlohmann::json& body);

struct ResponseSpan {
  std::optional<std::string> phrase;
  PixelBox pixel_box;  // against the original image size
  NormalizedBox normalized_box;
};

struct GenerateResponse {
  std::string request_id;
  std::string text;
  std::vector<ResponseSpan> spans;
  std::size_t malformed_span_count = 0;
  double latency_ms = 0;
  bool truncated = false;
};

nlohmann::json response_json(const GenerateResponse& r);

/// Generated text is raw bytes and need not be valid UTF-8; invalid
/// sequences are replaced with U+FFFD instead of failing the response.
std::string dump_json(const nlohmann::json& j, int indent = -1);

struct ServiceConfig {
  std::size_t max_concurrent = 4;
  std::size_t max_instruction_bytes = 512;
  int max_new_tokens_limit = 256;
};

enum class ServiceState { loading, ready, failed };
std::string_view state_name(ServiceState s);

class Service {
 public:
  explicit Service(ServiceConfig config = {});

  /// Runs `loader` on the calling thread; state becomes ready, or failed
  /// with the exception text.
  void load(const std::function<std::shared_ptr<const InferenceEngine>()>& loader);
  void set_engine(std::shared_ptr<const InferenceEngine> engine);
  void set_failed(std::string reason);

  ServiceState state() const;

  /// decode -> preprocess -> prompt -> generate -> parse spans -> pixels.
  /// Errors: 400 (decode_error, unknown_task, invalid_request, overlength),
  /// 429 (busy), 503 (not_ready), 500 (internal, carries the request id).
  GenerateResponse handle_generate(const GenerateRequest& request);

  /// JSON in, (status, JSON body) out; never throws.
  std::pair<int, nlohmann::json> handle_generate_json(const std::string& body);
  nlohmann::json handle_health() const;
  nlohmann::json handle_tasks() const;

  const ServiceConfig& config() const { return config_; }
  std::size_t requests_served() const { return served_.load(); }

 private:
  std::string next_request_id();
  std::shared_ptr<const InferenceEngine> engine() const;

  ServiceConfig config_;
  mutable std::mutex mu_;
  ServiceState state_ = ServiceState::loading;
  std::string failure_;
  std::shared_ptr<const InferenceEngine> engine_;
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::uint64_t> counter_{0};
  std::atomic<std::size_t> served_{0};
  std::chrono::steady_clock::time_point started_;
};

/// HTTP front end: POST /api/generate, GET /api/health, GET /api/tasks.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and returns the port; port 0 picks an ephemeral one. Throws
  /// ConfigError when binding fails.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  /// listen() on a background thread.
  void start();
  /// Joins the background listener started by start().
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace medvl
