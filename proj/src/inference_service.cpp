#include "medvl/inference_service.hpp"

#include <iomanip>
#include <sstream>

#include "httplib.h"
#include "medvl/image_io.hpp"
#include "medvl/tokenizer.hpp"

namespace medvl {

using nlohmann::json;

namespace {

json box_json(const PixelBox& b) {
  return {{"x_left", b.x_left}, {"y_top", b.y_top}, {"x_right", b.x_right}, {"y_bottom", b.y_bottom}};
}

json box_json(const NormalizedBox& b) {
  return {{"x_left", b.x_left}, {"y_top", b.y_top}, {"x_right", b.x_right}, {"y_bottom", b.y_bottom}};
}

json error_json(const std::string& code, const std::string& message, const std::string& request_id) {
  json e = {{"code", code}, {"message", message}};
  if (!request_id.empty()) e["request_id"] = request_id;
  return {{"error", e}};
}

class InFlight {
 public:
  InFlight(std::atomic<std::size_t>& counter, std::size_t cap) : counter_(counter) {
    if (counter_.fetch_add(1) >= cap) {
      counter_.fetch_sub(1);
      throw ServiceError(429, "busy", "too many concurrent requests");
    }
  }
  ~InFlight() { counter_.fetch_sub(1); }
  InFlight(const InFlight&) = delete;
  InFlight& operator=(const InFlight&) = delete;

 private:
  std::atomic<std::size_t>& counter_;
};

}  // namespace

BundleEngine::BundleEngine(std::unique_ptr<ModelBundle> bundle, std::string checkpoint_id)
    : bundle_(std::move(bundle)), id_(std::move(checkpoint_id)) {}

GenerationResult BundleEngine::generate(const ImageTensor& image, const RenderedPrompt& prompt,
                                        const GenerationConfig& gen) const {
  return bundle_->generate(image, prompt, gen);
}

GenerateRequest parse_generate_request(const json& body) {
  if (!body.is_object()) throw ServiceError(400, "invalid_request", "request body must be a JSON object");
  GenerateRequest r;
  auto str = [&](const char* key, std::string& out) {
    auto it = body.find(key);
    if (it == body.end() || !it->is_string()) {
      throw ServiceError(400, "invalid_request", std::string("field '") + key + "' must be a string");
    }
    out = it->get<std::string>();
  };
  str("image", r.image_base64);
  str("task", r.task);
  str("instruction", r.instruction);
  if (auto it = body.find("max_new_tokens"); it != body.end()) {
    if (!it->is_number_integer()) throw ServiceError(400, "invalid_request", "max_new_tokens must be an integer");
    r.max_new_tokens = it->get<int>();
  }
  if (auto it = body.find("temperature"); it != body.end() && !it->is_null()) {
    if (!it->is_number()) throw ServiceError(400, "invalid_request", "temperature must be a number");
    r.temperature = it->get<double>();
  }
  if (auto it = body.find("seed"); it != body.end() && !it->is_null()) {
    if (!it->is_number_unsigned()) throw ServiceError(400, "invalid_request", "seed must be a non-negative integer");
    r.seed = it->get<std::uint64_t>();
  }
  return r;
}

std::string dump_json(const json& j, int indent) {
  return j.dump(indent, ' ', false, json::error_handler_t::replace);
}

json response_json(const GenerateResponse& r) {
  json spans = json::array();
  for (const auto& s : r.spans) {
    spans.push_back({{"phrase", s.phrase ? json(*s.phrase) : json(nullptr)},
                     {"pixel_box", box_json(s.pixel_box)},
                     {"normalized_box", box_json(s.normalized_box)}});
  }
  return {{"request_id", r.request_id},
          {"text", r.text},
          {"spans", spans},
          {"malformed_span_count", r.malformed_span_count},
          {"latency_ms", r.latency_ms},
          {"truncated", r.truncated}};
}

std::string_view state_name(ServiceState s) {
  switch (s) {
    case ServiceState::loading: return "loading";
    case ServiceState::ready: return "ready";
    case ServiceState::failed: return "failed";
  }
  return "unknown";
}

Service::Service(ServiceConfig config) : config_(config), started_(std::chrono::steady_clock::now()) {
  if (config_.max_concurrent == 0) throw ConfigError("max_concurrent must be >= 1");
}

void Service::load(const std::function<std::shared_ptr<const InferenceEngine>()>& loader) {
  try {
    set_engine(loader());
  } catch (const std::exception& e) {
    set_failed(e.what());
  }
}

void Service::set_engine(std::shared_ptr<const InferenceEngine> engine) {
  std::lock_guard lock(mu_);
  if (!engine) {
    state_ = ServiceState::failed;
    failure_ = "no engine";
    return;
  }
  engine_ = std::move(engine);
  state_ = ServiceState::ready;
  failure_.clear();
}

void Service::set_failed(std::string reason) {
  std::lock_guard lock(mu_);
  engine_.reset();
  state_ = ServiceState::failed;
  failure_ = std::move(reason);
}

ServiceState Service::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

std::shared_ptr<const InferenceEngine> Service::engine() const {
  std::lock_guard lock(mu_);
  return engine_;
}

std::string Service::next_request_id() {
  std::ostringstream os;
  os << "req-" << std::setw(8) << std::setfill('0') << std::hex << counter_.fetch_add(1) + 1;
  return os.str();
}

GenerateResponse Service::handle_generate(const GenerateRequest& req) {
  const auto t0 = std::chrono::steady_clock::now();
  InFlight guard(in_flight_, config_.max_concurrent);
  auto eng = engine();
  if (!eng) throw ServiceError(503, "not_ready", "model is " + std::string(state_name(state())));

  GenerateResponse resp;
  resp.request_id = next_request_id();

  TaskIdentifier task;
  try {
    task = parse_task(req.task);
  } catch (const UnknownTaskError& e) {
    throw ServiceError(400, "unknown_task", e.what());
  }
  if (req.instruction.empty()) {
    throw ServiceError(400, "invalid_request",
                       task == TaskIdentifier::detection ? "detection needs a disease label" : "instruction is empty");
  }
  if (req.instruction.size() > config_.max_instruction_bytes) {
    throw ServiceError(400, "overlength", "instruction exceeds " + std::to_string(config_.max_instruction_bytes) + " bytes");
  }
  if (req.max_new_tokens < 1 || req.max_new_tokens > config_.max_new_tokens_limit) {
    throw ServiceError(400, "invalid_request",
                       "max_new_tokens must be in [1, " + std::to_string(config_.max_new_tokens_limit) + "]");
  }

  RgbImage image;
  try {
    image = decode_image(base64_decode(req.image_base64));
  } catch (const DecodeError& e) {
    throw ServiceError(400, "decode_error", e.what());
  }
  const ImageSize original{image.width, image.height};

  RenderedPrompt prompt;
  try {
    prompt = render_prompt({task, req.instruction, 1});
  } catch (const SchemaError& e) {
    throw ServiceError(400, "invalid_request", e.what());
  }

  GenerationConfig gen;
  gen.max_new_tokens = req.max_new_tokens;
  if (req.temperature && *req.temperature > 0) {
    gen.mode = DecodeMode::sample;
    gen.temperature = *req.temperature;
  }
  gen.seed = req.seed.value_or(0);

  GenerationResult out;
  try {
    out = eng->generate(preprocess(image, eng->image_side()), prompt, gen);
  } catch (const ContextError& e) {
    throw ServiceError(400, "overlength", e.what());
  } catch (const std::exception& e) {
    throw ServiceError(500, "internal", std::string("generation failed: ") + e.what(), resp.request_id);
  }

  resp.text = out.text;
  resp.truncated = out.truncated;
  const ParsedSpans parsed = parse_spans(out.text);
  resp.malformed_span_count = parsed.malformed_count;
  for (const auto& span : parsed.spans) {
    try {
      resp.spans.push_back({span.phrase, denormalize_box(span.box, original), span.box});
    } catch (const InvalidBoxError&) {
      ++resp.malformed_span_count;
    }
  }
  resp.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  ++served_;
  return resp;
}

std::pair<int, json> Service::handle_generate_json(const std::string& body) {
  try {
    json parsed;
    try {
      parsed = json::parse(body);
    } catch (const json::parse_error& e) {
      throw ServiceError(400, "invalid_request", std::string("body is not JSON: ") + e.what());
    }
    return {200, response_json(handle_generate(parse_generate_request(parsed)))};
  } catch (const ServiceError& e) {
    return {e.status(), error_json(e.code(), e.what(), e.request_id())};
  } catch (const std::exception& e) {
    const auto id = next_request_id();
    return {500, error_json("internal", e.what(), id)};
  }
}

json Service::handle_health() const {
  std::lock_guard lock(mu_);
  json h = {{"status", state_name(state_)},
            {"uptime_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count()}};
  if (engine_) {
    h["checkpoint_id"] = engine_->checkpoint_id();
    h["vocab_size"] = engine_->vocab_size();
  } else {
    h["checkpoint_id"] = nullptr;
    h["vocab_size"] = nullptr;
  }
  if (state_ == ServiceState::failed) h["reason"] = failure_;
  return h;
}

json Service::handle_tasks() const {
  json tasks = json::array();
  for (TaskIdentifier t : kAllTasks) tasks.push_back(std::string(task_name(t)));
  return {{"tasks", tasks}};
}

struct HttpServer::Impl {
  httplib::Server server;
  Service* service = nullptr;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>()) {
  impl_->service = &service;
  auto& srv = impl_->server;
  Service* svc = &service;
  srv.Post("/api/generate", [svc](const httplib::Request& req, httplib::Response& res) {
    auto [status, body] = svc->handle_generate_json(req.body);
    res.status = status;
    res.set_content(dump_json(body), "application/json");
  });
  srv.Get("/api/health", [svc](const httplib::Request&, httplib::Response& res) {
    res.set_content(dump_json(svc->handle_health()), "application/json");
  });
  srv.Get("/api/tasks", [svc](const httplib::Request&, httplib::Response& res) {
    res.set_content(dump_json(svc->handle_tasks()), "application/json");
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
    res.status = 500;
    res.set_content(dump_json(error_json("internal", "unhandled server error", {})), "application/json");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace medvl
