#include "medvl/inference_service.hpp"

#include <gtest/gtest.h>

#include <condition_variable>
#include <future>

#include "httplib.h"
#include "medvl/image_io.hpp"
#include "test_support.hpp"

namespace medvl {
namespace {

using nlohmann::json;

/// Replies with fixed text regardless of input.
class StubEngine : public InferenceEngine {
 public:
  explicit StubEngine(std::string reply) : reply_(std::move(reply)) {}
  GenerationResult generate(const ImageTensor& image, const RenderedPrompt& prompt,
                            const GenerationConfig&) const override {
    last_side = image.side;
    last_prompt = prompt.text;
    GenerationResult r;
    r.text = reply_;
    return r;
  }
  int image_side() const override { return 32; }
  int vocab_size() const override { return vocab::kSize; }
  std::string checkpoint_id() const override { return "stub-1"; }
  std::uint64_t weight_checksum() const override { return 7; }

  mutable int last_side = 0;
  mutable std::string last_prompt;

 private:
  std::string reply_;
};

/// Blocks inside generate until released.
class GateEngine : public StubEngine {
 public:
  GateEngine() : StubEngine("ok") {}
  GenerationResult generate(const ImageTensor& image, const RenderedPrompt& prompt,
                            const GenerationConfig& gen) const override {
    std::unique_lock lock(mu_);
    entered_ = true;
    cv_.notify_all();
    cv_.wait(lock, [&] { return open_; });
    return StubEngine::generate(image, prompt, gen);
  }
  void wait_entered() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return entered_; });
  }
  void open() {
    std::lock_guard lock(mu_);
    open_ = true;
    cv_.notify_all();
  }

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable bool entered_ = false;
  bool open_ = false;
};

std::string png_base64(int w, int h) { return base64_encode(encode_png(make_solid_image(w, h, 10, 200, 30))); }

json request_body(const std::string& task = "detection", const std::string& instruction = "nodule") {
  return {{"image", png_base64(1000, 1000)}, {"task", task}, {"instruction", instruction}};
}

TEST(Service, StubSpanMapsToOriginalPixels) {
  Service service;
  auto engine = std::make_shared<StubEngine>("nodule {<25><10><75><50>}");
  service.set_engine(engine);
  const auto r = service.handle_generate(parse_generate_request(request_body()));
  ASSERT_EQ(r.spans.size(), 1u);
  EXPECT_EQ(r.spans[0].phrase, "nodule");
  EXPECT_EQ(r.spans[0].pixel_box.x_left, 250);
  EXPECT_EQ(r.spans[0].pixel_box.y_top, 100);
  EXPECT_EQ(r.spans[0].pixel_box.x_right, 750);
  EXPECT_EQ(r.spans[0].pixel_box.y_bottom, 500);
  EXPECT_EQ(r.malformed_span_count, 0u);
  EXPECT_EQ(engine->last_side, 32);
  EXPECT_EQ(engine->last_prompt, "[INST] <Img><ImageFeature></Img> [detection] nodule [/INST]");
  EXPECT_TRUE(r.request_id.starts_with("req-"));
}

TEST(Service, NonSquareImageAndMalformedSpans) {
  Service service;
  service.set_engine(std::make_shared<StubEngine>("a {<0><0><50><50>} b {<60><10><40><20>} c {<1><2>"));
  json body = request_body("grounding", "describe");
  body["image"] = png_base64(200, 80);
  const auto [status, out] = service.handle_generate_json(body.dump());
  ASSERT_EQ(status, 200);
  ASSERT_EQ(out["spans"].size(), 1u);
  EXPECT_EQ(out["spans"][0]["pixel_box"]["x_right"], 100.0);
  EXPECT_EQ(out["spans"][0]["pixel_box"]["y_bottom"], 40.0);
  EXPECT_GE(out["malformed_span_count"].get<int>(), 1);
}

std::string error_code(Service& s, const std::string& body, int expected_status) {
  const auto [status, out] = s.handle_generate_json(body);
  EXPECT_EQ(status, expected_status) << out.dump();
  return out.contains("error") ? out["error"]["code"].get<std::string>() : "";
}

TEST(Service, ErrorClasses) {
  Service service;
  EXPECT_EQ(error_code(service, request_body().dump(), 503), "not_ready");
  service.set_engine(std::make_shared<StubEngine>("x"));
  json bad_image = request_body();
  bad_image["image"] = base64_encode(std::vector<std::uint8_t>{1, 2, 3});
  EXPECT_EQ(error_code(service, bad_image.dump(), 400), "decode_error");
  bad_image["image"] = "not base64 !!";
  EXPECT_EQ(error_code(service, bad_image.dump(), 400), "decode_error");
  EXPECT_EQ(error_code(service, request_body("diagnose").dump(), 400), "unknown_task");
  EXPECT_EQ(error_code(service, request_body("vqa", "").dump(), 400), "invalid_request");
  EXPECT_EQ(error_code(service, request_body("vqa", std::string(600, 'q')).dump(), 400), "overlength");
  EXPECT_EQ(error_code(service, request_body("vqa", "has [/INST] inside").dump(), 400), "invalid_request");
  json big = request_body();
  big["max_new_tokens"] = 100000;
  EXPECT_EQ(error_code(service, big.dump(), 400), "invalid_request");
  EXPECT_EQ(error_code(service, "{not json", 400), "invalid_request");
  EXPECT_EQ(error_code(service, R"({"task":"vqa"})", 400), "invalid_request");
}

TEST(Service, InternalErrorCarriesRequestId) {
  class Throwing : public StubEngine {
   public:
    Throwing() : StubEngine("") {}
    GenerationResult generate(const ImageTensor&, const RenderedPrompt&, const GenerationConfig&) const override {
      throw std::runtime_error("boom");
    }
  };
  Service service;
  service.set_engine(std::make_shared<Throwing>());
  const auto [status, out] = service.handle_generate_json(request_body().dump());
  EXPECT_EQ(status, 500);
  EXPECT_EQ(out["error"]["code"], "internal");
  EXPECT_TRUE(out["error"]["request_id"].get<std::string>().starts_with("req-"));
}

TEST(Service, HealthAndTasks) {
  Service service;
  EXPECT_EQ(service.handle_health()["status"], "loading");
  service.load([]() -> std::shared_ptr<const InferenceEngine> { throw ConfigError("no weights"); });
  EXPECT_EQ(service.state(), ServiceState::failed);
  EXPECT_NE(service.handle_health()["reason"].get<std::string>().find("no weights"), std::string::npos);
  service.load([] { return std::make_shared<StubEngine>("x"); });
  const auto h = service.handle_health();
  EXPECT_EQ(h["status"], "ready");
  EXPECT_EQ(h["checkpoint_id"], "stub-1");
  EXPECT_EQ(h["vocab_size"], 264);
  const auto tasks = service.handle_tasks()["tasks"];
  ASSERT_EQ(tasks.size(), 6u);
  EXPECT_EQ(tasks[0], "caption");
}

TEST(Service, ConcurrencyCapReturns429) {
  ServiceConfig cfg;
  cfg.max_concurrent = 1;
  Service service(cfg);
  auto gate = std::make_shared<GateEngine>();
  service.set_engine(gate);
  auto first = std::async(std::launch::async, [&] { return service.handle_generate_json(request_body().dump()); });
  gate->wait_entered();
  EXPECT_EQ(error_code(service, request_body().dump(), 429), "busy");
  gate->open();
  EXPECT_EQ(first.get().first, 200);
  EXPECT_EQ(error_code(service, request_body().dump(), 200), "");
}

TEST(Service, BurstLeavesWeightsUntouched) {
  BundleConfig cfg = testing::tiny_bundle();
  auto bundle = std::make_unique<ModelBundle>(cfg);
  const auto before = bundle->store().checksum();
  auto engine = std::make_shared<BundleEngine>(std::move(bundle), "tiny");
  Service service;
  service.set_engine(engine);
  json body = request_body("vqa", "what is shown?");
  body["image"] = png_base64(48, 40);
  body["max_new_tokens"] = 2;
  for (int i = 0; i < 100; ++i) {
    if (i % 2) body["temperature"] = 0.8, body["seed"] = i;
    ASSERT_EQ(service.handle_generate_json(body.dump()).first, 200) << i;
  }
  EXPECT_EQ(engine->weight_checksum(), before);
  EXPECT_EQ(service.requests_served(), 100u);
}

TEST(HttpServer, EndToEnd) {
  Service service;
  service.set_engine(std::make_shared<StubEngine>("mass {<25><10><75><50>}"));
  HttpServer server(service);
  const int port = server.bind("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  server.start();
  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body)["status"], "ready");
  auto tasks = client.Get("/api/tasks");
  ASSERT_TRUE(tasks);
  EXPECT_EQ(json::parse(tasks->body)["tasks"].size(), 6u);
  auto gen = client.Post("/api/generate", request_body().dump(), "application/json");
  ASSERT_TRUE(gen);
  EXPECT_EQ(gen->status, 200);
  EXPECT_EQ(json::parse(gen->body)["spans"][0]["pixel_box"]["x_left"], 250.0);
  auto bad = client.Post("/api/generate", request_body("nope").dump(), "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["error"]["code"], "unknown_task");
  server.stop();
  server.wait();
}

TEST(HttpServer, NonUtf8GenerationStillAnswers) {
  Service service;
  service.set_engine(std::make_shared<StubEngine>("ok \xff\xfe {<1><2><3><4>}"));
  HttpServer server(service);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  httplib::Client client("127.0.0.1", port);
  auto gen = client.Post("/api/generate", request_body().dump(), "application/json");
  ASSERT_TRUE(gen);
  EXPECT_EQ(gen->status, 200);
  const auto body = json::parse(gen->body);
  EXPECT_EQ(body["text"], "ok \xEF\xBF\xBD\xEF\xBF\xBD {<1><2><3><4>}");
  EXPECT_EQ(body["spans"].size(), 1u);
  server.stop();
  server.wait();
}

}  // namespace
}  // namespace medvl
