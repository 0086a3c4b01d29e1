#include "medvl/cli.hpp"

#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "medvl/checkpoint.hpp"
#include "medvl/config_io.hpp"
#include "medvl/evaluation.hpp"
#include "medvl/image_io.hpp"
#include "medvl/inference_service.hpp"

namespace medvl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::shared_ptr<const InferenceEngine> make_engine(const std::string& checkpoint) {
  if (checkpoint.empty()) {
    std::cerr << "no --checkpoint given; serving an untrained default model\n";
    return std::make_shared<BundleEngine>(std::make_unique<ModelBundle>(BundleConfig{}), "untrained");
  }
  auto loaded = load_model(checkpoint);
  return std::make_shared<BundleEngine>(std::move(loaded.bundle), loaded.info.checkpoint_id);
}

std::map<TaskIdentifier, std::vector<TrainingSample>> load_streams(const RunConfig& rc) {
  std::map<TaskIdentifier, std::vector<TrainingSample>> streams;
  for (const auto& m : rc.manifests) {
    const Manifest manifest = load_manifest(m.path, m.kind);
    for (const auto& w : manifest.warnings) std::cerr << "warning: " << m.path.string() << ": " << w << "\n";
    for (auto& s : to_training_samples(manifest)) streams[s.task].push_back(std::move(s));
  }
  return streams;
}

int run_train(const std::string& config_path, const std::string& resume, std::size_t steps_override) {
  const RunConfig rc = load_run_config(config_path);
  auto streams = load_streams(rc);
  Trainer trainer = resume.empty() ? Trainer(rc.model, rc.train, streams, rc.mix) : Trainer::resume(resume, streams);
  std::size_t target = steps_override ? steps_override : (rc.steps ? rc.steps : trainer.schedule().total);
  std::cout << "trainable parameters: " << trainer.bundle().store().trainable_element_count() << "\n";
  while (trainer.current_step() < target) {
    const LossReport r = trainer.step();
    std::cout << "step " << r.step << " loss " << r.loss << " lr " << r.learning_rate << " tokens " << r.target_tokens
              << "\n";
    if (rc.checkpoint_every && r.step % rc.checkpoint_every == 0) {
      trainer.save(rc.output_dir / ("step-" + std::to_string(r.step)));
    }
  }
  const fs::path final_dir = rc.output_dir / "final";
  trainer.save(final_dir);
  std::cout << "checkpoint: " << final_dir.string() << "\n";
  return 0;
}

int run_eval(const std::string& task, const std::string& pred, const std::string& ref, const std::string& embeddings,
             const std::string& json_out) {
  std::unique_ptr<TextEmbedder> embedder;
  if (embeddings.empty()) {
    embedder = std::make_unique<CharBagEmbedder>();
  } else {
    embedder = std::make_unique<LookupTableEmbedder>(LookupTableEmbedder::load(embeddings));
  }
  const auto summaries = medvl::run_eval(parse_eval_task(task), pred, ref, *embedder);
  std::cout << format_table(summaries);
  if (!json_out.empty()) {
    json arr = json::array();
    for (const auto& s : summaries) arr.push_back(summary_json(s));
    std::ofstream(json_out) << arr.dump(2) << "\n";
  }
  return 0;
}

HttpServer* g_server = nullptr;

extern "C" void handle_signal(int) {
  if (g_server) g_server->stop();
}

int run_serve(std::string checkpoint, std::string host, int port, std::size_t max_concurrent,
              const std::string& config_path) {
  if (!config_path.empty()) {
    const json j = parse_json_file(config_path);
    checkpoint = j.value("checkpoint", checkpoint);
    host = j.value("host", host);
    port = j.value("port", port);
    max_concurrent = j.value("max_concurrent", max_concurrent);
  }
  ServiceConfig sc;
  sc.max_concurrent = max_concurrent;
  Service service(sc);
  HttpServer server(service);
  const int bound = server.bind(host, port);
  std::cout << "listening on " << host << ":" << bound << std::endl;
  server.start();
  service.load([&] { return make_engine(checkpoint); });
  if (service.state() == ServiceState::failed) std::cerr << "model load failed: " << service.handle_health()["reason"] << "\n";
  g_server = &server;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  server.wait();
  g_server = nullptr;
  return 0;
}

int run_infer(const std::string& image, const std::string& task, const std::string& instruction,
              const std::string& checkpoint, int max_new_tokens) {
  Service service;
  service.load([&] { return make_engine(checkpoint); });
  if (service.state() != ServiceState::ready) {
    std::cerr << "model load failed: " << service.handle_health()["reason"].get<std::string>() << "\n";
    return 1;
  }
  json req = {{"image", base64_encode(read_file_bytes(image))},
              {"task", task},
              {"instruction", instruction},
              {"max_new_tokens", max_new_tokens}};
  auto [status, body] = service.handle_generate_json(req.dump());
  std::cout << dump_json(body, 2) << "\n";
  return status == 200 ? 0 : 1;
}

int run_synth(const std::string& out, int det, int cap, int vqa, std::uint64_t seed) {
  const auto corpus = write_synthetic_corpus(out, det, cap, vqa, seed);
  json run = {{"data",
               {{"manifests",
                 {{{"kind", "detection"}, {"path", corpus.detection_manifest.filename().string()}},
                  {{"kind", "report"}, {"path", corpus.report_manifest.filename().string()}},
                  {{"kind", "vqa"}, {"path", corpus.vqa_manifest.filename().string()}}}}}},
              {"train", TrainConfig{}},
              {"model", BundleConfig{}},
              {"output_dir", "run"},
              {"checkpoint_every", 0}};
  std::ofstream(fs::path(out) / "run.json") << run.dump(2) << "\n";
  std::cout << "wrote " << (fs::path(out) / "run.json").string() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Medical vision-language training, evaluation and serving"};
  app.require_subcommand(1);

  std::string config, resume;
  std::size_t steps = 0;
  auto* train = app.add_subcommand("train", "Fine-tune the projector and LoRA adapters");
  train->add_option("--config", config, "Run config JSON")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "Checkpoint directory to continue from")->check(CLI::ExistingDirectory);
  train->add_option("--steps", steps, "Stop after this many total steps");

  std::string eval_task, pred, ref, embeddings, json_out;
  auto* eval = app.add_subcommand("eval", "Score predictions against references");
  eval->add_option("--task", eval_task, "report, vqa or detection")
      ->required()
      ->check(CLI::IsMember({"report", "vqa", "detection"}));
  eval->add_option("--pred", pred, "Predictions JSON-lines")->required()->check(CLI::ExistingFile);
  eval->add_option("--ref", ref, "References JSON-lines")->required()->check(CLI::ExistingFile);
  eval->add_option("--embeddings", embeddings, "Precomputed text embeddings JSON-lines")->check(CLI::ExistingFile);
  eval->add_option("--json", json_out, "Also write the summaries as JSON here");

  std::string checkpoint, host = "127.0.0.1", serve_config;
  int port = 8080;
  std::size_t max_concurrent = 4;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--checkpoint", checkpoint, "Checkpoint directory");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port; 0 picks a free one");
  serve->add_option("--max-concurrent", max_concurrent, "Concurrent request cap");
  serve->add_option("--config", serve_config, "Service config JSON")->check(CLI::ExistingFile);

  std::string image, task, instruction;
  int max_new_tokens = 64;
  auto* infer = app.add_subcommand("infer", "Run one request and print the response JSON");
  infer->add_option("--image", image, "Image file")->required()->check(CLI::ExistingFile);
  infer->add_option("--task", task, "Task identifier")->required();
  infer->add_option("--instruction", instruction, "Instruction text (the label for detection)")->required();
  infer->add_option("--checkpoint", checkpoint, "Checkpoint directory");
  infer->add_option("--max-new-tokens", max_new_tokens, "Generation budget");

  std::string synth_out;
  int det = 8, cap = 4, vqa = 4;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus and a matching run config");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--detection", det, "Detection samples");
  synth->add_option("--caption", cap, "Report samples");
  synth->add_option("--vqa", vqa, "VQA samples");
  synth->add_option("--seed", seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return run_train(config, resume, steps);
    if (*eval) return run_eval(eval_task, pred, ref, embeddings, json_out);
    if (*serve) return run_serve(checkpoint, host, port, max_concurrent, serve_config);
    if (*infer) return run_infer(image, task, instruction, checkpoint, max_new_tokens);
    if (*synth) return run_synth(synth_out, det, cap, vqa, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int cli_main(const std::vector<std::string>& args) {
  std::vector<std::string> storage = args;
  storage.insert(storage.begin(), "medvl");
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace medvl
