#include "medvl/config_io.hpp"

#include <fstream>
#include <set>

#include "medvl/errors.hpp"

namespace medvl {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void require_object(const json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
}

}  // namespace

void to_json(json& j, const EncoderConfig& c) {
  j = {{"image_side", c.image_side}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim}, {"depth", c.depth},
       {"heads", c.heads},           {"native_grid", c.native_grid}, {"seed", c.seed}};
}

void from_json(const json& j, EncoderConfig& c) {
  require_object(j, "encoder");
  read(j, "image_side", c.image_side);
  read(j, "patch_size", c.patch_size);
  read(j, "embed_dim", c.embed_dim);
  read(j, "depth", c.depth);
  read(j, "heads", c.heads);
  read(j, "native_grid", c.native_grid);
  read(j, "seed", c.seed);
}

void to_json(json& j, const LMConfig& c) {
  j = {{"d_lm", c.d_lm},
       {"layers", c.layers},
       {"heads", c.heads},
       {"context_length", c.context_length},
       {"vocab_size", c.vocab_size},
       {"head_init_std", c.head_init_std},
       {"seed", c.seed}};
}

void from_json(const json& j, LMConfig& c) {
  require_object(j, "lm");
  read(j, "d_lm", c.d_lm);
  read(j, "layers", c.layers);
  read(j, "heads", c.heads);
  read(j, "context_length", c.context_length);
  read(j, "vocab_size", c.vocab_size);
  read(j, "head_init_std", c.head_init_std);
  read(j, "seed", c.seed);
}

void to_json(json& j, const LoRAConfig& c) {
  j = {{"rank", c.rank}, {"alpha", c.alpha}, {"targets", c.targets}, {"seed", c.seed}};
}

void from_json(const json& j, LoRAConfig& c) {
  require_object(j, "lora");
  read(j, "rank", c.rank);
  read(j, "alpha", c.alpha);
  read(j, "targets", c.targets);
  read(j, "seed", c.seed);
}

void to_json(json& j, const BundleConfig& c) {
  j = {{"encoder", c.encoder},
       {"lm", c.lm},
       {"lora", c.lora},
       {"use_lora", c.use_lora},
       {"finetune_base_lm", c.finetune_base_lm},
       {"projector_seed", c.projector_seed}};
}

void from_json(const json& j, BundleConfig& c) {
  require_object(j, "model");
  read(j, "encoder", c.encoder);
  read(j, "lm", c.lm);
  read(j, "lora", c.lora);
  read(j, "use_lora", c.use_lora);
  read(j, "finetune_base_lm", c.finetune_base_lm);
  read(j, "projector_seed", c.projector_seed);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"max_lr", c.max_lr},
       {"warmup_steps", c.warmup_steps},
       {"total_epochs", c.total_epochs},
       {"total_steps", c.total_steps},
       {"batch_size", c.batch_size},
       {"weight_decay", c.weight_decay},
       {"gradient_clip_norm", c.gradient_clip_norm},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"epsilon", c.epsilon},
       {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  require_object(j, "train");
  read(j, "max_lr", c.max_lr);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "total_epochs", c.total_epochs);
  read(j, "total_steps", c.total_steps);
  read(j, "batch_size", c.batch_size);
  read(j, "weight_decay", c.weight_decay);
  read(j, "gradient_clip_norm", c.gradient_clip_norm);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "epsilon", c.epsilon);
  read(j, "seed", c.seed);
}

void to_json(json& j, const MixConfig& c) {
  json w = json::object();
  for (const auto& [task, weight] : c.weights) w[std::string(task_name(task))] = weight;
  j = {{"weights", w}, {"seed", c.seed}};
}

void from_json(const json& j, MixConfig& c) {
  require_object(j, "mix");
  if (auto it = j.find("weights"); it != j.end()) {
    require_object(*it, "mix.weights");
    c.weights.clear();
    for (const auto& [name, w] : it->items()) {
      if (!w.is_number()) throw ConfigError("mix weight for '" + name + "' must be a number");
      try {
        c.weights[parse_task(name)] = w.get<double>();
      } catch (const UnknownTaskError& e) {
        throw ConfigError(std::string("mix.weights: ") + e.what());
      }
    }
  }
  read(j, "seed", c.seed);
}

json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const json j = parse_json_file(path);
  require_object(j, "run config");
  const auto base = path.parent_path();
  auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() ? p : base / p; };

  RunConfig rc;
  read(j, "model", rc.model);
  read(j, "train", rc.train);
  read(j, "checkpoint_every", rc.checkpoint_every);
  read(j, "steps", rc.steps);
  if (auto it = j.find("output_dir"); it != j.end()) rc.output_dir = resolve(it->get<std::string>());

  auto data = j.find("data");
  if (data == j.end() || !data->contains("manifests")) throw ConfigError("run config needs data.manifests");
  for (const json& m : data->at("manifests")) {
    if (!m.is_object() || !m.contains("kind") || !m.contains("path")) {
      throw ConfigError("each manifest entry needs 'kind' and 'path'");
    }
    rc.manifests.push_back({parse_manifest_kind(m["kind"].get<std::string>()), resolve(m["path"].get<std::string>())});
  }
  if (rc.manifests.empty()) throw ConfigError("data.manifests is empty");

  if (auto it = j.find("mix"); it != j.end()) {
    rc.mix = it->get<MixConfig>();
  } else {
    std::set<TaskIdentifier> tasks;
    for (const auto& m : rc.manifests) {
      switch (m.kind) {
        case ManifestKind::report: tasks.insert(TaskIdentifier::caption); break;
        case ManifestKind::vqa: tasks.insert(TaskIdentifier::vqa); break;
        case ManifestKind::detection: tasks.insert(TaskIdentifier::detection); break;
      }
    }
    rc.mix = MixConfig::uniform({tasks.begin(), tasks.end()}, rc.train.seed);
  }
  return rc;
}

}  // namespace medvl
