#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medvl/autograd.hpp"
#include "medvl/datasets.hpp"
#include "medvl/model_bundle.hpp"

namespace medvl {

struct TrainConfig {
  double max_lr = 1e-5;
  std::size_t warmup_steps = 0;
  std::size_t total_epochs = 100;
  /// Overrides total_epochs * steps_per_epoch when non-zero.
  std::size_t total_steps = 0;
  std::size_t batch_size = 4;
  double weight_decay = 0.05;
  double gradient_clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
  /// Steps the schedule spans for a dataset of `sample_count` samples.
  std::size_t schedule_steps(std::size_t sample_count) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Linear warmup from 0 to max_lr, then cosine decay to 0 at `total`.
/// `step` is the 1-based index of the update.
struct LrSchedule {
  double max_lr = 1e-5;
  std::size_t warmup = 0;
  std::size_t total = 1;

  double at(std::size_t step) const;
};

/// Token layout of one training sample:
/// BOS, prompt tokens (through [/INST]), target tokens, EOS, then PAD.
struct EncodedSample {
  std::vector<TokenId> tokens;
  std::size_t prompt_end = 0;  // first target token
  std::size_t target_end = 0;  // one past EOS; padding starts here
  TaskIdentifier task = TaskIdentifier::caption;
  std::string image_path;

  std::size_t target_token_count() const { return target_end - prompt_end; }
  /// Target text was empty (only EOS would be supervised).
  bool empty_target() const { return target_end - prompt_end <= 1; }
};

EncodedSample encode_sample(const TrainingSample& sample);

/// Next-token labels aligned to the spliced sequence in which the single
/// <ImageFeature> token expands to `visual_rows` positions. Positions whose
/// next token is not a target token (prompt, visual slots, padding) get -1.
std::vector<int> next_token_labels(const EncodedSample& sample, std::size_t visual_rows);

/// Samples padded with PAD to the longest member.
struct Batch {
  std::vector<EncodedSample> rows;
  std::size_t padded_length = 0;
};

Batch assemble_batch(std::span<const TrainingSample> samples);

struct LossReport {
  std::size_t step = 0;
  double loss = 0;
  std::size_t target_tokens = 0;
  double learning_rate = 0;
  std::map<TaskIdentifier, double> per_task;  // mean NLL per task
  std::size_t skipped_samples = 0;
  double grad_norm = 0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// Produces (spliced length x vocab) logits for one sample on a tape.
using LogitsFn = std::function<Var(Tape&, const EncodedSample&)>;

/// Mean next-token NLL over every target position in the batch; prompt,
/// visual and padding positions are masked. When `accumulate` is set, the
/// gradient of that mean is added into the trainable parameters' grads.
/// Samples with empty targets are skipped. Throws SchemaError if no target
/// token remains.
LossReport compute_loss(const Batch& batch, const LogitsFn& model, bool accumulate = false);

/// Frozen-encoder outputs keyed by image path. Encoding happens once per
/// image since the encoder never changes.
class VisualCache {
 public:
  explicit VisualCache(const ModelBundle& bundle) : bundle_(&bundle) {}
  const VisualTokens& get(const std::string& image_path);
  void put(const std::string& image_path, VisualTokens tokens) { cache_[image_path] = std::move(tokens); }

 private:
  const ModelBundle* bundle_;
  std::map<std::string, VisualTokens> cache_;
};

/// image -> projector -> LM logits, all on the given tape.
LogitsFn bundle_logits(const ModelBundle& bundle, VisualCache& cache);

class AdamW {
 public:
  struct Slot {
    Parameter* param = nullptr;
    Matrix m;
    Matrix v;
  };

  AdamW(std::vector<Parameter*> params, double beta1, double beta2, double epsilon, double weight_decay);

  /// Decoupled weight decay, bias-corrected moments.
  void step(double lr);

  std::size_t step_count() const { return t_; }
  const std::vector<Slot>& slots() const { return slots_; }
  std::vector<Slot>& slots() { return slots_; }
  void set_step_count(std::size_t t) { t_ = t; }

 private:
  std::vector<Slot> slots_;
  double beta1_, beta2_, epsilon_, weight_decay_;
  std::size_t t_ = 0;
};

/// Global L2 norm over trainable grads; rescales them in place when it
/// exceeds max_norm. Returns the pre-clip norm.
double clip_gradients(const std::vector<Parameter*>& params, double max_norm);

/// One optimisation step: zero grads, loss + backward, finite check, clip,
/// AdamW with lr = schedule.at(step). Only trainable parameters move.
/// Throws NonFiniteLossError before touching any weight.
LossReport train_step(const Batch& batch, ModelBundle& bundle, AdamW& optimizer, const LrSchedule& schedule,
                      std::size_t step, VisualCache& cache, double clip_norm = 1.0);

/// Owns the model, optimiser, data stream and step counter of a run.
class Trainer {
 public:
  Trainer(const BundleConfig& model, const TrainConfig& train, std::map<TaskIdentifier, std::vector<TrainingSample>> streams,
          const MixConfig& mix);

  LossReport step();
  std::vector<LossReport> run(std::size_t steps);

  std::size_t current_step() const { return step_; }
  const LrSchedule& schedule() const { return schedule_; }
  const TrainConfig& train_config() const { return train_; }
  ModelBundle& bundle() { return *bundle_; }
  const ModelBundle& bundle() const { return *bundle_; }
  AdamW& optimizer() { return *optimizer_; }
  const AdamW& optimizer() const { return *optimizer_; }
  MixedStream& stream() { return *stream_; }
  const MixedStream& stream() const { return *stream_; }
  VisualCache& cache() { return *cache_; }

  void save(const std::filesystem::path& dir) const;
  /// Restores weights, optimiser moments, step counter and stream state
  /// from a checkpoint written by save(). The data streams must be the ones
  /// the run was started with.
  static Trainer resume(const std::filesystem::path& dir, std::map<TaskIdentifier, std::vector<TrainingSample>> streams);

 private:
  Trainer(std::unique_ptr<ModelBundle> bundle, const TrainConfig& train,
          std::map<TaskIdentifier, std::vector<TrainingSample>> streams, const MixConfig& mix);

  std::unique_ptr<ModelBundle> bundle_;
  TrainConfig train_;
  std::unique_ptr<MixedStream> stream_;
  std::unique_ptr<AdamW> optimizer_;
  std::unique_ptr<VisualCache> cache_;
  LrSchedule schedule_;
  std::size_t step_ = 0;
};

}  // namespace medvl
