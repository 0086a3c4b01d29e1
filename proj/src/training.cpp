#include "medvl/training.hpp"

#include <cmath>
#include <numbers>

#include "medvl/errors.hpp"

namespace medvl {

void TrainConfig::validate() const {
  if (!(max_lr > 0)) throw ConfigError("max_lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (total_steps == 0 && total_epochs == 0) throw ConfigError("need total_epochs or total_steps");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (!(gradient_clip_norm > 0)) throw ConfigError("gradient_clip_norm must be > 0");
}

std::size_t TrainConfig::schedule_steps(std::size_t sample_count) const {
  if (total_steps > 0) return total_steps;
  const std::size_t per_epoch = std::max<std::size_t>(1, (sample_count + batch_size - 1) / batch_size);
  return total_epochs * per_epoch;
}

double LrSchedule::at(std::size_t step) const {
  if (warmup > 0 && step <= warmup) return max_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup) return 0.0;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
  return max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

EncodedSample encode_sample(const TrainingSample& sample) {
  EncodedSample e;
  e.task = sample.task;
  e.image_path = sample.image_path;
  e.tokens.push_back(vocab::kBos);
  const auto prompt = tokenize(sample.prompt.text);
  e.tokens.insert(e.tokens.end(), prompt.begin(), prompt.end());
  e.prompt_end = e.tokens.size();
  const auto target = tokenize(sample.target);
  e.tokens.insert(e.tokens.end(), target.begin(), target.end());
  e.tokens.push_back(vocab::kEos);
  e.target_end = e.tokens.size();
  return e;
}

std::vector<int> next_token_labels(const EncodedSample& sample, std::size_t visual_rows) {
  if (visual_rows == 0) throw ShapeError("visual sequence is empty");
  const auto& tok = sample.tokens;
  std::size_t slot = tok.size();
  for (std::size_t i = 0; i < tok.size(); ++i) {
    if (tok[i] == vocab::kImageFeature) {
      slot = i;
      break;
    }
  }
  if (slot >= sample.prompt_end) throw TemplateMismatchError("image slot missing from prompt", 0);
  const std::size_t extra = visual_rows - 1;
  std::vector<int> labels(tok.size() + extra, -1);
  for (std::size_t i = 0; i + 1 < tok.size(); ++i) {
    const std::size_t next = i + 1;
    if (next < sample.prompt_end || next >= sample.target_end) continue;
    const std::size_t pos = i < slot ? i : i + extra;  // last spliced position of raw token i
    labels[pos] = tok[next];
  }
  return labels;
}

Batch assemble_batch(std::span<const TrainingSample> samples) {
  Batch b;
  for (const auto& s : samples) {
    b.rows.push_back(encode_sample(s));
    b.padded_length = std::max(b.padded_length, b.rows.back().tokens.size());
  }
  for (auto& r : b.rows) r.tokens.resize(b.padded_length, vocab::kPad);
  return b;
}

LossReport compute_loss(const Batch& batch, const LogitsFn& model, bool accumulate) {
  LossReport report;
  std::size_t total = 0;
  for (const auto& row : batch.rows) {
    if (!row.empty_target()) total += row.target_token_count();
  }
  if (total == 0) throw SchemaError("batch has no target tokens");

  std::map<TaskIdentifier, std::pair<double, std::size_t>> per_task;
  double sum = 0;
  for (const auto& row : batch.rows) {
    if (row.empty_target()) {
      ++report.skipped_samples;
      continue;
    }
    // Causal attention: trailing PAD cannot influence earlier positions.
    EncodedSample trimmed = row;
    trimmed.tokens.resize(row.target_end);
    Tape tape;
    Var logits = model(tape, trimmed);
    const auto rows = static_cast<std::size_t>(tape.value(logits).rows());
    if (rows + 1 < trimmed.tokens.size()) throw ShapeError("model returned fewer logit rows than tokens");
    const auto labels = next_token_labels(trimmed, rows - (trimmed.tokens.size() - 1));
    Var nll = weighted_nll(tape, logits, labels, 1.0 / static_cast<double>(total));
    const double contribution = tape.value(nll)(0, 0);
    sum += contribution;
    auto& [task_sum, task_count] = per_task[row.task];
    task_sum += contribution * static_cast<double>(total);
    task_count += row.target_token_count();
    if (accumulate) tape.backward(nll);
  }
  report.loss = sum;
  report.target_tokens = total;
  for (const auto& [task, acc] : per_task) report.per_task[task] = acc.first / static_cast<double>(acc.second);
  return report;
}

const VisualTokens& VisualCache::get(const std::string& image_path) {
  auto it = cache_.find(image_path);
  if (it != cache_.end()) return it->second;
  const auto& enc = bundle_->encoder();
  auto tokens = enc.encode(preprocess(read_image(image_path), enc.config().image_side));
  return cache_.emplace(image_path, std::move(tokens)).first->second;
}

LogitsFn bundle_logits(const ModelBundle& bundle, VisualCache& cache) {
  return [&bundle, &cache](Tape& t, const EncodedSample& row) {
    Var visual = bundle.projector().forward(t, cache.get(row.image_path));
    return bundle.lm().forward(t, bundle.lm().embed_sequence(t, row.tokens, visual));
  };
}

AdamW::AdamW(std::vector<Parameter*> params, double beta1, double beta2, double epsilon, double weight_decay)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay) {
  for (Parameter* p : params) {
    slots_.push_back({p, Matrix::Zero(p->value.rows(), p->value.cols()), Matrix::Zero(p->value.rows(), p->value.cols())});
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    Matrix& w = s.param->value;
    const Matrix& g = s.param->grad;
    s.m = beta1_ * s.m + (1.0 - beta1_) * g;
    s.v = beta2_ * s.v + (1.0 - beta2_) * g.cwiseProduct(g);
    const Matrix update = (s.m / c1).array() / ((s.v / c2).array().sqrt() + epsilon_);
    w -= lr * (update + weight_decay_ * w);
  }
}

double clip_gradients(const std::vector<Parameter*>& params, double max_norm) {
  double sq = 0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (Parameter* p : params) p->grad *= s;
  }
  return norm;
}

LossReport train_step(const Batch& batch, ModelBundle& bundle, AdamW& optimizer, const LrSchedule& schedule,
                      std::size_t step, VisualCache& cache, double clip_norm) {
  auto trainable = bundle.store().trainable();
  if (trainable.empty()) throw ConfigError("model has no trainable parameters");
  bundle.store().zero_grad();
  LossReport report = compute_loss(batch, bundle_logits(bundle, cache), true);
  report.step = step;
  double grad_sq = 0;
  for (const Parameter* p : trainable) grad_sq += p->grad.squaredNorm();
  if (!std::isfinite(report.loss) || !std::isfinite(grad_sq)) {
    bundle.store().zero_grad();
    throw NonFiniteLossError("non-finite loss " + std::to_string(report.loss) + " at step " + std::to_string(step) +
                             " (grad norm^2 " + std::to_string(grad_sq) + ")");
  }
  report.grad_norm = clip_gradients(trainable, clip_norm);
  report.learning_rate = schedule.at(step);
  optimizer.step(report.learning_rate);
  return report;
}

Trainer::Trainer(const BundleConfig& model, const TrainConfig& train,
                 std::map<TaskIdentifier, std::vector<TrainingSample>> streams, const MixConfig& mix)
    : Trainer(std::make_unique<ModelBundle>(model), train, std::move(streams), mix) {}

Trainer::Trainer(std::unique_ptr<ModelBundle> bundle, const TrainConfig& train,
                 std::map<TaskIdentifier, std::vector<TrainingSample>> streams, const MixConfig& mix)
    : bundle_(std::move(bundle)), train_(train) {
  train_.validate();
  std::size_t samples = 0;
  for (const auto& [task, s] : streams) {
    if (mix.weights.contains(task) && mix.weights.at(task) > 0) samples += s.size();
  }
  stream_ = std::make_unique<MixedStream>(std::move(streams), mix);
  optimizer_ = std::make_unique<AdamW>(bundle_->store().trainable(), train_.beta1, train_.beta2, train_.epsilon,
                                       train_.weight_decay);
  cache_ = std::make_unique<VisualCache>(*bundle_);
  schedule_ = {train_.max_lr, train_.warmup_steps, train_.schedule_steps(samples)};
}

LossReport Trainer::step() {
  const auto samples = stream_->next_batch(train_.batch_size);
  const Batch batch = assemble_batch(samples);
  LossReport r = train_step(batch, *bundle_, *optimizer_, schedule_, step_ + 1, *cache_,
                             train_.gradient_clip_norm);
  ++step_;
  return r;
}

std::vector<LossReport> Trainer::run(std::size_t steps) {
  std::vector<LossReport> out;
  out.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) out.push_back(step());
  return out;
}

}  // namespace medvl
