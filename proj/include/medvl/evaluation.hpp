#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "medvl/grounding.hpp"

namespace medvl {

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  /// Same text, same vector. Fixed dimension per embedder.
  virtual Eigen::VectorXd embed(std::string_view text) const = 0;
  virtual std::string name() const = 0;
};

/// 256-dimensional vector of byte counts. Deterministic and dependency-free;
/// backs every metric test.
class CharBagEmbedder : public TextEmbedder {
 public:
  Eigen::VectorXd embed(std::string_view text) const override;
  std::string name() const override { return "char-bag"; }
};

/// Precomputed sentence vectors, e.g. exported from a pretrained encoder.
/// One JSON object per line: {"text": ..., "vector": [...]}. Unknown texts
/// throw InputError.
class LookupTableEmbedder : public TextEmbedder {
 public:
  static LookupTableEmbedder load(const std::filesystem::path& path);
  void add(std::string text, Eigen::VectorXd vector);

  Eigen::VectorXd embed(std::string_view text) const override;
  std::string name() const override { return "lookup"; }

 private:
  std::unordered_map<std::string, Eigen::VectorXd> table_;
  Eigen::Index dim_ = 0;
};

/// Throws UndefinedSimilarityError if either vector is zero.
double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

/// max(0, cosine of whole-text embeddings) * 100.
double bert_sim(std::string_view candidate, std::string_view reference, const TextEmbedder& embedder);

/// Sentences split on '.' and newlines, trimmed, empties dropped.
std::vector<std::string> split_sentences(std::string_view report);

/// Sentence i of one report is paired with sentence i of the other; the
/// clamped cosines are summed and divided by the larger sentence count, so
/// unpaired sentences count as 0. Scaled by 100.
double chexbert_sim(std::string_view candidate, std::string_view reference, const TextEmbedder& embedder);

/// Continuous-area intersection over union; 0 when the union is empty.
double box_iou(const PixelBox& a, const PixelBox& b);

struct DetectionEvalResult {
  std::map<std::string, double> per_image;  // keyed by image id
  double mean_iou = 0;
  std::size_t no_prediction_count = 0;
};

/// Greedy one-to-one matching per image by descending IoU (ties: lower gold
/// index, then lower predicted index). Image score = matched IoU summed over
/// gold boxes / gold count. Images without predictions score 0. Throws
/// AlignmentError for a predicted key with no ground truth and InputError for
/// an image with no gold boxes.
DetectionEvalResult detection_eval(const std::map<std::string, std::vector<PixelBox>>& predictions,
                                   const std::map<std::string, std::vector<PixelBox>>& ground_truth);

/// Spans of generated text mapped to pixels. Malformed and degenerate spans
/// are dropped.
std::vector<PixelBox> predicted_boxes(std::string_view generated, const ImageSize& size);

struct SampleScore {
  std::string id;
  double score = 0;
};

struct EvalSummary {
  std::string task;
  std::string metric;
  double raw = 0;      // [0,1]
  double scaled = 0;   // raw * 100
  bool table_scaled = false;  // whether results tables report `scaled` rather than `raw`
  std::size_t sample_count = 0;
  std::vector<SampleScore> samples;

  double score() const { return table_scaled ? scaled : raw; }
};

/// Mean bert_sim over id-aligned answer pairs. Throws AlignmentError when the
/// id sets differ and InputError when empty.
EvalSummary vqa_eval(const std::map<std::string, std::string>& outputs,
                     const std::map<std::string, std::string>& references, const TextEmbedder& embedder);

/// BERT-Sim and CheXbert-Sim over id-aligned report pairs.
std::vector<EvalSummary> report_eval(const std::map<std::string, std::string>& outputs,
                                     const std::map<std::string, std::string>& references,
                                     const TextEmbedder& embedder, const TextEmbedder& clinical_embedder);

EvalSummary summarize_detection(const DetectionEvalResult& result);

struct HumanEvalTally {
  std::size_t good = 0;
  std::size_t medium = 0;
  std::size_t poor = 0;
  int good_pct = 0;
  int medium_pct = 0;
  int poor_pct = 0;
};

/// Votes are "good", "medium" or "poor" (any case). Percentages are rounded
/// half up independently, so they can sum to 99 or 101. Throws InputError for
/// an empty list or unknown category.
HumanEvalTally tally_human_eval(const std::vector<std::string>& votes);

// JSON-lines drivers. Report and VQA files hold {"id", "text"}; detection
// references hold {"id", "boxes": [{x_left, y_top, x_right, y_bottom}],
// "image_size": {width, height}}, detection predictions hold either "boxes"
// or generated "text" (parsed against the reference image size).
enum class EvalTask { report, vqa, detection };
EvalTask parse_eval_task(std::string_view name);

std::vector<EvalSummary> run_eval(EvalTask task, const std::filesystem::path& predictions,
                                  const std::filesystem::path& references, const TextEmbedder& embedder);

nlohmann::json summary_json(const EvalSummary& summary);
/// Fixed-width table, one row per summary.
std::string format_table(const std::vector<EvalSummary>& summaries);

}  // namespace medvl
