#include "medvl/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <tuple>

#include "medvl/errors.hpp"

namespace medvl {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

void check_aligned(const std::map<std::string, std::string>& outputs,
                   const std::map<std::string, std::string>& references) {
  if (references.empty()) throw InputError("no reference samples");
  for (const auto& [id, _] : outputs) {
    if (!references.contains(id)) throw AlignmentError("prediction '" + id + "' has no reference");
  }
  for (const auto& [id, _] : references) {
    if (!outputs.contains(id)) throw AlignmentError("reference '" + id + "' has no prediction");
  }
}

EvalSummary make_summary(std::string task, std::string metric, std::vector<SampleScore> samples, bool table_scaled) {
  EvalSummary s;
  s.task = std::move(task);
  s.metric = std::move(metric);
  s.table_scaled = table_scaled;
  s.sample_count = samples.size();
  double sum = 0;
  for (const auto& x : samples) sum += x.score;
  s.scaled = samples.empty() ? 0.0 : sum / static_cast<double>(samples.size());
  s.raw = s.scaled / 100.0;
  s.samples = std::move(samples);
  return s;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw SchemaError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!out.back().is_object() || !out.back().contains("id") || !out.back()["id"].is_string()) {
      throw SchemaError("record needs a string 'id'", lineno, "id");
    }
  }
  return out;
}

std::map<std::string, std::string> text_by_id(const std::vector<json>& rows) {
  std::map<std::string, std::string> out;
  for (const auto& r : rows) {
    if (!r.contains("text") || !r["text"].is_string()) throw SchemaError("record needs a string 'text'", 0, "text");
    if (!out.emplace(r["id"].get<std::string>(), r["text"].get<std::string>()).second) {
      throw AlignmentError("duplicate id '" + r["id"].get<std::string>() + "'");
    }
  }
  return out;
}

std::vector<PixelBox> boxes_of(const json& r) {
  std::vector<PixelBox> out;
  for (const json& b : r.at("boxes")) {
    out.push_back({b.at("x_left").get<double>(), b.at("y_top").get<double>(), b.at("x_right").get<double>(),
                   b.at("y_bottom").get<double>()});
  }
  return out;
}

}  // namespace

Eigen::VectorXd CharBagEmbedder::embed(std::string_view text) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(256);
  for (unsigned char c : text) v(c) += 1.0;
  return v;
}

LookupTableEmbedder LookupTableEmbedder::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  LookupTableEmbedder e;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      const auto vec = j.at("vector").get<std::vector<double>>();
      e.add(j.at("text").get<std::string>(), Eigen::Map<const Eigen::VectorXd>(vec.data(), static_cast<Eigen::Index>(vec.size())));
    } catch (const json::exception& ex) {
      throw SchemaError(ex.what(), lineno);
    }
  }
  return e;
}

void LookupTableEmbedder::add(std::string text, Eigen::VectorXd vector) {
  if (dim_ == 0) dim_ = vector.size();
  if (vector.size() != dim_ || dim_ == 0) throw ShapeError("embedding for '" + text + "' has the wrong dimension");
  table_[std::move(text)] = std::move(vector);
}

Eigen::VectorXd LookupTableEmbedder::embed(std::string_view text) const {
  auto it = table_.find(std::string(text));
  if (it == table_.end()) throw InputError("no embedding for '" + std::string(text) + "'");
  return it->second;
}

double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size()) throw ShapeError("cosine of vectors with different dimensions");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0 || nv == 0) throw UndefinedSimilarityError("cosine similarity with a zero vector");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

double bert_sim(std::string_view candidate, std::string_view reference, const TextEmbedder& embedder) {
  if (candidate.empty() || reference.empty()) throw UndefinedSimilarityError("bert_sim of empty text");
  return std::max(0.0, cosine(embedder.embed(candidate), embedder.embed(reference))) * 100.0;
}

std::vector<std::string> split_sentences(std::string_view report) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= report.size(); ++i) {
    if (i == report.size() || report[i] == '.' || report[i] == '\n') {
      auto piece = trim(report.substr(start, i - start));
      if (!piece.empty()) out.emplace_back(piece);
      start = i + 1;
    }
  }
  return out;
}

double chexbert_sim(std::string_view candidate, std::string_view reference, const TextEmbedder& embedder) {
  const auto a = split_sentences(candidate);
  const auto b = split_sentences(reference);
  if (a.empty() || b.empty()) throw UndefinedSimilarityError("chexbert_sim of a report with no sentences");
  const std::size_t paired = std::min(a.size(), b.size());
  double sum = 0;
  for (std::size_t i = 0; i < paired; ++i) sum += std::max(0.0, cosine(embedder.embed(a[i]), embedder.embed(b[i])));
  return sum / static_cast<double>(std::max(a.size(), b.size())) * 100.0;
}

double box_iou(const PixelBox& a, const PixelBox& b) {
  const double iw = std::min(a.x_right, b.x_right) - std::max(a.x_left, b.x_left);
  const double ih = std::min(a.y_bottom, b.y_bottom) - std::max(a.y_top, b.y_top);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

DetectionEvalResult detection_eval(const std::map<std::string, std::vector<PixelBox>>& predictions,
                                   const std::map<std::string, std::vector<PixelBox>>& ground_truth) {
  for (const auto& [id, _] : predictions) {
    if (!ground_truth.contains(id)) throw AlignmentError("prediction for '" + id + "' has no ground truth");
  }
  if (ground_truth.empty()) throw InputError("no ground-truth images");
  DetectionEvalResult r;
  double total = 0;
  for (const auto& [id, gold] : ground_truth) {
    if (gold.empty()) throw InputError("image '" + id + "' has no gold boxes");
    auto it = predictions.find(id);
    if (it == predictions.end() || it->second.empty()) {
      r.per_image[id] = 0.0;
      ++r.no_prediction_count;
      continue;
    }
    const auto& pred = it->second;
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t g = 0; g < gold.size(); ++g) {
      for (std::size_t p = 0; p < pred.size(); ++p) pairs.emplace_back(box_iou(gold[g], pred[p]), g, p);
    }
    std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
      if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
      if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
      return std::get<2>(x) < std::get<2>(y);
    });
    std::vector<bool> gold_used(gold.size()), pred_used(pred.size());
    double sum = 0;
    for (const auto& [iou, g, p] : pairs) {
      if (gold_used[g] || pred_used[p]) continue;
      gold_used[g] = pred_used[p] = true;
      sum += iou;
    }
    const double score = sum / static_cast<double>(gold.size());
    r.per_image[id] = score;
    total += score;
  }
  r.mean_iou = total / static_cast<double>(ground_truth.size());
  return r;
}

std::vector<PixelBox> predicted_boxes(std::string_view generated, const ImageSize& size) {
  std::vector<PixelBox> out;
  for (const auto& span : parse_spans(generated).spans) {
    try {
      out.push_back(denormalize_box(span.box, size));
    } catch (const InvalidBoxError&) {
    }
  }
  return out;
}

EvalSummary vqa_eval(const std::map<std::string, std::string>& outputs,
                     const std::map<std::string, std::string>& references, const TextEmbedder& embedder) {
  check_aligned(outputs, references);
  std::vector<SampleScore> samples;
  for (const auto& [id, ref] : references) samples.push_back({id, bert_sim(outputs.at(id), ref, embedder)});
  return make_summary("vqa", "BERT-Sim", std::move(samples), false);
}

std::vector<EvalSummary> report_eval(const std::map<std::string, std::string>& outputs,
                                     const std::map<std::string, std::string>& references,
                                     const TextEmbedder& embedder, const TextEmbedder& clinical_embedder) {
  check_aligned(outputs, references);
  std::vector<SampleScore> bert, chex;
  for (const auto& [id, ref] : references) {
    bert.push_back({id, bert_sim(outputs.at(id), ref, embedder)});
    chex.push_back({id, chexbert_sim(outputs.at(id), ref, clinical_embedder)});
  }
  return {make_summary("report", "BERT-Sim", std::move(bert), true),
          make_summary("report", "CheXbert-Sim", std::move(chex), true)};
}

EvalSummary summarize_detection(const DetectionEvalResult& result) {
  std::vector<SampleScore> samples;
  for (const auto& [id, iou] : result.per_image) samples.push_back({id, iou * 100.0});
  return make_summary("detection", "IoU", std::move(samples), false);
}

HumanEvalTally tally_human_eval(const std::vector<std::string>& votes) {
  if (votes.empty()) throw InputError("no votes to tally");
  HumanEvalTally t;
  for (const auto& v : votes) {
    std::string k(trim(v));
    std::transform(k.begin(), k.end(), k.begin(), [](unsigned char c) { return std::tolower(c); });
    if (k == "good") {
      ++t.good;
    } else if (k == "medium") {
      ++t.medium;
    } else if (k == "poor") {
      ++t.poor;
    } else {
      throw InputError("unknown vote category '" + v + "'");
    }
  }
  const std::size_t n = votes.size();
  auto pct = [n](std::size_t c) { return static_cast<int>((200 * c + n) / (2 * n)); };
  t.good_pct = pct(t.good);
  t.medium_pct = pct(t.medium);
  t.poor_pct = pct(t.poor);
  return t;
}

EvalTask parse_eval_task(std::string_view name) {
  if (name == "report") return EvalTask::report;
  if (name == "vqa") return EvalTask::vqa;
  if (name == "detection") return EvalTask::detection;
  throw InputError("unknown eval task '" + std::string(name) + "'");
}

std::vector<EvalSummary> run_eval(EvalTask task, const std::filesystem::path& predictions,
                                  const std::filesystem::path& references, const TextEmbedder& embedder) {
  const auto pred_rows = read_jsonl(predictions);
  const auto ref_rows = read_jsonl(references);
  switch (task) {
    case EvalTask::report:
      return report_eval(text_by_id(pred_rows), text_by_id(ref_rows), embedder, embedder);
    case EvalTask::vqa:
      return {vqa_eval(text_by_id(pred_rows), text_by_id(ref_rows), embedder)};
    case EvalTask::detection:
      break;
  }
  std::map<std::string, std::vector<PixelBox>> gold, pred;
  std::map<std::string, ImageSize> sizes;
  try {
    for (const auto& r : ref_rows) {
      const auto id = r["id"].get<std::string>();
      gold[id] = boxes_of(r);
      if (r.contains("image_size")) sizes[id] = {r["image_size"].at("width").get<int>(), r["image_size"].at("height").get<int>()};
    }
    for (const auto& r : pred_rows) {
      const auto id = r["id"].get<std::string>();
      if (r.contains("boxes")) {
        pred[id] = boxes_of(r);
      } else if (r.contains("text")) {
        auto it = sizes.find(id);
        if (it == sizes.end()) {
          if (!gold.contains(id)) throw AlignmentError("prediction for '" + id + "' has no ground truth");
          throw SchemaError("reference '" + id + "' needs image_size to score generated text", 0, "image_size");
        }
        pred[id] = predicted_boxes(r["text"].get<std::string>(), it->second);
      } else {
        throw SchemaError("prediction '" + id + "' needs 'boxes' or 'text'", 0, "boxes");
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(e.what());
  }
  return {summarize_detection(detection_eval(pred, gold))};
}

json summary_json(const EvalSummary& s) {
  json samples = json::array();
  for (const auto& x : s.samples) samples.push_back({{"id", x.id}, {"score", x.score}});
  return {{"task", s.task},   {"metric", s.metric},         {"score", s.score()},
          {"raw", s.raw},     {"scaled", s.scaled},         {"scale", s.table_scaled ? "x100" : "[0,1]"},
          {"sample_count", s.sample_count}, {"samples", samples}};
}

std::string format_table(const std::vector<EvalSummary>& summaries) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "Task" << std::setw(14) << "Metric" << std::right << std::setw(10) << "Score"
     << std::setw(10) << "N" << '\n';
  os << std::string(46, '-') << '\n';
  for (const auto& s : summaries) {
    os << std::left << std::setw(12) << s.task << std::setw(14) << s.metric << std::right << std::fixed
       << std::setprecision(s.table_scaled ? 1 : 2) << std::setw(10) << s.score() << std::setw(10) << s.sample_count
       << '\n';
  }
  return os.str();
}

}  // namespace medvl
