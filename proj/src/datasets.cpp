#include "medvl/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "medvl/errors.hpp"

namespace medvl {

using nlohmann::json;

namespace {

const json& require_field(const json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw SchemaError(std::string("missing field '") + field + "'", line, field);
  return *it;
}

std::string require_string(const json& obj, const char* field, std::size_t line, bool non_empty) {
  const json& v = require_field(obj, field, line);
  if (!v.is_string()) throw SchemaError(std::string("field '") + field + "' must be a string", line, field);
  auto s = v.get<std::string>();
  if (non_empty && s.empty()) throw SchemaError(std::string("field '") + field + "' must be non-empty", line, field);
  return s;
}

double require_number(const json& obj, const char* field, std::size_t line, const char* context) {
  const json& v = require_field(obj, field, line);
  if (!v.is_number()) throw SchemaError(std::string(context) + "." + field + " must be a number", line, context);
  return v.get<double>();
}

Record parse_record(const json& obj, ManifestKind kind, std::size_t line) {
  if (!obj.is_object()) throw SchemaError("record must be a JSON object", line);
  switch (kind) {
    case ManifestKind::report:
      return ReportGenRecord{require_string(obj, "image_path", line, true), require_string(obj, "report", line, true),
                             line};
    case ManifestKind::vqa: {
      VQARecord r;
      r.image_path = require_string(obj, "image_path", line, true);
      r.question = require_string(obj, "question", line, true);
      r.answer = require_string(obj, "answer", line, true);
      if (auto it = obj.find("closed_ended"); it != obj.end()) {
        if (!it->is_boolean()) throw SchemaError("field 'closed_ended' must be a boolean", line, "closed_ended");
        r.closed_ended = it->get<bool>();
      }
      r.line = line;
      return r;
    }
    case ManifestKind::detection: {
      DetectionRecord r;
      r.image_path = require_string(obj, "image_path", line, true);
      r.label = require_string(obj, "label", line, true);
      const json& size = require_field(obj, "image_size", line);
      if (!size.is_object()) throw SchemaError("field 'image_size' must be an object", line, "image_size");
      const double w = require_number(size, "width", line, "image_size");
      const double h = require_number(size, "height", line, "image_size");
      if (w < 1 || h < 1 || w != std::floor(w) || h != std::floor(h)) {
        throw SchemaError("image_size must hold positive integers", line, "image_size");
      }
      r.image_size = {static_cast<int>(w), static_cast<int>(h)};
      const json& boxes = require_field(obj, "boxes", line);
      if (!boxes.is_array() || boxes.empty()) throw SchemaError("field 'boxes' must be a non-empty array", line, "boxes");
      for (const json& b : boxes) {
        if (!b.is_object()) throw SchemaError("each box must be an object", line, "boxes");
        PixelBox box{require_number(b, "x_left", line, "boxes"), require_number(b, "y_top", line, "boxes"),
                     require_number(b, "x_right", line, "boxes"), require_number(b, "y_bottom", line, "boxes")};
        try {
          validate_pixel_box(box, r.image_size);
        } catch (const Error& e) {
          throw SchemaError(std::string("invalid box: ") + e.what(), line, "boxes");
        }
        r.boxes.push_back(box);
      }
      r.line = line;
      return r;
    }
  }
  throw SchemaError("unknown manifest kind", line);
}

const std::string& image_path_of(const Record& r) {
  return std::visit([](const auto& rec) -> const std::string& { return rec.image_path; }, r);
}

}  // namespace

ManifestKind parse_manifest_kind(std::string_view name) {
  if (name == "report") return ManifestKind::report;
  if (name == "vqa") return ManifestKind::vqa;
  if (name == "detection") return ManifestKind::detection;
  throw ConfigError("unknown manifest kind '" + std::string(name) + "'");
}

Manifest parse_manifest(std::istream& in, ManifestKind kind, const std::filesystem::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw SchemaError(std::string("malformed JSON: ") + e.what(), line);
    }
    Record r = parse_record(obj, kind, line);
    const std::filesystem::path img = base_dir / image_path_of(r);
    if (!std::filesystem::exists(img)) {
      m.warnings.push_back("line " + std::to_string(line) + ": image not found: " + img.string());
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path, ManifestKind kind) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open manifest " + path.string());
  return parse_manifest(in, kind, path.parent_path());
}

TrainingSample to_training_sample(const Record& record, const std::filesystem::path& base_dir) {
  TrainingSample s;
  s.image_path = (base_dir / image_path_of(record)).string();
  if (const auto* det = std::get_if<DetectionRecord>(&record)) {
    TargetFields f;
    f.label = det->label;
    for (const auto& b : det->boxes) f.boxes.push_back(normalize_box(b, det->image_size));
    s.task = TaskIdentifier::detection;
    s.prompt = render_prompt({s.task, det->label, 1});
    s.target = build_target(s.task, f);
  } else if (const auto* rep = std::get_if<ReportGenRecord>(&record)) {
    s.task = TaskIdentifier::caption;
    s.prompt = render_prompt({s.task, std::string(kCaptionInstruction), 1});
    s.target = build_target(s.task, {.text = rep->report});
  } else {
    const auto& vqa = std::get<VQARecord>(record);
    s.task = TaskIdentifier::vqa;
    s.prompt = render_prompt({s.task, vqa.question, 1});
    s.target = build_target(s.task, {.text = vqa.answer});
  }
  return s;
}

std::vector<TrainingSample> to_training_samples(const Manifest& manifest) {
  std::vector<TrainingSample> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) out.push_back(to_training_sample(r, manifest.base_dir));
  return out;
}

MixConfig MixConfig::uniform(const std::vector<TaskIdentifier>& tasks, std::uint64_t seed) {
  MixConfig cfg;
  cfg.seed = seed;
  for (TaskIdentifier t : tasks) cfg.weights[t] = 1.0 / static_cast<double>(tasks.size());
  return cfg;
}

void MixConfig::validate() const {
  double sum = 0;
  bool any = false;
  for (const auto& [task, w] : weights) {
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("mix weight for " + std::string(task_name(task)) + " must be >= 0");
    sum += w;
    any = any || w > 0;
  }
  if (!any) throw ConfigError("mix needs at least one positive weight");
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("mix weights must sum to 1");
}

MixedStream::MixedStream(std::map<TaskIdentifier, std::vector<TrainingSample>> streams, MixConfig config)
    : config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  for (const auto& [task, weight] : config_.weights) {
    if (weight <= 0) continue;
    auto it = streams.find(task);
    if (it == streams.end() || it->second.empty()) {
      throw ConfigError("task " + std::string(task_name(task)) + " has positive weight but no samples");
    }
    Lane lane;
    lane.task = task;
    lane.weight = weight;
    lane.samples = std::move(it->second);
    lane.rng.seed(config_.seed * 1000003ULL + static_cast<std::uint64_t>(task) + 1);
    lane.order.resize(lane.samples.size());
    reshuffle(lane);
    lanes_.push_back(std::move(lane));
  }
}

void MixedStream::reshuffle(Lane& lane) {
  for (std::size_t i = 0; i < lane.order.size(); ++i) lane.order[i] = i;
  std::shuffle(lane.order.begin(), lane.order.end(), lane.rng);
  lane.cursor = 0;
}

const TrainingSample& MixedStream::next() {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng_);
  double acc = 0;
  Lane* chosen = &lanes_.back();
  for (auto& lane : lanes_) {
    acc += lane.weight;
    if (u < acc) {
      chosen = &lane;
      break;
    }
  }
  if (chosen->cursor == chosen->order.size()) {
    ++chosen->epoch;
    reshuffle(*chosen);
  }
  return chosen->samples[chosen->order[chosen->cursor++]];
}

std::vector<TrainingSample> MixedStream::next_batch(std::size_t n) {
  std::vector<TrainingSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(next());
  return out;
}

std::string MixedStream::save_state() const {
  std::ostringstream os;
  os << "mixer " << lanes_.size() << "\n" << rng_ << "\n";
  for (const auto& lane : lanes_) {
    os << "lane " << task_name(lane.task) << " " << lane.samples.size() << " " << lane.cursor << " " << lane.epoch
       << "\n";
    for (std::size_t i : lane.order) os << i << " ";
    os << "\n" << lane.rng << "\n";
  }
  return os.str();
}

void MixedStream::load_state(std::string_view state) {
  std::istringstream is{std::string(state)};
  std::string tag;
  std::size_t count = 0;
  if (!(is >> tag >> count) || tag != "mixer" || count != lanes_.size()) {
    throw CorruptionError("mixer state does not match the configured streams");
  }
  std::mt19937_64 rng;
  if (!(is >> rng)) throw CorruptionError("mixer state: bad generator");
  std::vector<Lane> restored = lanes_;
  for (auto& lane : restored) {
    std::string name;
    std::size_t size = 0;
    if (!(is >> tag >> name >> size >> lane.cursor >> lane.epoch) || tag != "lane" || name != task_name(lane.task) ||
        size != lane.samples.size() || lane.cursor > size) {
      throw CorruptionError("mixer state: lane mismatch");
    }
    for (auto& i : lane.order) {
      if (!(is >> i) || i >= size) throw CorruptionError("mixer state: bad order");
    }
    if (!(is >> lane.rng)) throw CorruptionError("mixer state: bad lane generator");
  }
  lanes_ = std::move(restored);
  rng_ = rng;
}

RgbImage make_rectangle_image(const ImageSize& size, const PixelBox& box, std::uint8_t foreground,
                              std::uint8_t background) {
  RgbImage img = make_solid_image(size.width, size.height, background, background, background);
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      const double cx = x + 0.5;
      const double cy = y + 0.5;
      if (cx >= box.x_left && cx < box.x_right && cy >= box.y_top && cy < box.y_bottom) {
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = foreground;
      }
    }
  }
  return img;
}

SyntheticCorpus write_synthetic_corpus(const std::filesystem::path& dir, int detection_count, int caption_count,
                                       int vqa_count, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  std::mt19937_64 rng(seed);
  SyntheticCorpus corpus{dir / "detection.jsonl", dir / "report.jsonl", dir / "vqa.jsonl"};
  const ImageSize size{100, 100};

  std::ofstream det(corpus.detection_manifest);
  static constexpr std::array<const char*, 2> kLabels = {"pneumonia", "nodule"};
  std::uniform_int_distribution<int> corner(1, 11);
  std::uniform_int_distribution<int> extent(4, 8);
  for (int i = 0; i < detection_count; ++i) {
    const int x0 = corner(rng) * 5;
    const int y0 = corner(rng) * 5;
    const PixelBox box{static_cast<double>(x0), static_cast<double>(y0),
                       static_cast<double>(std::min(100, x0 + extent(rng) * 5)),
                       static_cast<double>(std::min(100, y0 + extent(rng) * 5))};
    const std::string name = "images/det_" + std::to_string(i) + ".png";
    write_png(dir / name, make_rectangle_image(size, box));
    json rec = {{"image_path", name},
                {"label", kLabels[static_cast<std::size_t>(i) % kLabels.size()]},
                {"image_size", {{"width", size.width}, {"height", size.height}}},
                {"boxes", json::array({{{"x_left", box.x_left},
                                        {"y_top", box.y_top},
                                        {"x_right", box.x_right},
                                        {"y_bottom", box.y_bottom}}})}};
    det << rec.dump() << "\n";
  }

  static constexpr std::array<const char*, 4> kReports = {
      "lungs are clear.", "small left effusion.", "heart size is normal.", "no acute disease."};
  std::ofstream rep(corpus.report_manifest);
  for (int i = 0; i < caption_count; ++i) {
    RgbImage img = make_solid_image(size.width, size.height, 20, 20, 20);
    const int stripes = i + 2;
    for (int y = 0; y < size.height; ++y) {
      if ((y * stripes / size.height) % 2 == 0) continue;
      for (int x = 0; x < size.width; ++x) {
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = 200;
      }
    }
    const std::string name = "images/cap_" + std::to_string(i) + ".png";
    write_png(dir / name, img);
    rep << json{{"image_path", name}, {"report", kReports[static_cast<std::size_t>(i) % kReports.size()]}}.dump()
        << "\n";
  }

  static constexpr std::array<const char*, 4> kQuestions = {"What plane is the image in?", "Is there a mass?",
                                                            "Which organ is shown?", "Is this normal?"};
  static constexpr std::array<const char*, 4> kAnswers = {"axial", "yes", "lung", "no"};
  std::ofstream vqa(corpus.vqa_manifest);
  for (int i = 0; i < vqa_count; ++i) {
    const auto level = static_cast<std::uint8_t>(40 + 50 * (i % 4));
    RgbImage img = make_solid_image(size.width, size.height, level, static_cast<std::uint8_t>(255 - level), 90);
    const std::string name = "images/vqa_" + std::to_string(i) + ".png";
    write_png(dir / name, img);
    const auto k = static_cast<std::size_t>(i) % kQuestions.size();
    vqa << json{{"image_path", name},
                {"question", kQuestions[k]},
                {"answer", kAnswers[k]},
                {"closed_ended", k == 1 || k == 3}}
               .dump()
        << "\n";
  }
  return corpus;
}

}  // namespace medvl
