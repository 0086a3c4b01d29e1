#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "medvl/grounding.hpp"
#include "medvl/image_io.hpp"
#include "medvl/prompting.hpp"

namespace medvl {

struct ReportGenRecord {
  std::string image_path;
  std::string report;
  std::size_t line = 0;
};

struct VQARecord {
  std::string image_path;
  std::string question;
  std::string answer;
  bool closed_ended = false;
  std::size_t line = 0;
};

struct DetectionRecord {
  std::string image_path;
  std::string label;
  std::vector<PixelBox> boxes;
  ImageSize image_size;
  std::size_t line = 0;
};

using Record = std::variant<ReportGenRecord, VQARecord, DetectionRecord>;

enum class ManifestKind { report, vqa, detection };

/// Throws ConfigError for names other than report, vqa, detection.
ManifestKind parse_manifest_kind(std::string_view name);

struct Manifest {
  std::vector<Record> records;
  /// Image paths are resolved against this directory.
  std::filesystem::path base_dir;
  /// Deferred problems, currently missing image files.
  std::vector<std::string> warnings;
};

/// JSON-lines, one record per non-blank line. Throws SchemaError naming the
/// line and field of the first violation.
Manifest load_manifest(const std::filesystem::path& path, ManifestKind kind);
Manifest parse_manifest(std::istream& in, ManifestKind kind, const std::filesystem::path& base_dir = {});

inline constexpr std::string_view kCaptionInstruction = "Could you describe the contents of this image for me?";

struct TrainingSample {
  std::string image_path;
  RenderedPrompt prompt;
  std::string target;
  TaskIdentifier task = TaskIdentifier::caption;
};

/// detection -> [detection] label / `label {box}...`; report -> [caption]
/// with the fixed instruction / report; vqa -> [vqa] question / answer.
/// `base_dir` is joined onto relative image paths.
TrainingSample to_training_sample(const Record& record, const std::filesystem::path& base_dir = {});
std::vector<TrainingSample> to_training_samples(const Manifest& manifest);

struct MixConfig {
  std::map<TaskIdentifier, double> weights;
  std::uint64_t seed = 0;

  /// Equal weight for each listed task.
  static MixConfig uniform(const std::vector<TaskIdentifier>& tasks, std::uint64_t seed);
  /// Weights must be non-negative, sum to 1 and include a positive entry.
  void validate() const;
};

/// Seeded multi-task sampler: each draw picks a task by weight, then takes
/// the next sample of that task's shuffled stream; a stream is reshuffled
/// whenever it runs out. Single consumer.
class MixedStream {
 public:
  MixedStream(std::map<TaskIdentifier, std::vector<TrainingSample>> streams, MixConfig config);

  const TrainingSample& next();
  std::vector<TrainingSample> next_batch(std::size_t n);

  const MixConfig& config() const { return config_; }

  /// Text snapshot of all generator and cursor state.
  std::string save_state() const;
  /// Throws CorruptionError if the snapshot does not match these streams.
  void load_state(std::string_view state);

 private:
  struct Lane {
    TaskIdentifier task;
    double weight = 0;
    std::vector<TrainingSample> samples;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::size_t epoch = 0;
    std::mt19937_64 rng;
  };
  void reshuffle(Lane& lane);

  MixConfig config_;
  std::vector<Lane> lanes_;
  std::mt19937_64 rng_;
};

/// Bright axis-aligned rectangle on a dark background.
RgbImage make_rectangle_image(const ImageSize& size, const PixelBox& box, std::uint8_t foreground = 230,
                              std::uint8_t background = 20);

struct SyntheticCorpus {
  std::filesystem::path detection_manifest;
  std::filesystem::path report_manifest;
  std::filesystem::path vqa_manifest;
};

/// Writes PNG fixtures and three manifests under `dir`. Detection images are
/// 100x100 with integer boxes, so normalization is exact.
SyntheticCorpus write_synthetic_corpus(const std::filesystem::path& dir, int detection_count, int caption_count,
                                       int vqa_count, std::uint64_t seed);

}  // namespace medvl
