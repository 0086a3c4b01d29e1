#include "medvl/datasets.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "medvl/errors.hpp"
#include "test_support.hpp"

namespace medvl {
namespace {

Manifest parse(const std::string& text, ManifestKind kind) {
  std::istringstream in(text);
  return parse_manifest(in, kind);
}

std::size_t schema_line(const std::string& text, ManifestKind kind, std::string* field = nullptr) {
  try {
    parse(text, kind);
  } catch (const SchemaError& e) {
    if (field) *field = e.field();
    return e.line();
  }
  ADD_FAILURE() << "no SchemaError for: " << text;
  return 0;
}

TEST(Manifest, ParsesEachKindAndSkipsBlankLines) {
  const auto rep = parse("{\"image_path\":\"a.png\",\"report\":\"clear.\"}\n\n  \n", ManifestKind::report);
  ASSERT_EQ(rep.records.size(), 1u);
  EXPECT_EQ(std::get<ReportGenRecord>(rep.records[0]).report, "clear.");

  const auto vqa = parse("{\"image_path\":\"a.png\",\"question\":\"q?\",\"answer\":\"yes\",\"closed_ended\":true}\n",
                         ManifestKind::vqa);
  EXPECT_TRUE(std::get<VQARecord>(vqa.records[0]).closed_ended);

  const auto det = parse(
      "{\"image_path\":\"a.png\",\"label\":\"nodule\",\"image_size\":{\"width\":200,\"height\":100},"
      "\"boxes\":[{\"x_left\":20,\"y_top\":10,\"x_right\":60,\"y_bottom\":50}]}\n",
      ManifestKind::detection);
  const auto& d = std::get<DetectionRecord>(det.records[0]);
  EXPECT_EQ(d.image_size.width, 200);
  ASSERT_EQ(d.boxes.size(), 1u);
  EXPECT_EQ(d.boxes[0].x_right, 60);
  EXPECT_EQ(det.warnings.size(), 1u);  // a.png does not exist
}

TEST(Manifest, ErrorsNameLineAndField) {
  std::string field;
  EXPECT_EQ(schema_line("{\"image_path\":\"a\",\"report\":\"x\"}\n{\"image_path\":\"a\"}\n", ManifestKind::report, &field), 2u);
  EXPECT_EQ(field, "report");
  EXPECT_EQ(schema_line("{\"image_path\":\"a\",\"report\":\"\"}", ManifestKind::report), 1u);
  EXPECT_EQ(schema_line("\n\nnot json", ManifestKind::report), 3u);
  EXPECT_EQ(schema_line("[1,2]", ManifestKind::vqa), 1u);
  EXPECT_EQ(schema_line("{\"image_path\":\"a\",\"question\":\"q\",\"answer\":\"a\",\"closed_ended\":1}", ManifestKind::vqa,
                        &field),
            1u);
  EXPECT_EQ(field, "closed_ended");
  const std::string det_prefix = "{\"image_path\":\"a\",\"label\":\"n\",\"image_size\":{\"width\":100,\"height\":100},";
  EXPECT_EQ(schema_line(det_prefix + "\"boxes\":[]}", ManifestKind::detection, &field), 1u);
  EXPECT_EQ(field, "boxes");
  EXPECT_EQ(schema_line(det_prefix + "\"boxes\":[{\"x_left\":50,\"y_top\":0,\"x_right\":40,\"y_bottom\":9}]}",
                        ManifestKind::detection, &field),
            1u);
  EXPECT_EQ(field, "boxes");
  EXPECT_EQ(schema_line(det_prefix + "\"boxes\":[{\"x_left\":0,\"y_top\":0,\"x_right\":140,\"y_bottom\":9}]}",
                        ManifestKind::detection),
            1u);
  EXPECT_EQ(schema_line("{\"image_path\":\"a\",\"label\":\"n\",\"image_size\":{\"width\":0,\"height\":5},\"boxes\":[]}",
                        ManifestKind::detection, &field),
            1u);
  EXPECT_EQ(field, "image_size");
}

TEST(Manifest, KindNames) {
  EXPECT_EQ(parse_manifest_kind("vqa"), ManifestKind::vqa);
  EXPECT_THROW(parse_manifest_kind("caption"), ConfigError);
}

TEST(TrainingSamples, MappingPerKind) {
  const DetectionRecord det{"img.png", "nodule", {{10, 20, 30, 40}, {0, 0, 200, 100}}, {200, 100}, 1};
  const auto s = to_training_sample(det, "/data");
  EXPECT_EQ(s.task, TaskIdentifier::detection);
  EXPECT_EQ(s.image_path, "/data/img.png");
  EXPECT_EQ(s.prompt.text, "[INST] <Img><ImageFeature></Img> [detection] nodule [/INST]");
  EXPECT_EQ(s.target, "nodule {<5><20><15><40>} {<0><0><100><100>}");

  const auto r = to_training_sample(ReportGenRecord{"x.png", "lungs clear.", 1});
  EXPECT_EQ(r.task, TaskIdentifier::caption);
  EXPECT_EQ(parse_rendered(r.prompt.text).instruction, kCaptionInstruction);
  EXPECT_EQ(r.target, "lungs clear.");

  const auto q = to_training_sample(VQARecord{"y.png", "is it normal?", "yes", true, 1});
  EXPECT_EQ(q.task, TaskIdentifier::vqa);
  EXPECT_EQ(parse_rendered(q.prompt.text).instruction, "is it normal?");
  EXPECT_EQ(q.target, "yes");
}

TEST(SyntheticCorpus, LoadsCleanly) {
  const auto dir = testing::scratch_dir("corpus");
  const auto corpus = write_synthetic_corpus(dir, 5, 3, 2, 4);
  const auto det = load_manifest(corpus.detection_manifest, ManifestKind::detection);
  EXPECT_EQ(det.records.size(), 5u);
  EXPECT_TRUE(det.warnings.empty());
  EXPECT_EQ(load_manifest(corpus.report_manifest, ManifestKind::report).records.size(), 3u);
  EXPECT_EQ(load_manifest(corpus.vqa_manifest, ManifestKind::vqa).records.size(), 2u);
  for (const auto& s : to_training_samples(det)) {
    EXPECT_EQ(read_image(s.image_path).width, 100);
    EXPECT_FALSE(parse_spans(s.target).spans.empty());
  }
  std::filesystem::remove_all(dir);
}

std::map<TaskIdentifier, std::vector<TrainingSample>> labelled_streams() {
  std::map<TaskIdentifier, std::vector<TrainingSample>> streams;
  for (TaskIdentifier t : {TaskIdentifier::caption, TaskIdentifier::vqa, TaskIdentifier::detection}) {
    for (int i = 0; i < 7; ++i) {
      TrainingSample s;
      s.task = t;
      s.image_path = std::string(task_name(t)) + std::to_string(i);
      streams[t].push_back(s);
    }
  }
  return streams;
}

TEST(MixedStream, FrequenciesFollowWeights) {
  MixConfig mix;
  mix.weights = {{TaskIdentifier::caption, 0.5}, {TaskIdentifier::vqa, 0.3}, {TaskIdentifier::detection, 0.2}};
  mix.seed = 17;
  MixedStream stream(labelled_streams(), mix);
  std::map<TaskIdentifier, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[stream.next().task];
  for (const auto& [task, w] : mix.weights) EXPECT_NEAR(counts[task] / static_cast<double>(n), w, 0.02);
}

TEST(MixedStream, EpochVisitsEverySampleOnce) {
  MixedStream stream(labelled_streams(), MixConfig::uniform({TaskIdentifier::vqa}, 3));
  std::set<std::string> seen;
  for (int i = 0; i < 7; ++i) seen.insert(stream.next().image_path);
  EXPECT_EQ(seen.size(), 7u);
}

TEST(MixedStream, SeededAndResumable) {
  const auto mix = MixConfig::uniform({TaskIdentifier::caption, TaskIdentifier::vqa, TaskIdentifier::detection}, 5);
  MixedStream a(labelled_streams(), mix);
  MixedStream b(labelled_streams(), mix);
  for (int i = 0; i < 30; ++i) EXPECT_EQ(a.next().image_path, b.next().image_path);
  const std::string state = a.save_state();
  std::vector<std::string> expected;
  for (int i = 0; i < 40; ++i) expected.push_back(a.next().image_path);
  MixedStream c(labelled_streams(), mix);
  c.load_state(state);
  for (const auto& path : expected) EXPECT_EQ(c.next().image_path, path);
  EXPECT_THROW(c.load_state("garbage"), CorruptionError);
}

TEST(MixedStream, ConfigErrors) {
  MixConfig bad;
  bad.weights = {{TaskIdentifier::caption, 0.5}};
  EXPECT_THROW(MixedStream(labelled_streams(), bad), ConfigError);
  bad.weights = {{TaskIdentifier::refer, 1.0}};
  EXPECT_THROW(MixedStream(labelled_streams(), bad), ConfigError);
  bad.weights = {{TaskIdentifier::caption, -0.5}, {TaskIdentifier::vqa, 1.5}};
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace medvl
