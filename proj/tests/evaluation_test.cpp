#include "medvl/evaluation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "medvl/errors.hpp"
#include "test_support.hpp"

namespace medvl {
namespace {

/// Counts 0.01-cells whose centre falls inside each box. Exact for boxes on
/// the 0.01 lattice, independent of the closed-form area arithmetic.
double grid_iou(const PixelBox& a, const PixelBox& b) {
  const int x0 = static_cast<int>(std::floor(std::min(a.x_left, b.x_left) * 100));
  const int x1 = static_cast<int>(std::ceil(std::max(a.x_right, b.x_right) * 100));
  const int y0 = static_cast<int>(std::floor(std::min(a.y_top, b.y_top) * 100));
  const int y1 = static_cast<int>(std::ceil(std::max(a.y_bottom, b.y_bottom) * 100));
  auto inside = [](const PixelBox& r, double x, double y) {
    return x > r.x_left && x < r.x_right && y > r.y_top && y < r.y_bottom;
  };
  long inter = 0;
  long uni = 0;
  for (int yi = y0; yi < y1; ++yi) {
    const double y = (yi + 0.5) / 100.0;
    for (int xi = x0; xi < x1; ++xi) {
      const double x = (xi + 0.5) / 100.0;
      const bool ia = inside(a, x, y);
      const bool ib = inside(b, x, y);
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

PixelBox lattice_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> corner(0, 300);
  std::uniform_int_distribution<int> side(1, 100);
  const int x = corner(rng);
  const int y = corner(rng);
  return {x / 100.0, y / 100.0, (x + side(rng)) / 100.0, (y + side(rng)) / 100.0};
}

TEST(BoxIou, MatchesGridOracle) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 1000; ++i) {
    const PixelBox a = lattice_box(rng);
    const PixelBox b = lattice_box(rng);
    ASSERT_NEAR(box_iou(a, b), grid_iou(a, b), 1e-3) << i;
  }
}

TEST(BoxIou, KnownValues) {
  EXPECT_NEAR(box_iou({0, 0, 10, 10}, {5, 5, 15, 15}), 25.0 / 175.0, 1e-9);
  EXPECT_EQ(box_iou({0, 0, 10, 10}, {0, 0, 10, 10}), 1.0);
  EXPECT_EQ(box_iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
  EXPECT_EQ(box_iou({0, 0, 1, 1}, {1, 0, 2, 1}), 0.0);
  EXPECT_EQ(box_iou({0, 0, 0, 0}, {0, 0, 0, 0}), 0.0);
}

TEST(Cosine, CharBag) {
  const CharBagEmbedder e;
  EXPECT_NEAR(cosine(e.embed("ab"), e.embed("aab")), 3.0 / std::sqrt(10.0), 1e-12);
  EXPECT_NEAR(cosine(e.embed("cd"), e.embed("ce")), 0.5, 1e-12);
  EXPECT_THROW(cosine(e.embed(""), e.embed("a")), UndefinedSimilarityError);
  EXPECT_THROW(cosine(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(3)), ShapeError);
}

TEST(Similarity, Fixtures) {
  const CharBagEmbedder e;
  EXPECT_NEAR(bert_sim("aab", "ab", e), 94.87, 1e-2);
  EXPECT_NEAR(chexbert_sim("ab. ce.", "ab. cd.", e), 75.0, 1e-2);
  EXPECT_NEAR(chexbert_sim("lungs clear.", "lungs clear. no effusion.", e), 50.0, 1e-2);
  EXPECT_NEAR(chexbert_sim("no effusion. lungs clear.", "lungs clear.", e), 100.0 * cosine(e.embed("no effusion"), e.embed("lungs clear")) / 2, 1e-9);
  EXPECT_THROW(bert_sim("", "x", e), UndefinedSimilarityError);
}

TEST(Similarity, SplitSentences) {
  EXPECT_EQ(split_sentences(" a b. c\nd.. "), (std::vector<std::string>{"a b", "c", "d"}));
  EXPECT_TRUE(split_sentences(" . \n").empty());
}

TEST(Similarity, LookupEmbedder) {
  const auto dir = testing::scratch_dir("lookup");
  {
    std::ofstream out(dir / "v.jsonl");
    out << R"({"text":"yes","vector":[1,0]})" << "\n" << R"({"text":"no","vector":[0,1]})" << "\n";
  }
  const auto e = LookupTableEmbedder::load(dir / "v.jsonl");
  EXPECT_EQ(bert_sim("yes", "no", e), 0.0);
  EXPECT_EQ(bert_sim("yes", "yes", e), 100.0);
  EXPECT_THROW(e.embed("maybe"), InputError);
  std::filesystem::remove_all(dir);
}

TEST(DetectionEval, GreedyMatchingAndMissingPredictions) {
  std::map<std::string, std::vector<PixelBox>> gt = {
      {"a", {{0, 0, 10, 10}, {20, 20, 30, 30}}}, {"b", {{0, 0, 10, 10}}}, {"c", {{0, 0, 4, 4}}}};
  std::map<std::string, std::vector<PixelBox>> pred = {
      {"a", {{20, 20, 30, 30}, {0, 0, 10, 10}, {0, 0, 10, 10}}}, {"b", {{5, 5, 15, 15}}}, {"c", {}}};
  const auto r = detection_eval(pred, gt);
  EXPECT_DOUBLE_EQ(r.per_image.at("a"), 1.0);
  EXPECT_NEAR(r.per_image.at("b"), 25.0 / 175.0, 1e-12);
  EXPECT_EQ(r.per_image.at("c"), 0.0);
  EXPECT_EQ(r.no_prediction_count, 1u);
  EXPECT_NEAR(r.mean_iou, (1.0 + 25.0 / 175.0) / 3.0, 1e-12);
  pred.erase("c");
  EXPECT_EQ(detection_eval(pred, gt).no_prediction_count, 1u);
  pred["zzz"] = {{0, 0, 1, 1}};
  EXPECT_THROW(detection_eval(pred, gt), AlignmentError);
  gt["d"] = {};
  pred.erase("zzz");
  EXPECT_THROW(detection_eval(pred, gt), InputError);
}

TEST(DetectionEval, OnePredictionCannotServeTwoGoldBoxes) {
  const std::map<std::string, std::vector<PixelBox>> gt = {{"a", {{0, 0, 10, 10}, {0, 0, 10, 10}}}};
  const std::map<std::string, std::vector<PixelBox>> pred = {{"a", {{0, 0, 10, 10}}}};
  EXPECT_DOUBLE_EQ(detection_eval(pred, gt).mean_iou, 0.5);
}

TEST(DetectionEval, PredictedBoxesFromText) {
  const auto boxes = predicted_boxes("nodule {<25><10><75><50>} {<5><5><5><9>} {<1><2>", {1000, 1000});
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0].x_left, 250);
  EXPECT_EQ(boxes[0].y_bottom, 500);
}

TEST(HumanEval, TallyPercentages) {
  std::vector<std::string> votes;
  votes.insert(votes.end(), 76, "good");
  votes.insert(votes.end(), 19, "Medium");
  votes.insert(votes.end(), 5, "POOR");
  const auto t = tally_human_eval(votes);
  EXPECT_EQ(t.good, 76u);
  EXPECT_EQ(t.good_pct, 76);
  EXPECT_EQ(t.medium_pct, 19);
  EXPECT_EQ(t.poor_pct, 5);
  const auto thirds = tally_human_eval({"good", "medium", "poor"});
  EXPECT_EQ(thirds.good_pct, 33);
  const auto halves = tally_human_eval({"good", "poor"});
  EXPECT_EQ(halves.good_pct, 50);
  const auto eighths = tally_human_eval({"good", "poor", "poor", "poor", "poor", "poor", "poor", "poor"});
  EXPECT_EQ(eighths.good_pct, 13);  // 12.5 rounds up
  EXPECT_THROW(tally_human_eval({}), InputError);
  EXPECT_THROW(tally_human_eval({"great"}), InputError);
}

TEST(Summaries, VqaAndReport) {
  const CharBagEmbedder e;
  const std::map<std::string, std::string> out = {{"1", "ab"}, {"2", "cd"}};
  const std::map<std::string, std::string> ref = {{"1", "aab"}, {"2", "cd"}};
  const auto vqa = vqa_eval(out, ref, e);
  EXPECT_EQ(vqa.metric, "BERT-Sim");
  EXPECT_NEAR(vqa.scaled, (94.868 + 100) / 2, 1e-2);
  EXPECT_NEAR(vqa.raw, vqa.scaled / 100, 1e-12);
  EXPECT_EQ(vqa.sample_count, 2u);
  const auto rep = report_eval(out, ref, e, e);
  ASSERT_EQ(rep.size(), 2u);
  EXPECT_EQ(rep[1].metric, "CheXbert-Sim");
  EXPECT_TRUE(rep[0].table_scaled);
  EXPECT_THROW(vqa_eval({{"1", "ab"}}, ref, e), AlignmentError);
  EXPECT_THROW(vqa_eval({}, {}, e), InputError);
  EXPECT_NE(format_table(rep).find("CheXbert-Sim"), std::string::npos);
  EXPECT_EQ(summary_json(vqa)["metric"], "BERT-Sim");
}

TEST(RunEval, DetectionFromFiles) {
  const auto dir = testing::scratch_dir("runeval");
  {
    std::ofstream ref(dir / "ref.jsonl");
    ref << R"({"id":"x","boxes":[{"x_left":250,"y_top":100,"x_right":750,"y_bottom":500}],"image_size":{"width":1000,"height":1000}})"
        << "\n";
    std::ofstream pred(dir / "pred.jsonl");
    pred << R"({"id":"x","text":"mass {<25><10><75><50>}"})" << "\n";
  }
  const auto s = run_eval(EvalTask::detection, dir / "pred.jsonl", dir / "ref.jsonl", CharBagEmbedder{});
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].metric, "IoU");
  EXPECT_DOUBLE_EQ(s[0].raw, 1.0);
  EXPECT_EQ(parse_eval_task("report"), EvalTask::report);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace medvl
