#include "medvl/grounding.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "medvl/errors.hpp"

namespace medvl {
namespace {

TEST(NormalizeBox, ExactRatios) {
  EXPECT_EQ(normalize_box({250, 100, 750, 500}, {1000, 1000}), (NormalizedBox{25, 10, 75, 50}));
}

TEST(NormalizeBox, FullImage) {
  for (ImageSize s : {ImageSize{448, 448}, ImageSize{17, 333}, ImageSize{1, 1}}) {
    EXPECT_EQ(normalize_box({0, 0, double(s.width), double(s.height)}, s), (NormalizedBox{0, 0, 100, 100}));
  }
}

TEST(NormalizeBox, RoundsHalfUp) {
  EXPECT_EQ(normalize_box({137, 59, 412, 288}, {448, 448}), (NormalizedBox{31, 13, 92, 64}));
  // 5/1000*100 = 0.5 exactly -> 1; 15/1000*100 = 1.5 -> 2.
  EXPECT_EQ(normalize_box({5, 15, 25, 35}, {1000, 1000}), (NormalizedBox{1, 2, 3, 4}));
}

TEST(NormalizeBox, Errors) {
  EXPECT_THROW(normalize_box({10, 10, 10, 20}, {100, 100}), InvalidBoxError);
  EXPECT_THROW(normalize_box({10, 30, 20, 20}, {100, 100}), InvalidBoxError);
  EXPECT_THROW(normalize_box({10, 10, 120, 20}, {100, 100}), OutOfBoundsError);
  EXPECT_THROW(normalize_box({10, 10, 20, 20}, {0, 100}), InvalidBoxError);
}

TEST(DenormalizeBox, Examples) {
  EXPECT_EQ(denormalize_box({25, 10, 75, 50}, {1000, 1000}), (PixelBox{250, 100, 750, 500}));
  EXPECT_EQ(denormalize_box({0, 0, 100, 100}, {448, 448}), (PixelBox{0, 0, 448, 448}));
  const PixelBox p = denormalize_box({31, 13, 92, 64}, {448, 448});
  EXPECT_NEAR(p.x_left, 138.88, 1e-9);
  EXPECT_NEAR(p.y_top, 58.24, 1e-9);
  EXPECT_NEAR(p.x_right, 412.16, 1e-9);
  EXPECT_NEAR(p.y_bottom, 286.72, 1e-9);
}

TEST(DenormalizeBox, DegenerateThrows) {
  EXPECT_THROW(denormalize_box({10, 10, 10, 50}, {100, 100}), InvalidBoxError);
  EXPECT_THROW(denormalize_box({10, 50, 20, 50}, {100, 100}), InvalidBoxError);
}

TEST(SerializeBox, Examples) {
  EXPECT_EQ(serialize_box({56, 16, 84, 58}), "{<56><16><84><58>}");
  EXPECT_EQ(serialize_box({0, 0, 100, 100}), "{<0><0><100><100>}");
  EXPECT_EQ(serialize_box({31, 13, 92, 64}), "{<31><13><92><64>}");
}

TEST(ParseSpans, SingleSpanWithPhrase) {
  const auto r = parse_spans("pneumonia {<56><16><84><58>}");
  ASSERT_EQ(r.spans.size(), 1u);
  EXPECT_EQ(r.malformed_count, 0u);
  EXPECT_EQ(r.spans[0].phrase, "pneumonia");
  EXPECT_EQ(r.spans[0].box, (NormalizedBox{56, 16, 84, 58}));
  EXPECT_EQ(r.spans[0].char_range, (CharRange{10, 28}));
}

TEST(ParseSpans, NoSpans) {
  const auto r = parse_spans("no finding");
  EXPECT_TRUE(r.spans.empty());
  EXPECT_EQ(r.malformed_count, 0u);
}

TEST(ParseSpans, InvertedBoxIsCountedNotRepaired) {
  const auto r = parse_spans("a {<10><10><5><5>} b {<1><2><3><4>}");
  ASSERT_EQ(r.spans.size(), 1u);
  EXPECT_EQ(r.malformed_count, 1u);
  EXPECT_EQ(r.spans[0].box, (NormalizedBox{1, 2, 3, 4}));
  EXPECT_EQ(r.spans[0].phrase, "b");
}

TEST(ParseSpans, OutOfRangeIsMalformed) {
  const auto r = parse_spans("x {<0><0><101><50>} y {<0><0><99999999999999><1>}");
  EXPECT_TRUE(r.spans.empty());
  EXPECT_EQ(r.malformed_count, 2u);
}

TEST(ParseSpans, PhraseAbsentWhenNothingPrecedes) {
  const auto r = parse_spans("{<1><2><3><4>}{<5><6><7><8>}");
  ASSERT_EQ(r.spans.size(), 2u);
  EXPECT_FALSE(r.spans[0].phrase.has_value());
  EXPECT_FALSE(r.spans[1].phrase.has_value());
}

TEST(ParseSpans, MultipleGroundedPhrases) {
  const auto r = parse_spans("left effusion {<5><50><40><90>} and cardiomegaly {<30><40><70><80>}.");
  ASSERT_EQ(r.spans.size(), 2u);
  EXPECT_EQ(r.spans[0].phrase, "left effusion");
  EXPECT_EQ(r.spans[1].phrase, "and cardiomegaly");
}

TEST(ParseSpans, NearMissesAreIgnored) {
  for (const char* s : {"{<1><2><3>}", "{<1><2><3><4>", "{ <1><2><3><4>}", "{<1><2><3><-4>}", "{<><2><3><4>}",
                        "{<1> <2><3><4>}"}) {
    const auto r = parse_spans(s);
    EXPECT_TRUE(r.spans.empty()) << s;
    EXPECT_EQ(r.malformed_count, 0u) << s;
  }
}

TEST(GroundingProperty, SerializeParseRoundtrip) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> coord(0, 100);
  for (int i = 0; i < 20000; ++i) {
    int a = coord(rng), b = coord(rng), c = coord(rng), d = coord(rng);
    const NormalizedBox box{std::min(a, c), std::min(b, d), std::max(a, c), std::max(b, d)};
    const auto r = parse_spans(serialize_box(box));
    ASSERT_EQ(r.spans.size(), 1u);
    ASSERT_EQ(r.spans[0].box, box);
    ASSERT_EQ(r.malformed_count, 0u);
  }
}

TEST(GroundingProperty, GeometryWithinHalfCell) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> extent(100, 4000);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const ImageSize size{extent(rng), extent(rng)};
    double x0 = unit(rng) * size.width, x1 = unit(rng) * size.width;
    double y0 = unit(rng) * size.height, y1 = unit(rng) * size.height;
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    if (x1 - x0 < 100 || y1 - y0 < 100) continue;
    const PixelBox p{x0, y0, x1, y1};
    const PixelBox q = denormalize_box(normalize_box(p, size), size);
    const double bx = size.width / 200.0 + 0.5 * size.width / 100.0;
    const double by = size.height / 200.0 + 0.5 * size.height / 100.0;
    ASSERT_LE(std::abs(q.x_left - p.x_left), bx);
    ASSERT_LE(std::abs(q.x_right - p.x_right), bx);
    ASSERT_LE(std::abs(q.y_top - p.y_top), by);
    ASSERT_LE(std::abs(q.y_bottom - p.y_bottom), by);
  }
}

TEST(GroundingProperty, IntegerScaleInvariance) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> extent(2, 600);
  std::uniform_int_distribution<int> factor(1, 12);
  for (int i = 0; i < 10000; ++i) {
    const ImageSize size{extent(rng), extent(rng)};
    std::uniform_int_distribution<int> xs(0, size.width), ys(0, size.height);
    int x0 = xs(rng), x1 = xs(rng), y0 = ys(rng), y1 = ys(rng);
    if (x0 == x1 || y0 == y1) continue;
    const PixelBox p{double(std::min(x0, x1)), double(std::min(y0, y1)), double(std::max(x0, x1)),
                     double(std::max(y0, y1))};
    const int k = factor(rng);
    const PixelBox kp{p.x_left * k, p.y_top * k, p.x_right * k, p.y_bottom * k};
    ASSERT_EQ(normalize_box(kp, {size.width * k, size.height * k}), normalize_box(p, size));
  }
}

TEST(GroundingProperty, ParseSpansFuzz) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(0, 200);
  std::uniform_int_distribution<int> byte(0, 255);
  // Bias towards grammar characters so near-miss inputs are common.
  const std::string alphabet = "{}<>0123456789 -";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::bernoulli_distribution biased(0.7);
  std::bernoulli_distribution splice(0.2);
  std::size_t total_spans = 0;
  for (int i = 0; i < 20000; ++i) {
    std::string s(static_cast<std::size_t>(len(rng)), '\0');
    for (char& c : s) c = biased(rng) ? alphabet[pick(rng)] : static_cast<char>(byte(rng));
    if (splice(rng)) {
      // Embed a well-formed box so the span path is exercised as well.
      std::uniform_int_distribution<int> v(0, 50);
      std::uniform_int_distribution<std::size_t> at(0, s.size());
      const int x0 = v(rng), y0 = v(rng);
      s.insert(at(rng), serialize_box({x0, y0, x0 + v(rng), y0 + v(rng)}));
    }
    ParsedSpans r;
    ASSERT_NO_THROW(r = parse_spans(s));
    for (const auto& span : r.spans) {
      ASSERT_TRUE(span.box.valid());
      ASSERT_LE(span.char_range.end, s.size());
      ASSERT_LT(span.char_range.begin, span.char_range.end);
      ASSERT_EQ(s[span.char_range.begin], '{');
      if (span.phrase) ASSERT_FALSE(span.phrase->empty());
    }
    total_spans += r.spans.size();
  }
  SUCCEED() << total_spans << " spans recovered";
}

}  // namespace
}  // namespace medvl
