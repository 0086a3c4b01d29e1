#pragma once

// Conversions between pixel boxes, the integer [0,100] location grid and the
// textual `{<x0><y0><x1><y1>}` form the language model reads and writes.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace medvl {

struct ImageSize {
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct PixelBox {
  double x_left = 0;
  double y_top = 0;
  double x_right = 0;
  double y_bottom = 0;

  double width() const { return x_right - x_left; }
  double height() const { return y_bottom - y_top; }
  double area() const { return width() * height(); }

  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

/// Location on the 101-value grid; each coordinate in [0,100].
struct NormalizedBox {
  int x_left = 0;
  int y_top = 0;
  int x_right = 0;
  int y_bottom = 0;

  bool valid() const;

  friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

struct CharRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  friend bool operator==(const CharRange&, const CharRange&) = default;
};

/// A box found in text. `char_range` covers the serialized box itself;
/// `phrase` is the trimmed plain text immediately before it, if any.
struct GroundedSpan {
  std::optional<std::string> phrase;
  NormalizedBox box;
  CharRange char_range;
};

struct ParsedSpans {
  std::vector<GroundedSpan> spans;
  std::size_t malformed_count = 0;
};

/// Throws InvalidBoxError for non-positive image sizes, degenerate or
/// inverted boxes and negative coordinates.
void validate_pixel_box(const PixelBox& box, const ImageSize& size);

/// Maps a pixel box onto the [0,100] grid with round-half-up.
/// Throws InvalidBoxError (degenerate) or OutOfBoundsError.
NormalizedBox normalize_box(const PixelBox& box, const ImageSize& size);

/// Exact inverse mapping, no rounding. Throws InvalidBoxError when the box
/// collapses to zero width or height.
PixelBox denormalize_box(const NormalizedBox& box, const ImageSize& size);

std::string serialize_box(const NormalizedBox& box);

/// Scans arbitrary text for serialized boxes. Never throws; boxes whose
/// coordinates leave [0,100] or are inverted are counted as malformed.
ParsedSpans parse_spans(std::string_view text);

}  // namespace medvl
