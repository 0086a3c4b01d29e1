#include "medvl/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "medvl/errors.hpp"

namespace medvl {

namespace {

constexpr int kGridMax = 100;

int to_grid(double coord, int extent) {
  // coord * 100 is exact for integral pixel coordinates, and the division is
  // correctly rounded, so exact halves stay exact.
  const double q = coord * kGridMax / static_cast<double>(extent);
  const auto v = static_cast<int>(std::floor(q + 0.5));
  return std::clamp(v, 0, kGridMax);
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; }

// Matches `<digits>` at `pos`. Values longer than 9 digits are reported as
// out of range rather than overflowing.
bool match_coord(std::string_view text, std::size_t& pos, long& value) {
  if (pos >= text.size() || text[pos] != '<') return false;
  std::size_t i = pos + 1;
  const std::size_t digits_begin = i;
  while (i < text.size() && is_digit(text[i])) ++i;
  if (i == digits_begin || i >= text.size() || text[i] != '>') return false;
  const std::size_t n = i - digits_begin;
  if (n > 9) {
    value = -1;
  } else {
    value = 0;
    for (std::size_t k = digits_begin; k < i; ++k) value = value * 10 + (text[k] - '0');
  }
  pos = i + 1;
  return true;
}

std::optional<std::string> phrase_before(std::string_view text, std::size_t seg_begin, std::size_t seg_end) {
  std::string_view seg = text.substr(seg_begin, seg_end - seg_begin);
  const auto cut = seg.find_last_of("{}\n");
  if (cut != std::string_view::npos) seg.remove_prefix(cut + 1);
  while (!seg.empty() && is_space(seg.front())) seg.remove_prefix(1);
  while (!seg.empty() && is_space(seg.back())) seg.remove_suffix(1);
  if (seg.empty()) return std::nullopt;
  return std::string(seg);
}

}  // namespace

bool NormalizedBox::valid() const {
  auto in_range = [](int v) { return v >= 0 && v <= kGridMax; };
  return in_range(x_left) && in_range(y_top) && in_range(x_right) && in_range(y_bottom) &&
         x_left <= x_right && y_top <= y_bottom;
}

void validate_pixel_box(const PixelBox& box, const ImageSize& size) {
  if (size.width < 1 || size.height < 1) {
    throw InvalidBoxError("image size must be positive");
  }
  if (!std::isfinite(box.x_left) || !std::isfinite(box.y_top) || !std::isfinite(box.x_right) ||
      !std::isfinite(box.y_bottom)) {
    throw InvalidBoxError("box coordinates must be finite");
  }
  if (box.x_left < 0 || box.y_top < 0) {
    throw OutOfBoundsError("box has negative coordinates");
  }
  if (!(box.x_left < box.x_right) || !(box.y_top < box.y_bottom)) {
    throw InvalidBoxError("box is degenerate or inverted");
  }
  if (box.x_right > size.width || box.y_bottom > size.height) {
    std::ostringstream msg;
    msg << "box (" << box.x_left << "," << box.y_top << "," << box.x_right << "," << box.y_bottom
        << ") exceeds image " << size.width << "x" << size.height;
    throw OutOfBoundsError(msg.str());
  }
}

NormalizedBox normalize_box(const PixelBox& box, const ImageSize& size) {
  validate_pixel_box(box, size);
  return {to_grid(box.x_left, size.width), to_grid(box.y_top, size.height),
          to_grid(box.x_right, size.width), to_grid(box.y_bottom, size.height)};
}

PixelBox denormalize_box(const NormalizedBox& box, const ImageSize& size) {
  if (size.width < 1 || size.height < 1) throw InvalidBoxError("image size must be positive");
  if (!box.valid()) throw InvalidBoxError("normalized box out of [0,100] or inverted");
  if (box.x_left == box.x_right || box.y_top == box.y_bottom) {
    throw InvalidBoxError("normalized box collapses to zero area");
  }
  auto px = [](int v, int extent) { return static_cast<double>(v) * extent / kGridMax; };
  return {px(box.x_left, size.width), px(box.y_top, size.height), px(box.x_right, size.width),
          px(box.y_bottom, size.height)};
}

std::string serialize_box(const NormalizedBox& box) {
  std::string out;
  out.reserve(20);
  out += "{<";
  out += std::to_string(box.x_left);
  out += "><";
  out += std::to_string(box.y_top);
  out += "><";
  out += std::to_string(box.x_right);
  out += "><";
  out += std::to_string(box.y_bottom);
  out += ">}";
  return out;
}

ParsedSpans parse_spans(std::string_view text) {
  ParsedSpans result;
  std::size_t segment_begin = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t open = text.find('{', pos);
    if (open == std::string_view::npos) break;
    std::size_t cursor = open + 1;
    long coords[4];
    bool ok = true;
    for (long& c : coords) {
      if (!match_coord(text, cursor, c)) {
        ok = false;
        break;
      }
    }
    if (!ok || cursor >= text.size() || text[cursor] != '}') {
      pos = open + 1;
      continue;
    }
    const std::size_t close = cursor + 1;
    const NormalizedBox box{static_cast<int>(std::clamp(coords[0], -1L, 1000L)),
                            static_cast<int>(std::clamp(coords[1], -1L, 1000L)),
                            static_cast<int>(std::clamp(coords[2], -1L, 1000L)),
                            static_cast<int>(std::clamp(coords[3], -1L, 1000L))};
    if (box.valid()) {
      result.spans.push_back({phrase_before(text, segment_begin, open), box, {open, close}});
    } else {
      ++result.malformed_count;
    }
    segment_begin = close;
    pos = close;
  }
  return result;
}

}  // namespace medvl
