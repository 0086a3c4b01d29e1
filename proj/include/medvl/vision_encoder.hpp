#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "medvl/image_io.hpp"
#include "medvl/parameters.hpp"
#include "medvl/transformer.hpp"

namespace medvl {

/// Square, channel-normalised image. `values` is HWC.
struct ImageTensor {
  int side = 0;
  std::vector<double> values;

  double at(int x, int y, int c) const { return values[(static_cast<std::size_t>(y) * side + x) * 3 + c]; }
};

struct ChannelStats {
  std::array<double, 3> mean{0.48145466, 0.4578275, 0.40821073};
  std::array<double, 3> stddev{0.26862954, 0.26130258, 0.27577711};
};

/// Bilinear resize (half-pixel centres) to side x side, then per-channel
/// (v/255 - mean) / std. No augmentation.
ImageTensor preprocess(const RgbImage& image, int target_side, const ChannelStats& stats = {});
/// Decodes first; throws DecodeError on bad bytes.
ImageTensor preprocess(std::span<const std::uint8_t> bytes, int target_side, const ChannelStats& stats = {});

struct EncoderConfig {
  int image_side = 64;
  int patch_size = 8;
  int embed_dim = 32;
  int depth = 1;
  int heads = 2;
  int native_grid = 4;  // tokens per side of the stored positional table
  std::uint64_t seed = 1234;

  int grid_side() const { return image_side / patch_size; }
  int token_count() const { return grid_side() * grid_side(); }
  /// Throws ConfigError.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Row-major (left-to-right, top-to-bottom) grid of token vectors.
struct VisualTokens {
  Matrix tokens;  // (grid_side^2 x embed_dim)
  int grid_side = 0;
};

/// Bilinear, corner-aligned resampling of a (native_grid^2 x d) positional
/// table to (target_grid^2 x d). Throws ConfigError for target_grid < 1 or
/// native_grid < 2.
Matrix interpolate_positional_encoding(const Matrix& table, int native_grid, int target_grid);

/// Patch embedding + interpolated positional table + `depth` bidirectional
/// transformer blocks + final LayerNorm. With depth == 0 the encoder is the
/// bare patch embedding (no positional term), which makes the token layout
/// directly observable. Weights are registered frozen under `encoder.*` and
/// are never placed on a training tape.
class VisionEncoder {
 public:
  VisionEncoder(const EncoderConfig& config, ParameterStore& store);

  const EncoderConfig& config() const { return config_; }

  /// Any side divisible by the patch size is accepted; the positional table
  /// is resampled to the resulting grid. Throws ShapeError otherwise.
  VisualTokens encode(const ImageTensor& image) const;

 private:
  EncoderConfig config_;
  Parameter* patch_weight_ = nullptr;
  Parameter* patch_bias_ = nullptr;
  Parameter* pos_table_ = nullptr;
  std::vector<TransformerBlock> blocks_;
  Parameter* final_gamma_ = nullptr;
  Parameter* final_beta_ = nullptr;
};

}  // namespace medvl
