#include "medvl/vision_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "medvl/errors.hpp"

namespace medvl {

ImageTensor preprocess(const RgbImage& image, int target_side, const ChannelStats& stats) {
  if (target_side < 1) throw ConfigError("target side must be positive");
  if (image.width < 1 || image.height < 1) throw DecodeError("empty image");
  ImageTensor out;
  out.side = target_side;
  out.values.resize(static_cast<std::size_t>(target_side) * target_side * 3);
  const double sx = static_cast<double>(image.width) / target_side;
  const double sy = static_cast<double>(image.height) / target_side;
  for (int y = 0; y < target_side; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_side; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c);
        const double bottom = (1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c);
        const double v = ((1 - wy) * top + wy * bottom) / 255.0;
        out.values[(static_cast<std::size_t>(y) * target_side + x) * 3 + c] = (v - stats.mean[c]) / stats.stddev[c];
      }
    }
  }
  return out;
}

ImageTensor preprocess(std::span<const std::uint8_t> bytes, int target_side, const ChannelStats& stats) {
  return preprocess(decode_image(bytes), target_side, stats);
}

void EncoderConfig::validate() const {
  if (patch_size < 1) throw ConfigError("encoder patch_size must be >= 1");
  if (image_side < patch_size || image_side % patch_size != 0) {
    throw ConfigError("encoder image_side must be a positive multiple of patch_size");
  }
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
    throw ConfigError("encoder embed_dim must be divisible by heads");
  }
  if (depth < 0) throw ConfigError("encoder depth must be >= 0");
  if (native_grid < 2) throw ConfigError("encoder native_grid must be >= 2");
}

Matrix interpolate_positional_encoding(const Matrix& table, int native_grid, int target_grid) {
  if (native_grid < 2) throw ConfigError("native grid must be >= 2");
  if (target_grid < 1) throw ConfigError("target grid must be >= 1");
  if (table.rows() != static_cast<Eigen::Index>(native_grid) * native_grid) {
    throw ShapeError("positional table does not have native_grid^2 rows");
  }
  if (target_grid == native_grid) return table;
  auto source_coord = [&](int i) {
    if (target_grid == 1) return (native_grid - 1) / 2.0;
    return static_cast<double>(i) * (native_grid - 1) / (target_grid - 1);
  };
  Matrix out(static_cast<Eigen::Index>(target_grid) * target_grid, table.cols());
  for (int i = 0; i < target_grid; ++i) {
    const double u = source_coord(i);
    const int r0 = std::min(static_cast<int>(std::floor(u)), native_grid - 1);
    const int r1 = std::min(r0 + 1, native_grid - 1);
    const double wr = u - r0;
    for (int j = 0; j < target_grid; ++j) {
      const double v = source_coord(j);
      const int c0 = std::min(static_cast<int>(std::floor(v)), native_grid - 1);
      const int c1 = std::min(c0 + 1, native_grid - 1);
      const double wc = v - c0;
      auto row = [&](int r, int c) { return table.row(static_cast<Eigen::Index>(r) * native_grid + c); };
      out.row(static_cast<Eigen::Index>(i) * target_grid + j) =
          (1 - wr) * ((1 - wc) * row(r0, c0) + wc * row(r0, c1)) + wr * ((1 - wc) * row(r1, c0) + wc * row(r1, c1));
    }
  }
  return out;
}

VisionEncoder::VisionEncoder(const EncoderConfig& config, ParameterStore& store) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const int patch_dim = config_.patch_size * config_.patch_size * 3;
  const int d = config_.embed_dim;
  patch_weight_ = &store.add("encoder.patch_embed.weight", d, patch_dim, false);
  fill_normal(patch_weight_->value, 1.0 / std::sqrt(static_cast<double>(patch_dim)), rng);
  patch_bias_ = &store.add("encoder.patch_embed.bias", 1, d, false);
  pos_table_ = &store.add("encoder.pos_embed", static_cast<Eigen::Index>(config_.native_grid) * config_.native_grid,
                          d, false);
  fill_normal(pos_table_->value, 0.5, rng);
  for (int i = 0; i < config_.depth; ++i) {
    blocks_.push_back(make_block(store, "encoder." + std::to_string(i), d, 4 * d, false, rng));
  }
  final_gamma_ = &store.add("encoder.final_ln.gamma", 1, d, false);
  final_gamma_->value.setOnes();
  final_beta_ = &store.add("encoder.final_ln.beta", 1, d, false);
}

VisualTokens VisionEncoder::encode(const ImageTensor& image) const {
  const int p = config_.patch_size;
  if (image.side < p || image.side % p != 0) {
    throw ShapeError("image side " + std::to_string(image.side) + " is not divisible by patch size " +
                     std::to_string(p));
  }
  if (image.values.size() != static_cast<std::size_t>(image.side) * image.side * 3) {
    throw ShapeError("image tensor has wrong element count");
  }
  const int grid = image.side / p;
  Matrix patches(static_cast<Eigen::Index>(grid) * grid, p * p * 3);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const Eigen::Index row = static_cast<Eigen::Index>(gy) * grid + gx;
      Eigen::Index col = 0;
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          for (int c = 0; c < 3; ++c) patches(row, col++) = image.at(gx * p + px, gy * p + py, c);
        }
      }
    }
  }

  // Frozen forward on a private tape; nothing here can reach a training graph.
  Tape tape;
  Var x = add_row(tape, matmul_nt(tape, tape.constant(std::move(patches)), tape.leaf(*patch_weight_)),
                  tape.leaf(*patch_bias_));
  if (config_.depth > 0) {
    x = add(tape, x,
            tape.constant(interpolate_positional_encoding(pos_table_->value, config_.native_grid, grid)));
    for (const auto& block : blocks_) x = run_block(tape, x, block, config_.heads, false);
    x = layer_norm(tape, x, tape.leaf(*final_gamma_), tape.leaf(*final_beta_));
  }
  return {tape.value(x), grid};
}

}  // namespace medvl
