#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace medvl {

using TokenId = int;

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by the special
/// tokens below. Special tokens are atomic entries and never come out of
/// byte decomposition.
namespace vocab {

inline constexpr TokenId kImgOpen = 256;
inline constexpr TokenId kImgClose = 257;
inline constexpr TokenId kImageFeature = 258;
inline constexpr TokenId kInstOpen = 259;
inline constexpr TokenId kInstClose = 260;
inline constexpr TokenId kBos = 261;
inline constexpr TokenId kEos = 262;
inline constexpr TokenId kPad = 263;
inline constexpr int kSize = 264;

struct SpecialToken {
  TokenId id;
  std::string_view name;  // stable identifier used in checkpoints
  std::string_view text;  // surface form; empty for control tokens
};

inline constexpr std::array<SpecialToken, 8> kSpecials = {{
    {kImgOpen, "<Img>", "<Img>"},
    {kImgClose, "</Img>", "</Img>"},
    {kImageFeature, "<ImageFeature>", "<ImageFeature>"},
    {kInstOpen, "[INST]", "[INST]"},
    {kInstClose, "[/INST]", "[/INST]"},
    {kBos, "BOS", ""},
    {kEos, "EOS", ""},
    {kPad, "PAD", ""},
}};

bool is_special(TokenId id);

}  // namespace vocab

/// Surface-form special tokens are matched greedily (longest first) at each
/// position before falling back to single bytes.
std::vector<TokenId> tokenize(std::string_view text);

/// Control tokens (BOS, EOS, PAD) render as nothing. Throws ConfigError on
/// ids outside the vocabulary.
std::string detokenize(std::span<const TokenId> tokens);

}  // namespace medvl
