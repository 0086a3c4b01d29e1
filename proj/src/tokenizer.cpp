#include "medvl/tokenizer.hpp"

#include "medvl/errors.hpp"

namespace medvl {

bool vocab::is_special(TokenId id) { return id >= kImgOpen && id < kSize; }

std::vector<TokenId> tokenize(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    TokenId match = -1;
    std::size_t match_len = 0;
    if (text[i] == '<' || text[i] == '[') {
      for (const auto& s : vocab::kSpecials) {
        if (!s.text.empty() && s.text.size() > match_len && text.substr(i, s.text.size()) == s.text) {
          match = s.id;
          match_len = s.text.size();
        }
      }
    }
    if (match >= 0) {
      out.push_back(match);
      i += match_len;
    } else {
      out.push_back(static_cast<unsigned char>(text[i]));
      ++i;
    }
  }
  return out;
}

std::string detokenize(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId id : tokens) {
    if (id >= 0 && id < 256) {
      out += static_cast<char>(id);
    } else if (vocab::is_special(id)) {
      out += vocab::kSpecials[static_cast<std::size_t>(id - vocab::kImgOpen)].text;
    } else {
      throw ConfigError("token id " + std::to_string(id) + " outside vocabulary");
    }
  }
  return out;
}

}  // namespace medvl
