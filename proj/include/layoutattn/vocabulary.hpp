#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace layoutattn {

inline constexpr int kNumNouns = 24;
inline constexpr int kNumColors = 8;
inline constexpr int kNumSuperCategories = 6;
inline constexpr int kNounsPerCategory = 4;

using NounId = int;
using ColorId = int;

/// Closed vocabulary shared by the parser, the layout encoder and the toy
/// generator's text embedding.
class Vocabulary {
 public:
  static const Vocabulary& instance();

  [[nodiscard]] std::span<const std::string> tokens() const { return tokens_; }
  [[nodiscard]] int size() const { return static_cast<int>(tokens_.size()); }

  [[nodiscard]] std::optional<int> token_id(std::string_view tok) const;
  /// Throws VocabError for unknown tokens.
  [[nodiscard]] int require_token(std::string_view tok) const;
  [[nodiscard]] const std::string& token(int id) const { return tokens_.at(id); }

  [[nodiscard]] std::optional<NounId> noun_id(std::string_view word) const;
  [[nodiscard]] std::optional<ColorId> color_id(std::string_view word) const;
  [[nodiscard]] const std::string& noun(NounId id) const { return nouns_.at(id); }
  [[nodiscard]] const std::string& color(ColorId id) const { return colors_.at(id); }
  [[nodiscard]] int super_category(NounId id) const { return id / kNounsPerCategory; }
  [[nodiscard]] std::span<const std::string> nouns() const { return nouns_; }
  [[nodiscard]] std::span<const std::string> colors() const { return colors_; }

  /// Token ids of nouns and colors inside tokens().
  [[nodiscard]] int noun_token(NounId id) const { return noun_token_base_ + id; }
  [[nodiscard]] int color_token(ColorId id) const { return color_token_base_ + id; }
  [[nodiscard]] bool is_noun_token(int tok) const;
  [[nodiscard]] bool is_color_token(int tok) const;

  /// FNV-1a over the token list; stored in checkpoints.
  [[nodiscard]] std::uint64_t hash() const;

  /// Palette RGB for rendering.
  [[nodiscard]] std::array<std::uint8_t, 3> color_rgb(ColorId id) const;

 private:
  Vocabulary();

  std::vector<std::string> nouns_;
  std::vector<std::string> colors_;
  std::vector<std::string> tokens_;
  int noun_token_base_ = 0;
  int color_token_base_ = 0;
};

/// Lowercases and splits on whitespace; ',' and '.' become standalone tokens.
struct Token {
  std::string text;
  std::size_t offset = 0;
};
std::vector<Token> tokenize(std::string_view text);

/// tokenize() followed by vocabulary lookup (VocabError on unknown words).
std::vector<int> encode_tokens(std::string_view text);

}  // namespace layoutattn
