#include "layoutattn/vocabulary.hpp"

#include "layoutattn/errors.hpp"

#include <algorithm>
#include <cctype>

namespace layoutattn {

namespace {

// Six super-categories of four nouns each.
constexpr std::array<const char*, kNumNouns> kNouns = {
    "car",   "bus",    "truck",  "bicycle",   // vehicle
    "dog",   "cat",    "horse",  "sheep",     // animal
    "chair", "couch",  "bed",    "table",     // furniture
    "cup",   "bowl",   "bottle", "knife",     // kitchen
    "pizza", "cake",   "sandwich", "banana",  // food
    "bench", "mailbox", "clock", "kite",      // outdoor
};

constexpr std::array<const char*, kNumColors> kColors = {
    "red", "black", "blue", "green", "yellow", "white", "brown", "pink"};

constexpr std::array<std::array<std::uint8_t, 3>, kNumColors> kRgb = {{
    {220, 30, 30},   {20, 20, 20},   {40, 70, 220},  {40, 170, 60},
    {235, 215, 40},  {245, 245, 245}, {130, 80, 40}, {240, 130, 190},
}};

constexpr std::array<const char*, 25> kFunctionWords = {
    "a",    "an",   "the",   "photo", "of",    "is",    "to",
    "left", "right", "above", "below", "on",   "side",  "sits",
    "there", "and", "under", "over",  "beneath", "top", "its",
    "with", ",",    ".",     ";"};

}  // namespace

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary vocab;
  return vocab;
}

Vocabulary::Vocabulary() {
  for (const char* w : kFunctionWords) tokens_.emplace_back(w);
  noun_token_base_ = static_cast<int>(tokens_.size());
  for (const char* n : kNouns) {
    nouns_.emplace_back(n);
    tokens_.emplace_back(n);
  }
  color_token_base_ = static_cast<int>(tokens_.size());
  for (const char* c : kColors) {
    colors_.emplace_back(c);
    tokens_.emplace_back(c);
  }
}

std::optional<int> Vocabulary::token_id(std::string_view tok) const {
  auto it = std::find(tokens_.begin(), tokens_.end(), tok);
  if (it == tokens_.end()) return std::nullopt;
  return static_cast<int>(it - tokens_.begin());
}

int Vocabulary::require_token(std::string_view tok) const {
  auto id = token_id(tok);
  if (!id) throw VocabError("unknown token '" + std::string(tok) + "'");
  return *id;
}

std::optional<NounId> Vocabulary::noun_id(std::string_view word) const {
  auto it = std::find(nouns_.begin(), nouns_.end(), word);
  if (it == nouns_.end()) return std::nullopt;
  return static_cast<NounId>(it - nouns_.begin());
}

std::optional<ColorId> Vocabulary::color_id(std::string_view word) const {
  auto it = std::find(colors_.begin(), colors_.end(), word);
  if (it == colors_.end()) return std::nullopt;
  return static_cast<ColorId>(it - colors_.begin());
}

bool Vocabulary::is_noun_token(int tok) const {
  return tok >= noun_token_base_ && tok < noun_token_base_ + kNumNouns;
}

bool Vocabulary::is_color_token(int tok) const {
  return tok >= color_token_base_ && tok < color_token_base_ + kNumColors;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::array<std::uint8_t, 3> Vocabulary::color_rgb(ColorId id) const {
  return kRgb.at(static_cast<std::size_t>(id));
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (c == ',' || c == '.' || c == ';') {
      out.push_back({std::string(1, static_cast<char>(c)), i});
      ++i;
      continue;
    }
    const std::size_t start = i;
    std::string word;
    while (i < text.size()) {
      const unsigned char d = static_cast<unsigned char>(text[i]);
      if (std::isspace(d) || d == ',' || d == '.' || d == ';') break;
      word.push_back(static_cast<char>(std::tolower(d)));
      ++i;
    }
    out.push_back({std::move(word), start});
  }
  return out;
}

std::vector<int> encode_tokens(std::string_view text) {
  const auto& vocab = Vocabulary::instance();
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(vocab.require_token(t.text));
  return ids;
}

}  // namespace layoutattn
