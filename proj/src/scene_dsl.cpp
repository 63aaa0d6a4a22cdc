#include "layoutattn/scene_dsl.hpp"

#include "layoutattn/errors.hpp"

#include <array>
#include <functional>

namespace layoutattn {

const char* to_string(RelationKind kind) {
  switch (kind) {
    case RelationKind::LeftOf: return "left_of";
    case RelationKind::RightOf: return "right_of";
    case RelationKind::Above: return "above";
    case RelationKind::Below: return "below";
  }
  return "?";
}

RelationKind relation_kind_from_string(std::string_view s) {
  if (s == "left_of") return RelationKind::LeftOf;
  if (s == "right_of") return RelationKind::RightOf;
  if (s == "above") return RelationKind::Above;
  if (s == "below") return RelationKind::Below;
  throw ConfigError("unknown relation kind '" + std::string(s) + "'");
}

bool relation_holds(RelationKind kind, Point2 s, Point2 o) {
  switch (kind) {
    case RelationKind::LeftOf: return s.x < o.x;
    case RelationKind::RightOf: return s.x > o.x;
    case RelationKind::Above: return s.y < o.y;
    case RelationKind::Below: return s.y > o.y;
  }
  return false;
}

std::string render_local_description(const ObjectSpec& obj) {
  const auto& vocab = Vocabulary::instance();
  std::string out = "A photo of a ";
  if (obj.color) out += vocab.color(*obj.color) + " ";
  out += vocab.noun(obj.noun);
  return out;
}

namespace {

constexpr std::array<std::array<const char*, kPatternsPerRelation>, 4> kForms = {{
    {"to the left of", "left of", "on the left side of", "to the left of", "to the left of"},
    {"to the right of", "right of", "on the right side of", "to the right of", "to the right of"},
    {"above", "over", "on top of", "above", "above"},
    {"below", "under", "beneath", "below", "below"},
}};

}  // namespace

std::string render_relation_clause(RelationKind kind, int pattern, const std::string& subject_np,
                                   const std::string& object_np) {
  const auto k = static_cast<std::size_t>(kind);
  const auto p = static_cast<std::size_t>(pattern % kPatternsPerRelation);
  const std::string rel = kForms[k][p];
  switch (p) {
    case 3: return subject_np + " sits " + rel + " " + object_np;
    case 4: return rel + " " + object_np + " there is " + subject_np;
    default: return subject_np + " is " + rel + " " + object_np;
  }
}

bool check_contradictions(std::span<const RelationSpec> relations) {
  // Edges point from the "smaller coordinate" object to the "larger" one.
  int max_id = 0;
  for (const auto& r : relations) max_id = std::max({max_id, r.subject_id, r.object_id});
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(max_id) + 1);
    for (const auto& r : relations) {
      if (r.subject_id == r.object_id) return false;
      const bool horizontal = r.kind == RelationKind::LeftOf || r.kind == RelationKind::RightOf;
      if (horizontal != (axis == 0)) continue;
      const bool forward = r.kind == RelationKind::LeftOf || r.kind == RelationKind::Above;
      const int from = forward ? r.subject_id : r.object_id;
      const int to = forward ? r.object_id : r.subject_id;
      adj[static_cast<std::size_t>(from)].push_back(to);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    std::vector<int> state(adj.size(), 0);
    std::function<bool(int)> has_cycle = [&](int u) {
      state[static_cast<std::size_t>(u)] = 1;
      for (int v : adj[static_cast<std::size_t>(u)]) {
        const int s = state[static_cast<std::size_t>(v)];
        if (s == 1) return true;
        if (s == 0 && has_cycle(v)) return true;
      }
      state[static_cast<std::size_t>(u)] = 2;
      return false;
    };
    for (std::size_t u = 0; u < adj.size(); ++u) {
      if (state[u] == 0 && has_cycle(static_cast<int>(u))) return false;
    }
  }
  return true;
}

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text), tokens_(tokenize(text)) {}

  SceneDescription run() {
    if (tokens_.empty()) throw ParseError("empty description", 0);
    clause();
    while (!at_end()) {
      if (peek_is(".") && pos_ + 1 == tokens_.size()) {
        ++pos_;
        break;
      }
      connective();
      clause();
    }
    if (!check_contradictions(desc_.relations)) {
      throw ContradictionError("relations in '" + std::string(text_) + "' are contradictory");
    }
    desc_.global_text = std::string(text_);
    for (const auto& obj : desc_.objects) desc_.local_texts.push_back(render_local_description(obj));
    return std::move(desc_);
  }

 private:
  [[nodiscard]] bool at_end() const { return pos_ >= tokens_.size(); }

  [[nodiscard]] std::size_t offset() const {
    return at_end() ? text_.size() : tokens_[pos_].offset;
  }

  [[nodiscard]] bool peek_is(std::string_view s, std::size_t ahead = 0) const {
    return pos_ + ahead < tokens_.size() && tokens_[pos_ + ahead].text == s;
  }

  [[noreturn]] void fail(const std::string& what) const {
    const std::string got = at_end() ? "end of input" : "'" + tokens_[pos_].text + "'";
    throw ParseError(what + ", got " + got, offset());
  }

  void expect(std::string_view s) {
    if (!peek_is(s)) fail("expected '" + std::string(s) + "'");
    ++pos_;
  }

  void connective() {
    if (peek_is("and") || peek_is(";") || peek_is(".")) {
      ++pos_;
      return;
    }
    if (peek_is(",")) {
      ++pos_;
      if (peek_is("and")) ++pos_;
      return;
    }
    fail("expected a connective");
  }

  // Returns the 1-based object id the noun phrase refers to.
  int noun_phrase() {
    const auto& vocab = Vocabulary::instance();
    if (peek_is("the")) {
      ++pos_;
      if (at_end()) fail("expected a noun");
      auto noun = vocab.noun_id(tokens_[pos_].text);
      if (!noun) fail("expected a noun");
      for (const auto& obj : desc_.objects) {
        if (obj.noun == *noun) {
          ++pos_;
          return obj.id;
        }
      }
      fail("definite reference to an object that was not introduced");
    }
    if (!(peek_is("a") || peek_is("an"))) fail("expected a noun phrase");
    ++pos_;
    std::optional<ColorId> color;
    if (!at_end()) {
      if (auto c = vocab.color_id(tokens_[pos_].text)) {
        color = *c;
        ++pos_;
      }
    }
    if (at_end()) fail("expected a noun");
    auto noun = vocab.noun_id(tokens_[pos_].text);
    if (!noun) {
      if (!vocab.token_id(tokens_[pos_].text)) fail("unknown token");
      fail("expected a noun");
    }
    for (const auto& obj : desc_.objects) {
      if (obj.noun == *noun) fail("object already introduced; use 'the'");
    }
    ObjectSpec obj;
    obj.id = static_cast<int>(desc_.objects.size()) + 1;
    obj.noun = *noun;
    obj.color = color;
    desc_.objects.push_back(obj);
    desc_.mention_tokens.push_back(static_cast<int>(pos_));
    ++pos_;
    return obj.id;
  }

  [[nodiscard]] bool at_relation() const {
    return peek_is("to") || peek_is("left") || peek_is("right") || peek_is("above") ||
           peek_is("below") || peek_is("over") || peek_is("under") || peek_is("beneath") ||
           peek_is("on");
  }

  RelationKind relation() {
    if (peek_is("to")) {
      ++pos_;
      expect("the");
      const RelationKind k = side();
      expect("of");
      return k;
    }
    if (peek_is("left") || peek_is("right")) {
      const RelationKind k = side();
      expect("of");
      return k;
    }
    if (peek_is("on")) {
      ++pos_;
      if (peek_is("top")) {
        ++pos_;
        expect("of");
        return RelationKind::Above;
      }
      expect("the");
      const RelationKind k = side();
      expect("side");
      expect("of");
      return k;
    }
    if (peek_is("above") || peek_is("over")) {
      ++pos_;
      return RelationKind::Above;
    }
    if (peek_is("below") || peek_is("under") || peek_is("beneath")) {
      ++pos_;
      return RelationKind::Below;
    }
    fail("expected a spatial relation");
  }

  RelationKind side() {
    if (peek_is("left")) {
      ++pos_;
      return RelationKind::LeftOf;
    }
    if (peek_is("right")) {
      ++pos_;
      return RelationKind::RightOf;
    }
    fail("expected 'left' or 'right'");
  }

  void add_relation(int subject, int object, RelationKind kind) {
    desc_.relations.push_back({subject, object, kind});
  }

  void clause() {
    if (peek_is("there")) {
      ++pos_;
      expect("is");
      noun_phrase();
      return;
    }
    if (at_relation()) {
      // inverted: RELATION np "there" "is" np
      const RelationKind kind = relation();
      const int object = noun_phrase();
      expect("there");
      expect("is");
      const int subject = noun_phrase();
      add_relation(subject, object, kind);
      return;
    }
    const int subject = noun_phrase();
    if (peek_is("is") || peek_is("sits")) {
      ++pos_;
      const RelationKind kind = relation();
      const int object = noun_phrase();
      add_relation(subject, object, kind);
    }
  }

  std::string_view text_;
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  SceneDescription desc_;
};

}  // namespace

SceneDescription parse_description(std::string_view text) { return Parser(text).run(); }

}  // namespace layoutattn
