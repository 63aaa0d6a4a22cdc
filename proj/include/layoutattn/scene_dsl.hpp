#pragma once

#include "layoutattn/common.hpp"
#include "layoutattn/vocabulary.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace layoutattn {

enum class RelationKind { LeftOf, RightOf, Above, Below };

const char* to_string(RelationKind kind);
/// Accepts "left_of", "right_of", "above", "below".
RelationKind relation_kind_from_string(std::string_view s);

struct ObjectSpec {
  int id = 0;  // 1-based, order of first mention
  NounId noun = 0;
  std::optional<ColorId> color;

  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

struct RelationSpec {
  int subject_id = 0;
  int object_id = 0;
  RelationKind kind = RelationKind::LeftOf;

  friend bool operator==(const RelationSpec&, const RelationSpec&) = default;
};

struct SceneDescription {
  std::string global_text;
  std::vector<ObjectSpec> objects;
  std::vector<RelationSpec> relations;
  std::vector<std::string> local_texts;
  /// Token index (in tokenize(global_text)) of each object's first-mention noun.
  std::vector<int> mention_tokens;

  [[nodiscard]] int num_objects() const { return static_cast<int>(objects.size()); }
  friend bool operator==(const SceneDescription&, const SceneDescription&) = default;
};

/// Parses a description written in the scene DSL (grammar in docs/grammar.md).
/// Throws ParseError (with byte offset) or ContradictionError.
SceneDescription parse_description(std::string_view text);

/// "A photo of a {color} {noun}" or "A photo of a {noun}".
std::string render_local_description(const ObjectSpec& obj);

/// True iff the horizontal and vertical order digraphs are both acyclic.
/// Self-relations count as cycles.
bool check_contradictions(std::span<const RelationSpec> relations);

/// True iff centers satisfy the relation strictly (above means smaller y).
bool relation_holds(RelationKind kind, Point2 subject, Point2 object);

/// Sentence patterns available per relation kind when rendering text.
inline constexpr int kPatternsPerRelation = 5;

/// Renders one relation clause; subject/object noun phrases already formatted.
std::string render_relation_clause(RelationKind kind, int pattern, const std::string& subject_np,
                                   const std::string& object_np);

}  // namespace layoutattn
