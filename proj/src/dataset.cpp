#include "layoutattn/dataset.hpp"

#include "layoutattn/errors.hpp"
#include "layoutattn/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace layoutattn {

using nlohmann::json;

std::vector<CellCount> default_cell_counts() {
  return {{2, 1, 200}, {3, 1, 50}, {3, 2, 50}, {4, 2, 50}, {4, 3, 50}, {5, 3, 50}, {5, 4, 50}};
}

std::vector<CellCount> parse_cell_counts(const std::string& spec) {
  std::vector<CellCount> cells;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    CellCount cell;
    char colon = 0;
    char eq = 0;
    std::stringstream ps(part);
    if (!(ps >> cell.objects >> colon >> cell.relations >> eq >> cell.count) || colon != ':' ||
        eq != '=' || !ps.eof()) {
      throw ConfigError("bad cell spec '" + part + "' (expected N:M=COUNT)");
    }
    cells.push_back(cell);
  }
  if (cells.empty()) throw ConfigError("empty cell spec");
  return cells;
}

namespace {

void validate_cell(const CellCount& cell) {
  if (cell.objects < 2 || cell.objects > 5) {
    throw ConfigError("object count must be in [2, 5], got " + std::to_string(cell.objects));
  }
  if (cell.relations < 1 || cell.relations > cell.objects - 1) {
    throw ConfigError("relation count must be in [1, N-1] for N=" + std::to_string(cell.objects) +
                      ", got " + std::to_string(cell.relations));
  }
  if (cell.count < 0) throw ConfigError("cell count must be non-negative");
}

std::string noun_phrase(const ObjectSpec& obj, bool introduced) {
  const auto& vocab = Vocabulary::instance();
  if (introduced) return "the " + vocab.noun(obj.noun);
  std::string np = "a ";
  if (obj.color) np += vocab.color(*obj.color) + " ";
  return np + vocab.noun(obj.noun);
}

// Renders structure into DSL text, introducing each object exactly once.
std::string render_text(const std::vector<ObjectSpec>& objects,
                        const std::vector<RelationSpec>& relations, Rng& rng) {
  static constexpr std::array<const char*, 4> kConnectives = {" and ", ", ", ", and ", ". "};
  std::vector<bool> introduced(objects.size() + 1, false);
  std::vector<std::string> clauses;
  auto np = [&](int id) {
    const auto idx = static_cast<std::size_t>(id);
    std::string s = noun_phrase(objects[idx - 1], introduced[idx]);
    introduced[idx] = true;
    return s;
  };
  for (const auto& r : relations) {
    const int pattern = static_cast<int>(rng.below(kPatternsPerRelation));
    // The inverted pattern mentions the object before the subject.
    std::string subject_np;
    std::string object_np;
    if (pattern == 4) {
      object_np = np(r.object_id);
      subject_np = np(r.subject_id);
    } else {
      subject_np = np(r.subject_id);
      object_np = np(r.object_id);
    }
    clauses.push_back(render_relation_clause(r.kind, pattern, subject_np, object_np));
  }
  for (const auto& obj : objects) {
    if (introduced[static_cast<std::size_t>(obj.id)]) continue;
    std::string np_text = np(obj.id);
    clauses.push_back(rng.bernoulli(0.5) ? "there is " + np_text : np_text);
  }
  std::string text = clauses.front();
  for (std::size_t i = 1; i < clauses.size(); ++i) {
    text += kConnectives[rng.below(kConnectives.size())];
    text += clauses[i];
  }
  return text + ".";
}

}  // namespace

namespace {

std::vector<Point2> sample_ordered_centers(int num_objects, std::span<const RelationSpec> relations,
                                           double margin, double lo, double hi, Rng& rng) {
  const auto n = static_cast<std::size_t>(num_objects);
  std::vector<Point2> centers(n);
  for (int axis = 0; axis < 2; ++axis) {
    // edge u -> v means coord(u) + margin <= coord(v)
    std::vector<std::vector<std::size_t>> succ(n), pred(n);
    for (const auto& r : relations) {
      const bool horizontal = r.kind == RelationKind::LeftOf || r.kind == RelationKind::RightOf;
      if (horizontal != (axis == 0)) continue;
      const bool forward = r.kind == RelationKind::LeftOf || r.kind == RelationKind::Above;
      const auto s = static_cast<std::size_t>(r.subject_id - 1);
      const auto o = static_cast<std::size_t>(r.object_id - 1);
      const std::size_t from = forward ? s : o;
      const std::size_t to = forward ? o : s;
      succ[from].push_back(to);
      pred[to].push_back(from);
    }
    // Kahn topological order; ties broken by index for determinism.
    std::vector<int> indeg(n);
    for (std::size_t v = 0; v < n; ++v) indeg[v] = static_cast<int>(pred[v].size());
    std::vector<std::size_t> order;
    std::vector<bool> done(n, false);
    while (order.size() < n) {
      bool progressed = false;
      for (std::size_t v = 0; v < n; ++v) {
        if (!done[v] && indeg[v] == 0) {
          done[v] = true;
          order.push_back(v);
          for (auto w : succ[v]) --indeg[w];
          progressed = true;
          break;
        }
      }
      if (!progressed) throw ContradictionError("relations contain a cycle");
    }
    // longest path (in edges) from each node to a sink
    std::vector<int> tail(n, 0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      for (auto w : succ[*it]) tail[*it] = std::max(tail[*it], tail[w] + 1);
    }
    std::vector<double> coord(n, 0.0);
    for (auto v : order) {
      double lower = lo;
      for (auto p : pred[v]) lower = std::max(lower, coord[p] + margin);
      const double upper = hi - margin * tail[v];
      if (upper < lower - 1e-12) throw ConfigError("relation chain too long for layout margin");
      coord[v] = rng.uniform(lower, std::max(lower, upper));
    }
    for (std::size_t v = 0; v < n; ++v) (axis == 0 ? centers[v].x : centers[v].y) = coord[v];
  }
  return centers;
}

bool well_separated(const std::vector<Point2>& centers, double min_separation) {
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      if (std::hypot(centers[i].x - centers[j].x, centers[i].y - centers[j].y) < min_separation) return false;
    }
  }
  return true;
}

}  // namespace

std::vector<Point2> sample_consistent_layout(int num_objects, std::span<const RelationSpec> relations,
                                             double margin, double lo, double hi,
                                             std::uint64_t seed, double min_separation) {
  Rng rng(seed);
  constexpr int kMaxAttempts = 10000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto centers = sample_ordered_centers(num_objects, relations, margin, lo, hi, rng);
    if (well_separated(centers, min_separation)) return centers;
  }
  throw ConfigError("could not place centers with the requested separation");
}

DatasetItem sample_description(int objects, int relations, const DatasetConfig& config,
                               std::uint64_t seed) {
  validate_cell({objects, relations, 0});
  Rng rng(seed);

  // nouns without replacement from a single super-category
  const int category = static_cast<int>(rng.below(kNumSuperCategories));
  std::vector<NounId> pool(kNounsPerCategory);
  std::iota(pool.begin(), pool.end(), category * kNounsPerCategory);
  rng.shuffle(pool);
  if (objects > kNounsPerCategory) {
    // A category holds only four nouns; five-object scenes borrow the rest
    // from one other category.
    int other = static_cast<int>(rng.below(kNumSuperCategories - 1));
    if (other >= category) ++other;
    std::vector<NounId> extra(kNounsPerCategory);
    std::iota(extra.begin(), extra.end(), other * kNounsPerCategory);
    rng.shuffle(extra);
    pool.insert(pool.end(), extra.begin(), extra.end());
  }
  std::vector<ObjectSpec> objs;
  for (int i = 0; i < objects; ++i) {
    ObjectSpec o;
    o.id = i + 1;
    o.noun = pool[static_cast<std::size_t>(i)];
    if (rng.bernoulli(config.color_probability)) {
      o.color = static_cast<ColorId>(rng.below(kNumColors));
    }
    objs.push_back(o);
  }

  std::vector<std::pair<int, int>> pairs;
  for (int i = 1; i <= objects; ++i) {
    for (int j = i + 1; j <= objects; ++j) pairs.emplace_back(i, j);
  }
  std::vector<RelationSpec> rels;
  do {
    rng.shuffle(pairs);
    rels.clear();
    for (int k = 0; k < relations; ++k) {
      auto [a, b] = pairs[static_cast<std::size_t>(k)];
      if (rng.bernoulli(0.5)) std::swap(a, b);
      rels.push_back({a, b, static_cast<RelationKind>(rng.below(4))});
    }
  } while (!check_contradictions(rels));

  const std::string text = render_text(objs, rels, rng);
  DatasetItem item;
  // Canonical form: ids follow first mention in the rendered text.
  item.desc = parse_description(text);

  // map internal id -> canonical id via the (unique) noun
  std::vector<int> canon(static_cast<std::size_t>(objects) + 1, 0);
  for (const auto& o : objs) {
    for (const auto& c : item.desc.objects) {
      if (c.noun == o.noun) canon[static_cast<std::size_t>(o.id)] = c.id;
    }
  }
  if (config.emit_layout) {
    const auto centers = sample_consistent_layout(objects, rels, config.layout_margin,
                                                  config.layout_lo, config.layout_hi,
                                                  derive_seed(seed, 0x1a4u), config.min_separation);
    std::vector<Point2> layout(static_cast<std::size_t>(objects));
    for (const auto& o : objs) {
      layout[static_cast<std::size_t>(canon[static_cast<std::size_t>(o.id)] - 1)] =
          centers[static_cast<std::size_t>(o.id - 1)];
    }
    item.layout = std::move(layout);
  }
  return item;
}

std::vector<DatasetItem> generate_dataset(const DatasetConfig& config, std::uint64_t seed) {
  for (const auto& cell : config.cells) validate_cell(cell);
  std::vector<DatasetItem> out;
  for (std::size_t c = 0; c < config.cells.size(); ++c) {
    const auto& cell = config.cells[c];
    const std::uint64_t cell_seed =
        derive_seed(seed, static_cast<std::uint64_t>(cell.objects * 16 + cell.relations) * 1000 + c);
    for (int k = 0; k < cell.count; ++k) {
      out.push_back(sample_description(cell.objects, cell.relations, config,
                                       derive_seed(cell_seed, static_cast<std::uint64_t>(k))));
    }
  }
  return out;
}

DatasetItem augment_item(const DatasetItem& item, std::uint64_t seed) {
  Rng rng(seed);
  const int n = item.desc.num_objects();
  std::vector<NounId> nouns(kNumNouns);
  std::iota(nouns.begin(), nouns.end(), 0);
  rng.shuffle(nouns);
  std::vector<ObjectSpec> objs;
  for (const auto& o : item.desc.objects) {
    ObjectSpec r{o.id, nouns[static_cast<std::size_t>(o.id - 1)], std::nullopt};
    if (o.color) r.color = static_cast<ColorId>(rng.below(kNumColors));
    objs.push_back(r);
  }
  const bool flip_x = rng.bernoulli(0.5);
  const bool flip_y = rng.bernoulli(0.5);
  std::vector<RelationSpec> rels = item.desc.relations;
  for (auto& r : rels) {
    if (flip_x && (r.kind == RelationKind::LeftOf || r.kind == RelationKind::RightOf)) {
      r.kind = r.kind == RelationKind::LeftOf ? RelationKind::RightOf : RelationKind::LeftOf;
    }
    if (flip_y && (r.kind == RelationKind::Above || r.kind == RelationKind::Below)) {
      r.kind = r.kind == RelationKind::Above ? RelationKind::Below : RelationKind::Above;
    }
  }
  rng.shuffle(rels);

  DatasetItem out;
  out.desc = parse_description(render_text(objs, rels, rng));
  if (item.layout) {
    std::vector<Point2> layout(static_cast<std::size_t>(n));
    for (const auto& o : objs) {
      for (const auto& c : out.desc.objects) {
        if (c.noun != o.noun) continue;
        Point2 p = (*item.layout)[static_cast<std::size_t>(o.id - 1)];
        if (flip_x) p.x = 1.0 - p.x;
        if (flip_y) p.y = 1.0 - p.y;
        layout[static_cast<std::size_t>(c.id - 1)] = p;
      }
    }
    out.layout = std::move(layout);
  }
  return out;
}

std::string item_to_json_line(const DatasetItem& item) {
  const auto& vocab = Vocabulary::instance();
  json j;
  j["text"] = item.desc.global_text;
  json objs = json::array();
  for (const auto& o : item.desc.objects) {
    objs.push_back({{"id", o.id},
                    {"noun", vocab.noun(o.noun)},
                    {"color", o.color ? json(vocab.color(*o.color)) : json(nullptr)}});
  }
  j["objects"] = std::move(objs);
  json rels = json::array();
  for (const auto& r : item.desc.relations) {
    rels.push_back({{"sub", r.subject_id}, {"obj", r.object_id}, {"kind", to_string(r.kind)}});
  }
  j["relations"] = std::move(rels);
  if (item.layout) {
    json lay = json::array();
    for (std::size_t i = 0; i < item.layout->size(); ++i) {
      lay.push_back({{"id", item.desc.objects[i].id},
                     {"cx", (*item.layout)[i].x},
                     {"cy", (*item.layout)[i].y}});
    }
    j["layout"] = std::move(lay);
  } else {
    j["layout"] = nullptr;
  }
  return j.dump();
}

namespace {

DatasetItem item_from_json(const json& j) {
  DatasetItem item;
  item.desc = parse_description(j.at("text").get<std::string>());
  const auto& vocab = Vocabulary::instance();
  const auto& objs = j.at("objects");
  if (objs.size() != item.desc.objects.size()) {
    throw ConfigError("dataset line objects disagree with its text");
  }
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const auto& o = item.desc.objects[i];
    const bool no_color = !objs[i].contains("color") || objs[i].at("color").is_null();
    const bool color_ok = no_color ? !o.color.has_value()
                                   : (o.color && vocab.color(*o.color) == objs[i].at("color").get<std::string>());
    if (objs[i].at("id").get<int>() != o.id || vocab.noun(o.noun) != objs[i].at("noun").get<std::string>() ||
        !color_ok) {
      throw ConfigError("dataset line objects disagree with its text");
    }
  }
  const auto& rels = j.at("relations");
  if (rels.size() != item.desc.relations.size()) {
    throw ConfigError("dataset line relations disagree with its text");
  }
  for (std::size_t i = 0; i < rels.size(); ++i) {
    const RelationSpec r{rels[i].at("sub").get<int>(), rels[i].at("obj").get<int>(),
                         relation_kind_from_string(rels[i].at("kind").get<std::string>())};
    if (!(r == item.desc.relations[i])) throw ConfigError("dataset line relations disagree with its text");
  }
  if (j.contains("layout") && !j.at("layout").is_null()) {
    std::vector<Point2> layout(item.desc.objects.size());
    std::vector<bool> seen(layout.size(), false);
    for (const auto& entry : j.at("layout")) {
      const int id = entry.at("id").get<int>();
      if (id < 1 || id > static_cast<int>(layout.size())) throw ConfigError("layout id out of range");
      layout[static_cast<std::size_t>(id - 1)] = {entry.at("cx").get<double>(), entry.at("cy").get<double>()};
      seen[static_cast<std::size_t>(id - 1)] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw ConfigError("layout misses an object");
    }
    item.layout = std::move(layout);
  }
  return item;
}

}  // namespace

DatasetItem item_from_json_line(const std::string& line) {
  try {
    return item_from_json(json::parse(line));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad dataset line: ") + e.what());
  }
}

void write_dataset_jsonl(std::ostream& out, const std::vector<DatasetItem>& items) {
  for (const auto& item : items) out << item_to_json_line(item) << '\n';
}

std::vector<DatasetItem> read_dataset_jsonl(std::istream& in) {
  std::vector<DatasetItem> items;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    items.push_back(item_from_json_line(line));
  }
  return items;
}

}  // namespace layoutattn
