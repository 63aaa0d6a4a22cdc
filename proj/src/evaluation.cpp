#include "layoutattn/evaluation.hpp"

#include "layoutattn/errors.hpp"
#include "layoutattn/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <sstream>

namespace layoutattn {

using nlohmann::json;

std::vector<Detection> detect_objects(const ToyScene& scene, const DetectionConfig& config) {
  const int h = scene.grid.h, w = scene.grid.w;
  const auto pixels = static_cast<std::size_t>(h) * w;
  std::vector<bool> fg(pixels, false);
  for (std::size_t p = 0; p < pixels; ++p) fg[p] = scene.nouns.row(static_cast<Eigen::Index>(p)).maxCoeff() > config.threshold;
  std::vector<bool> seen(pixels, false);
  std::vector<Detection> out;
  std::vector<std::size_t> stack, members;
  for (std::size_t start = 0; start < pixels; ++start) {
    if (!fg[start] || seen[start]) continue;
    members.clear();
    stack.assign(1, start);
    seen[start] = true;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      members.push_back(p);
      const int r = static_cast<int>(p) / w, c = static_cast<int>(p) % w;
      const int nr[4] = {r - 1, r + 1, r, r};
      const int nc[4] = {c, c, c - 1, c + 1};
      for (int k = 0; k < 4; ++k) {
        if (nr[k] < 0 || nr[k] >= h || nc[k] < 0 || nc[k] >= w) continue;
        const auto q = static_cast<std::size_t>(nr[k]) * w + static_cast<std::size_t>(nc[k]);
        if (!seen[q] && fg[q]) {
          seen[q] = true;
          stack.push_back(q);
        }
      }
    }
    if (static_cast<int>(members.size()) < config.min_area) continue;
    Detection det;
    det.area = static_cast<int>(members.size());
    det.row_begin = h;
    det.col_begin = w;
    RowVector noun_sum = RowVector::Zero(kNumNouns);
    RowVector color_sum = RowVector::Zero(kNumColors);
    double sx = 0.0, sy = 0.0;
    for (auto p : members) {
      const int r = static_cast<int>(p) / w, c = static_cast<int>(p) % w;
      det.row_begin = std::min(det.row_begin, r);
      det.col_begin = std::min(det.col_begin, c);
      det.row_end = std::max(det.row_end, r + 1);
      det.col_end = std::max(det.col_end, c + 1);
      const Point2 pc = pixel_center(scene.grid, r, c);
      sx += pc.x;
      sy += pc.y;
      noun_sum += scene.nouns.row(static_cast<Eigen::Index>(p));
      color_sum += scene.colors.row(static_cast<Eigen::Index>(p));
    }
    Eigen::Index noun = 0, color = 0;
    noun_sum.maxCoeff(&noun);
    det.noun = static_cast<NounId>(noun);
    color_sum.maxCoeff(&color);
    det.color = static_cast<ColorId>(color);
    det.centroid = {sx / det.area, sy / det.area};
    out.push_back(det);
  }
  return out;
}

std::vector<std::optional<std::size_t>> match_objects(std::span<const Detection> detections,
                                                      const SceneDescription& desc) {
  // Area-descending order with a position tie-break keeps the result
  // independent of the order detections are listed in.
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& da = detections[a];
    const auto& db = detections[b];
    return std::tie(db.area, da.row_begin, da.col_begin, da.noun, da.color) <
           std::tie(da.area, db.row_begin, db.col_begin, db.noun, db.color);
  });
  std::vector<bool> used(detections.size(), false);
  std::vector<std::optional<std::size_t>> match(desc.objects.size());
  for (std::size_t i = 0; i < desc.objects.size(); ++i) {
    const auto& obj = desc.objects[i];
    for (auto k : order) {
      const auto& d = detections[k];
      if (used[k] || d.noun != obj.noun || (obj.color && d.color != *obj.color)) continue;
      used[k] = true;
      match[i] = k;
      break;
    }
  }
  return match;
}

double object_recall(std::span<const Detection> detections, const SceneDescription& desc) {
  if (desc.objects.empty()) return 0.0;
  const auto match = match_objects(detections, desc);
  const auto hits = std::count_if(match.begin(), match.end(), [](const auto& m) { return m.has_value(); });
  return static_cast<double>(hits) / static_cast<double>(desc.objects.size());
}

SprelCounts sprel_counts(std::span<const Detection> detections, const SceneDescription& desc) {
  const auto match = match_objects(detections, desc);
  SprelCounts counts;
  for (const auto& r : desc.relations) {
    const auto& ms = match[static_cast<std::size_t>(r.subject_id - 1)];
    const auto& mo = match[static_cast<std::size_t>(r.object_id - 1)];
    if (!ms || !mo) continue;
    const bool ok = relation_holds(r.kind, detections[*ms].centroid, detections[*mo].centroid);
    counts.correct += ok ? 1 : 0;
    ++counts.evaluable;
    auto& k = counts.by_kind[r.kind];
    k.first += ok ? 1 : 0;
    ++k.second;
  }
  return counts;
}

std::optional<double> sprel_precision(std::span<const Detection> detections, const SceneDescription& desc) {
  const auto c = sprel_counts(detections, desc);
  if (c.evaluable == 0) return std::nullopt;
  return static_cast<double>(c.correct) / c.evaluable;
}

ToyScene paint_scene(const SceneDescription& desc, std::span<const Point2> centers, double radius, GridSize grid) {
  if (centers.size() != desc.objects.size()) throw ShapeError("need one center per object");
  ToyScene scene = blank_scene(grid);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const auto& obj = desc.objects[i];
    for (int r = 0; r < grid.h; ++r) {
      for (int c = 0; c < grid.w; ++c) {
        const Point2 p = pixel_center(grid, r, c);
        const double dx = p.x - centers[i].x, dy = p.y - centers[i].y;
        if (dx * dx + dy * dy > radius * radius) continue;
        const Eigen::Index q = static_cast<Eigen::Index>(r) * grid.w + c;
        scene.nouns.row(q).setZero();
        scene.colors.row(q).setZero();
        scene.nouns(q, obj.noun) = 1.0;
        if (obj.color) scene.colors(q, *obj.color) = 1.0;
      }
    }
  }
  return scene;
}

const char* to_string(LayoutSource s) { return s == LayoutSource::Predicted ? "predicted" : "ground-truth"; }

const EvalRow* EvalReport::find(Variant v, LayoutSource s) const {
  for (const auto& r : rows) {
    if (r.variant == v && r.layout == s) return &r;
  }
  return nullptr;
}

namespace {

json rate_json(const Rate& r) {
  const auto v = r.value();
  return {{"value", v ? json(*v) : json(nullptr)}, {"hits", r.hits}, {"total", r.total}};
}

std::string csv_value(const Rate& r) {
  const auto v = r.value();
  if (!v) return "";
  std::ostringstream os;
  os.precision(6);
  os << *v;
  return os.str();
}

struct ItemOutcome {
  bool failed = false;
  Rate recall;
  Rate sprel;
  std::map<RelationKind, Rate> by_kind;
  double attend_loss = 0.0;
};

struct RowSpec {
  Variant variant;
  LayoutSource layout;
};

}  // namespace

std::string EvalReport::to_json() const {
  json doc;
  doc["provenance"] = json::parse(provenance_json);
  json rows_json = json::array();
  for (const auto& r : rows) {
    json row;
    row["variant"] = to_string(r.variant);
    row["layout"] = to_string(r.layout);
    row["items"] = r.items;
    row["failures"] = r.failures;
    row["object_recall"] = rate_json(r.recall);
    row["sprel_precision"] = rate_json(r.sprel);
    row["mean_attend_loss"] = r.mean_attend_loss;
    json kinds = json::object();
    for (const auto& [k, rate] : r.sprel_by_kind) kinds[to_string(k)] = rate_json(rate);
    row["sprel_by_relation"] = std::move(kinds);
    json cells = json::array();
    for (const auto& [key, rates] : r.by_cell) {
      cells.push_back({{"objects", key.first},
                       {"relations", key.second},
                       {"object_recall", rate_json(rates.first)},
                       {"sprel_precision", rate_json(rates.second)}});
    }
    row["by_cell"] = std::move(cells);
    rows_json.push_back(std::move(row));
  }
  doc["rows"] = std::move(rows_json);
  return doc.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "variant,layout,cell,recall_hits,recall_total,object_recall,sprel_hits,sprel_total,sprel_precision\n";
  auto line = [&](const EvalRow& r, const std::string& cell, const Rate& rec, const Rate& sp) {
    os << to_string(r.variant) << ',' << to_string(r.layout) << ',' << cell << ',' << rec.hits << ','
       << rec.total << ',' << csv_value(rec) << ',' << sp.hits << ',' << sp.total << ',' << csv_value(sp) << '\n';
  };
  for (const auto& r : rows) {
    line(r, "all", r.recall, r.sprel);
    for (const auto& [key, rates] : r.by_cell) {
      line(r, std::to_string(key.first) + ":" + std::to_string(key.second), rates.first, rates.second);
    }
  }
  return os.str();
}

EvalReport run_suite(std::span<const DatasetItem> dataset, const PredictorParams* predictor,
                     const SuiteConfig& config) {
  if (dataset.empty()) throw EmptyBatchError("evaluation needs a nonempty dataset");
  std::vector<RowSpec> specs;
  if (config.predicted_layout) {
    if (predictor == nullptr) throw ConfigError("predicted-layout rows need a trained predictor");
    for (auto v : config.variants) specs.push_back({v, LayoutSource::Predicted});
  }
  if (config.ground_truth_layout) specs.push_back({Variant::Full, LayoutSource::GroundTruth});
  if (specs.empty()) throw ConfigError("nothing to evaluate");

  const auto n_items = dataset.size();
  std::vector<std::vector<ItemOutcome>> outcomes(n_items, std::vector<ItemOutcome>(specs.size()));
  const auto n = static_cast<std::ptrdiff_t>(n_items);
#pragma omp parallel for schedule(dynamic) if (config.gen.policy == ExecPolicy::Parallel)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    const auto& item = dataset[idx];
    const std::uint64_t item_seed = derive_seed(config.seed, idx);
    std::optional<Layout> predicted;
    std::optional<Layout> truth;
    for (std::size_t s = 0; s < specs.size(); ++s) {
      auto& out = outcomes[idx][s];
      try {
        const Layout* layout = nullptr;
        if (specs[s].layout == LayoutSource::Predicted) {
          if (!predicted) {
            const auto gmms = predict_gmm(item.desc, *predictor);
            predicted = sample_layout(gmms, config.radius, derive_seed(item_seed, 1), config.sample_mode,
                                      config.edge_clamp);
          }
          layout = &*predicted;
        } else {
          if (!item.layout) throw ConfigError("item has no ground-truth layout");
          if (!truth) {
            truth.emplace();
            for (const auto& c : *item.layout) truth->regions.push_back({c, config.radius, std::nullopt});
          }
          layout = &*truth;
        }
        OptimizerConfig opt = config.opt;
        opt.variant = specs[s].variant;
        const auto res = optimize(item.desc, *layout, config.gen, config.score, opt, derive_seed(item_seed, 2),
                                  config.soft_sigma);
        const auto dets = detect_objects(res.scene, config.detect);
        const auto match = match_objects(dets, item.desc);
        out.recall.total = item.desc.num_objects();
        out.recall.hits = std::count_if(match.begin(), match.end(), [](const auto& m) { return m.has_value(); });
        const auto sc = sprel_counts(dets, item.desc);
        out.sprel = {sc.correct, sc.evaluable};
        for (const auto& [kind, ce] : sc.by_kind) out.by_kind[kind] = {ce.first, ce.second};
        out.attend_loss = res.terms.loss;
      } catch (const Error&) {
        out = ItemOutcome{};
        out.failed = true;
      }
    }
  }

  EvalReport report;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    EvalRow row;
    row.variant = specs[s].variant;
    row.layout = specs[s].layout;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < n_items; ++i) {
      const auto& o = outcomes[i][s];
      ++row.items;
      if (o.failed) {
        ++row.failures;
        continue;
      }
      row.recall += o.recall;
      row.sprel += o.sprel;
      for (const auto& [kind, r] : o.by_kind) row.sprel_by_kind[kind] += r;
      auto& cell = row.by_cell[{dataset[i].desc.num_objects(), static_cast<int>(dataset[i].desc.relations.size())}];
      cell.first += o.recall;
      cell.second += o.sprel;
      loss_sum += o.attend_loss;
    }
    const int ok = row.items - row.failures;
    row.mean_attend_loss = ok > 0 ? loss_sum / ok : 0.0;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace layoutattn
