#include "layoutattn/dataset.hpp"
#include "layoutattn/errors.hpp"
#include "layoutattn/evaluation.hpp"
#include "layoutattn/image_io.hpp"
#include "layoutattn/lambda_optimizer.hpp"
#include "layoutattn/layout_predictor.hpp"
#include "layoutattn/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using namespace layoutattn;
using nlohmann::json;

namespace {

constexpr int kExitUserInput = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitOptimization = 4;

struct UsageError : Error {
  using Error::Error;
};

json provenance(const std::string& command, json config) {
  return {{"tool", "layoutattn"}, {"version", version_string()}, {"command", command}, {"config", std::move(config)}};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
}

std::vector<DatasetItem> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  auto items = read_dataset_jsonl(in);
  if (items.empty()) throw ConfigError("dataset '" + path + "' is empty");
  return items;
}

SampleMode parse_layout_mode(const std::string& s) {
  if (s == "sample") return SampleMode::Sample;
  if (s == "argmax") return SampleMode::ArgmaxMean;
  throw UsageError("--layout-mode must be 'sample' or 'argmax'");
}

// ---- gen-data -------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::string counts = "default";
  std::uint64_t seed = 0;
  bool no_layout = false;
};

int cmd_gen_data(const GenDataArgs& a) {
  DatasetConfig cfg;
  cfg.cells = a.counts == "default" ? default_cell_counts() : parse_cell_counts(a.counts);
  cfg.emit_layout = !a.no_layout;
  const auto items = generate_dataset(cfg, a.seed);
  {
    std::ofstream out(a.out);
    if (!out) throw IoError("cannot write '" + a.out + "'");
    write_dataset_jsonl(out, items);
  }
  json cells = json::array();
  for (const auto& c : cfg.cells) cells.push_back({{"objects", c.objects}, {"relations", c.relations}, {"count", c.count}});
  const json meta = provenance("gen-data", {{"counts", a.counts},
                                            {"cells", cells},
                                            {"seed", a.seed},
                                            {"emit_layout", cfg.emit_layout},
                                            {"color_probability", cfg.color_probability},
                                            {"layout_margin", cfg.layout_margin},
                                            {"layout_range", {cfg.layout_lo, cfg.layout_hi}},
                                            {"min_separation", cfg.min_separation},
                                            {"items", items.size()}});
  write_file(a.out + ".meta.json", meta.dump(2) + "\n");

  std::map<std::pair<int, int>, int> summary;
  for (const auto& it : items) ++summary[{it.desc.num_objects(), static_cast<int>(it.desc.relations.size())}];
  std::printf("%-4s %-4s %6s\n", "N", "M", "count");
  for (const auto& [k, n] : summary) std::printf("%-4d %-4d %6d\n", k.first, k.second, n);
  std::printf("total %zu -> %s\n", items.size(), a.out.c_str());
  return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  int epochs = 100;
  int batch_size = 32;
  double xi = 1.0;
  double delta = 0.05;
  double lr = TrainConfig{}.lr;
  double head_lr = TrainConfig{}.head_lr;
  int components = TrainConfig{}.components;
  std::uint64_t seed = 0;
  bool no_augment = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const auto items = load_dataset(a.data);
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  cfg.loss = {a.delta, a.xi};
  cfg.lr = a.lr;
  cfg.head_lr = a.head_lr;
  cfg.components = a.components;
  cfg.augment = !a.no_augment;
  cfg.seed = a.seed;
  cfg.verbose = !a.quiet;
  if (!(a.delta > 0.0) || a.xi < 0.0) throw ConfigError("need delta > 0 and xi >= 0");
  if (a.components < 1) throw ConfigError("need components >= 1");
  const auto result = train(items, cfg);
  const json prov = provenance("train", {{"data", a.data},
                                         {"epochs", a.epochs},
                                         {"batch_size", a.batch_size},
                                         {"xi", a.xi},
                                         {"delta", a.delta},
                                         {"lr", a.lr},
                                         {"head_lr", a.head_lr},
                                         {"components", a.components},
                                         {"augment", !a.no_augment},
                                         {"lr_final", cfg.lr_final},
                                         {"warmup_steps", cfg.warmup_steps},
                                         {"grad_clip", cfg.grad_clip},
                                         {"seed", a.seed},
                                         {"items", items.size()}});
  save_checkpoint(a.out, result.params, prov.dump());
  const auto stats = relation_satisfaction(items, result.params);
  json curve = {{"provenance", prov},
                {"initial_loss", result.initial_loss},
                {"final_loss", result.final_loss},
                {"epoch_losses", result.epoch_losses},
                {"train_relation_satisfaction", stats.rate()}};
  write_file(a.out + ".loss.json", curve.dump(2) + "\n");
  std::printf("initial loss %.6f  final loss %.6f  relations satisfied %d/%d -> %s\n", result.initial_loss,
              result.final_loss, stats.satisfied, stats.total, a.out.c_str());
  return 0;
}

// ---- generate -------------------------------------------------------------

struct GenerateArgs {
  std::string text;
  std::string desc_file;
  std::string ckpt;
  std::string layout_file;
  std::string variant = "full";
  double radius = 0.2;
  double soft_sigma = 0.0;
  bool edge_clamp = false;
  std::string layout_mode = "sample";
  int iterations = 50;
  int steps = 50;
  std::string grad_mode = "analytic";
  std::uint64_t seed = 0;
  std::string out;
  bool trace = false;
  bool sidecar = false;
};

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols()));
  }
  return rows;
}

int cmd_generate(const GenerateArgs& a) {
  if (a.text.empty() == a.desc_file.empty()) throw UsageError("give exactly one of --text or --desc-file");
  if (a.ckpt.empty() == a.layout_file.empty()) throw UsageError("give exactly one of --ckpt or --layout-file");
  std::string text = a.text;
  if (!a.desc_file.empty()) {
    text = read_file(a.desc_file);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
  }
  const SceneDescription desc = parse_description(text);
  const Variant variant = variant_from_string(a.variant);
  const SampleMode mode = parse_layout_mode(a.layout_mode);
  if (!(a.radius > 0.0 && a.radius <= 0.5)) throw ConfigError("--radius must lie in (0, 0.5]");
  if (a.soft_sigma < 0.0) throw ConfigError("--soft-sigma must be non-negative");

  GeneratorConfig gen;
  gen.steps = a.steps;
  ScoreConfig score;
  OptimizerConfig opt;
  opt.iterations = a.iterations;
  opt.variant = variant;
  opt.gradient = gradient_mode_from_string(a.grad_mode);

  Layout layout;
  std::vector<GmmParams> gmms;
  if (!a.layout_file.empty()) {
    layout = read_layout_file(a.layout_file, gen.grid);
    if (static_cast<int>(layout.regions.size()) != desc.num_objects()) {
      throw ConfigError("layout file has " + std::to_string(layout.regions.size()) + " objects, description has " +
                        std::to_string(desc.num_objects()));
    }
  } else {
    const auto params = load_checkpoint(a.ckpt);
    gmms = predict_gmm(desc, params);
    layout = sample_layout(gmms, a.radius, derive_seed(a.seed, 1), mode, a.edge_clamp);
  }
  const auto res = optimize(desc, layout, gen, score, opt, derive_seed(a.seed, 2), a.soft_sigma);

  const json prov = provenance("generate", {{"text", text},
                                            {"ckpt", a.ckpt},
                                            {"layout_file", a.layout_file},
                                            {"variant", a.variant},
                                            {"radius", a.radius},
                                            {"soft_sigma", a.soft_sigma},
                                            {"edge_clamp", a.edge_clamp},
                                            {"layout_mode", a.layout_mode},
                                            {"iterations", a.iterations},
                                            {"steps", a.steps},
                                            {"grad_mode", a.grad_mode},
                                            {"lr", opt.lr},
                                            {"clamp", {opt.clamp_lo, opt.clamp_hi}},
                                            {"gamma", score.gamma},
                                            {"temperature", score.temperature},
                                            {"seed", a.seed}});
  const std::string prov_line = "layoutattn " + std::string(version_string()) + " " + prov["config"].dump();

  RgbImage img = render_scene(res.scene);
  write_ppm(a.out + ".ppm", img, prov_line);
  draw_layout_overlay(img, layout, gen.grid);
  write_ppm(a.out + ".overlay.ppm", img, prov_line);

  const auto masks = region_mask(layout, gen.grid);
  const auto dets = detect_objects(res.scene);
  const auto match = match_objects(dets, desc);
  json meta;
  meta["provenance"] = prov;
  json objects = json::array();
  const auto& vocab = Vocabulary::instance();
  for (std::size_t i = 0; i < desc.objects.size(); ++i) {
    const auto& o = desc.objects[i];
    const auto& r = layout.regions[i];
    json jo = {{"id", o.id},
               {"noun", vocab.noun(o.noun)},
               {"color", o.color ? json(vocab.color(*o.color)) : json(nullptr)},
               {"local_text", desc.local_texts[i]},
               {"center", {r.center.x, r.center.y}},
               {"radius", r.radius},
               {"explicit_mask", r.mask.has_value()},
               {"mask_pixels", static_cast<long>(masks[i].sum())},
               {"local_score", res.terms.local[i]},
               {"detected", match[i].has_value()}};
    if (match[i]) {
      const auto& d = dets[*match[i]];
      jo["detection"] = {{"centroid", {d.centroid.x, d.centroid.y}}, {"area", d.area}};
    }
    if (!gmms.empty()) {
      json comps = json::array();
      const auto& g = gmms[i];
      for (int k = 0; k < g.components(); ++k) {
        const auto kk = static_cast<std::size_t>(k);
        comps.push_back({{"weight", g.weights[kk]},
                         {"mean", {g.means[kk].x, g.means[kk].y}},
                         {"variance", {g.variances[kk].x, g.variances[kk].y}}});
      }
      jo["gmm"] = std::move(comps);
    }
    objects.push_back(std::move(jo));
  }
  meta["objects"] = std::move(objects);
  json rels = json::array();
  for (const auto& r : desc.relations) {
    rels.push_back({{"sub", r.subject_id}, {"obj", r.object_id}, {"kind", to_string(r.kind)}});
  }
  meta["relations"] = std::move(rels);
  meta["lambda"] = matrix_json(res.lambda);
  meta["attend_loss"] = {{"initial", res.initial_loss}, {"best", res.best_loss}, {"best_iteration", res.best_iteration},
                         {"final_terms", {{"loss", res.terms.loss}, {"global", res.terms.global}, {"local", res.terms.local}}}};
  meta["metrics"] = {{"object_recall", object_recall(dets, desc)},
                     {"sprel_precision", [&] {
                        const auto p = sprel_precision(dets, desc);
                        return p ? json(*p) : json(nullptr);
                      }()}};
  meta["overlap"] = {{"overlap_pixels", res.overlap.overlap_pixels},
                     {"coefficient_out_of_range_pixels", res.overlap.out_of_range_pixels},
                     {"min_coefficient", res.overlap.min_coefficient},
                     {"max_coefficient", res.overlap.max_coefficient}};
  if (a.trace) meta["loss_trace"] = res.loss_trace;
  write_file(a.out + ".json", meta.dump(2) + "\n");
  if (a.sidecar) {
    json ch = {{"provenance", prov},
               {"grid", {gen.grid.h, gen.grid.w}},
               {"nouns", vocab.nouns()},
               {"colors", vocab.colors()},
               {"noun_channels", matrix_json(res.scene.nouns)},
               {"color_channels", matrix_json(res.scene.colors)}};
    write_file(a.out + ".channels.json", ch.dump() + "\n");
  }
  if (res.overlap.out_of_range_pixels > 0) {
    std::fprintf(stderr, "warning: %d pixels have a global attention coefficient outside [0, 1]\n",
                 res.overlap.out_of_range_pixels);
  }
  std::printf("attend loss %.6f -> %.6f  recall %.3f -> %s.{ppm,overlay.ppm,json}\n", res.initial_loss,
              res.best_loss, object_recall(dets, desc), a.out.c_str());
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string variants = "full,no-spatial,no-temporal,no-optimization";
  std::uint64_t seed = 0;
  std::string out;
  std::string csv;
  bool ground_truth = false;
  bool no_predicted = false;
  int iterations = 50;
  int steps = 50;
  int limit = 0;
  double radius = 0.2;
  std::string layout_mode = "sample";
  bool edge_clamp = false;
  double soft_sigma = 0.0;
};

int cmd_eval(const EvalArgs& a) {
  auto items = load_dataset(a.data);
  if (a.limit > 0 && static_cast<std::size_t>(a.limit) < items.size()) items.resize(static_cast<std::size_t>(a.limit));
  SuiteConfig cfg;
  cfg.variants.clear();
  std::stringstream ss(a.variants);
  for (std::string v; std::getline(ss, v, ',');) {
    if (!v.empty()) cfg.variants.push_back(variant_from_string(v));
  }
  cfg.predicted_layout = !a.no_predicted && !cfg.variants.empty();
  cfg.ground_truth_layout = a.ground_truth;
  cfg.gen.steps = a.steps;
  cfg.opt.iterations = a.iterations;
  cfg.radius = a.radius;
  cfg.sample_mode = parse_layout_mode(a.layout_mode);
  cfg.edge_clamp = a.edge_clamp;
  cfg.soft_sigma = a.soft_sigma;
  cfg.seed = a.seed;
  std::optional<PredictorParams> params;
  if (cfg.predicted_layout) {
    if (a.ckpt.empty()) throw UsageError("--ckpt is required for predicted-layout rows");
    params = load_checkpoint(a.ckpt);
  }
  EvalReport report = run_suite(items, params ? &*params : nullptr, cfg);
  report.provenance_json = provenance("eval", {{"data", a.data},
                                               {"ckpt", a.ckpt},
                                               {"variants", a.variants},
                                               {"ground_truth_layout", a.ground_truth},
                                               {"predicted_layout", cfg.predicted_layout},
                                               {"iterations", a.iterations},
                                               {"steps", a.steps},
                                               {"limit", a.limit},
                                               {"items", items.size()},
                                               {"radius", a.radius},
                                               {"layout_mode", a.layout_mode},
                                               {"edge_clamp", a.edge_clamp},
                                               {"soft_sigma", a.soft_sigma},
                                               {"seed", a.seed}})
                               .dump();
  if (!a.out.empty()) write_file(a.out, report.to_json());
  if (!a.csv.empty()) write_file(a.csv, report.to_csv());

  std::printf("%-16s %-13s %8s %8s %14s %14s\n", "variant", "layout", "items", "failed", "object_recall",
              "sprel_prec");
  bool all_failed = true;
  for (const auto& r : report.rows) {
    auto fmt = [](const Rate& rate) {
      char buf[48];
      const auto v = rate.value();
      if (v) {
        std::snprintf(buf, sizeof buf, "%.3f (%lld/%lld)", *v, rate.hits, rate.total);
      } else {
        std::snprintf(buf, sizeof buf, "n/a");
      }
      return std::string(buf);
    };
    std::printf("%-16s %-13s %8d %8d %14s %14s\n", to_string(r.variant), to_string(r.layout), r.items, r.failures,
                fmt(r.recall).c_str(), fmt(r.sprel).c_str());
    if (r.failures < r.items) all_failed = false;
  }
  return all_failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_limit_from_env();
  CLI::App app{"Layout-guided toy text-to-image pipeline: data, layout training, generation, evaluation.\n"
               "Environment: LAYOUTATTN_THREADS caps OpenMP threads."};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen_data = app.add_subcommand("gen-data", "Generate a synthetic scene-description dataset (JSON Lines)");
  gen_data->add_option("--out", gd.out, "Output .jsonl path (provenance goes to <out>.meta.json)")->required();
  gen_data->add_option("--counts", gd.counts, "Cells as N:M=COUNT,... or 'default'")->capture_default_str();
  gen_data->add_option("--seed", gd.seed, "Random seed")->capture_default_str();
  gen_data->add_flag("--no-layout", gd.no_layout, "Do not emit ground-truth layouts");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train the GMM layout predictor");
  train_cmd->add_option("--data", tr.data, "Training dataset (.jsonl)")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint path (loss curve goes to <out>.loss.json)")->required();
  train_cmd->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size, "Batch size")->capture_default_str();
  train_cmd->add_option("--xi", tr.xi, "Weight of the relative-position loss")->capture_default_str();
  train_cmd->add_option("--delta", tr.delta, "Relative hinge margin")->capture_default_str();
  train_cmd->add_option("--lr", tr.lr, "Encoder peak learning rate")->capture_default_str();
  train_cmd->add_option("--head-lr", tr.head_lr, "GMM head peak learning rate")->capture_default_str();
  train_cmd->add_option("--components", tr.components, "Mixture components K")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  train_cmd->add_flag("--no-augment", tr.no_augment, "Train on the items as given");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  GenerateArgs ge;
  auto* gen_cmd = app.add_subcommand("generate", "Parse, lay out, optimize and render one description");
  gen_cmd->add_option("--text", ge.text, "Scene description");
  gen_cmd->add_option("--desc-file", ge.desc_file, "File holding the scene description");
  gen_cmd->add_option("--ckpt", ge.ckpt, "Layout predictor checkpoint");
  gen_cmd->add_option("--layout-file", ge.layout_file, "User layout JSON (circles or PGM masks)");
  gen_cmd->add_option("--variant", ge.variant, "full | no-spatial | no-temporal | no-optimization")
      ->capture_default_str();
  gen_cmd->add_option("--radius", ge.radius, "Region radius for predicted layouts")->capture_default_str();
  gen_cmd->add_option("--soft-sigma", ge.soft_sigma, "Use soft Gaussian regions with this spread (0 = hard)")
      ->capture_default_str();
  gen_cmd->add_flag("--edge-clamp", ge.edge_clamp, "Clamp predicted centers to [r/2, 1-r/2]");
  gen_cmd->add_option("--layout-mode", ge.layout_mode, "sample | argmax")->capture_default_str();
  gen_cmd->add_option("--iterations", ge.iterations, "Lambda optimization iterations")->capture_default_str();
  gen_cmd->add_option("--steps", ge.steps, "Denoising steps T")->capture_default_str();
  gen_cmd->add_option("--grad-mode", ge.grad_mode, "analytic | finite-difference")->capture_default_str();
  gen_cmd->add_option("--seed", ge.seed, "Random seed")->capture_default_str();
  gen_cmd->add_option("--out", ge.out, "Output prefix")->required();
  gen_cmd->add_flag("--trace", ge.trace, "Include the loss trace in the metadata JSON");
  gen_cmd->add_flag("--sidecar", ge.sidecar, "Write raw channel activations to <out>.channels.json");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Run the evaluation suite and report recall / SPRel precision");
  eval_cmd->add_option("--data", ev.data, "Evaluation dataset (.jsonl)")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "Layout predictor checkpoint");
  eval_cmd->add_option("--variants", ev.variants, "Comma-separated variants")->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed, "Random seed")->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "Report JSON path");
  eval_cmd->add_option("--csv", ev.csv, "Report CSV path");
  eval_cmd->add_flag("--ground-truth-layout", ev.ground_truth, "Add a row using dataset layouts");
  eval_cmd->add_flag("--no-predicted", ev.no_predicted, "Skip predicted-layout rows");
  eval_cmd->add_option("--iterations", ev.iterations, "Lambda optimization iterations")->capture_default_str();
  eval_cmd->add_option("--steps", ev.steps, "Denoising steps T")->capture_default_str();
  eval_cmd->add_option("--limit", ev.limit, "Use only the first N items (0 = all)")->capture_default_str();
  eval_cmd->add_option("--radius", ev.radius, "Region radius")->capture_default_str();
  eval_cmd->add_option("--layout-mode", ev.layout_mode, "sample | argmax")->capture_default_str();
  eval_cmd->add_flag("--edge-clamp", ev.edge_clamp, "Clamp predicted centers to [r/2, 1-r/2]");
  eval_cmd->add_option("--soft-sigma", ev.soft_sigma, "Soft region spread (0 = hard)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUserInput;
  }

  try {
    if (*gen_data) return cmd_gen_data(gd);
    if (*train_cmd) return cmd_train(tr);
    if (*gen_cmd) return cmd_generate(ge);
    if (*eval_cmd) return cmd_eval(ev);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDivergence;
  } catch (const NonFiniteLossError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitOptimization;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kExitUserInput;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUserInput;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: malformed JSON input: %s\n", e.what());
    return kExitUserInput;
  }
  return kExitUserInput;
}
