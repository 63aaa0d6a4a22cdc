#include "layoutattn/layout_predictor.hpp"

#include "layoutattn/errors.hpp"
#include "layoutattn/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>

namespace layoutattn {

using nlohmann::json;

PredictorParams init_predictor(std::uint64_t seed, int components) {
  EncoderConfig cfg;
  cfg.vocab = Vocabulary::instance().size();
  cfg.components = components;
  Encoder enc(cfg);
  return {cfg, enc.init_parameters(seed)};
}

namespace {

std::vector<int> mention_positions(const SceneDescription& desc) {
  if (desc.mention_tokens.size() == desc.objects.size()) return desc.mention_tokens;
  return parse_description(desc.global_text).mention_tokens;
}

// Every token position naming each object: the first mention plus later
// "the NOUN" back-references (nouns are unique within a description).
std::vector<std::vector<Eigen::Index>> object_mentions(const SceneDescription& desc, std::span<const int> ids) {
  const auto first = mention_positions(desc);
  std::vector<std::vector<Eigen::Index>> out(first.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    const int tok = ids[static_cast<std::size_t>(first[i])];
    for (std::size_t p = static_cast<std::size_t>(first[i]); p < ids.size(); ++p) {
      if (ids[p] == tok) out[i].push_back(static_cast<Eigen::Index>(p));
    }
  }
  return out;
}

Matrix pool_mentions(const Matrix& out, const std::vector<std::vector<Eigen::Index>>& mentions) {
  Matrix rows = Matrix::Zero(static_cast<Eigen::Index>(mentions.size()), out.cols());
  for (std::size_t i = 0; i < mentions.size(); ++i) {
    for (const auto p : mentions[i]) rows.row(static_cast<Eigen::Index>(i)) += out.row(p);
    rows.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(mentions[i].size());
  }
  return rows;
}

struct ItemTerms {
  std::vector<std::size_t> abs_objects;  // objects contributing to L_abs
  std::size_t relations = 0;
};

ItemTerms item_terms(const DatasetItem& item) {
  ItemTerms t;
  if (item.layout) {
    for (std::size_t i = 0; i < item.desc.objects.size(); ++i) t.abs_objects.push_back(i);
  }
  t.relations = item.desc.relations.size();
  return t;
}

// Loss contribution of one item, with already-normalized weights; optionally
// accumulates parameter gradients.
void item_loss(const DatasetItem& item, const PredictorParams& params, const LossConfig& cfg,
               double abs_weight, double rel_weight, double& abs_sum, double& rel_sum,
               ParameterSet* grad) {
  const Encoder enc(params.config);
  const auto ids = encode_tokens(item.desc.global_text);
  Encoder::Cache cache;
  const Matrix out = enc.forward(params.weights, ids, cache);
  const auto mentions = object_mentions(item.desc, ids);
  const Matrix pooled = pool_mentions(out, mentions);
  const int width = params.config.head_outputs();
  Matrix d_pooled;
  if (grad) d_pooled = Matrix::Zero(pooled.rows(), pooled.cols());

  auto row_of = [&](std::size_t obj) {
    return std::span<const double>(pooled.row(static_cast<Eigen::Index>(obj)).data(), static_cast<std::size_t>(width));
  };
  auto grad_row = [&](std::size_t obj) -> std::span<double> {
    if (!grad) return {};
    return {d_pooled.row(static_cast<Eigen::Index>(obj)).data(), static_cast<std::size_t>(width)};
  };

  if (item.layout) {
    std::vector<double> g(static_cast<std::size_t>(width));
    for (std::size_t i = 0; i < item.desc.objects.size(); ++i) {
      std::fill(g.begin(), g.end(), 0.0);
      abs_sum += gmm_nll_raw((*item.layout)[i], row_of(i), grad ? std::span<double>(g) : std::span<double>());
      if (grad) {
        auto gr = grad_row(i);
        for (std::size_t c = 0; c < g.size(); ++c) gr[c] += abs_weight * g[c];
      }
    }
  }
  for (const auto& r : item.desc.relations) {
    const auto si = static_cast<std::size_t>(r.subject_id - 1);
    const auto oi = static_cast<std::size_t>(r.object_id - 1);
    rel_sum += rel_penalty_raw(r.kind, row_of(si), row_of(oi), cfg.delta, rel_weight, grad_row(si),
                               grad_row(oi));
  }
  if (grad) {
    Matrix d_out = Matrix::Zero(out.rows(), out.cols());
    for (std::size_t i = 0; i < mentions.size(); ++i) {
      const double share = 1.0 / static_cast<double>(mentions[i].size());
      for (const auto p : mentions[i]) d_out.row(p) += share * d_pooled.row(static_cast<Eigen::Index>(i));
    }
    enc.backward(params.weights, cache, d_out, *grad);
  }
}

LossBreakdown batch_loss(std::span<const DatasetItem> batch, const PredictorParams& params,
                         const LossConfig& cfg, ParameterSet* grad) {
  if (batch.empty()) throw EmptyBatchError("empty batch");
  LossBreakdown lb;
  for (const auto& item : batch) {
    const auto t = item_terms(item);
    lb.absolute_terms += static_cast<int>(t.abs_objects.size());
    lb.relative_terms += static_cast<int>(t.relations);
  }
  if (lb.absolute_terms == 0 && lb.relative_terms == 0) {
    throw EmptyBatchError("batch has neither ground-truth layouts nor relations");
  }
  const double abs_w = lb.absolute_terms > 0 ? 1.0 / lb.absolute_terms : 0.0;
  const double rel_w = lb.relative_terms > 0 ? cfg.xi / lb.relative_terms : 0.0;

  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  std::vector<double> abs_parts(batch.size(), 0.0), rel_parts(batch.size(), 0.0);
  std::vector<ParameterSet> item_grads;
  if (grad) item_grads.resize(batch.size());
  // Per-item buffers keep the reduction order fixed regardless of threads.
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t b = 0; b < n; ++b) {
    const auto i = static_cast<std::size_t>(b);
    ParameterSet* g = nullptr;
    if (grad) {
      item_grads[i] = params.weights.zeros_like();
      g = &item_grads[i];
    }
    item_loss(batch[i], params, cfg, abs_w, rel_w, abs_parts[i], rel_parts[i], g);
  }
  double abs_sum = 0.0, rel_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    abs_sum += abs_parts[i];
    rel_sum += rel_parts[i];
  }
  if (grad) {
    *grad = params.weights.zeros_like();
    for (const auto& g : item_grads) grad->add(g);
  }
  lb.absolute = lb.absolute_terms > 0 ? abs_sum / lb.absolute_terms : 0.0;
  lb.relative = lb.relative_terms > 0 ? rel_sum / lb.relative_terms : 0.0;
  lb.total = lb.absolute + cfg.xi * lb.relative;
  return lb;
}

}  // namespace

Matrix predict_raw(const SceneDescription& desc, const PredictorParams& params) {
  const Encoder enc(params.config);
  const auto ids = encode_tokens(desc.global_text);
  return pool_mentions(enc.forward(params.weights, ids), object_mentions(desc, ids));
}

std::vector<GmmParams> predict_gmm(const SceneDescription& desc, const PredictorParams& params) {
  const Matrix raw = predict_raw(desc, params);
  std::vector<GmmParams> out;
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    out.push_back(gmm_from_raw({raw.row(i).data(), static_cast<std::size_t>(raw.cols())}));
  }
  return out;
}

LossBreakdown total_loss(std::span<const DatasetItem> batch, const PredictorParams& params,
                         const LossConfig& config) {
  return batch_loss(batch, params, config, nullptr);
}

LossBreakdown total_loss_and_grad(std::span<const DatasetItem> batch, const PredictorParams& params,
                                  const LossConfig& config, ParameterSet& grad) {
  return batch_loss(batch, params, config, &grad);
}

TrainResult train(std::span<const DatasetItem> dataset, const TrainConfig& config) {
  if (dataset.empty()) throw EmptyBatchError("empty training set");
  if (config.epochs < 0 || config.batch_size < 1 || !(config.lr > 0.0) || !(config.head_lr > 0.0)) {
    throw ConfigError("invalid training hyperparameters");
  }
  TrainResult result;
  result.params = init_predictor(derive_seed(config.seed, 1), config.components);
  auto& params = result.params;
  const Encoder enc(params.config);

  result.initial_loss = total_loss(dataset, params, config.loss).total;
  if (!std::isfinite(result.initial_loss)) throw DivergenceError("initial loss is not finite");

  ParameterSet m = params.weights.zeros_like();
  ParameterSet v = params.weights.zeros_like();
  ParameterSet grad = params.weights.zeros_like();
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  const auto n = dataset.size();
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::size_t total_steps = std::max<std::size_t>(1, steps_per_epoch * static_cast<std::size_t>(config.epochs));
  std::size_t step = 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<DatasetItem> batch;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double epoch_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
        if (config.augment) {
          batch.push_back(augment_item(dataset[order[i]], rng.below(~0ULL)));
        } else {
          batch.push_back(dataset[order[i]]);
        }
      }
      LossBreakdown lb;
      try {
        lb = total_loss_and_grad(batch, params, config.loss, grad);
      } catch (const EmptyBatchError&) {
        continue;
      }
      if (!std::isfinite(lb.total) || !grad.all_finite()) {
        throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
      }
      epoch_sum += lb.total;
      ++batches;

      const double norm = std::sqrt(grad.squared_norm());
      const double clip = (config.grad_clip > 0.0 && norm > config.grad_clip) ? config.grad_clip / norm : 1.0;
      ++step;
      const double warm = std::min(1.0, static_cast<double>(step) / std::max(1, config.warmup_steps));
      const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
      const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t t = 0; t < params.weights.tensors.size(); ++t) {
        const double peak = enc.is_head_tensor(t) ? config.head_lr : config.lr;
        const double lr = warm * (config.lr_final + (peak - config.lr_final) * cosine);
        auto& w = params.weights.tensors[t].value;
        auto& mt = m.tensors[t].value;
        auto& vt = v.tensors[t].value;
        const Matrix g = grad.tensors[t].value * clip;
        mt = kBeta1 * mt + (1.0 - kBeta1) * g;
        vt = kBeta2 * vt + (1.0 - kBeta2) * g.cwiseProduct(g);
        w.array() -= lr * (mt.array() / bc1) / ((vt.array() / bc2).sqrt() + kEps);
      }
    }
    const double mean = batches > 0 ? epoch_sum / batches : 0.0;
    result.epoch_losses.push_back(mean);
    if (config.verbose) std::cerr << "epoch " << epoch + 1 << "/" << config.epochs << " loss " << mean << '\n';
  }
  result.final_loss = total_loss(dataset, params, config.loss).total;
  if (!std::isfinite(result.final_loss)) throw DivergenceError("final loss is not finite");
  return result;
}

RelationStats relation_satisfaction(std::span<const DatasetItem> items, const PredictorParams& params) {
  RelationStats stats;
  for (const auto& item : items) {
    if (item.desc.relations.empty()) continue;
    const auto gmms = predict_gmm(item.desc, params);
    for (const auto& r : item.desc.relations) {
      const Point2 s = gmms[static_cast<std::size_t>(r.subject_id - 1)].argmax_mean();
      const Point2 o = gmms[static_cast<std::size_t>(r.object_id - 1)].argmax_mean();
      stats.satisfied += relation_holds(r.kind, s, o) ? 1 : 0;
      ++stats.total;
    }
  }
  return stats;
}

Layout sample_layout(std::span<const GmmParams> gmms, double radius, std::uint64_t seed, SampleMode mode,
                     bool edge_clamp) {
  if (!(radius > 0.0 && radius <= 0.5)) throw ConfigError("radius must lie in (0, 0.5]");
  Rng rng(seed);
  Layout layout;
  for (const auto& g : gmms) {
    Point2 c;
    if (mode == SampleMode::ArgmaxMean) {
      c = g.argmax_mean();
    } else {
      const auto k = rng.categorical(g.weights);
      c.x = std::clamp(g.means[k].x + std::sqrt(g.variances[k].x) * rng.normal(), 0.0, 1.0);
      c.y = std::clamp(g.means[k].y + std::sqrt(g.variances[k].y) * rng.normal(), 0.0, 1.0);
    }
    if (edge_clamp) {
      c.x = std::clamp(c.x, radius / 2.0, 1.0 - radius / 2.0);
      c.y = std::clamp(c.y, radius / 2.0, 1.0 - radius / 2.0);
    }
    layout.regions.push_back({c, radius, std::nullopt});
  }
  return layout;
}

namespace {

constexpr char kMagic[8] = {'L', 'Y', 'A', 'T', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IoError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f32(std::ostream& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

double read_f32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated checkpoint tensor data");
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return static_cast<double>(std::bit_cast<float>(bits));
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const PredictorParams& params,
                     const std::string& provenance_json) {
  json header;
  header["format_version"] = 1;
  header["code_version"] = version_string();
  header["vocab_hash"] = hex64(Vocabulary::instance().hash());
  header["K"] = params.config.components;
  header["config"] = {{"vocab", params.config.vocab},     {"d_model", params.config.d_model},
                      {"heads", params.config.heads},     {"ff", params.config.ff},
                      {"layers", params.config.layers},   {"components", params.config.components},
                      {"max_len", params.config.max_len}};
  json tensors = json::array();
  for (const auto& t : params.weights.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}});
  }
  header["tensors"] = std::move(tensors);
  header["provenance"] = json::parse(provenance_json);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 8);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : params.weights.tensors) {
    for (Eigen::Index i = 0; i < t.value.size(); ++i) write_f32(out, t.value.data()[i]);
  }
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

PredictorParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("'" + path + "' is not a checkpoint");
  const auto len = read_u64(in);
  if (len > (1u << 26)) throw IoError("checkpoint header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header");
  const json header = json::parse(text);
  if (header.at("vocab_hash").get<std::string>() != hex64(Vocabulary::instance().hash())) {
    throw VocabError("checkpoint vocabulary does not match this build");
  }
  const auto& c = header.at("config");
  PredictorParams params;
  params.config.vocab = c.at("vocab").get<int>();
  params.config.d_model = c.at("d_model").get<int>();
  params.config.heads = c.at("heads").get<int>();
  params.config.ff = c.at("ff").get<int>();
  params.config.layers = c.at("layers").get<int>();
  params.config.components = c.at("components").get<int>();
  params.config.max_len = c.at("max_len").get<int>();
  const Encoder enc(params.config);
  params.weights = enc.init_parameters(0);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.weights.tensors.size()) throw IoError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = params.weights.tensors[i];
    const auto shape = tensors[i].at("shape");
    if (tensors[i].at("name").get<std::string>() != t.name || shape[0].get<Eigen::Index>() != t.value.rows() ||
        shape[1].get<Eigen::Index>() != t.value.cols()) {
      throw IoError("checkpoint tensor '" + t.name + "' has unexpected name or shape");
    }
    for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = read_f32(in);
  }
  return params;
}

}  // namespace layoutattn
