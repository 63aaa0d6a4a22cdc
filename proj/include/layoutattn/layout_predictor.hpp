#pragma once

#include "layoutattn/dataset.hpp"
#include "layoutattn/encoder.hpp"
#include "layoutattn/gmm.hpp"
#include "layoutattn/layout.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace layoutattn {

struct PredictorParams {
  EncoderConfig config;
  ParameterSet weights;
};

/// Default architecture over the DSL vocabulary, seeded initialization.
PredictorParams init_predictor(std::uint64_t seed, int components = 5);

/// Raw GMM head outputs per object (N x 5K), averaged over every token that
/// names the object.
Matrix predict_raw(const SceneDescription& desc, const PredictorParams& params);

/// One mixture per object. Throws VocabError on tokens outside the vocabulary.
std::vector<GmmParams> predict_gmm(const SceneDescription& desc, const PredictorParams& params);

struct LossConfig {
  double delta = 0.05;  // relative hinge margin
  double xi = 1.0;      // weight of the relative term
};

struct LossBreakdown {
  double total = 0.0;
  double absolute = 0.0;
  double relative = 0.0;
  int absolute_terms = 0;  // objects with ground-truth centers
  int relative_terms = 0;  // relations
};

/// L_abs + xi * L_rel, each a mean over its contributing objects/relations in
/// the batch. Throws EmptyBatchError when nothing contributes.
LossBreakdown total_loss(std::span<const DatasetItem> batch, const PredictorParams& params,
                         const LossConfig& config);

/// total_loss plus its gradient with respect to every parameter (grad is
/// overwritten and must have the layout of params.weights).
LossBreakdown total_loss_and_grad(std::span<const DatasetItem> batch, const PredictorParams& params,
                                  const LossConfig& config, ParameterSet& grad);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double lr = 5e-3;        // encoder peak learning rate
  double head_lr = 1e-2;   // GMM head peak learning rate
  double lr_final = 1e-5;  // both groups decay to this (cosine)
  int warmup_steps = 50;
  double grad_clip = 5.0;  // global norm
  LossConfig loss;
  int components = 5;   // mixture size K
  std::uint64_t seed = 0;
  bool augment = true;  // train on augment_item copies drawn afresh each epoch
  bool verbose = false;
};

struct TrainResult {
  PredictorParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;  // mean batch loss per epoch
};

/// Adam on total_loss. Deterministic given config.seed. Throws
/// DivergenceError if the loss becomes non-finite.
TrainResult train(std::span<const DatasetItem> dataset, const TrainConfig& config);

struct RelationStats {
  int satisfied = 0;
  int total = 0;
  [[nodiscard]] double rate() const { return total == 0 ? 0.0 : static_cast<double>(satisfied) / total; }
};

/// Fraction of relations satisfied by the argmax-weight component means.
RelationStats relation_satisfaction(std::span<const DatasetItem> items, const PredictorParams& params);

enum class SampleMode { Sample, ArgmaxMean };

/// Draws one center per object (component ~ w, then N(mu, Sigma), clipped to
/// [0,1]^2) or takes the argmax-weight mean; optional clamp to [r/2, 1-r/2].
Layout sample_layout(std::span<const GmmParams> gmms, double radius, std::uint64_t seed,
                     SampleMode mode, bool edge_clamp);

/// Little-endian: 8-byte magic, u64 header length, JSON header, f32 tensors.
void save_checkpoint(const std::string& path, const PredictorParams& params,
                     const std::string& provenance_json = "{}");
PredictorParams load_checkpoint(const std::string& path);

}  // namespace layoutattn
