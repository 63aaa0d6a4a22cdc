#pragma once

#include "layoutattn/common.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace layoutattn {

struct EncoderConfig {
  int vocab = 0;
  int d_model = 64;
  int heads = 4;
  int ff = 128;
  int layers = 2;
  int components = 5;  // GMM components K
  int max_len = 128;

  [[nodiscard]] int head_outputs() const { return components * 5; }
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct NamedTensor {
  std::string name;
  Matrix value;
};

/// Ordered list of parameter tensors. Gradients and optimizer moments use the
/// same layout.
class ParameterSet {
 public:
  std::vector<NamedTensor> tensors;

  [[nodiscard]] std::size_t num_scalars() const;
  [[nodiscard]] ParameterSet zeros_like() const;
  void set_zero();
  void add(const ParameterSet& other, double scale = 1.0);
  [[nodiscard]] double squared_norm() const;
  [[nodiscard]] bool all_finite() const;
  /// Flat scalar access in tensor order (row-major within each tensor).
  [[nodiscard]] double& scalar(std::size_t flat_index);
  [[nodiscard]] double scalar(std::size_t flat_index) const;
  [[nodiscard]] const std::string& tensor_name_of(std::size_t flat_index) const;
};

/// Pre-LayerNorm transformer encoder with a per-token GMM head.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  [[nodiscard]] const EncoderConfig& config() const { return config_; }
  [[nodiscard]] ParameterSet init_parameters(std::uint64_t seed) const;
  [[nodiscard]] bool is_head_tensor(std::size_t tensor_index) const;

  struct Cache;

  /// Raw head outputs, one row per token (L x 5K).
  Matrix forward(const ParameterSet& params, std::span<const int> ids) const;
  Matrix forward(const ParameterSet& params, std::span<const int> ids, Cache& cache) const;
  /// Accumulates parameter gradients given d loss / d outputs.
  void backward(const ParameterSet& params, const Cache& cache, const Matrix& d_out,
                ParameterSet& grad) const;

  struct LayerCache {
    Matrix h_in, ln1, xhat1, q, k, v, ctx, h_mid, ln2, xhat2, pre_act, act;
    Vector rstd1, rstd2;
    std::vector<Matrix> probs;
  };
  struct Cache {
    std::vector<int> ids;
    std::vector<LayerCache> layers;
    Matrix h_last, xhat_f, ln_f;
    Vector rstd_f;
  };

 private:
  // tensor indices
  static constexpr std::size_t kTok = 0, kPos = 1, kFirstLayer = 2, kPerLayer = 16;
  enum LayerSlot : std::size_t {
    kLn1G, kLn1B, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo, kLn2G, kLn2B, kW1, kB1, kW2, kB2
  };
  [[nodiscard]] std::size_t layer_tensor(int layer, LayerSlot slot) const {
    return kFirstLayer + static_cast<std::size_t>(layer) * kPerLayer + slot;
  }
  [[nodiscard]] std::size_t final_tensor(int offset) const {
    return kFirstLayer + static_cast<std::size_t>(config_.layers) * kPerLayer +
           static_cast<std::size_t>(offset);
  }

  EncoderConfig config_;
};

}  // namespace layoutattn
