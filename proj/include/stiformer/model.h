#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stiformer/tensor.h"

namespace stif {

/// Component removals used for ablation runs.
struct Ablation {
  bool no_dpgate = false;         // average the two paths instead of gating
  bool no_temporal_path = false;  // keep only the feature path
  bool no_feature_path = false;   // keep only the temporal path
  bool no_itblock = false;        // linear token embedding instead of the inverted temporal block
  bool no_importance = false;     // skip per-feature importance weights

  /// Comma-separated flag names; empty or "none" yields no flags.
  static Ablation parse(std::string_view list);
  /// Canonical comma-separated form, "none" when empty.
  std::string to_string() const;
  bool any() const;
  bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
  std::size_t n_nodes = 0;
  std::size_t lookback = 30;
  std::size_t n_features = 0;
  std::size_t horizon = 1;
  std::size_t d_model = 256;
  std::size_t n_heads = 4;
  std::size_t n_layers = 3;
  std::size_t ffd_hidden = 256;
  double topn_ratio = 0.10;
  double ln_eps = 1e-5;
  Ablation ablation;

  /// Throws ParameterError on an inconsistent configuration.
  void validate() const;

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Neighbours kept per row of the node attention, ceil(topn_ratio * N).
  std::size_t n_keep() const;
  /// Width of first-layer tokens: T, plus one when importance weights are appended.
  std::size_t input_token_width() const;
  bool uses_importance() const { return !ablation.no_importance && !ablation.no_itblock; }

  /// Flat "key=value" lines; round-trips through from_text.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
  bool operator==(const ModelConfig&) const = default;
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;
};

struct ImportanceParams {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
  ImportanceParams importance;  // first layer only

  // Inverted temporal block.
  Tensor attn_q, attn_k, attn_v, attn_out, attn_out_bias;
  Tensor residual_w, residual_b;
  Tensor ln_attn_gamma, ln_attn_beta;
  FeedForwardParams ffd_temporal;
  Tensor ln_temporal_gamma, ln_temporal_beta;
  Tensor embed_w, embed_b;  // replaces the block under no_itblock

  // Double direction fusion: the transposed view (rows of width F) and the
  // token view (rows of width d_model) map to a common width.
  Tensor fuse_q, fuse_k, fuse_q_inv, fuse_k_inv;

  // N-neighbour attention. One value map serves both paths.
  Tensor nbr_q_feat, nbr_k_feat, nbr_q_temp, nbr_k_temp, nbr_v;

  // Double-path gate.
  Tensor gate_feat_w, gate_feat_b, gate_temp_w, gate_temp_b, gate_mix_w;

  // Post-gate residual + feedforward.
  Tensor ln_mix_gamma, ln_mix_beta;
  FeedForwardParams ffd_out;
  Tensor ln_out_gamma, ln_out_beta;
};

struct DecoderParams {
  Tensor score_w, mean_w, mean_b, dev_w, dev_b;
};

struct ModelParams {
  std::vector<EncoderLayerParams> layers;
  DecoderParams decoder;

  /// Glorot-uniform weights, zero biases, unit/zero layer-norm affine.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Every learnable tensor with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
  /// Deep copy with fresh leaves.
  ModelParams clone() const;
  void zero_grad();
};

/// Node-to-node attention of one path in one layer, averaged over heads.
struct PathAttention {
  Tensor weights;  // N x N, row-stochastic; undefined when the path is ablated
};

struct LayerAttention {
  PathAttention temporal_path;
  PathAttention feature_path;
};

using AttentionMaps = std::vector<LayerAttention>;

// --- Building blocks ------------------------------------------------------

/// N x T x F -> N x F x T.
Tensor invert_tokens(const Tensor& x);

struct ImportanceResult {
  Tensor weights;    // N x F, softmax over features
  Tensor augmented;  // N x F x (T+1), weight appended to each token
};
ImportanceResult importance_weights(const Tensor& x_inv, const ImportanceParams& params);

/// Multi-head scaled dot-product attention over the F tokens of each node.
Tensor temporal_self_attention(const Tensor& tokens, const EncoderLayerParams& layer,
                               std::size_t n_heads);

/// Inverted temporal block. Layer 0 takes raw N x T x F windows; deeper
/// layers take the previous layer's N x F x d_model output.
Tensor encode_temporal(const Tensor& input, const EncoderLayerParams& layer,
                       const ModelConfig& config, std::size_t layer_index);

struct FusionResult {
  Tensor h_temp;       // N x D
  Tensor h_feat;       // N x F
  Tensor temp_weights;  // N x D x F, rows over features sum to 1
  Tensor feat_weights;  // N x F x D, rows over embedding sum to 1
};
FusionResult double_direction_fusion(const Tensor& z_tokens, const EncoderLayerParams& layer);

struct NeighborResult {
  Tensor output;     // N x F x d_model
  Tensor attention;  // N x N, head-averaged, detached
};
/// Node-level attention with per-row top-n_keep support. `values` is the
/// shared N x F x d_model value projection. The support is chosen on the
/// head-averaged scores and shared across heads.
NeighborResult ncorr_attention(const Tensor& node_repr, const Tensor& values, const Tensor& w_q,
                               const Tensor& w_k, std::size_t n_heads, std::size_t n_keep);

Tensor dp_gate(const Tensor& o_feat, const Tensor& o_temp, const EncoderLayerParams& layer,
               const Ablation& ablation);

struct DecoderOutput {
  Tensor y_hat;  // N x t
  Tensor mean;
  Tensor dev;
};
DecoderOutput decode(const Tensor& m, const DecoderParams& params);

struct ForwardResult {
  Tensor y_hat;
  AttentionMaps attention;
};

/// Full network. Throws NumericError on non-finite input.
ForwardResult forward(const Tensor& x, const ModelParams& params, const ModelConfig& config);

}  // namespace stif
