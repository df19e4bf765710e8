#include "stiformer/model.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "stiformer/kv.h"
#include "stiformer/ops.h"
#include "stiformer/random.h"

namespace stif {

// ---------------------------------------------------------------------------
// Configuration

namespace {

constexpr std::pair<const char*, bool Ablation::*> kAblationFlags[] = {
    {"no_dpgate", &Ablation::no_dpgate},
    {"no_temporal_path", &Ablation::no_temporal_path},
    {"no_feature_path", &Ablation::no_feature_path},
    {"no_itblock", &Ablation::no_itblock},
    {"no_importance", &Ablation::no_importance},
};

}  // namespace

Ablation Ablation::parse(std::string_view list) {
  Ablation out;
  for (const std::string& raw : split(list, ',')) {
    const std::string item = trim(raw);
    if (item.empty() || item == "none") continue;
    bool known = false;
    for (const auto& [name, member] : kAblationFlags) {
      if (item == name) {
        out.*member = true;
        known = true;
      }
    }
    if (!known) throw ConfigError("unknown ablation flag '" + item + "'");
  }
  return out;
}

std::string Ablation::to_string() const {
  std::string out;
  for (const auto& [name, member] : kAblationFlags) {
    if (this->*member) {
      if (!out.empty()) out += ",";
      out += name;
    }
  }
  return out.empty() ? "none" : out;
}

bool Ablation::any() const { return to_string() != "none"; }

void ModelConfig::validate() const {
  const auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ParameterError(std::string("model.") + name + " must be positive");
  };
  positive(n_nodes, "n_nodes");
  positive(lookback, "lookback");
  positive(n_features, "n_features");
  positive(horizon, "horizon");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_layers, "n_layers");
  positive(ffd_hidden, "ffd_hidden");
  if (d_model % n_heads != 0) {
    throw ParameterError("model.d_model (" + std::to_string(d_model) +
                         ") must be divisible by model.n_heads (" + std::to_string(n_heads) + ")");
  }
  if (!(topn_ratio > 0.0 && topn_ratio <= 1.0)) {
    throw ParameterError("model.topn_ratio must lie in (0, 1]");
  }
  if (!(ln_eps > 0.0)) throw ParameterError("model.ln_eps must be positive");
  if (ablation.no_temporal_path && ablation.no_feature_path) {
    throw ParameterError("ablation flags no_temporal_path and no_feature_path cannot be combined");
  }
}

std::size_t ModelConfig::n_keep() const {
  // The slack absorbs products such as 0.1 * 30 = 3.0000000000000004.
  const double raw = std::ceil(topn_ratio * static_cast<double>(n_nodes) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, n_nodes);
}

std::size_t ModelConfig::input_token_width() const {
  return lookback + (uses_importance() ? 1 : 0);
}

std::string ModelConfig::to_text() const {
  std::string out;
  out += "n_nodes=" + std::to_string(n_nodes) + "\n";
  out += "lookback=" + std::to_string(lookback) + "\n";
  out += "n_features=" + std::to_string(n_features) + "\n";
  out += "horizon=" + std::to_string(horizon) + "\n";
  out += "d_model=" + std::to_string(d_model) + "\n";
  out += "n_heads=" + std::to_string(n_heads) + "\n";
  out += "n_layers=" + std::to_string(n_layers) + "\n";
  out += "ffd_hidden=" + std::to_string(ffd_hidden) + "\n";
  out += "topn_ratio=" + format_double(topn_ratio) + "\n";
  out += "ln_eps=" + format_double(ln_eps) + "\n";
  out += "ablation=" + ablation.to_string() + "\n";
  return out;
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
  for (const auto& [key, value] : parse_kv_lines(text)) {
    if (key == "n_nodes") c.n_nodes = parse_size(value, key);
    else if (key == "lookback") c.lookback = parse_size(value, key);
    else if (key == "n_features") c.n_features = parse_size(value, key);
    else if (key == "horizon") c.horizon = parse_size(value, key);
    else if (key == "d_model") c.d_model = parse_size(value, key);
    else if (key == "n_heads") c.n_heads = parse_size(value, key);
    else if (key == "n_layers") c.n_layers = parse_size(value, key);
    else if (key == "ffd_hidden") c.ffd_hidden = parse_size(value, key);
    else if (key == "topn_ratio") c.topn_ratio = parse_double(value, key);
    else if (key == "ln_eps") c.ln_eps = parse_double(value, key);
    else if (key == "ablation") c.ablation = Ablation::parse(value);
    else throw ConfigError("unknown model key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    if (L.importance.w1.defined()) {
      fn(pre + "importance.w1", L.importance.w1);
      fn(pre + "importance.b1", L.importance.b1);
      fn(pre + "importance.w2", L.importance.w2);
      fn(pre + "importance.b2", L.importance.b2);
    }
    fn(pre + "temporal.w_q", L.attn_q);
    fn(pre + "temporal.w_k", L.attn_k);
    fn(pre + "temporal.w_v", L.attn_v);
    fn(pre + "temporal.w_o", L.attn_out);
    fn(pre + "temporal.b_o", L.attn_out_bias);
    fn(pre + "temporal.residual_w", L.residual_w);
    fn(pre + "temporal.residual_b", L.residual_b);
    fn(pre + "temporal.ln_attn_gamma", L.ln_attn_gamma);
    fn(pre + "temporal.ln_attn_beta", L.ln_attn_beta);
    fn(pre + "temporal.ffd_w1", L.ffd_temporal.w1);
    fn(pre + "temporal.ffd_b1", L.ffd_temporal.b1);
    fn(pre + "temporal.ffd_w2", L.ffd_temporal.w2);
    fn(pre + "temporal.ffd_b2", L.ffd_temporal.b2);
    fn(pre + "temporal.ln_ffd_gamma", L.ln_temporal_gamma);
    fn(pre + "temporal.ln_ffd_beta", L.ln_temporal_beta);
    fn(pre + "embed.w", L.embed_w);
    fn(pre + "embed.b", L.embed_b);
    fn(pre + "fusion.w_q", L.fuse_q);
    fn(pre + "fusion.w_k", L.fuse_k);
    fn(pre + "fusion.w_q_inv", L.fuse_q_inv);
    fn(pre + "fusion.w_k_inv", L.fuse_k_inv);
    fn(pre + "neighbor.w_q_feat", L.nbr_q_feat);
    fn(pre + "neighbor.w_k_feat", L.nbr_k_feat);
    fn(pre + "neighbor.w_q_temp", L.nbr_q_temp);
    fn(pre + "neighbor.w_k_temp", L.nbr_k_temp);
    fn(pre + "neighbor.w_v", L.nbr_v);
    fn(pre + "gate.w_feat", L.gate_feat_w);
    fn(pre + "gate.b_feat", L.gate_feat_b);
    fn(pre + "gate.w_temp", L.gate_temp_w);
    fn(pre + "gate.b_temp", L.gate_temp_b);
    fn(pre + "gate.w_mix", L.gate_mix_w);
    fn(pre + "output.ln_mix_gamma", L.ln_mix_gamma);
    fn(pre + "output.ln_mix_beta", L.ln_mix_beta);
    fn(pre + "output.ffd_w1", L.ffd_out.w1);
    fn(pre + "output.ffd_b1", L.ffd_out.b1);
    fn(pre + "output.ffd_w2", L.ffd_out.w2);
    fn(pre + "output.ffd_b2", L.ffd_out.b2);
    fn(pre + "output.ln_gamma", L.ln_out_gamma);
    fn(pre + "output.ln_beta", L.ln_out_beta);
  }
  fn("decoder.w_score", p.decoder.score_w);
  fn("decoder.w_mean", p.decoder.mean_w);
  fn("decoder.b_mean", p.decoder.mean_b);
  fn("decoder.w_dev", p.decoder.dev_w);
  fn("decoder.b_dev", p.decoder.dev_b);
}

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor weight(std::size_t in, std::size_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> values(in * out);
    for (double& v : values) v = rng_.uniform(-limit, limit);
    return Tensor::from({in, out}, std::move(values), true);
  }
  static Tensor zeros(std::size_t n) { return Tensor::zeros({n}, true); }
  static Tensor ones(std::size_t n) { return Tensor::full({n}, 1.0, true); }

  FeedForwardParams feedforward(std::size_t width, std::size_t hidden) {
    FeedForwardParams f;
    f.w1 = weight(width, hidden);
    f.b1 = zeros(hidden);
    f.w2 = weight(hidden, width);
    f.b2 = zeros(width);
    return f;
  }

 private:
  Rng rng_;
};

Tensor feedforward(const Tensor& x, const FeedForwardParams& p) {
  return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

void expect_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw ShapeError(std::string(what) + ": expected " + shape_str(shape) + ", got " +
                     shape_str(t.shape()));
  }
}

// [B, S, h*dh] -> [B, h, S, dh]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const Shape& s = x.shape();
  const std::size_t dh = s[2] / heads;
  return permute(reshape(x, {s[0], s[1], heads, dh}), {0, 2, 1, 3});
}

// [B, h, S, dh] -> [B, S, h*dh]
Tensor merge_heads(const Tensor& x) {
  const Shape& s = x.shape();
  return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Initializer init(seed);
  const std::size_t d = config.d_model;
  const std::size_t t_len = config.lookback;
  const std::size_t f = config.n_features;
  const std::size_t dc = config.head_dim();

  ModelParams p;
  p.layers.resize(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    EncoderLayerParams& L = p.layers[l];
    const std::size_t in = l == 0 ? config.input_token_width() : d;
    if (l == 0) {
      L.importance.w1 = init.weight(t_len, t_len);
      L.importance.b1 = Initializer::zeros(t_len);
      L.importance.w2 = init.weight(t_len, 1);
      L.importance.b2 = Initializer::zeros(1);
    }
    L.attn_q = init.weight(in, d);
    L.attn_k = init.weight(in, d);
    L.attn_v = init.weight(in, d);
    L.attn_out = init.weight(d, d);
    L.attn_out_bias = Initializer::zeros(d);
    L.residual_w = init.weight(in, d);
    L.residual_b = Initializer::zeros(d);
    L.ln_attn_gamma = Initializer::ones(d);
    L.ln_attn_beta = Initializer::zeros(d);
    L.ffd_temporal = init.feedforward(d, config.ffd_hidden);
    L.ln_temporal_gamma = Initializer::ones(d);
    L.ln_temporal_beta = Initializer::zeros(d);
    L.embed_w = init.weight(l == 0 ? t_len : d, d);
    L.embed_b = Initializer::zeros(d);

    L.fuse_q = init.weight(f, dc);
    L.fuse_k = init.weight(f, dc);
    L.fuse_q_inv = init.weight(d, dc);
    L.fuse_k_inv = init.weight(d, dc);

    L.nbr_q_feat = init.weight(f, d);
    L.nbr_k_feat = init.weight(f, d);
    L.nbr_q_temp = init.weight(d, d);
    L.nbr_k_temp = init.weight(d, d);
    L.nbr_v = init.weight(d, d);

    L.gate_feat_w = init.weight(d, d);
    L.gate_feat_b = Initializer::zeros(d);
    L.gate_temp_w = init.weight(d, d);
    L.gate_temp_b = Initializer::zeros(d);
    L.gate_mix_w = init.weight(2 * d, d);

    L.ln_mix_gamma = Initializer::ones(d);
    L.ln_mix_beta = Initializer::zeros(d);
    L.ffd_out = init.feedforward(d, config.ffd_hidden);
    L.ln_out_gamma = Initializer::ones(d);
    L.ln_out_beta = Initializer::zeros(d);
  }
  p.decoder.score_w = init.weight(d, 1);
  p.decoder.mean_w = init.weight(d, config.horizon);
  p.decoder.mean_b = Initializer::zeros(config.horizon);
  p.decoder.dev_w = init.weight(d, config.horizon);
  p.decoder.dev_b = Initializer::zeros(config.horizon);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_params(*this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  visit_params(*this, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit_params(*this, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  visit_params(copy, [](const std::string&, Tensor& t) {
    t = Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
  });
  return copy;
}

void ModelParams::zero_grad() {
  visit_params(*this, [](const std::string&, Tensor& t) { t.zero_grad(); });
}

// ---------------------------------------------------------------------------
// Forward pieces

Tensor invert_tokens(const Tensor& x) {
  if (x.dim() != 3) throw ShapeError("invert_tokens: expected N x T x F, got " + shape_str(x.shape()));
  return permute(x, {0, 2, 1});
}

ImportanceResult importance_weights(const Tensor& x_inv, const ImportanceParams& params) {
  const std::size_t n = x_inv.size(0);
  const std::size_t f = x_inv.size(1);
  Tensor hidden = relu(linear(x_inv, params.w1, params.b1));
  Tensor scores = reshape(linear(hidden, params.w2, params.b2), {n, f});
  Tensor weights = softmax_lastaxis(scores);
  Tensor augmented = concat_last(x_inv, reshape(weights, {n, f, 1}));
  return {weights, augmented};
}

Tensor temporal_self_attention(const Tensor& tokens, const EncoderLayerParams& layer,
                               std::size_t n_heads) {
  const std::size_t d = layer.attn_q.size(1);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d / n_heads));
  Tensor q = split_heads(matmul(tokens, layer.attn_q), n_heads);
  Tensor k = split_heads(matmul(tokens, layer.attn_k), n_heads);
  Tensor v = split_heads(matmul(tokens, layer.attn_v), n_heads);
  Tensor weights = softmax_lastaxis(scale(matmul(q, transpose(k)), inv_scale));
  return linear(merge_heads(matmul(weights, v)), layer.attn_out, layer.attn_out_bias);
}

Tensor encode_temporal(const Tensor& input, const EncoderLayerParams& layer,
                       const ModelConfig& config, std::size_t layer_index) {
  Tensor tokens;
  if (layer_index == 0) {
    expect_shape(input, {config.n_nodes, config.lookback, config.n_features}, "encode_temporal");
    tokens = invert_tokens(input);
    if (config.uses_importance()) tokens = importance_weights(tokens, layer.importance).augmented;
  } else {
    expect_shape(input, {config.n_nodes, config.n_features, config.d_model}, "encode_temporal");
    tokens = input;
  }
  if (config.ablation.no_itblock) return linear(tokens, layer.embed_w, layer.embed_b);

  Tensor attended = temporal_self_attention(tokens, layer, config.n_heads);
  Tensor x_out = layer_norm(add(attended, linear(tokens, layer.residual_w, layer.residual_b)),
                            layer.ln_attn_gamma, layer.ln_attn_beta, config.ln_eps);
  return layer_norm(add(x_out, feedforward(x_out, layer.ffd_temporal)), layer.ln_temporal_gamma,
                    layer.ln_temporal_beta, config.ln_eps);
}

FusionResult double_direction_fusion(const Tensor& z_tokens, const EncoderLayerParams& layer) {
  if (z_tokens.dim() != 3) {
    throw ShapeError("double_direction_fusion: expected N x F x D, got " +
                     shape_str(z_tokens.shape()));
  }
  Tensor z = transpose(z_tokens);  // N x D x F
  Tensor q = matmul(z, layer.fuse_q);
  Tensor k = matmul(z, layer.fuse_k);
  Tensor q_inv = matmul(z_tokens, layer.fuse_q_inv);
  Tensor k_inv = matmul(z_tokens, layer.fuse_k_inv);
  FusionResult r;
  r.temp_weights = softmax_lastaxis(matmul(q, transpose(k_inv)));
  r.feat_weights = softmax_lastaxis(matmul(q_inv, transpose(k)));
  r.h_temp = sum_axis(mul(r.temp_weights, z), 2);
  r.h_feat = sum_axis(mul(r.feat_weights, z_tokens), 2);
  return r;
}

NeighborResult ncorr_attention(const Tensor& node_repr, const Tensor& values, const Tensor& w_q,
                               const Tensor& w_k, std::size_t n_heads, std::size_t n_keep) {
  const std::size_t n = node_repr.size(0);
  const std::size_t d = w_q.size(1);
  if (values.dim() != 3 || values.size(0) != n || values.size(2) != d) {
    throw ShapeError("ncorr_attention: values " + shape_str(values.shape()) +
                     " do not match node count " + std::to_string(n) + " and width " +
                     std::to_string(d));
  }
  if (n_keep < 1 || n_keep > n) {
    throw ParameterError("ncorr_attention: n_keep=" + std::to_string(n_keep) + " outside [1, " +
                         std::to_string(n) + "]");
  }
  const std::size_t f = values.size(1);
  const std::size_t dh = d / n_heads;

  // [N, d] -> [h, N, dh]
  const auto heads_first = [&](const Tensor& x) {
    return permute(reshape(x, {n, n_heads, dh}), {1, 0, 2});
  };
  Tensor q = heads_first(matmul(node_repr, w_q));
  Tensor k = heads_first(matmul(node_repr, w_k));
  Tensor scores = matmul(q, transpose(k));  // h x N x N

  Tensor support;
  {
    NoGradGuard guard;
    support = topn_indicator(mean_axis(scores, 0), n_keep);
  }
  Tensor weights = softmax_lastaxis(
      scale(masked_fill(scores, support), 1.0 / std::sqrt(static_cast<double>(dh))));

  Tensor v = reshape(permute(reshape(values, {n, f, n_heads, dh}), {2, 0, 1, 3}),
                     {n_heads, n, f * dh});
  Tensor mixed = reshape(matmul(weights, v), {n_heads, n, f, dh});
  NeighborResult r;
  r.output = reshape(permute(mixed, {1, 2, 0, 3}), {n, f, d});
  {
    NoGradGuard guard;
    r.attention = mean_axis(weights, 0);
  }
  return r;
}

Tensor dp_gate(const Tensor& o_feat, const Tensor& o_temp, const EncoderLayerParams& layer,
               const Ablation& ablation) {
  if (ablation.no_temporal_path && ablation.no_feature_path) {
    throw ParameterError("dp_gate: both paths removed");
  }
  const auto self_gate = [](const Tensor& o, const Tensor& w, const Tensor& b) {
    return mul(tanh(linear(o, w, b)), o);
  };
  if (ablation.no_temporal_path) return self_gate(o_feat, layer.gate_feat_w, layer.gate_feat_b);
  if (ablation.no_feature_path) return self_gate(o_temp, layer.gate_temp_w, layer.gate_temp_b);
  if (o_feat.shape() != o_temp.shape()) {
    throw ShapeError("dp_gate: path shapes differ, " + shape_str(o_feat.shape()) + " vs " +
                     shape_str(o_temp.shape()));
  }
  if (ablation.no_dpgate) return scale(add(o_feat, o_temp), 0.5);

  Tensor gated_feat = self_gate(o_feat, layer.gate_feat_w, layer.gate_feat_b);
  Tensor gated_temp = self_gate(o_temp, layer.gate_temp_w, layer.gate_temp_b);
  Tensor mix = sigmoid(matmul(concat_last(o_feat, o_temp), layer.gate_mix_w));
  return add(mul(gated_feat, mix), mul(gated_temp, add_scalar(scale(mix, -1.0), 1.0)));
}

DecoderOutput decode(const Tensor& m, const DecoderParams& params) {
  if (m.dim() != 3) throw ShapeError("decode: expected N x F x d, got " + shape_str(m.shape()));
  const std::size_t n = m.size(0);
  const std::size_t f = m.size(1);
  Tensor token_weights = softmax_lastaxis(reshape(matmul(m, params.score_w), {n, f}));
  Tensor mixed = sum_axis(mul(reshape(token_weights, {n, f, 1}), m), 1);
  DecoderOutput out;
  out.mean = linear(mixed, params.mean_w, params.mean_b);
  out.dev = tanh(linear(mixed, params.dev_w, params.dev_b));
  out.y_hat = add(out.mean, exp(out.dev));
  return out;
}

ForwardResult forward(const Tensor& x, const ModelParams& params, const ModelConfig& config) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw NumericError("forward: input contains non-finite values");
  }
  if (params.layers.size() != config.n_layers) {
    throw ShapeError("forward: parameter layer count does not match config");
  }
  const Ablation& ab = config.ablation;
  ForwardResult result;
  Tensor h = x;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const EncoderLayerParams& L = params.layers[l];
    Tensor z = encode_temporal(h, L, config, l);
    FusionResult fused = double_direction_fusion(z, L);
    Tensor values = matmul(z, L.nbr_v);

    LayerAttention maps;
    Tensor o_feat;
    Tensor o_temp;
    if (!ab.no_feature_path) {
      NeighborResult r = ncorr_attention(fused.h_feat, values, L.nbr_q_feat, L.nbr_k_feat,
                                         config.n_heads, config.n_keep());
      o_feat = r.output;
      maps.feature_path.weights = r.attention;
    }
    if (!ab.no_temporal_path) {
      NeighborResult r = ncorr_attention(fused.h_temp, values, L.nbr_q_temp, L.nbr_k_temp,
                                         config.n_heads, config.n_keep());
      o_temp = r.output;
      maps.temporal_path.weights = r.attention;
    }
    Tensor m = dp_gate(o_feat, o_temp, L, ab);
    Tensor u = layer_norm(add(z, m), L.ln_mix_gamma, L.ln_mix_beta, config.ln_eps);
    h = layer_norm(add(u, feedforward(u, L.ffd_out)), L.ln_out_gamma, L.ln_out_beta,
                   config.ln_eps);
    result.attention.push_back(std::move(maps));
  }
  result.y_hat = decode(h, params.decoder).y_hat;
  return result;
}

}  // namespace stif
