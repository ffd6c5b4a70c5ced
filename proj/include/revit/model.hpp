#pragma once

#include <map>
#include <utility>

#include "json.hpp"
#include "revit/attention.hpp"

namespace revit {

enum class Variant { vit, revit };

inline Variant parse_variant(const std::string& s) {
  if (s == "vit") return Variant::vit;
  if (s == "revit") return Variant::revit;
  throw ValidationError("unknown variant '" + s + "' (expected vit or revit)");
}

inline std::string variant_name(Variant v) { return v == Variant::vit ? "vit" : "revit"; }

constexpr double kLayerNormEps = 1e-5;

/// Architecture description; every tensor shape in the model derives from it.
struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t dim = 64;
  std::size_t depth = 6;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 10;
  Variant variant = Variant::revit;
  AlphaMode alpha_mode{};
  std::uint64_t seed = 0;
  // Per-channel input normalization, applied after any perturbation. Both
  // empty means "derive from the training split"; train() fills them in.
  std::vector<double> input_mean{0.5, 0.5, 0.5};
  std::vector<double> input_std{0.25, 0.25, 0.25};

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t patches() const { return grid() * grid(); }
  std::size_t tokens() const { return patches() + 1; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t hidden() const { return mlp_ratio * dim; }
  bool residual_attention() const { return variant == Variant::revit; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ValidationError(std::string("model.") + name + " must be positive");
    };
    positive(image_size, "image_size");
    positive(patch_size, "patch_size");
    positive(channels, "channels");
    positive(dim, "dim");
    positive(depth, "depth");
    positive(heads, "heads");
    positive(mlp_ratio, "mlp_ratio");
    positive(num_classes, "num_classes");
    if (image_size % patch_size != 0)
      throw ValidationError("model.image_size " + std::to_string(image_size) +
                            " not divisible by patch_size " + std::to_string(patch_size));
    if (dim % heads != 0)
      throw ValidationError("model.dim " + std::to_string(dim) + " not divisible by heads " +
                            std::to_string(heads));
    const bool derive = input_mean.empty() && input_std.empty();
    if (!derive && (input_mean.size() != channels || input_std.size() != channels))
      throw ValidationError("model.input_mean/input_std need one value per channel (or both empty)");
    for (double s : input_std)
      if (!(s > 0.0)) throw ValidationError("model.input_std must be positive");
    if (alpha_mode.kind == AlphaKind::fixed && !(alpha_mode.value >= 0.0 && alpha_mode.value <= 1.0))
      throw ValidationError("model.alpha_mode fixed value outside [0, 1]");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},   {"patch_size", c.patch_size},
                     {"channels", c.channels},       {"dim", c.dim},
                     {"depth", c.depth},             {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio},     {"num_classes", c.num_classes},
                     {"variant", variant_name(c.variant)}, {"alpha_mode", c.alpha_mode.str()},
                     {"seed", c.seed},               {"input_mean", c.input_mean},
                     {"input_std", c.input_std}};
}

/// Reads keys present in `j` over the defaults in `c`; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ValidationError("model config must be a JSON object");
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "image_size") c.image_size = val.get<std::size_t>();
      else if (key == "patch_size") c.patch_size = val.get<std::size_t>();
      else if (key == "channels") c.channels = val.get<std::size_t>();
      else if (key == "dim") c.dim = val.get<std::size_t>();
      else if (key == "depth") c.depth = val.get<std::size_t>();
      else if (key == "heads") c.heads = val.get<std::size_t>();
      else if (key == "mlp_ratio") c.mlp_ratio = val.get<std::size_t>();
      else if (key == "num_classes") c.num_classes = val.get<std::size_t>();
      else if (key == "variant") c.variant = parse_variant(val.get<std::string>());
      else if (key == "alpha_mode") c.alpha_mode = AlphaMode::parse(val.get<std::string>());
      else if (key == "seed") c.seed = val.get<std::uint64_t>();
      else if (key == "input_mean") c.input_mean = val.get<std::vector<double>>();
      else if (key == "input_std") c.input_std = val.get<std::vector<double>>();
      else throw ValidationError("unknown model config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("model config key '" + key + "': " + e.what());
    }
  }
}

template <typename T>
struct BlockParams {
  Tensor<T> norm1_gamma, norm1_beta;
  AttentionParams<T> attn;
  Tensor<T> norm2_gamma, norm2_beta;
  Tensor<T> fc1_weight, fc1_bias;  // [dim, hidden], [hidden]
  Tensor<T> fc2_weight, fc2_bias;  // [hidden, dim], [dim]
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
struct ModelParams {
  Tensor<T> patch_weight;  // [patch_dim, dim]
  Tensor<T> patch_bias;    // [dim]
  Tensor<T> cls_token;     // [1, dim]
  Tensor<T> pos_embed;     // [tokens, dim]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> norm_gamma, norm_beta;
  Tensor<T> head_weight;  // [dim, classes]
  Tensor<T> head_bias;    // [classes]
  AlphaGate<T> alpha;

  /// Every trainable tensor with its stable name, in a fixed order. The
  /// handles alias the model's storage.
  NamedTensors<T> named() const {
    NamedTensors<T> out{{"patch_embed.weight", patch_weight},
                        {"patch_embed.bias", patch_bias},
                        {"cls_token", cls_token},
                        {"pos_embed", pos_embed}};
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const auto& b = blocks[l];
      const std::string p = "blocks." + std::to_string(l) + ".";
      out.emplace_back(p + "norm1.weight", b.norm1_gamma);
      out.emplace_back(p + "norm1.bias", b.norm1_beta);
      out.emplace_back(p + "attn.wq", b.attn.wq);
      out.emplace_back(p + "attn.wk", b.attn.wk);
      out.emplace_back(p + "attn.wv", b.attn.wv);
      out.emplace_back(p + "attn.wo", b.attn.wo);
      out.emplace_back(p + "norm2.weight", b.norm2_gamma);
      out.emplace_back(p + "norm2.bias", b.norm2_beta);
      out.emplace_back(p + "mlp.fc1.weight", b.fc1_weight);
      out.emplace_back(p + "mlp.fc1.bias", b.fc1_bias);
      out.emplace_back(p + "mlp.fc2.weight", b.fc2_weight);
      out.emplace_back(p + "mlp.fc2.bias", b.fc2_bias);
    }
    out.emplace_back("norm.weight", norm_gamma);
    out.emplace_back("norm.bias", norm_beta);
    out.emplace_back("head.weight", head_weight);
    out.emplace_back("head.bias", head_bias);
    if (alpha.trainable()) out.emplace_back("alpha.raw", alpha.raw());
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t.numel();
    return n;
  }

  /// Deep copy with independent storage.
  ModelParams clone() const {
    ModelParams c = *this;
    auto cp = [](Tensor<T>& t) { t = Tensor<T>(t.shape(), t.vec(), t.requires_grad()); };
    cp(c.patch_weight);
    cp(c.patch_bias);
    cp(c.cls_token);
    cp(c.pos_embed);
    for (auto& b : c.blocks) {
      for (auto* t : {&b.norm1_gamma, &b.norm1_beta, &b.attn.wq, &b.attn.wk, &b.attn.wv, &b.attn.wo,
                      &b.norm2_gamma, &b.norm2_beta, &b.fc1_weight, &b.fc1_bias, &b.fc2_weight,
                      &b.fc2_bias})
        cp(*t);
    }
    cp(c.norm_gamma);
    cp(c.norm_beta);
    cp(c.head_weight);
    cp(c.head_bias);
    if (c.alpha.trainable()) cp(c.alpha.raw());
    return c;
  }

  void zero_grad() const {
    for (auto [name, t] : named()) t.zero_grad();
  }
};

/// Parameter set with the right shapes, weights zero, norms at identity.
template <typename T>
ModelParams<T> make_params(const ModelConfig& cfg) {
  cfg.validate();
  auto param = [](Shape s, T fill = T{0}) { return Tensor<T>(std::move(s), fill, true); };
  ModelParams<T> p;
  const std::size_t D = cfg.dim;
  p.patch_weight = param({cfg.patch_dim(), D});
  p.patch_bias = param({D});
  p.cls_token = param({1, D});
  p.pos_embed = param({cfg.tokens(), D});
  p.blocks.resize(cfg.depth);
  for (auto& b : p.blocks) {
    b.norm1_gamma = param({D}, T{1});
    b.norm1_beta = param({D});
    b.attn.wq = param({D, D});
    b.attn.wk = param({D, D});
    b.attn.wv = param({D, D});
    b.attn.wo = param({D, D});
    b.attn.heads = cfg.heads;
    b.norm2_gamma = param({D}, T{1});
    b.norm2_beta = param({D});
    b.fc1_weight = param({D, cfg.hidden()});
    b.fc1_bias = param({cfg.hidden()});
    b.fc2_weight = param({cfg.hidden(), D});
    b.fc2_bias = param({D});
  }
  p.norm_gamma = param({D}, T{1});
  p.norm_beta = param({D});
  p.head_weight = param({D, cfg.num_classes});
  p.head_bias = param({cfg.num_classes});
  if (cfg.residual_attention()) p.alpha = AlphaGate<T>(cfg.alpha_mode, cfg.depth);
  else p.alpha = AlphaGate<T>(AlphaMode{AlphaKind::fixed, 1.0}, cfg.depth);
  return p;
}

/// Deterministic initialization: weight matrices from a truncated normal
/// (std 0.02), class token and positional embedding from normal(0, 0.02),
/// biases zero, norm scales one, alpha raw zero.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  auto p = make_params<T>(cfg);
  Rng rng(seed);
  auto trunc = [&rng](Tensor<T>& t) {
    for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.02));
  };
  auto normal = [&rng](Tensor<T>& t) {
    for (auto& v : t.data()) v = static_cast<T>(0.02 * rng.normal());
  };
  trunc(p.patch_weight);
  normal(p.cls_token);
  normal(p.pos_embed);
  for (auto& b : p.blocks) {
    trunc(b.attn.wq);
    trunc(b.attn.wk);
    trunc(b.attn.wv);
    trunc(b.attn.wo);
    trunc(b.fc1_weight);
    trunc(b.fc2_weight);
  }
  trunc(p.head_weight);
  return p;
}

template <typename T>
struct ForwardRecord {
  Tensor<T> logits;                 // [B, classes]
  std::vector<Tensor<T>> weights;   // per layer [B, H, N, N], when captured
  std::vector<Tensor<T>> scores;    // per layer [B, H, N, N], when captured
  std::vector<Tensor<T>> features;  // per layer [B, N, dim], when captured
};

/// images [B, C, S, S] -> tokens [B, N, dim] with the class token at index 0.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& images, const ModelConfig& cfg, const ModelParams<T>& p) {
  if (images.rank() != 4 || images.extent(1) != cfg.channels || images.extent(2) != cfg.image_size ||
      images.extent(3) != cfg.image_size)
    throw DimensionError("patch_embed: images " + shape_str(images.shape()) + " do not match [B, " +
                         std::to_string(cfg.channels) + ", " + std::to_string(cfg.image_size) + ", " +
                         std::to_string(cfg.image_size) + "]");
  const std::size_t B = images.extent(0), C = cfg.channels, g = cfg.grid(), ps = cfg.patch_size;
  auto patches = reshape(permute(reshape(images, Shape{B, C, g, ps, g, ps}), {0, 2, 4, 1, 3, 5}),
                         Shape{B, g * g, cfg.patch_dim()});
  auto embedded = add(matmul(patches, p.patch_weight), p.patch_bias);
  auto cls = broadcast_to(reshape(p.cls_token, Shape{1, 1, cfg.dim}), Shape{B, 1, cfg.dim});
  return add(concat(cls, embedded, 1), p.pos_embed);
}

template <typename T>
struct BlockOutput {
  Tensor<T> x;
  ScoreState<T> state;
  Tensor<T> weights;
};

/// Pre-norm block: x + MHSA(LN(x)), then x + MLP(LN(x)). The score state is
/// only threaded through when `gate` is non-null (residual attention).
template <typename T>
BlockOutput<T> block_forward(const Tensor<T>& x, const BlockParams<T>& b, const ScoreState<T>* prev,
                             const AlphaGate<T>* gate, std::size_t layer) {
  auto h = layer_norm(x, b.norm1_gamma, b.norm1_beta, kLayerNormEps);
  auto attn = mhsa_forward(h, b.attn, prev, gate, layer);
  auto x1 = add(x, attn.out);
  auto h2 = layer_norm(x1, b.norm2_gamma, b.norm2_beta, kLayerNormEps);
  auto mlp = add(matmul(gelu(add(matmul(h2, b.fc1_weight), b.fc1_bias)), b.fc2_weight), b.fc2_bias);
  return {add(x1, mlp), attn.state, attn.weights};
}

/// Classification head on the class token: LN -> linear. tokens [B, N, dim].
template <typename T>
Tensor<T> classify(const Tensor<T>& tokens, const ModelConfig& cfg, const ModelParams<T>& p) {
  const std::size_t B = tokens.extent(0);
  auto cls = reshape(slice(tokens, 1, 0, 1), Shape{B, cfg.dim});
  auto normed = layer_norm(cls, p.norm_gamma, p.norm_beta, kLayerNormEps);
  return add(matmul(normed, p.head_weight), p.head_bias);
}

/// Full forward pass over normalized images [B, C, S, S].
template <typename T>
ForwardRecord<T> model_forward(const Tensor<T>& images, const ModelConfig& cfg, const ModelParams<T>& p,
                               bool capture = false) {
  if (p.blocks.size() != cfg.depth)
    throw ValidationError("model_forward: parameter depth does not match config");
  ForwardRecord<T> rec;
  auto x = patch_embed(images, cfg, p);
  const AlphaGate<T>* gate = cfg.residual_attention() ? &p.alpha : nullptr;
  std::optional<ScoreState<T>> state;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    auto out = block_forward(x, p.blocks[l], state ? &*state : nullptr, gate, l);
    x = out.x;
    state = out.state;
    if (capture) {
      rec.weights.push_back(out.weights);
      rec.scores.push_back(out.state.scores);
      rec.features.push_back(out.x);
    }
  }
  rec.logits = classify(x, cfg, p);
  return rec;
}

/// Single-image forward: image [C, S, S]; the record's tensors drop the batch axis.
template <typename T>
ForwardRecord<T> model_forward_image(const Tensor<T>& image, const ModelConfig& cfg,
                                     const ModelParams<T>& p, bool capture = false) {
  if (image.rank() != 3) throw DimensionError("model_forward_image: expected [C, S, S], got " + shape_str(image.shape()));
  Shape s{1};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  auto rec = model_forward(reshape(image, s), cfg, p, capture);
  auto squeeze = [](const Tensor<T>& t) { return reshape(t, Shape(t.shape().begin() + 1, t.shape().end())); };
  rec.logits = squeeze(rec.logits);
  for (auto* v : {&rec.weights, &rec.scores, &rec.features})
    for (auto& t : *v) t = squeeze(t);
  return rec;
}

}  // namespace revit
