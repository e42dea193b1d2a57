#pragma once
// Depth-aware cross-attention refiners (DCA, G-DCA, CG-DCA) and the targeted
// ablation variants.

#include <optional>
#include <string>
#include <vector>

#include "borelog/baselines.hpp"
#include "borelog/pseudo.hpp"

namespace borelog {

struct DcaConfig {
  std::string variant = "cgdca";
  std::size_t features = 64;
  std::size_t heads = 4;
  std::size_t radius = 2;
  std::size_t groups = 8;
  bool fusion = true;            // false: the attention output feeds the classifier alone
  bool gate = true;              // false: G replaced by ones
  bool confidence_fusion = true; // false: C-bar replaced by ones
  bool confidence_loss = true;   // false: plain cross-entropy
  std::size_t epochs_broad = 180;
  std::size_t epochs_heavy = 1000;
  AdamConfig adam{};

  std::size_t epochs_for(IntervalKind k) const { return k == IntervalKind::kHeavy ? epochs_heavy : epochs_broad; }
};

inline const std::vector<std::string>& dca_variant_names() {
  static const std::vector<std::string> v{"dca",
                                          "gdca",
                                          "cgdca",
                                          "cgdca_no_confloss",
                                          "cgdca_no_conffusion",
                                          "cgdca_no_conf_both",
                                          "cgdca_r0",
                                          "cgdca_no_gate"};
  return v;
}

/// The six targeted ablation variants in reporting order.
inline const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> v{"cgdca",      "cgdca_no_confloss", "cgdca_no_conffusion", "cgdca_no_conf_both",
                                          "cgdca_r0",   "cgdca_no_gate"};
  return v;
}

inline DcaConfig dca_config(const std::string& variant) {
  DcaConfig c;
  c.variant = variant;
  if (variant == "dca") {
    c.fusion = c.gate = c.confidence_fusion = c.confidence_loss = false;
  } else if (variant == "gdca" || variant == "cgdca_no_conf_both") {
    c.confidence_fusion = c.confidence_loss = false;
  } else if (variant == "cgdca") {
  } else if (variant == "cgdca_no_confloss") {
    c.confidence_loss = false;
  } else if (variant == "cgdca_no_conffusion") {
    c.confidence_fusion = false;
  } else if (variant == "cgdca_r0") {
    c.radius = 0;
  } else if (variant == "cgdca_no_gate") {
    c.gate = false;
  } else {
    throw Error("unknown DCA variant '" + variant + "'");
  }
  return c;
}

/// Per-interval tensors consumed by the DCA family.
struct DcaInputs {
  Tensor image;        // [1, 1, H, W] denoised X01
  Tensor logs;         // [1, C, H, 1] aligned logs, one column per depth
  Field confidence;    // H x W, may be empty when unused
  Field weights;       // H x W confidence weights, may be empty when unused
  LabelMap pseudo;     // H x W
  IntervalKind kind = IntervalKind::kBroad;

  std::size_t height() const { return image.dim(2); }
  std::size_t width() const { return image.dim(3); }
  std::size_t log_channels() const { return logs.dim(1); }
};

inline Tensor log_column_tensor(const Field& logs_aligned) {
  const std::size_t H = logs_aligned.rows, C = logs_aligned.cols;
  Tensor t({1, C, H, 1});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h) t[c * H + h] = logs_aligned(h, c);
  return t;
}

inline DcaInputs make_dca_inputs(const Field& x01_hat, const Field& logs_aligned, const PseudoSupervision& ps,
                                 IntervalKind kind) {
  if (logs_aligned.rows != x01_hat.rows) throw Error("make_dca_inputs: log rows do not match image height");
  return {nn::field_tensor(x01_hat), log_column_tensor(logs_aligned), ps.confidence, ps.weights, ps.pseudo, kind};
}

// ---------------------------------------------------------------------------
// Parameters.

inline void declare_dca(ParameterStore& s, const DcaConfig& cfg, std::size_t log_channels) {
  const std::size_t D = cfg.features;
  if (cfg.heads == 0 || D % cfg.heads != 0) throw Error("DCA feature dim must be divisible by the head count");
  if (D % cfg.groups != 0) throw Error("DCA feature dim must be divisible by the group count");
  nn::declare_conv(s, "dca.img.conv1", 1, 32, 3, 3);
  nn::declare_conv(s, "dca.img.conv2", 32, 64, 3, 3);
  nn::declare_conv(s, "dca.img.conv3", 64, D, 3, 3);
  nn::declare_conv(s, "dca.log.conv1", log_channels, 32, 3, 1);
  nn::declare_conv(s, "dca.log.conv2", 32, D, 3, 1);
  nn::declare_conv(s, "dca.attn.wq", D, D, 1, 1, false);
  nn::declare_conv(s, "dca.attn.wk", D, D, 1, 1, false);
  nn::declare_conv(s, "dca.attn.wv", D, D, 1, 1, false);
  nn::declare_conv(s, "dca.attn.wo", D, D, 1, 1, false);
  nn::declare_norm(s, "dca.attn.ln", D);
  if (cfg.fusion && cfg.gate) {
    nn::declare_conv(s, "dca.gate.conv1", 2 * D, D, 1, 1);
    nn::declare_conv(s, "dca.gate.conv2", D, D, 1, 1);
  }
  nn::declare_norm(s, "dca.fuse.gn", D);
  nn::declare_conv(s, "dca.cls.conv1", D, 64, 3, 3);
  nn::declare_conv(s, "dca.cls.conv2", 64, 32, 3, 3);
  nn::declare_conv(s, "dca.cls.conv3", 32, kNumClasses, 1, 1);
}

// ---------------------------------------------------------------------------
// Forward pieces.

struct ModalityFeatures {
  Var image;  // [1, D, H, W]
  Var logs;   // [1, D, H, 1]
};

inline ModalityFeatures encode_modalities(Graph& g, const ParameterStore& s, const Tensor& image, const Tensor& logs) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 1) throw Error("encode_modalities: image must be [1, 1, H, W]");
  if (logs.rank() != 4 || logs.dim(2) != image.dim(2) || logs.dim(3) != 1)
    throw Error("encode_modalities: logs must be [1, C, H, 1] with H = " + std::to_string(image.dim(2)));
  if (logs.dim(1) != s.at("dca.log.conv1.w").dim(1))
    throw Error("encode_modalities: model expects " + std::to_string(s.at("dca.log.conv1.w").dim(1)) + " log channels, got " +
                std::to_string(logs.dim(1)));
  Var fi = ops::relu(nn::conv_same(g, s, "dca.img.conv1", g.constant(image)));
  fi = ops::relu(nn::conv_same(g, s, "dca.img.conv2", fi));
  fi = nn::conv_same(g, s, "dca.img.conv3", fi);
  Var fl = ops::relu(nn::conv_same(g, s, "dca.log.conv1", g.constant(logs)));
  fl = nn::conv_same(g, s, "dca.log.conv2", fl);
  return {fi, fl};
}

/// LayerNorm(Q W_Q + W_O MHA(Q W_Q, K W_K, V W_V)) with windowed depth attention.
inline Var attention_block(Graph& g, const ParameterStore& s, const DcaConfig& cfg, const ModalityFeatures& f) {
  Var q = nn::conv(g, s, "dca.attn.wq", f.image);
  Var k = nn::conv(g, s, "dca.attn.wk", f.logs);
  Var v = nn::conv(g, s, "dca.attn.wv", f.logs);
  Var a = nn::conv(g, s, "dca.attn.wo", ops::depth_window_attention(q, k, v, cfg.heads, cfg.radius));
  return nn::layer_norm(g, s, "dca.attn.ln", ops::add(q, a));
}

inline Var gate_tensor(Graph& g, const ParameterStore& s, Var f_img, Var f_dca) {
  Var h = ops::relu(nn::conv(g, s, "dca.gate.conv1", ops::concat_channels(f_img, f_dca)));
  return ops::sigmoid(nn::conv(g, s, "dca.gate.conv2", h));
}

struct FusionOutput {
  Var z;
  std::optional<Var> gate;  // G, when the variant has one
};

inline FusionOutput fuse(Graph& g, const ParameterStore& s, const DcaConfig& cfg, Var f_img, Var f_dca,
                         const Field* confidence) {
  if (!cfg.fusion) return {nn::group_norm(g, s, "dca.fuse.gn", f_dca, cfg.groups), std::nullopt};
  FusionOutput out;
  Var correction = f_dca;
  if (cfg.gate) {
    out.gate = gate_tensor(g, s, f_img, f_dca);
    correction = ops::mul(*out.gate, f_dca);
  }
  if (cfg.confidence_fusion) {
    if (!confidence || confidence->size() == 0) throw Error("variant " + cfg.variant + " needs a confidence map for fusion");
    if (confidence->rows != f_img.dim(2) || confidence->cols != f_img.dim(3)) throw Error("fuse: confidence map shape mismatch");
    correction = ops::mul_channel_broadcast(correction, g.constant(nn::field_tensor(*confidence)));
  }
  out.z = nn::group_norm(g, s, "dca.fuse.gn", ops::add(f_img, correction), cfg.groups);
  return out;
}

inline Var classify(Graph& g, const ParameterStore& s, Var z) {
  Var h = ops::relu(nn::conv_same(g, s, "dca.cls.conv1", z));
  h = ops::relu(nn::conv_same(g, s, "dca.cls.conv2", h));
  return nn::conv(g, s, "dca.cls.conv3", h);
}

struct DcaForward {
  ModalityFeatures features;
  Var f_dca;
  FusionOutput fusion;
  Var logits;
};

inline DcaForward dca_forward(Graph& g, const ParameterStore& s, const DcaConfig& cfg, const DcaInputs& in) {
  DcaForward f;
  f.features = encode_modalities(g, s, in.image, in.logs);
  f.f_dca = attention_block(g, s, cfg, f.features);
  f.fusion = fuse(g, s, cfg, f.features.image, f.f_dca, &in.confidence);
  f.logits = classify(g, s, f.fusion.z);
  return f;
}

/// Cross-entropy against the pseudo-labels, weighted per pixel when the
/// variant uses the confidence loss.
inline Var dca_loss(Var logits, const DcaConfig& cfg, const DcaInputs& in) {
  if (!cfg.confidence_loss) return ops::cross_entropy(logits, in.pseudo.data);
  if (in.weights.size() != in.pseudo.size()) throw Error("variant " + cfg.variant + " needs a confidence weight map");
  return ops::cross_entropy(logits, in.pseudo.data, &in.weights.data);
}

// ---------------------------------------------------------------------------
// Training and inference.

struct DcaResult {
  ParameterStore params;
  nn::TrainingLog log;
  LabelMap prediction;
};

inline ParameterStore init_dca(const DcaConfig& cfg, std::size_t log_channels, std::uint64_t seed) {
  ParameterStore s(seed);
  declare_dca(s, cfg, log_channels);
  s.metadata()["model"] = "dca";
  s.metadata()["variant"] = cfg.variant;
  s.metadata()["radius"] = std::to_string(cfg.radius);
  return s;
}

inline LabelMap dca_predict(const ParameterStore& s, const DcaConfig& cfg, const DcaInputs& in) {
  Graph g;
  return nn::argmax_classes(dca_forward(g, s, cfg, in).logits.value());
}

inline DcaResult train_dca(const DcaInputs& in, const DcaConfig& cfg, std::uint64_t seed, std::optional<std::size_t> epochs = {}) {
  if (in.pseudo.rows != in.height() || in.pseudo.cols != in.width()) throw Error("train_dca: pseudo-label shape mismatch");
  DcaResult r{init_dca(cfg, in.log_channels(), seed), {}, {}};
  r.log = nn::train_full_batch(
      r.params, [&](Graph& g, const ParameterStore& p) { return dca_loss(dca_forward(g, p, cfg, in).logits, cfg, in); },
      epochs.value_or(cfg.epochs_for(in.kind)), cfg.adam, cfg.variant);
  r.params.metadata()["epochs"] = std::to_string(r.log.losses.size());
  r.prediction = dca_predict(r.params, cfg, in);
  return r;
}

struct AblationRecord {
  std::size_t interval = 0;
  std::string variant;
  LabelMap prediction;
  double final_loss = 0.0;
};

/// Trains the six ablation variants on every interval with one seed and the
/// schedule of each interval's kind (or a common epoch override).
inline std::vector<AblationRecord> run_ablation_matrix(const std::vector<DcaInputs>& intervals, std::uint64_t seed,
                                                       std::optional<std::size_t> epochs = {}) {
  if (intervals.empty()) throw Error("run_ablation_matrix: no targeted intervals");
  std::vector<AblationRecord> out;
  for (std::size_t i = 0; i < intervals.size(); ++i)
    for (const auto& name : ablation_variant_names()) {
      DcaResult r = train_dca(intervals[i], dca_config(name), seed, epochs);
      out.push_back({i, name, std::move(r.prediction), r.log.final_loss()});
    }
  return out;
}

struct GateMaps {
  Field gate;                     // feature mean of G
  std::optional<Field> effective;  // feature mean of G * C-bar
};

inline GateMaps gate_maps(const ParameterStore& s, const DcaInputs& in) {
  const auto it = s.metadata().find("variant");
  const DcaConfig cfg = dca_config(it == s.metadata().end() ? "cgdca" : it->second);
  if (!cfg.fusion || !cfg.gate) throw Error("gate not present in variant " + cfg.variant);
  Graph g;
  const ModalityFeatures f = encode_modalities(g, s, in.image, in.logs);
  const Tensor& G = gate_tensor(g, s, f.image, attention_block(g, s, cfg, f)).value();
  const std::size_t D = G.dim(1), H = G.dim(2), W = G.dim(3), P = H * W;
  GateMaps m;
  m.gate = Field(H, W);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t p = 0; p < P; ++p) m.gate.data[p] += G[d * P + p];
  for (double& v : m.gate.data) v /= static_cast<double>(D);
  if (cfg.confidence_fusion) {
    m.effective = m.gate;
    for (std::size_t p = 0; p < P; ++p) m.effective->data[p] *= in.confidence.data[p];
  }
  return m;
}

}  // namespace borelog
