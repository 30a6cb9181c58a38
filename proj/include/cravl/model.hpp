#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cravl/fusion.hpp"
#include "cravl/losses.hpp"

namespace cravl {

// The full trainable state: content encoder, online/target style encoders,
// frozen text encoder, both fusion stacks, and the learnable loss scalars.
template <typename T>
struct Model {
  using Scalar = T;

  ModelDims dims;
  bool style_encoder = true;
  bool cross_attention = true;
  double alpha = 0.1;  // kept in double so checkpoints round-trip bit-exactly
  LossVariant variant = LossVariant::SigCL;

  VisionEncoder<T> content;
  VisionEncoder<T> style_online;
  VisionEncoder<T> style_target;
  TextEncoder<T> text;
  FusionStack<T> fus_img;
  FusionStack<T> fus_txt;
  Param<T> log_t;
  Param<T> b;

  void init(uint64_t seed, const LossConfig& loss = {}) {
    dims.validate();
    variant = loss.variant;
    Rng rng(Rng::mix(seed, 0x9d01ULL));
    content.init("content", dims, dims.content_layers, rng);
    style_online.init("style_online", dims, dims.style_layers, rng);
    style_target.init("style_target", dims, dims.style_layers, rng);
    // The target starts as an exact copy of the online branch and never
    // receives gradients; it only moves through EMA updates.
    copy_weights(style_target, style_online);
    style_target.set_trainable(false);
    text.init("text", dims, rng);
    fus_img.init("fus_img", dims, rng);
    fus_txt.init("fus_txt", dims, rng);
    log_t.name = "loss/log_t";
    log_t.init_zero(1, 1);
    log_t.w(0, 0) = static_cast<T>(std::log(loss.init_t));
    log_t.decay = false;
    b.name = "loss/b";
    b.init_zero(1, 1);
    b.w(0, 0) = static_cast<T>(loss.init_b);
    b.decay = false;
  }

  // Every parameter in a fixed, checkpoint-stable order.
  std::vector<Param<T>*> all_params() {
    std::vector<Param<T>*> out;
    content.collect(out);
    style_online.collect(out);
    style_target.collect(out);
    text.collect(out);
    fus_img.collect(out);
    fus_txt.collect(out);
    out.push_back(&log_t);
    out.push_back(&b);
    return out;
  }

  // Parameters the optimizer updates during joint training: the text encoder
  // stays frozen, the style target only moves via EMA, and the style branch
  // drops out entirely under the no-style ablation.
  std::vector<Param<T>*> trainable_params() {
    std::vector<Param<T>*> out;
    content.collect(out);
    if (style_encoder) style_online.collect(out);
    fus_img.collect(out);
    fus_txt.collect(out);
    out.push_back(&log_t);
    out.push_back(&b);
    return out;
  }

  static void copy_weights(VisionEncoder<T>& dst, VisionEncoder<T>& src) {
    std::vector<Param<T>*> d, s;
    dst.collect(d);
    src.collect(s);
    for (size_t i = 0; i < d.size(); ++i) d[i]->w = s[i]->w;
  }
};

// Token batch in the stacked-row representation the tape ops consume.
template <typename T>
struct TokenBatch {
  std::vector<int32_t> ids;
  Groups groups;
  std::vector<T> valid;  // 1 for non-pad rows

  static TokenBatch from_sequences(const std::vector<TokenSequence>& seqs) {
    TokenBatch tb;
    tb.groups.offsets.push_back(0);
    for (const auto& s : seqs) {
      for (int32_t id : s.ids) {
        tb.ids.push_back(id);
        tb.valid.push_back(id == kPadToken ? T(0) : T(1));
      }
      tb.groups.offsets.push_back(static_cast<int>(tb.ids.size()));
    }
    return tb;
  }
};

template <typename T>
struct EmbedRefs {
  Ref img_tokens;
  Ref q_c;
  Ref q_s;  // invalid when the style branch is disabled
  Ref q_i;
  Ref txt_states;
  Ref q_j;
  Ref z_img;
  Ref z_txt;
};

// Inference-path forward: the content branch consumes content_patches, the
// style *target* branch consumes style_patches, and q_i = q_c + alpha * q_s
// feeds the fusion stacks together with the text token states.
template <typename T>
EmbedRefs<T> joint_embed(Tape<T>& t, Model<T>& m, const MatX<T>& content_patches,
                         const MatX<T>& style_patches, const TokenBatch<T>& tokens, int batch,
                         AttnCapture<T>* capture = nullptr) {
  EmbedRefs<T> out;
  auto [img_tokens, q_c] = m.content.forward(t, m.dims, content_patches, batch);
  out.img_tokens = img_tokens;
  out.q_c = q_c;
  out.q_i = q_c;
  if (m.style_encoder) {
    auto [st_tokens, q_s] = m.style_target.forward(t, m.dims, style_patches, batch);
    (void)st_tokens;
    out.q_s = q_s;
    out.q_i = combine_visual(t, q_c, q_s, static_cast<T>(m.alpha));
  }
  auto [txt_states, q_j] = m.text.forward(t, m.dims, tokens.ids, tokens.groups, tokens.valid);
  out.txt_states = txt_states;
  out.q_j = q_j;
  auto z = fuse(t, m.fus_img, m.fus_txt, m.dims, m.cross_attention, out.img_tokens,
                Groups::uniform(batch, m.dims.n_patches()), out.q_i, txt_states, tokens.groups,
                tokens.valid, capture);
  out.z_img = z.z_img;
  out.z_txt = z.z_txt;
  return out;
}

// ---------------------------------------------------------------------------
// Attention extraction (precision-independent view for the viz tooling)
// ---------------------------------------------------------------------------

struct AttentionTensor {
  int heads = 0;
  int queries = 0;
  int keys = 0;
  std::vector<double> w;  // heads x queries x keys

  double at(int h, int q, int k) const {
    return w[(static_cast<size_t>(h) * queries + q) * keys + k];
  }
  double& at(int h, int q, int k) {
    return w[(static_cast<size_t>(h) * queries + q) * keys + k];
  }
};

// Post-softmax cross-attention weights of one fusion block for a single
// (image, tokens) pair. Throws UsageError when layer is out of range.
template <typename T>
AttentionTensor extract_attention(Model<T>& m, const ImageBuffer& image,
                                  const TokenSequence& tokens, int layer, FusionSideKind side) {
  if (layer < 0 || layer >= m.dims.fusion_blocks) {
    throw UsageError("attention layer index out of range");
  }
  Tape<T> tape;
  MatX<T> patches = patchify<T>(image, m.dims.patch);
  TokenBatch<T> tb = TokenBatch<T>::from_sequences({tokens});
  AttnCapture<T> capture;
  capture.layer = layer;
  capture.side = side;
  joint_embed(tape, m, patches, patches, tb, 1, &capture);
  if (!capture.probs) throw NumericError("attention capture failed");

  const auto& probs = *capture.probs;
  AttentionTensor out;
  out.heads = probs.heads;
  out.queries = probs.q_groups.size(0);
  out.keys = probs.kv_groups.size(0);
  out.w.resize(static_cast<size_t>(out.heads) * out.queries * out.keys);
  for (int h = 0; h < out.heads; ++h) {
    auto block = probs.block(0, h);
    for (int q = 0; q < out.queries; ++q) {
      for (int k = 0; k < out.keys; ++k) {
        out.at(h, q, k) = static_cast<double>(block(q, k));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single-image conveniences used by tests and tools
// ---------------------------------------------------------------------------

// (per-patch token states, pooled q_c) of the content encoder.
template <typename T>
std::pair<MatX<T>, MatX<T>> encode_content(Model<T>& m, const ImageBuffer& image) {
  Tape<T> tape;
  auto [tokens, pooled] = m.content.forward(tape, m.dims, patchify<T>(image, m.dims.patch), 1);
  return {tape.val(tokens), tape.val(pooled)};
}

enum class StyleBranch { online, target };

template <typename T>
MatX<T> encode_style(Model<T>& m, const ImageBuffer& image, StyleBranch branch) {
  Tape<T> tape;
  auto& enc = branch == StyleBranch::online ? m.style_online : m.style_target;
  auto [tokens, pooled] = enc.forward(tape, m.dims, patchify<T>(image, m.dims.patch), 1);
  (void)tokens;
  return tape.val(pooled);
}

template <typename T>
std::pair<MatX<T>, MatX<T>> encode_text(Model<T>& m, const TokenSequence& tokens) {
  if (tokens.empty()) throw UsageError("encode_text: empty token sequence");
  Tape<T> tape;
  TokenBatch<T> tb = TokenBatch<T>::from_sequences({tokens});
  auto [states, pooled] = m.text.forward(tape, m.dims, tb.ids, tb.groups, tb.valid);
  return {tape.val(states), tape.val(pooled)};
}

}  // namespace cravl
