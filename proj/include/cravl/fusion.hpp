#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cravl/encoders.hpp"

namespace cravl {

enum class FusionSideKind { image_to_text = 0, text_to_image = 1 };

// Requests capture of the post-softmax cross-attention weights of one block.
template <typename T>
struct AttnCapture {
  int layer = 0;
  FusionSideKind side = FusionSideKind::image_to_text;
  std::shared_ptr<AttnProbs<T>> probs;
};

// Transformer block with a self-attention sublayer followed by a
// cross-attention sublayer whose keys/values come from the other modality's
// token states. With use_cross = false the second sublayer attends over the
// own stream instead (the self-attention ablation), reusing the same
// parameter shapes.
template <typename T>
struct CrossBlock {
  Param<T> ln1_g, ln1_b;
  // key projections carry no bias (softmax-invariant, see TransformerBlock)
  Param<T> self_wq, self_bq, self_wk, self_wv, self_bv, self_wo, self_bo;
  Param<T> ln2_g, ln2_b;
  Param<T> cross_wq, cross_bq, mem_wk, mem_wv, mem_bv, cross_wo, cross_bo;
  Param<T> ln3_g, ln3_b;
  Param<T> wf1, bf1, wf2, bf2;

  void init(const std::string& prefix, int d, Rng& rng) {
    auto mat = [&](Param<T>& p, const char* n, int r, int c, bool xavier) {
      p.name = prefix + "/" + n;
      p.init_zero(r, c);
      if (xavier) init_xavier(p, rng);
    };
    mat(ln1_g, "ln1/g", 1, d, false);
    ln1_g.w.setOnes();
    mat(ln1_b, "ln1/b", 1, d, false);
    mat(self_wq, "self/wq", d, d, true);
    mat(self_bq, "self/bq", 1, d, false);
    mat(self_wk, "self/wk", d, d, true);
    mat(self_wv, "self/wv", d, d, true);
    mat(self_bv, "self/bv", 1, d, false);
    mat(self_wo, "self/wo", d, d, true);
    mat(self_bo, "self/bo", 1, d, false);
    mat(ln2_g, "ln2/g", 1, d, false);
    ln2_g.w.setOnes();
    mat(ln2_b, "ln2/b", 1, d, false);
    mat(cross_wq, "cross/wq", d, d, true);
    mat(cross_bq, "cross/bq", 1, d, false);
    mat(mem_wk, "cross/wk", d, d, true);
    mat(mem_wv, "cross/wv", d, d, true);
    mat(mem_bv, "cross/bv", 1, d, false);
    mat(cross_wo, "cross/wo", d, d, true);
    mat(cross_bo, "cross/bo", 1, d, false);
    mat(ln3_g, "ln3/g", 1, d, false);
    ln3_g.w.setOnes();
    mat(ln3_b, "ln3/b", 1, d, false);
    mat(wf1, "ff/w1", d, 4 * d, true);
    mat(bf1, "ff/b1", 1, 4 * d, false);
    mat(wf2, "ff/w2", 4 * d, d, true);
    mat(bf2, "ff/b2", 1, d, false);
  }

  void collect(std::vector<Param<T>*>& out) {
    for (Param<T>* p :
         {&ln1_g, &ln1_b, &self_wq, &self_bq, &self_wk, &self_wv, &self_bv, &self_wo,
          &self_bo, &ln2_g, &ln2_b, &cross_wq, &cross_bq, &mem_wk, &mem_wv, &mem_bv,
          &cross_wo, &cross_bo, &ln3_g, &ln3_b, &wf1, &bf1, &wf2, &bf2}) {
      out.push_back(p);
    }
  }

  Ref forward(Tape<T>& t, Ref own, const Groups& own_groups, const std::vector<T>* own_valid,
              Ref memory, const Groups& mem_groups, const std::vector<T>* mem_valid, int heads,
              bool use_cross, std::shared_ptr<AttnProbs<T>>* probs_out = nullptr) {
    Ref x1 = t.layer_norm(own, ln1_g, ln1_b);
    Ref a = t.attention(t.linear(x1, self_wq, self_bq), t.matmul(x1, t.param(self_wk)),
                        t.linear(x1, self_wv, self_bv), heads, own_groups, own_groups, own_valid);
    Ref x = t.add(own, t.linear(a, self_wo, self_bo));

    Ref x2 = t.layer_norm(x, ln2_g, ln2_b);
    Ref q = t.linear(x2, cross_wq, cross_bq);
    Ref k = use_cross ? t.matmul(memory, t.param(mem_wk)) : t.matmul(x2, t.param(mem_wk));
    Ref v = use_cross ? t.linear(memory, mem_wv, mem_bv) : t.linear(x2, mem_wv, mem_bv);
    const Groups& kv_groups = use_cross ? mem_groups : own_groups;
    const std::vector<T>* kv_valid = use_cross ? mem_valid : own_valid;
    Ref c = t.attention(q, k, v, heads, own_groups, kv_groups, kv_valid, probs_out, "cross_attn");
    x = t.add(x, t.linear(c, cross_wo, cross_bo));

    Ref x3 = t.layer_norm(x, ln3_g, ln3_b);
    Ref f = t.linear(t.gelu(t.linear(x3, wf1, bf1)), wf2, bf2);
    return t.add(x, f);
  }
};

// One direction of the fusion module: a stack of cross blocks plus the final
// linear projection into the joint space.
template <typename T>
struct FusionStack {
  std::vector<CrossBlock<T>> blocks;
  Param<T> proj_w, proj_b;

  void init(const std::string& prefix, const ModelDims& dims, Rng& rng) {
    blocks.resize(static_cast<size_t>(dims.fusion_blocks));
    for (int i = 0; i < dims.fusion_blocks; ++i) {
      blocks[static_cast<size_t>(i)].init(prefix + "/block" + std::to_string(i), dims.d, rng);
    }
    proj_w.name = prefix + "/proj/w";
    proj_w.init_zero(dims.d, dims.d_joint);
    init_xavier(proj_w, rng);
    proj_b.name = prefix + "/proj/b";
    proj_b.init_zero(1, dims.d_joint);
  }

  void collect(std::vector<Param<T>*>& out) {
    for (auto& b : blocks) b.collect(out);
    out.push_back(&proj_w);
    out.push_back(&proj_b);
  }
};

// Joint embeddings for a batch: the image-side stack runs image patch tokens
// against text memory and vice versa. q_i (the style-augmented pooled visual
// feature) is broadcast-added to the image tokens after the stack, right
// before pooling; both outputs are projected and L2-normalized.
template <typename T>
struct FuseResult {
  Ref z_img;
  Ref z_txt;
};

template <typename T>
FuseResult<T> fuse(Tape<T>& t, FusionStack<T>& img_side, FusionStack<T>& txt_side,
                   const ModelDims& dims, bool cross_attention, Ref img_tokens,
                   const Groups& img_groups, Ref q_i, Ref txt_states, const Groups& txt_groups,
                   const std::vector<T>& txt_valid, AttnCapture<T>* capture = nullptr) {
  Ref x = img_tokens;
  for (size_t l = 0; l < img_side.blocks.size(); ++l) {
    std::shared_ptr<AttnProbs<T>>* grab = nullptr;
    if (capture && capture->side == FusionSideKind::image_to_text &&
        capture->layer == static_cast<int>(l)) {
      grab = &capture->probs;
    }
    x = img_side.blocks[l].forward(t, x, img_groups, nullptr, txt_states, txt_groups, &txt_valid,
                                   dims.heads, cross_attention, grab);
  }
  x = t.add_group_rows(x, q_i, img_groups, "q_i_broadcast");
  Ref pooled_i = t.mean_rows(x, img_groups);
  Ref z_img = t.l2_normalize_rows(
      t.add_rowvec(t.matmul(pooled_i, t.param(img_side.proj_w)), t.param(img_side.proj_b)),
      "z_img");

  Ref y = txt_states;
  for (size_t l = 0; l < txt_side.blocks.size(); ++l) {
    std::shared_ptr<AttnProbs<T>>* grab = nullptr;
    if (capture && capture->side == FusionSideKind::text_to_image &&
        capture->layer == static_cast<int>(l)) {
      grab = &capture->probs;
    }
    y = txt_side.blocks[l].forward(t, y, txt_groups, &txt_valid, img_tokens, img_groups, nullptr,
                                   dims.heads, cross_attention, grab);
  }
  Ref pooled_j = t.mean_rows(y, txt_groups, &txt_valid);
  Ref z_txt = t.l2_normalize_rows(
      t.add_rowvec(t.matmul(pooled_j, t.param(txt_side.proj_w)), t.param(txt_side.proj_b)),
      "z_txt");

  return {z_img, z_txt};
}

}  // namespace cravl
