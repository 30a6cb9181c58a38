#pragma once

#include <string>
#include <vector>

#include "cravl/rng.hpp"
#include "cravl/tensor.hpp"
#include "cravl/types.hpp"

namespace cravl {

// Architecture hyper-parameters shared by every stack.
struct ModelDims {
  int image = 64;
  int patch = 8;
  int d = 64;
  int heads = 4;
  int content_layers = 2;
  int style_layers = 2;
  int text_layers = 2;
  int fusion_blocks = 2;
  int d_joint = 64;
  int vocab = 0;
  int max_text = kMaxTokens;

  int grid() const { return image / patch; }
  int n_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch * patch * 3; }

  void validate() const {
    if (image <= 0 || patch <= 0 || image % patch != 0) {
      throw UsageError("image size must be a positive multiple of patch size");
    }
    if (d <= 0 || heads <= 0 || d % heads != 0) {
      throw UsageError("embedding dim must be a positive multiple of the head count");
    }
    if (content_layers < 0 || style_layers < 0 || text_layers < 0 || fusion_blocks < 0) {
      throw UsageError("layer counts must be non-negative");
    }
    if (d_joint <= 0 || vocab <= 0 || max_text <= 0) {
      throw UsageError("d_joint, vocab and max_text must be positive");
    }
  }
};

template <typename T>
void init_normal(Param<T>& p, Rng& rng, double std) {
  for (Eigen::Index i = 0; i < p.w.size(); ++i) {
    p.w.data()[i] = static_cast<T>(rng.normal() * std);
  }
}

template <typename T>
void init_xavier(Param<T>& p, Rng& rng) {
  init_normal(p, rng, std::sqrt(2.0 / static_cast<double>(p.w.rows() + p.w.cols())));
}

// ---------------------------------------------------------------------------
// Pre-norm transformer block
// ---------------------------------------------------------------------------

template <typename T>
struct TransformerBlock {
  Param<T> ln1_g, ln1_b;
  // no key bias: a constant shift of every key moves all scores in a softmax
  // row together, so it could never train
  Param<T> wq, bq, wk, wv, bv, wo, bo;
  Param<T> ln2_g, ln2_b;
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
    mat(wq, "attn/wq", d, d, true);
    mat(bq, "attn/bq", 1, d, false);
    mat(wk, "attn/wk", d, d, true);
    mat(wv, "attn/wv", d, d, true);
    mat(bv, "attn/bv", 1, d, false);
    mat(wo, "attn/wo", d, d, true);
    mat(bo, "attn/bo", 1, d, false);
    mat(ln2_g, "ln2/g", 1, d, false);
    ln2_g.w.setOnes();
    mat(ln2_b, "ln2/b", 1, d, false);
    mat(wf1, "ff/w1", d, 4 * d, true);
    mat(bf1, "ff/b1", 1, 4 * d, false);
    mat(wf2, "ff/w2", 4 * d, d, true);
    mat(bf2, "ff/b2", 1, d, false);
  }

  void collect(std::vector<Param<T>*>& out) {
    for (Param<T>* p : {&ln1_g, &ln1_b, &wq, &bq, &wk, &wv, &bv, &wo, &bo, &ln2_g, &ln2_b,
                        &wf1, &bf1, &wf2, &bf2}) {
      out.push_back(p);
    }
  }

  Ref forward(Tape<T>& t, Ref x, int heads, const Groups& groups,
              const std::vector<T>* valid = nullptr) {
    Ref x1 = t.layer_norm(x, ln1_g, ln1_b);
    Ref a = t.attention(t.linear(x1, wq, bq), t.matmul(x1, t.param(wk)), t.linear(x1, wv, bv),
                        heads, groups, groups, valid);
    x = t.add(x, t.linear(a, wo, bo));
    Ref x2 = t.layer_norm(x, ln2_g, ln2_b);
    Ref f = t.linear(t.gelu(t.linear(x2, wf1, bf1)), wf2, bf2);
    return t.add(x, f);
  }
};

// ---------------------------------------------------------------------------
// Vision encoders (content and both style branches share this architecture)
// ---------------------------------------------------------------------------

template <typename T>
struct VisionEncoder {
  Param<T> patch_w, patch_b;
  Param<T> pos;
  std::vector<TransformerBlock<T>> blocks;

  void init(const std::string& prefix, const ModelDims& dims, int layers, Rng& rng) {
    patch_w.name = prefix + "/patch/w";
    patch_w.init_zero(dims.patch_dim(), dims.d);
    init_xavier(patch_w, rng);
    patch_b.name = prefix + "/patch/b";
    patch_b.init_zero(1, dims.d);
    pos.name = prefix + "/pos";
    pos.init_zero(dims.n_patches(), dims.d);
    init_normal(pos, rng, 0.02);
    blocks.resize(static_cast<size_t>(layers));
    for (int i = 0; i < layers; ++i) {
      blocks[static_cast<size_t>(i)].init(prefix + "/block" + std::to_string(i), dims.d, rng);
    }
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&patch_w);
    out.push_back(&patch_b);
    out.push_back(&pos);
    for (auto& b : blocks) b.collect(out);
  }

  void set_trainable(bool trainable) {
    std::vector<Param<T>*> all;
    collect(all);
    for (auto* p : all) p->trainable = trainable;
  }

  // patches: (B * n_patches) x patch_dim. Returns per-patch token states.
  Ref forward_tokens(Tape<T>& t, const ModelDims& dims, const MatX<T>& patches, int batch) {
    if (patches.cols() != dims.patch_dim() ||
        patches.rows() != static_cast<Eigen::Index>(batch) * dims.n_patches()) {
      throw NumericError("vision encoder: patch matrix shape mismatch");
    }
    Ref x = t.add_rowvec(t.matmul(t.constant(patches, "patches"), t.param(patch_w)), t.param(patch_b));
    x = t.add_tiled(x, t.param(pos), batch);
    const Groups groups = Groups::uniform(batch, dims.n_patches());
    for (auto& b : blocks) x = b.forward(t, x, dims.heads, groups);
    return x;
  }

  // (tokens, pooled) pair; pooled is the mean over patch tokens.
  std::pair<Ref, Ref> forward(Tape<T>& t, const ModelDims& dims, const MatX<T>& patches,
                              int batch) {
    Ref tokens = forward_tokens(t, dims, patches, batch);
    Ref pooled = t.mean_rows(tokens, Groups::uniform(batch, dims.n_patches()));
    return {tokens, pooled};
  }
};

// ---------------------------------------------------------------------------
// Text encoder
// ---------------------------------------------------------------------------

template <typename T>
struct TextEncoder {
  Param<T> tok;
  Param<T> pos;
  std::vector<TransformerBlock<T>> blocks;
  bool frozen = false;

  void init(const std::string& prefix, const ModelDims& dims, Rng& rng) {
    tok.name = prefix + "/tok";
    tok.init_zero(dims.vocab, dims.d);
    init_normal(tok, rng, 0.02);
    pos.name = prefix + "/pos";
    pos.init_zero(dims.max_text, dims.d);
    init_normal(pos, rng, 0.02);
    blocks.resize(static_cast<size_t>(dims.text_layers));
    for (int i = 0; i < dims.text_layers; ++i) {
      blocks[static_cast<size_t>(i)].init(prefix + "/block" + std::to_string(i), dims.d, rng);
    }
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&tok);
    out.push_back(&pos);
    for (auto& b : blocks) b.collect(out);
  }

  void set_frozen(bool value) {
    frozen = value;
    std::vector<Param<T>*> all;
    collect(all);
    for (auto* p : all) p->trainable = !value;
  }

  // ids hold the concatenated token rows of a batch; groups partition them.
  // valid marks non-pad rows and is used as both the attention key mask and
  // the pooling weight. Returns (token states, pooled).
  std::pair<Ref, Ref> forward(Tape<T>& t, const ModelDims& dims,
                              const std::vector<int32_t>& ids, const Groups& groups,
                              const std::vector<T>& valid) {
    if (groups.total() != static_cast<int>(ids.size()) || valid.size() != ids.size()) {
      throw NumericError("text encoder: token group mismatch");
    }
    for (int b = 0; b < groups.count(); ++b) {
      if (groups.size(b) == 0) throw UsageError("text encoder: empty token sequence");
      if (groups.size(b) > dims.max_text) throw UsageError("text encoder: sequence too long");
      T total = T(0);
      for (int r = groups.begin(b); r < groups.begin(b) + groups.size(b); ++r) {
        total += valid[static_cast<size_t>(r)];
      }
      if (total <= T(0)) throw UsageError("text encoder: no non-pad tokens to pool");
    }
    std::vector<int32_t> positions(ids.size());
    for (int b = 0; b < groups.count(); ++b) {
      for (int r = groups.begin(b), k = 0; r < groups.begin(b) + groups.size(b); ++r, ++k) {
        positions[static_cast<size_t>(r)] = k;
      }
    }
    Ref x = t.add(t.embedding(tok, ids, "tok_embed"), t.embedding(pos, positions, "pos_embed"));
    for (auto& b : blocks) x = b.forward(t, x, dims.heads, groups, &valid);
    Ref pooled = t.mean_rows(x, groups, &valid);
    return {x, pooled};
  }
};

// ---------------------------------------------------------------------------
// EMA update and the content/style combination
// ---------------------------------------------------------------------------

// theta_t <- tau * theta_t + (1 - tau) * theta_s, elementwise over matched
// parameter lists.
template <typename T>
void ema_update(std::vector<Param<T>*> target, std::vector<Param<T>*> online, T tau) {
  if (tau < T(0) || tau > T(1)) throw UsageError("ema decay must lie in [0, 1]");
  if (target.size() != online.size()) throw NumericError("ema: parameter group size mismatch");
  for (size_t i = 0; i < target.size(); ++i) {
    Param<T>& t = *target[i];
    const Param<T>& o = *online[i];
    if (t.w.rows() != o.w.rows() || t.w.cols() != o.w.cols()) {
      throw NumericError("ema: shape mismatch at " + t.name);
    }
    t.w = tau * t.w + (T(1) - tau) * o.w;
  }
}

// q_i = q_c + alpha * q_s
template <typename T>
Ref combine_visual(Tape<T>& t, Ref q_c, Ref q_s, T alpha) {
  if (t.val(q_c).rows() != t.val(q_s).rows() || t.val(q_c).cols() != t.val(q_s).cols()) {
    throw NumericError("combine_visual: shape mismatch");
  }
  return t.add(q_c, t.scale(q_s, alpha, "alpha_qs"));
}

template <typename T>
MatX<T> combine_visual(const MatX<T>& q_c, const MatX<T>& q_s, T alpha) {
  if (q_c.rows() != q_s.rows() || q_c.cols() != q_s.cols()) {
    throw NumericError("combine_visual: shape mismatch");
  }
  return q_c + alpha * q_s;
}

// Flattens one image into its (n_patches x patch_dim) row-major patch matrix.
template <typename T>
MatX<T> patchify(const ImageBuffer& img, int patch) {
  if (img.width % patch != 0 || img.height % patch != 0) {
    throw UsageError("image dims not divisible by patch size");
  }
  const int gx = img.width / patch;
  const int gy = img.height / patch;
  MatX<T> out(gx * gy, patch * patch * 3);
  for (int py = 0; py < gy; ++py) {
    for (int px = 0; px < gx; ++px) {
      const int row = py * gx + px;
      int col = 0;
      for (int y = 0; y < patch; ++y) {
        for (int x = 0; x < patch; ++x) {
          for (int c = 0; c < 3; ++c) {
            out(row, col++) = static_cast<T>(img.at(py * patch + y, px * patch + x, c));
          }
        }
      }
    }
  }
  return out;
}

}  // namespace cravl
