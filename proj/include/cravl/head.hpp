#pragma once

#include <array>
#include <string>
#include <vector>

#include "cravl/trainer.hpp"

namespace cravl {

// Frozen-embedding rating classifier: two modality MLPs (d_joint -> 128 ->
// 64, GELU between layers), concatenation, then a joint MLP (128 -> 128 -> 5)
// with softmax output.
template <typename T>
struct Head {
  Param<T> img_w1, img_b1, img_w2, img_b2;
  Param<T> txt_w1, txt_b1, txt_w2, txt_b2;
  Param<T> joint_w1, joint_b1, joint_w2, joint_b2;
  int d_joint = 0;

  void init(int d_joint_in, uint64_t seed) {
    d_joint = d_joint_in;
    Rng rng(Rng::mix(seed, 0x6ead));
    auto mat = [&](Param<T>& p, const char* n, int r, int c, bool xavier) {
      p.name = std::string("head/") + n;
      p.init_zero(r, c);
      if (xavier) init_xavier(p, rng);
    };
    mat(img_w1, "img/w1", d_joint, 128, true);
    mat(img_b1, "img/b1", 1, 128, false);
    mat(img_w2, "img/w2", 128, 64, true);
    mat(img_b2, "img/b2", 1, 64, false);
    mat(txt_w1, "txt/w1", d_joint, 128, true);
    mat(txt_b1, "txt/b1", 1, 128, false);
    mat(txt_w2, "txt/w2", 128, 64, true);
    mat(txt_b2, "txt/b2", 1, 64, false);
    mat(joint_w1, "joint/w1", 128, 128, true);
    mat(joint_b1, "joint/b1", 1, 128, false);
    mat(joint_w2, "joint/w2", 128, kNumRatings, true);
    mat(joint_b2, "joint/b2", 1, kNumRatings, false);
  }

  void collect(std::vector<Param<T>*>& out) {
    for (Param<T>* p : {&img_w1, &img_b1, &img_w2, &img_b2, &txt_w1, &txt_b1, &txt_w2, &txt_b2,
                        &joint_w1, &joint_b1, &joint_w2, &joint_b2}) {
      out.push_back(p);
    }
  }

  Ref logits(Tape<T>& t, Ref z_img, Ref z_txt) {
    Ref hi = t.linear(t.gelu(t.linear(z_img, img_w1, img_b1)), img_w2, img_b2);
    Ref ht = t.linear(t.gelu(t.linear(z_txt, txt_w1, txt_b1)), txt_w2, txt_b2);
    Ref cat = t.concat_cols(hi, ht);
    return t.linear(t.gelu(t.linear(cat, joint_w1, joint_b1)), joint_w2, joint_b2, "head_logits");
  }
};

// Probability vector over the five ratings for one embedded pair.
template <typename T>
std::array<double, kNumRatings> head_forward(Head<T>& head, const MatX<T>& z_img,
                                             const MatX<T>& z_txt) {
  if (z_img.cols() != head.d_joint || z_txt.cols() != head.d_joint || z_img.rows() != 1 ||
      z_txt.rows() != 1) {
    throw NumericError("head_forward: embedding shape mismatch");
  }
  Tape<T> tape;
  Ref logits = head.logits(tape, tape.constant(z_img), tape.constant(z_txt));
  const auto& row = tape.val(logits);
  double mx = -1e300;
  for (int k = 0; k < kNumRatings; ++k) mx = std::max(mx, static_cast<double>(row(0, k)));
  std::array<double, kNumRatings> probs{};
  double z = 0;
  for (int k = 0; k < kNumRatings; ++k) {
    probs[static_cast<size_t>(k)] = std::exp(static_cast<double>(row(0, k)) - mx);
    z += probs[static_cast<size_t>(k)];
  }
  for (auto& p : probs) p /= z;
  return probs;
}

// ---------------------------------------------------------------------------
// Frozen-embedding dataset pass
// ---------------------------------------------------------------------------

template <typename T>
struct EmbeddedPairs {
  MatX<T> z_img;  // one row per (image, text) pair
  MatX<T> z_txt;
  std::vector<int> labels;
  std::vector<int> record_of;  // pair row -> record index
};

// Inference-path embeddings for every (image, full-description) pair of the
// manifest. No augmentation; both visual branches see the raw image.
template <typename T>
EmbeddedPairs<T> embed_dataset(Model<T>& model, const std::vector<AppRecord>& records,
                               const std::string& data_dir, int batch = 64) {
  struct Item {
    int record;
    std::string path;
  };
  std::vector<Item> items;
  for (size_t r = 0; r < records.size(); ++r) {
    for (const auto& rel : records[r].image_paths()) {
      items.push_back({static_cast<int>(r), data_dir + "/" + rel});
    }
    if (records[r].image_paths().empty()) {
      throw DataError("app '" + records[r].app_id + "' has no images");
    }
  }

  EmbeddedPairs<T> out;
  const int n = static_cast<int>(items.size());
  out.z_img.resize(n, model.dims.d_joint);
  out.z_txt.resize(n, model.dims.d_joint);
  out.labels.resize(static_cast<size_t>(n));
  out.record_of.resize(static_cast<size_t>(n));

  std::vector<TokenSequence> token_cache(records.size());
  std::vector<bool> tokenized(records.size(), false);

  for (int off = 0; off < n; off += batch) {
    const int B = std::min(batch, n - off);
    MatX<T> patches(static_cast<Eigen::Index>(B) * model.dims.n_patches(), model.dims.patch_dim());
    std::vector<TokenSequence> seqs;
    seqs.reserve(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
      const Item& item = items[static_cast<size_t>(off + i)];
      const ImageBuffer img = read_ppm(item.path);
      if (img.width != model.dims.image || img.height != model.dims.image) {
        throw DataError("image size does not match the model's configured input size");
      }
      patches.middleRows(static_cast<Eigen::Index>(i) * model.dims.n_patches(),
                         model.dims.n_patches()) = patchify<T>(img, model.dims.patch);
      const auto rec_idx = static_cast<size_t>(item.record);
      if (!tokenized[rec_idx]) {
        token_cache[rec_idx] = tokenize(records[rec_idx].description);
        if (token_cache[rec_idx].empty()) {
          throw DataError("app '" + records[rec_idx].app_id + "' has an empty description");
        }
        tokenized[rec_idx] = true;
      }
      seqs.push_back(token_cache[rec_idx]);
      out.labels[static_cast<size_t>(off + i)] = ordinal(records[rec_idx].declared);
      out.record_of[static_cast<size_t>(off + i)] = item.record;
    }
    Tape<T> tape;
    TokenBatch<T> tb = TokenBatch<T>::from_sequences(seqs);
    EmbedRefs<T> er = joint_embed(tape, model, patches, patches, tb, B);
    out.z_img.middleRows(off, B) = tape.val(er.z_img);
    out.z_txt.middleRows(off, B) = tape.val(er.z_txt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Head training and prediction
// ---------------------------------------------------------------------------

struct HeadConfig {
  double lr = 1e-3;
  int epochs = 30;
  int batch = 64;
  double weight_decay = 0.0;
  uint64_t seed = 42;

  void validate() const {
    if (lr <= 0 || epochs < 0 || batch < 1) throw UsageError("invalid head config");
  }
};

// Cross-entropy training of the head alone; embeddings stay fixed. Returns
// the per-step losses.
template <typename T>
std::vector<double> train_head(Head<T>& head, const EmbeddedPairs<T>& pairs,
                               const HeadConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(pairs.labels.size());
  if (n == 0) throw DataError("train-head: no labeled pairs");

  std::vector<Param<T>*> params;
  head.collect(params);
  AdamW<T> opt;
  opt.weight_decay = cfg.weight_decay;

  std::vector<double> losses;
  std::vector<int> perm(static_cast<size_t>(n));
  for (int e = 0; e < cfg.epochs; ++e) {
    Rng rng(Rng::mix(Rng::mix(cfg.seed, salt::head), static_cast<uint64_t>(e)));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm.begin(), perm.end());
    for (int off = 0; off < n; off += cfg.batch) {
      const int B = std::min(cfg.batch, n - off);
      MatX<T> zi(B, head.d_joint), zj(B, head.d_joint);
      std::vector<int32_t> targets(static_cast<size_t>(B));
      for (int i = 0; i < B; ++i) {
        const int row = perm[static_cast<size_t>(off + i)];
        zi.row(i) = pairs.z_img.row(row);
        zj.row(i) = pairs.z_txt.row(row);
        targets[static_cast<size_t>(i)] = static_cast<int32_t>(pairs.labels[static_cast<size_t>(row)]);
      }
      for (Param<T>* p : params) p->zero_grad();
      Tape<T> tape;
      Ref logits = head.logits(tape, tape.constant(zi), tape.constant(zj));
      Ref loss = tape.softmax_ce(logits, targets);
      const double value = static_cast<double>(tape.scalar(loss));
      if (!std::isfinite(value)) throw NumericError("non-finite head training loss");
      tape.backward(loss);
      opt.step(params, cfg.lr);
      losses.push_back(value);
    }
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Per-app prediction
// ---------------------------------------------------------------------------

struct PredictionRecord {
  std::string app_id;
  ContentRating declared = ContentRating::G;
  std::vector<ContentRating> votes;
  ContentRating majority = ContentRating::G;
};

// Modal class over the votes; ties resolve toward the more restrictive
// rating.
inline ContentRating majority_vote(const std::vector<ContentRating>& votes) {
  if (votes.empty()) throw UsageError("majority_vote: no votes");
  std::array<int, kNumRatings> counts{};
  for (ContentRating v : votes) counts[static_cast<size_t>(ordinal(v))]++;
  int best = 0;
  for (int k = 1; k < kNumRatings; ++k) {
    if (counts[static_cast<size_t>(k)] >= counts[static_cast<size_t>(best)]) best = k;
  }
  return rating_from_ordinal(best);
}

// One (image, truncated description) pair per app image; argmax per pair,
// then the majority vote.
template <typename T>
PredictionRecord predict_app(Model<T>& model, Head<T>& head, const AppRecord& app,
                             const std::string& data_dir) {
  if (app.image_count() == 0) throw DataError("app '" + app.app_id + "' has no images");
  std::vector<AppRecord> one = {app};
  EmbeddedPairs<T> pairs = embed_dataset(model, one, data_dir);

  PredictionRecord pred;
  pred.app_id = app.app_id;
  pred.declared = app.declared;
  for (Eigen::Index r = 0; r < pairs.z_img.rows(); ++r) {
    MatX<T> zi = pairs.z_img.row(r);
    MatX<T> zj = pairs.z_txt.row(r);
    const auto probs = head_forward(head, zi, zj);
    int arg = 0;
    for (int k = 1; k < kNumRatings; ++k) {
      if (probs[static_cast<size_t>(k)] > probs[static_cast<size_t>(arg)]) arg = k;
    }
    pred.votes.push_back(rating_from_ordinal(arg));
  }
  pred.majority = majority_vote(pred.votes);
  return pred;
}

// ---------------------------------------------------------------------------
// Head checkpoints
// ---------------------------------------------------------------------------

template <typename T>
Checkpoint head_to_checkpoint(Head<T>& head) {
  Checkpoint c;
  c.add_i64("format/kind", ckpt_kind::head);
  c.add_i64("dims/d_joint", head.d_joint);
  c.add_i64("precision", std::is_same_v<T, float> ? 1 : 0);
  std::vector<Param<T>*> params;
  head.collect(params);
  for (Param<T>* p : params) c.add_mat("param/" + p->name, p->w);
  return c;
}

template <typename T>
void head_from_checkpoint(const Checkpoint& c, Head<T>& head) {
  if (c.i64("format/kind") != ckpt_kind::head) {
    throw DataError("checkpoint is not a head checkpoint");
  }
  head.init(static_cast<int>(c.i64("dims/d_joint")), 0);
  std::vector<Param<T>*> params;
  head.collect(params);
  for (Param<T>* p : params) p->w = c.mat<T>("param/" + p->name);
}

}  // namespace cravl
