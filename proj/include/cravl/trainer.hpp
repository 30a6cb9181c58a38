#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cravl/checkpoint.hpp"
#include "cravl/model.hpp"
#include "cravl/synth.hpp"

namespace cravl {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr_base = 1e-5;
  double lr_final = 1e-8;
  int warmup_epochs = 10;
  int epochs = 30;
  int batch = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;
  double alpha = 0.1;
  double lambda = 5.0;
  double ema_decay = 0.996;
  uint64_t seed = 42;
  bool f64 = false;  // precision: f32 unless set
  bool deterministic = true;
  int save_every = 0;  // write the checkpoint every N epochs as well (0 = end only)

  void validate() const {
    if (warmup_epochs < 0 || epochs < 0 || warmup_epochs > epochs) {
      throw UsageError("warmup_epochs must lie in [0, epochs]");
    }
    if (batch < 2) throw UsageError("batch must be at least 2 (contrastive losses need pairs)");
    if (lr_base <= 0 || lr_final < 0) throw UsageError("learning rates must be positive");
    if (lambda < 0) throw UsageError("lambda must be non-negative");
    if (ema_decay < 0 || ema_decay > 1) throw UsageError("ema_decay must lie in [0, 1]");
  }
};

// Linear warmup from 0, then cosine from base down to final. Endpoints are
// returned exactly.
inline double cosine_lr(int64_t step, int64_t total_steps, int64_t warmup_steps, double base,
                        double final_lr) {
  if (total_steps <= warmup_steps) throw UsageError("cosine_lr: total steps must exceed warmup");
  if (step < 0 || step > total_steps) throw UsageError("cosine_lr: step out of range");
  if (step < warmup_steps) {
    return base * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (step == warmup_steps) return base;
  if (step == total_steps) return final_lr;
  const double p =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return final_lr + 0.5 * (base - final_lr) * (1.0 + std::cos(3.14159265358979323846 * p));
}

// ---------------------------------------------------------------------------
// Optimizer: Adam with decoupled weight decay
// ---------------------------------------------------------------------------

template <typename T>
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.02;
  int64_t t = 0;

  void step(const std::vector<Param<T>*>& params, double lr) {
    ++t;
    const T b1 = static_cast<T>(beta1);
    const T b2 = static_cast<T>(beta2);
    const T bc1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(t)));
    const T lrT = static_cast<T>(lr);
    const T epsT = static_cast<T>(eps);
    const T wdT = static_cast<T>(weight_decay);
    for (Param<T>* p : params) {
      if (!p->trainable) continue;
      p->m = b1 * p->m + (T(1) - b1) * p->g;
      p->v = b2 * p->v + (T(1) - b2) * p->g.cwiseProduct(p->g);
      if (p->decay && wdT != T(0)) p->w -= (lrT * wdT) * p->w;
      p->w.array() -=
          lrT * (p->m.array() / bc1) / ((p->v.array() / bc2).sqrt() + epsT);
    }
  }
};

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

// Images decoded once and kept as bytes; items enumerate (record, image).
class DatasetCache {
 public:
  DatasetCache(const std::vector<AppRecord>& records, const std::string& data_dir)
      : records_(records) {
    for (size_t r = 0; r < records_.size(); ++r) {
      const auto paths = records_[r].image_paths();
      if (paths.empty()) {
        throw DataError("app '" + records_[r].app_id + "' has no images");
      }
      for (const auto& rel : paths) {
        items_.emplace_back(static_cast<int>(r), static_cast<int>(images_.size()));
        images_.push_back(read_ppm_u8(data_dir + "/" + rel));
      }
    }
  }

  int n_items() const { return static_cast<int>(items_.size()); }
  const AppRecord& record_of(int item) const {
    return records_[static_cast<size_t>(items_[static_cast<size_t>(item)].first)];
  }
  ImageBuffer image_of(int item) const {
    return images_[static_cast<size_t>(items_[static_cast<size_t>(item)].second)].to_float();
  }

 private:
  std::vector<AppRecord> records_;
  std::vector<ImageU8> images_;
  std::vector<std::pair<int, int>> items_;
};

template <typename T>
struct TrainBatch {
  MatX<T> patches_content;       // augmented view for the content branch
  MatX<T> patches_style;         // augmented view for the style target branch
  MatX<T> patches_style_masked;  // masked copy of patches_style for the online branch
  TokenBatch<T> tokens;
  std::vector<int> labels;
  int B = 0;
};

template <typename T>
TrainBatch<T> make_train_batch(const DatasetCache& cache, const ModelDims& dims,
                               const std::vector<int>& item_ids, Rng& rng) {
  TrainBatch<T> batch;
  batch.B = static_cast<int>(item_ids.size());
  const int np = dims.n_patches();
  batch.patches_content.resize(static_cast<Eigen::Index>(batch.B) * np, dims.patch_dim());
  batch.patches_style.resize(static_cast<Eigen::Index>(batch.B) * np, dims.patch_dim());
  batch.patches_style_masked.resize(static_cast<Eigen::Index>(batch.B) * np, dims.patch_dim());

  std::vector<TokenSequence> seqs;
  seqs.reserve(static_cast<size_t>(batch.B));
  for (int i = 0; i < batch.B; ++i) {
    const int item = item_ids[static_cast<size_t>(i)];
    const ImageBuffer img = cache.image_of(item);
    if (img.width != dims.image || img.height != dims.image) {
      throw DataError("image size does not match the model's configured input size");
    }
    const ImageBuffer x_c = augment_image(img, rng);
    const ImageBuffer x_s = augment_image(img, rng);
    const ImageBuffer x_s_masked = mask_patches(x_s, rng, dims.patch);
    batch.patches_content.middleRows(static_cast<Eigen::Index>(i) * np, np) =
        patchify<T>(x_c, dims.patch);
    batch.patches_style.middleRows(static_cast<Eigen::Index>(i) * np, np) =
        patchify<T>(x_s, dims.patch);
    batch.patches_style_masked.middleRows(static_cast<Eigen::Index>(i) * np, np) =
        patchify<T>(x_s_masked, dims.patch);

    const AppRecord& rec = cache.record_of(item);
    TokenSequence seq = tokenize(chunk_description(rec.description, rng));
    if (seq.empty()) throw DataError("app '" + rec.app_id + "' has an empty description");
    seqs.push_back(std::move(seq));
    batch.labels.push_back(ordinal(rec.declared));
  }
  batch.tokens = TokenBatch<T>::from_sequences(seqs);
  return batch;
}

// ---------------------------------------------------------------------------
// One optimization step
// ---------------------------------------------------------------------------

struct StepResult {
  double total = 0;
  double contrastive = 0;
  double mse = 0;
};

// Builds the training graph for the given objective without running the
// optimizer; exposed separately so the gradient checker can reuse it. The
// text token states and the style-target output enter as constants: frozen
// and stop-gradient parameters are not part of the differentiated function.
template <typename T>
struct TrainGraph {
  Ref contrastive;
  Ref mse;  // invalid when the style branch is off
  Ref total;
};

template <typename T>
TrainGraph<T> build_train_graph(Tape<T>& tape, Model<T>& model, const TrainBatch<T>& batch,
                                const MatX<T>& txt_states_value, const MatX<T>& q_s_value,
                                double lambda) {
  TrainGraph<T> g;
  auto [img_tokens, q_c] = model.content.forward(tape, model.dims, batch.patches_content, batch.B);
  Ref q_i = q_c;
  if (model.style_encoder) {
    auto [online_tokens, q_s_online] =
        model.style_online.forward(tape, model.dims, batch.patches_style_masked, batch.B);
    (void)online_tokens;
    Ref q_s = tape.constant(q_s_value, "q_s_target");
    q_i = combine_visual(tape, q_c, q_s, static_cast<T>(model.alpha));
    g.mse = tape.mse_rows_mean(q_s_online, q_s, "style_mse");
  }
  Ref txt_states = tape.constant(txt_states_value, "txt_states");
  auto z = fuse(tape, model.fus_img, model.fus_txt, model.dims, model.cross_attention, img_tokens,
                Groups::uniform(batch.B, model.dims.n_patches()), q_i, txt_states,
                batch.tokens.groups, batch.tokens.valid);
  g.contrastive = contrastive_op(tape, model.variant, z.z_img, z.z_txt, batch.labels,
                                 tape.param(model.log_t), tape.param(model.b));
  g.total = model.style_encoder ? tape.add_scaled(g.contrastive, g.mse, static_cast<T>(lambda),
                                                  "total_loss")
                                : g.contrastive;
  return g;
}

// Text states (and the style-target output) evaluated once per batch; both
// are constants of the optimization step.
template <typename T>
MatX<T> eval_text_states(Model<T>& model, const TrainBatch<T>& batch) {
  Tape<T> tape;
  auto [states, pooled] = model.text.forward(tape, model.dims, batch.tokens.ids,
                                             batch.tokens.groups, batch.tokens.valid);
  (void)pooled;
  return tape.val(states);
}

template <typename T>
MatX<T> eval_style_target(Model<T>& model, const TrainBatch<T>& batch) {
  Tape<T> tape;
  auto [tokens, pooled] = model.style_target.forward(tape, model.dims, batch.patches_style, batch.B);
  (void)tokens;
  return tape.val(pooled);
}

// Forward, backward, AdamW update on the trainable set, then the EMA move of
// the style target toward the post-update online branch.
template <typename T>
StepResult train_step(Model<T>& model, AdamW<T>& opt, const TrainBatch<T>& batch, double lr,
                      double lambda, double ema_decay) {
  if (batch.B < 2) throw UsageError("train_step: batch must hold at least 2 pairs");
  const auto trainables = model.trainable_params();
  for (Param<T>* p : trainables) p->zero_grad();

  Tape<T> tape;
  const MatX<T> txt_states = eval_text_states(model, batch);
  MatX<T> q_s;
  if (model.style_encoder) q_s = eval_style_target(model, batch);
  TrainGraph<T> g = build_train_graph(tape, model, batch, txt_states, q_s, lambda);

  StepResult res;
  res.total = static_cast<double>(tape.scalar(g.total));
  res.contrastive = static_cast<double>(tape.scalar(g.contrastive));
  res.mse = model.style_encoder ? static_cast<double>(tape.scalar(g.mse)) : 0.0;
  if (!std::isfinite(res.total)) {
    const char* tag = tape.first_non_finite();
    throw NumericError(std::string("non-finite loss; first non-finite tensor: ") +
                       (tag ? tag : "<loss>"));
  }

  tape.backward(g.total);
  opt.step(trainables, lr);
  if (model.style_encoder) {
    std::vector<Param<T>*> target, online;
    model.style_target.collect(target);
    model.style_online.collect(online);
    ema_update(target, online, static_cast<T>(ema_decay));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

namespace ckpt_kind {
inline constexpr int64_t full = 0;
inline constexpr int64_t text = 1;
inline constexpr int64_t head = 2;
}  // namespace ckpt_kind

template <typename T>
void add_dims(Checkpoint& c, const ModelDims& d) {
  c.add_i64("dims/image", d.image);
  c.add_i64("dims/patch", d.patch);
  c.add_i64("dims/d", d.d);
  c.add_i64("dims/heads", d.heads);
  c.add_i64("dims/content_layers", d.content_layers);
  c.add_i64("dims/style_layers", d.style_layers);
  c.add_i64("dims/text_layers", d.text_layers);
  c.add_i64("dims/fusion_blocks", d.fusion_blocks);
  c.add_i64("dims/d_joint", d.d_joint);
  c.add_i64("dims/vocab", d.vocab);
  c.add_i64("dims/max_text", d.max_text);
  c.add_i64("precision", std::is_same_v<T, float> ? 1 : 0);
}

inline ModelDims read_dims(const Checkpoint& c) {
  ModelDims d;
  d.image = static_cast<int>(c.i64("dims/image"));
  d.patch = static_cast<int>(c.i64("dims/patch"));
  d.d = static_cast<int>(c.i64("dims/d"));
  d.heads = static_cast<int>(c.i64("dims/heads"));
  d.content_layers = static_cast<int>(c.i64("dims/content_layers"));
  d.style_layers = static_cast<int>(c.i64("dims/style_layers"));
  d.text_layers = static_cast<int>(c.i64("dims/text_layers"));
  d.fusion_blocks = static_cast<int>(c.i64("dims/fusion_blocks"));
  d.d_joint = static_cast<int>(c.i64("dims/d_joint"));
  d.vocab = static_cast<int>(c.i64("dims/vocab"));
  d.max_text = static_cast<int>(c.i64("dims/max_text"));
  return d;
}

template <typename T>
Checkpoint model_to_checkpoint(Model<T>& model, const AdamW<T>* opt = nullptr, int64_t step = 0,
                               int64_t epoch = 0) {
  Checkpoint c;
  c.add_i64("format/kind", ckpt_kind::full);
  add_dims<T>(c, model.dims);
  c.add_i64("flags/style_encoder", model.style_encoder ? 1 : 0);
  c.add_i64("flags/cross_attention", model.cross_attention ? 1 : 0);
  c.add_f64("model/alpha", model.alpha);
  c.add_i64("loss/variant", static_cast<int64_t>(model.variant));
  c.add_i64("trainer/step", step);
  c.add_i64("trainer/epoch", epoch);
  c.add_i64("trainer/adam_t", opt ? opt->t : 0);
  for (Param<T>* p : model.all_params()) c.add_mat("param/" + p->name, p->w);
  if (opt) {
    for (Param<T>* p : model.trainable_params()) {
      c.add_mat("adam/" + p->name + "/m", p->m);
      c.add_mat("adam/" + p->name + "/v", p->v);
    }
  }
  return c;
}

struct TrainerState {
  int64_t step = 0;
  int64_t epoch = 0;
  int64_t adam_t = 0;
};

template <typename T>
TrainerState model_from_checkpoint(const Checkpoint& c, Model<T>& model) {
  if (c.i64("format/kind") != ckpt_kind::full) {
    throw DataError("checkpoint is not a full model checkpoint");
  }
  model.dims = read_dims(c);
  model.style_encoder = c.i64("flags/style_encoder") != 0;
  model.cross_attention = c.i64("flags/cross_attention") != 0;
  model.alpha = c.f64("model/alpha");
  model.variant = static_cast<LossVariant>(c.i64("loss/variant"));
  model.init(0);
  for (Param<T>* p : model.all_params()) p->w = c.mat<T>("param/" + p->name);
  for (Param<T>* p : model.trainable_params()) {
    if (c.contains("adam/" + p->name + "/m")) {
      p->m = c.mat<T>("adam/" + p->name + "/m");
      p->v = c.mat<T>("adam/" + p->name + "/v");
    }
  }
  model.text.set_frozen(true);
  TrainerState st;
  st.step = c.i64("trainer/step");
  st.epoch = c.i64("trainer/epoch");
  st.adam_t = c.i64("trainer/adam_t");
  return st;
}

template <typename T>
Checkpoint text_to_checkpoint(Model<T>& model) {
  Checkpoint c;
  c.add_i64("format/kind", ckpt_kind::text);
  add_dims<T>(c, model.dims);
  std::vector<Param<T>*> params;
  model.text.collect(params);
  for (Param<T>* p : params) c.add_mat("param/" + p->name, p->w);
  return c;
}

template <typename T>
void load_text_encoder(const Checkpoint& c, Model<T>& model) {
  if (c.i64("format/kind") != ckpt_kind::text) {
    throw DataError("checkpoint is not a text-encoder checkpoint");
  }
  const ModelDims d = read_dims(c);
  if (d.d != model.dims.d || d.vocab != model.dims.vocab ||
      d.text_layers != model.dims.text_layers || d.max_text != model.dims.max_text ||
      d.heads != model.dims.heads) {
    throw DataError("text checkpoint dims do not match the model configuration");
  }
  std::vector<Param<T>*> params;
  model.text.collect(params);
  for (Param<T>* p : params) p->w = c.mat<T>("param/" + p->name);
  model.text.set_frozen(true);
}

// ---------------------------------------------------------------------------
// Fit
// ---------------------------------------------------------------------------

struct FitResult {
  std::vector<double> epoch_loss;
  int64_t steps = 0;
};

namespace salt {
inline constexpr uint64_t epoch = 0x7a31;
inline constexpr uint64_t pretrain = 0x7e87;
inline constexpr uint64_t head = 0x4ead;
inline constexpr uint64_t grad = 0x6bc1;
}  // namespace salt

// Epoch loop over one-(image, freshly chunked text) pairs. Deterministic for
// a fixed seed: the per-epoch RNG stream is derived from (seed, epoch), so a
// resumed run consumes exactly the streams a straight run would.
template <typename T>
FitResult fit(Model<T>& model, const TrainConfig& cfg, const std::vector<AppRecord>& records,
              const std::string& data_dir, const std::string& out_ckpt,
              const Checkpoint* resume = nullptr,
              const std::function<void(int, const StepResult&)>& on_epoch = {}) {
  cfg.validate();
  if (records.empty()) throw DataError("fit: empty manifest");

  AdamW<T> opt{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, 0};
  int64_t global_step = 0;
  int start_epoch = 0;
  if (resume) {
    TrainerState st = model_from_checkpoint(*resume, model);
    global_step = st.step;
    start_epoch = static_cast<int>(st.epoch);
    opt.t = st.adam_t;
  }

  DatasetCache cache(records, data_dir);
  const int n = cache.n_items();
  int batches_per_epoch = n / cfg.batch;
  if (n % cfg.batch >= 2) ++batches_per_epoch;
  if (batches_per_epoch == 0) throw DataError("fit: fewer than 2 training pairs");
  const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * batches_per_epoch;
  const int64_t warmup_steps = static_cast<int64_t>(cfg.warmup_epochs) * batches_per_epoch;

  FitResult result;
  std::vector<int> perm(static_cast<size_t>(n));
  for (int e = start_epoch; e < cfg.epochs; ++e) {
    Rng rng(Rng::mix(Rng::mix(cfg.seed, salt::epoch), static_cast<uint64_t>(e)));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm.begin(), perm.end());

    double loss_sum = 0;
    StepResult last{};
    int steps_this_epoch = 0;
    for (int off = 0; off + 2 <= n; off += cfg.batch) {
      const int size = std::min(cfg.batch, n - off);
      if (size < 2) break;
      std::vector<int> ids(perm.begin() + off, perm.begin() + off + size);
      TrainBatch<T> batch = make_train_batch<T>(cache, model.dims, ids, rng);
      const double lr = cosine_lr(global_step, total_steps, warmup_steps, cfg.lr_base, cfg.lr_final);
      last = train_step(model, opt, batch, lr, cfg.lambda, cfg.ema_decay);
      loss_sum += last.total;
      ++global_step;
      ++steps_this_epoch;
    }
    result.epoch_loss.push_back(loss_sum / std::max(1, steps_this_epoch));
    if (cfg.save_every > 0 && (e + 1) % cfg.save_every == 0) {
      model_to_checkpoint(model, &opt, global_step, e + 1).write(out_ckpt);
    }
    if (on_epoch) {
      StepResult mean = last;
      mean.total = result.epoch_loss.back();
      on_epoch(e, mean);
    }
  }
  result.steps = global_step;
  model_to_checkpoint(model, &opt, global_step, cfg.epochs).write(out_ckpt);
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0;
  int n_checked = 0;
  std::string worst_param;
  double worst_analytic = 0;
  double worst_fd = 0;
};

// Central-difference check of the full training objective in f64. Parameters
// outside the trainable set (frozen text, EMA style target) enter the
// objective as fixed features, so both their analytic and finite-difference
// gradients vanish identically.
inline double grad_rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max(1e-12, std::abs(fd) + std::abs(analytic));
}

inline GradCheckResult grad_check(Model<double>& model, const TrainBatch<double>& batch, double h,
                                  int samples, uint64_t seed, double lambda) {
  const MatX<double> txt_states = eval_text_states(model, batch);
  MatX<double> q_s;
  if (model.style_encoder) q_s = eval_style_target(model, batch);

  auto objective = [&]() -> double {
    Tape<double> tape;
    return tape.scalar(build_train_graph(tape, model, batch, txt_states, q_s, lambda).total);
  };

  // Analytic gradients from one backward pass over the same graph.
  auto params = model.all_params();
  for (Param<double>* p : params) p->zero_grad();
  {
    Tape<double> tape;
    TrainGraph<double> g = build_train_graph(tape, model, batch, txt_states, q_s, lambda);
    tape.backward(g.total);
  }

  Rng rng(Rng::mix(seed, salt::grad));
  GradCheckResult res;
  auto check_one = [&](Param<double>& p, Eigen::Index idx) {
    const double analytic = p.g.data()[idx];
    const double orig = p.w.data()[idx];
    p.w.data()[idx] = orig + h;
    const double lp = objective();
    p.w.data()[idx] = orig - h;
    const double lm = objective();
    p.w.data()[idx] = orig;
    const double fd = (lp - lm) / (2.0 * h);
    const double rel = grad_rel_err(analytic, fd);
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_param = p.name + "[" + std::to_string(idx) + "]";
      res.worst_analytic = analytic;
      res.worst_fd = fd;
    }
    ++res.n_checked;
  };

  check_one(model.log_t, 0);
  check_one(model.b, 0);
  for (int s = 0; s < samples - 2; ++s) {
    Param<double>& p = *params[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(params.size()) - 1))];
    check_one(p, static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int64_t>(p.w.size()) - 1)));
  }
  return res;
}

// Deterministic random batch for checks and benchmarks.
template <typename T>
TrainBatch<T> random_batch(const ModelDims& dims, int B, uint64_t seed) {
  Rng rng(Rng::mix(seed, 0xba7c4));
  TrainBatch<T> batch;
  batch.B = B;
  const int np = dims.n_patches();
  auto fill = [&](MatX<T>& m) {
    m.resize(static_cast<Eigen::Index>(B) * np, dims.patch_dim());
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform());
  };
  fill(batch.patches_content);
  fill(batch.patches_style);
  batch.patches_style_masked = batch.patches_style;
  for (Eigen::Index i = 0; i < batch.patches_style_masked.size(); ++i) {
    if (rng.bernoulli(0.1)) batch.patches_style_masked.data()[i] = T(0);
  }
  std::vector<TokenSequence> seqs;
  for (int b = 0; b < B; ++b) {
    TokenSequence seq;
    const int len = static_cast<int>(rng.uniform_int(4, 12));
    for (int k = 0; k < len; ++k) {
      seq.ids.push_back(static_cast<int32_t>(rng.uniform_int(1, dims.vocab - 1)));
    }
    seqs.push_back(std::move(seq));
    batch.labels.push_back(static_cast<int>(rng.uniform_int(0, kNumRatings - 1)));
  }
  batch.tokens = TokenBatch<T>::from_sequences(seqs);
  return batch;
}

// ---------------------------------------------------------------------------
// Text encoder pretraining (masked-token prediction)
// ---------------------------------------------------------------------------

struct TextPretrainConfig {
  int steps = 2000;
  int batch = 32;
  double lr = 1e-3;
  int seq_len = 64;
  uint64_t seed = 42;
};

// Trains the text encoder plus a throwaway vocabulary head on masked-token
// prediction over the corpus descriptions, then freezes the encoder.
template <typename T>
std::vector<double> pretrain_text(Model<T>& model, const TextPretrainConfig& cfg,
                                  const std::vector<AppRecord>& records) {
  if (records.empty()) throw DataError("pretrain-text: empty manifest");
  model.text.set_frozen(false);

  Param<T> head_w, head_b;
  head_w.name = "mlm/w";
  head_w.init_zero(model.dims.d, model.dims.vocab);
  head_b.name = "mlm/b";
  head_b.init_zero(1, model.dims.vocab);
  {
    Rng rng(Rng::mix(cfg.seed, 0x3a11));
    init_xavier(head_w, rng);
  }

  std::vector<Param<T>*> params;
  model.text.collect(params);
  params.push_back(&head_w);
  params.push_back(&head_b);

  AdamW<T> opt;
  opt.weight_decay = 0.0;
  std::vector<double> losses;
  losses.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(Rng::mix(Rng::mix(cfg.seed, salt::pretrain), static_cast<uint64_t>(step)));
    std::vector<TokenSequence> inputs;
    std::vector<int32_t> targets;
    std::vector<T> weights;
    for (int b = 0; b < cfg.batch; ++b) {
      const AppRecord& rec =
          records[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(records.size()) - 1))];
      TokenSequence seq = tokenize(chunk_description(rec.description, rng));
      if (seq.empty()) seq.ids.push_back(kUnkToken);
      if (static_cast<int>(seq.ids.size()) > cfg.seq_len) seq.ids.resize(static_cast<size_t>(cfg.seq_len));
      TokenSequence masked = seq;
      for (size_t i = 0; i < seq.ids.size(); ++i) {
        const bool mask = rng.bernoulli(0.15);
        if (mask) masked.ids[i] = kMaskToken;
        targets.push_back(seq.ids[i]);
        weights.push_back(mask ? T(1) : T(0));
      }
      inputs.push_back(std::move(masked));
    }
    // CE over zero positions is undefined; guarantee one masked token.
    if (std::find(weights.begin(), weights.end(), T(1)) == weights.end()) {
      weights[0] = T(1);
      inputs[0].ids[0] = kMaskToken;
    }

    for (Param<T>* p : params) p->zero_grad();
    Tape<T> tape;
    TokenBatch<T> tb = TokenBatch<T>::from_sequences(inputs);
    auto [states, pooled] =
        model.text.forward(tape, model.dims, tb.ids, tb.groups, tb.valid);
    (void)pooled;
    Ref logits = tape.add_rowvec(tape.matmul(states, tape.param(head_w)), tape.param(head_b));
    Ref loss = tape.softmax_ce(logits, targets, &weights, "mlm_ce");
    const double value = static_cast<double>(tape.scalar(loss));
    if (!std::isfinite(value)) {
      const char* tag = tape.first_non_finite();
      throw NumericError(std::string("non-finite pretraining loss; first non-finite tensor: ") +
                         (tag ? tag : "<loss>"));
    }
    tape.backward(loss);
    opt.step(params, cfg.lr);
    losses.push_back(value);
  }
  model.text.set_frozen(true);
  return losses;
}

}  // namespace cravl
