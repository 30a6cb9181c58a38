#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "cravl/types.hpp"

namespace cravl {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A learnable (or frozen) tensor plus its gradient accumulator and Adam
// moments. Parameters are owned by model structs; the tape only references
// them for the duration of one forward/backward pass.
template <typename T>
struct Param {
  std::string name;
  MatX<T> w;
  MatX<T> g;
  MatX<T> m;
  MatX<T> v;
  bool trainable = true;
  bool decay = true;

  void init_zero(int rows, int cols) {
    w = MatX<T>::Zero(rows, cols);
    reset_state();
  }
  void reset_state() {
    g = MatX<T>::Zero(w.rows(), w.cols());
    m = MatX<T>::Zero(w.rows(), w.cols());
    v = MatX<T>::Zero(w.rows(), w.cols());
  }
  void zero_grad() { g.setZero(); }
};

// Row ranges partitioning a stacked token matrix into per-sample groups.
struct Groups {
  std::vector<int> offsets;  // size count()+1, offsets[0] == 0

  static Groups uniform(int count, int size) {
    Groups g;
    g.offsets.resize(static_cast<size_t>(count) + 1);
    for (int i = 0; i <= count; ++i) g.offsets[static_cast<size_t>(i)] = i * size;
    return g;
  }
  int count() const { return static_cast<int>(offsets.size()) - 1; }
  int begin(int b) const { return offsets[static_cast<size_t>(b)]; }
  int size(int b) const { return offsets[static_cast<size_t>(b) + 1] - offsets[static_cast<size_t>(b)]; }
  int total() const { return offsets.back(); }
};

struct Ref {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Post-softmax attention weights for every (group, head) block of one
// attention node; kept for the backward pass and for visualization. The
// buffer uses Eigen's aligned allocator so the Maps below always see the
// same alignment; heap-dependent vectorization peeling would otherwise make
// repeated forwards differ in the last bit.
template <typename T>
struct AttnProbs {
  int heads = 0;
  Groups q_groups;
  Groups kv_groups;
  std::vector<T, Eigen::aligned_allocator<T>> data;
  std::vector<size_t> block_start;  // index: b * heads + h

  Eigen::Map<const MatX<T>> block(int b, int h) const {
    return {data.data() + block_start[static_cast<size_t>(b) * heads + h],
            q_groups.size(b), kv_groups.size(b)};
  }
  Eigen::Map<MatX<T>> block_mut(int b, int h) {
    return {data.data() + block_start[static_cast<size_t>(b) * heads + h],
            q_groups.size(b), kv_groups.size(b)};
  }
};

// Reverse-mode tape. Ops append nodes whose closures accumulate into parent
// gradients; nodes are created in topological order, so one reverse sweep
// computes all gradients. Single-threaded by design.
template <typename T>
class Tape {
 public:
  struct Node {
    MatX<T> val;
    MatX<T> grad;
    bool requires_grad = false;
    const char* tag = "";
    std::function<void(Tape&)> back;
  };

  // ---- leaves ----

  Ref constant(MatX<T> v, const char* tag = "const") {
    return push(std::move(v), false, tag, nullptr);
  }

  Ref param(Param<T>& p) {
    Ref r = push(p.w, p.trainable, p.name.c_str(), nullptr);
    if (p.trainable) hooks_.emplace_back(r.id, &p);
    return r;
  }

  // ---- accessors ----

  const MatX<T>& val(Ref r) const { return nodes_[static_cast<size_t>(r.id)].val; }
  MatX<T>& grad(Ref r) { return ensure_grad(r.id); }
  bool requires_grad(Ref r) const { return nodes_[static_cast<size_t>(r.id)].requires_grad; }
  size_t size() const { return nodes_.size(); }

  T scalar(Ref r) const { return val(r)(0, 0); }

  // Tag of the first node holding a non-finite value, or nullptr.
  const char* first_non_finite() const {
    for (const auto& n : nodes_) {
      if (!n.val.allFinite()) return n.tag;
    }
    return nullptr;
  }

  // ---- arithmetic ----

  Ref add(Ref a, Ref b) {
    check_same_shape(a, b, "add");
    MatX<T> v = val(a) + val(b);
    return unary_binary(std::move(v), a, b, "add", [](Tape& t, Ref a, Ref b, const MatX<T>& g) {
      if (t.requires_grad(a)) t.ensure_grad(a.id) += g;
      if (t.requires_grad(b)) t.ensure_grad(b.id) += g;
    });
  }

  Ref scale(Ref a, T s, const char* tag = "scale") {
    MatX<T> v = val(a) * s;
    return unary_binary(std::move(v), a, Ref{}, tag, [s](Tape& t, Ref a, Ref, const MatX<T>& g) {
      if (t.requires_grad(a)) t.ensure_grad(a.id) += g * s;
    });
  }

  // a + scale_b * b, both 1x1; used to combine loss terms.
  Ref add_scaled(Ref a, Ref b, T scale_b, const char* tag = "add_scaled") {
    MatX<T> v = val(a) + scale_b * val(b);
    return unary_binary(std::move(v), a, b, tag,
                        [scale_b](Tape& t, Ref a, Ref b, const MatX<T>& g) {
                          if (t.requires_grad(a)) t.ensure_grad(a.id) += g;
                          if (t.requires_grad(b)) t.ensure_grad(b.id) += g * scale_b;
                        });
  }

  Ref matmul(Ref a, Ref b, const char* tag = "matmul") {
    if (val(a).cols() != val(b).rows()) throw NumericError("matmul: inner dimension mismatch");
    MatX<T> v(val(a).rows(), val(b).cols());
    v.noalias() = val(a) * val(b);
    return unary_binary(std::move(v), a, b, tag, [](Tape& t, Ref a, Ref b, const MatX<T>& g) {
      if (t.requires_grad(a)) t.ensure_grad(a.id).noalias() += g * t.val(b).transpose();
      if (t.requires_grad(b)) t.ensure_grad(b.id).noalias() += t.val(a).transpose() * g;
    });
  }

  // Broadcast-add a 1xC row vector to every row (bias add).
  Ref add_rowvec(Ref a, Ref v, const char* tag = "bias") {
    if (val(v).rows() != 1 || val(v).cols() != val(a).cols()) {
      throw NumericError("add_rowvec: shape mismatch");
    }
    MatX<T> out = val(a).rowwise() + val(v).row(0);
    return unary_binary(std::move(out), a, v, tag, [](Tape& t, Ref a, Ref v, const MatX<T>& g) {
      if (t.requires_grad(a)) t.ensure_grad(a.id) += g;
      if (t.requires_grad(v)) t.ensure_grad(v.id).row(0) += g.colwise().sum();
    });
  }

  Ref linear(Ref x, Param<T>& w, Param<T>& b, const char* tag = "linear") {
    return add_rowvec(matmul(x, param(w), tag), param(b), tag);
  }

  // Adds an (n x d) block parameter to each of the `count` stacked groups
  // (positional embeddings over a batch).
  Ref add_tiled(Ref a, Ref p, int count, const char* tag = "pos") {
    const int n = static_cast<int>(val(p).rows());
    if (val(a).rows() != static_cast<Eigen::Index>(n) * count || val(a).cols() != val(p).cols()) {
      throw NumericError("add_tiled: shape mismatch");
    }
    MatX<T> out = val(a);
    for (int b = 0; b < count; ++b) out.middleRows(b * n, n) += val(p);
    return unary_binary(std::move(out), a, p, tag,
                        [n, count](Tape& t, Ref a, Ref p, const MatX<T>& g) {
                          if (t.requires_grad(a)) t.ensure_grad(a.id) += g;
                          if (t.requires_grad(p)) {
                            auto& gp = t.ensure_grad(p.id);
                            for (int b = 0; b < count; ++b) gp += g.middleRows(b * n, n);
                          }
                        });
  }

  // Adds row b of `q` (count x d) to every row of group b in `a`.
  Ref add_group_rows(Ref a, Ref q, Groups groups, const char* tag = "broadcast") {
    if (val(q).rows() != groups.count() || val(a).rows() != groups.total() ||
        val(a).cols() != val(q).cols()) {
      throw NumericError("add_group_rows: shape mismatch");
    }
    MatX<T> out = val(a);
    for (int b = 0; b < groups.count(); ++b) {
      out.middleRows(groups.begin(b), groups.size(b)).rowwise() += val(q).row(b);
    }
    return unary_binary(std::move(out), a, q, tag,
                        [groups](Tape& t, Ref a, Ref q, const MatX<T>& g) {
                          if (t.requires_grad(a)) t.ensure_grad(a.id) += g;
                          if (t.requires_grad(q)) {
                            auto& gq = t.ensure_grad(q.id);
                            for (int b = 0; b < groups.count(); ++b) {
                              gq.row(b) +=
                                  g.middleRows(groups.begin(b), groups.size(b)).colwise().sum();
                            }
                          }
                        });
  }

  // ---- nonlinearities ----

  Ref gelu(Ref a, const char* tag = "gelu") {
    const MatX<T>& x = val(a);
    MatX<T> out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const T xv = x.data()[i];
      out.data()[i] = xv * phi(xv);
    }
    return unary_binary(std::move(out), a, Ref{}, tag, [](Tape& t, Ref a, Ref, const MatX<T>& g) {
      if (!t.requires_grad(a)) return;
      const MatX<T>& x = t.val(a);
      auto& ga = t.ensure_grad(a.id);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const T xv = x.data()[i];
        ga.data()[i] += g.data()[i] * (phi(xv) + xv * dphi(xv));
      }
    });
  }

  // Row-wise layer norm with learned gain/bias (1 x d each).
  Ref layer_norm(Ref a, Param<T>& gain, Param<T>& bias, const char* tag = "ln") {
    Ref gr = param(gain);
    Ref br = param(bias);
    const MatX<T>& x = val(a);
    const int d = static_cast<int>(x.cols());
    const T eps = static_cast<T>(1e-5);

    auto stats = std::make_shared<MatX<T>>(x.rows(), 2);  // mean, inv_std per row
    MatX<T> out(x.rows(), d);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T mean = x.row(r).mean();
      const T var = (x.row(r).array() - mean).square().sum() / d;
      const T inv_std = T(1) / std::sqrt(var + eps);
      (*stats)(r, 0) = mean;
      (*stats)(r, 1) = inv_std;
      out.row(r) =
          (((x.row(r).array() - mean) * inv_std) * val(gr).row(0).array() + val(br).row(0).array())
              .matrix();
    }
    Ref res = push(std::move(out), requires_grad(a) || requires_grad(gr) || requires_grad(br), tag,
                   nullptr);
    set_back(res, [a, gr, br, res, stats, d](Tape& t) {
      const MatX<T>& g = t.node_grad(res.id);
      if (g.size() == 0) return;
      const MatX<T>& x = t.val(a);
      const bool need_a = t.requires_grad(a);
      const bool need_gain = t.requires_grad(gr);
      const bool need_bias = t.requires_grad(br);
      Eigen::Matrix<T, 1, Eigen::Dynamic> gain_row = t.val(gr).row(0);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const T mean = (*stats)(r, 0);
        const T inv_std = (*stats)(r, 1);
        Eigen::Array<T, 1, Eigen::Dynamic> xhat = (x.row(r).array() - mean) * inv_std;
        if (need_bias) t.ensure_grad(br.id).row(0) += g.row(r);
        if (need_gain) t.ensure_grad(gr.id).row(0) += (g.row(r).array() * xhat).matrix();
        if (need_a) {
          Eigen::Array<T, 1, Eigen::Dynamic> gx = g.row(r).array() * gain_row.array();
          const T m1 = gx.mean();
          const T m2 = (gx * xhat).mean();
          t.ensure_grad(a.id).row(r) += ((gx - m1 - xhat * m2) * inv_std).matrix();
        }
      }
    });
    return res;
  }

  // ---- attention ----

  // Multi-head scaled dot-product attention over per-sample groups. Rows of
  // q/k/v are stacked tokens; group b of q attends to group b of k/v.
  // key_valid (optional) marks kv rows that may be attended to; invalid keys
  // get -inf logits. Post-softmax probabilities are exposed via probs_out.
  Ref attention(Ref q, Ref k, Ref v, int heads, Groups q_groups, Groups kv_groups,
                const std::vector<T>* key_valid = nullptr,
                std::shared_ptr<AttnProbs<T>>* probs_out = nullptr, const char* tag = "attn") {
    const int d = static_cast<int>(val(q).cols());
    if (d % heads != 0) throw NumericError("attention: heads must divide embedding dim");
    if (val(k).cols() != d || val(v).cols() != d) throw NumericError("attention: dim mismatch");
    if (q_groups.count() != kv_groups.count()) throw NumericError("attention: group mismatch");
    if (kv_groups.total() == 0) throw NumericError("attention: empty memory");
    const int dh = d / heads;
    const int B = q_groups.count();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    auto probs = std::make_shared<AttnProbs<T>>();
    probs->heads = heads;
    probs->q_groups = q_groups;
    probs->kv_groups = kv_groups;
    probs->block_start.resize(static_cast<size_t>(B) * heads);
    size_t total = 0;
    for (int b = 0; b < B; ++b) {
      for (int h = 0; h < heads; ++h) {
        probs->block_start[static_cast<size_t>(b) * heads + h] = total;
        total += static_cast<size_t>(q_groups.size(b)) * kv_groups.size(b);
      }
    }
    probs->data.resize(total);

    MatX<T> out = MatX<T>::Zero(val(q).rows(), d);
    for (int b = 0; b < B; ++b) {
      const int qb = q_groups.begin(b), nq = q_groups.size(b);
      const int kb = kv_groups.begin(b), nk = kv_groups.size(b);
      for (int h = 0; h < heads; ++h) {
        auto Q = val(q).block(qb, h * dh, nq, dh);
        auto K = val(k).block(kb, h * dh, nk, dh);
        auto V = val(v).block(kb, h * dh, nk, dh);
        auto P = probs->block_mut(b, h);
        P.noalias() = Q * K.transpose() * scale;
        if (key_valid) {
          for (int j = 0; j < nk; ++j) {
            if ((*key_valid)[static_cast<size_t>(kb + j)] == T(0)) {
              P.col(j).setConstant(static_cast<T>(-1e30));
            }
          }
        }
        for (int i = 0; i < nq; ++i) {
          const T mx = P.row(i).maxCoeff();
          P.row(i) = (P.row(i).array() - mx).exp();
          P.row(i) /= P.row(i).sum();
        }
        out.block(qb, h * dh, nq, dh).noalias() = P * V;
      }
    }
    if (probs_out) *probs_out = probs;

    Ref res = push(std::move(out), requires_grad(q) || requires_grad(k) || requires_grad(v), tag,
                   nullptr);
    set_back(res, [q, k, v, res, heads, dh, scale, q_groups, kv_groups, probs](Tape& t) {
      const MatX<T>& g = t.node_grad(res.id);
      if (g.size() == 0) return;
      const bool need_q = t.requires_grad(q);
      const bool need_k = t.requires_grad(k);
      const bool need_v = t.requires_grad(v);
      for (int b = 0; b < q_groups.count(); ++b) {
        const int qb = q_groups.begin(b), nq = q_groups.size(b);
        const int kb = kv_groups.begin(b), nk = kv_groups.size(b);
        for (int h = 0; h < heads; ++h) {
          auto P = probs->block(b, h);
          auto Go = g.block(qb, h * dh, nq, dh);
          if (need_v) {
            t.ensure_grad(v.id).block(kb, h * dh, nk, dh).noalias() += P.transpose() * Go;
          }
          if (need_q || need_k) {
            MatX<T> gP(nq, nk);
            gP.noalias() = Go * t.val(v).block(kb, h * dh, nk, dh).transpose();
            // softmax backward: gS = P .* (gP - rowsum(gP .* P))
            for (int i = 0; i < nq; ++i) {
              const T dot = (gP.row(i).array() * P.row(i).array()).sum();
              gP.row(i) = (P.row(i).array() * (gP.row(i).array() - dot)).matrix();
            }
            if (need_q) {
              t.ensure_grad(q.id).block(qb, h * dh, nq, dh).noalias() +=
                  gP * t.val(k).block(kb, h * dh, nk, dh) * scale;
            }
            if (need_k) {
              t.ensure_grad(k.id).block(kb, h * dh, nk, dh).noalias() +=
                  gP.transpose() * t.val(q).block(qb, h * dh, nq, dh) * scale;
            }
          }
        }
      }
    });
    return res;
  }

  // ---- pooling / normalization ----

  // Per-group (weighted) mean over rows -> (count x d). Throws when a group
  // has zero total weight.
  Ref mean_rows(Ref a, Groups groups, const std::vector<T>* row_weight = nullptr,
                const char* tag = "pool") {
    const int d = static_cast<int>(val(a).cols());
    auto wsum = std::make_shared<std::vector<T>>(static_cast<size_t>(groups.count()));
    MatX<T> out = MatX<T>::Zero(groups.count(), d);
    for (int b = 0; b < groups.count(); ++b) {
      T wtot = T(0);
      for (int r = groups.begin(b); r < groups.begin(b) + groups.size(b); ++r) {
        const T w = row_weight ? (*row_weight)[static_cast<size_t>(r)] : T(1);
        wtot += w;
        if (w != T(0)) out.row(b) += val(a).row(r) * w;
      }
      if (wtot <= T(0)) throw NumericError("mean_rows: empty group (no tokens to pool)");
      out.row(b) /= wtot;
      (*wsum)[static_cast<size_t>(b)] = wtot;
    }
    auto weights = row_weight ? std::make_shared<std::vector<T>>(*row_weight) : nullptr;
    return unary_binary(std::move(out), a, Ref{}, tag,
                        [groups, weights, wsum](Tape& t, Ref a, Ref, const MatX<T>& g) {
                          if (!t.requires_grad(a)) return;
                          auto& ga = t.ensure_grad(a.id);
                          for (int b = 0; b < groups.count(); ++b) {
                            const T wtot = (*wsum)[static_cast<size_t>(b)];
                            for (int r = groups.begin(b); r < groups.begin(b) + groups.size(b);
                                 ++r) {
                              const T w =
                                  weights ? (*weights)[static_cast<size_t>(r)] : T(1);
                              if (w != T(0)) ga.row(r) += g.row(b) * (w / wtot);
                            }
                          }
                        });
  }

  // Rows scaled to unit Euclidean norm.
  Ref l2_normalize_rows(Ref a, const char* tag = "l2norm") {
    const MatX<T>& x = val(a);
    auto inv_norm = std::make_shared<std::vector<T>>(static_cast<size_t>(x.rows()));
    MatX<T> out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T n = x.row(r).norm();
      (*inv_norm)[static_cast<size_t>(r)] = T(1) / n;
      out.row(r) = x.row(r) / n;
    }
    Ref res = push(std::move(out), requires_grad(a), tag, nullptr);
    set_back(res, [a, res, inv_norm](Tape& t) {
      const MatX<T>& g = t.node_grad(res.id);
      if (g.size() == 0 || !t.requires_grad(a)) return;
      const MatX<T>& y = t.val(res);
      auto& ga = t.ensure_grad(a.id);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const T dot = g.row(r).dot(y.row(r));
        ga.row(r) += (g.row(r) - y.row(r) * dot) * (*inv_norm)[static_cast<size_t>(r)];
      }
    });
    return res;
  }

  Ref concat_cols(Ref a, Ref b, const char* tag = "concat") {
    if (val(a).rows() != val(b).rows()) throw NumericError("concat_cols: row mismatch");
    const int ca = static_cast<int>(val(a).cols());
    const int cb = static_cast<int>(val(b).cols());
    MatX<T> out(val(a).rows(), ca + cb);
    out.leftCols(ca) = val(a);
    out.rightCols(cb) = val(b);
    return unary_binary(std::move(out), a, b, tag,
                        [ca, cb](Tape& t, Ref a, Ref b, const MatX<T>& g) {
                          if (t.requires_grad(a)) t.ensure_grad(a.id) += g.leftCols(ca);
                          if (t.requires_grad(b)) t.ensure_grad(b.id) += g.rightCols(cb);
                        });
  }

  // ---- embeddings and classification ----

  Ref embedding(Param<T>& table, const std::vector<int32_t>& ids, const char* tag = "embed") {
    Ref tr = param(table);
    const int vocab = static_cast<int>(val(tr).rows());
    MatX<T> out(static_cast<Eigen::Index>(ids.size()), val(tr).cols());
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= vocab) throw NumericError("embedding: token id out of range");
      out.row(static_cast<Eigen::Index>(i)) = val(tr).row(ids[i]);
    }
    auto idsp = std::make_shared<std::vector<int32_t>>(ids);
    return unary_binary(std::move(out), tr, Ref{}, tag,
                        [idsp](Tape& t, Ref tr, Ref, const MatX<T>& g) {
                          if (!t.requires_grad(tr)) return;
                          auto& gt = t.ensure_grad(tr.id);
                          for (size_t i = 0; i < idsp->size(); ++i) {
                            gt.row((*idsp)[i]) += g.row(static_cast<Eigen::Index>(i));
                          }
                        });
  }

  // Weighted mean of per-row softmax cross-entropy; targets are class
  // indices. Returns a 1x1 node.
  Ref softmax_ce(Ref logits, const std::vector<int32_t>& targets,
                 const std::vector<T>* row_weight = nullptr, const char* tag = "ce") {
    const MatX<T>& x = val(logits);
    if (static_cast<size_t>(x.rows()) != targets.size()) {
      throw NumericError("softmax_ce: target count mismatch");
    }
    auto probs = std::make_shared<MatX<T>>(x.rows(), x.cols());
    T loss = T(0);
    T wtot = T(0);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const int32_t tgt = targets[static_cast<size_t>(r)];
      if (tgt < 0 || tgt >= x.cols()) throw NumericError("softmax_ce: target out of range");
      const T mx = x.row(r).maxCoeff();
      Eigen::Array<T, 1, Eigen::Dynamic> e = (x.row(r).array() - mx).exp();
      const T z = e.sum();
      probs->row(r) = (e / z).matrix();
      const T w = row_weight ? (*row_weight)[static_cast<size_t>(r)] : T(1);
      wtot += w;
      if (w != T(0)) {
        loss -= w * (x(r, targets[static_cast<size_t>(r)]) - mx - std::log(z));
      }
    }
    if (wtot <= T(0)) throw NumericError("softmax_ce: zero total weight");
    loss /= wtot;

    MatX<T> out(1, 1);
    out(0, 0) = loss;
    auto tg = std::make_shared<std::vector<int32_t>>(targets);
    auto weights = row_weight ? std::make_shared<std::vector<T>>(*row_weight) : nullptr;
    return unary_binary(std::move(out), logits, Ref{}, tag,
                        [probs, tg, weights, wtot](Tape& t, Ref logits, Ref, const MatX<T>& g) {
                          if (!t.requires_grad(logits)) return;
                          const T seed = g(0, 0);
                          auto& gl = t.ensure_grad(logits.id);
                          for (Eigen::Index r = 0; r < probs->rows(); ++r) {
                            const T w = weights ? (*weights)[static_cast<size_t>(r)] : T(1);
                            if (w == T(0)) continue;
                            gl.row(r) += probs->row(r) * (seed * w / wtot);
                            gl(r, (*tg)[static_cast<size_t>(r)]) -= seed * w / wtot;
                          }
                        });
  }

  // Mean over rows of the squared L2 distance between a and c. 1x1 node.
  Ref mse_rows_mean(Ref a, Ref c, const char* tag = "mse") {
    check_same_shape(a, c, "mse_rows_mean");
    const T n = static_cast<T>(val(a).rows());
    MatX<T> out(1, 1);
    out(0, 0) = (val(a) - val(c)).squaredNorm() / n;
    return unary_binary(std::move(out), a, c, tag, [n](Tape& t, Ref a, Ref c, const MatX<T>& g) {
      const T seed = g(0, 0);
      if (t.requires_grad(a)) t.ensure_grad(a.id) += (t.val(a) - t.val(c)) * (T(2) * seed / n);
      if (t.requires_grad(c)) t.ensure_grad(c.id) -= (t.val(a) - t.val(c)) * (T(2) * seed / n);
    });
  }

  // ---- generic op plumbing (used by the loss module) ----

  Ref push(MatX<T> val, bool requires_grad, const char* tag, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(val);
    n.requires_grad = requires_grad;
    n.tag = tag;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Ref{static_cast<int32_t>(nodes_.size() - 1)};
  }

  void set_back(Ref r, std::function<void(Tape&)> back) {
    nodes_[static_cast<size_t>(r.id)].back = std::move(back);
  }

  MatX<T>& ensure_grad(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) n.grad = MatX<T>::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  // Grad buffer as accumulated so far; may be empty (never touched).
  const MatX<T>& node_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, then exports
  // parameter gradients into their Param::g accumulators.
  void backward(Ref loss) {
    if (val(loss).rows() != 1 || val(loss).cols() != 1) {
      throw NumericError("backward: loss must be scalar");
    }
    ensure_grad(loss.id)(0, 0) = T(1);
    for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.back && n.grad.size() != 0) n.back(*this);
    }
    for (auto& [id, p] : hooks_) {
      const MatX<T>& g = nodes_[static_cast<size_t>(id)].grad;
      if (g.size() != 0) p->g += g;
    }
  }

  void clear() {
    nodes_.clear();
    hooks_.clear();
  }

 private:
  static T phi(T x) {
    return static_cast<T>(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2.0)));
  }
  static T dphi(T x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return static_cast<T>(inv_sqrt_2pi * std::exp(-0.5 * static_cast<double>(x) * x));
  }

  void check_same_shape(Ref a, Ref b, const char* what) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols()) {
      throw NumericError(std::string(what) + ": shape mismatch");
    }
  }

  template <typename F>
  Ref unary_binary(MatX<T> v, Ref a, Ref b, const char* tag, F&& fn) {
    const bool rg = requires_grad(a) || (b.valid() && requires_grad(b));
    Ref res = push(std::move(v), rg, tag, nullptr);
    if (rg) {
      set_back(res, [a, b, res, fn = std::forward<F>(fn)](Tape& t) {
        const MatX<T>& g = t.node_grad(res.id);
        if (g.size() == 0) return;
        fn(t, a, b, g);
      });
    }
    return res;
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int32_t, Param<T>*>> hooks_;
};

}  // namespace cravl
