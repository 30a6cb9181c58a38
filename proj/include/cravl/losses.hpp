#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cravl/tensor.hpp"

namespace cravl {

enum class LossVariant { SigCL, UniCL, SCE };

const char* to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);

// Learnable loss scalars. The logit scale is stored as log t so that t stays
// positive under unconstrained updates.
struct LossConfig {
  LossVariant variant = LossVariant::SigCL;
  double init_t = 10.0;
  double init_b = 10.0;
  double lambda = 5.0;
};

namespace detail {

template <typename T>
T log_sigmoid(T x) {
  // -softplus(-x), saturation-safe in both directions
  if (x >= T(0)) {
    return -std::log1p(std::exp(-x));
  }
  return x - std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// Supervised pairwise sigmoid contrastive loss. All (i, j) index pairs with
// equal labels are positives (the diagonal included); the positive term is
// normalized by the positive-pair count, the negative term by the batch
// size. zi/zj are (B x d) unit-norm embeddings, log_t and b are 1x1 nodes.
template <typename T>
Ref sigcl_op(Tape<T>& tape, Ref zi, Ref zj, std::vector<int> labels, Ref log_t, Ref b) {
  const auto& Zi = tape.val(zi);
  const auto& Zj = tape.val(zj);
  const int B = static_cast<int>(Zi.rows());
  if (B == 0) throw UsageError("sigcl: empty batch");
  if (Zj.rows() != B || static_cast<int>(labels.size()) != B) {
    throw NumericError("sigcl: batch size mismatch");
  }
  const T t = std::exp(tape.scalar(log_t));
  const T bias = tape.scalar(b);

  auto D = std::make_shared<MatX<T>>(B, B);
  D->noalias() = Zi * Zj.transpose();

  int64_t n_pos = 0;
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < B; ++j) n_pos += labels[i] == labels[j];
  }
  T loss = T(0);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < B; ++j) {
      const T d = (*D)(i, j);
      if (labels[i] == labels[j]) {
        loss -= detail::log_sigmoid(t * d - bias) / static_cast<T>(n_pos);
      } else {
        loss -= detail::log_sigmoid(bias - t * d) / static_cast<T>(B);
      }
    }
  }

  MatX<T> out(1, 1);
  out(0, 0) = loss;
  const bool rg = tape.requires_grad(zi) || tape.requires_grad(zj) || tape.requires_grad(log_t) ||
                  tape.requires_grad(b);
  Ref res = tape.push(std::move(out), rg, "sigcl", nullptr);
  if (!rg) return res;
  tape.set_back(res, [zi, zj, log_t, b, res, D, labels = std::move(labels), t, bias, n_pos,
                      B](Tape<T>& tp) {
    const MatX<T>& gout = tp.node_grad(res.id);
    if (gout.size() == 0) return;
    const T seed = gout(0, 0);

    MatX<T> G(B, B);
    T gb = T(0);
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < B; ++j) {
        const T d = (*D)(i, j);
        if (labels[i] == labels[j]) {
          const T sp = detail::sigmoid(bias - t * d);  // sigma(-(t d - b))
          G(i, j) = -seed * t * sp / static_cast<T>(n_pos);
          gb += seed * sp / static_cast<T>(n_pos);
        } else {
          const T sn = detail::sigmoid(t * d - bias);  // sigma(-(b - t d))
          G(i, j) = seed * t * sn / static_cast<T>(B);
          gb -= seed * sn / static_cast<T>(B);
        }
      }
    }
    if (tp.requires_grad(zi)) tp.ensure_grad(zi.id).noalias() += G * tp.val(zj);
    if (tp.requires_grad(zj)) tp.ensure_grad(zj.id).noalias() += G.transpose() * tp.val(zi);
    if (tp.requires_grad(log_t)) tp.ensure_grad(log_t.id)(0, 0) += (G.array() * D->array()).sum();
    if (tp.requires_grad(b)) tp.ensure_grad(b.id)(0, 0) += gb;
  });
  return res;
}

// Supervised bidirectional InfoNCE: per row (and symmetrically per column)
// the mean log-softmax mass over same-label targets, averaged both ways.
template <typename T>
Ref unicl_op(Tape<T>& tape, Ref zi, Ref zj, std::vector<int> labels, Ref log_t) {
  const auto& Zi = tape.val(zi);
  const auto& Zj = tape.val(zj);
  const int B = static_cast<int>(Zi.rows());
  if (B == 0) throw UsageError("unicl: empty batch");
  if (Zj.rows() != B || static_cast<int>(labels.size()) != B) {
    throw NumericError("unicl: batch size mismatch");
  }
  const T t = std::exp(tape.scalar(log_t));

  auto D = std::make_shared<MatX<T>>(B, B);
  D->noalias() = Zi * Zj.transpose();

  std::vector<int> pos_count(static_cast<size_t>(B), 0);
  for (int i = 0; i < B; ++i) {
    for (int j = 0; j < B; ++j) pos_count[static_cast<size_t>(i)] += labels[i] == labels[j];
  }

  // Row/column softmaxes of t*D, shared with the backward pass; the loss is
  // accumulated in shifted log space so tiny probabilities cannot underflow.
  auto srow = std::make_shared<MatX<T>>(B, B);
  auto scol = std::make_shared<MatX<T>>(B, B);
  std::vector<T> row_mx(static_cast<size_t>(B)), row_logz(static_cast<size_t>(B));
  std::vector<T> col_mx(static_cast<size_t>(B)), col_logz(static_cast<size_t>(B));
  for (int i = 0; i < B; ++i) {
    Eigen::Array<T, 1, Eigen::Dynamic> a = (*D).row(i).array() * t;
    const T mx = a.maxCoeff();
    a = (a - mx).exp();
    const T z = a.sum();
    srow->row(i) = (a / z).matrix();
    row_mx[static_cast<size_t>(i)] = mx;
    row_logz[static_cast<size_t>(i)] = std::log(z);
  }
  for (int j = 0; j < B; ++j) {
    Eigen::Array<T, Eigen::Dynamic, 1> a = (*D).col(j).array() * t;
    const T mx = a.maxCoeff();
    a = (a - mx).exp();
    const T z = a.sum();
    scol->col(j) = (a / z).matrix();
    col_mx[static_cast<size_t>(j)] = mx;
    col_logz[static_cast<size_t>(j)] = std::log(z);
  }

  T loss = T(0);
  for (int i = 0; i < B; ++i) {
    T li = T(0), lj = T(0);
    for (int j = 0; j < B; ++j) {
      if (labels[i] != labels[j]) continue;
      li += t * (*D)(i, j) - row_mx[static_cast<size_t>(i)] - row_logz[static_cast<size_t>(i)];
      lj += t * (*D)(j, i) - col_mx[static_cast<size_t>(i)] - col_logz[static_cast<size_t>(i)];
    }
    loss -= li / static_cast<T>(pos_count[static_cast<size_t>(i)]);
    loss -= lj / static_cast<T>(pos_count[static_cast<size_t>(i)]);
  }
  loss /= static_cast<T>(2 * B);

  MatX<T> out(1, 1);
  out(0, 0) = loss;
  const bool rg = tape.requires_grad(zi) || tape.requires_grad(zj) || tape.requires_grad(log_t);
  Ref res = tape.push(std::move(out), rg, "unicl", nullptr);
  if (!rg) return res;
  tape.set_back(res, [zi, zj, log_t, res, D, srow, scol, labels = std::move(labels),
                      pos_count = std::move(pos_count), t, B](Tape<T>& tp) {
    const MatX<T>& gout = tp.node_grad(res.id);
    if (gout.size() == 0) return;
    const T seed = gout(0, 0);
    const T c = seed * t / static_cast<T>(2 * B);

    MatX<T> G(B, B);
    for (int i = 0; i < B; ++i) {
      for (int k = 0; k < B; ++k) {
        const bool pos_ik = labels[i] == labels[k];
        T g = (*srow)(i, k);
        if (pos_ik) g -= T(1) / static_cast<T>(pos_count[static_cast<size_t>(i)]);
        T gc = (*scol)(i, k);
        if (pos_ik) gc -= T(1) / static_cast<T>(pos_count[static_cast<size_t>(k)]);
        G(i, k) = c * (g + gc);
      }
    }
    if (tp.requires_grad(zi)) tp.ensure_grad(zi.id).noalias() += G * tp.val(zj);
    if (tp.requires_grad(zj)) tp.ensure_grad(zj.id).noalias() += G.transpose() * tp.val(zi);
    if (tp.requires_grad(log_t)) tp.ensure_grad(log_t.id)(0, 0) += (G.array() * D->array()).sum();
  });
  return res;
}

// CLIP-style symmetric cross-entropy against the diagonal.
template <typename T>
Ref sce_op(Tape<T>& tape, Ref zi, Ref zj, Ref log_t) {
  const auto& Zi = tape.val(zi);
  const auto& Zj = tape.val(zj);
  const int B = static_cast<int>(Zi.rows());
  if (B == 0) throw UsageError("sce: empty batch");
  if (Zj.rows() != B) throw NumericError("sce: batch size mismatch");
  const T t = std::exp(tape.scalar(log_t));

  auto D = std::make_shared<MatX<T>>(B, B);
  D->noalias() = Zi * Zj.transpose();

  auto srow = std::make_shared<MatX<T>>(B, B);
  auto scol = std::make_shared<MatX<T>>(B, B);
  T loss = T(0);
  for (int i = 0; i < B; ++i) {
    Eigen::Array<T, 1, Eigen::Dynamic> a = (*D).row(i).array() * t;
    const T mx = a.maxCoeff();
    a = (a - mx).exp();
    const T z = a.sum();
    srow->row(i) = (a / z).matrix();
    loss -= t * (*D)(i, i) - mx - std::log(z);
  }
  for (int j = 0; j < B; ++j) {
    Eigen::Array<T, Eigen::Dynamic, 1> a = (*D).col(j).array() * t;
    const T mx = a.maxCoeff();
    a = (a - mx).exp();
    const T z = a.sum();
    scol->col(j) = (a / z).matrix();
    loss -= t * (*D)(j, j) - mx - std::log(z);
  }
  loss /= static_cast<T>(2 * B);

  MatX<T> out(1, 1);
  out(0, 0) = loss;
  const bool rg = tape.requires_grad(zi) || tape.requires_grad(zj) || tape.requires_grad(log_t);
  Ref res = tape.push(std::move(out), rg, "sce", nullptr);
  if (!rg) return res;
  tape.set_back(res, [zi, zj, log_t, res, D, srow, scol, t, B](Tape<T>& tp) {
    const MatX<T>& gout = tp.node_grad(res.id);
    if (gout.size() == 0) return;
    const T c = gout(0, 0) * t / static_cast<T>(2 * B);
    MatX<T> G = *srow + *scol;
    G.diagonal().array() -= T(2);
    G *= c;
    if (tp.requires_grad(zi)) tp.ensure_grad(zi.id).noalias() += G * tp.val(zj);
    if (tp.requires_grad(zj)) tp.ensure_grad(zj.id).noalias() += G.transpose() * tp.val(zi);
    if (tp.requires_grad(log_t)) tp.ensure_grad(log_t.id)(0, 0) += (G.array() * D->array()).sum();
  });
  return res;
}

// Dispatch on the configured variant (b is ignored by UniCL/SCE).
template <typename T>
Ref contrastive_op(Tape<T>& tape, LossVariant variant, Ref zi, Ref zj, std::vector<int> labels,
                   Ref log_t, Ref b) {
  switch (variant) {
    case LossVariant::SigCL:
      return sigcl_op(tape, zi, zj, std::move(labels), log_t, b);
    case LossVariant::UniCL:
      return unicl_op(tape, zi, zj, std::move(labels), log_t);
    case LossVariant::SCE:
      return sce_op(tape, zi, zj, log_t);
  }
  throw UsageError("unknown loss variant");
}

// ---------------------------------------------------------------------------
// Plain-value entry points
// ---------------------------------------------------------------------------

template <typename T>
T sigcl(const MatX<T>& zi, const MatX<T>& zj, const std::vector<int>& labels, T t, T b) {
  Tape<T> tape;
  Ref lt = tape.constant(MatX<T>::Constant(1, 1, std::log(t)));
  Ref bb = tape.constant(MatX<T>::Constant(1, 1, b));
  return tape.scalar(sigcl_op(tape, tape.constant(zi), tape.constant(zj), labels, lt, bb));
}

template <typename T>
T unicl(const MatX<T>& zi, const MatX<T>& zj, const std::vector<int>& labels, T t) {
  Tape<T> tape;
  Ref lt = tape.constant(MatX<T>::Constant(1, 1, std::log(t)));
  return tape.scalar(unicl_op(tape, tape.constant(zi), tape.constant(zj), labels, lt));
}

template <typename T>
T sce(const MatX<T>& zi, const MatX<T>& zj, T t) {
  Tape<T> tape;
  Ref lt = tape.constant(MatX<T>::Constant(1, 1, std::log(t)));
  return tape.scalar(sce_op(tape, tape.constant(zi), tape.constant(zj), lt));
}

// Squared L2 distance between two equally shaped feature vectors (a sum, not
// a mean).
template <typename T>
T mse_style(const MatX<T>& qs, const MatX<T>& qs_online) {
  if (qs.rows() != qs_online.rows() || qs.cols() != qs_online.cols()) {
    throw NumericError("mse_style: shape mismatch");
  }
  return (qs - qs_online).squaredNorm();
}

template <typename T>
T total_loss(T contrastive, T mse, T lambda) {
  if (lambda < T(0)) throw UsageError("total_loss: lambda must be non-negative");
  return contrastive + lambda * mse;
}

}  // namespace cravl
