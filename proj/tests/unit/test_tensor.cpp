#include <doctest.h>

#include <functional>

#include "cravl/rng.hpp"
#include "cravl/tensor.hpp"

using namespace cravl;

namespace {

void fill_normal(MatX<double>& m, Rng& rng, double std = 0.5) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * std;
}

Param<double> make_param(const char* name, int r, int c, Rng& rng) {
  Param<double> p;
  p.name = name;
  p.init_zero(r, c);
  fill_normal(p.w, rng);
  return p;
}

// Central-difference check of d(loss)/d(param) for every listed parameter
// against one backward sweep.
void check_gradients(std::vector<Param<double>*> params,
                     const std::function<Ref(Tape<double>&)>& build, double h = 1e-6,
                     double tol = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Ref loss = build(tape);
    REQUIRE(tape.val(loss).size() == 1);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape<double> tape;
    return tape.scalar(build(tape));
  };
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->w.size(); ++i) {
      const double orig = p->w.data()[i];
      p->w.data()[i] = orig + h;
      const double lp = eval();
      p->w.data()[i] = orig - h;
      const double lm = eval();
      p->w.data()[i] = orig;
      const double fd = (lp - lm) / (2 * h);
      const double analytic = p->g.data()[i];
      const double rel = std::abs(analytic - fd) / std::max(1e-12, std::abs(fd) + std::abs(analytic));
      INFO(p->name << "[" << i << "]: analytic " << analytic << " fd " << fd);
      CHECK(rel <= tol);
    }
  }
}

// Sum of squares as a scalar head so every op output feeds a scalar loss.
Ref sumsq(Tape<double>& t, Ref x) {
  return t.mse_rows_mean(x, t.constant(MatX<double>::Zero(t.val(x).rows(), t.val(x).cols())));
}

}  // namespace

TEST_CASE("gradients: linear, layernorm, gelu chain") {
  Rng rng(1);
  auto w = make_param("w", 4, 6, rng);
  auto b = make_param("b", 1, 6, rng);
  auto gain = make_param("gain", 1, 6, rng);
  auto bias = make_param("bias", 1, 6, rng);
  MatX<double> x(3, 4);
  fill_normal(x, rng);

  check_gradients({&w, &b, &gain, &bias}, [&](Tape<double>& t) {
    Ref h = t.linear(t.constant(x), w, b);
    h = t.layer_norm(h, gain, bias);
    h = t.gelu(h);
    return sumsq(t, h);
  });
}

TEST_CASE("gradients: attention with groups and a key mask") {
  Rng rng(2);
  auto wq = make_param("wq", 6, 6, rng);
  auto wk = make_param("wk", 6, 6, rng);
  auto wv = make_param("wv", 6, 6, rng);
  MatX<double> own(5, 6), mem(7, 6);
  fill_normal(own, rng);
  fill_normal(mem, rng);
  Groups qg;
  qg.offsets = {0, 2, 5};
  Groups kg;
  kg.offsets = {0, 4, 7};
  std::vector<double> valid = {1, 1, 0, 1, 1, 0, 1};  // two masked keys

  check_gradients({&wq, &wk, &wv}, [&](Tape<double>& t) {
    Ref q = t.matmul(t.constant(own), t.param(wq));
    Ref k = t.matmul(t.constant(mem), t.param(wk));
    Ref v = t.matmul(t.constant(mem), t.param(wv));
    Ref a = t.attention(q, k, v, 2, qg, kg, &valid);
    return sumsq(t, a);
  });
}

TEST_CASE("gradients: pooling, normalization, embedding, ce") {
  Rng rng(3);
  auto table = make_param("table", 11, 6, rng);
  auto proj = make_param("proj", 6, 5, rng);
  auto q = make_param("q", 2, 6, rng);
  const std::vector<int32_t> ids = {1, 4, 9, 2, 2, 7};
  Groups groups;
  groups.offsets = {0, 4, 6};
  std::vector<double> weights = {1, 1, 0, 1, 1, 1};
  const std::vector<int32_t> targets = {3, 0};

  check_gradients({&table, &proj, &q}, [&](Tape<double>& t) {
    Ref e = t.embedding(table, ids);
    e = t.add_group_rows(e, t.param(q), groups);
    Ref pooled = t.mean_rows(e, groups, &weights);
    pooled = t.l2_normalize_rows(pooled);
    Ref logits = t.matmul(pooled, t.param(proj));
    return t.softmax_ce(logits, targets);
  });
}

TEST_CASE("gradients: concat and tiled position add") {
  Rng rng(4);
  auto pos = make_param("pos", 3, 4, rng);
  auto a = make_param("a", 6, 4, rng);
  auto b = make_param("b", 6, 2, rng);

  check_gradients({&pos, &a, &b}, [&](Tape<double>& t) {
    Ref x = t.add_tiled(t.param(a), t.param(pos), 2);
    Ref y = t.concat_cols(x, t.param(b));
    return sumsq(t, y);
  });
}

TEST_CASE("attention: rows are probability distributions, masked keys get zero") {
  Rng rng(5);
  MatX<double> q(6, 8), k(9, 8), v(9, 8);
  fill_normal(q, rng);
  fill_normal(k, rng);
  fill_normal(v, rng);
  Groups qg;
  qg.offsets = {0, 3, 6};
  Groups kg;
  kg.offsets = {0, 5, 9};
  std::vector<double> valid = {1, 0, 1, 1, 1, 1, 1, 0, 1};

  Tape<double> t;
  std::shared_ptr<AttnProbs<double>> probs;
  t.attention(t.constant(q), t.constant(k), t.constant(v), 2, qg, kg, &valid, &probs);
  REQUIRE(probs);
  for (int b = 0; b < 2; ++b) {
    for (int h = 0; h < 2; ++h) {
      auto block = probs->block(b, h);
      for (int i = 0; i < block.rows(); ++i) {
        CHECK(block.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
        for (int j = 0; j < block.cols(); ++j) {
          if (valid[static_cast<size_t>(kg.begin(b) + j)] == 0.0) {
            CHECK(block(i, j) == 0.0);
          }
        }
      }
    }
  }
}

TEST_CASE("attention: singleton memory returns that value row for every query") {
  Rng rng(6);
  MatX<double> q(4, 8), k(1, 8), v(1, 8);
  fill_normal(q, rng);
  fill_normal(k, rng);
  fill_normal(v, rng);
  Tape<double> t;
  Ref out = t.attention(t.constant(q), t.constant(k), t.constant(v), 2, Groups::uniform(1, 4),
                        Groups::uniform(1, 1));
  for (int i = 0; i < 4; ++i) {
    for (int c = 0; c < 8; ++c) {
      CHECK(t.val(out)(i, c) == doctest::Approx(v(0, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention: identical keys produce uniform weights") {
  Rng rng(7);
  MatX<double> q(3, 4), k(5, 4), v(5, 4);
  fill_normal(q, rng);
  MatX<double> one_key(1, 4);
  fill_normal(one_key, rng);
  for (int i = 0; i < 5; ++i) k.row(i) = one_key.row(0);
  fill_normal(v, rng);

  Tape<double> t;
  std::shared_ptr<AttnProbs<double>> probs;
  t.attention(t.constant(q), t.constant(k), t.constant(v), 2, Groups::uniform(1, 3),
              Groups::uniform(1, 5), nullptr, &probs);
  for (int h = 0; h < 2; ++h) {
    auto block = probs->block(0, h);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 5; ++j) {
        CHECK(block(i, j) == doctest::Approx(0.2).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("attention: permuting memory tokens permutes columns and preserves context") {
  Rng rng(8);
  MatX<double> q(4, 6), k(5, 6), v(5, 6);
  fill_normal(q, rng);
  fill_normal(k, rng);
  fill_normal(v, rng);
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  MatX<double> kp(5, 6), vp(5, 6);
  for (int i = 0; i < 5; ++i) {
    kp.row(i) = k.row(perm[static_cast<size_t>(i)]);
    vp.row(i) = v.row(perm[static_cast<size_t>(i)]);
  }

  Tape<double> t;
  std::shared_ptr<AttnProbs<double>> p1, p2;
  Ref o1 = t.attention(t.constant(q), t.constant(k), t.constant(v), 2, Groups::uniform(1, 4),
                       Groups::uniform(1, 5), nullptr, &p1);
  Ref o2 = t.attention(t.constant(q), t.constant(kp), t.constant(vp), 2, Groups::uniform(1, 4),
                       Groups::uniform(1, 5), nullptr, &p2);
  CHECK((t.val(o1) - t.val(o2)).cwiseAbs().maxCoeff() < 1e-12);
  for (int h = 0; h < 2; ++h) {
    auto b1 = p1->block(0, h);
    auto b2 = p2->block(0, h);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 5; ++j) {
        CHECK(b2(i, j) == doctest::Approx(b1(i, perm[static_cast<size_t>(j)])).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("l2 normalization yields unit rows; empty pooling groups throw") {
  Rng rng(9);
  MatX<double> x(4, 7);
  fill_normal(x, rng);
  Tape<double> t;
  Ref y = t.l2_normalize_rows(t.constant(x));
  for (int i = 0; i < 4; ++i) {
    CHECK(t.val(y).row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }

  Groups g;
  g.offsets = {0, 2, 4};
  std::vector<double> zeroed = {1, 1, 0, 0};
  CHECK_THROWS_AS(t.mean_rows(t.constant(x), g, &zeroed), NumericError);
}

TEST_CASE("non-finite detection names the first offending node") {
  Tape<double> t;
  MatX<double> bad(1, 2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  t.constant(MatX<double>::Ones(2, 2), "fine");
  t.constant(bad, "broken");
  CHECK(std::string(t.first_non_finite()) == "broken");
}
