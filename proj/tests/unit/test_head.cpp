#include <doctest.h>

#include "cravl/head.hpp"
#include "cravl/synth.hpp"
#include "test_helpers.hpp"

using namespace cravl;
using cravl::testing::TempDir;

namespace {

ModelDims tiny_dims() {
  ModelDims dims;
  dims.image = 32;
  dims.patch = 8;
  dims.d = 16;
  dims.heads = 2;
  dims.content_layers = 1;
  dims.style_layers = 1;
  dims.text_layers = 1;
  dims.fusion_blocks = 1;
  dims.d_joint = 16;
  dims.vocab = vocab_size();
  return dims;
}

MatX<double> unit_row(int dim, uint64_t seed) {
  Rng rng(seed);
  MatX<double> z(1, dim);
  for (int i = 0; i < dim; ++i) z(0, i) = rng.normal();
  z.row(0) /= z.row(0).norm();
  return z;
}

}  // namespace

TEST_CASE("head_forward: softmax output, uniform for zero weights, deterministic") {
  Head<double> head;
  head.init(16, 3);
  const MatX<double> zi = unit_row(16, 1);
  const MatX<double> zj = unit_row(16, 2);

  const auto probs = head_forward(head, zi, zj);
  double sum = 0;
  for (double p : probs) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  const auto again = head_forward(head, zi, zj);
  CHECK(probs == again);

  Head<double> zeros;
  zeros.init(16, 3);
  std::vector<Param<double>*> params;
  zeros.collect(params);
  for (auto* p : params) p->w.setZero();
  const auto uniform = head_forward(zeros, zi, zj);
  for (double p : uniform) CHECK(p == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("head argmax is invariant to a constant logit shift") {
  Head<double> head;
  head.init(16, 7);
  const MatX<double> zi = unit_row(16, 5);
  const MatX<double> zj = unit_row(16, 6);
  const auto base = head_forward(head, zi, zj);
  const int arg_base =
      static_cast<int>(std::max_element(base.begin(), base.end()) - base.begin());

  head.joint_b2.w.array() += 3.7;  // shifts every class logit equally
  const auto shifted = head_forward(head, zi, zj);
  const int arg_shift =
      static_cast<int>(std::max_element(shifted.begin(), shifted.end()) - shifted.begin());
  CHECK(arg_base == arg_shift);
  for (int k = 0; k < kNumRatings; ++k) {
    CHECK(shifted[static_cast<size_t>(k)] ==
          doctest::Approx(base[static_cast<size_t>(k)]).epsilon(1e-9));
  }
}

TEST_CASE("majority_vote: strict majority, restrictive tie-break, degenerate") {
  using R = ContentRating;
  CHECK(majority_vote({R::G, R::G, R::PG, R::M}) == R::G);
  CHECK(majority_vote({R::PG, R::M}) == R::M);  // tie goes to the higher rating
  CHECK(majority_vote({R::MA15}) == R::MA15);
  CHECK(majority_vote({R::G, R::R18, R::G, R::R18}) == R::R18);
  CHECK_THROWS_AS(majority_vote({}), UsageError);

  // the winner is always among the votes
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<R> votes;
    const int n = static_cast<int>(rng.uniform_int(1, 9));
    for (int i = 0; i < n; ++i) {
      votes.push_back(rating_from_ordinal(static_cast<int>(rng.uniform_int(0, 4))));
    }
    const R winner = majority_vote(votes);
    CHECK(std::find(votes.begin(), votes.end(), winner) != votes.end());
  }
}

TEST_CASE("train_head: loss decreases, single-class set is memorized, encoders untouched") {
  TempDir dir("head");
  DataSpec spec;
  spec.n_apps = 20;
  spec.seed = 42;
  spec.image_size = 32;
  spec.screenshots_min = 0;
  spec.screenshots_max = 1;
  const auto records = gen_dataset(spec, dir.str());

  Model<double> model;
  model.dims = tiny_dims();
  model.init(42);
  model.text.set_frozen(true);

  const MatX<double> content_before = model.content.patch_w.w;
  auto pairs = embed_dataset(model, records, dir.str());
  CHECK(model.content.patch_w.w == content_before);  // inference never writes

  Head<double> head;
  head.init(model.dims.d_joint, 42);
  HeadConfig cfg;
  cfg.epochs = 40;
  cfg.batch = 8;
  cfg.seed = 42;
  const auto losses = train_head(head, pairs, cfg);
  REQUIRE(losses.size() >= 100);
  double early = 0, late = 0;
  for (int i = 0; i < 10; ++i) {
    early += losses[static_cast<size_t>(i)] / 10;
    late += losses[losses.size() - 1 - static_cast<size_t>(i)] / 10;
  }
  CHECK(losses[99] < losses[0]);
  CHECK(late < early);
  CHECK(model.content.patch_w.w == content_before);

  // single-class training data is predicted as that class on its own inputs
  EmbeddedPairs<double> single = pairs;
  std::fill(single.labels.begin(), single.labels.end(), 3);
  Head<double> head2;
  head2.init(model.dims.d_joint, 7);
  HeadConfig cfg2;
  cfg2.epochs = 30;
  cfg2.batch = 16;
  train_head(head2, single, cfg2);
  for (Eigen::Index r = 0; r < single.z_img.rows(); ++r) {
    MatX<double> zi = single.z_img.row(r);
    MatX<double> zj = single.z_txt.row(r);
    const auto probs = head_forward(head2, zi, zj);
    const int arg =
        static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    CHECK(arg == 3);
  }
}

TEST_CASE("predict_app: vote per image, screenshot order invariance, no-image error") {
  TempDir dir("predict");
  DataSpec spec;
  spec.n_apps = 6;
  spec.seed = 3;
  spec.image_size = 32;
  spec.screenshots_min = 2;
  spec.screenshots_max = 3;
  const auto records = gen_dataset(spec, dir.str());

  Model<double> model;
  model.dims = tiny_dims();
  model.init(15);
  model.text.set_frozen(true);
  Head<double> head;
  head.init(model.dims.d_joint, 2);

  const AppRecord& app = records[0];
  const PredictionRecord pred = predict_app(model, head, app, dir.str());
  CHECK(pred.app_id == app.app_id);
  CHECK(pred.votes.size() == static_cast<size_t>(app.image_count()));
  CHECK(std::find(pred.votes.begin(), pred.votes.end(), pred.majority) != pred.votes.end());

  // permuting the screenshots permutes votes but not the majority
  AppRecord shuffled = app;
  std::swap(shuffled.screenshots[0], shuffled.screenshots[1]);
  const PredictionRecord pred2 = predict_app(model, head, shuffled, dir.str());
  CHECK(pred2.majority == pred.majority);
  auto sorted = [](std::vector<ContentRating> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  CHECK(sorted(pred.votes) == sorted(pred2.votes));

  AppRecord empty = app;
  empty.icon.clear();
  empty.screenshots.clear();
  CHECK_THROWS_AS(predict_app(model, head, empty, dir.str()), DataError);
}

TEST_CASE("head checkpoints round-trip") {
  TempDir dir("headckpt");
  Head<float> head;
  head.init(16, 11);
  const std::string path = dir.str() + "/head.ckpt";
  head_to_checkpoint(head).write(path);

  Head<float> loaded;
  head_from_checkpoint(Checkpoint::read(path), loaded);
  CHECK(loaded.d_joint == 16);
  CHECK(loaded.img_w1.w == head.img_w1.w);
  CHECK(loaded.joint_w2.w == head.joint_w2.w);

  const std::string again = dir.str() + "/head2.ckpt";
  Checkpoint::read(path).write(again);
  CHECK(cravl::testing::hash_file(path) == cravl::testing::hash_file(again));
}
