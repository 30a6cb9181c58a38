#include <doctest.h>

#include "cravl/model.hpp"
#include "cravl/synth.hpp"

using namespace cravl;

namespace {

ModelDims small_dims() {
  ModelDims dims;
  dims.image = 32;
  dims.patch = 8;
  dims.d = 16;
  dims.heads = 2;
  dims.content_layers = 1;
  dims.style_layers = 1;
  dims.text_layers = 1;
  dims.fusion_blocks = 2;
  dims.d_joint = 16;
  dims.vocab = vocab_size();
  return dims;
}

Model<double> small_model(uint64_t seed = 5) {
  Model<double> m;
  m.dims = small_dims();
  m.init(seed);
  m.text.set_frozen(true);
  return m;
}

ImageBuffer random_image(int size, uint64_t seed) {
  Rng rng(seed);
  ImageBuffer img = ImageBuffer::filled(size, size, 0, 0, 0);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

TokenSequence some_tokens() {
  return tokenize("play the casino game with friends . fight epic battles in the war arena .");
}

}  // namespace

TEST_CASE("cross block: output shape matches the own stream") {
  Rng rng(3);
  CrossBlock<double> block;
  block.init("blk", 16, rng);

  Tape<double> t;
  MatX<double> own(12, 16), mem(5, 16);
  for (Eigen::Index i = 0; i < own.size(); ++i) own.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < mem.size(); ++i) mem.data()[i] = rng.normal();
  Ref out = block.forward(t, t.constant(own), Groups::uniform(1, 12), nullptr, t.constant(mem),
                          Groups::uniform(1, 5), nullptr, 2, true);
  CHECK(t.val(out).rows() == 12);
  CHECK(t.val(out).cols() == 16);

  // empty memory is rejected
  MatX<double> empty(0, 16);
  CHECK_THROWS_AS(block.forward(t, t.constant(own), Groups::uniform(1, 12), nullptr,
                                t.constant(empty), Groups::uniform(1, 0), nullptr, 2, true),
                  NumericError);
}

TEST_CASE("fuse: unit norms, determinism, pad-token invariance of z_img") {
  Model<double> m = small_model();
  const ImageBuffer img = random_image(32, 7);
  const MatX<double> patches = patchify<double>(img, 8);

  TokenSequence tokens = some_tokens();
  tokens.ids.push_back(kPadToken);
  tokens.ids.push_back(kPadToken);
  TokenBatch<double> tb = TokenBatch<double>::from_sequences({tokens});

  Tape<double> t1;
  EmbedRefs<double> e1 = joint_embed(t1, m, patches, patches, tb, 1);
  CHECK(t1.val(e1.z_img).rows() == 1);
  CHECK(t1.val(e1.z_img).norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(t1.val(e1.z_txt).norm() == doctest::Approx(1.0).epsilon(1e-9));

  Tape<double> t2;
  EmbedRefs<double> e2 = joint_embed(t2, m, patches, patches, tb, 1);
  CHECK(t1.val(e1.z_img) == t2.val(e2.z_img));
  CHECK(t1.val(e1.z_txt) == t2.val(e2.z_txt));

  // moving a pad to a different tail position leaves z_img untouched:
  // pads are masked out of every attention and pooling path
  TokenSequence shuffled = tokens;
  std::swap(shuffled.ids[shuffled.ids.size() - 1], shuffled.ids[shuffled.ids.size() - 2]);
  TokenBatch<double> tb2 = TokenBatch<double>::from_sequences({shuffled});
  Tape<double> t3;
  EmbedRefs<double> e3 = joint_embed(t3, m, patches, patches, tb2, 1);
  CHECK((t1.val(e1.z_img) - t3.val(e3.z_img)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t1.val(e1.z_txt) - t3.val(e3.z_txt)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fusion_blocks = 0 reduces z_img to normalize(proj(mean(tokens) + q_i))") {
  Model<double> m;
  m.dims = small_dims();
  m.dims.fusion_blocks = 0;
  m.init(9);
  m.text.set_frozen(true);

  const ImageBuffer img = random_image(32, 1);
  const MatX<double> patches = patchify<double>(img, 8);
  TokenBatch<double> tb = TokenBatch<double>::from_sequences({some_tokens()});

  Tape<double> t;
  EmbedRefs<double> e = joint_embed(t, m, patches, patches, tb, 1);

  // reference: content tokens and the style-augmented pooled feature
  auto [tokens, q_c] = encode_content(m, img);
  const MatX<double> q_s = encode_style(m, img, StyleBranch::target);
  const MatX<double> q_i = combine_visual(q_c, q_s, m.alpha);
  MatX<double> pooled = tokens.colwise().mean();
  pooled += q_i;
  MatX<double> z = pooled * m.fus_img.proj_w.w;
  z.row(0) += m.fus_img.proj_b.w.row(0);
  z.row(0) /= z.row(0).norm();
  CHECK((t.val(e.z_img) - z).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("extract_attention: shape, row sums, bit-exact recompute, layer bounds") {
  Model<double> m = small_model();
  const ImageBuffer img = random_image(32, 4);
  const TokenSequence tokens = some_tokens();

  const AttentionTensor attn =
      extract_attention(m, img, tokens, 0, FusionSideKind::image_to_text);
  CHECK(attn.heads == 2);
  CHECK(attn.queries == 16);  // (32/8)^2 patches
  CHECK(attn.keys == static_cast<int>(tokens.size()));
  for (int h = 0; h < attn.heads; ++h) {
    for (int q = 0; q < attn.queries; ++q) {
      double sum = 0;
      for (int k = 0; k < attn.keys; ++k) sum += attn.at(h, q, k);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    }
  }

  const AttentionTensor again =
      extract_attention(m, img, tokens, 0, FusionSideKind::image_to_text);
  CHECK(attn.w == again.w);

  const AttentionTensor reverse =
      extract_attention(m, img, tokens, 1, FusionSideKind::text_to_image);
  CHECK(reverse.queries == static_cast<int>(tokens.size()));
  CHECK(reverse.keys == 16);

  CHECK_THROWS_AS(extract_attention(m, img, tokens, 2, FusionSideKind::image_to_text), UsageError);
  CHECK_THROWS_AS(extract_attention(m, img, tokens, -1, FusionSideKind::image_to_text), UsageError);
}

TEST_CASE("default head count on the default geometry gives 4 x 64 x n_text") {
  Model<float> m;
  m.dims.vocab = vocab_size();
  m.init(2);
  m.text.set_frozen(true);
  const ImageBuffer img = random_image(64, 6);
  const TokenSequence tokens = some_tokens();
  const AttentionTensor attn =
      extract_attention(m, img, tokens, 0, FusionSideKind::image_to_text);
  CHECK(attn.heads == 4);
  CHECK(attn.queries == 64);
  CHECK(attn.keys == static_cast<int>(tokens.size()));
}

TEST_CASE("no-cross ablation ignores the memory stream entirely") {
  Model<double> m = small_model();
  m.cross_attention = false;

  const ImageBuffer img = random_image(32, 11);
  const MatX<double> patches = patchify<double>(img, 8);
  TokenBatch<double> tb1 = TokenBatch<double>::from_sequences({some_tokens()});
  TokenSequence other = tokenize("made for kids and children . a safe game .");
  TokenBatch<double> tb2 = TokenBatch<double>::from_sequences({other});

  Tape<double> t1, t2;
  EmbedRefs<double> e1 = joint_embed(t1, m, patches, patches, tb1, 1);
  EmbedRefs<double> e2 = joint_embed(t2, m, patches, patches, tb2, 1);
  // with cross-attention replaced by self-attention, z_img cannot see text
  CHECK((t1.val(e1.z_img) - t2.val(e2.z_img)).cwiseAbs().maxCoeff() == 0.0);

  m.cross_attention = true;
  Tape<double> t3, t4;
  EmbedRefs<double> e3 = joint_embed(t3, m, patches, patches, tb1, 1);
  EmbedRefs<double> e4 = joint_embed(t4, m, patches, patches, tb2, 1);
  CHECK((t3.val(e3.z_img) - t4.val(e4.z_img)).cwiseAbs().maxCoeff() > 0.0);
}
