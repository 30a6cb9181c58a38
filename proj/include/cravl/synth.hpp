#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cravl/rng.hpp"
#include "cravl/types.hpp"

namespace cravl {

// ---------------------------------------------------------------------------
// Ground-truth rating oracle
// ---------------------------------------------------------------------------

// Severity contributions per factor. The rating of a synthetic app is the
// clamped sum of all four.
int content_severity(GlyphKind g);
int style_severity(StyleKind s);
int audience_modifier(Audience a);
int theme_modifier(Theme t);

ContentRating rating_of(const LatentFactors& l);

// True iff swapping only the style (resp. theme) factor can change rating_of.
bool is_style_critical(const LatentFactors& l);
bool is_fusion_critical(const LatentFactors& l);

// ---------------------------------------------------------------------------
// Text: grammar, chunking, tokenizer
// ---------------------------------------------------------------------------

// Fixed synthetic vocabulary, id -> token string. Index 0..2 are the
// specials (kPadToken, kUnkToken, kMaskToken), then punctuation, then words.
const std::vector<std::string>& vocabulary();
int vocab_size();

// Id for a word, kUnkToken when absent.
int32_t token_id(const std::string& word);

// Whitespace/punctuation word tokenizer over the fixed vocabulary,
// truncated to kMaxTokens ids.
TokenSequence tokenize(const std::string& text);

// Sentences split on '.', '!', '?'; a trailing unterminated fragment counts
// as a sentence. Exposed for window-enumeration tests.
std::vector<std::string> split_sentences(const std::string& text);

// Returns the whole text when it has <= 4 sentences; otherwise a uniformly
// sampled consecutive window of >= 4 sentences, joined by single spaces.
std::string chunk_description(const std::string& text, Rng& rng);

// Description generator: sentences cycle through content/audience/theme/filler
// categories so that any 4-sentence window carries every text-side factor.
std::string make_description(const LatentFactors& l, int n_sentences, Rng& rng);

// ---------------------------------------------------------------------------
// Images: rendering and train-time views
// ---------------------------------------------------------------------------

struct Palette {
  float bg[3];
  float primary[3];
  float secondary[3];
};
enum class TextureKind { flat, checker, glitter };

const Palette& style_palette(StyleKind s);
TextureKind style_texture(StyleKind s);

// 2-4 copies of the content glyph in the style palette, plus the style's
// texture overlay.
ImageBuffer render_creative(const LatentFactors& l, Rng& rng, int size = 64);

// Deterministic core of the crop/flip augmentation: square crop of
// crop_side at (ox, oy), bilinear-resized back to the input size, then an
// optional horizontal flip.
ImageBuffer augment_apply(const ImageBuffer& img, int crop_side, int ox, int oy, bool flip);

// Random resized crop with area scale in [0.8, 1.0] plus p=0.5 flip.
ImageBuffer augment_image(const ImageBuffer& img, Rng& rng);

// Zeroes the 3x3 patch blocks anchored at the given (patch_row, patch_col)
// positions. Throws UsageError when the patch grid is smaller than 3x3.
ImageBuffer mask_patches_at(const ImageBuffer& img,
                            std::span<const std::pair<int, int>> anchors, int patch_size);

// Three anchors sampled uniformly over valid block positions; blocks may
// overlap.
ImageBuffer mask_patches(const ImageBuffer& img, Rng& rng, int patch_size = 8);

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct DataSpec {
  int n_apps = 0;
  int screenshots_min = 1;
  int screenshots_max = 2;
  int sentences_min = 6;
  int sentences_max = 12;
  std::array<double, kNumRatings> class_balance = {1, 1, 1, 1, 1};
  uint64_t seed = 0;
  double fraction_style_critical = 0.5;
  double fraction_fusion_critical = 0.5;
  int image_size = 64;
  int patch_size = 8;

  void validate() const;  // throws UsageError
};

// Writes <out_dir>/manifest.jsonl plus PPM assets under <out_dir>/images/.
// Byte-identical output for a fixed spec; every record satisfies
// declared == rating_of(latent). Returns the records written.
std::vector<AppRecord> gen_dataset(const DataSpec& spec, const std::string& out_dir);

}  // namespace cravl
