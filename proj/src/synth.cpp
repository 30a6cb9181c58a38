#include "cravl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <unordered_map>

namespace cravl {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Severity tables
// ---------------------------------------------------------------------------

int content_severity(GlyphKind g) {
  switch (g) {
    case GlyphKind::star:
    case GlyphKind::heart:
      return 0;
    case GlyphKind::dice:
    case GlyphKind::bottle:
      return 2;
    case GlyphKind::weapon:
      return 3;
  }
  return 0;
}

int style_severity(StyleKind s) {
  switch (s) {
    case StyleKind::pastel:
    case StyleKind::primary:
      return 0;
    case StyleKind::neon:
    case StyleKind::grayscale:
      return 1;
    case StyleKind::dark:
      return 2;
  }
  return 0;
}

int audience_modifier(Audience a) {
  switch (a) {
    case Audience::kids:
      return -1;
    case Audience::neutral:
      return 0;
    case Audience::adults:
      return 1;
  }
  return 0;
}

int theme_modifier(Theme t) {
  switch (t) {
    case Theme::none:
      return 0;
    case Theme::casino:
    case Theme::battle:
      return 1;
  }
  return 0;
}

ContentRating rating_of(const LatentFactors& l) {
  const int sum = content_severity(l.content) + style_severity(l.style) +
                  audience_modifier(l.audience) + theme_modifier(l.theme);
  return static_cast<ContentRating>(std::clamp(sum, 0, kNumRatings - 1));
}

bool is_style_critical(const LatentFactors& l) {
  const ContentRating base = rating_of(l);
  for (int s = 0; s < 5; ++s) {
    LatentFactors alt = l;
    alt.style = static_cast<StyleKind>(s);
    if (alt.style != l.style && rating_of(alt) != base) return true;
  }
  return false;
}

bool is_fusion_critical(const LatentFactors& l) {
  const ContentRating base = rating_of(l);
  for (int t = 0; t < 3; ++t) {
    LatentFactors alt = l;
    alt.theme = static_cast<Theme>(t);
    if (alt.theme != l.theme && rating_of(alt) != base) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string>& build_vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v = {"<pad>", "<unk>", "<mask>", ".", "!", "?", ","};
    const char* words[] = {
        // stop words
        "the", "a", "an", "and", "of", "to", "for", "with", "is", "are", "in", "on", "it",
        "this", "that", "you", "your", "we", "our", "as", "at", "can", "will", "every", "all",
        // content
        "star", "stars", "shiny", "heart", "hearts", "love", "dice", "roll", "tumble",
        "bottle", "bottles", "drink", "weapon", "weapons", "gun",
        // audience
        "kids", "children", "family", "young", "safe", "friendly", "everyone", "players",
        "people", "kinds", "adults", "mature", "grown", "ups", "serious", "depth",
        // theme
        "casino", "tables", "jackpot", "spin", "bets", "chips", "luck", "battle", "battles",
        "war", "arena", "combat", "fight", "lead", "rule",
        // filler
        "play", "game", "games", "level", "levels", "collect", "match", "win", "points",
        "tap", "watch", "magic", "made", "perfect", "whole", "enjoy", "have", "fun", "easy",
        "pick", "up", "intended", "only", "challenge", "into", "team", "epic", "place",
        "download", "now", "start", "adventure", "new", "added", "week", "simple",
        "controls", "smooth", "graphics", "unlock", "rewards", "upgrade", "skills",
        "daily", "earn", "bonus", "coins", "share", "score", "friends", "online",
        "colorful", "world", "explore", "practice", "brain", "logic", "puzzles", "music",
        "sound", "effects", "adjust", "settings", "race", "against", "timer", "high",
        "intense", "free", "mode", "journey", "quest", "hero", "speed", "jump", "run",
    };
    for (const char* w : words) v.emplace_back(w);
    return v;
  }();
  return vocab;
}

const std::unordered_map<std::string, int32_t>& vocab_index() {
  static const std::unordered_map<std::string, int32_t> index = [] {
    std::unordered_map<std::string, int32_t> m;
    const auto& v = build_vocabulary();
    for (size_t i = 0; i < v.size(); ++i) m.emplace(v[i], static_cast<int32_t>(i));
    return m;
  }();
  return index;
}

}  // namespace

const std::vector<std::string>& vocabulary() { return build_vocabulary(); }

int vocab_size() { return static_cast<int>(build_vocabulary().size()); }

int32_t token_id(const std::string& word) {
  const auto& index = vocab_index();
  const auto it = index.find(word);
  return it == index.end() ? kUnkToken : it->second;
}

TokenSequence tokenize(const std::string& text) {
  TokenSequence seq;
  std::string word;
  auto flush = [&] {
    if (!word.empty() && seq.ids.size() < kMaxTokens) {
      seq.ids.push_back(token_id(word));
    }
    word.clear();
  };
  for (char c : text) {
    if (seq.ids.size() >= kMaxTokens) break;
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == '.' || c == '!' || c == '?' || c == ',') {
      flush();
      if (seq.ids.size() < kMaxTokens) {
        seq.ids.push_back(token_id(std::string(1, c)));
      }
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return seq;
}

// ---------------------------------------------------------------------------
// Sentences and chunking
// ---------------------------------------------------------------------------

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r\n");
    if (b != std::string::npos) {
      const auto e = cur.find_last_not_of(" \t\r\n");
      out.push_back(cur.substr(b, e - b + 1));
    }
    cur.clear();
  };
  for (char c : text) {
    cur.push_back(c);
    if (c == '.' || c == '!' || c == '?') flush();
  }
  flush();
  return out;
}

std::string chunk_description(const std::string& text, Rng& rng) {
  const auto sentences = split_sentences(text);
  const int n = static_cast<int>(sentences.size());
  if (n <= 4) return text;

  // Uniform over all (start, length) windows with length >= 4.
  int64_t windows = 0;
  for (int len = 4; len <= n; ++len) windows += n - len + 1;
  int64_t idx = rng.uniform_int(0, windows - 1);
  int len = 4, start = 0;
  for (; len <= n; ++len) {
    const int count = n - len + 1;
    if (idx < count) {
      start = static_cast<int>(idx);
      break;
    }
    idx -= count;
  }

  std::string out;
  for (int i = start; i < start + len; ++i) {
    if (!out.empty()) out.push_back(' ');
    out += sentences[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Description grammar
// ---------------------------------------------------------------------------

namespace {

const char* glyph_noun(GlyphKind g) {
  switch (g) {
    case GlyphKind::star:
      return "stars";
    case GlyphKind::heart:
      return "hearts";
    case GlyphKind::dice:
      return "dice";
    case GlyphKind::bottle:
      return "bottles";
    case GlyphKind::weapon:
      return "weapons";
  }
  return "stars";
}

std::string content_sentence(GlyphKind g, Rng& rng) {
  const std::string noun = glyph_noun(g);
  switch (rng.uniform_int(0, 2)) {
    case 0:
      return "collect the " + noun + " in every level .";
    case 1:
      return "match the " + noun + " to win points !";
    default:
      return "tap the " + noun + " and watch the magic .";
  }
}

std::string audience_sentence(Audience a, Rng& rng) {
  const int pick = static_cast<int>(rng.uniform_int(0, 2));
  switch (a) {
    case Audience::kids:
      return pick == 0   ? "made for kids and children ."
             : pick == 1 ? "a safe and friendly game for the whole family ."
                         : "perfect for young players .";
    case Audience::neutral:
      return pick == 0   ? "everyone can play and enjoy ."
             : pick == 1 ? "players of all kinds will have fun ."
                         : "easy for people to pick up .";
    case Audience::adults:
      return pick == 0   ? "intended for adults only ."
             : pick == 1 ? "a serious challenge for mature players ."
                         : "grown ups will love the depth .";
  }
  return "everyone can play and enjoy .";
}

std::string theme_sentence(Theme t, Rng& rng) {
  const int pick = static_cast<int>(rng.uniform_int(0, 2));
  if (t == Theme::casino) {
    return pick == 0   ? "try your luck at the casino tables !"
           : pick == 1 ? "spin to win the jackpot ."
                       : "place your bets and collect the chips .";
  }
  return pick == 0   ? "fight epic battles in the war arena !"
         : pick == 1 ? "lead your team into combat ."
                     : "win the fight and rule the arena .";
}

std::string filler_sentence(Rng& rng) {
  static const char* fillers[] = {
      "download now and start the adventure .",
      "new levels added every week .",
      "simple controls and smooth graphics .",
      "unlock rewards and upgrade your skills .",
      "play daily to earn bonus coins .",
      "share your score with friends online .",
      "a colorful world to explore .",
      "practice your brain with logic puzzles .",
      "music and sound effects you can adjust in settings .",
      "race against the timer for a high score .",
  };
  return fillers[rng.uniform_int(0, std::size(fillers) - 1)];
}

}  // namespace

std::string make_description(const LatentFactors& l, int n_sentences, Rng& rng) {
  // Category cycle keeps every 4-sentence window informative about all
  // text-side factors.
  std::vector<std::string> sentences;
  sentences.reserve(static_cast<size_t>(n_sentences));
  const bool themed = l.theme != Theme::none;
  const int period = themed ? 4 : 3;
  for (int i = 0; i < n_sentences; ++i) {
    switch (i % period) {
      case 0:
        sentences.push_back(content_sentence(l.content, rng));
        break;
      case 1:
        sentences.push_back(audience_sentence(l.audience, rng));
        break;
      case 2:
        sentences.push_back(themed ? theme_sentence(l.theme, rng) : filler_sentence(rng));
        break;
      default:
        sentences.push_back(filler_sentence(rng));
        break;
    }
  }
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out.push_back(' ');
    out += s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Glyph stencils and palettes
// ---------------------------------------------------------------------------

namespace {

using Stencil = std::array<const char*, 16>;

// 16x16 binary stencils; '#' marks a set pixel.
const Stencil kStar = {
    "................",
    ".......##.......",
    ".......##.......",
    "......####......",
    "......####......",
    ".####.####.####.",
    ".##############.",
    "..############..",
    "...##########...",
    "....########....",
    "....########....",
    "...####..####...",
    "...###....###...",
    "..###......###..",
    "..##........##..",
    "................",
};

const Stencil kHeart = {
    "................",
    "..####....####..",
    ".######..######.",
    "################",
    "################",
    "################",
    ".##############.",
    "..############..",
    "...##########...",
    "....########....",
    ".....######.....",
    "......####......",
    ".......##.......",
    "................",
    "................",
    "................",
};

const Stencil kDice = {
    "................",
    ".##############.",
    ".##############.",
    ".####......####.",
    ".####......####.",
    ".##############.",
    ".##############.",
    ".######..######.",
    ".######..######.",
    ".##############.",
    ".##############.",
    ".####......####.",
    ".####......####.",
    ".##############.",
    ".##############.",
    "................",
};

const Stencil kBottle = {
    "......####......",
    "......####......",
    "......####......",
    "......####......",
    ".....######.....",
    "....########....",
    "...##########...",
    "...##########...",
    "...##########...",
    "...##########...",
    "...##########...",
    "...##########...",
    "...##########...",
    "...##########...",
    "...##########...",
    "................",
};

const Stencil kWeapon = {
    "................",
    "................",
    "................",
    "##############..",
    "###############.",
    "###############.",
    "#####...........",
    "#######.........",
    "#######.........",
    "..#####.........",
    "..#####.........",
    "..#####.........",
    "..#####.........",
    "................",
    "................",
    "................",
};

const Stencil& glyph_stencil(GlyphKind g) {
  switch (g) {
    case GlyphKind::star:
      return kStar;
    case GlyphKind::heart:
      return kHeart;
    case GlyphKind::dice:
      return kDice;
    case GlyphKind::bottle:
      return kBottle;
    case GlyphKind::weapon:
      return kWeapon;
  }
  return kStar;
}

const Palette kPalettes[5] = {
    // pastel
    {{0.97f, 0.87f, 0.93f}, {0.62f, 0.80f, 0.98f}, {0.99f, 0.93f, 0.60f}},
    // primary
    {{0.12f, 0.36f, 0.92f}, {0.94f, 0.12f, 0.12f}, {1.00f, 0.84f, 0.05f}},
    // neon
    {{0.03f, 0.02f, 0.09f}, {0.08f, 1.00f, 0.60f}, {1.00f, 0.10f, 0.90f}},
    // grayscale
    {{0.84f, 0.84f, 0.84f}, {0.28f, 0.28f, 0.28f}, {0.55f, 0.55f, 0.55f}},
    // dark
    {{0.07f, 0.04f, 0.06f}, {0.45f, 0.06f, 0.09f}, {0.26f, 0.11f, 0.30f}},
};

}  // namespace

const Palette& style_palette(StyleKind s) { return kPalettes[static_cast<int>(s)]; }

TextureKind style_texture(StyleKind s) {
  switch (s) {
    case StyleKind::pastel:
      return TextureKind::glitter;
    case StyleKind::primary:
      return TextureKind::flat;
    case StyleKind::neon:
      return TextureKind::checker;
    case StyleKind::grayscale:
      return TextureKind::flat;
    case StyleKind::dark:
      return TextureKind::checker;
  }
  return TextureKind::flat;
}

ImageBuffer render_creative(const LatentFactors& l, Rng& rng, int size) {
  const Palette& pal = style_palette(l.style);
  ImageBuffer img = ImageBuffer::filled(size, size, pal.bg[0], pal.bg[1], pal.bg[2]);

  const Stencil& stencil = glyph_stencil(l.content);
  const int copies = static_cast<int>(rng.uniform_int(2, 4));
  for (int k = 0; k < copies; ++k) {
    const int ox = static_cast<int>(rng.uniform_int(0, size - 16));
    const int oy = static_cast<int>(rng.uniform_int(0, size - 16));
    const float* color = (k % 2 == 0) ? pal.primary : pal.secondary;
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        if (stencil[y][x] != '#') continue;
        for (int c = 0; c < 3; ++c) img.at(oy + y, ox + x, c) = color[c];
      }
    }
  }

  switch (style_texture(l.style)) {
    case TextureKind::flat:
      break;
    case TextureKind::checker:
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const float d = ((x / 2 + y / 2) % 2 == 0) ? 0.08f : -0.08f;
          for (int c = 0; c < 3; ++c) {
            img.at(y, x, c) = std::clamp(img.at(y, x, c) + d, 0.0f, 1.0f);
          }
        }
      }
      break;
    case TextureKind::glitter:
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          if (rng.bernoulli(0.15)) {
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0f;
          }
        }
      }
      break;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Augmentations
// ---------------------------------------------------------------------------

ImageBuffer augment_apply(const ImageBuffer& img, int crop_side, int ox, int oy, bool flip) {
  const int w = img.width, h = img.height;
  if (crop_side < 1 || ox < 0 || oy < 0 || ox + crop_side > w || oy + crop_side > h) {
    throw UsageError("crop window out of bounds");
  }
  ImageBuffer out;
  out.width = w;
  out.height = h;
  out.pixels.resize(img.pixels.size());

  const double sx = static_cast<double>(crop_side) / w;
  const double sy = static_cast<double>(crop_side) / h;
  for (int y = 0; y < h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5 + oy;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5 + ox;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      const int xo = flip ? (w - 1 - x) : x;
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
        const double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, xo, c) = static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

ImageBuffer augment_image(const ImageBuffer& img, Rng& rng) {
  const int w = img.width;
  const double area = rng.uniform(0.8, 1.0);
  const int side = std::clamp(static_cast<int>(std::lround(std::sqrt(area) * w)), 1, w);
  const int ox = static_cast<int>(rng.uniform_int(0, w - side));
  const int oy = static_cast<int>(rng.uniform_int(0, img.height - side));
  const bool flip = rng.bernoulli(0.5);
  return augment_apply(img, side, ox, oy, flip);
}

ImageBuffer mask_patches_at(const ImageBuffer& img,
                            std::span<const std::pair<int, int>> anchors, int patch_size) {
  const int rows = img.height / patch_size;
  const int cols = img.width / patch_size;
  if (rows < 3 || cols < 3) {
    throw UsageError("patch grid smaller than 3x3");
  }
  ImageBuffer out = img;
  for (const auto& [pr, pc] : anchors) {
    if (pr < 0 || pc < 0 || pr + 3 > rows || pc + 3 > cols) {
      throw UsageError("mask anchor out of range");
    }
    for (int y = pr * patch_size; y < (pr + 3) * patch_size; ++y) {
      for (int x = pc * patch_size; x < (pc + 3) * patch_size; ++x) {
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0.0f;
      }
    }
  }
  return out;
}

ImageBuffer mask_patches(const ImageBuffer& img, Rng& rng, int patch_size) {
  const int rows = img.height / patch_size;
  const int cols = img.width / patch_size;
  if (rows < 3 || cols < 3) {
    throw UsageError("patch grid smaller than 3x3");
  }
  std::array<std::pair<int, int>, 3> anchors;
  for (auto& a : anchors) {
    a.first = static_cast<int>(rng.uniform_int(0, rows - 3));
    a.second = static_cast<int>(rng.uniform_int(0, cols - 3));
  }
  return mask_patches_at(img, anchors, patch_size);
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

void DataSpec::validate() const {
  if (n_apps < 0) throw UsageError("n_apps must be non-negative");
  if (screenshots_min < 0 || screenshots_max < screenshots_min) {
    throw UsageError("invalid screenshots range");
  }
  if (sentences_min < 1 || sentences_max < sentences_min) {
    throw UsageError("invalid sentences range");
  }
  double total = 0;
  for (double w : class_balance) {
    if (w < 0) throw UsageError("class balance weights must be non-negative");
    total += w;
  }
  if (n_apps > 0 && total <= 0) throw UsageError("class balance weights sum to zero");
  if (fraction_style_critical < 0 || fraction_style_critical > 1 ||
      fraction_fusion_critical < 0 || fraction_fusion_critical > 1) {
    throw UsageError("critical fractions must lie in [0, 1]");
  }
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw UsageError("image size must be a multiple of patch size");
  }
}

namespace {

// Largest-remainder apportionment of n over the balance weights.
std::array<int, kNumRatings> apportion(int n, const std::array<double, kNumRatings>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::array<int, kNumRatings> counts{};
  std::array<std::pair<double, int>, kNumRatings> rem;
  int assigned = 0;
  for (int r = 0; r < kNumRatings; ++r) {
    const double exact = n * weights[r] / total;
    counts[r] = static_cast<int>(std::floor(exact));
    rem[r] = {exact - counts[r], r};
    assigned += counts[r];
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (int i = 0; assigned < n; ++i, ++assigned) counts[rem[i % kNumRatings].second]++;
  return counts;
}

struct ComboBuckets {
  // [rating][style_critical][fusion_critical] -> combos
  std::vector<LatentFactors> by_key[kNumRatings][2][2];
  std::vector<LatentFactors> by_rating[kNumRatings];
};

ComboBuckets enumerate_combos() {
  ComboBuckets buckets;
  for (int c = 0; c < 5; ++c) {
    for (int s = 0; s < 5; ++s) {
      for (int a = 0; a < 3; ++a) {
        for (int t = 0; t < 3; ++t) {
          LatentFactors l{static_cast<GlyphKind>(c), static_cast<StyleKind>(s),
                          static_cast<Audience>(a), static_cast<Theme>(t)};
          const int r = ordinal(rating_of(l));
          buckets.by_key[r][is_style_critical(l)][is_fusion_critical(l)].push_back(l);
          buckets.by_rating[r].push_back(l);
        }
      }
    }
  }
  return buckets;
}

const std::vector<LatentFactors>& pick_bucket(const ComboBuckets& b, int rating, bool want_style,
                                              bool want_fusion) {
  // Prefer the exact flag combination, then relax fusion, then style.
  if (!b.by_key[rating][want_style][want_fusion].empty()) {
    return b.by_key[rating][want_style][want_fusion];
  }
  if (!b.by_key[rating][want_style][!want_fusion].empty()) {
    return b.by_key[rating][want_style][!want_fusion];
  }
  if (!b.by_key[rating][!want_style][want_fusion].empty()) {
    return b.by_key[rating][!want_style][want_fusion];
  }
  return b.by_rating[rating];
}

constexpr int64_t kDownloadEdges[] = {0, 100, 10000, 100000, 1000000, 10000000};

}  // namespace

std::vector<AppRecord> gen_dataset(const DataSpec& spec, const std::string& out_dir) {
  spec.validate();

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw DataError("cannot create output directory: " + out_dir);

  static const ComboBuckets buckets = enumerate_combos();

  // Deterministic rating sequence: apportioned counts, order shuffled by a
  // dedicated stream so per-app streams stay schedule-independent.
  const auto counts = apportion(spec.n_apps, spec.class_balance);
  std::vector<int> ratings;
  ratings.reserve(static_cast<size_t>(spec.n_apps));
  for (int r = 0; r < kNumRatings; ++r) ratings.insert(ratings.end(), counts[r], r);
  Rng order_rng(Rng::mix(spec.seed, 0x0a9907de5ULL));
  order_rng.shuffle(ratings.begin(), ratings.end());

  std::vector<AppRecord> records(static_cast<size_t>(spec.n_apps));
  for (int i = 0; i < spec.n_apps; ++i) {
    Rng rng(Rng::mix(spec.seed, static_cast<uint64_t>(i) + 1));
    AppRecord& rec = records[static_cast<size_t>(i)];

    char id[32];
    std::snprintf(id, sizeof(id), "app%06d", i);
    rec.app_id = id;

    const int rating = ratings[static_cast<size_t>(i)];
    const bool want_style = rng.bernoulli(spec.fraction_style_critical);
    const bool want_fusion = rng.bernoulli(spec.fraction_fusion_critical);
    const auto& bucket = pick_bucket(buckets, rating, want_style, want_fusion);
    const LatentFactors latent = bucket[rng.uniform_int(0, static_cast<int64_t>(bucket.size()) - 1)];

    rec.latent = latent;
    rec.declared = rating_of(latent);
    rec.style_critical = is_style_critical(latent);
    rec.fusion_critical = is_fusion_critical(latent);

    rec.icon = "images/" + rec.app_id + "_icon.ppm";
    write_ppm(out_dir + "/" + rec.icon, render_creative(latent, rng, spec.image_size));
    const int shots = static_cast<int>(rng.uniform_int(spec.screenshots_min, spec.screenshots_max));
    for (int s = 0; s < shots; ++s) {
      std::string rel = "images/" + rec.app_id + "_s" + std::to_string(s) + ".ppm";
      write_ppm(out_dir + "/" + rel, render_creative(latent, rng, spec.image_size));
      rec.screenshots.push_back(std::move(rel));
    }

    const int n_sentences = static_cast<int>(rng.uniform_int(spec.sentences_min, spec.sentences_max));
    rec.description = make_description(latent, n_sentences, rng);

    const int bucket_idx = static_cast<int>(rng.uniform_int(0, 4));
    rec.downloads = rng.uniform_int(kDownloadEdges[bucket_idx], kDownloadEdges[bucket_idx + 1] - 1);

    const int n_snaps = static_cast<int>(rng.uniform_int(2, 4));
    int64_t ts = 1672531200 + rng.uniform_int(0, 86400LL * 30);
    const bool removed = rng.bernoulli(0.25);
    for (int s = 0; s < n_snaps; ++s) {
      const bool alive = !(removed && s == n_snaps - 1);
      rec.snapshots.push_back({ts, alive});
      ts += 86400LL * 30 + rng.uniform_int(0, 86400LL * 5);
    }
  }

  write_manifest(out_dir + "/manifest.jsonl", records);
  return records;
}

}  // namespace cravl
