#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cravl {

// Error categories; the C API maps these onto numeric status codes.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Rating scale
// ---------------------------------------------------------------------------

// Five-level ordered scale, G (least restrictive) through R18+.
enum class ContentRating : int { G = 0, PG = 1, M = 2, MA15 = 3, R18 = 4 };

inline constexpr int kNumRatings = 5;

const char* to_string(ContentRating r);
std::optional<ContentRating> rating_from_string(std::string_view s);

inline int ordinal(ContentRating r) { return static_cast<int>(r); }

// Throws UsageError outside [0, 4].
ContentRating rating_from_ordinal(int o);

// Signed ordinal difference pred - declared; positive means the prediction is
// more restrictive than the declared rating.
inline int rating_distance(ContentRating pred, ContentRating declared) {
  return ordinal(pred) - ordinal(declared);
}

// ---------------------------------------------------------------------------
// Synthetic ground-truth factors
// ---------------------------------------------------------------------------

enum class GlyphKind : int { star = 0, heart, dice, bottle, weapon };
enum class StyleKind : int { pastel = 0, primary, neon, grayscale, dark };
enum class Audience : int { kids = 0, neutral, adults };
enum class Theme : int { none = 0, casino, battle };

struct LatentFactors {
  GlyphKind content = GlyphKind::star;
  StyleKind style = StyleKind::pastel;
  Audience audience = Audience::neutral;
  Theme theme = Theme::none;

  bool operator==(const LatentFactors&) const = default;
};

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct Snapshot {
  int64_t ts = 0;
  bool alive = true;
  bool operator==(const Snapshot&) const = default;
};

struct AppRecord {
  std::string app_id;
  ContentRating declared = ContentRating::G;
  std::string icon;  // relative path; empty means no icon
  std::vector<std::string> screenshots;
  std::string description;
  int64_t downloads = 0;
  std::vector<Snapshot> snapshots;
  std::optional<LatentFactors> latent;  // synthetic data only
  bool style_critical = false;
  bool fusion_critical = false;

  int image_count() const {
    return (icon.empty() ? 0 : 1) + static_cast<int>(screenshots.size());
  }
  // icon first, then screenshots in manifest order
  std::vector<std::string> image_paths() const;

  bool operator==(const AppRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Pixels and tokens
// ---------------------------------------------------------------------------

// Interleaved RGB float image, values in [0, 1], row-major.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // height * width * 3

  static ImageBuffer filled(int w, int h, float r, float g, float b);

  float& at(int y, int x, int c) { return pixels[(y * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(y * width + x) * 3 + c]; }
};

inline constexpr int kMaxTokens = 256;

inline constexpr int32_t kPadToken = 0;
inline constexpr int32_t kUnkToken = 1;
inline constexpr int32_t kMaskToken = 2;

struct TokenSequence {
  std::vector<int32_t> ids;

  size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

// ---------------------------------------------------------------------------
// Manifest I/O (JSON lines, one app per line)
// ---------------------------------------------------------------------------

// Throws DataError naming the offending line on malformed JSON, unknown
// rating strings, duplicate app ids, or unsorted snapshots.
std::vector<AppRecord> read_manifest(const std::string& path);

void write_manifest(const std::string& path, const std::vector<AppRecord>& records);

// ---------------------------------------------------------------------------
// PPM I/O (binary P6, maxval 255)
// ---------------------------------------------------------------------------

ImageBuffer read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ImageBuffer& img);

// Quantized byte image as stored on disk; training caches these.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  ImageBuffer to_float() const;
};

ImageU8 read_ppm_u8(const std::string& path);

}  // namespace cravl
