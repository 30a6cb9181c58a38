#include "cravl/types.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cravl {

using nlohmann::json;

namespace {

constexpr std::array<const char*, kNumRatings> kRatingNames = {"G", "PG", "M", "MA15+", "R18+"};

constexpr std::array<const char*, 5> kGlyphNames = {"star", "heart", "dice", "bottle", "weapon"};
constexpr std::array<const char*, 5> kStyleNames = {"pastel", "primary", "neon", "grayscale", "dark"};
constexpr std::array<const char*, 3> kAudienceNames = {"kids", "neutral", "adults"};
constexpr std::array<const char*, 3> kThemeNames = {"none", "casino", "battle"};

template <typename Enum, size_t N>
Enum enum_from_name(const std::array<const char*, N>& names, const std::string& s,
                    const char* what, int line) {
  for (size_t i = 0; i < N; ++i) {
    if (s == names[i]) return static_cast<Enum>(i);
  }
  throw DataError("manifest line " + std::to_string(line) + ": unknown " + what + " '" + s + "'");
}

}  // namespace

const char* to_string(ContentRating r) { return kRatingNames[static_cast<int>(r)]; }

std::optional<ContentRating> rating_from_string(std::string_view s) {
  for (int i = 0; i < kNumRatings; ++i) {
    if (s == kRatingNames[i]) return static_cast<ContentRating>(i);
  }
  return std::nullopt;
}

ContentRating rating_from_ordinal(int o) {
  if (o < 0 || o >= kNumRatings) {
    throw UsageError("rating ordinal out of range: " + std::to_string(o));
  }
  return static_cast<ContentRating>(o);
}

std::vector<std::string> AppRecord::image_paths() const {
  std::vector<std::string> out;
  if (!icon.empty()) out.push_back(icon);
  out.insert(out.end(), screenshots.begin(), screenshots.end());
  return out;
}

ImageBuffer ImageBuffer::filled(int w, int h, float r, float g, float b) {
  ImageBuffer img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h * 3);
  for (int i = 0; i < w * h; ++i) {
    img.pixels[i * 3 + 0] = r;
    img.pixels[i * 3 + 1] = g;
    img.pixels[i * 3 + 2] = b;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

AppRecord record_from_json(const json& j, int line) {
  auto fail = [line](const std::string& msg) -> DataError {
    return DataError("manifest line " + std::to_string(line) + ": " + msg);
  };
  if (!j.is_object()) throw fail("expected a JSON object");

  AppRecord rec;
  try {
    rec.app_id = j.at("app_id").get<std::string>();
    const auto declared = j.at("declared").get<std::string>();
    const auto rating = rating_from_string(declared);
    if (!rating) throw fail("unknown rating '" + declared + "'");
    rec.declared = *rating;
    rec.icon = j.at("icon").get<std::string>();
    rec.screenshots = j.at("screenshots").get<std::vector<std::string>>();
    rec.description = j.at("description").get<std::string>();
    rec.downloads = j.at("downloads").get<int64_t>();
    if (rec.downloads < 0) throw fail("negative download count");
    for (const auto& s : j.at("snapshots")) {
      rec.snapshots.push_back({s.at("ts").get<int64_t>(), s.at("alive").get<bool>()});
    }
    for (size_t i = 1; i < rec.snapshots.size(); ++i) {
      if (rec.snapshots[i].ts < rec.snapshots[i - 1].ts) {
        throw fail("snapshots not sorted by timestamp");
      }
    }
    if (j.contains("latent")) {
      const auto& l = j.at("latent");
      LatentFactors lat;
      lat.content = enum_from_name<GlyphKind>(kGlyphNames, l.at("content"), "content factor", line);
      lat.style = enum_from_name<StyleKind>(kStyleNames, l.at("style"), "style factor", line);
      lat.audience =
          enum_from_name<Audience>(kAudienceNames, l.at("audience"), "audience factor", line);
      lat.theme = enum_from_name<Theme>(kThemeNames, l.at("theme"), "theme factor", line);
      rec.latent = lat;
    }
    if (j.contains("tags")) {
      for (const auto& t : j.at("tags")) {
        const auto tag = t.get<std::string>();
        if (tag == "style_critical") {
          rec.style_critical = true;
        } else if (tag == "fusion_critical") {
          rec.fusion_critical = true;
        } else {
          throw fail("unknown tag '" + tag + "'");
        }
      }
    }
  } catch (const json::exception& e) {
    throw fail(e.what());
  }
  return rec;
}

json record_to_json(const AppRecord& rec) {
  json j;
  j["app_id"] = rec.app_id;
  j["declared"] = to_string(rec.declared);
  j["icon"] = rec.icon;
  j["screenshots"] = rec.screenshots;
  j["description"] = rec.description;
  j["downloads"] = rec.downloads;
  json snaps = json::array();
  for (const auto& s : rec.snapshots) {
    snaps.push_back({{"ts", s.ts}, {"alive", s.alive}});
  }
  j["snapshots"] = snaps;
  if (rec.latent) {
    j["latent"] = {{"content", kGlyphNames[static_cast<int>(rec.latent->content)]},
                   {"style", kStyleNames[static_cast<int>(rec.latent->style)]},
                   {"audience", kAudienceNames[static_cast<int>(rec.latent->audience)]},
                   {"theme", kThemeNames[static_cast<int>(rec.latent->theme)]}};
  }
  if (rec.style_critical || rec.fusion_critical) {
    json tags = json::array();
    if (rec.style_critical) tags.push_back("style_critical");
    if (rec.fusion_critical) tags.push_back("fusion_critical");
    j["tags"] = tags;
  }
  return j;
}

}  // namespace

std::vector<AppRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);

  std::vector<AppRecord> records;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw DataError("manifest line " + std::to_string(line_no) + ": malformed JSON");
    }
    AppRecord rec = record_from_json(j, line_no);
    if (!seen.insert(rec.app_id).second) {
      throw DataError("manifest line " + std::to_string(line_no) + ": duplicate app_id '" +
                      rec.app_id + "'");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_manifest(const std::string& path, const std::vector<AppRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest: " + path);
  for (const auto& rec : records) {
    out << record_to_json(rec).dump() << '\n';
  }
  if (!out) throw DataError("short write on manifest: " + path);
}

// ---------------------------------------------------------------------------
// PPM
// ---------------------------------------------------------------------------

ImageU8 read_ppm_u8(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image: " + path);

  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw DataError("not a supported P6 PPM: " + path);
  }
  in.get();  // single whitespace after header

  ImageU8 img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw DataError("truncated PPM: " + path);
  }
  return img;
}

ImageBuffer ImageU8::to_float() const {
  ImageBuffer img;
  img.width = width;
  img.height = height;
  img.pixels.resize(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    img.pixels[i] = static_cast<float>(pixels[i]) / 255.0f;
  }
  return img;
}

ImageBuffer read_ppm(const std::string& path) { return read_ppm_u8(path).to_float(); }

void write_ppm(const std::string& path, const ImageBuffer& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> bytes(img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, img.pixels[i]));
    bytes[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write on image: " + path);
}

}  // namespace cravl
