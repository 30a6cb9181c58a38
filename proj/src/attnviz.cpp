#include "cravl/attnviz.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "cravl/synth.hpp"

namespace cravl {

const StopList& default_stoplist() {
  static const StopList stoplist = [] {
    StopList s = {kPadToken, kUnkToken, kMaskToken};
    const char* words[] = {".",    "!",   "?",    ",",    "the",  "a",    "an",  "and", "of",
                           "to",   "for", "with", "is",   "are",  "in",   "on",  "it",  "this",
                           "that", "you", "your", "we",   "our",  "as",   "at",  "can", "will",
                           "every", "all"};
    for (const char* w : words) s.insert(token_id(w));
    return s;
  }();
  return stoplist;
}

PatchRegion PatchRegion::validate(std::vector<int> patches, int n_patches) {
  if (patches.empty()) throw UsageError("patch region is empty");
  std::sort(patches.begin(), patches.end());
  patches.erase(std::unique(patches.begin(), patches.end()), patches.end());
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_patches))));
  if (grid * grid != n_patches) throw UsageError("patch count is not a square grid");
  for (int p : patches) {
    if (p < 0 || p >= n_patches) throw UsageError("patch index out of range");
  }
  // 4-connectivity check by flood fill from the first patch.
  std::set<int> pending(patches.begin(), patches.end());
  std::queue<int> frontier;
  frontier.push(patches.front());
  pending.erase(patches.front());
  while (!frontier.empty()) {
    const int p = frontier.front();
    frontier.pop();
    const int y = p / grid, x = p % grid;
    const int neighbors[4] = {p - grid, p + grid, x > 0 ? p - 1 : -1, x < grid - 1 ? p + 1 : -1};
    for (int q : neighbors) {
      if ((q == p - grid && y == 0) || (q == p + grid && y == grid - 1)) continue;
      if (pending.erase(q) > 0) frontier.push(q);
    }
  }
  if (!pending.empty()) throw UsageError("patch region is not 4-connected");
  PatchRegion region;
  region.patches = std::move(patches);
  return region;
}

namespace {

std::vector<RankedToken> rank_keys(const std::vector<double>& weights,
                                   const TokenSequence& tokens, const StopList& stoplist, int k) {
  std::vector<RankedToken> all;
  const auto& vocab = vocabulary();
  for (size_t pos = 0; pos < tokens.ids.size(); ++pos) {
    const int32_t id = tokens.ids[pos];
    if (id == kPadToken || stoplist.count(id)) continue;
    RankedToken t;
    t.key = static_cast<int>(pos);
    t.token_id = id;
    t.text = id >= 0 && id < static_cast<int32_t>(vocab.size()) ? vocab[static_cast<size_t>(id)]
                                                                : "<unk>";
    t.weight = weights[pos];
    all.push_back(std::move(t));
  }
  std::sort(all.begin(), all.end(), [](const RankedToken& a, const RankedToken& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    if (a.token_id != b.token_id) return a.token_id < b.token_id;
    return a.key < b.key;
  });
  if (static_cast<int>(all.size()) > k) all.resize(static_cast<size_t>(k));
  return all;
}

void check_inputs(const AttentionTensor& attn, const TokenSequence& tokens, int head) {
  if (head < 0 || head >= attn.heads) throw UsageError("attention head out of range");
  if (static_cast<int>(tokens.ids.size()) != attn.keys) {
    throw UsageError("token count does not match attention keys");
  }
}

}  // namespace

std::vector<std::vector<RankedToken>> top_tokens_per_patch(const AttentionTensor& attn,
                                                           const TokenSequence& tokens,
                                                           const StopList& stoplist, int k,
                                                           int head) {
  check_inputs(attn, tokens, head);
  if (k < 0) throw UsageError("k must be non-negative");
  std::vector<std::vector<RankedToken>> out(static_cast<size_t>(attn.queries));
  std::vector<double> weights(static_cast<size_t>(attn.keys));
  for (int q = 0; q < attn.queries; ++q) {
    for (int key = 0; key < attn.keys; ++key) weights[static_cast<size_t>(key)] = attn.at(head, q, key);
    out[static_cast<size_t>(q)] = rank_keys(weights, tokens, stoplist, k);
  }
  return out;
}

std::vector<RankedToken> region_top_tokens(const AttentionTensor& attn, const PatchRegion& region,
                                           const TokenSequence& tokens, const StopList& stoplist,
                                           int k, int head) {
  check_inputs(attn, tokens, head);
  if (region.patches.empty()) throw UsageError("patch region is empty");
  std::vector<double> mean(static_cast<size_t>(attn.keys), 0.0);
  for (int p : region.patches) {
    if (p < 0 || p >= attn.queries) throw UsageError("patch index out of range");
    for (int key = 0; key < attn.keys; ++key) {
      mean[static_cast<size_t>(key)] += attn.at(head, p, key);
    }
  }
  for (double& w : mean) w /= static_cast<double>(region.patches.size());
  return rank_keys(mean, tokens, stoplist, k);
}

ImageBuffer attention_heatmap(const ImageBuffer& image, const AttentionTensor& attn,
                              int token_index, int head, int patch_size) {
  if (head < 0 || head >= attn.heads) throw UsageError("attention head out of range");
  if (token_index < 0 || token_index >= attn.keys) throw UsageError("token index out of range");
  const int grid = image.width / patch_size;
  if (grid * grid != attn.queries || image.width != image.height) {
    throw UsageError("image patch grid does not match attention queries");
  }
  double wmax = 0;
  for (int q = 0; q < attn.queries; ++q) wmax = std::max(wmax, attn.at(head, q, token_index));

  ImageBuffer out = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const int p = (y / patch_size) * grid + (x / patch_size);
      const double red = wmax > 0 ? attn.at(head, p, token_index) / wmax : 0.0;
      out.at(y, x, 0) = static_cast<float>(0.5 * image.at(y, x, 0) + 0.5 * red);
      out.at(y, x, 1) = 0.5f * image.at(y, x, 1);
      out.at(y, x, 2) = 0.5f * image.at(y, x, 2);
    }
  }
  return out;
}

void export_heatmap(const std::string& path, const ImageBuffer& image, const AttentionTensor& attn,
                    int token_index, int head, int patch_size) {
  write_ppm(path, attention_heatmap(image, attn, token_index, head, patch_size));
}

}  // namespace cravl
