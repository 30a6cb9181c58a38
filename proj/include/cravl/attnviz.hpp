#pragma once

#include <set>
#include <string>
#include <vector>

#include "cravl/model.hpp"
#include "cravl/types.hpp"

namespace cravl {

// Token ids excluded from attention rankings: specials, punctuation and the
// synthetic stop words. Never contains content/theme/audience vocabulary.
using StopList = std::set<int32_t>;

const StopList& default_stoplist();

struct RankedToken {
  int key = 0;          // key position within the token sequence
  int32_t token_id = 0;
  std::string text;
  double weight = 0;
};

// 4-connected set of patch indices on the query grid.
struct PatchRegion {
  std::vector<int> patches;

  // Throws UsageError when empty, out of range, or disconnected.
  static PatchRegion validate(std::vector<int> patches, int n_patches);
};

// Per-patch descending attention ranking for one head, with stoplisted and
// pad tokens removed. Ties break toward the ascending token id, then the
// ascending key position.
std::vector<std::vector<RankedToken>> top_tokens_per_patch(const AttentionTensor& attn,
                                                           const TokenSequence& tokens,
                                                           const StopList& stoplist, int k,
                                                           int head);

// Ranking of the mean attention over the region's patches.
std::vector<RankedToken> region_top_tokens(const AttentionTensor& attn, const PatchRegion& region,
                                           const TokenSequence& tokens, const StopList& stoplist,
                                           int k, int head);

// 50% alpha blend of the source image with red intensity proportional to
// each patch's attention to the chosen token (normalized by the max over
// patches; all-zero attention adds no red).
ImageBuffer attention_heatmap(const ImageBuffer& image, const AttentionTensor& attn,
                              int token_index, int head, int patch_size);

void export_heatmap(const std::string& path, const ImageBuffer& image, const AttentionTensor& attn,
                    int token_index, int head, int patch_size);

}  // namespace cravl
