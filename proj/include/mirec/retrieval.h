#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mirec/rqvae.h"
#include "mirec/scorer.h"
#include "mirec/vocab.h"

namespace mirec {

struct RankedEntry {
  std::string item;
  double score = 0.0;
  bool operator==(const RankedEntry&) const = default;
};

// Top-K items for one (user, index type, template); scores non-increasing.
struct RankedList {
  std::string user;
  std::string index_type;  // "ceid", "seid" or "fused"
  int template_id = 0;     // 0 for fused lists
  std::vector<RankedEntry> entries;

  bool operator==(const RankedList&) const = default;
};

inline constexpr int kDefaultBeamSize = 20;

// Beam search over exactly trie.depth() steps. Each step expands every
// hypothesis with the trie's allowed tokens, scores them with the sum of
// log-probabilities and keeps the best `beam_width` (default: k), ties going
// to the lexicographically smaller code tuple. Returns at most k items.
RankedList beam_search_constrained(const Scorer& scorer, const PrefixTrie& trie,
                                   std::span<const TokenId> context, int k,
                                   int beam_width = 0);

// Scores every item's full code path directly from the table and returns the
// top k under the same ordering. Candidate sets at each step are derived from
// the table, not from a trie.
RankedList exhaustive_topk_oracle(const Scorer& scorer, const ItemCodeTable& table,
                                  const TokenVocab& vocab,
                                  std::span<const TokenId> context, int k);

// One JSON object per line:
//   {"user":..., "index_type":..., "template":..., "items":[...], "scores":[...]}
std::string to_json_line(const RankedList& list);
RankedList parse_json_line(const std::string& line);
void write_ranked_lists(const std::vector<RankedList>& lists,
                        const std::filesystem::path& path);
std::vector<RankedList> read_ranked_lists(const std::filesystem::path& path);

}  // namespace mirec
