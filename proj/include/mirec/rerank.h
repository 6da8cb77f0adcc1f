#pragma once

// Self-consistency fusion of template-specific ranked lists.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mirec/retrieval.h"
#include "mirec/types.h"

namespace mirec {

enum class FusionMode { kFull, kCeidOnly, kSeidOnly, kConfOnly, kConsOnly };
std::string_view to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view s);

// 0-based ranks of one item, one per list in which it ranked < K.
struct PositionCollection {
  std::string item;
  IndexType index_type = IndexType::kCeid;
  std::vector<int> positions;
};

using PositionMap = std::map<std::string, PositionCollection>;

// All lists must share user and index type, with distinct template ids.
PositionMap collect_positions(std::span<const RankedList> lists, int k);

// exp(-mean / tau). Throws on an empty collection.
double conf_score(const PositionCollection& pc, double tau);
// exp(-sample stdev / tau); 0 when there are fewer than two positions.
double cons_score(const PositionCollection& pc, double tau);
// alpha * Conf + (1 - alpha) * Cons.
double index_score(const PositionCollection& pc, double alpha, double tau);

struct SelfConsistencyScore {
  std::string item;
  bool has_c = false;
  bool has_s = false;
  double conf_c = 0.0, cons_c = 0.0, s_c = 0.0;
  double conf_s = 0.0, cons_s = 0.0, s_s = 0.0;
  double s_total = 0.0;
  int appearances = 0;  // |positions| summed over both sides
};

struct RerankOptions {
  double alpha = 0.8;
  double tau = 10.0;
  int k_in = 20;   // inclusion cutoff on input ranks
  int k_out = 20;  // length of the fused list
  FusionMode mode = FusionMode::kFull;

  // alpha after the mode override (1 for conf-only, 0 for cons-only).
  double effective_alpha() const;
  void validate() const;
};

// Conf/Cons for every item seen on either side; S fields left at zero.
std::vector<SelfConsistencyScore> component_scores(const PositionMap& ceid,
                                                   const PositionMap& seid,
                                                   double tau);

// Fills s_c, s_s and s_total from the stored Conf/Cons and sorts by S
// descending, then appearance count descending, then item id.
void rank_by_components(std::vector<SelfConsistencyScore>& scores, double alpha);

struct FusionResult {
  RankedList list;                             // index_type "fused"
  std::vector<SelfConsistencyScore> breakdown;  // every candidate, ranked
};

// Lists of a side dropped by the mode are ignored. Throws when nothing is
// left to fuse.
FusionResult fuse_and_rank(const std::string& user,
                           std::span<const RankedList> ceid_lists,
                           std::span<const RankedList> seid_lists,
                           const RerankOptions& opts);

// Rows for the fused top entries only.
// user, rank, item, conf_c, cons_c, s_c, conf_s, cons_s, s_s, s_total, count.
void write_score_breakdown(const std::vector<FusionResult>& results,
                           const std::filesystem::path& path);

}  // namespace mirec
