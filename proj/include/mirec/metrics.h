#pragma once

// Full-ranking accuracy and cross-template complementarity.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mirec/retrieval.h"

namespace mirec {

using TestItems = std::map<std::string, std::string>;  // user -> held-out item

struct AccuracyReport {
  double value = 0.0;
  std::size_t users = 0;                   // denominator: every test user
  std::vector<std::string> missing_users;  // no list; counted as misses
};

// Lists must belong to distinct users, all present in `test`.
AccuracyReport hit_at_k(std::span<const RankedList> lists, const TestItems& test, int k);
// Gain 1 / log2(rank + 2) for a 0-based rank < k.
AccuracyReport ndcg_at_k(std::span<const RankedList> lists, const TestItems& test, int k);

struct HitSet {
  int template_id = 0;
  std::set<std::string> users;
};

HitSet hit_set(std::span<const RankedList> lists, const TestItems& test, int k,
               int template_id);

// |H1 - H2| / |H1|. Throws InvalidArgument when H1 is empty.
double per(const HitSet& h1, const HitSet& h2);

// Mean over t in T1 of |U - H_t| / |U|, U the union of the T2 hit sets.
double chr_avg(std::span<const HitSet> t1, std::span<const HitSet> t2);

struct PerMatrix {
  std::vector<int> templates;
  // values[i][j] = PER(t_i; t_j); empty where H_{t_i} is empty.
  std::vector<std::vector<std::optional<double>>> values;
};

PerMatrix per_matrix(std::span<const HitSet> sets);
void write_per_matrix_csv(const PerMatrix& m, const std::filesystem::path& path);

struct MetricRow {
  std::string metric;  // "hit" or "ndcg"
  int k = 0;
  double value = 0.0;
};

void write_metrics_csv(const std::vector<MetricRow>& rows,
                       const std::filesystem::path& path);

}  // namespace mirec
