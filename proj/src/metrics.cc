#include "mirec/metrics.h"

#include <algorithm>
#include <cmath>

#include "mirec/errors.h"
#include "text_util.h"

namespace mirec {
namespace {

// 0-based rank of each user's test item within the first k entries, or -1.
std::map<std::string, int> test_ranks(std::span<const RankedList> lists,
                                      const TestItems& test, int k) {
  if (k < 1) throw InvalidArgument("metrics: k must be >= 1");
  std::map<std::string, int> ranks;
  for (const auto& l : lists) {
    auto t = test.find(l.user);
    if (t == test.end())
      throw InvalidArgument("metrics: list for user " + l.user + " who has no test item");
    int rank = -1;
    const int n = std::min<int>(k, static_cast<int>(l.entries.size()));
    for (int r = 0; r < n; ++r)
      if (l.entries[r].item == t->second) {
        rank = r;
        break;
      }
    if (!ranks.emplace(l.user, rank).second)
      throw InvalidArgument("metrics: more than one list for user " + l.user);
  }
  return ranks;
}

template <typename Gain>
AccuracyReport accumulate(std::span<const RankedList> lists, const TestItems& test, int k,
                          Gain gain) {
  const auto ranks = test_ranks(lists, test, k);
  AccuracyReport rep;
  rep.users = test.size();
  if (test.empty()) throw EmptyDataError("metrics: no test users");
  double sum = 0.0;
  for (const auto& [user, item] : test) {
    auto it = ranks.find(user);
    if (it == ranks.end()) {
      rep.missing_users.push_back(user);
      continue;
    }
    if (it->second >= 0) sum += gain(it->second);
  }
  rep.value = sum / static_cast<double>(test.size());
  return rep;
}

}  // namespace

AccuracyReport hit_at_k(std::span<const RankedList> lists, const TestItems& test, int k) {
  return accumulate(lists, test, k, [](int) { return 1.0; });
}

AccuracyReport ndcg_at_k(std::span<const RankedList> lists, const TestItems& test, int k) {
  return accumulate(lists, test, k, [](int r) { return 1.0 / std::log2(r + 2.0); });
}

HitSet hit_set(std::span<const RankedList> lists, const TestItems& test, int k,
               int template_id) {
  HitSet h;
  h.template_id = template_id;
  for (const auto& [user, rank] : test_ranks(lists, test, k))
    if (rank >= 0) h.users.insert(user);
  return h;
}

double per(const HitSet& h1, const HitSet& h2) {
  if (h1.users.empty())
    throw InvalidArgument("per: empty hit set for template " + std::to_string(h1.template_id));
  std::size_t exclusive = 0;
  for (const auto& u : h1.users) exclusive += h2.users.count(u) == 0;
  return static_cast<double>(exclusive) / static_cast<double>(h1.users.size());
}

double chr_avg(std::span<const HitSet> t1, std::span<const HitSet> t2) {
  if (t1.empty()) throw InvalidArgument("chr_avg: empty first template set");
  std::set<std::string> uni;
  for (const auto& h : t2) uni.insert(h.users.begin(), h.users.end());
  if (uni.empty()) throw InvalidArgument("chr_avg: second template set has no hits");
  double total = 0.0;
  for (const auto& h : t1) {
    std::size_t missed = 0;
    for (const auto& u : uni) missed += h.users.count(u) == 0;
    total += static_cast<double>(missed) / static_cast<double>(uni.size());
  }
  return total / static_cast<double>(t1.size());
}

PerMatrix per_matrix(std::span<const HitSet> sets) {
  if (sets.size() < 2) throw InvalidArgument("per_matrix: need at least two templates");
  PerMatrix m;
  for (const auto& h : sets) m.templates.push_back(h.template_id);
  m.values.assign(sets.size(), std::vector<std::optional<double>>(sets.size()));
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].users.empty()) continue;
    for (std::size_t j = 0; j < sets.size(); ++j) m.values[i][j] = per(sets[i], sets[j]);
  }
  return m;
}

void write_per_matrix_csv(const PerMatrix& m, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << "template";
  for (int t : m.templates) out << ',' << t;
  out << '\n';
  for (std::size_t i = 0; i < m.templates.size(); ++i) {
    out << m.templates[i];
    for (const auto& v : m.values[i]) {
      out << ',';
      if (v) out << detail::format_double(*v);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

void write_metrics_csv(const std::vector<MetricRow>& rows,
                       const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << "metric,k,value\n";
  for (const auto& r : rows)
    out << r.metric << ',' << r.k << ',' << detail::format_double(r.value) << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace mirec
