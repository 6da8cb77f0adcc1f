#include "mirec/rerank.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "mirec/errors.h"
#include "text_util.h"

namespace mirec {

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kFull: return "full";
    case FusionMode::kCeidOnly: return "ceid-only";
    case FusionMode::kSeidOnly: return "seid-only";
    case FusionMode::kConfOnly: return "conf-only";
    case FusionMode::kConsOnly: return "cons-only";
  }
  return "full";
}

FusionMode parse_fusion_mode(std::string_view s) {
  for (auto m : {FusionMode::kFull, FusionMode::kCeidOnly, FusionMode::kSeidOnly,
                 FusionMode::kConfOnly, FusionMode::kConsOnly})
    if (to_string(m) == s) return m;
  throw InvalidArgument("unknown rerank mode '" + std::string(s) + "'");
}

PositionMap collect_positions(std::span<const RankedList> lists, int k) {
  if (k < 1) throw InvalidArgument("collect_positions: k must be >= 1");
  PositionMap out;
  if (lists.empty()) return out;
  const auto type = parse_index_type(lists.front().index_type);
  std::set<int> templates;
  for (const auto& list : lists) {
    if (list.user != lists.front().user)
      throw InvalidArgument("collect_positions: lists for different users");
    if (list.index_type != lists.front().index_type)
      throw InvalidArgument("collect_positions: mixed index types");
    if (!templates.insert(list.template_id).second)
      throw InvalidArgument("collect_positions: duplicate template " +
                            std::to_string(list.template_id) + " for user " + list.user);
    std::set<std::string> seen;
    const int n = std::min<int>(k, static_cast<int>(list.entries.size()));
    for (int r = 0; r < n; ++r) {
      const auto& item = list.entries[r].item;
      if (!seen.insert(item).second)
        throw InvalidArgument("collect_positions: item " + item + " repeated in one list");
      auto& pc = out[item];
      pc.item = item;
      pc.index_type = type;
      pc.positions.push_back(r);
    }
  }
  return out;
}

namespace {

double mean(const std::vector<int>& v) {
  double s = 0.0;
  for (int x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double conf_score(const PositionCollection& pc, double tau) {
  if (pc.positions.empty()) throw InvalidArgument("conf_score: empty position collection");
  return std::exp(-mean(pc.positions) / tau);
}

double cons_score(const PositionCollection& pc, double tau) {
  const auto n = pc.positions.size();
  if (n < 2) return 0.0;
  const double m = mean(pc.positions);
  double ss = 0.0;
  for (int x : pc.positions) ss += (x - m) * (x - m);
  return std::exp(-std::sqrt(ss / static_cast<double>(n - 1)) / tau);
}

double index_score(const PositionCollection& pc, double alpha, double tau) {
  return alpha * conf_score(pc, tau) + (1.0 - alpha) * cons_score(pc, tau);
}

double RerankOptions::effective_alpha() const {
  if (mode == FusionMode::kConfOnly) return 1.0;
  if (mode == FusionMode::kConsOnly) return 0.0;
  return alpha;
}

void RerankOptions::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("rerank.alpha must be in [0, 1]");
  if (!(tau > 0.0)) throw ConfigError("rerank.tau must be positive");
  if (k_in < 1) throw ConfigError("rerank.k_in must be >= 1");
  if (k_out < 1) throw ConfigError("rerank.k_out must be >= 1");
}

std::vector<SelfConsistencyScore> component_scores(const PositionMap& ceid,
                                                   const PositionMap& seid,
                                                   double tau) {
  std::map<std::string, SelfConsistencyScore> merged;
  for (const auto& [item, pc] : ceid) {
    auto& s = merged[item];
    s.item = item;
    s.has_c = true;
    s.conf_c = conf_score(pc, tau);
    s.cons_c = cons_score(pc, tau);
    s.appearances += static_cast<int>(pc.positions.size());
  }
  for (const auto& [item, pc] : seid) {
    auto& s = merged[item];
    s.item = item;
    s.has_s = true;
    s.conf_s = conf_score(pc, tau);
    s.cons_s = cons_score(pc, tau);
    s.appearances += static_cast<int>(pc.positions.size());
  }
  std::vector<SelfConsistencyScore> out;
  out.reserve(merged.size());
  for (auto& [item, s] : merged) out.push_back(std::move(s));
  return out;
}

void rank_by_components(std::vector<SelfConsistencyScore>& scores, double alpha) {
  // With alpha == 1 the Cons term is skipped outright so its value cannot
  // leak in through 0 * inf or NaN.
  auto side = [alpha](double conf, double cons) {
    if (alpha == 1.0) return conf;
    if (alpha == 0.0) return cons;
    return alpha * conf + (1.0 - alpha) * cons;
  };
  for (auto& s : scores) {
    s.s_c = s.has_c ? side(s.conf_c, s.cons_c) : 0.0;
    s.s_s = s.has_s ? side(s.conf_s, s.cons_s) : 0.0;
    s.s_total = s.s_c + s.s_s;
  }
  std::sort(scores.begin(), scores.end(),
            [](const SelfConsistencyScore& a, const SelfConsistencyScore& b) {
              if (a.s_total != b.s_total) return a.s_total > b.s_total;
              if (a.appearances != b.appearances) return a.appearances > b.appearances;
              return a.item < b.item;
            });
}

FusionResult fuse_and_rank(const std::string& user,
                           std::span<const RankedList> ceid_lists,
                           std::span<const RankedList> seid_lists,
                           const RerankOptions& opts) {
  opts.validate();
  if (opts.mode == FusionMode::kSeidOnly) ceid_lists = {};
  if (opts.mode == FusionMode::kCeidOnly) seid_lists = {};
  if (ceid_lists.empty() && seid_lists.empty())
    throw InvalidArgument("fuse_and_rank: no lists to fuse for user " + user);
  for (auto lists : {ceid_lists, seid_lists})
    for (const auto& l : lists)
      if (l.user != user)
        throw InvalidArgument("fuse_and_rank: list for user " + l.user + " passed for " + user);
  if (!ceid_lists.empty() && ceid_lists.front().index_type != "ceid")
    throw InvalidArgument("fuse_and_rank: ceid side holds " + ceid_lists.front().index_type);
  if (!seid_lists.empty() && seid_lists.front().index_type != "seid")
    throw InvalidArgument("fuse_and_rank: seid side holds " + seid_lists.front().index_type);

  FusionResult out;
  out.breakdown = component_scores(collect_positions(ceid_lists, opts.k_in),
                                   collect_positions(seid_lists, opts.k_in), opts.tau);
  rank_by_components(out.breakdown, opts.effective_alpha());
  out.list.user = user;
  out.list.index_type = "fused";
  out.list.template_id = 0;
  const auto n = std::min<std::size_t>(opts.k_out, out.breakdown.size());
  for (std::size_t i = 0; i < n; ++i)
    out.list.entries.push_back({out.breakdown[i].item, out.breakdown[i].s_total});
  return out;
}

void write_score_breakdown(const std::vector<FusionResult>& results,
                           const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << "user\trank\titem\tconf_c\tcons_c\ts_c\tconf_s\tcons_s\ts_s\ts_total\tcount\n";
  using detail::format_double;
  for (const auto& r : results) {
    for (std::size_t i = 0; i < r.list.entries.size(); ++i) {
      const auto& s = r.breakdown[i];
      out << r.list.user << '\t' << i << '\t' << s.item << '\t' << format_double(s.conf_c)
          << '\t' << format_double(s.cons_c) << '\t' << format_double(s.s_c) << '\t'
          << format_double(s.conf_s) << '\t' << format_double(s.cons_s) << '\t'
          << format_double(s.s_s) << '\t' << format_double(s.s_total) << '\t'
          << s.appearances << '\n';
    }
  }
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace mirec
