#include "mirec/retrieval.h"

#include <algorithm>
#include <map>

#include "json.hpp"
#include "mirec/errors.h"
#include "text_util.h"

namespace mirec {
namespace {

struct Hypothesis {
  std::vector<TokenId> tokens;
  std::vector<int> words;
  int node = 0;
  double score = 0.0;
};

// Higher score first, then the lexicographically smaller code tuple.
bool better(double sa, const std::vector<int>& wa, double sb, const std::vector<int>& wb) {
  if (sa != sb) return sa > sb;
  return wa < wb;
}

void check_context(const Scorer& scorer, std::span<const TokenId> context) {
  for (TokenId t : context)
    if (!scorer.knows(t))
      throw InvalidArgument("retrieval: context token " + std::to_string(t) +
                            " is not in the scorer vocabulary");
}

}  // namespace

RankedList beam_search_constrained(const Scorer& scorer, const PrefixTrie& trie,
                                   std::span<const TokenId> context, int k,
                                   int beam_width) {
  if (k < 1) throw InvalidArgument("beam search: k must be >= 1");
  if (trie.items().empty()) throw InvalidArgument("beam search: empty trie");
  if (beam_width <= 0) beam_width = k;
  check_context(scorer, context);

  std::vector<TokenId> ctx(context.begin(), context.end());
  const std::size_t base = ctx.size();
  std::vector<Hypothesis> beams{Hypothesis{}};
  for (int step = 0; step < trie.depth(); ++step) {
    std::vector<Hypothesis> next;
    std::vector<TokenId> candidates;
    for (const auto& h : beams) {
      const auto& edges = trie.node(h.node).edges;
      candidates.clear();
      for (const auto& e : edges) candidates.push_back(e.token);
      ctx.resize(base);
      ctx.insert(ctx.end(), h.tokens.begin(), h.tokens.end());
      const auto lp = scorer.next_token_logprobs(ctx, candidates);
      for (std::size_t c = 0; c < edges.size(); ++c) {
        Hypothesis n = h;
        n.tokens.push_back(edges[c].token);
        n.words.push_back(edges[c].word);
        n.node = edges[c].child;
        n.score = h.score + lp[c];
        next.push_back(std::move(n));
      }
    }
    std::sort(next.begin(), next.end(), [](const Hypothesis& a, const Hypothesis& b) {
      return better(a.score, a.words, b.score, b.words);
    });
    if (next.size() > static_cast<std::size_t>(beam_width)) next.resize(beam_width);
    beams = std::move(next);
  }

  RankedList out;
  out.index_type = std::string(to_string(trie.index_type()));
  for (const auto& h : beams) {
    if (static_cast<int>(out.entries.size()) == k) break;
    const int item = trie.node(h.node).item;
    if (item < 0) throw Error("beam search ended on a non-terminal node");
    out.entries.push_back({trie.items()[item], h.score});
  }
  return out;
}

RankedList exhaustive_topk_oracle(const Scorer& scorer, const ItemCodeTable& table,
                                  const TokenVocab& vocab,
                                  std::span<const TokenId> context, int k) {
  if (k < 1) throw InvalidArgument("oracle: k must be >= 1");
  check_context(scorer, context);

  std::vector<std::pair<std::vector<int>, std::string>> sorted;
  for (const auto& [item, codes] : table.codes) sorted.emplace_back(codes, item);
  std::sort(sorted.begin(), sorted.end());

  // Distinct next words below a prefix, read off the sorted tuples.
  auto words_after = [&](const std::vector<int>& prefix) {
    std::vector<int> words;
    for (const auto& [codes, item] : sorted) {
      if (!std::equal(prefix.begin(), prefix.end(), codes.begin())) continue;
      const int w = codes[prefix.size()];
      if (words.empty() || words.back() != w) words.push_back(w);
    }
    return words;
  };

  std::map<std::vector<int>, std::pair<std::vector<int>, std::vector<double>>> memo;
  struct Scored {
    std::vector<int> codes;
    std::string item;
    double score;
  };
  std::vector<Scored> all;
  for (const auto& [codes, item] : sorted) {
    double score = 0.0;
    std::vector<int> prefix;
    std::vector<TokenId> ctx(context.begin(), context.end());
    for (std::size_t l = 0; l < codes.size(); ++l) {
      auto it = memo.find(prefix);
      if (it == memo.end()) {
        auto words = words_after(prefix);
        std::vector<TokenId> cand;
        for (int w : words)
          cand.push_back(vocab.code_token(table.index_type, static_cast<int>(l) + 1, w));
        auto lp = scorer.next_token_logprobs(ctx, cand);
        it = memo.emplace(prefix, std::pair{std::move(words), std::move(lp)}).first;
      }
      const auto& [words, lp] = it->second;
      const auto pos = std::lower_bound(words.begin(), words.end(), codes[l]) - words.begin();
      score += lp[static_cast<std::size_t>(pos)];
      prefix.push_back(codes[l]);
      ctx.push_back(vocab.code_token(table.index_type, static_cast<int>(l) + 1, codes[l]));
    }
    all.push_back({codes, item, score});
  }
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
    return better(a.score, a.codes, b.score, b.codes);
  });

  RankedList out;
  out.index_type = std::string(to_string(table.index_type));
  for (std::size_t i = 0; i < all.size() && static_cast<int>(i) < k; ++i)
    out.entries.push_back({all[i].item, all[i].score});
  return out;
}

std::string to_json_line(const RankedList& list) {
  nlohmann::ordered_json j;
  j["user"] = list.user;
  j["index_type"] = list.index_type;
  j["template"] = list.template_id;
  auto items = nlohmann::ordered_json::array();
  auto scores = nlohmann::ordered_json::array();
  for (const auto& e : list.entries) {
    items.push_back(e.item);
    scores.push_back(e.score);
  }
  j["items"] = std::move(items);
  j["scores"] = std::move(scores);
  return j.dump();
}

RankedList parse_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("ranked list: ") + e.what());
  }
  try {
    RankedList out;
    out.user = j.at("user").get<std::string>();
    out.index_type = j.at("index_type").get<std::string>();
    out.template_id = j.at("template").get<int>();
    const auto& items = j.at("items");
    const auto& scores = j.at("scores");
    if (!items.is_array() || !scores.is_array() || items.size() != scores.size())
      throw FormatError("ranked list: items and scores must be arrays of equal length");
    for (std::size_t i = 0; i < items.size(); ++i)
      out.entries.push_back({items[i].get<std::string>(), scores[i].get<double>()});
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("ranked list: ") + e.what());
  }
}

void write_ranked_lists(const std::vector<RankedList>& lists,
                        const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  for (const auto& l : lists) out << to_json_line(l) << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

std::vector<RankedList> read_ranked_lists(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<RankedList> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    try {
      out.push_back(parse_json_line(line));
    } catch (const FormatError& e) {
      throw FormatError(detail::where(path, line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mirec
