#include "mirec/scorer.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <random>

#include "mirec/errors.h"
#include "text_util.h"

namespace mirec {

std::unordered_map<TokenId, double> Scorer::next_token_logprob_map(
    std::span<const TokenId> context, std::span<const TokenId> candidates) const {
  auto lp = next_token_logprobs(context, candidates);
  std::unordered_map<TokenId, double> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) out.emplace(candidates[i], lp[i]);
  return out;
}

void MarkovConfig::validate() const {
  if (order < 0) throw ConfigError("scorer: order must be >= 0");
  if (!(delta > 0)) throw ConfigError("scorer: delta must be > 0");
  if (lambda < 0 || lambda > 1) throw ConfigError("scorer: lambda must be in [0, 1]");
}

MarkovScorer::MarkovScorer(IndexType type, int template_id, std::vector<TokenId> support,
                           MarkovConfig cfg)
    : type_(type), template_id_(template_id), support_(std::move(support)), cfg_(cfg) {
  cfg_.validate();
  if (support_.empty()) throw InvalidArgument("scorer: empty token support");
  std::sort(support_.begin(), support_.end());
  if (std::adjacent_find(support_.begin(), support_.end()) != support_.end())
    throw InvalidArgument("scorer: duplicate support token");
  if (support_.front() < 0) throw InvalidArgument("scorer: negative token id");
  in_support_.assign(static_cast<std::size_t>(support_.back()) + 1, 0);
  for (TokenId t : support_) in_support_[t] = 1;
  tables_.resize(static_cast<std::size_t>(cfg_.order) + 1);
}

bool MarkovScorer::knows(TokenId token) const {
  return token >= 0 && static_cast<std::size_t>(token) < in_support_.size() &&
         in_support_[token];
}

std::string MarkovScorer::key(std::span<const TokenId> context) {
  std::string k(context.size() * sizeof(TokenId), '\0');
  if (!context.empty()) std::memcpy(k.data(), context.data(), k.size());
  return k;
}

void MarkovScorer::observe(std::span<const TokenId> stream) {
  for (TokenId t : stream)
    if (t < 0 || static_cast<std::size_t>(t) >= in_support_.size() || !in_support_[t])
      throw InvalidArgument("scorer: training token " + std::to_string(t) +
                            " is outside the support");
  for (std::size_t j = 0; j < stream.size(); ++j) {
    const std::size_t max_k = std::min<std::size_t>(cfg_.order, j);
    for (std::size_t k = 0; k <= max_k; ++k) {
      Node& node = tables_[k][key(stream.subspan(j - k, k))];
      ++node.total;
      ++node.next[stream[j]];
    }
  }
}

void MarkovScorer::add_count(std::span<const TokenId> context, TokenId token,
                             std::uint64_t count) {
  if (context.size() > static_cast<std::size_t>(cfg_.order))
    throw InvalidArgument("scorer: context longer than the model order");
  for (TokenId t : context)
    if (t < 0 || static_cast<std::size_t>(t) >= in_support_.size() || !in_support_[t])
      throw InvalidArgument("scorer: context token outside the support");
  if (token < 0 || static_cast<std::size_t>(token) >= in_support_.size() ||
      !in_support_[token])
    throw InvalidArgument("scorer: token outside the support");
  Node& node = tables_[context.size()][key(context)];
  node.total += count;
  node.next[token] += count;
}

std::vector<const MarkovScorer::Node*> MarkovScorer::context_nodes(
    std::span<const TokenId> context) const {
  const std::size_t top = std::min<std::size_t>(cfg_.order, context.size());
  std::vector<const Node*> nodes(top + 1, nullptr);
  const std::string full = key(context.last(top));
  for (std::size_t k = 0; k <= top; ++k) {
    const auto& table = tables_[k];
    auto it = table.find(full.substr(full.size() - k * sizeof(TokenId)));
    if (it != table.end() && it->second.total > 0) nodes[k] = &it->second;
  }
  return nodes;
}

std::vector<double> MarkovScorer::mixture(const std::vector<const Node*>& nodes) const {
  std::vector<double> coef(nodes.size(), 0.0);
  double remaining = 1.0;
  for (std::size_t k = nodes.size(); k-- > 1;) {
    if (!nodes[k]) continue;
    coef[k] = remaining * (1.0 - cfg_.lambda);
    remaining *= cfg_.lambda;
  }
  coef[0] = remaining;
  return coef;
}

namespace {

double smoothed(std::uint64_t count, std::uint64_t total, double delta, double vocab) {
  return (static_cast<double>(count) + delta) / (static_cast<double>(total) + delta * vocab);
}

}  // namespace

double MarkovScorer::probability(std::span<const TokenId> context, TokenId token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= in_support_.size() ||
      !in_support_[token])
    throw InvalidArgument("scorer: token " + std::to_string(token) + " is outside the support");
  const auto nodes = context_nodes(context);
  const auto coef = mixture(nodes);
  const double v = static_cast<double>(support_.size());
  double p = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (coef[k] == 0.0) continue;
    std::uint64_t total = 0, count = 0;
    if (nodes[k]) {
      total = nodes[k]->total;
      auto it = nodes[k]->next.find(token);
      if (it != nodes[k]->next.end()) count = it->second;
    }
    p += coef[k] * smoothed(count, total, cfg_.delta, v);
  }
  return p;
}

std::vector<double> MarkovScorer::next_token_logprobs(
    std::span<const TokenId> context, std::span<const TokenId> candidates) const {
  if (candidates.empty()) throw InvalidArgument("scorer: empty candidate set");
  for (TokenId t : candidates)
    if (t < 0 || static_cast<std::size_t>(t) >= in_support_.size() || !in_support_[t])
      throw InvalidArgument("scorer: candidate token " + std::to_string(t) +
                            " is outside the support");
  if (candidates.size() == 1) return {0.0};

  const auto nodes = context_nodes(context);
  const auto coef = mixture(nodes);
  const double v = static_cast<double>(support_.size());
  std::vector<double> p(candidates.size(), 0.0);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (coef[k] == 0.0) continue;
    const Node* node = nodes[k];
    const std::uint64_t total = node ? node->total : 0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      std::uint64_t count = 0;
      if (node) {
        auto it = node->next.find(candidates[c]);
        if (it != node->next.end()) count = it->second;
      }
      p[c] += coef[k] * smoothed(count, total, cfg_.delta, v);
    }
  }
  double z = 0.0;
  for (double x : p) z += x;
  const double log_z = std::log(z);
  for (double& x : p) x = std::log(x) - log_z;
  return p;
}

std::vector<MarkovScorer::CountRow> MarkovScorer::counts() const {
  std::vector<CountRow> rows;
  for (std::size_t k = 0; k < tables_.size(); ++k) {
    for (const auto& [packed, node] : tables_[k]) {
      std::vector<TokenId> ctx(k);
      if (k) std::memcpy(ctx.data(), packed.data(), packed.size());
      for (const auto& [tok, c] : node.next) rows.push_back({ctx, tok, c});
    }
  }
  return rows;
}

bool MarkovScorer::operator==(const MarkovScorer& other) const {
  if (type_ != other.type_ || template_id_ != other.template_id_ ||
      support_ != other.support_ || cfg_.order != other.cfg_.order ||
      cfg_.delta != other.cfg_.delta || cfg_.lambda != other.cfg_.lambda)
    return false;
  for (std::size_t k = 0; k < tables_.size(); ++k) {
    if (tables_[k].size() != other.tables_[k].size()) return false;
    for (const auto& [packed, node] : tables_[k]) {
      auto it = other.tables_[k].find(packed);
      if (it == other.tables_[k].end() || it->second.total != node.total ||
          it->second.next != node.next)
        return false;
    }
  }
  return true;
}

MarkovScorer train_markov_scorer(const std::vector<std::vector<TokenId>>& streams,
                                 IndexType type, int template_id,
                                 std::vector<TokenId> support, const MarkovConfig& cfg) {
  if (template_id < 1) throw InvalidArgument("scorer: template ids start at 1");
  std::size_t tokens = 0;
  for (const auto& s : streams) tokens += s.size();
  if (streams.empty() || tokens == 0) throw EmptyDataError("scorer: no training streams");

  MarkovScorer scorer(type, template_id, std::move(support), cfg);
  if (template_id == 1) {
    for (const auto& s : streams) scorer.observe(s);
    return scorer;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                    static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(template_id)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<std::size_t> pick(0, streams.size() - 1);
  for (std::size_t n = 0; n < streams.size(); ++n) scorer.observe(streams[pick(rng)]);
  return scorer;
}

void save_markov_scorer(const MarkovScorer& scorer, const TokenVocab& vocab,
                        const std::filesystem::path& path) {
  std::vector<std::string> lines;
  for (const auto& row : scorer.counts()) {
    std::string line;
    for (std::size_t i = 0; i < row.context.size(); ++i) {
      if (i) line += ' ';
      line += vocab.info(row.context[i]).text;
    }
    line += '\t' + vocab.info(row.token).text + '\t' + std::to_string(row.count);
    lines.push_back(std::move(line));
  }
  std::sort(lines.begin(), lines.end());

  const auto& cfg = scorer.config();
  auto out = detail::open_output(path);
  out << "# markov-scorer v1\n";
  out << "# index_type " << to_string(scorer.index_type()) << '\n';
  out << "# template " << scorer.template_id() << '\n';
  out << "# order " << cfg.order << '\n';
  out << "# delta " << detail::format_double(cfg.delta) << '\n';
  out << "# lambda " << detail::format_double(cfg.lambda) << '\n';
  out << "# seed " << cfg.seed << '\n';
  out << "# support";
  for (TokenId t : scorer.support()) out << ' ' << vocab.info(t).text;
  out << '\n';
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

MarkovScorer load_markov_scorer(const std::filesystem::path& path,
                                const TokenVocab& vocab) {
  auto in = detail::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::vector<std::string_view>> header;
  std::vector<std::string> header_lines;
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (!rows.empty())
        throw FormatError(detail::where(path, line_no) + ": header after count rows");
      header_lines.push_back(line);
    } else {
      rows.push_back(line);
    }
  }
  if (header_lines.empty() || header_lines.front() != "# markov-scorer v1")
    throw FormatError(detail::where(path, 1) + ": expected '# markov-scorer v1'");
  for (std::size_t i = 1; i < header_lines.size(); ++i) {
    auto f = detail::split_ws(std::string_view(header_lines[i]).substr(1));
    if (f.empty()) continue;
    header[std::string(f[0])] = std::vector<std::string_view>(f.begin() + 1, f.end());
  }
  auto single = [&](const std::string& k) -> std::string_view {
    auto it = header.find(k);
    if (it == header.end() || it->second.size() != 1)
      throw FormatError(path.string() + ": missing header field '" + k + "'");
    return it->second.front();
  };
  MarkovConfig cfg;
  auto order = detail::parse_int<int>(single("order"));
  auto delta = detail::parse_double(single("delta"));
  auto lambda = detail::parse_double(single("lambda"));
  auto seed = detail::parse_int<std::uint64_t>(single("seed"));
  auto tpl = detail::parse_int<int>(single("template"));
  if (!order || !delta || !lambda || !seed || !tpl)
    throw FormatError(path.string() + ": bad scorer header");
  cfg.order = *order;
  cfg.delta = *delta;
  cfg.lambda = *lambda;
  cfg.seed = *seed;
  const IndexType type = parse_index_type(single("index_type"));

  auto sup = header.find("support");
  if (sup == header.end()) throw FormatError(path.string() + ": missing support");
  std::vector<TokenId> support;
  for (auto t : sup->second) support.push_back(vocab.id(t));
  MarkovScorer scorer(type, *tpl, std::move(support), cfg);

  for (const auto& r : rows) {
    auto f = detail::split(r, '\t');
    if (f.size() != 3) throw FormatError(path.string() + ": bad count row '" + r + "'");
    std::vector<TokenId> ctx;
    for (auto t : detail::split_ws(f[0])) ctx.push_back(vocab.id(t));
    auto count = detail::parse_int<std::uint64_t>(f[2]);
    if (!count || static_cast<int>(ctx.size()) > cfg.order)
      throw FormatError(path.string() + ": bad count row '" + r + "'");
    scorer.add_count(ctx, vocab.id(f[1]), *count);
  }
  return scorer;
}

}  // namespace mirec
