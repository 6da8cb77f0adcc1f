#include "mirec/vocab.h"

#include <algorithm>
#include <set>
#include <tuple>

#include "mirec/errors.h"
#include "templates_resource.h"
#include "text_util.h"

namespace mirec {

std::string_view to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::kCode: return "code";
    case TokenKind::kIndicator: return "indicator";
    case TokenKind::kStructural: return "structural";
  }
  return "code";
}

std::string code_token_text(IndexType type, int level, int word) {
  return std::string(type == IndexType::kCeid ? "<CeID_" : "<SeID_") +
         std::to_string(level) + "," + std::to_string(word) + ">";
}

std::string indicator_text(IndexType type) {
  return type == IndexType::kCeid ? "<C>" : "<S>";
}

TokenVocab::TokenVocab(std::vector<TokenInfo> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!index_.emplace(tokens_[i].text, static_cast<TokenId>(i)).second)
      throw InvalidArgument("duplicate token " + tokens_[i].text);
}

const TokenInfo& TokenVocab::info(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw InvalidArgument("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> TokenVocab::find(std::string_view text) const {
  auto it = index_.find(std::string(text));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId TokenVocab::id(std::string_view text) const {
  auto t = find(text);
  if (!t) throw InvalidArgument("unknown token " + std::string(text));
  return *t;
}

TokenId TokenVocab::code_token(IndexType type, int level, int word) const {
  return id(code_token_text(type, level, word));
}

std::optional<TokenId> TokenVocab::indicator(IndexType type) const {
  return find(indicator_text(type));
}

std::vector<TokenId> TokenVocab::code_tokens(IndexType type) const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (tokens_[i].kind == TokenKind::kCode && tokens_[i].index_type == type)
      out.push_back(static_cast<TokenId>(i));
  return out;
}

TokenVocab build_vocabulary(std::span<const ItemCodeTable> tables) {
  if (tables.empty()) throw InvalidArgument("build_vocabulary: no code tables");
  std::set<IndexType> types;
  for (const auto& t : tables) {
    if (t.codes.empty()) throw InvalidArgument("build_vocabulary: empty code table");
    if (!types.insert(t.index_type).second)
      throw InvalidArgument("build_vocabulary: two tables for index type " +
                            std::string(to_string(t.index_type)));
  }
  std::vector<TokenInfo> tokens;
  for (IndexType type : types)
    tokens.push_back({indicator_text(type), TokenKind::kIndicator, type, 0, 0});

  std::set<std::tuple<IndexType, int, int>> used;
  for (const auto& t : tables)
    for (const auto& [item, codes] : t.codes)
      for (std::size_t l = 0; l < codes.size(); ++l)
        used.emplace(t.index_type, static_cast<int>(l) + 1, codes[l]);
  for (const auto& [type, level, word] : used)
    tokens.push_back({code_token_text(type, level, word), TokenKind::kCode, type, level, word});
  return TokenVocab(std::move(tokens));
}

void save_vocabulary(const TokenVocab& vocab, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  for (const auto& t : vocab.tokens()) out << t.text << '\t' << to_string(t.kind) << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

namespace {

// Recovers (type, level, word) from a code token's text.
std::optional<TokenInfo> parse_code_token(std::string_view s) {
  IndexType type;
  if (s.starts_with("<CeID_")) {
    type = IndexType::kCeid;
  } else if (s.starts_with("<SeID_")) {
    type = IndexType::kSeid;
  } else {
    return std::nullopt;
  }
  if (!s.ends_with(">")) return std::nullopt;
  auto body = s.substr(6, s.size() - 7);
  auto parts = detail::split(body, ',');
  if (parts.size() != 2) return std::nullopt;
  auto level = detail::parse_int<int>(parts[0]);
  auto word = detail::parse_int<int>(parts[1]);
  if (!level || !word || *level < 1 || *word < 0) return std::nullopt;
  return TokenInfo{std::string(s), TokenKind::kCode, type, *level, *word};
}

}  // namespace

TokenVocab load_vocabulary(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<TokenInfo> tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    auto f = detail::split(line, '\t');
    if (f.size() != 2) throw FormatError(detail::where(path, line_no) + ": expected token<TAB>kind");
    if (f[1] == "code") {
      auto info = parse_code_token(f[0]);
      if (!info) throw FormatError(detail::where(path, line_no) + ": bad code token");
      tokens.push_back(*info);
    } else if (f[1] == "indicator") {
      if (f[0] == "<C>")
        tokens.push_back({"<C>", TokenKind::kIndicator, IndexType::kCeid, 0, 0});
      else if (f[0] == "<S>")
        tokens.push_back({"<S>", TokenKind::kIndicator, IndexType::kSeid, 0, 0});
      else
        throw FormatError(detail::where(path, line_no) + ": unknown indicator");
    } else if (f[1] == "structural") {
      tokens.push_back({std::string(f[0]), TokenKind::kStructural, IndexType::kCeid, 0, 0});
    } else {
      throw FormatError(detail::where(path, line_no) + ": unknown token kind");
    }
  }
  return TokenVocab(std::move(tokens));
}

std::vector<PromptTemplate> parse_templates(std::string_view text,
                                            const std::string& source) {
  std::vector<PromptTemplate> out;
  std::size_t line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    std::string line(raw);
    detail::strip_cr(line);
    if (detail::trim(line).empty() || line.front() == '#') continue;
    auto tab = line.find('\t');
    auto id = tab == std::string::npos ? std::nullopt
                                       : detail::parse_int<int>(std::string_view(line).substr(0, tab));
    if (!id) throw FormatError(source + ":" + std::to_string(line_no) + ": expected <id><TAB><text>");
    PromptTemplate t{*id, line.substr(tab + 1)};
    std::size_t slots = 0;
    for (auto pos = t.text.find("{ }"); pos != std::string::npos; pos = t.text.find("{ }", pos + 1))
      ++slots;
    if (slots != 2)
      throw FormatError(source + ":" + std::to_string(line_no) + ": template needs two '{ }' slots");
    for (const auto& prev : out)
      if (prev.id == t.id)
        throw FormatError(source + ":" + std::to_string(line_no) + ": duplicate template id");
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_templates(text, path.string());
}

const std::vector<PromptTemplate>& default_templates() {
  static const std::vector<PromptTemplate> templates =
      parse_templates(detail::kTemplatesResource, "built-in templates");
  return templates;
}

std::vector<TokenId> item_tokens(const ItemCodeTable& table, const TokenVocab& vocab,
                                 const std::string& item) {
  auto it = table.codes.find(item);
  if (it == table.codes.end())
    throw InvalidArgument("item " + item + " has no " +
                          std::string(to_string(table.index_type)) + " code");
  std::vector<TokenId> out;
  out.reserve(it->second.size());
  for (std::size_t l = 0; l < it->second.size(); ++l)
    out.push_back(vocab.code_token(table.index_type, static_cast<int>(l) + 1, it->second[l]));
  return out;
}

Prompt render_prompt(const std::string& user, std::span<const std::string> history,
                     const ItemCodeTable& table, const TokenVocab& vocab, int template_id,
                     const std::vector<PromptTemplate>& templates) {
  auto tpl = std::find_if(templates.begin(), templates.end(),
                          [&](const PromptTemplate& t) { return t.id == template_id; });
  if (tpl == templates.end())
    throw InvalidArgument("unknown template id " + std::to_string(template_id));

  const std::string indicator = indicator_text(table.index_type);
  Prompt p;
  std::string items_text;
  for (std::size_t k = 0; k < history.size(); ++k) {
    auto toks = item_tokens(table, vocab, history[k]);
    if (k) items_text += ", ";
    items_text += "item_" + indicator;
    for (TokenId t : toks) items_text += vocab.info(t).text;
    p.tokens.insert(p.tokens.end(), toks.begin(), toks.end());
  }

  const std::string& text = tpl->text;
  const auto first = text.find("{ }");
  const auto second = text.find("{ }", first + 1);
  auto is_user_slot = [&](std::size_t pos) {
    if (pos < 5) return false;
    std::string before = text.substr(pos - 5, 5);
    std::transform(before.begin(), before.end(), before.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return before == "user_";
  };
  const bool user_first = is_user_slot(first) || !is_user_slot(second);
  p.text = text.substr(0, first) + (user_first ? user : items_text) +
           text.substr(first + 3, second - first - 3) +
           (user_first ? items_text : user) + text.substr(second + 3);
  p.text += " Given " + indicator + ", predict " + indicator + ".";
  return p;
}

PrefixTrie PrefixTrie::build(const ItemCodeTable& table, const TokenVocab& vocab) {
  if (table.codes.empty()) throw InvalidArgument("prefix trie: empty code table");
  PrefixTrie trie;
  trie.index_type_ = table.index_type;
  trie.depth_ = table.code_len_total();
  trie.nodes_.push_back({});
  for (const auto& [item, codes] : table.codes) {
    if (static_cast<int>(codes.size()) != trie.depth_)
      throw InvalidArgument("prefix trie: item " + item + " has the wrong code length");
    int cur = 0;
    for (std::size_t l = 0; l < codes.size(); ++l) {
      auto& edges = trie.nodes_[cur].edges;
      auto it = std::lower_bound(edges.begin(), edges.end(), codes[l],
                                 [](const Edge& e, int w) { return e.word < w; });
      if (it != edges.end() && it->word == codes[l]) {
        cur = it->child;
        continue;
      }
      const int child = static_cast<int>(trie.nodes_.size());
      const TokenId tok =
          vocab.code_token(table.index_type, static_cast<int>(l) + 1, codes[l]);
      edges.insert(it, Edge{tok, codes[l], child});
      trie.nodes_.push_back({{}, -1, static_cast<int>(l) + 1});
      cur = child;
    }
    if (trie.nodes_[cur].item >= 0)
      throw InvalidArgument("prefix trie: items " + trie.items_[trie.nodes_[cur].item] +
                            " and " + item + " share a code tuple");
    trie.nodes_[cur].item = static_cast<int>(trie.items_.size());
    trie.items_.push_back(item);
  }
  return trie;
}

std::size_t PrefixTrie::num_terminals() const {
  return static_cast<std::size_t>(std::count_if(
      nodes_.begin(), nodes_.end(), [](const Node& n) { return n.item >= 0; }));
}

std::optional<int> PrefixTrie::walk(std::span<const TokenId> prefix) const {
  int cur = root();
  for (TokenId t : prefix) {
    const auto& edges = nodes_[cur].edges;
    auto it = std::find_if(edges.begin(), edges.end(),
                           [t](const Edge& e) { return e.token == t; });
    if (it == edges.end()) return std::nullopt;
    cur = it->child;
  }
  return cur;
}

std::vector<TokenId> PrefixTrie::allowed_next(std::span<const TokenId> prefix) const {
  auto node_id = walk(prefix);
  if (!node_id) throw InvalidArgument("allowed_next: prefix is not in the trie");
  std::vector<TokenId> out;
  for (const auto& e : nodes_[*node_id].edges) out.push_back(e.token);
  return out;
}

std::optional<std::string> PrefixTrie::item_at(std::span<const TokenId> path) const {
  auto node_id = walk(path);
  if (!node_id || nodes_[*node_id].item < 0) return std::nullopt;
  return items_[nodes_[*node_id].item];
}

}  // namespace mirec
