#pragma once

// Token vocabulary for item codes, prompt rendering, and the prefix trie
// used to constrain decoding to valid item codes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mirec/rqvae.h"
#include "mirec/types.h"

namespace mirec {

using TokenId = std::int32_t;

enum class TokenKind { kCode, kIndicator, kStructural };
std::string_view to_string(TokenKind kind);

struct TokenInfo {
  std::string text;
  TokenKind kind = TokenKind::kCode;
  IndexType index_type = IndexType::kCeid;
  int level = 0;  // 1-based for code tokens, 0 otherwise
  int word = 0;
};

// "<CeID_3,255>" / "<SeID_1,0>"; levels are 1-based and the collision
// disambiguator is level L+1.
std::string code_token_text(IndexType type, int level, int word);
// "<C>" / "<S>"
std::string indicator_text(IndexType type);

class TokenVocab {
 public:
  TokenVocab() = default;
  explicit TokenVocab(std::vector<TokenInfo> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<TokenInfo>& tokens() const { return tokens_; }
  const TokenInfo& info(TokenId id) const;

  std::optional<TokenId> find(std::string_view text) const;
  // Throws InvalidArgument for unknown tokens.
  TokenId id(std::string_view text) const;
  TokenId code_token(IndexType type, int level, int word) const;
  std::optional<TokenId> indicator(IndexType type) const;
  // All code tokens of one index type, in id order.
  std::vector<TokenId> code_tokens(IndexType type) const;

 private:
  std::vector<TokenInfo> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Indicators for the given index types first, then one token per
// (type, level, word) used by any table, ordered by (type, level, word).
TokenVocab build_vocabulary(std::span<const ItemCodeTable> tables);

// token<TAB>kind
void save_vocabulary(const TokenVocab& vocab, const std::filesystem::path& path);
TokenVocab load_vocabulary(const std::filesystem::path& path);

struct PromptTemplate {
  int id = 0;
  std::string text;  // two "{ }" slots; the one right after "user_" is the user
};

// Parses `<id><TAB><text>` lines; '#' lines are comments.
std::vector<PromptTemplate> parse_templates(std::string_view text,
                                            const std::string& source = "templates");
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);
// The ten built-in sequential-recommendation templates.
const std::vector<PromptTemplate>& default_templates();

// The code tokens of one item, c_1..c_L then the disambiguator.
std::vector<TokenId> item_tokens(const ItemCodeTable& table, const TokenVocab& vocab,
                                 const std::string& item);

struct Prompt {
  std::string text;
  // History items in order, code_len_total tokens each. Indicators and the
  // natural-language words are not part of it.
  std::vector<TokenId> tokens;
};

Prompt render_prompt(const std::string& user, std::span<const std::string> history,
                     const ItemCodeTable& table, const TokenVocab& vocab,
                     int template_id,
                     const std::vector<PromptTemplate>& templates = default_templates());

class PrefixTrie {
 public:
  struct Edge {
    TokenId token;
    int word;
    int child;
  };
  struct Node {
    std::vector<Edge> edges;  // sorted by word
    int item = -1;            // index into items() at terminals
    int depth = 0;
  };

  static PrefixTrie build(const ItemCodeTable& table, const TokenVocab& vocab);

  IndexType index_type() const { return index_type_; }
  int depth() const { return depth_; }
  static constexpr int root() { return 0; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t num_nodes() const { return nodes_.size(); }
  const std::vector<std::string>& items() const { return items_; }
  std::size_t num_terminals() const;

  // Node reached by following `prefix` from the root, if it exists.
  std::optional<int> walk(std::span<const TokenId> prefix) const;
  // Tokens that extend `prefix`; empty at terminals. Throws InvalidArgument
  // when the prefix is not a path of the trie.
  std::vector<TokenId> allowed_next(std::span<const TokenId> prefix) const;
  // Item at the end of a complete code path.
  std::optional<std::string> item_at(std::span<const TokenId> path) const;

 private:
  IndexType index_type_ = IndexType::kCeid;
  int depth_ = 0;
  std::vector<Node> nodes_;
  std::vector<std::string> items_;
};

}  // namespace mirec
