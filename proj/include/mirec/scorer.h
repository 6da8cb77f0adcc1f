#pragma once

// Next-token probability sources for constrained decoding. The reference
// implementation is an interpolated n-gram model over code-token streams.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mirec/types.h"
#include "mirec/vocab.h"

namespace mirec {

class Scorer {
 public:
  virtual ~Scorer() = default;
  // Log-probabilities aligned with `candidates`, renormalized over exactly
  // that set. Throws InvalidArgument when `candidates` is empty or holds a
  // token outside the scorer's support.
  virtual std::vector<double> next_token_logprobs(
      std::span<const TokenId> context, std::span<const TokenId> candidates) const = 0;
  // Whether `token` may appear in a context.
  virtual bool knows(TokenId token) const = 0;

  std::unordered_map<TokenId, double> next_token_logprob_map(
      std::span<const TokenId> context, std::span<const TokenId> candidates) const;
};

struct MarkovConfig {
  int order = 8;         // longest context, in tokens
  double delta = 0.1;    // additive smoothing
  double lambda = 0.4;   // weight of the next-lower order
  std::uint64_t seed = 0;

  void validate() const;
};

// P_k(w | h) = (1 - lambda) * (c(h, w) + delta) / (c(h) + delta * |V|)
//              + lambda * P_{k-1}(w | h'),
// where h' drops the oldest token of h. A context never seen in training
// contributes nothing and P_k = P_{k-1}. The order-0 term is the smoothed
// unigram, which is uniform for an untrained model.
class MarkovScorer : public Scorer {
 public:
  // Untrained: every token in `support` is equally likely.
  MarkovScorer(IndexType type, int template_id, std::vector<TokenId> support,
               MarkovConfig cfg);

  std::vector<double> next_token_logprobs(
      std::span<const TokenId> context,
      std::span<const TokenId> candidates) const override;
  bool knows(TokenId token) const override;

  // Unnormalized-over-candidates probability of one token.
  double probability(std::span<const TokenId> context, TokenId token) const;

  IndexType index_type() const { return type_; }
  int template_id() const { return template_id_; }
  const MarkovConfig& config() const { return cfg_; }
  const std::vector<TokenId>& support() const { return support_; }

  // Adds every n-gram (context lengths 0..order) of one stream.
  void observe(std::span<const TokenId> stream);
  // Raw count update, used when restoring a checkpoint.
  void add_count(std::span<const TokenId> context, TokenId token, std::uint64_t count);

  struct CountRow {
    std::vector<TokenId> context;
    TokenId token;
    std::uint64_t count;
  };
  // All non-zero counts, in no particular order.
  std::vector<CountRow> counts() const;

  bool operator==(const MarkovScorer& other) const;

 private:
  struct Node {
    std::uint64_t total = 0;
    std::unordered_map<TokenId, std::uint64_t> next;
  };
  static std::string key(std::span<const TokenId> context);
  // Nodes for the context suffixes of length 0..min(order, |context|).
  std::vector<const Node*> context_nodes(std::span<const TokenId> context) const;
  // Per-order mixing coefficients for the nodes returned above.
  std::vector<double> mixture(const std::vector<const Node*>& nodes) const;

  IndexType type_;
  int template_id_;
  std::vector<TokenId> support_;
  std::vector<char> in_support_;
  MarkovConfig cfg_;
  // tables_[k] maps a packed length-k context to its successor counts.
  std::vector<std::unordered_map<std::string, Node>> tables_;
};

// Template 1 trains on every stream; template t > 1 on a bootstrap resample
// of the streams (drawn with replacement, seeded by cfg.seed and t).
MarkovScorer train_markov_scorer(const std::vector<std::vector<TokenId>>& streams,
                                 IndexType type, int template_id,
                                 std::vector<TokenId> support, const MarkovConfig& cfg);

// Text checkpoint: '#' header lines with the settings and support, then
// sorted `context-tokens<TAB>token<TAB>count` rows (space-separated context).
void save_markov_scorer(const MarkovScorer& scorer, const TokenVocab& vocab,
                        const std::filesystem::path& path);
MarkovScorer load_markov_scorer(const std::filesystem::path& path,
                                const TokenVocab& vocab);

}  // namespace mirec
