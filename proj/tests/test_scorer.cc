#include <cmath>
#include <random>

#include "doctest.h"
#include "mirec/errors.h"
#include "mirec/scorer.h"
#include "test_util.h"

using namespace mirec;
using mirec::testing::TempDir;

namespace {

// Direct evaluation of the interpolated estimate from raw stream scans.
struct NgramOracle {
  std::vector<std::vector<TokenId>> streams;
  int order;
  double delta, lambda, vocab;

  // (count of h followed by w, count of h followed by anything)
  std::pair<double, double> counts(const std::vector<TokenId>& h, TokenId w) const {
    double c = 0, t = 0;
    for (const auto& s : streams)
      for (std::size_t j = h.size(); j < s.size(); ++j) {
        if (!std::equal(h.begin(), h.end(), s.begin() + static_cast<long>(j - h.size())))
          continue;
        t += 1;
        c += s[j] == w;
      }
    return {c, t};
  }

  double p(const std::vector<TokenId>& ctx, TokenId w, int k) const {
    const std::vector<TokenId> h(ctx.end() - k, ctx.end());
    const auto [c, t] = counts(h, w);
    const double est = (c + delta) / (t + delta * vocab);
    if (k == 0) return est;
    if (t == 0) return p(ctx, w, k - 1);
    return (1 - lambda) * est + lambda * p(ctx, w, k - 1);
  }

  double operator()(const std::vector<TokenId>& ctx, TokenId w) const {
    return p(ctx, w, std::min<int>(order, static_cast<int>(ctx.size())));
  }
};

std::vector<TokenId> support_range(TokenId lo, TokenId hi) {
  std::vector<TokenId> s;
  for (TokenId t = lo; t < hi; ++t) s.push_back(t);
  return s;
}

TokenVocab small_vocab() {
  std::vector<TokenInfo> toks;
  toks.push_back({"<C>", TokenKind::kIndicator, IndexType::kCeid, 0, 0});
  for (int l = 1; l <= 2; ++l)
    for (int w = 0; w < 4; ++w)
      toks.push_back({code_token_text(IndexType::kCeid, l, w), TokenKind::kCode,
                      IndexType::kCeid, l, w});
  return TokenVocab(toks);
}

}  // namespace

TEST_CASE("markov scorer matches the interpolated-backoff oracle") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    MarkovConfig cfg{.order = static_cast<int>(rng() % 4), .delta = 0.1 + 0.1 * (rng() % 5),
                     .lambda = 0.1 * static_cast<double>(rng() % 10), .seed = 1};
    const auto support = support_range(3, 9);
    std::vector<std::vector<TokenId>> streams(1 + rng() % 6);
    for (auto& s : streams) {
      s.resize(1 + rng() % 12);
      for (auto& t : s) t = support[rng() % 3];  // only half the support ever occurs
    }
    MarkovScorer m(IndexType::kCeid, 1, support, cfg);
    for (const auto& s : streams) m.observe(s);
    NgramOracle oracle{streams, cfg.order, cfg.delta, cfg.lambda,
                       static_cast<double>(support.size())};

    for (int q = 0; q < 10; ++q) {
      std::vector<TokenId> ctx(rng() % 5);
      for (auto& t : ctx) t = support[rng() % support.size()];
      double total = 0.0;
      for (TokenId w : support) {
        const double got = m.probability(ctx, w);
        CHECK(got == doctest::Approx(oracle(ctx, w)).epsilon(1e-12));
        total += got;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

      std::vector<TokenId> cand = {support[1], support[4], support[0]};
      const auto lp = m.next_token_logprobs(ctx, cand);
      double z = 0.0;
      for (TokenId w : cand) z += oracle(ctx, w);
      for (std::size_t c = 0; c < cand.size(); ++c)
        CHECK(lp[c] == doctest::Approx(std::log(oracle(ctx, cand[c]) / z)).epsilon(1e-12));
    }
  }
}

TEST_CASE("hand-computed bigram") {
  // Stream a b a c; order 1, delta 1, lambda 0.5, |V| = 3.
  const std::vector<TokenId> s = {0, 1, 0, 2};
  MarkovScorer m(IndexType::kSeid, 1, {0, 1, 2}, {.order = 1, .delta = 1.0, .lambda = 0.5});
  m.observe(s);
  // Unigram: counts a2 b1 c1 of 4 -> (c + 1) / 7.
  // After a: b once, c once, of 2 -> (c + 1) / 5.
  const std::vector<TokenId> ctx = {0};
  CHECK(m.probability(ctx, 1) == doctest::Approx(0.5 * 2.0 / 5 + 0.5 * 2.0 / 7));
  CHECK(m.probability(ctx, 0) == doctest::Approx(0.5 * 1.0 / 5 + 0.5 * 3.0 / 7));
  // c is never followed by anything: the bigram level contributes nothing.
  const std::vector<TokenId> after_c = {2};
  CHECK(m.probability(after_c, 0) == doctest::Approx(3.0 / 7));
}

TEST_CASE("candidate handling") {
  MarkovScorer m(IndexType::kCeid, 1, support_range(0, 5), {});
  const std::vector<TokenId> ctx = {1, 2};
  const std::vector<TokenId> one = {3};
  CHECK(m.next_token_logprobs(ctx, one) == std::vector<double>{0.0});
  const std::vector<TokenId> four = {0, 1, 2, 3};
  for (double lp : m.next_token_logprobs(ctx, four)) CHECK(lp == doctest::Approx(std::log(0.25)));
  CHECK_THROWS_AS(m.next_token_logprobs(ctx, std::span<const TokenId>{}), InvalidArgument);
  const std::vector<TokenId> outside = {1, 9};
  CHECK_THROWS_AS(m.next_token_logprobs(ctx, outside), InvalidArgument);
  CHECK(m.knows(4));
  CHECK_FALSE(m.knows(5));
  CHECK_FALSE(m.knows(-1));
  CHECK_THROWS_AS(m.observe(outside), InvalidArgument);
  CHECK_THROWS_AS(MarkovScorer(IndexType::kCeid, 1, {}, {}), InvalidArgument);
  CHECK_THROWS_AS(MarkovScorer(IndexType::kCeid, 1, {1, 1}, {}), InvalidArgument);
  CHECK_THROWS_AS(MarkovScorer(IndexType::kCeid, 1, {1}, {.delta = 0.0}), ConfigError);
}

TEST_CASE("template scorers") {
  std::mt19937_64 rng(2);
  std::vector<std::vector<TokenId>> streams(30);
  for (auto& s : streams) {
    s.resize(8);
    for (auto& t : s) t = static_cast<TokenId>(1 + rng() % 8);
  }
  const auto support = support_range(1, 9);
  MarkovConfig cfg{.order = 2, .seed = 99};

  const auto t1 = train_markov_scorer(streams, IndexType::kCeid, 1, support, cfg);
  MarkovScorer direct(IndexType::kCeid, 1, support, cfg);
  for (const auto& s : streams) direct.observe(s);
  CHECK(t1 == direct);

  const auto t2 = train_markov_scorer(streams, IndexType::kCeid, 2, support, cfg);
  const auto t3 = train_markov_scorer(streams, IndexType::kCeid, 3, support, cfg);
  CHECK(t2 == train_markov_scorer(streams, IndexType::kCeid, 2, support, cfg));
  CHECK_FALSE(t2.counts().size() == 0);
  // A resample has the same number of streams, so the same unigram total.
  std::uint64_t n1 = 0, n2 = 0;
  for (const auto& r : t1.counts()) n1 += r.context.empty() ? r.count : 0;
  for (const auto& r : t2.counts()) n2 += r.context.empty() ? r.count : 0;
  CHECK(n1 == n2);
  CHECK_FALSE(t2 == t3);
  auto other_seed = cfg;
  other_seed.seed = 100;
  CHECK_FALSE(t2 == train_markov_scorer(streams, IndexType::kCeid, 2, support, other_seed));

  CHECK_THROWS_AS(train_markov_scorer({}, IndexType::kCeid, 1, support, cfg), EmptyDataError);
  CHECK_THROWS_AS(train_markov_scorer(streams, IndexType::kCeid, 0, support, cfg),
                  InvalidArgument);
}

TEST_CASE("scorer checkpoint round-trip") {
  const auto vocab = small_vocab();
  const auto support = vocab.code_tokens(IndexType::kCeid);
  std::vector<std::vector<TokenId>> streams = {{support[0], support[5], support[1], support[6]},
                                               {support[2], support[4]}};
  const auto m = train_markov_scorer(streams, IndexType::kCeid, 4, support,
                                     {.order = 3, .delta = 0.2, .lambda = 0.3, .seed = 5});
  TempDir dir("sc");
  save_markov_scorer(m, vocab, dir / "s.txt");
  const auto back = load_markov_scorer(dir / "s.txt", vocab);
  CHECK(back == m);
  CHECK(back.template_id() == 4);
  CHECK(back.config().seed == 5);
  const std::vector<TokenId> ctx = {support[0], support[5]};
  CHECK(back.probability(ctx, support[1]) == m.probability(ctx, support[1]));

  save_markov_scorer(m, vocab, dir / "again.txt");
  CHECK(mirec::testing::read_text(dir / "s.txt") == mirec::testing::read_text(dir / "again.txt"));
  mirec::testing::write_text(dir / "bad.txt", "# markov-scorer v1\nnonsense\n");
  CHECK_THROWS_AS(load_markov_scorer(dir / "bad.txt", vocab), FormatError);
}
