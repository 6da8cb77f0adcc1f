#include <algorithm>
#include <cmath>
#include <iterator>
#include <random>

#include "doctest.h"
#include "mirec/errors.h"
#include "mirec/metrics.h"
#include "test_util.h"

using namespace mirec;

namespace {

HitSet hs(int t, std::set<std::string> users) { return {t, std::move(users)}; }

RankedList ranked(const std::string& user, std::vector<std::string> items) {
  RankedList l{user, "fused", 0, {}};
  for (auto& i : items) l.entries.push_back({std::move(i), 0.0});
  return l;
}

double per_oracle(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::vector<std::string> diff;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
  return static_cast<double>(diff.size()) / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("hit and ndcg examples") {
  const TestItems test = {{"a", "x"}, {"b", "y"}, {"c", "z"}, {"d", "w"}};
  std::vector<RankedList> top = {ranked("a", {"x"}), ranked("b", {"y"}), ranked("c", {"z"}),
                                 ranked("d", {"w"})};
  CHECK(hit_at_k(top, test, 5).value == 1.0);
  CHECK(ndcg_at_k(top, test, 5).value == 1.0);

  std::vector<RankedList> miss = {ranked("a", {"q"}), ranked("b", {"q"}), ranked("c", {"q"}),
                                  ranked("d", {"q"})};
  CHECK(hit_at_k(miss, test, 5).value == 0.0);
  CHECK(ndcg_at_k(miss, test, 5).value == 0.0);

  std::vector<RankedList> half = {ranked("a", {"q", "x"}), ranked("b", {"y"}),
                                  ranked("c", {"q"}), ranked("d", {"q"})};
  CHECK(hit_at_k(half, test, 5).value == 0.5);
  CHECK(ndcg_at_k(half, test, 5).value ==
        doctest::Approx((1.0 + 0.6309297535714575) / 4).epsilon(1e-12));

  std::vector<RankedList> second = {ranked("a", {"q", "x"})};
  const TestItems one = {{"a", "x"}};
  CHECK(ndcg_at_k(second, one, 5).value == doctest::Approx(0.6309298).epsilon(1e-7));
  CHECK(hit_at_k(second, one, 1).value == 0.0);
}

TEST_CASE("users without a list count as misses") {
  const TestItems test = {{"a", "x"}, {"b", "y"}};
  std::vector<RankedList> lists = {ranked("a", {"x"})};
  const auto rep = hit_at_k(lists, test, 10);
  CHECK(rep.value == 0.5);
  CHECK(rep.users == 2);
  CHECK(rep.missing_users == std::vector<std::string>{"b"});

  lists.push_back(ranked("a", {"x"}));
  CHECK_THROWS_AS(hit_at_k(lists, test, 10), InvalidArgument);
  std::vector<RankedList> stranger = {ranked("zz", {"x"})};
  CHECK_THROWS_AS(hit_at_k(stranger, test, 10), InvalidArgument);
  CHECK_THROWS_AS(hit_at_k(std::span<const RankedList>{}, test, 0), InvalidArgument);
}

TEST_CASE("accuracy properties on random lists") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    TestItems test;
    std::vector<RankedList> lists;
    const int users = 1 + static_cast<int>(rng() % 15);
    for (int u = 0; u < users; ++u) {
      const std::string user = "u" + std::to_string(u);
      test[user] = "i" + std::to_string(rng() % 12);
      if (rng() % 5 == 0) continue;
      std::vector<std::string> items;
      for (int r = 0; r < 10; ++r) items.push_back("i" + std::to_string(rng() % 12));
      std::sort(items.begin(), items.end());
      items.erase(std::unique(items.begin(), items.end()), items.end());
      std::shuffle(items.begin(), items.end(), rng);
      lists.push_back(ranked(user, items));
    }
    double prev_hit = 0.0, prev_ndcg = 0.0;
    for (int k = 1; k <= 12; ++k) {
      const double hit = hit_at_k(lists, test, k).value;
      const double ndcg = ndcg_at_k(lists, test, k).value;
      CHECK((hit >= 0.0 && hit <= 1.0));
      CHECK(ndcg >= 0.0);
      CHECK(ndcg <= hit);
      CHECK(hit >= prev_hit);
      CHECK(ndcg >= prev_ndcg);
      prev_hit = hit;
      prev_ndcg = ndcg;
    }
  }
}

TEST_CASE("per and chr examples") {
  const auto h1 = hs(1, {"u1", "u2", "u3", "u4"});
  const auto h2 = hs(2, {"u2", "u3"});
  CHECK(per(h1, h1) == 0.0);
  CHECK(per(h1, h2) == 0.5);
  CHECK(per(h2, h1) == 0.0);
  CHECK(per(h2, hs(3, {"u7"})) == 1.0);
  CHECK_THROWS_AS(per(hs(4, {}), h1), InvalidArgument);

  const std::vector<HitSet> t1 = {hs(1, {"a", "b"})};
  const std::vector<HitSet> t2 = {hs(2, {"b", "c"}), hs(3, {"c", "d"})};
  CHECK(chr_avg(t1, t2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const std::vector<HitSet> covering = {hs(1, {"b", "c", "d", "e"})};
  CHECK(chr_avg(covering, t2) == 0.0);
  const std::vector<HitSet> apart = {hs(1, {"x"})};
  CHECK(chr_avg(apart, t2) == 1.0);
  const std::vector<HitSet> empty_union = {hs(5, {})};
  CHECK_THROWS_AS(chr_avg(t1, empty_union), InvalidArgument);
}

TEST_CASE("per and chr equal brute-force set algebra") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    const int users = 1 + static_cast<int>(rng() % 20);
    const int templates = 2 + static_cast<int>(rng() % 9);
    std::vector<HitSet> sets;
    for (int t = 1; t <= templates; ++t) {
      HitSet h{t, {}};
      for (int u = 0; u < users; ++u)
        if (rng() % 2) h.users.insert("u" + std::to_string(u));
      sets.push_back(std::move(h));
    }
    for (const auto& a : sets)
      for (const auto& b : sets) {
        if (a.users.empty()) {
          CHECK_THROWS_AS(per(a, b), InvalidArgument);
          continue;
        }
        CHECK(per(a, b) == per_oracle(a.users, b.users));
      }

    const auto split = 1 + rng() % (templates - 1);
    std::vector<HitSet> t1(sets.begin(), sets.begin() + static_cast<long>(split));
    std::vector<HitSet> t2(sets.begin() + static_cast<long>(split), sets.end());
    std::set<std::string> uni;
    for (const auto& h : t2) uni.insert(h.users.begin(), h.users.end());
    if (uni.empty()) {
      CHECK_THROWS_AS(chr_avg(t1, t2), InvalidArgument);
      continue;
    }
    double want = 0.0;
    for (const auto& h : t1) want += per_oracle(uni, h.users);
    want /= static_cast<double>(t1.size());
    CHECK(chr_avg(t1, t2) == doctest::Approx(want).epsilon(1e-15));
  }
}

TEST_CASE("per matrix") {
  const std::vector<HitSet> same = {hs(1, {"a"}), hs(2, {"a"}), hs(3, {"a"})};
  for (const auto& row : per_matrix(same).values)
    for (const auto& v : row) CHECK(*v == 0.0);

  const std::vector<HitSet> two = {hs(1, {"u1", "u2", "u3", "u4"}), hs(2, {"u2", "u3", "u5"})};
  const auto m = per_matrix(two);
  CHECK(m.templates == std::vector<int>{1, 2});
  CHECK(*m.values[0][0] == 0.0);
  CHECK(*m.values[0][1] == 0.5);
  CHECK(*m.values[1][0] == doctest::Approx(1.0 / 3.0));
  CHECK(*m.values[1][1] == 0.0);

  const std::vector<HitSet> with_empty = {hs(1, {"a"}), hs(2, {})};
  const auto e = per_matrix(with_empty);
  CHECK(*e.values[0][1] == 1.0);
  CHECK_FALSE(e.values[1][0].has_value());
  const std::vector<HitSet> single = {hs(1, {"a"})};
  CHECK_THROWS_AS(per_matrix(single), InvalidArgument);

  mirec::testing::TempDir dir("pm");
  write_per_matrix_csv(e, dir / "p.csv");
  CHECK(mirec::testing::read_text(dir / "p.csv") == "template,1,2\n1,0,1\n2,,\n");
  write_metrics_csv({{"hit", 5, 0.25}, {"ndcg", 5, 0.125}}, dir / "m.csv");
  CHECK(mirec::testing::read_text(dir / "m.csv") == "metric,k,value\nhit,5,0.25\nndcg,5,0.125\n");
}
