#include "mirec/synthetic.h"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include "mirec/errors.h"

namespace mirec {
namespace {

std::string padded(char prefix, int value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%0*d", prefix, width, value);
  return buf;
}

int digits(int n) {
  int d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.users < 1 || cfg.items < 1 || cfg.clusters < 1 ||
      cfg.clusters > cfg.items)
    throw InvalidArgument("synthetic: need users, items >= 1 and 1 <= clusters <= items");
  if (cfg.min_length < 1 || cfg.max_length < cfg.min_length)
    throw InvalidArgument("synthetic: bad sequence length range");
  if (cfg.p_successor < 0 || cfg.p_same_cluster < 0 ||
      cfg.p_successor + cfg.p_same_cluster > 1)
    throw InvalidArgument("synthetic: transition probabilities must sum to <= 1");

  std::mt19937_64 rng(cfg.seed);
  const int item_width = digits(cfg.items);
  const int user_width = digits(cfg.users);

  // Shuffle item -> cluster assignment so ids carry no structure.
  std::vector<int> perm(cfg.items);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<int>> members(cfg.clusters);
  std::vector<int> cluster_of(cfg.items);
  for (int k = 0; k < cfg.items; ++k) {
    int item = perm[k];
    int c = k % cfg.clusters;
    members[c].push_back(item);
    cluster_of[item] = c;
  }
  // Successor along each cluster's cycle.
  std::vector<int> successor(cfg.items);
  for (const auto& m : members)
    for (std::size_t j = 0; j < m.size(); ++j)
      successor[m[j]] = m[(j + 1) % m.size()];

  std::vector<std::string> item_ids(cfg.items);
  for (int i = 0; i < cfg.items; ++i) item_ids[i] = padded('i', i, item_width);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> length_dist(cfg.min_length, cfg.max_length);
  std::uniform_int_distribution<int> cluster_dist(0, cfg.clusters - 1);
  auto pick = [&](const std::vector<int>& m) {
    std::uniform_int_distribution<std::size_t> d(0, m.size() - 1);
    return m[d(rng)];
  };

  SyntheticData out;
  auto& ds = out.interactions;
  const std::int64_t base_time = 1546300800;  // 2019-01-01
  for (int u = 0; u < cfg.users; ++u) {
    std::string user = padded('u', u, user_width);
    int len = length_dist(rng);
    int current = pick(members[cluster_dist(rng)]);
    std::int64_t t = base_time + static_cast<std::int64_t>(unit(rng) * 86400.0 * 30);
    auto& seq = ds.sequences[user];
    for (int step = 0; step < len; ++step) {
      if (step > 0) {
        double r = unit(rng);
        if (r < cfg.p_successor)
          current = successor[current];
        else if (r < cfg.p_successor + cfg.p_same_cluster)
          current = pick(members[cluster_of[current]]);
        else
          current = pick(members[cluster_dist(rng)]);
        t += 3600 + static_cast<std::int64_t>(unit(rng) * 86400.0 * 3);
      }
      seq.push_back({item_ids[current], t});
      ds.items.insert(item_ids[current]);
    }
    ds.users.insert(user);
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd centres(cfg.clusters, cfg.semantic_dim);
  for (Eigen::Index i = 0; i < centres.size(); ++i) centres.data()[i] = normal(rng);
  std::vector<std::string> ids;
  Eigen::MatrixXd values(cfg.items, cfg.semantic_dim);
  for (int i = 0; i < cfg.items; ++i) {
    ids.push_back(item_ids[i]);
    for (int d = 0; d < cfg.semantic_dim; ++d)
      values(i, d) = centres(cluster_of[i], d) + cfg.semantic_noise * normal(rng);
  }
  out.semantic = EmbeddingMatrix(std::move(ids), std::move(values),
                                 SourceTag::kSemantic);
  return out;
}

}  // namespace mirec
