#include "mirec/collab.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "mirec/errors.h"
#include "mirec/nn.h"

namespace mirec {

void CollabConfig::validate() const {
  if (dim < 1) throw ConfigError("collab: dim must be >= 1");
  if (layers < 0) throw ConfigError("collab: layers must be >= 0");
  if (epochs < 0) throw ConfigError("collab: epochs must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("collab: learning_rate must be > 0");
  if (neg_samples_per_positive < 1)
    throw ConfigError("collab: neg_samples_per_positive must be >= 1");
  if (batch_size < 1) throw ConfigError("collab: batch_size must be >= 1");
  if (l2 < 0) throw ConfigError("collab: l2 must be >= 0");
  if (holdout_fraction < 0 || holdout_fraction >= 1)
    throw ConfigError("collab: holdout_fraction must be in [0, 1)");
}

SparseMatrix normalized_bipartite_adjacency(
    int num_users, int num_items, const std::vector<std::pair<int, int>>& edges) {
  const int n = num_users + num_items;
  std::vector<double> degree(static_cast<std::size_t>(n), 0.0);
  for (auto [u, i] : edges) {
    if (u < 0 || u >= num_users || i < 0 || i >= num_items)
      throw InvalidArgument("adjacency: edge index out of range");
    degree[u] += 1.0;
    degree[num_users + i] += 1.0;
  }
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(edges.size() * 2);
  for (auto [u, i] : edges) {
    const int v = num_users + i;
    const double w = 1.0 / std::sqrt(degree[u] * degree[v]);
    trip.emplace_back(u, v, w);
    trip.emplace_back(v, u, w);
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

Eigen::MatrixXd propagate_step(const SparseMatrix& adjacency,
                               const Eigen::MatrixXd& embeddings) {
  if (adjacency.cols() != embeddings.rows())
    throw InvalidArgument("propagate: adjacency has " +
                          std::to_string(adjacency.cols()) + " nodes, embeddings " +
                          std::to_string(embeddings.rows()));
  return adjacency * embeddings;
}

Eigen::MatrixXd propagate(const SparseMatrix& adjacency,
                          const Eigen::MatrixXd& embeddings, int layers) {
  if (layers < 0) throw InvalidArgument("propagate: layers must be >= 0");
  if (adjacency.rows() != adjacency.cols() || adjacency.cols() != embeddings.rows())
    throw InvalidArgument("propagate: adjacency/embedding dimension mismatch");
  Eigen::MatrixXd sum = embeddings;
  Eigen::MatrixXd cur = embeddings;
  for (int k = 0; k < layers; ++k) {
    cur = adjacency * cur;
    sum += cur;
  }
  return sum / static_cast<double>(layers + 1);
}

namespace {

double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

struct Triple {
  int user, pos, neg;
};

}  // namespace

EmbeddingMatrix train_collaborative_embeddings(const SplitDataset& split,
                                               const CollabConfig& cfg,
                                               CollabTrainingLog* log) {
  cfg.validate();
  if (split.train.empty()) throw EmptyDataError("collab: empty training split");
  if (split.items.empty()) throw EmptyDataError("collab: empty item universe");

  std::map<std::string, int> item_index;
  for (std::size_t i = 0; i < split.items.size(); ++i)
    item_index.emplace(split.items[i], static_cast<int>(i));
  const int num_users = static_cast<int>(split.train.size());
  const int num_items = static_cast<int>(split.items.size());

  // Deduplicated (user, item) pairs in user then item order.
  std::vector<std::vector<int>> user_items(static_cast<std::size_t>(num_users));
  std::vector<std::pair<int, int>> pairs;
  {
    int u = 0;
    for (const auto& [user, items] : split.train) {
      auto& seen = user_items[u];
      for (const auto& item : items) {
        auto it = item_index.find(item);
        if (it == item_index.end())
          throw InvalidArgument("collab: train item " + item + " not in item universe");
        seen.push_back(it->second);
      }
      std::sort(seen.begin(), seen.end());
      seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
      for (int i : seen) pairs.emplace_back(u, i);
      ++u;
    }
  }
  if (pairs.empty()) throw EmptyDataError("collab: no training interactions");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::pair<int, int>> holdout;
  if (cfg.holdout_fraction > 0) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    auto count = static_cast<std::size_t>(cfg.holdout_fraction * pairs.size());
    holdout.assign(pairs.end() - count, pairs.end());
    pairs.resize(pairs.size() - count);
    std::sort(pairs.begin(), pairs.end());
  }

  const SparseMatrix adj = normalized_bipartite_adjacency(num_users, num_items, pairs);
  const int n = num_users + num_items;
  const double bound = 0.1 / std::sqrt(static_cast<double>(cfg.dim));
  std::uniform_real_distribution<double> init(-bound, bound);
  Eigen::MatrixXd ego(n, cfg.dim);
  for (Eigen::Index i = 0; i < ego.size(); ++i) ego.data()[i] = init(rng);

  std::uniform_int_distribution<int> item_dist(0, num_items - 1);
  auto sample_negative = [&](int u) -> int {
    const auto& seen = user_items[u];
    if (static_cast<int>(seen.size()) >= num_items) return -1;
    while (true) {
      int j = item_dist(rng);
      if (!std::binary_search(seen.begin(), seen.end(), j)) return j;
    }
  };

  // Fixed negatives for the held-out pairs so their loss is comparable.
  std::vector<Triple> holdout_triples;
  for (auto [u, i] : holdout) {
    int j = sample_negative(u);
    if (j >= 0) holdout_triples.push_back({u, i, j});
  }
  auto ranking_loss = [&](const Eigen::MatrixXd& fin, const std::vector<Triple>& ts) {
    double total = 0.0;
    for (const auto& t : ts) {
      const double x = fin.row(t.user).dot(fin.row(num_users + t.pos) -
                                           fin.row(num_users + t.neg));
      total -= log_sigmoid(x);
    }
    return ts.empty() ? 0.0 : total / static_cast<double>(ts.size());
  };

  AdamW opt(AdamW::Options{.weight_decay = 0.0});
  Eigen::MatrixXd grad(n, cfg.dim);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_terms = 0;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(pairs.size(), start + cfg.batch_size);
      std::vector<Triple> batch;
      for (std::size_t p = start; p < end; ++p) {
        for (int s = 0; s < cfg.neg_samples_per_positive; ++s) {
          int j = sample_negative(pairs[p].first);
          if (j >= 0) batch.push_back({pairs[p].first, pairs[p].second, j});
        }
      }
      if (batch.empty()) continue;

      const Eigen::MatrixXd fin = propagate(adj, ego, cfg.layers);
      const double inv = 1.0 / static_cast<double>(batch.size());
      grad.setZero();
      Eigen::MatrixXd ego_reg = Eigen::MatrixXd::Zero(n, cfg.dim);
      for (const auto& t : batch) {
        const int iu = t.user, ip = num_users + t.pos, in = num_users + t.neg;
        const double x = fin.row(iu).dot(fin.row(ip) - fin.row(in));
        epoch_loss -= log_sigmoid(x);
        ++epoch_terms;
        // d(-log sigmoid(x))/dx = -sigmoid(-x)
        const double c = -sigmoid(-x) * inv;
        grad.row(iu) += c * (fin.row(ip) - fin.row(in));
        grad.row(ip) += c * fin.row(iu);
        grad.row(in) -= c * fin.row(iu);
        ego_reg.row(iu) += cfg.l2 * inv * ego.row(iu);
        ego_reg.row(ip) += cfg.l2 * inv * ego.row(ip);
        ego_reg.row(in) += cfg.l2 * inv * ego.row(in);
      }
      if (!std::isfinite(epoch_loss))
        throw DivergenceError("collab: non-finite loss at epoch " + std::to_string(epoch),
                              epoch);
      // The normalized adjacency is symmetric, so the backward pass of the
      // layer mean is the same propagation applied to the gradient.
      Eigen::MatrixXd ego_grad = propagate(adj, grad, cfg.layers) + ego_reg;
      ParamBlock block{ego.data(), ego_grad.data(), static_cast<std::size_t>(ego.size())};
      opt.step(std::span(&block, 1), cfg.learning_rate);
    }
    if (!ego.allFinite())
      throw DivergenceError("collab: non-finite embeddings at epoch " + std::to_string(epoch),
                            epoch);
    if (log) {
      log->epoch_loss.push_back(epoch_terms ? epoch_loss / epoch_terms : 0.0);
      if (!holdout_triples.empty())
        log->holdout_loss.push_back(ranking_loss(propagate(adj, ego, cfg.layers),
                                                 holdout_triples));
    }
  }

  const Eigen::MatrixXd fin = propagate(adj, ego, cfg.layers);
  Eigen::MatrixXd items = fin.bottomRows(num_items);
  return EmbeddingMatrix(split.items, std::move(items), SourceTag::kCollaborative);
}

}  // namespace mirec
