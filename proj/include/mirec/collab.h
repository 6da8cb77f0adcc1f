#pragma once

// Collaborative item embeddings: free user/item vectors smoothed by linear
// propagation over the user-item graph and fitted with a pairwise ranking
// loss on the training split only.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstdint>
#include <utility>
#include <vector>

#include "mirec/dataset.h"

namespace mirec {

struct CollabConfig {
  int dim = 64;
  int layers = 2;
  int epochs = 40;
  double learning_rate = 0.01;
  int neg_samples_per_positive = 1;
  int batch_size = 1024;
  double l2 = 1e-4;
  // Fraction of (user, item) training pairs kept out of the graph and the
  // updates; their ranking loss is logged per epoch. Zero disables it.
  double holdout_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Symmetric-normalized adjacency D^-1/2 A D^-1/2 of the bipartite graph.
// Node order: users 0..U-1, then items U..U+I-1. Isolated nodes get an
// all-zero row.
SparseMatrix normalized_bipartite_adjacency(
    int num_users, int num_items, const std::vector<std::pair<int, int>>& edges);

// One multiplication by the normalized adjacency.
Eigen::MatrixXd propagate_step(const SparseMatrix& adjacency,
                               const Eigen::MatrixXd& embeddings);

// Mean of A^k E for k = 0..layers. Rows of E are graph nodes.
Eigen::MatrixXd propagate(const SparseMatrix& adjacency,
                          const Eigen::MatrixXd& embeddings, int layers);

struct CollabTrainingLog {
  std::vector<double> epoch_loss;    // mean ranking loss over the epoch
  std::vector<double> holdout_loss;  // empty unless holdout_fraction > 0
};

// Rows follow split.items. Deterministic for a given seed.
EmbeddingMatrix train_collaborative_embeddings(const SplitDataset& split,
                                               const CollabConfig& cfg,
                                               CollabTrainingLog* log = nullptr);

}  // namespace mirec
