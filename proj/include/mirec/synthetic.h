#pragma once

#include <cstdint>

#include "mirec/dataset.h"

namespace mirec {

// Seeded generator for a dataset with latent cluster structure, used so the
// full pipeline runs without external data.
//
// Items are split into `clusters` groups. Each group has a random cyclic
// order, and a user's next item is the successor of the current one with
// probability `p_successor`, another item of the same group with
// probability `p_same_cluster`, and otherwise an item of a random group.
// Semantic embeddings are the group centre plus isotropic noise, so they
// see group membership but not the sequential order.
struct SyntheticConfig {
  int users = 2000;
  int items = 500;
  int clusters = 20;
  int min_length = 5;
  int max_length = 15;
  double p_successor = 0.6;
  double p_same_cluster = 0.25;
  int semantic_dim = 64;
  double semantic_noise = 0.35;
  std::uint64_t seed = 7;
};

struct SyntheticData {
  InteractionDataset interactions;
  EmbeddingMatrix semantic;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg);

}  // namespace mirec
