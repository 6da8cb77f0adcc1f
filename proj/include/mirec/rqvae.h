#pragma once

// Residual-quantized autoencoder that turns item embeddings into
// hierarchical code tuples, plus collision handling for the tuples.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mirec/dataset.h"
#include "mirec/nn.h"
#include "mirec/types.h"

namespace mirec {

struct RqVaeConfig {
  int latent_dim = 32;
  int code_len = 3;         // L, number of codebook levels
  int codebook_size = 256;  // W
  // Encoder hidden widths; the decoder mirrors them. Four hidden widths give
  // five affine layers per network.
  std::vector<int> hidden = {256, 128, 64, 64};
  double beta = 0.25;
  int epochs = 300;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  int kmeans_iters = 100;
  bool reseed_dead_codewords = true;
  std::uint64_t seed = 0;

  // Full-scale settings: 10k epochs at batch 4096. Too slow for tests.
  static RqVaeConfig full_scale();
  void validate() const;
};

struct Codebook {
  int level = 1;            // 1-based
  Eigen::MatrixXd vectors;  // latent_dim x W, one codeword per column

  int size() const { return static_cast<int>(vectors.cols()); }
};

struct RqVaeModel {
  Mlp encoder;
  Mlp decoder;
  std::vector<Codebook> codebooks;

  int input_dim() const { return encoder.input_dim(); }
  int latent_dim() const { return encoder.output_dim(); }
  int code_len() const { return static_cast<int>(codebooks.size()); }
  int codebook_size() const {
    return codebooks.empty() ? 0 : codebooks.front().size();
  }
  // Throws InvalidArgument when the pieces do not fit together.
  void validate() const;
  bool operator==(const RqVaeModel& other) const;
};

// Lloyd's algorithm on the columns of `points` (dim x n). Initial centroids
// are W distinct columns sampled with `seed`; a cluster that empties is moved
// onto the point farthest from its current centroid.
Eigen::MatrixXd kmeans_init(const Eigen::MatrixXd& points, int num_centroids,
                            int iters, std::uint64_t seed);

// Sum of squared distances from each column to its nearest centroid.
double kmeans_sse(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids);

// Index of the nearest codeword (squared L2); ties go to the lowest index.
int nearest_codeword(const Eigen::Ref<const Eigen::VectorXd>& v,
                     const Eigen::MatrixXd& codewords);

struct QuantizeResult {
  std::vector<int> codes;                  // c_1..c_L
  std::vector<Eigen::VectorXd> residuals;  // r_0..r_L, r_0 = z
  Eigen::VectorXd z_star;                  // sum of the selected codewords
};

QuantizeResult quantize_residual(const Eigen::VectorXd& z,
                                 std::span<const Codebook> codebooks);

struct ForwardResult {
  Eigen::MatrixXd x_star;               // dim x B
  std::vector<std::vector<int>> codes;  // per sample
  double rec_loss = 0.0;
  double rq_loss = 0.0;
  double total_loss = 0.0;
};

// Losses are means over the batch (columns of x) of per-sample squared norms.
ForwardResult forward_loss(const RqVaeModel& model, const Eigen::MatrixXd& x,
                           double beta);

struct RqVaeGradients {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;
  std::vector<Eigen::MatrixXd> codebooks;
};

// Gradients of the training objective for one batch: decoder from the
// reconstruction term, encoder from the straight-through decoder input
// gradient plus the commitment branch, codebooks from the codebook branch.
RqVaeGradients compute_gradients(const RqVaeModel& model,
                                 const Eigen::MatrixXd& x, double beta,
                                 ForwardResult* forward = nullptr);

// Random networks plus k-means codebooks fitted on the first training batch.
// This is exactly what train_rqvae returns when cfg.epochs == 0.
RqVaeModel initialize_rqvae(const Eigen::MatrixXd& x, const RqVaeConfig& cfg);

struct TrainingLog {
  // Full-data losses; entry 0 is measured before the first update.
  std::vector<double> rec_loss;
  std::vector<double> rq_loss;
  std::vector<int> dead_codewords;  // reseeded after each epoch
};

// `x` is dim x n (one item per column).
RqVaeModel train_rqvae(const Eigen::MatrixXd& x, const RqVaeConfig& cfg,
                       TrainingLog* log = nullptr);
RqVaeModel train_rqvae(const EmbeddingMatrix& embeddings, const RqVaeConfig& cfg,
                       TrainingLog* log = nullptr);

using GradientTamper = std::function<void(RqVaeGradients&)>;

// Compares analytic encoder/decoder gradients of the reconstruction loss with
// central finite differences. The quantizer is frozen at the unperturbed
// parameters: the decoder sees z + (z* - z) with the offset held constant,
// which is the function whose derivative the straight-through estimator
// computes. Returns the largest relative error over all parameters.
double gradient_check(const RqVaeModel& model, const Eigen::MatrixXd& x,
                      double epsilon, const GradientTamper& tamper = {});

using RawCodes = std::map<std::string, std::vector<int>>;

RawCodes assign_codes(const RqVaeModel& model, const EmbeddingMatrix& embeddings);

// One index type's collision-free codes: (c_1..c_L, disambiguator) per item.
struct ItemCodeTable {
  IndexType index_type = IndexType::kCeid;
  int code_len = 0;       // L
  int codebook_size = 0;  // W
  std::map<std::string, std::vector<int>> codes;

  int code_len_total() const { return code_len + 1; }
  std::size_t size() const { return codes.size(); }
  bool operator==(const ItemCodeTable&) const = default;
};

// Items sharing an L-prefix get disambiguators 1..m in item-id order; items
// with a unique prefix get 0.
ItemCodeTable resolve_collisions(const RawCodes& raw, IndexType type,
                                 int codebook_size);

// item<TAB>c1<TAB>...<TAB>cL<TAB>disambiguator, sorted by item id.
void save_code_table(const ItemCodeTable& table, const std::filesystem::path& path);
ItemCodeTable load_code_table(const std::filesystem::path& path, IndexType type,
                              int codebook_size);

// Checkpoint: `<stem>.bin` holds the raw parameter arrays, `<stem>.manifest`
// their names and shapes plus the config and seed.
void save_rqvae(const RqVaeModel& model, const RqVaeConfig& cfg,
                const std::filesystem::path& stem);
RqVaeModel load_rqvae(const std::filesystem::path& stem);

}  // namespace mirec
