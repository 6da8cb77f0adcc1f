#pragma once

// Minimal dense-network building blocks for the autoencoder: a stack of
// affine layers with ReLU between them, and an AdamW optimizer over a flat
// list of parameter blocks. Batches are column-major: one sample per column.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mirec {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct MlpActivations {
  // inputs[k] is the input to layer k; pre[k] its affine output.
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre;
};

class Mlp {
 public:
  Mlp() = default;
  // widths = {in, h1, ..., out}; ReLU after every layer except the last.
  Mlp(const std::vector<int>& widths, std::mt19937_64& rng);
  explicit Mlp(std::vector<DenseLayer> layers);

  int input_dim() const;
  int output_dim() const;
  std::size_t num_layers() const { return layers_.size(); }
  std::vector<int> widths() const;

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x,
                          MlpActivations* acts = nullptr) const;

  // Accumulates parameter gradients into `grads` (same shapes as layers())
  // and returns the gradient with respect to the network input.
  Eigen::MatrixXd backward(const MlpActivations& acts,
                           const Eigen::MatrixXd& grad_out,
                           std::vector<DenseLayer>* grads) const;

  std::vector<DenseLayer> zero_grads() const;

  bool operator==(const Mlp& other) const;

 private:
  std::vector<DenseLayer> layers_;
};

// View of one parameter block and its gradient buffer.
struct ParamBlock {
  double* value;
  const double* grad;
  std::size_t size;
};

// Decoupled-weight-decay Adam.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() = default;
  explicit AdamW(Options opts) : opts_(opts) {}

  void step(std::span<const ParamBlock> blocks, double lr);
  // Clears the moment estimates of `count` entries of block `b` starting at
  // `offset`. Used when parameters are reinitialized mid-training.
  void reset_state(std::size_t b, std::size_t offset, std::size_t count);

 private:
  Options opts_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace mirec
