#include "mirec/nn.h"

#include <cmath>

#include "mirec/errors.h"

namespace mirec {

Mlp::Mlp(const std::vector<int>& widths, std::mt19937_64& rng) {
  if (widths.size() < 2) throw InvalidArgument("Mlp needs at least in/out widths");
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const int in = widths[k];
    const int out = widths[k + 1];
    if (in < 1 || out < 1) throw InvalidArgument("Mlp widths must be positive");
    // He-uniform: keeps activation variance roughly constant through ReLUs,
    // which a ten-layer autoencoder needs to train in a few hundred epochs.
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
      layer.weight.data()[i] = dist(rng);
    layer.bias.setZero();
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("Mlp needs at least one layer");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (layers_[k].bias.size() != layers_[k].weight.rows())
      throw InvalidArgument("Mlp bias/weight shape mismatch");
    if (k > 0 && layers_[k].weight.cols() != layers_[k - 1].weight.rows())
      throw InvalidArgument("Mlp layer widths do not chain");
  }
}

int Mlp::input_dim() const {
  return static_cast<int>(layers_.front().weight.cols());
}

int Mlp::output_dim() const {
  return static_cast<int>(layers_.back().weight.rows());
}

std::vector<int> Mlp::widths() const {
  std::vector<int> w{input_dim()};
  for (const auto& l : layers_) w.push_back(static_cast<int>(l.weight.rows()));
  return w;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x,
                             MlpActivations* acts) const {
  if (x.rows() != input_dim())
    throw InvalidArgument("Mlp input has " + std::to_string(x.rows()) +
                          " rows, expected " + std::to_string(input_dim()));
  if (acts) {
    acts->inputs.clear();
    acts->pre.clear();
  }
  Eigen::MatrixXd h = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Eigen::MatrixXd a = layers_[k].weight * h;
    a.colwise() += layers_[k].bias;
    if (acts) {
      acts->inputs.push_back(h);
      acts->pre.push_back(a);
    }
    h = (k + 1 < layers_.size()) ? Eigen::MatrixXd(a.cwiseMax(0.0)) : a;
  }
  return h;
}

Eigen::MatrixXd Mlp::backward(const MlpActivations& acts,
                              const Eigen::MatrixXd& grad_out,
                              std::vector<DenseLayer>* grads) const {
  Eigen::MatrixXd g = grad_out;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size())
      g = g.cwiseProduct((acts.pre[k].array() > 0.0).cast<double>().matrix());
    if (grads) {
      (*grads)[k].weight.noalias() += g * acts.inputs[k].transpose();
      (*grads)[k].bias += g.rowwise().sum();
    }
    g = layers_[k].weight.transpose() * g;
  }
  return g;
}

std::vector<DenseLayer> Mlp::zero_grads() const {
  std::vector<DenseLayer> g;
  for (const auto& l : layers_)
    g.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                 Eigen::VectorXd::Zero(l.bias.size())});
  return g;
}

bool Mlp::operator==(const Mlp& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& a = layers_[k];
    const auto& b = other.layers_[k];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
        a.weight != b.weight || a.bias != b.bias)
      return false;
  }
  return true;
}

void AdamW::step(std::span<const ParamBlock> blocks, double lr) {
  if (m_.empty()) {
    for (const auto& b : blocks) {
      m_.emplace_back(b.size, 0.0);
      v_.emplace_back(b.size, 0.0);
    }
  }
  if (m_.size() != blocks.size())
    throw InvalidArgument("AdamW: parameter block count changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto& m = m_[b];
    auto& v = v_[b];
    double* p = blocks[b].value;
    const double* g = blocks[b].grad;
    for (std::size_t i = 0; i < blocks[b].size; ++i) {
      p[i] -= lr * opts_.weight_decay * p[i];
      m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
      v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
  }
}

void AdamW::reset_state(std::size_t b, std::size_t offset, std::size_t count) {
  if (b >= m_.size()) return;
  for (std::size_t i = offset; i < offset + count && i < m_[b].size(); ++i) {
    m_[b][i] = 0.0;
    v_[b][i] = 0.0;
  }
}

}  // namespace mirec
