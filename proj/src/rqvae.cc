#include "mirec/rqvae.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "mirec/errors.h"
#include "text_util.h"

namespace mirec {

RqVaeConfig RqVaeConfig::full_scale() {
  RqVaeConfig cfg;
  cfg.epochs = 10000;
  cfg.batch_size = 4096;
  cfg.hidden = {512, 256, 128, 64};
  return cfg;
}

void RqVaeConfig::validate() const {
  if (codebook_size < 2) throw ConfigError("rqvae: codebook_size must be >= 2");
  if (code_len < 1) throw ConfigError("rqvae: code_len must be >= 1");
  if (latent_dim < 1) throw ConfigError("rqvae: latent_dim must be >= 1");
  if (!(beta > 0)) throw ConfigError("rqvae: beta must be > 0");
  if (epochs < 0) throw ConfigError("rqvae: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("rqvae: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("rqvae: learning_rate must be > 0");
  if (weight_decay < 0) throw ConfigError("rqvae: weight_decay must be >= 0");
  if (kmeans_iters < 0) throw ConfigError("rqvae: kmeans_iters must be >= 0");
  for (int h : hidden)
    if (h < 1) throw ConfigError("rqvae: hidden widths must be positive");
}

void RqVaeModel::validate() const {
  if (encoder.num_layers() == 0 || decoder.num_layers() == 0)
    throw InvalidArgument("rqvae model has no encoder/decoder");
  if (decoder.input_dim() != encoder.output_dim())
    throw InvalidArgument("decoder input must equal the latent dimension");
  if (decoder.output_dim() != encoder.input_dim())
    throw InvalidArgument("decoder output must equal the embedding dimension");
  if (codebooks.empty()) throw InvalidArgument("rqvae model has no codebooks");
  for (std::size_t l = 0; l < codebooks.size(); ++l) {
    const auto& cb = codebooks[l];
    if (cb.vectors.rows() != latent_dim())
      throw InvalidArgument("codebook dimension differs from latent dimension");
    if (cb.size() != codebooks.front().size())
      throw InvalidArgument("codebooks differ in size");
    if (cb.level != static_cast<int>(l) + 1)
      throw InvalidArgument("codebook levels must be 1..L in order");
    if (!cb.vectors.allFinite())
      throw InvalidArgument("codebook has non-finite entries");
  }
}

bool RqVaeModel::operator==(const RqVaeModel& other) const {
  if (!(encoder == other.encoder) || !(decoder == other.decoder)) return false;
  if (codebooks.size() != other.codebooks.size()) return false;
  for (std::size_t l = 0; l < codebooks.size(); ++l) {
    const auto& a = codebooks[l].vectors;
    const auto& b = other.codebooks[l].vectors;
    if (a.rows() != b.rows() || a.cols() != b.cols() || a != b) return false;
  }
  return true;
}

int nearest_codeword(const Eigen::Ref<const Eigen::VectorXd>& v,
                     const Eigen::MatrixXd& codewords) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index w = 0; w < codewords.cols(); ++w) {
    const double d = (codewords.col(w) - v).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(w);
    }
  }
  return best;
}

Eigen::MatrixXd kmeans_init(const Eigen::MatrixXd& points, int num_centroids,
                            int iters, std::uint64_t seed) {
  const Eigen::Index n = points.cols();
  if (num_centroids < 1) throw InvalidArgument("kmeans: need at least one centroid");
  if (n < num_centroids)
    throw InvalidArgument("kmeans: " + std::to_string(n) + " points for " +
                          std::to_string(num_centroids) + " centroids");
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  // Partial Fisher-Yates: the first W entries are a uniform distinct sample.
  for (int k = 0; k < num_centroids; ++k) {
    std::uniform_int_distribution<Eigen::Index> d(k, n - 1);
    std::swap(idx[k], idx[d(rng)]);
  }
  Eigen::MatrixXd centroids(points.rows(), num_centroids);
  for (int k = 0; k < num_centroids; ++k) centroids.col(k) = points.col(idx[k]);

  std::vector<int> assign(static_cast<std::size_t>(n));
  std::vector<double> dist(static_cast<std::size_t>(n));
  for (int it = 0; it < iters; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      assign[i] = nearest_codeword(points.col(i), centroids);
      dist[i] = (points.col(i) - centroids.col(assign[i])).squaredNorm();
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(points.rows(), num_centroids);
    std::vector<Eigen::Index> counts(num_centroids, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.col(assign[i]) += points.col(i);
      ++counts[assign[i]];
    }
    std::vector<Eigen::Index> by_distance;
    std::size_t next_far = 0;
    for (int k = 0; k < num_centroids; ++k) {
      if (counts[k] > 0) {
        centroids.col(k) = sums.col(k) / static_cast<double>(counts[k]);
        continue;
      }
      if (by_distance.empty()) {
        by_distance.resize(static_cast<std::size_t>(n));
        std::iota(by_distance.begin(), by_distance.end(), Eigen::Index{0});
        std::stable_sort(by_distance.begin(), by_distance.end(),
                         [&](Eigen::Index a, Eigen::Index b) {
                           return dist[a] > dist[b];
                         });
      }
      centroids.col(k) = points.col(by_distance[next_far++ % by_distance.size()]);
    }
  }
  return centroids;
}

double kmeans_sse(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
  double sse = 0.0;
  for (Eigen::Index i = 0; i < points.cols(); ++i)
    sse += (points.col(i) - centroids.col(nearest_codeword(points.col(i), centroids)))
               .squaredNorm();
  return sse;
}

QuantizeResult quantize_residual(const Eigen::VectorXd& z,
                                 std::span<const Codebook> codebooks) {
  if (!z.allFinite()) throw InvalidArgument("quantize_residual: non-finite latent");
  QuantizeResult q;
  q.residuals.reserve(codebooks.size() + 1);
  q.residuals.push_back(z);
  q.z_star = Eigen::VectorXd::Zero(z.size());
  for (const auto& cb : codebooks) {
    if (cb.vectors.rows() != z.size())
      throw InvalidArgument("quantize_residual: codebook/latent dimension mismatch");
    const Eigen::VectorXd r = q.residuals.back();
    const int c = nearest_codeword(r, cb.vectors);
    q.codes.push_back(c);
    q.z_star += cb.vectors.col(c);
    q.residuals.push_back(r - cb.vectors.col(c));
  }
  return q;
}

namespace {

// Per-batch quantization state kept for the backward pass.
struct BatchQuantization {
  std::vector<Eigen::MatrixXd> residual_in;  // r_{l-1} per level, latent x B
  std::vector<std::vector<int>> codes;       // per level, per sample
  Eigen::MatrixXd z_star;
};

BatchQuantization quantize_batch(const Eigen::MatrixXd& z,
                                 const std::vector<Codebook>& codebooks) {
  BatchQuantization q;
  if (!z.allFinite()) throw InvalidArgument("quantize: non-finite latent");
  Eigen::MatrixXd r = z;
  q.z_star = Eigen::MatrixXd::Zero(z.rows(), z.cols());
  for (const auto& cb : codebooks) {
    std::vector<int> codes(static_cast<std::size_t>(z.cols()));
    Eigen::MatrixXd chosen(z.rows(), z.cols());
    for (Eigen::Index b = 0; b < z.cols(); ++b) {
      codes[b] = nearest_codeword(r.col(b), cb.vectors);
      chosen.col(b) = cb.vectors.col(codes[b]);
    }
    q.residual_in.push_back(r);
    q.codes.push_back(std::move(codes));
    q.z_star += chosen;
    r -= chosen;
  }
  return q;
}

Eigen::MatrixXd selected(const Codebook& cb, const std::vector<int>& codes) {
  Eigen::MatrixXd out(cb.vectors.rows(), static_cast<Eigen::Index>(codes.size()));
  for (std::size_t b = 0; b < codes.size(); ++b) out.col(b) = cb.vectors.col(codes[b]);
  return out;
}

std::vector<std::vector<int>> per_sample(const BatchQuantization& q) {
  const std::size_t batch = q.codes.empty() ? 0 : q.codes.front().size();
  std::vector<std::vector<int>> out(batch);
  for (std::size_t b = 0; b < batch; ++b)
    for (const auto& level : q.codes) out[b].push_back(level[b]);
  return out;
}

}  // namespace

ForwardResult forward_loss(const RqVaeModel& model, const Eigen::MatrixXd& x,
                           double beta) {
  if (x.cols() == 0) throw InvalidArgument("forward_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(x.cols());
  Eigen::MatrixXd z = model.encoder.forward(x);
  auto q = quantize_batch(z, model.codebooks);
  ForwardResult out;
  out.x_star = model.decoder.forward(q.z_star);
  out.rec_loss = (x - out.x_star).squaredNorm() * inv_b;
  double rq = 0.0;
  for (std::size_t l = 0; l < model.codebooks.size(); ++l) {
    // sg only changes gradients; both terms share the same value.
    const double d = (q.residual_in[l] - selected(model.codebooks[l], q.codes[l]))
                         .squaredNorm();
    rq += d + beta * d;
  }
  out.rq_loss = rq * inv_b;
  out.total_loss = out.rec_loss + out.rq_loss;
  out.codes = per_sample(q);
  return out;
}

RqVaeGradients compute_gradients(const RqVaeModel& model,
                                 const Eigen::MatrixXd& x, double beta,
                                 ForwardResult* forward) {
  const double inv_b = 1.0 / static_cast<double>(x.cols());
  MlpActivations enc_acts, dec_acts;
  Eigen::MatrixXd z = model.encoder.forward(x, &enc_acts);
  auto q = quantize_batch(z, model.codebooks);
  // Straight-through: the decoder consumes z*, its input gradient goes to z.
  Eigen::MatrixXd x_star = model.decoder.forward(q.z_star, &dec_acts);

  RqVaeGradients g;
  g.encoder = model.encoder.zero_grads();
  g.decoder = model.decoder.zero_grads();
  Eigen::MatrixXd grad_xstar = 2.0 * inv_b * (x_star - x);
  Eigen::MatrixXd grad_z = model.decoder.backward(dec_acts, grad_xstar, &g.decoder);

  double rq = 0.0;
  for (std::size_t l = 0; l < model.codebooks.size(); ++l) {
    const auto& cb = model.codebooks[l];
    Eigen::MatrixXd diff = q.residual_in[l] - selected(cb, q.codes[l]);
    const double d = diff.squaredNorm();
    rq += d + beta * d;
    // Commitment branch: beta * ||r - sg[e]||^2 pulls the encoder output.
    grad_z += (2.0 * beta * inv_b) * diff;
    // Codebook branch: ||sg[r] - e||^2 moves only the selected codewords.
    Eigen::MatrixXd gcb = Eigen::MatrixXd::Zero(cb.vectors.rows(), cb.vectors.cols());
    for (Eigen::Index b = 0; b < diff.cols(); ++b)
      gcb.col(q.codes[l][b]) -= (2.0 * inv_b) * diff.col(b);
    g.codebooks.push_back(std::move(gcb));
  }
  model.encoder.backward(enc_acts, grad_z, &g.encoder);

  if (forward) {
    forward->rec_loss = (x - x_star).squaredNorm() * inv_b;
    forward->rq_loss = rq * inv_b;
    forward->total_loss = forward->rec_loss + forward->rq_loss;
    forward->x_star = std::move(x_star);
    forward->codes = per_sample(q);
  }
  return g;
}

namespace {

std::vector<int> mirrored(const std::vector<int>& hidden) {
  return {hidden.rbegin(), hidden.rend()};
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& x, std::span<const Eigen::Index> cols) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(i) = x.col(cols[i]);
  return out;
}

// Shared by initialize_rqvae and train_rqvae so both consume the random
// stream identically.
struct TrainingState {
  std::mt19937_64 rng;
  std::vector<Eigen::Index> order;
};

RqVaeModel initialize_with(const Eigen::MatrixXd& x, const RqVaeConfig& cfg,
                           TrainingState& st) {
  cfg.validate();
  if (x.cols() == 0) throw EmptyDataError("rqvae: no embeddings to train on");
  if (!x.allFinite()) throw InvalidArgument("rqvae: non-finite embedding values");
  const int d = static_cast<int>(x.rows());

  std::vector<int> enc_w{d};
  enc_w.insert(enc_w.end(), cfg.hidden.begin(), cfg.hidden.end());
  enc_w.push_back(cfg.latent_dim);
  std::vector<int> dec_w{cfg.latent_dim};
  for (int h : mirrored(cfg.hidden)) dec_w.push_back(h);
  dec_w.push_back(d);

  RqVaeModel model;
  model.encoder = Mlp(enc_w, st.rng);
  model.decoder = Mlp(dec_w, st.rng);

  st.order.resize(static_cast<std::size_t>(x.cols()));
  std::iota(st.order.begin(), st.order.end(), Eigen::Index{0});
  std::shuffle(st.order.begin(), st.order.end(), st.rng);

  // Codebooks come from k-means on the first batch. A batch smaller than W
  // is topped up with the following items of the epoch order.
  const auto init_n = std::min<std::size_t>(
      st.order.size(), std::max(cfg.batch_size, cfg.codebook_size));
  Eigen::MatrixXd residual = model.encoder.forward(
      gather(x, std::span(st.order).first(init_n)));
  for (int l = 1; l <= cfg.code_len; ++l) {
    Codebook cb;
    cb.level = l;
    cb.vectors = kmeans_init(residual, cfg.codebook_size, cfg.kmeans_iters, st.rng());
    for (Eigen::Index b = 0; b < residual.cols(); ++b)
      residual.col(b) -= cb.vectors.col(nearest_codeword(residual.col(b), cb.vectors));
    model.codebooks.push_back(std::move(cb));
  }
  return model;
}

std::vector<ParamBlock> parameter_blocks(RqVaeModel& model, const RqVaeGradients& g) {
  std::vector<ParamBlock> blocks;
  auto add_mlp = [&](Mlp& net, const std::vector<DenseLayer>& grads) {
    for (std::size_t k = 0; k < net.layers().size(); ++k) {
      auto& l = net.layers()[k];
      blocks.push_back({l.weight.data(), grads[k].weight.data(),
                        static_cast<std::size_t>(l.weight.size())});
      blocks.push_back({l.bias.data(), grads[k].bias.data(),
                        static_cast<std::size_t>(l.bias.size())});
    }
  };
  add_mlp(model.encoder, g.encoder);
  add_mlp(model.decoder, g.decoder);
  for (std::size_t l = 0; l < model.codebooks.size(); ++l)
    blocks.push_back({model.codebooks[l].vectors.data(), g.codebooks[l].data(),
                      static_cast<std::size_t>(model.codebooks[l].vectors.size())});
  return blocks;
}

}  // namespace

RqVaeModel initialize_rqvae(const Eigen::MatrixXd& x, const RqVaeConfig& cfg) {
  TrainingState st{std::mt19937_64(cfg.seed), {}};
  return initialize_with(x, cfg, st);
}

RqVaeModel train_rqvae(const Eigen::MatrixXd& x, const RqVaeConfig& cfg,
                       TrainingLog* log) {
  TrainingState st{std::mt19937_64(cfg.seed), {}};
  RqVaeModel model = initialize_with(x, cfg, st);
  if (log) *log = {};

  auto record = [&](int epoch) {
    auto f = forward_loss(model, x, cfg.beta);
    if (!std::isfinite(f.total_loss))
      throw DivergenceError("rqvae: non-finite loss at epoch " + std::to_string(epoch),
                            epoch);
    if (log) {
      log->rec_loss.push_back(f.rec_loss);
      log->rq_loss.push_back(f.rq_loss);
    }
  };
  record(0);
  if (cfg.epochs == 0) return model;

  const auto n = static_cast<std::size_t>(x.cols());
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const double total_steps = static_cast<double>(batches_per_epoch) * cfg.epochs;
  // AdamW block index of the first codebook (weight+bias per layer before it).
  const std::size_t codebook_block =
      2 * (model.encoder.num_layers() + model.decoder.num_layers());

  AdamW opt(AdamW::Options{.weight_decay = cfg.weight_decay});
  std::size_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (epoch > 1) std::shuffle(st.order.begin(), st.order.end(), st.rng);
    std::vector<std::vector<int>> usage(
        cfg.code_len, std::vector<int>(static_cast<std::size_t>(cfg.codebook_size), 0));
    std::vector<Eigen::MatrixXd> last_residuals;

    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      Eigen::MatrixXd xb = gather(x, std::span(st.order).subspan(start, len));
      ForwardResult fwd;
      RqVaeGradients g = compute_gradients(model, xb, cfg.beta, &fwd);
      if (!std::isfinite(fwd.total_loss))
        throw DivergenceError(
            "rqvae: non-finite loss at epoch " + std::to_string(epoch), epoch);
      for (const auto& codes : fwd.codes)
        for (int l = 0; l < cfg.code_len; ++l) ++usage[l][codes[l]];

      const double lr = cfg.learning_rate * (1.0 - static_cast<double>(step) / total_steps);
      auto blocks = parameter_blocks(model, g);
      opt.step(blocks, lr);
      ++step;

      if (cfg.reseed_dead_codewords && epoch < cfg.epochs && start + len >= n) {
        // Residual inputs of the last batch, after the update.
        Eigen::MatrixXd r = model.encoder.forward(xb);
        for (const auto& cb : model.codebooks) {
          last_residuals.push_back(r);
          for (Eigen::Index b = 0; b < r.cols(); ++b)
            r.col(b) -= cb.vectors.col(nearest_codeword(r.col(b), cb.vectors));
        }
      }
    }

    int dead_total = 0;
    if (!last_residuals.empty()) {
      for (int l = 0; l < cfg.code_len; ++l) {
        auto& cb = model.codebooks[l];
        const auto& pool = last_residuals[l];
        std::uniform_int_distribution<Eigen::Index> pick(0, pool.cols() - 1);
        for (int w = 0; w < cfg.codebook_size; ++w) {
          if (usage[l][w] > 0) continue;
          cb.vectors.col(w) = pool.col(pick(st.rng));
          opt.reset_state(codebook_block + l,
                          static_cast<std::size_t>(w) * cb.vectors.rows(),
                          static_cast<std::size_t>(cb.vectors.rows()));
          ++dead_total;
        }
      }
    }
    if (log) log->dead_codewords.push_back(dead_total);
    record(epoch);
  }
  return model;
}

RqVaeModel train_rqvae(const EmbeddingMatrix& embeddings, const RqVaeConfig& cfg,
                       TrainingLog* log) {
  if (embeddings.size() == 0) throw EmptyDataError("rqvae: empty embedding matrix");
  return train_rqvae(Eigen::MatrixXd(embeddings.values().transpose()), cfg, log);
}

double gradient_check(const RqVaeModel& model, const Eigen::MatrixXd& x,
                      double epsilon, const GradientTamper& tamper) {
  model.validate();
  const double inv_b = 1.0 / static_cast<double>(x.cols());
  const Eigen::MatrixXd z0 = model.encoder.forward(x);
  const Eigen::MatrixXd offset = quantize_batch(z0, model.codebooks).z_star - z0;

  auto loss = [&](const RqVaeModel& m) {
    Eigen::MatrixXd x_star = m.decoder.forward(m.encoder.forward(x) + offset);
    return (x - x_star).squaredNorm() * inv_b;
  };

  RqVaeGradients g;
  {
    MlpActivations enc_acts, dec_acts;
    Eigen::MatrixXd z = model.encoder.forward(x, &enc_acts);
    Eigen::MatrixXd x_star = model.decoder.forward(z + offset, &dec_acts);
    g.encoder = model.encoder.zero_grads();
    g.decoder = model.decoder.zero_grads();
    Eigen::MatrixXd gz =
        model.decoder.backward(dec_acts, 2.0 * inv_b * (x_star - x), &g.decoder);
    model.encoder.backward(enc_acts, gz, &g.encoder);
  }
  if (tamper) tamper(g);

  RqVaeModel probe = model;
  double worst = 0.0;
  auto check = [&](double* param, const double* analytic, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double saved = param[i];
      param[i] = saved + epsilon;
      const double up = loss(probe);
      param[i] = saved - epsilon;
      const double down = loss(probe);
      param[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  };
  auto check_mlp = [&](Mlp& net, const std::vector<DenseLayer>& grads) {
    for (std::size_t k = 0; k < net.layers().size(); ++k) {
      auto& l = net.layers()[k];
      check(l.weight.data(), grads[k].weight.data(), l.weight.size());
      check(l.bias.data(), grads[k].bias.data(), l.bias.size());
    }
  };
  check_mlp(probe.encoder, g.encoder);
  check_mlp(probe.decoder, g.decoder);
  return worst;
}

RawCodes assign_codes(const RqVaeModel& model, const EmbeddingMatrix& embeddings) {
  model.validate();
  if (embeddings.dim() != model.input_dim())
    throw InvalidArgument("assign_codes: embedding dim " +
                          std::to_string(embeddings.dim()) + " but model expects " +
                          std::to_string(model.input_dim()));
  RawCodes out;
  if (embeddings.size() == 0) return out;
  Eigen::MatrixXd z = model.encoder.forward(embeddings.values().transpose());
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    auto q = quantize_residual(z.col(static_cast<Eigen::Index>(i)), model.codebooks);
    out.emplace(embeddings.ids()[i], std::move(q.codes));
  }
  return out;
}

ItemCodeTable resolve_collisions(const RawCodes& raw, IndexType type,
                                 int codebook_size) {
  ItemCodeTable table;
  table.index_type = type;
  table.codebook_size = codebook_size;
  table.code_len = raw.empty() ? 0 : static_cast<int>(raw.begin()->second.size());

  // RawCodes is ordered by item id, so group members arrive in id order.
  std::map<std::vector<int>, std::vector<std::string>> groups;
  for (const auto& [item, codes] : raw) {
    if (static_cast<int>(codes.size()) != table.code_len)
      throw InvalidArgument("resolve_collisions: inconsistent code length for " + item);
    for (int c : codes)
      if (c < 0 || c >= codebook_size)
        throw InvalidArgument("resolve_collisions: code out of range for " + item);
    groups[codes].push_back(item);
  }
  for (const auto& [prefix, items] : groups) {
    for (std::size_t k = 0; k < items.size(); ++k) {
      std::vector<int> full = prefix;
      full.push_back(items.size() == 1 ? 0 : static_cast<int>(k) + 1);
      table.codes.emplace(items[k], std::move(full));
    }
  }
  return table;
}

void save_code_table(const ItemCodeTable& table, const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  for (const auto& [item, codes] : table.codes) {
    out << item;
    for (int c : codes) out << '\t' << c;
    out << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

ItemCodeTable load_code_table(const std::filesystem::path& path, IndexType type,
                              int codebook_size) {
  auto in = detail::open_input(path);
  ItemCodeTable table;
  table.index_type = type;
  table.codebook_size = codebook_size;
  std::set<std::vector<int>> seen;
  std::string line;
  std::size_t line_no = 0;
  int width = -1;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    auto f = detail::split(line, '\t');
    if (f.size() < 3)
      throw FormatError(detail::where(path, line_no) + ": expected item and codes");
    if (width < 0) width = static_cast<int>(f.size()) - 1;
    if (static_cast<int>(f.size()) - 1 != width)
      throw FormatError(detail::where(path, line_no) + ": inconsistent code length");
    std::vector<int> codes;
    for (std::size_t k = 1; k < f.size(); ++k) {
      auto c = detail::parse_int<int>(f[k]);
      if (!c || *c < 0 || (k + 1 < f.size() && *c >= codebook_size))
        throw FormatError(detail::where(path, line_no) + ": bad code '" +
                          std::string(f[k]) + "'");
      codes.push_back(*c);
    }
    if (!seen.insert(codes).second)
      throw FormatError(detail::where(path, line_no) + ": duplicate code tuple");
    if (!table.codes.emplace(std::string(f[0]), std::move(codes)).second)
      throw FormatError(detail::where(path, line_no) + ": duplicate item id");
  }
  if (table.codes.empty()) throw EmptyDataError("empty code table " + path.string());
  table.code_len = width - 1;
  return table;
}

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'I', 'R', 'Q', 'V', 'A', 'E', '1'};

struct NamedArray {
  std::string name;
  Eigen::Index rows, cols;
  double* data;
};

std::vector<NamedArray> named_arrays(RqVaeModel& m) {
  std::vector<NamedArray> out;
  auto add_mlp = [&](const std::string& prefix, Mlp& net) {
    for (std::size_t k = 0; k < net.layers().size(); ++k) {
      auto& l = net.layers()[k];
      out.push_back({prefix + "." + std::to_string(k) + ".weight", l.weight.rows(),
                     l.weight.cols(), l.weight.data()});
      out.push_back({prefix + "." + std::to_string(k) + ".bias", l.bias.size(), 1,
                     l.bias.data()});
    }
  };
  add_mlp("encoder", m.encoder);
  add_mlp("decoder", m.decoder);
  for (auto& cb : m.codebooks)
    out.push_back({"codebook." + std::to_string(cb.level), cb.vectors.rows(),
                   cb.vectors.cols(), cb.vectors.data()});
  return out;
}

std::string join_widths(const std::vector<int>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

std::vector<int> parse_widths(std::string_view s, const std::string& ctx) {
  std::vector<int> out;
  for (auto part : detail::split(s, ',')) {
    auto v = detail::parse_int<int>(part);
    if (!v) throw FormatError(ctx + ": bad width list");
    out.push_back(*v);
  }
  return out;
}

}  // namespace

void save_rqvae(const RqVaeModel& model, const RqVaeConfig& cfg,
                const std::filesystem::path& stem) {
  model.validate();
  RqVaeModel copy = model;
  auto arrays = named_arrays(copy);

  auto manifest_path = stem;
  manifest_path += ".manifest";
  auto bin_path = stem;
  bin_path += ".bin";

  auto bin = detail::open_output(bin_path, std::ios::out | std::ios::binary);
  bin.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  for (const auto& a : arrays)
    bin.write(reinterpret_cast<const char*>(a.data),
              static_cast<std::streamsize>(a.rows * a.cols * sizeof(double)));
  if (!bin) throw IoError("write failure on " + bin_path.string());

  auto man = detail::open_output(manifest_path);
  man << "rqvae-checkpoint v1\n";
  man << "encoder_widths " << join_widths(model.encoder.widths()) << '\n';
  man << "decoder_widths " << join_widths(model.decoder.widths()) << '\n';
  man << "code_len " << model.code_len() << '\n';
  man << "codebook_size " << model.codebook_size() << '\n';
  man << "config.latent_dim " << cfg.latent_dim << '\n';
  man << "config.hidden " << join_widths(cfg.hidden) << '\n';
  man << "config.beta " << detail::format_double(cfg.beta) << '\n';
  man << "config.epochs " << cfg.epochs << '\n';
  man << "config.batch_size " << cfg.batch_size << '\n';
  man << "config.learning_rate " << detail::format_double(cfg.learning_rate) << '\n';
  man << "config.weight_decay " << detail::format_double(cfg.weight_decay) << '\n';
  man << "config.kmeans_iters " << cfg.kmeans_iters << '\n';
  man << "config.reseed_dead_codewords " << (cfg.reseed_dead_codewords ? 1 : 0) << '\n';
  man << "seed " << cfg.seed << '\n';
  for (const auto& a : arrays)
    man << "array " << a.name << ' ' << a.rows << ' ' << a.cols << '\n';
  if (!man) throw IoError("write failure on " + manifest_path.string());
}

RqVaeModel load_rqvae(const std::filesystem::path& stem) {
  auto manifest_path = stem;
  manifest_path += ".manifest";
  auto bin_path = stem;
  bin_path += ".bin";

  auto man = detail::open_input(manifest_path);
  std::map<std::string, std::string> fields;
  std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> shapes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(man, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line_no == 1) {
      if (line != "rqvae-checkpoint v1")
        throw FormatError(detail::where(manifest_path, 1) + ": unknown checkpoint version");
      continue;
    }
    auto f = detail::split_ws(line);
    if (f.empty()) continue;
    if (f[0] == "array") {
      auto r = f.size() == 4 ? detail::parse_int<Eigen::Index>(f[2]) : std::nullopt;
      auto c = f.size() == 4 ? detail::parse_int<Eigen::Index>(f[3]) : std::nullopt;
      if (!r || !c) throw FormatError(detail::where(manifest_path, line_no) + ": bad array line");
      shapes.emplace_back(std::string(f[1]), *r, *c);
    } else if (f.size() == 2) {
      fields[std::string(f[0])] = std::string(f[1]);
    }
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end())
      throw FormatError(manifest_path.string() + ": missing '" + key + "'");
    return it->second;
  };
  auto enc_w = parse_widths(need("encoder_widths"), manifest_path.string());
  auto dec_w = parse_widths(need("decoder_widths"), manifest_path.string());
  auto code_len = detail::parse_int<int>(need("code_len"));
  auto cb_size = detail::parse_int<int>(need("codebook_size"));
  if (!code_len || !cb_size) throw FormatError(manifest_path.string() + ": bad code sizes");

  RqVaeModel model;
  std::mt19937_64 unused(0);
  model.encoder = Mlp(enc_w, unused);
  model.decoder = Mlp(dec_w, unused);
  for (int l = 1; l <= *code_len; ++l)
    model.codebooks.push_back({l, Eigen::MatrixXd(enc_w.back(), *cb_size)});

  auto arrays = named_arrays(model);
  if (arrays.size() != shapes.size())
    throw FormatError(manifest_path.string() + ": array count does not match widths");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const auto& [name, r, c] = shapes[i];
    if (name != arrays[i].name || r != arrays[i].rows || c != arrays[i].cols)
      throw FormatError(manifest_path.string() + ": array '" + name +
                        "' does not match the declared widths");
  }

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path.string() + " for reading");
  char magic[sizeof(kCheckpointMagic)];
  bin.read(magic, sizeof(magic));
  if (!bin || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw FormatError(bin_path.string() + ": bad magic");
  for (auto& a : arrays) {
    bin.read(reinterpret_cast<char*>(a.data),
             static_cast<std::streamsize>(a.rows * a.cols * sizeof(double)));
    if (!bin) throw FormatError(bin_path.string() + ": truncated at " + a.name);
  }
  if (bin.peek() != std::char_traits<char>::eof())
    throw FormatError(bin_path.string() + ": trailing bytes");
  model.validate();
  return model;
}

}  // namespace mirec
