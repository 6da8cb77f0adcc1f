#include "mirec/pipeline.h"

#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include <Eigen/Core>
#include <algorithm>
#include <iostream>
#include <set>

#include "json.hpp"
#include "mirec/errors.h"
#include "mirec/retrieval.h"
#include "mirec/vocab.h"
#include "text_util.h"

namespace mirec {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kVersion = "0.1.0";

constexpr Stage kOrder[] = {Stage::kPrepare,     Stage::kEmbedCollab, Stage::kBuildIndex,
                            Stage::kTrainScorers, Stage::kRetrieve,   Stage::kRerank,
                            Stage::kEvaluate,    Stage::kAnalyze};

const std::vector<std::pair<std::string, std::string>>& default_values() {
  static const std::vector<std::pair<std::string, std::string>> kDefaults = {
      {"run.seed", "42"},
      {"paths.interactions", ""},
      {"paths.semantic", ""},
      {"paths.output", "mirec_out"},
      {"paths.templates", ""},
      {"data.kcore", "5"},
      {"data.max_len", "20"},
      {"synthetic.users", "2000"},
      {"synthetic.items", "500"},
      {"synthetic.clusters", "20"},
      {"synthetic.min_length", "5"},
      {"synthetic.max_length", "15"},
      {"synthetic.p_successor", "0.6"},
      {"synthetic.p_same_cluster", "0.25"},
      {"synthetic.semantic_dim", "64"},
      {"synthetic.semantic_noise", "0.35"},
      {"collab.dim", "64"},
      {"collab.layers", "2"},
      {"collab.epochs", "40"},
      {"collab.learning_rate", "0.01"},
      {"collab.neg_samples", "1"},
      {"collab.batch_size", "1024"},
      {"collab.l2", "0.0001"},
      {"rqvae.latent_dim", "32"},
      {"rqvae.code_len", "3"},
      {"rqvae.codebook_size", "256"},
      {"rqvae.hidden", "256,128,64,64"},
      {"rqvae.beta", "0.25"},
      {"rqvae.epochs", "300"},
      {"rqvae.batch_size", "256"},
      {"rqvae.learning_rate", "0.001"},
      {"rqvae.weight_decay", "0.01"},
      {"rqvae.kmeans_iters", "100"},
      {"rqvae.reseed_dead", "true"},
      {"scorer.order", "8"},
      {"scorer.delta", "0.1"},
      {"scorer.lambda", "0.4"},
      {"templates.count", "10"},
      {"retrieval.k", "20"},
      {"retrieval.beam_width", "0"},
      {"rerank.alpha", "0.8"},
      {"rerank.tau", "10"},
      {"rerank.k_out", "20"},
      {"rerank.mode", "full"},
      {"eval.k", "5,10"},
  };
  return kDefaults;
}

// rqvae_ceid.* and rqvae_seid.* default to empty, meaning "use rqvae.*".
bool is_rqvae_override(const std::string& key) {
  return key.starts_with("rqvae_ceid.") || key.starts_with("rqvae_seid.");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent per-component seed derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : salt) h = (h ^ c) * 0x100000001b3ULL;
  return splitmix64(seed ^ splitmix64(h));
}

class Reader {
 public:
  explicit Reader(const PipelineConfig& cfg) : cfg_(cfg) {}

  const std::string& str(const std::string& key) const { return cfg_.get(key); }

  template <typename Int = int>
  Int integer(const std::string& key) const {
    auto v = detail::parse_int<Int>(detail::trim(str(key)));
    if (!v) throw ConfigError(key + ": expected an integer, got '" + str(key) + "'");
    return *v;
  }
  double real(const std::string& key) const {
    auto v = detail::parse_double(detail::trim(str(key)));
    if (!v || !std::isfinite(*v))
      throw ConfigError(key + ": expected a finite number, got '" + str(key) + "'");
    return *v;
  }
  bool boolean(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
  }
  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    for (auto part : detail::split(str(key), ',')) {
      auto v = detail::parse_int<int>(detail::trim(part));
      if (!v) throw ConfigError(key + ": expected comma-separated integers");
      out.push_back(*v);
    }
    return out;
  }

  RqVaeConfig rqvae(std::string_view type) const {
    auto key = [&](const std::string& name) {
      std::string specific = "rqvae_" + std::string(type) + "." + name;
      return cfg_.get(specific).empty() ? "rqvae." + name : specific;
    };
    RqVaeConfig c;
    c.latent_dim = integer(key("latent_dim"));
    c.code_len = integer(key("code_len"));
    c.codebook_size = integer(key("codebook_size"));
    c.hidden = int_list(key("hidden"));
    c.beta = real(key("beta"));
    c.epochs = integer(key("epochs"));
    c.batch_size = integer(key("batch_size"));
    c.learning_rate = real(key("learning_rate"));
    c.weight_decay = real(key("weight_decay"));
    c.kmeans_iters = integer(key("kmeans_iters"));
    c.reseed_dead_codewords = boolean(key("reseed_dead"));
    return c;
  }

 private:
  const PipelineConfig& cfg_;
};

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError(what + ": no such file " + p.string());
}

}  // namespace

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::kPrepare: return "prepare";
    case Stage::kEmbedCollab: return "embed-collab";
    case Stage::kBuildIndex: return "build-index";
    case Stage::kTrainScorers: return "train-scorers";
    case Stage::kRetrieve: return "retrieve";
    case Stage::kRerank: return "rerank";
    case Stage::kEvaluate: return "evaluate";
    case Stage::kAnalyze: return "analyze";
    case Stage::kAll: return "all";
  }
  return "all";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : kOrder)
    if (to_string(st) == s) return st;
  if (s == "all") return Stage::kAll;
  throw InvalidArgument("unknown stage '" + std::string(s) + "'");
}

PipelineConfig::PipelineConfig() {
  for (const auto& [k, v] : default_values()) values_[k] = v;
  for (const char* type : {"ceid", "seid"})
    for (const auto& [k, v] : default_values())
      if (k.starts_with("rqvae.")) values_["rqvae_" + std::string(type) + k.substr(5)] = "";
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  if (value.empty() && !key.starts_with("paths.") && !is_rqvae_override(key))
    throw ConfigError(key + ": empty value");
  it->second = value;
}

void PipelineConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set(std::string(detail::trim(std::string_view(assignment).substr(0, eq))),
      std::string(detail::trim(std::string_view(assignment).substr(eq + 1))));
}

const std::string& PipelineConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  auto in = detail::open_input(path);
  PipelineConfig cfg;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    if (body.find('=') == std::string_view::npos)
      throw ConfigError(detail::where(path, n) + ": expected 'section.key = value'");
    try {
      cfg.apply_override(std::string(body));
    } catch (const ConfigError& e) {
      throw ConfigError(detail::where(path, n) + ": " + e.what());
    }
  }
  return cfg;
}

PipelineSettings resolve_settings(const PipelineConfig& cfg, Stage stage, bool synthetic) {
  Reader r(cfg);
  PipelineSettings s;
  s.interactions = r.str("paths.interactions");
  s.semantic = r.str("paths.semantic");
  s.output = r.str("paths.output");
  s.templates = r.str("paths.templates");
  if (s.output.empty()) throw ConfigError("paths.output must be set");
  s.seed = r.integer<std::uint64_t>("run.seed");
  s.kcore = r.integer("data.kcore");
  s.max_len = r.integer("data.max_len");
  if (s.kcore < 0) throw ConfigError("data.kcore must be >= 0");
  if (s.max_len < 1) throw ConfigError("data.max_len must be >= 1");

  auto& syn = s.synthetic;
  syn.users = r.integer("synthetic.users");
  syn.items = r.integer("synthetic.items");
  syn.clusters = r.integer("synthetic.clusters");
  syn.min_length = r.integer("synthetic.min_length");
  syn.max_length = r.integer("synthetic.max_length");
  syn.p_successor = r.real("synthetic.p_successor");
  syn.p_same_cluster = r.real("synthetic.p_same_cluster");
  syn.semantic_dim = r.integer("synthetic.semantic_dim");
  syn.semantic_noise = r.real("synthetic.semantic_noise");
  syn.seed = derive_seed(s.seed, "synthetic");

  auto& c = s.collab;
  c.dim = r.integer("collab.dim");
  c.layers = r.integer("collab.layers");
  c.epochs = r.integer("collab.epochs");
  c.learning_rate = r.real("collab.learning_rate");
  c.neg_samples_per_positive = r.integer("collab.neg_samples");
  c.batch_size = r.integer("collab.batch_size");
  c.l2 = r.real("collab.l2");
  c.seed = derive_seed(s.seed, "collab");
  c.validate();

  s.rqvae_ceid = r.rqvae("ceid");
  s.rqvae_ceid.seed = derive_seed(s.seed, "rqvae-ceid");
  s.rqvae_ceid.validate();
  s.rqvae_seid = r.rqvae("seid");
  s.rqvae_seid.seed = derive_seed(s.seed, "rqvae-seid");
  s.rqvae_seid.validate();

  s.scorer.order = r.integer("scorer.order");
  s.scorer.delta = r.real("scorer.delta");
  s.scorer.lambda = r.real("scorer.lambda");
  s.scorer.seed = derive_seed(s.seed, "scorer");
  s.scorer.validate();

  s.template_count = r.integer("templates.count");
  s.k_retrieve = r.integer("retrieval.k");
  s.beam_width = r.integer("retrieval.beam_width");
  if (s.template_count < 1) throw ConfigError("templates.count must be >= 1");
  if (s.k_retrieve < 1) throw ConfigError("retrieval.k must be >= 1");
  if (s.beam_width < 0) throw ConfigError("retrieval.beam_width must be >= 0");

  s.rerank.alpha = r.real("rerank.alpha");
  s.rerank.tau = r.real("rerank.tau");
  s.rerank.k_in = s.k_retrieve;
  s.rerank.k_out = r.integer("rerank.k_out");
  try {
    s.rerank.mode = parse_fusion_mode(r.str("rerank.mode"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("rerank.mode: ") + e.what());
  }
  s.rerank.validate();

  s.k_report = r.int_list("eval.k");
  for (int k : s.k_report) {
    if (k < 1) throw ConfigError("eval.k values must be >= 1");
    if (k > s.k_retrieve) throw ConfigError("eval.k values must not exceed retrieval.k");
    if (k > s.rerank.k_out) throw ConfigError("eval.k values must not exceed rerank.k_out");
  }

  const bool reads_raw = stage == Stage::kPrepare || stage == Stage::kAll;
  if (reads_raw && !synthetic) {
    if (s.interactions.empty())
      throw ConfigError("paths.interactions must be set (or use --synthetic)");
    if (s.semantic.empty()) throw ConfigError("paths.semantic must be set (or use --synthetic)");
    require_file(s.interactions, "paths.interactions");
    require_file(s.semantic, "paths.semantic");
  }
  std::size_t available = default_templates().size();
  if (!s.templates.empty()) {
    require_file(s.templates, "paths.templates");
    available = load_templates(s.templates).size();
  }
  if (static_cast<std::size_t>(s.template_count) > available)
    throw ConfigError("templates.count exceeds the " + std::to_string(available) +
                      " available templates");
  return s;
}

namespace artifacts {
fs::path split_dir(const fs::path& out) { return out / "data" / "split"; }
fs::path semantic(const fs::path& out) { return out / "data" / "semantic.emb"; }
fs::path collab(const fs::path& out) { return out / "embeddings" / "collab.emb"; }
fs::path codes(const fs::path& out, IndexType t) {
  return out / "index" / ("codes_" + std::string(to_string(t)) + ".tsv");
}
fs::path rqvae_stem(const fs::path& out, IndexType t) {
  return out / "index" / ("rqvae_" + std::string(to_string(t)));
}
fs::path vocab(const fs::path& out) { return out / "index" / "vocab.tsv"; }
fs::path scorer(const fs::path& out, IndexType t, int template_id) {
  return out / "scorers" /
         (std::string(to_string(t)) + "_t" + std::to_string(template_id) + ".txt");
}
fs::path ranked(const fs::path& out, IndexType t) {
  return out / "retrieval" / (std::string(to_string(t)) + ".jsonl");
}
fs::path fused(const fs::path& out) { return out / "rerank" / "fused.jsonl"; }
fs::path breakdown(const fs::path& out) { return out / "rerank" / "breakdown.tsv"; }
fs::path metrics(const fs::path& out) { return out / "metrics.csv"; }
fs::path metrics_by_list(const fs::path& out) { return out / "metrics_by_list.csv"; }
fs::path per_matrix(const fs::path& out, IndexType t) {
  return out / "analysis" / ("per_matrix_" + std::string(to_string(t)) + ".csv");
}
fs::path chr(const fs::path& out) { return out / "analysis" / "chr.csv"; }
fs::path ablation(const fs::path& out) { return out / "analysis" / "ablation.csv"; }
fs::path template_sweep(const fs::path& out) {
  return out / "analysis" / "template_sweep.csv";
}
fs::path manifest(const fs::path& out, Stage s) {
  return out / "manifests" / (std::string(to_string(s)) + ".json");
}
}  // namespace artifacts

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                              &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest init failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex += kHex[md[i] >> 4];
    hex += kHex[md[i] & 15];
  }
  return hex;
}

std::vector<MetricRow> accuracy_rows(std::span<const RankedList> lists, const TestItems& test,
                                     const std::vector<int>& ks) {
  std::vector<MetricRow> rows;
  for (int k : ks) {
    const double hit = hit_at_k(lists, test, k).value;
    const double ndcg = ndcg_at_k(lists, test, k).value;
    if (ndcg > hit) throw Error("NDCG@" + std::to_string(k) + " exceeds Hit@" + std::to_string(k));
    rows.push_back({"hit", k, hit});
    rows.push_back({"ndcg", k, ndcg});
  }
  return rows;
}

std::map<std::string, std::vector<RankedList>> lists_by_user(
    const std::vector<RankedList>& lists, int max_template) {
  std::map<std::string, std::vector<RankedList>> out;
  for (const auto& l : lists)
    if (l.template_id >= 1 && l.template_id <= max_template) out[l.user].push_back(l);
  return out;
}

std::vector<FusionResult> fuse_all(const std::map<std::string, std::vector<RankedList>>& ceid,
                                   const std::map<std::string, std::vector<RankedList>>& seid,
                                   const RerankOptions& opts) {
  std::set<std::string> users;
  if (opts.mode != FusionMode::kSeidOnly)
    for (const auto& [u, l] : ceid) users.insert(u);
  if (opts.mode != FusionMode::kCeidOnly)
    for (const auto& [u, l] : seid) users.insert(u);
  static const std::vector<RankedList> kNone;
  std::vector<FusionResult> out;
  for (const auto& u : users) {
    auto c = ceid.find(u);
    auto s = seid.find(u);
    out.push_back(fuse_and_rank(u, c == ceid.end() ? kNone : c->second,
                                s == seid.end() ? kNone : s->second, opts));
  }
  return out;
}

namespace {

class StageRun {
 public:
  StageRun(Stage stage, const PipelineConfig& cfg, const PipelineSettings& s,
           const RunOptions& opts)
      : stage_(stage), cfg_(cfg), s_(s), opts_(opts) {}

  const fs::path& out() const { return s_.output; }

  // Declares an input; a missing file names the stage that produces it.
  void input(const fs::path& p, Stage producer) {
    if (!fs::is_regular_file(p))
      throw MissingArtifactError("stage " + std::string(to_string(stage_)) + ": missing " +
                                     p.string() + "; run '" +
                                     std::string(to_string(producer)) + "' first",
                                 std::string(to_string(producer)));
    inputs_.push_back(p);
  }
  void external_input(const fs::path& p) { inputs_.push_back(p); }
  void output(const fs::path& p) { outputs_.push_back(p); }

  void log(const std::string& msg) const {
    if (opts_.verbose) std::cerr << "[" << to_string(stage_) << "] " << msg << '\n';
  }

  void write_manifest(const nlohmann::ordered_json& extra = {}) const {
    auto rel = [&](const fs::path& p) {
      auto r = p.lexically_relative(s_.output);
      return (r.empty() || r.begin()->string() == "..") ? p.string() : r.generic_string();
    };
    nlohmann::ordered_json j;
    j["stage"] = std::string(to_string(stage_));
    j["seed"] = s_.seed;
    j["versions"] = {{"mirec", std::string(kVersion)},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"openssl", OPENSSL_VERSION_TEXT},
                     {"compiler", __VERSION__}};
    nlohmann::ordered_json config;
    for (const auto& [k, v] : cfg_.values()) config[k] = v;
    j["config"] = std::move(config);
    if (!extra.is_null()) j["details"] = extra;
    auto files = [&](const std::vector<fs::path>& ps) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& p : ps) arr.push_back({{"path", rel(p)}, {"sha256", sha256_file(p)}});
      return arr;
    };
    j["inputs"] = files(inputs_);
    j["outputs"] = files(outputs_);
    auto f = detail::open_output(artifacts::manifest(s_.output, stage_));
    f << j.dump(2) << '\n';
    if (!f) throw IoError("write failure on manifest for " + std::string(to_string(stage_)));
  }

 private:
  Stage stage_;
  const PipelineConfig& cfg_;
  const PipelineSettings& s_;
  const RunOptions& opts_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

constexpr IndexType kTypes[] = {IndexType::kCeid, IndexType::kSeid};

std::vector<fs::path> split_files(const fs::path& out) {
  const auto d = artifacts::split_dir(out);
  return {d / "train.tsv", d / "valid.tsv", d / "test.tsv", d / "items.tsv"};
}

const RqVaeConfig& rqvae_config(const PipelineSettings& s, IndexType t) {
  return t == IndexType::kCeid ? s.rqvae_ceid : s.rqvae_seid;
}

SplitDataset read_split(StageRun& run) {
  for (const auto& p : split_files(run.out())) run.input(p, Stage::kPrepare);
  return load_split(artifacts::split_dir(run.out()));
}

void prepare(StageRun& run, const PipelineSettings& s, const RunOptions& opts) {
  InteractionDataset ds;
  EmbeddingMatrix semantic;
  if (opts.synthetic) {
    auto data = generate_synthetic(s.synthetic);
    ds = std::move(data.interactions);
    semantic = std::move(data.semantic);
    const auto raw = run.out() / "data" / "interactions.tsv";
    save_interactions(ds, raw);
    run.output(raw);
    run.log("generated " + std::to_string(ds.users.size()) + " users, " +
            std::to_string(ds.items.size()) + " items");
  } else {
    run.external_input(s.interactions);
    run.external_input(s.semantic);
    auto loaded = load_interactions(s.interactions);
    if (loaded.malformed_lines > 0)
      std::cerr << "warning: skipped " << loaded.malformed_lines << " malformed lines in "
                << s.interactions.string() << '\n';
    ds = std::move(loaded.dataset);
    semantic = load_embedding_matrix(s.semantic, SourceTag::kSemantic);
  }
  if (s.kcore > 0) ds = kcore_filter(ds, s.kcore);
  auto split = leave_one_out_split(ds, s.max_len);
  if (split.test.empty()) throw EmptyDataError("prepare: no user has three interactions");

  Eigen::MatrixXd rows(static_cast<Eigen::Index>(split.items.size()), semantic.dim());
  for (std::size_t i = 0; i < split.items.size(); ++i) {
    if (!semantic.contains(split.items[i]))
      throw InvalidArgument("prepare: no semantic embedding for item " + split.items[i]);
    rows.row(static_cast<Eigen::Index>(i)) = semantic.row(split.items[i]).transpose();
  }
  save_split(split, artifacts::split_dir(run.out()));
  save_embedding_matrix(EmbeddingMatrix(split.items, std::move(rows), SourceTag::kSemantic),
                        artifacts::semantic(run.out()));
  for (const auto& p : split_files(run.out())) run.output(p);
  run.output(artifacts::semantic(run.out()));
  run.write_manifest({{"users", split.test.size()},
                      {"items", split.items.size()},
                      {"excluded_users", split.excluded_users.size()}});
}

void embed_collab(StageRun& run, const PipelineSettings& s) {
  const auto split = read_split(run);
  CollabTrainingLog log;
  auto emb = train_collaborative_embeddings(split, s.collab, &log);
  save_embedding_matrix(emb, artifacts::collab(run.out()));
  run.output(artifacts::collab(run.out()));
  if (!log.epoch_loss.empty())
    run.log("final ranking loss " + detail::format_double(log.epoch_loss.back()));
  run.write_manifest({{"epoch_loss", log.epoch_loss}});
}

void build_index(StageRun& run, const PipelineSettings& s) {
  run.input(artifacts::collab(run.out()), Stage::kEmbedCollab);
  run.input(artifacts::semantic(run.out()), Stage::kPrepare);
  std::vector<ItemCodeTable> tables;
  nlohmann::ordered_json details;
  for (IndexType t : kTypes) {
    const auto emb =
        t == IndexType::kCeid
            ? load_embedding_matrix(artifacts::collab(run.out()), SourceTag::kCollaborative)
            : load_embedding_matrix(artifacts::semantic(run.out()), SourceTag::kSemantic);
    const auto& cfg = rqvae_config(s, t);
    TrainingLog log;
    const auto model = train_rqvae(emb, cfg, &log);
    const auto stem = artifacts::rqvae_stem(run.out(), t);
    save_rqvae(model, cfg, stem);
    auto table = resolve_collisions(assign_codes(model, emb), t, cfg.codebook_size);
    save_code_table(table, artifacts::codes(run.out(), t));
    run.output(fs::path(stem.string() + ".bin"));
    run.output(fs::path(stem.string() + ".manifest"));
    run.output(artifacts::codes(run.out(), t));

    std::set<std::vector<int>> prefixes;
    std::size_t colliding = 0;
    for (const auto& [item, codes] : table.codes) {
      prefixes.insert(std::vector<int>(codes.begin(), codes.end() - 1));
      colliding += codes.back() != 0;
    }
    details[std::string(to_string(t))] = {{"rec_loss_first", log.rec_loss.front()},
                                          {"rec_loss_last", log.rec_loss.back()},
                                          {"distinct_prefixes", prefixes.size()},
                                          {"items_in_collisions", colliding}};
    run.log(std::string(to_string(t)) + ": rec loss " +
            detail::format_double(log.rec_loss.front()) + " -> " +
            detail::format_double(log.rec_loss.back()) + ", " +
            std::to_string(prefixes.size()) + " distinct prefixes");
    tables.push_back(std::move(table));
  }
  save_vocabulary(build_vocabulary(tables), artifacts::vocab(run.out()));
  run.output(artifacts::vocab(run.out()));
  run.write_manifest(details);
}

struct IndexArtifacts {
  TokenVocab vocab;
  ItemCodeTable tables[2];
};

IndexArtifacts read_index(StageRun& run, const PipelineSettings& s) {
  IndexArtifacts a;
  run.input(artifacts::vocab(run.out()), Stage::kBuildIndex);
  a.vocab = load_vocabulary(artifacts::vocab(run.out()));
  for (IndexType t : kTypes) {
    run.input(artifacts::codes(run.out(), t), Stage::kBuildIndex);
    a.tables[static_cast<int>(t)] = load_code_table(artifacts::codes(run.out(), t), t,
                                                    rqvae_config(s, t).codebook_size);
  }
  return a;
}

void train_scorers(StageRun& run, const PipelineSettings& s) {
  const auto split = read_split(run);
  const auto index = read_index(run, s);
  for (IndexType t : kTypes) {
    const auto& table = index.tables[static_cast<int>(t)];
    std::vector<std::vector<TokenId>> streams;
    for (const auto& [user, items] : split.train) {
      std::vector<TokenId> stream;
      for (const auto& item : items) {
        auto toks = item_tokens(table, index.vocab, item);
        stream.insert(stream.end(), toks.begin(), toks.end());
      }
      streams.push_back(std::move(stream));
    }
    const auto support = index.vocab.code_tokens(t);
    for (int tpl = 1; tpl <= s.template_count; ++tpl) {
      auto scorer = train_markov_scorer(streams, t, tpl, support, s.scorer);
      save_markov_scorer(scorer, index.vocab, artifacts::scorer(run.out(), t, tpl));
      run.output(artifacts::scorer(run.out(), t, tpl));
    }
    run.log(std::string(to_string(t)) + ": trained " + std::to_string(s.template_count) +
            " scorers");
  }
  run.write_manifest();
}

void retrieve(StageRun& run, const PipelineSettings& s) {
  const auto split = read_split(run);
  const auto index = read_index(run, s);
  std::vector<PromptTemplate> templates = default_templates();
  if (!s.templates.empty()) {
    run.external_input(s.templates);
    templates = load_templates(s.templates);
  }
  for (IndexType t : kTypes) {
    const auto& table = index.tables[static_cast<int>(t)];
    const auto trie = PrefixTrie::build(table, index.vocab);
    std::vector<MarkovScorer> scorers;
    for (int tpl = 1; tpl <= s.template_count; ++tpl) {
      run.input(artifacts::scorer(run.out(), t, tpl), Stage::kTrainScorers);
      scorers.push_back(load_markov_scorer(artifacts::scorer(run.out(), t, tpl), index.vocab));
    }
    std::vector<RankedList> lists;
    for (const auto& [user, item] : split.test) {
      const auto history = test_history(split, user, s.max_len);
      for (int tpl = 1; tpl <= s.template_count; ++tpl) {
        const auto prompt = render_prompt(user, history, table, index.vocab, tpl, templates);
        auto list = beam_search_constrained(scorers[tpl - 1], trie, prompt.tokens,
                                            s.k_retrieve, s.beam_width);
        list.user = user;
        list.template_id = tpl;
        lists.push_back(std::move(list));
      }
    }
    write_ranked_lists(lists, artifacts::ranked(run.out(), t));
    run.output(artifacts::ranked(run.out(), t));
    run.log(std::string(to_string(t)) + ": " + std::to_string(lists.size()) + " ranked lists");
  }
  run.write_manifest();
}

struct AllLists {
  std::vector<RankedList> by_type[2];
};

AllLists read_ranked(StageRun& run) {
  AllLists a;
  for (IndexType t : kTypes) {
    run.input(artifacts::ranked(run.out(), t), Stage::kRetrieve);
    a.by_type[static_cast<int>(t)] = read_ranked_lists(artifacts::ranked(run.out(), t));
  }
  return a;
}

std::vector<RankedList> fused_lists(const std::vector<FusionResult>& results) {
  std::vector<RankedList> out;
  out.reserve(results.size());
  for (const auto& r : results) out.push_back(r.list);
  return out;
}

void rerank(StageRun& run, const PipelineSettings& s) {
  const auto lists = read_ranked(run);
  const auto results = fuse_all(lists_by_user(lists.by_type[0], s.template_count),
                                lists_by_user(lists.by_type[1], s.template_count), s.rerank);
  write_ranked_lists(fused_lists(results), artifacts::fused(run.out()));
  write_score_breakdown(results, artifacts::breakdown(run.out()));
  run.output(artifacts::fused(run.out()));
  run.output(artifacts::breakdown(run.out()));
  run.write_manifest({{"mode", std::string(to_string(s.rerank.mode))},
                      {"effective_alpha", s.rerank.effective_alpha()},
                      {"tau", s.rerank.tau}});
}

void write_rows_csv(const fs::path& path, const std::string& header,
                    const std::vector<std::pair<std::string, std::vector<MetricRow>>>& groups) {
  auto f = detail::open_output(path);
  f << header << ",metric,k,value\n";
  for (const auto& [prefix, rows] : groups)
    for (const auto& r : rows)
      f << prefix << ',' << r.metric << ',' << r.k << ',' << detail::format_double(r.value)
        << '\n';
  if (!f) throw IoError("write failure on " + path.string());
}

void evaluate(StageRun& run, const PipelineSettings& s) {
  const auto split = read_split(run);
  run.input(artifacts::fused(run.out()), Stage::kRerank);
  const auto fused = read_ranked_lists(artifacts::fused(run.out()));
  const auto rows = accuracy_rows(fused, split.test, s.k_report);
  write_metrics_csv(rows, artifacts::metrics(run.out()));
  run.output(artifacts::metrics(run.out()));

  const auto lists = read_ranked(run);
  std::vector<std::pair<std::string, std::vector<MetricRow>>> groups;
  for (IndexType t : kTypes) {
    const auto& all = lists.by_type[static_cast<int>(t)];
    for (int tpl = 1; tpl <= s.template_count; ++tpl) {
      std::vector<RankedList> one;
      for (const auto& l : all)
        if (l.template_id == tpl) one.push_back(l);
      groups.emplace_back(std::string(to_string(t)) + "," + std::to_string(tpl),
                          accuracy_rows(one, split.test, s.k_report));
    }
  }
  write_rows_csv(artifacts::metrics_by_list(run.out()), "index_type,template", groups);
  run.output(artifacts::metrics_by_list(run.out()));
  for (const auto& r : rows)
    run.log(r.metric + "@" + std::to_string(r.k) + " = " + detail::format_double(r.value));
  run.write_manifest();
}

void analyze(StageRun& run, const PipelineSettings& s) {
  const auto split = read_split(run);
  const auto lists = read_ranked(run);
  const int k_hit = *std::max_element(s.k_report.begin(), s.k_report.end());

  std::vector<HitSet> sets[2];
  for (IndexType t : kTypes) {
    const auto& all = lists.by_type[static_cast<int>(t)];
    for (int tpl = 1; tpl <= s.template_count; ++tpl) {
      std::vector<RankedList> one;
      for (const auto& l : all)
        if (l.template_id == tpl) one.push_back(l);
      sets[static_cast<int>(t)].push_back(hit_set(one, split.test, k_hit, tpl));
    }
    if (s.template_count >= 2) {
      write_per_matrix_csv(per_matrix(sets[static_cast<int>(t)]),
                           artifacts::per_matrix(run.out(), t));
      run.output(artifacts::per_matrix(run.out(), t));
    }
  }

  {
    auto f = detail::open_output(artifacts::chr(run.out()));
    f << "from,to,k,value\n";
    for (int a = 0; a < 2; ++a) {
      const int b = 1 - a;
      f << to_string(kTypes[a]) << ',' << to_string(kTypes[b]) << ',' << k_hit << ',';
      try {
        f << detail::format_double(chr_avg(sets[a], sets[b]));
      } catch (const InvalidArgument&) {
        // No hits on the other side: the ratio is undefined, leave it blank.
      }
      f << '\n';
    }
    if (!f) throw IoError("write failure on chr.csv");
  }
  run.output(artifacts::chr(run.out()));

  const auto ceid = lists_by_user(lists.by_type[0], s.template_count);
  const auto seid = lists_by_user(lists.by_type[1], s.template_count);
  std::vector<std::pair<std::string, std::vector<MetricRow>>> ablation;
  for (FusionMode m : {FusionMode::kFull, FusionMode::kCeidOnly, FusionMode::kSeidOnly,
                       FusionMode::kConfOnly, FusionMode::kConsOnly}) {
    RerankOptions opts = s.rerank;
    opts.mode = m;
    ablation.emplace_back(std::string(to_string(m)),
                          accuracy_rows(fused_lists(fuse_all(ceid, seid, opts)), split.test,
                                        s.k_report));
  }
  write_rows_csv(artifacts::ablation(run.out()), "mode", ablation);
  run.output(artifacts::ablation(run.out()));

  std::vector<std::pair<std::string, std::vector<MetricRow>>> sweep;
  RerankOptions full = s.rerank;
  full.mode = FusionMode::kFull;
  for (int n = 2; n <= s.template_count; ++n) {
    sweep.emplace_back(std::to_string(n),
                       accuracy_rows(fused_lists(fuse_all(lists_by_user(lists.by_type[0], n),
                                                          lists_by_user(lists.by_type[1], n),
                                                          full)),
                                     split.test, s.k_report));
  }
  write_rows_csv(artifacts::template_sweep(run.out()), "templates", sweep);
  run.output(artifacts::template_sweep(run.out()));
  run.write_manifest();
}

void run_one(Stage stage, const PipelineConfig& cfg, const PipelineSettings& s,
             const RunOptions& opts) {
  StageRun run(stage, cfg, s, opts);
  switch (stage) {
    case Stage::kPrepare: prepare(run, s, opts); break;
    case Stage::kEmbedCollab: embed_collab(run, s); break;
    case Stage::kBuildIndex: build_index(run, s); break;
    case Stage::kTrainScorers: train_scorers(run, s); break;
    case Stage::kRetrieve: retrieve(run, s); break;
    case Stage::kRerank: rerank(run, s); break;
    case Stage::kEvaluate: evaluate(run, s); break;
    case Stage::kAnalyze: analyze(run, s); break;
    case Stage::kAll: break;
  }
}

}  // namespace

void run_stage(Stage stage, const PipelineConfig& cfg, const RunOptions& opts) {
  const auto s = resolve_settings(cfg, stage, opts.synthetic);
  if (stage != Stage::kAll) {
    run_one(stage, cfg, s, opts);
    return;
  }
  for (Stage st : kOrder) run_one(st, cfg, s, opts);
}

}  // namespace mirec
