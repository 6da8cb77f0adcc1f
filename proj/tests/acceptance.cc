// Runs the ten acceptance criteria and prints one PASS/FAIL line for each.
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mirec/errors.h"
#include "mirec/metrics.h"
#include "mirec/pipeline.h"
#include "mirec/rerank.h"
#include "mirec/retrieval.h"
#include "mirec/rqvae.h"
#include "mirec/scorer.h"
#include "mirec/vocab.h"

namespace fs = std::filesystem;
using namespace mirec;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Collects failed expectations without stopping the criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ |= !ok;
  }
  bool ok() const { return !failed_; }
  std::string summary() const {
    std::string s;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + f;
    return s;
  }

 private:
  bool failed_ = false;
  std::vector<std::string> failures_;
};

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("mirec_accept_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Eigen::MatrixXd gaussian_clusters(int n, int dim, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> centre(0.0, 3.0);
  std::normal_distribution<double> noise(0.0, 0.4);
  Eigen::MatrixXd c(dim, k);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = centre(rng);
  Eigen::MatrixXd x(dim, n);
  for (int j = 0; j < n; ++j)
    for (int d = 0; d < dim; ++d) x(d, j) = c(d, static_cast<int>(rng() % k)) + noise(rng);
  return x;
}

// ---------------------------------------------------------------------------

std::string quantization_oracle(Check& c) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<Codebook> books;
    for (int l = 1; l <= 3; ++l) {
      Eigen::MatrixXd v(16, 8);
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = g(rng) / l;
      books.push_back({l, v});
    }
    Eigen::VectorXd z(16);
    for (auto& v : z) v = g(rng);

    const auto got = quantize_residual(z, books);
    Eigen::VectorXd r = z;
    for (int l = 0; l < 3; ++l) {
      int best = 0;
      double best_d = INFINITY;
      for (int w = 0; w < 8; ++w) {
        const double d = (r - books[l].vectors.col(w)).squaredNorm();
        if (d < best_d) best_d = d, best = w;
      }
      c.expect(got.codes[l] == best, "instance " + std::to_string(inst) + " level " +
                                         std::to_string(l + 1) + " code mismatch");
      r -= books[l].vectors.col(best);
    }
    const double tele = (z - got.z_star - got.residuals.back()).cwiseAbs().maxCoeff();
    worst = std::max(worst, tele);
  }
  c.expect(worst <= 1e-12, "telescoping error " + fmt(worst));
  const double secs = seconds_since(t0);
  c.expect(secs < 5.0, "runtime " + fmt(secs) + "s");
  return "100 instances, max |z - z* - r_L| = " + fmt(worst) + ", " + fmt(secs) + "s";
}

std::string gradient_check_criterion(Check& c) {
  const auto t0 = Clock::now();
  RqVaeConfig cfg;
  cfg.latent_dim = 6;
  cfg.code_len = 3;
  cfg.codebook_size = 4;
  cfg.hidden = {14, 12, 10, 8};
  cfg.epochs = 0;
  cfg.batch_size = 8;
  cfg.kmeans_iters = 10;
  cfg.seed = 3;
  const Eigen::MatrixXd x = gaussian_clusters(8, 7, 3, 5);
  const auto model = initialize_rqvae(x, cfg);
  c.expect(model.encoder.num_layers() == 5 && model.decoder.num_layers() == 5,
           "networks are not 5 layers");
  const double err = gradient_check(model, x.leftCols(4), 1e-5);
  c.expect(err < 1e-3, "max relative error " + fmt(err));
  const double bad = gradient_check(model, x.leftCols(4), 1e-5, [](RqVaeGradients& gr) {
    gr.encoder[1].weight(0, 0) += 0.5;
  });
  c.expect(bad >= 1e-3, "corrupted gradient passed with error " + fmt(bad));
  const double secs = seconds_since(t0);
  c.expect(secs < 30.0, "runtime " + fmt(secs) + "s");
  return "max rel err " + fmt(err) + ", corrupted " + fmt(bad) + ", " + fmt(secs) + "s";
}

std::string rqvae_training(Check& c) {
  const auto t0 = Clock::now();
  const Eigen::MatrixXd x = gaussian_clusters(1000, 32, 8, 77);
  RqVaeConfig cfg;
  cfg.epochs = 200;
  cfg.seed = 11;
  TrainingLog log;
  const auto m1 = train_rqvae(x, cfg, &log);
  const double first = log.rec_loss.front(), last = log.rec_loss.back();
  c.expect(last < 0.1 * first, "final " + fmt(last) + " vs epoch-0 " + fmt(first));
  const auto m2 = train_rqvae(x, cfg);
  c.expect(m1 == m2, "two same-seed runs differ");
  const double secs = seconds_since(t0);
  c.expect(secs < 120.0, "runtime " + fmt(secs) + "s");
  // Loss of the best constant reconstruction, for scale.
  const double variance = (x.colwise() - x.rowwise().mean()).colwise().squaredNorm().mean();
  return "rec loss " + fmt(first) + " -> " + fmt(last) + " (" + fmt(last / first) +
         " of epoch 0, " + fmt(last / variance) + " of data variance), two runs " +
         fmt(secs) + "s";
}

std::string collision_resolution(Check& c) {
  // Two 2-way groups, one 3-way group, singletons. Ids are inserted in an
  // order unrelated to their sort order.
  const RawCodes raw = {
      {"q", {1, 2, 3}}, {"b", {1, 2, 3}},                     // 2-way
      {"z", {0, 0, 1}}, {"a", {0, 0, 1}}, {"m", {0, 0, 1}},  // 3-way
      {"k", {4, 4, 4}}, {"c", {4, 4, 4}},                     // 2-way
      {"s1", {1, 2, 4}}, {"s2", {0, 0, 2}}, {"s3", {7, 7, 7}},
  };
  const auto t = resolve_collisions(raw, IndexType::kCeid, 8);
  std::map<std::vector<int>, std::vector<std::string>> groups;
  for (const auto& [item, code] : raw) groups[code].push_back(item);

  std::set<std::vector<int>> tuples;
  for (const auto& [item, code] : t.codes) {
    c.expect(tuples.insert(code).second, "duplicate tuple for " + item);
    c.expect(std::equal(code.begin(), code.end() - 1, raw.at(item).begin()),
             "prefix changed for " + item);
  }
  c.expect(t.codes.size() == raw.size(), "item count changed");
  int collided = 0;
  for (auto& [prefix, items] : groups) {
    std::sort(items.begin(), items.end());
    for (std::size_t i = 0; i < items.size(); ++i) {
      const int want = items.size() == 1 ? 0 : static_cast<int>(i) + 1;
      c.expect(t.codes.at(items[i]).back() == want, "disambiguator of " + items[i]);
    }
    collided += items.size() > 1 ? static_cast<int>(items.size()) : 0;
  }
  return std::to_string(raw.size()) + " items, " + std::to_string(collided) +
         " in collision groups";
}

std::string beam_oracle(Check& c) {
  std::mt19937_64 rng(2024);
  int instances = 0, invalid = 0, default_equal = 0;
  for (; instances < 120; ++instances) {
    const int w = 2 + static_cast<int>(rng() % 7);
    const int items = std::min(2 + static_cast<int>(rng() % 49), w * w * w * w);
    ItemCodeTable t;
    t.index_type = IndexType::kCeid;
    t.code_len = 3;
    t.codebook_size = w;
    std::set<std::vector<int>> used;
    while (static_cast<int>(t.codes.size()) < items) {
      std::vector<int> code(4);
      for (auto& v : code) v = static_cast<int>(rng() % w);
      if (used.insert(code).second) t.codes["it" + std::to_string(rng() % 1000000)] = code;
    }
    const std::vector<ItemCodeTable> tables = {t};
    const auto vocab = build_vocabulary(tables);
    const auto trie = PrefixTrie::build(t, vocab);
    MarkovScorer scorer(IndexType::kCeid, 1, vocab.code_tokens(IndexType::kCeid),
                        {.order = static_cast<int>(rng() % 8), .lambda = 0.4});
    std::vector<std::string> ids;
    for (const auto& [id, code] : t.codes) ids.push_back(id);
    auto random_stream = [&](int n) {
      std::vector<TokenId> s;
      for (int i = 0; i < n; ++i) {
        const auto toks = item_tokens(t, vocab, ids[rng() % ids.size()]);
        s.insert(s.end(), toks.begin(), toks.end());
      }
      return s;
    };
    for (int s = 0; s < 15; ++s) scorer.observe(random_stream(3 + static_cast<int>(rng() % 4)));
    const auto ctx = random_stream(2);

    const auto oracle = exhaustive_topk_oracle(scorer, t, vocab, ctx, 20);
    const auto full = beam_search_constrained(scorer, trie, ctx, 20, items);
    const auto narrow = beam_search_constrained(scorer, trie, ctx, 20);
    c.expect(full == oracle, "instance " + std::to_string(instances) + " differs");
    default_equal += narrow == oracle;
    for (const auto* l : {&full, &narrow}) {
      std::set<std::string> seen;
      for (const auto& e : l->entries)
        invalid += !t.codes.count(e.item) || !seen.insert(e.item).second;
    }
  }
  c.expect(invalid == 0, std::to_string(invalid) + " invalid items");
  return std::to_string(instances) + " instances equal at full beam width; width 20 matched " +
         std::to_string(default_equal) + "; invalid ids " + std::to_string(invalid);
}

// Conf/Cons/S evaluated directly from the rank lists.
struct HandScore {
  double conf = 0.0, cons = 0.0, s = 0.0;
};

HandScore hand_score(const std::vector<int>& ranks, double alpha, double tau) {
  const double n = static_cast<double>(ranks.size());
  double sum = 0.0;
  for (int r : ranks) sum += r;
  const double mean = sum / n;
  double ss = 0.0;
  for (int r : ranks) ss += (r - mean) * (r - mean);
  HandScore h;
  h.conf = std::exp(-mean / tau);
  h.cons = ranks.size() > 1 ? std::exp(-std::sqrt(ss / (n - 1)) / tau) : 0.0;
  h.s = alpha * h.conf + (1 - alpha) * h.cons;
  return h;
}

RankedList toy_list(const std::string& type, int tmpl, const std::vector<std::string>& items) {
  RankedList l{"u", type, tmpl, {}};
  for (std::size_t i = 0; i < items.size(); ++i)
    l.entries.push_back({items[i], -static_cast<double>(i)});
  return l;
}

std::string rerank_oracle(Check& c) {
  const std::vector<RankedList> ceid = {toy_list("ceid", 1, {"A", "B", "C", "D"}),
                                        toy_list("ceid", 2, {"A", "D", "C", "B"})};
  const std::vector<RankedList> seid = {toy_list("seid", 1, {"A", "B", "C", "D"}),
                                        toy_list("seid", 2, {"A", "C", "B", "D"})};
  // Ranks read off the lists above.
  const std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> ranks = {
      {"A", {{0, 0}, {0, 0}}},
      {"B", {{1, 3}, {1, 2}}},
      {"C", {{2, 2}, {2, 1}}},
      {"D", {{3, 1}, {3, 3}}},
  };
  RerankOptions opts;
  opts.alpha = 0.8;
  opts.tau = 10.0;
  opts.k_in = 4;
  opts.k_out = 4;
  const auto res = fuse_and_rank("u", ceid, seid, opts);
  c.expect(res.breakdown.size() == 4, "breakdown size");
  for (const auto& sc : res.breakdown) {
    const auto& [rc, rs] = ranks.at(sc.item);
    const auto hc = hand_score(rc, opts.alpha, opts.tau);
    const auto hs = hand_score(rs, opts.alpha, opts.tau);
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-9; };
    c.expect(near(sc.conf_c, hc.conf) && near(sc.cons_c, hc.cons) && near(sc.s_c, hc.s),
             sc.item + " ceid scores");
    c.expect(near(sc.conf_s, hs.conf) && near(sc.cons_s, hs.cons) && near(sc.s_s, hs.s),
             sc.item + " seid scores");
    c.expect(near(sc.s_total, hc.s + hs.s), sc.item + " total");
  }
  auto find = [&](const std::string& item) {
    return *std::find_if(res.breakdown.begin(), res.breakdown.end(),
                         [&](const auto& s) { return s.item == item; });
  };
  // D sits at rank 3 twice on the seid side; B's ceid ranks {1, 3} have stdev sqrt(2).
  const double conf_d = find("D").conf_s, cons_b = find("B").cons_c;
  c.expect(std::abs(conf_d - 0.7408182) < 1e-7, "exp(-0.3) anchor " + fmt(conf_d));
  c.expect(std::abs(cons_b - 0.8681234) < 1e-7, "exp(-sqrt2/10) anchor " + fmt(cons_b));
  c.expect(find("A").s_total == 2.0, "top item S " + fmt(find("A").s_total));
  c.expect(res.list.entries.front().item == "A", "A not ranked first");
  return "4 items checked to 1e-9; S(A) = " + fmt(find("A").s_total);
}

std::string metric_oracles(Check& c) {
  std::mt19937_64 rng(7);
  auto diff_ratio = [](const std::set<std::string>& a, const std::set<std::string>& b) {
    std::vector<std::string> d;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(d));
    return static_cast<double>(d.size()) / static_cast<double>(a.size());
  };
  int families = 0, evaluations = 0;
  for (; families < 1000; ++families) {
    const int users = 1 + static_cast<int>(rng() % 12);
    const int templates = 2 + static_cast<int>(rng() % 9);
    std::vector<HitSet> sets;
    for (int t = 1; t <= templates; ++t) {
      HitSet h{t, {}};
      for (int u = 0; u < users; ++u)
        if (rng() % 3) h.users.insert("u" + std::to_string(u));
      sets.push_back(std::move(h));
    }
    for (const auto& a : sets) {
      if (a.users.empty()) continue;
      c.expect(per(a, a) == 0.0, "PER(t,t) != 0");
      for (const auto& b : sets)
        c.expect(per(a, b) == diff_ratio(a.users, b.users), "PER mismatch");
    }
    const auto split = 1 + static_cast<long>(rng() % (templates - 1));
    const std::vector<HitSet> t1(sets.begin(), sets.begin() + split);
    const std::vector<HitSet> t2(sets.begin() + split, sets.end());
    std::set<std::string> uni;
    for (const auto& h : t2) uni.insert(h.users.begin(), h.users.end());
    if (!uni.empty()) {
      double want = 0.0;
      for (const auto& h : t1) want += diff_ratio(uni, h.users);
      want /= static_cast<double>(t1.size());
      c.expect(std::abs(chr_avg(t1, t2) - want) <= 1e-15, "CHR mismatch");
    }

    // Ranked lists over the same users for the accuracy properties.
    TestItems test;
    std::vector<RankedList> lists;
    for (int u = 0; u < users; ++u) {
      const std::string user = "u" + std::to_string(u);
      test[user] = "i" + std::to_string(rng() % 15);
      std::vector<std::string> items;
      for (int i = 0; i < 15; ++i) items.push_back("i" + std::to_string(i));
      std::shuffle(items.begin(), items.end(), rng);
      items.resize(rng() % 16);
      RankedList l{user, "ceid", 1, {}};
      for (auto& i : items) l.entries.push_back({i, 0.0});
      lists.push_back(std::move(l));
    }
    double prev_h = 0.0, prev_n = 0.0;
    for (int k = 1; k <= 15; ++k, ++evaluations) {
      const double h = hit_at_k(lists, test, k).value;
      const double n = ndcg_at_k(lists, test, k).value;
      c.expect(n <= h, "NDCG > Hit");
      c.expect(h >= prev_h && n >= prev_n, "not monotone in K");
      prev_h = h;
      prev_n = n;
    }
  }
  return std::to_string(families) + " families, " + std::to_string(evaluations) +
         " accuracy evaluations";
}

std::string ablation_isolation(Check& c) {
  std::mt19937_64 rng(99);
  int cases = 0;
  for (; cases < 200; ++cases) {
    auto random_side = [&](const std::string& type) {
      std::vector<RankedList> out;
      const int templates = 1 + static_cast<int>(rng() % 5);
      for (int t = 1; t <= templates; ++t) {
        std::vector<std::string> items;
        for (int i = 0; i < 12; ++i) items.push_back("i" + std::to_string(i));
        std::shuffle(items.begin(), items.end(), rng);
        items.resize(4 + rng() % 8);
        out.push_back(toy_list(type, t, items));
      }
      return out;
    };
    const auto ceid = random_side("ceid");
    const auto seid = random_side("seid");
    const int k = 3 + static_cast<int>(rng() % 8);

    // Conf-only: scrambling every Cons value leaves the order unchanged.
    auto scores = component_scores(collect_positions(ceid, k), collect_positions(seid, k), 10.0);
    auto perturbed = scores;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& s : perturbed) s.cons_c = u(rng), s.cons_s = u(rng);
    rank_by_components(scores, 1.0);
    rank_by_components(perturbed, 1.0);
    bool same = scores.size() == perturbed.size();
    for (std::size_t i = 0; same && i < scores.size(); ++i)
      same = scores[i].item == perturbed[i].item && scores[i].s_total == perturbed[i].s_total;
    c.expect(same, "conf-only order moved with Cons");

    RerankOptions opts;
    opts.k_in = k;
    opts.k_out = 10;
    opts.mode = FusionMode::kConfOnly;
    const auto conf_only = fuse_and_rank("u", ceid, seid, opts);
    std::vector<std::string> want;
    for (std::size_t i = 0; i < scores.size() && i < 10; ++i) want.push_back(scores[i].item);
    std::vector<std::string> got;
    for (const auto& e : conf_only.list.entries) got.push_back(e.item);
    c.expect(got == want, "conf-only fusion differs from component ranking");

    // Single-index modes equal fusing that side alone.
    opts.mode = FusionMode::kCeidOnly;
    const auto ceid_mode = fuse_and_rank("u", ceid, seid, opts).list;
    opts.mode = FusionMode::kFull;
    const auto ceid_alone = fuse_and_rank("u", ceid, {}, opts).list;
    c.expect(ceid_mode == ceid_alone, "ceid-only mode differs");
    opts.mode = FusionMode::kSeidOnly;
    const auto seid_mode = fuse_and_rank("u", ceid, seid, opts).list;
    opts.mode = FusionMode::kFull;
    const auto seid_alone = fuse_and_rank("u", {}, seid, opts).list;
    c.expect(seid_mode == seid_alone, "seid-only mode differs");
  }
  return std::to_string(cases) + " random instances";
}

// Reads "a,b,...,value" rows, keyed by every column but the last.
std::map<std::vector<std::string>, double> read_csv_values(const fs::path& p) {
  std::map<std::vector<std::string>, double> out;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, ',');) cols.push_back(col);
    if (cols.empty()) continue;
    const double v = std::stod(cols.back());
    cols.pop_back();
    out[cols] = v;
  }
  return out;
}

struct EndToEnd {
  ScratchDir first{"e2e_a"};
  ScratchDir second{"e2e_b"};
  double seconds = 0.0;
  bool ran = false;
  std::string error;
};

EndToEnd& end_to_end_run() {
  static EndToEnd run = [] {
    EndToEnd r;
    try {
      for (const auto* dir : {&r.first, &r.second}) {
        PipelineConfig cfg;
        cfg.set("paths.output", dir->path().string());
        const auto t0 = Clock::now();
        run_stage(Stage::kAll, cfg, {.synthetic = true});
        if (dir == &r.first) r.seconds = seconds_since(t0);
      }
      r.ran = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    return r;
  }();
  return run;
}

std::string end_to_end(Check& c) {
  auto& run = end_to_end_run();
  c.expect(run.ran, "pipeline failed: " + run.error);
  if (!run.ran) return run.error;
  const fs::path a = run.first.path(), b = run.second.path();
  c.expect(run.seconds < 600.0, "runtime " + fmt(run.seconds) + "s");

  // Every artifact is byte-identical, except manifests, which record the
  // output path; their digests must still agree.
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (rel.begin()->string() == "manifests") continue;
    ++files;
    c.expect(read_file(e.path()) == read_file(b / rel), rel.string() + " differs on rerun");
  }

  const auto metrics = read_csv_values(artifacts::metrics(a));
  for (const char* m : {"hit", "ndcg"})
    for (const char* k : {"5", "10"}) {
      const auto it = metrics.find({m, k});
      c.expect(it != metrics.end(), std::string(m) + "@" + k + " missing");
      if (it != metrics.end())
        c.expect(it->second >= 0.0 && it->second <= 1.0, std::string(m) + "@" + k + " range");
    }

  for (IndexType t : {IndexType::kCeid, IndexType::kSeid}) {
    std::ifstream in(artifacts::per_matrix(a, t));
    std::string line;
    std::getline(in, line);
    int row = 0;
    while (std::getline(in, line)) {
      std::vector<std::string> cols;
      std::stringstream ss(line);
      for (std::string col; std::getline(ss, col, ',');) cols.push_back(col);
      ++row;
      const bool zero = static_cast<int>(cols.size()) > row &&
                        (cols[row].empty() || std::stod(cols[row]) == 0.0);
      c.expect(zero, "PER diagonal nonzero at row " + std::to_string(row));
    }
    c.expect(row == 10, "PER matrix has " + std::to_string(row) + " rows");
  }

  const auto ablation = read_csv_values(artifacts::ablation(a));
  const double fused = metrics.count({"hit", "10"}) ? metrics.at({"hit", "10"}) : -1.0;
  const double ceid = ablation.count({"ceid-only", "hit", "10"})
                          ? ablation.at({"ceid-only", "hit", "10"}) : -1.0;
  const double seid = ablation.count({"seid-only", "hit", "10"})
                          ? ablation.at({"seid-only", "hit", "10"}) : -1.0;
  c.expect(ceid >= 0.0 && seid >= 0.0, "ablation rows missing");
  c.expect(fused >= 0.95 * std::max(ceid, seid),
           "fused Hit@10 " + fmt(fused) + " below floor " + fmt(0.95 * std::max(ceid, seid)));
  return fmt(run.seconds) + "s per run, " + std::to_string(files) +
         " identical files, Hit@10 fused " + fmt(fused) + " ceid-only " + fmt(ceid) +
         " seid-only " + fmt(seid);
}

std::string template_sweep(Check& c) {
  auto& run = end_to_end_run();
  c.expect(run.ran, "pipeline failed: " + run.error);
  if (!run.ran) return run.error;
  const auto sweep = read_csv_values(artifacts::template_sweep(run.first.path()));
  int cells = 0;
  std::string trend;
  for (int n = 2; n <= 10; ++n)
    for (const char* m : {"hit", "ndcg"})
      for (const char* k : {"5", "10"}) {
        const auto it = sweep.find({std::to_string(n), m, k});
        c.expect(it != sweep.end(), "missing cell n=" + std::to_string(n) + " " + m + "@" + k);
        if (it == sweep.end()) continue;
        c.expect(it->second >= 0.0 && it->second <= 1.0, "cell out of range");
        ++cells;
        if (std::string(m) == "hit" && std::string(k) == "10")
          trend += (trend.empty() ? "" : " ") + fmt(it->second);
      }
  return std::to_string(cells) + " cells; Hit@10 for |T|=2..10: " + trend;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<std::string(Check&)> run;
  };
  const std::vector<Criterion> criteria = {
      {"quantization oracle", quantization_oracle},
      {"gradient check", gradient_check_criterion},
      {"rq-vae training", rqvae_training},
      {"collision resolution", collision_resolution},
      {"beam/oracle equivalence", beam_oracle},
      {"rerank oracle", rerank_oracle},
      {"metric oracles", metric_oracles},
      {"ablation isolation", ablation_isolation},
      {"end-to-end", end_to_end},
      {"template-count sweep", template_sweep},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check check;
    std::string detail;
    try {
      detail = criteria[i].run(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("exception: ") + e.what());
    }
    const bool ok = check.ok();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].name
              << "): " << detail;
    if (!ok) std::cout << " [" << check.summary() << "]";
    std::cout << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
