#pragma once

// Stage orchestration over on-disk artifacts. Every stage reads its inputs
// from the output directory, writes its outputs there and leaves a manifest
// with the config snapshot and SHA-256 digests of what it read and wrote.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mirec/collab.h"
#include "mirec/dataset.h"
#include "mirec/metrics.h"
#include "mirec/rerank.h"
#include "mirec/rqvae.h"
#include "mirec/scorer.h"
#include "mirec/synthetic.h"

namespace mirec {

enum class Stage {
  kPrepare,
  kEmbedCollab,
  kBuildIndex,
  kTrainScorers,
  kRetrieve,
  kRerank,
  kEvaluate,
  kAnalyze,
  kAll,
};
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

// Raw `section.key = value` settings. Every known key has a default;
// setting an unknown key is a ConfigError.
class PipelineConfig {
 public:
  PipelineConfig();

  void set(const std::string& key, const std::string& value);
  // "section.key=value"
  void apply_override(const std::string& assignment);
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Lines are `section.key = value`; blank lines and '#' comments are ignored.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct PipelineSettings {
  std::filesystem::path interactions;
  std::filesystem::path semantic;
  std::filesystem::path output;
  std::filesystem::path templates;  // empty: built-in templates
  std::uint64_t seed = 0;
  int kcore = 0;
  int max_len = kDefaultMaxLen;
  SyntheticConfig synthetic;
  CollabConfig collab;
  RqVaeConfig rqvae_ceid;
  RqVaeConfig rqvae_seid;
  MarkovConfig scorer;
  int template_count = 10;
  int k_retrieve = 20;
  int beam_width = 0;
  RerankOptions rerank;
  std::vector<int> k_report = {5, 10};
};

// Parses and checks every value. Input paths must exist when `stage`
// reads them, unless `synthetic` data is generated instead.
PipelineSettings resolve_settings(const PipelineConfig& cfg, Stage stage, bool synthetic);

struct RunOptions {
  bool synthetic = false;  // prepare generates data instead of reading it
  bool verbose = false;    // progress lines on stderr
};

// Runs one stage, or every stage in order for Stage::kAll.
void run_stage(Stage stage, const PipelineConfig& cfg, const RunOptions& opts);

// Artifact locations under the output directory.
namespace artifacts {
std::filesystem::path split_dir(const std::filesystem::path& out);
std::filesystem::path semantic(const std::filesystem::path& out);
std::filesystem::path collab(const std::filesystem::path& out);
std::filesystem::path codes(const std::filesystem::path& out, IndexType t);
std::filesystem::path rqvae_stem(const std::filesystem::path& out, IndexType t);
std::filesystem::path vocab(const std::filesystem::path& out);
std::filesystem::path scorer(const std::filesystem::path& out, IndexType t, int template_id);
std::filesystem::path ranked(const std::filesystem::path& out, IndexType t);
std::filesystem::path fused(const std::filesystem::path& out);
std::filesystem::path breakdown(const std::filesystem::path& out);
std::filesystem::path metrics(const std::filesystem::path& out);
std::filesystem::path metrics_by_list(const std::filesystem::path& out);
std::filesystem::path per_matrix(const std::filesystem::path& out, IndexType t);
std::filesystem::path chr(const std::filesystem::path& out);
std::filesystem::path ablation(const std::filesystem::path& out);
std::filesystem::path template_sweep(const std::filesystem::path& out);
std::filesystem::path manifest(const std::filesystem::path& out, Stage s);
}  // namespace artifacts

std::string sha256_file(const std::filesystem::path& path);

// Hit@k and NDCG@k rows for each k; throws Error if NDCG exceeds Hit.
std::vector<MetricRow> accuracy_rows(std::span<const RankedList> lists,
                                     const TestItems& test, const std::vector<int>& ks);

// Groups lists by user (sorted), keeping templates 1..max_template.
std::map<std::string, std::vector<RankedList>> lists_by_user(
    const std::vector<RankedList>& lists, int max_template);

// Fuses every test user's lists. A user with no list on either kept side is
// skipped and later counted as a miss.
std::vector<FusionResult> fuse_all(
    const std::map<std::string, std::vector<RankedList>>& ceid,
    const std::map<std::string, std::vector<RankedList>>& seid,
    const RerankOptions& opts);

}  // namespace mirec
