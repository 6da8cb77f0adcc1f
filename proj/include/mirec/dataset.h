#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mirec {

struct Interaction {
  std::string item;
  std::int64_t timestamp = 0;

  bool operator==(const Interaction&) const = default;
};

// Users, items and per-user chronological interaction sequences. Every item
// referenced by a sequence is in `items` and every item in `items` occurs in
// at least one sequence.
struct InteractionDataset {
  std::set<std::string> users;
  std::set<std::string> items;
  std::map<std::string, std::vector<Interaction>> sequences;

  std::size_t num_interactions() const;
  bool operator==(const InteractionDataset&) const = default;
};

struct LoadedInteractions {
  InteractionDataset dataset;
  std::size_t malformed_lines = 0;
  std::vector<std::size_t> malformed_line_numbers;
};

// Reads `user<TAB>item<TAB>timestamp` lines. Blank lines are ignored; any
// other line that does not parse is skipped and counted. Sequences are
// stably sorted by timestamp, so ties keep file order.
LoadedInteractions load_interactions(const std::filesystem::path& path);
void save_interactions(const InteractionDataset& ds,
                       const std::filesystem::path& path);

// Repeatedly drops users and items with fewer than k interactions until
// nothing changes. May return an empty dataset.
InteractionDataset kcore_filter(const InteractionDataset& ds, int k);

inline constexpr int kDefaultMaxLen = 20;

// Leave-one-out split: last item is test, second-to-last is validation, the
// rest (truncated to the last max_len items) is the training history.
struct SplitDataset {
  std::map<std::string, std::vector<std::string>> train;
  std::map<std::string, std::string> valid;
  std::map<std::string, std::string> test;
  // Item universe of the source dataset, sorted.
  std::vector<std::string> items;
  // Users with fewer than three interactions; not present in any split.
  std::vector<std::string> excluded_users;
};

SplitDataset leave_one_out_split(const InteractionDataset& ds,
                                 int max_len = kDefaultMaxLen);

// History used to predict the test item: train followed by the validation
// item, keeping the last max_len entries.
std::vector<std::string> test_history(const SplitDataset& split,
                                      const std::string& user,
                                      int max_len = kDefaultMaxLen);

// train.tsv (user, item, position), valid.tsv and test.tsv (user, item) and
// items.tsv (one id per line) under `dir`.
void save_split(const SplitDataset& split, const std::filesystem::path& dir);
SplitDataset load_split(const std::filesystem::path& dir);

enum class SourceTag { kCollaborative, kSemantic };
std::string_view to_string(SourceTag tag);

// Item-aligned dense embeddings. Row i of `values` belongs to ids[i].
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::vector<std::string> ids, Eigen::MatrixXd values,
                  SourceTag source);

  std::size_t size() const { return ids_.size(); }
  int dim() const { return static_cast<int>(values_.cols()); }
  SourceTag source() const { return source_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const Eigen::MatrixXd& values() const { return values_; }

  bool contains(const std::string& id) const;
  // Throws InvalidArgument for unknown ids.
  Eigen::VectorXd row(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
  Eigen::MatrixXd values_;
  SourceTag source_ = SourceTag::kSemantic;
  std::unordered_map<std::string, std::size_t> index_;
};

// Text format:
//   ITEM_EMB v1
//   <n> <d>
//   <item_id> <v1> ... <vd>      (n lines)
EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& path,
                                      SourceTag source);
void save_embedding_matrix(const EmbeddingMatrix& m,
                           const std::filesystem::path& path);

}  // namespace mirec
