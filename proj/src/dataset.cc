#include "mirec/dataset.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mirec/errors.h"
#include "text_util.h"

namespace mirec {

std::size_t InteractionDataset::num_interactions() const {
  std::size_t n = 0;
  for (const auto& [user, seq] : sequences) n += seq.size();
  return n;
}

LoadedInteractions load_interactions(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  LoadedInteractions out;
  auto& ds = out.dataset;

  std::string line;
  std::size_t line_no = 0;
  std::size_t valid = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split(line, '\t');
    std::optional<std::int64_t> ts;
    if (fields.size() == 3 && !fields[0].empty() && !fields[1].empty())
      ts = detail::parse_int<std::int64_t>(detail::trim(fields[2]));
    if (!ts) {
      ++out.malformed_lines;
      out.malformed_line_numbers.push_back(line_no);
      continue;
    }
    std::string user(fields[0]);
    std::string item(fields[1]);
    ds.users.insert(user);
    ds.items.insert(item);
    ds.sequences[user].push_back({std::move(item), *ts});
    ++valid;
  }
  if (in.bad()) throw IoError("read failure on " + path.string());
  if (valid == 0)
    throw EmptyDataError("no valid interactions in " + path.string());

  for (auto& [user, seq] : ds.sequences) {
    std::stable_sort(seq.begin(), seq.end(),
                     [](const Interaction& a, const Interaction& b) {
                       return a.timestamp < b.timestamp;
                     });
  }
  return out;
}

void save_interactions(const InteractionDataset& ds,
                       const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  for (const auto& [user, seq] : ds.sequences)
    for (const auto& it : seq)
      out << user << '\t' << it.item << '\t' << it.timestamp << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

InteractionDataset kcore_filter(const InteractionDataset& ds, int k) {
  if (k < 1) throw InvalidArgument("kcore_filter: k must be >= 1");
  auto seqs = ds.sequences;
  while (true) {
    std::map<std::string, std::size_t> item_degree;
    for (const auto& [user, seq] : seqs)
      for (const auto& it : seq) ++item_degree[it.item];

    bool changed = false;
    for (auto u = seqs.begin(); u != seqs.end();) {
      auto& seq = u->second;
      auto removed = std::erase_if(seq, [&](const Interaction& it) {
        return item_degree[it.item] < static_cast<std::size_t>(k);
      });
      if (removed > 0) changed = true;
      if (seq.size() < static_cast<std::size_t>(k)) {
        u = seqs.erase(u);
        changed = true;
      } else {
        ++u;
      }
    }
    if (!changed) break;
  }

  InteractionDataset out;
  out.sequences = std::move(seqs);
  for (const auto& [user, seq] : out.sequences) {
    out.users.insert(user);
    for (const auto& it : seq) out.items.insert(it.item);
  }
  return out;
}

SplitDataset leave_one_out_split(const InteractionDataset& ds, int max_len) {
  if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
  SplitDataset split;
  split.items.assign(ds.items.begin(), ds.items.end());
  for (const auto& [user, seq] : ds.sequences) {
    const std::size_t n = seq.size();
    if (n < 3) {
      split.excluded_users.push_back(user);
      continue;
    }
    const std::size_t train_len = n - 2;
    const std::size_t keep = std::min<std::size_t>(train_len, max_len);
    std::vector<std::string> train;
    train.reserve(keep);
    for (std::size_t i = train_len - keep; i < train_len; ++i)
      train.push_back(seq[i].item);
    split.train.emplace(user, std::move(train));
    split.valid.emplace(user, seq[n - 2].item);
    split.test.emplace(user, seq[n - 1].item);
  }
  return split;
}

std::vector<std::string> test_history(const SplitDataset& split,
                                      const std::string& user, int max_len) {
  auto t = split.train.find(user);
  auto v = split.valid.find(user);
  if (t == split.train.end() || v == split.valid.end())
    throw InvalidArgument("user " + user + " is not in the split");
  std::vector<std::string> hist = t->second;
  hist.push_back(v->second);
  if (hist.size() > static_cast<std::size_t>(max_len))
    hist.erase(hist.begin(), hist.end() - max_len);
  return hist;
}

void save_split(const SplitDataset& split, const std::filesystem::path& dir) {
  {
    auto out = detail::open_output(dir / "train.tsv");
    for (const auto& [user, items] : split.train)
      for (std::size_t i = 0; i < items.size(); ++i)
        out << user << '\t' << items[i] << '\t' << i << '\n';
  }
  for (const auto& [name, table] :
       {std::pair{"valid.tsv", &split.valid}, std::pair{"test.tsv", &split.test}}) {
    auto out = detail::open_output(dir / name);
    for (const auto& [user, item] : *table) out << user << '\t' << item << '\n';
  }
  auto out = detail::open_output(dir / "items.tsv");
  for (const auto& item : split.items) out << item << '\n';
}

namespace {

std::map<std::string, std::string> load_pairs(const std::filesystem::path& p) {
  auto in = detail::open_input(p);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    auto f = detail::split(line, '\t');
    if (f.size() != 2)
      throw FormatError(detail::where(p, line_no) + ": expected user<TAB>item");
    out.emplace(std::string(f[0]), std::string(f[1]));
  }
  return out;
}

}  // namespace

SplitDataset load_split(const std::filesystem::path& dir) {
  SplitDataset split;
  const auto train_path = dir / "train.tsv";
  auto in = detail::open_input(train_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    auto f = detail::split(line, '\t');
    auto pos = f.size() == 3 ? detail::parse_int<std::size_t>(f[2]) : std::nullopt;
    if (!pos)
      throw FormatError(detail::where(train_path, line_no) +
                        ": expected user<TAB>item<TAB>position");
    auto& items = split.train[std::string(f[0])];
    if (*pos != items.size())
      throw FormatError(detail::where(train_path, line_no) +
                        ": positions must be consecutive from 0");
    items.emplace_back(f[1]);
  }
  split.valid = load_pairs(dir / "valid.tsv");
  split.test = load_pairs(dir / "test.tsv");

  auto items_in = detail::open_input(dir / "items.tsv");
  while (std::getline(items_in, line)) {
    detail::strip_cr(line);
    if (!line.empty()) split.items.push_back(line);
  }
  return split;
}

std::string_view to_string(SourceTag tag) {
  return tag == SourceTag::kCollaborative ? "collaborative" : "semantic";
}

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids,
                                 Eigen::MatrixXd values, SourceTag source)
    : ids_(std::move(ids)), values_(std::move(values)), source_(source) {
  if (static_cast<Eigen::Index>(ids_.size()) != values_.rows())
    throw InvalidArgument("embedding ids and rows disagree in count");
  if (!values_.allFinite())
    throw InvalidArgument("embedding matrix has non-finite entries");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second)
      throw InvalidArgument("duplicate embedding id " + ids_[i]);
  }
}

bool EmbeddingMatrix::contains(const std::string& id) const {
  return index_.count(id) > 0;
}

Eigen::VectorXd EmbeddingMatrix::row(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw InvalidArgument("no embedding for item " + id);
  return values_.row(static_cast<Eigen::Index>(it->second)).transpose();
}

EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& path,
                                      SourceTag source) {
  auto in = detail::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    detail::strip_cr(line);
    return true;
  };

  if (!next_line() || detail::trim(line) != "ITEM_EMB v1")
    throw FormatError(detail::where(path, 1) + ": expected header 'ITEM_EMB v1'");
  if (!next_line())
    throw FormatError(detail::where(path, 2) + ": missing '<n> <d>' line");
  auto shape = detail::split_ws(line);
  std::optional<std::size_t> n, d;
  if (shape.size() == 2) {
    n = detail::parse_int<std::size_t>(shape[0]);
    d = detail::parse_int<std::size_t>(shape[1]);
  }
  if (!n || !d || *d == 0)
    throw FormatError(detail::where(path, line_no) +
                      ": expected '<n> <d>' with d >= 1");

  std::vector<std::string> ids;
  ids.reserve(*n);
  Eigen::MatrixXd values(static_cast<Eigen::Index>(*n),
                         static_cast<Eigen::Index>(*d));
  std::set<std::string> seen;
  for (std::size_t r = 0; r < *n; ++r) {
    if (!next_line())
      throw FormatError(detail::where(path, line_no + 1) + ": expected " +
                        std::to_string(*n) + " rows, found " + std::to_string(r));
    auto f = detail::split_ws(line);
    if (f.size() != *d + 1)
      throw FormatError(detail::where(path, line_no) + ": expected " +
                        std::to_string(*d) + " values, found " +
                        std::to_string(f.empty() ? 0 : f.size() - 1));
    std::string id(f[0]);
    if (!seen.insert(id).second)
      throw FormatError(detail::where(path, line_no) + ": duplicate item id " + id);
    for (std::size_t c = 0; c < *d; ++c) {
      auto v = detail::parse_double(f[c + 1]);
      if (!v)
        throw FormatError(detail::where(path, line_no) + ": bad number '" +
                          std::string(f[c + 1]) + "'");
      if (!std::isfinite(*v))
        throw FormatError(detail::where(path, line_no) + ": non-finite value");
      values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
    }
    ids.push_back(std::move(id));
  }
  while (next_line()) {
    if (!detail::trim(line).empty())
      throw FormatError(detail::where(path, line_no) + ": more rows than declared");
  }
  return EmbeddingMatrix(std::move(ids), std::move(values), source);
}

void save_embedding_matrix(const EmbeddingMatrix& m,
                           const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << "ITEM_EMB v1\n" << m.size() << ' ' << m.dim() << '\n';
  const auto& v = m.values();
  for (std::size_t r = 0; r < m.size(); ++r) {
    out << m.ids()[r];
    for (int c = 0; c < m.dim(); ++c)
      out << ' ' << detail::format_double(v(static_cast<Eigen::Index>(r), c));
    out << '\n';
  }
  if (!out) throw IoError("write failure on " + path.string());
}

}  // namespace mirec
