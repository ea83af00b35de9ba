#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "t2i/errors.hpp"
#include "t2i/rng.hpp"
#include "t2i/textdata.hpp"

namespace t2i {

namespace {
const std::array<std::string, 3> kSpecials{"<pad>", "<unk>", "<eos>"};
}

Vocabulary::Vocabulary() {
  for (const auto& s : kSpecials) append(s);
}

void Vocabulary::append(const std::string& token) {
  token_to_id_.emplace(token, size());
  id_to_token_.push_back(token);
}

std::int64_t Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# min_freq " << min_freq_ << '\n';
  for (const auto& t : id_to_token_) out << t << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  Vocabulary v;
  v.token_to_id_.clear();
  v.id_to_token_.clear();
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first && line.rfind("# min_freq ", 0) == 0) {
      v.min_freq_ = std::stoi(line.substr(11));
      first = false;
      continue;
    }
    first = false;
    if (v.token_to_id_.count(line)) throw VocabError("duplicate token in " + path.string());
    v.append(line);
  }
  if (v.size() < 3 || v.id_to_token_[0] != kSpecials[0] || v.id_to_token_[1] != kSpecials[1] ||
      v.id_to_token_[2] != kSpecials[2]) {
    throw VocabError("vocabulary file lacks the special tokens: " + path.string());
  }
  return v;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_freq) {
  if (min_freq < 1) throw VocabError("min_freq must be >= 1");
  struct Entry {
    std::int64_t count = 0;
    std::int64_t first = 0;
  };
  std::unordered_map<std::string, Entry> stats;
  std::vector<std::string> order;
  std::int64_t position = 0;
  for (const auto& caption : corpus) {
    for (const auto& t : caption) {
      auto [it, inserted] = stats.try_emplace(t, Entry{0, position});
      if (inserted) order.push_back(t);
      ++it->second.count;
      ++position;
    }
  }
  std::vector<std::string> kept;
  for (const auto& t : order)
    if (stats[t].count >= min_freq) kept.push_back(t);
  std::stable_sort(kept.begin(), kept.end(), [&](const std::string& a, const std::string& b) {
    const auto& ea = stats[a];
    const auto& eb = stats[b];
    if (ea.count != eb.count) return ea.count > eb.count;
    return ea.first < eb.first;
  });
  Vocabulary v;
  v.min_freq_ = min_freq;
  for (const auto& t : kept) v.append(t);
  return v;
}

TokenizedCaption encode_caption(const Vocabulary& vocab, const std::vector<std::string>& tokens,
                                std::int64_t max_len, std::string raw) {
  if (max_len < 2) throw VocabError("max_len must be >= 2");
  if (tokens.empty()) throw EmptyCaptionError("caption has no tokens");
  TokenizedCaption c;
  c.raw = std::move(raw);
  const auto words = std::min<std::int64_t>(static_cast<std::int64_t>(tokens.size()), max_len - 1);
  c.ids.assign(static_cast<std::size_t>(max_len), Vocabulary::kPad);
  for (std::int64_t i = 0; i < words; ++i) c.ids[static_cast<std::size_t>(i)] = vocab.id(tokens[static_cast<std::size_t>(i)]);
  c.ids[static_cast<std::size_t>(words)] = Vocabulary::kEos;
  c.length = words + 1;
  return c;
}

std::vector<std::string> decode_caption(const Vocabulary& vocab, const TokenizedCaption& caption) {
  std::vector<std::string> out;
  for (std::int64_t i = 0; i < caption.word_count(); ++i) out.push_back(vocab.token(caption.ids[static_cast<std::size_t>(i)]));
  return out;
}

std::int64_t split_train_count(std::int64_t n, double train_fraction) {
  return std::llround(train_fraction * static_cast<double>(n));
}

DatasetSplit split_dataset(std::vector<CaptionRecord> records, double train_fraction, std::uint64_t seed) {
  if (records.size() < 2) throw DatasetError("need at least 2 records to split");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DatasetError("train_fraction must lie in (0, 1)");
  std::unordered_set<std::string> seen;
  for (const auto& r : records)
    if (!seen.insert(r.image_path).second) throw DatasetError("duplicate image path " + r.image_path);

  const auto n = static_cast<std::int64_t>(records.size());
  const auto n_train = split_train_count(n, train_fraction);
  std::vector<std::size_t> index(records.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
  RngStream rng(seed, "split");
  rng.shuffle(index);

  DatasetSplit s;
  s.train_fraction = train_fraction;
  s.seed = seed;
  for (std::int64_t i = 0; i < n; ++i) {
    auto& r = records[index[static_cast<std::size_t>(i)]];
    (i < n_train ? s.train : s.test).push_back(std::move(r));
  }
  return s;
}

}  // namespace t2i
