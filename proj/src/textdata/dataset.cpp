#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "t2i/errors.hpp"
#include "t2i/textdata.hpp"

namespace fs = std::filesystem;

namespace t2i {

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

}  // namespace

std::vector<RawRecord> load_raw_dataset(const fs::path& dir) {
  const fs::path images = dir / "images";
  const fs::path captions = dir / "captions";
  const fs::path classes = dir / "classes.tsv";
  for (const auto& need : {images, captions}) {
    if (!fs::is_directory(need)) throw IoError("dataset directory missing: " + need.string());
  }
  if (!fs::exists(classes)) throw IoError("dataset file missing: " + classes.string());

  std::map<std::string, std::int64_t> labels;
  for (const auto& line : read_lines(classes)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DatasetError("classes.tsv: missing tab in '" + line + "'");
    try {
      labels[line.substr(0, tab)] = std::stoll(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw DatasetError("classes.tsv: bad class id in '" + line + "'");
    }
  }

  std::vector<RawRecord> out;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".ppm") continue;
    RawRecord r;
    r.stem = entry.path().stem().string();
    r.image_path = entry.path();
    const fs::path cap = captions / (r.stem + ".txt");
    if (!fs::exists(cap)) throw DatasetError("no caption file for image " + r.stem);
    r.captions = read_lines(cap);
    auto it = labels.find(r.stem);
    if (it == labels.end()) throw DatasetError("no class entry for image " + r.stem);
    r.class_label = it->second;
    out.push_back(std::move(r));
  }
  if (out.empty()) throw DatasetError("no images in " + images.string());
  std::sort(out.begin(), out.end(), [](const RawRecord& a, const RawRecord& b) { return a.stem < b.stem; });
  return out;
}

std::vector<CaptionRecord> encode_records(const std::vector<RawRecord>& raw, const Vocabulary& vocab,
                                          std::int64_t max_len) {
  std::vector<CaptionRecord> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    CaptionRecord rec;
    rec.image_path = "images/" + r.stem + ".ppm";
    rec.class_label = r.class_label;
    for (const auto& text : r.captions) {
      try {
        rec.captions.push_back(encode_caption(vocab, tokenize(text), max_len, nfc(text)));
      } catch (const EmptyCaptionError&) {
        throw EmptyCaptionError("empty caption for image " + r.stem);
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

Corpus build_corpus(const std::vector<RawRecord>& raw, int min_freq, std::int64_t max_len,
                    std::int64_t captions_per_image) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& r : raw) {
    if (static_cast<std::int64_t>(r.captions.size()) != captions_per_image) {
      throw DatasetError("image " + r.stem + " has " + std::to_string(r.captions.size()) + " captions, expected " +
                         std::to_string(captions_per_image));
    }
    for (const auto& text : r.captions) corpus.push_back(tokenize(text));
  }
  Corpus c;
  c.vocab = build_vocab(corpus, min_freq);
  c.records = encode_records(raw, c.vocab, max_len);
  return c;
}

bool is_toy_dataset(const fs::path& dir) { return fs::exists(dir / "toy.tsv"); }

}  // namespace t2i
