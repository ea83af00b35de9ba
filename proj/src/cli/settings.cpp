#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "t2i/cli.hpp"
#include "t2i/errors.hpp"

namespace t2i::cli {

namespace {

enum class Kind { integer, real, text };

struct Entry {
  std::string key;
  Kind kind;
  std::string fallback;
  std::string help;
};

std::string shortest(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join_ints(const std::vector<std::int64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    const TextdataSettings t;
    const EncoderConfig e;
    const DamsmConfig d;
    const GanConfig g;
    const ClassifierConfig c;
    const EvalConfig m;
    auto i = [](auto v) { return std::to_string(v); };
    return std::vector<Entry>{
        {"textdata.max_len", Kind::integer, i(t.max_len), "tokens per caption, EOS included"},
        {"textdata.min_freq", Kind::integer, i(t.min_freq), "vocabulary cutoff; 0 picks 1 for toy data, 2 otherwise"},
        {"textdata.train_fraction", Kind::real, shortest(t.train_fraction), "train share of the split"},
        {"textdata.split_seed", Kind::integer, i(t.split_seed), "seed of the train/test shuffle"},
        {"textdata.captions_per_image", Kind::integer, i(t.captions_per_image), "captions expected per image"},
        {"encoders.embed_dim", Kind::integer, i(e.embed_dim), "word embedding width"},
        {"encoders.hidden", Kind::integer, i(e.hidden), "LSTM hidden size per direction"},
        {"encoders.dim", Kind::integer, i(e.dim), "common feature dimension D (2 * hidden)"},
        {"encoders.dropout", Kind::real, shortest(e.dropout), "text encoder dropout while training"},
        {"encoders.channels", Kind::text, join_ints(e.channels), "image encoder conv widths"},
        {"damsm.gamma1", Kind::real, shortest(d.gamma1), "word attention sharpness"},
        {"damsm.gamma2", Kind::real, shortest(d.gamma2), "word score aggregation"},
        {"damsm.gamma3", Kind::real, shortest(d.gamma3), "posterior smoothing"},
        {"damsm.epochs", Kind::integer, i(d.epochs), "DAMSM training epochs"},
        {"damsm.batch_size", Kind::integer, i(d.batch_size), "DAMSM batch size"},
        {"damsm.learning_rate", Kind::real, shortest(d.learning_rate), "DAMSM Adam step"},
        {"gan.beta", Kind::real, shortest(g.beta), "weight of L_DAMSM in the generator loss"},
        {"gan.epochs", Kind::integer, i(g.epochs), "GAN training epochs"},
        {"gan.batch_size", Kind::integer, i(g.batch_size), "GAN batch size"},
        {"gan.lr_g", Kind::real, shortest(g.lr_g), "generator Adam step"},
        {"gan.lr_d", Kind::real, shortest(g.lr_d), "discriminator Adam step"},
        {"gan.z_dim", Kind::integer, i(g.z_dim), "noise dimension"},
        {"gan.c_dim", Kind::integer, i(g.c_dim), "conditioning augmentation dimension"},
        {"gan.ngf", Kind::integer, i(g.ngf), "generator channels"},
        {"gan.ndf", Kind::integer, i(g.ndf), "discriminator base channels"},
        {"gan.sample_every", Kind::integer, i(g.sample_every), "epochs between sample grids"},
        {"gan.n_samples", Kind::integer, i(g.n_samples), "images per sample grid"},
        {"metrics.n_samples", Kind::integer, i(m.n_samples), "generated images for FID and IS"},
        {"metrics.splits", Kind::integer, i(m.splits), "IS splits"},
        {"metrics.feature_dim", Kind::integer, i(c.feature_dim), "classifier feature width F"},
        {"metrics.classifier_epochs", Kind::integer, i(c.epochs), "classifier training epochs"},
        {"metrics.classifier_batch_size", Kind::integer, i(c.batch_size), "classifier batch size"},
        {"metrics.classifier_learning_rate", Kind::real, shortest(c.learning_rate), "classifier Adam step"},
        {"metrics.classifier_images", Kind::integer, i(c.n_images), "rendered images, split 80:20"},
        {"metrics.target_accuracy", Kind::real, shortest(c.target_accuracy), "required held-out accuracy"},
    };
  }();
  return entries;
}

const Entry* find(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return &e;
  return nullptr;
}

void check_value(const Entry& e, const std::string& value) {
  const char* first = value.data();
  const char* last = first + value.size();
  if (e.kind == Kind::integer) {
    long long v = 0;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw ConfigError(e.key + ": not an integer: '" + value + "'");
  } else if (e.kind == Kind::real) {
    double v = 0;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw ConfigError(e.key + ": not a number: '" + value + "'");
  }
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return {};
  return s.substr(a, s.find_last_not_of(" \t") - a + 1);
}

}  // namespace

Settings::Settings() {
  for (const auto& e : registry()) {
    values_[e.key] = e.fallback;
    origin_[e.key] = "default";
  }
}

void Settings::assign(const std::string& key, const std::string& value, const std::string& origin) {
  const Entry* e = find(key);
  if (!e) throw ConfigError("unknown setting '" + key + "' (" + origin + ")");
  check_value(*e, value);
  values_[key] = value;
  origin_[key] = origin;
}

void Settings::load_string(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    const std::string key = item.fullname();
    if (item.parents.size() != 1) throw ConfigError(origin + ": '" + key + "' must sit inside one section");
    if (!seen.insert(key).second) throw ConfigError(origin + ": '" + key + "' given twice");
    if (item.inputs.size() != 1) throw ConfigError(origin + ": '" + key + "' needs exactly one value");
    assign(key, item.inputs.front(), origin);
  }
}

void Settings::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  load_string(text.str(), path.string());
}

void Settings::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
  assign(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), "--set");
}

const std::string& Settings::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown setting '" + key + "'");
  return it->second;
}

double Settings::real(const std::string& key) const {
  const auto& s = get(key);
  double v = 0;
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

std::int64_t Settings::integer(const std::string& key) const {
  const auto& s = get(key);
  long long v = 0;
  std::from_chars(s.data(), s.data() + s.size(), v);
  return v;
}

TextdataSettings Settings::textdata() const {
  TextdataSettings t;
  t.max_len = integer("textdata.max_len");
  t.min_freq = static_cast<int>(integer("textdata.min_freq"));
  t.train_fraction = real("textdata.train_fraction");
  t.split_seed = static_cast<std::uint64_t>(integer("textdata.split_seed"));
  t.captions_per_image = integer("textdata.captions_per_image");
  if (t.max_len < 2) throw ConfigError("textdata.max_len must be >= 2");
  if (t.min_freq < 0) throw ConfigError("textdata.min_freq must be >= 0");
  if (!(t.train_fraction > 0 && t.train_fraction < 1)) throw ConfigError("textdata.train_fraction must be in (0, 1)");
  if (t.captions_per_image < 1) throw ConfigError("textdata.captions_per_image must be >= 1");
  return t;
}

EncoderConfig Settings::encoders() const {
  EncoderConfig e;
  e.embed_dim = integer("encoders.embed_dim");
  e.hidden = integer("encoders.hidden");
  e.dim = integer("encoders.dim");
  e.dropout = real("encoders.dropout");
  e.channels.clear();
  std::istringstream list(get("encoders.channels"));
  std::string item;
  while (std::getline(list, item, ',')) {
    long long v = 0;
    const std::string s = trim(item);
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 1) {
      throw ConfigError("encoders.channels: bad width '" + item + "'");
    }
    e.channels.push_back(v);
  }
  if (e.embed_dim < 1 || e.hidden < 1) throw ConfigError("encoders: widths must be >= 1");
  if (e.dim != 2 * e.hidden) {
    throw ConfigError("encoders.dim (" + std::to_string(e.dim) + ") must equal 2 * encoders.hidden (" +
                      std::to_string(2 * e.hidden) + ")");
  }
  if (!(e.dropout >= 0 && e.dropout < 1)) throw ConfigError("encoders.dropout must be in [0, 1)");
  if (e.channels.empty()) throw ConfigError("encoders.channels must list at least one width");
  return e;
}

DamsmConfig Settings::damsm() const {
  DamsmConfig d;
  d.gamma1 = real("damsm.gamma1");
  d.gamma2 = real("damsm.gamma2");
  d.gamma3 = real("damsm.gamma3");
  d.epochs = static_cast<int>(integer("damsm.epochs"));
  d.batch_size = static_cast<int>(integer("damsm.batch_size"));
  d.learning_rate = real("damsm.learning_rate");
  d.validate();
  return d;
}

GanConfig Settings::gan() const {
  GanConfig g;
  g.beta = real("gan.beta");
  g.epochs = static_cast<int>(integer("gan.epochs"));
  g.batch_size = static_cast<int>(integer("gan.batch_size"));
  g.lr_g = real("gan.lr_g");
  g.lr_d = real("gan.lr_d");
  g.z_dim = static_cast<int>(integer("gan.z_dim"));
  g.c_dim = static_cast<int>(integer("gan.c_dim"));
  g.ngf = static_cast<int>(integer("gan.ngf"));
  g.ndf = static_cast<int>(integer("gan.ndf"));
  g.sample_every = static_cast<int>(integer("gan.sample_every"));
  g.n_samples = static_cast<int>(integer("gan.n_samples"));
  g.validate();
  return g;
}

ClassifierConfig Settings::classifier() const {
  ClassifierConfig c;
  c.feature_dim = static_cast<int>(integer("metrics.feature_dim"));
  c.epochs = static_cast<int>(integer("metrics.classifier_epochs"));
  c.batch_size = static_cast<int>(integer("metrics.classifier_batch_size"));
  c.learning_rate = real("metrics.classifier_learning_rate");
  c.n_images = integer("metrics.classifier_images");
  c.target_accuracy = real("metrics.target_accuracy");
  c.validate();
  return c;
}

EvalConfig Settings::eval() const {
  EvalConfig m;
  m.n_samples = integer("metrics.n_samples");
  m.splits = static_cast<int>(integer("metrics.splits"));
  if (m.splits < 1) throw ConfigError("metrics.splits must be >= 1");
  if (m.n_samples < 2 * m.splits) throw ConfigError("metrics.n_samples must be >= 2 * metrics.splits");
  return m;
}

nlohmann::ordered_json Settings::resolved() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& e : registry()) {
    const auto dot = e.key.find('.');
    auto& section = j[e.key.substr(0, dot)];
    const std::string name = e.key.substr(dot + 1);
    switch (e.kind) {
      case Kind::integer: section[name] = integer(e.key); break;
      case Kind::real: section[name] = real(e.key); break;
      case Kind::text: section[name] = get(e.key); break;
    }
  }
  return j;
}

std::string Settings::reference() {
  std::string out = "Settings (config file sections or --set section.key=value):\n";
  for (const auto& e : registry()) {
    char line[160];
    std::snprintf(line, sizeof line, "  %-34s %-12s %s\n", e.key.c_str(), e.fallback.c_str(), e.help.c_str());
    out += line;
  }
  return out;
}

}  // namespace t2i::cli
