#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "t2i/attention.hpp"
#include "t2i/cli.hpp"
#include "t2i/errors.hpp"
#include "t2i/serialize.hpp"

namespace t2i::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const EmptyCaptionError*>(&e) ||
      dynamic_cast<const EncodingError*>(&e)) {
    return kUsage;
  }
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const DatasetError*>(&e) ||
      dynamic_cast<const VocabError*>(&e)) {
    return kIo;
  }
  if (dynamic_cast<const TrainingError*>(&e) || dynamic_cast<const NumericsError*>(&e)) return kTraining;
  if (dynamic_cast<const IncompatibleError*>(&e)) return kIncompatible;
  return kInternal;
}

namespace {

constexpr int kTopWords = 5;

// ---- small file helpers -----------------------------------------------------

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << bytes;
  if (!out) throw IoError("failed writing " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create " + dir.string());
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(root)) return {root};
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// fnv1a64 over (relative path, bytes) of every file, in path order.
std::string tree_checksum(const fs::path& root, const std::string& skip = {}) {
  std::string acc;
  for (const auto& f : files_under(root)) {
    const std::string rel = fs::is_regular_file(root) ? f.filename().string() : fs::relative(f, root).generic_string();
    if (rel == skip) continue;
    acc += rel;
    acc.push_back('\0');
    acc += hex64(fnv1a64(read_file(f)));
  }
  return hex64(fnv1a64(acc));
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---- manifest ---------------------------------------------------------------

class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args) {
    j_["command"] = std::move(command);
    j_["argv"] = args;
    j_["config_path"] = nullptr;
    j_["config"] = json::object();
    j_["seeds"] = json::object();
    j_["inputs"] = json::object();
    j_["artifacts"] = json::array();
    j_["started"] = utc_now();
  }
  void config(const std::string& path, json resolved) {
    j_["config_path"] = path.empty() ? json(nullptr) : json(path);
    j_["config"] = std::move(resolved);
  }
  void seeds(std::uint64_t root, const std::vector<std::string>& streams) {
    json s;
    s["root"] = root;
    for (const auto& label : streams) s["streams"][label] = root;
    j_["seeds"] = std::move(s);
  }
  void extra(const std::string& key, json value) { j_[key] = std::move(value); }
  void input(const std::string& name, const fs::path& path) {
    j_["inputs"][name] = {{"path", path.string()}, {"checksum", tree_checksum(path)}};
  }
  /// Lists every artifact under `dir` with its checksum.
  json finish(const fs::path& dir) {
    j_["artifacts"] = json::array();
    if (fs::is_directory(dir)) {
      for (const auto& f : files_under(dir)) {
        const std::string rel = fs::relative(f, dir).generic_string();
        if (rel == "manifest.json") continue;
        j_["artifacts"].push_back({{"path", rel}, {"checksum", hex64(fnv1a64(read_file(f)))}});
      }
    }
    j_["finished"] = utc_now();
    return j_;
  }
  void write(const fs::path& dir) { write_file(dir / "manifest.json", finish(dir).dump(2) + "\n"); }

 private:
  json j_ = json::object();
};

// ---- shared options -----------------------------------------------------------

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;

  void attach(CLI::App* cmd, bool with_config = true) {
    if (with_config) {
      cmd->add_option("--config", config, "INI settings file");
      cmd->add_option("--set", sets, "override one setting, section.key=value (repeatable)");
    }
    cmd->add_option("--seed", seed, "root seed of every random stream")->capture_default_str();
  }

  Settings settings() const {
    Settings s;
    if (!config.empty()) s.load_file(config);
    for (const auto& a : sets) s.set(a);
    return s;
  }
};

// ---- datasets and checkpoints -----------------------------------------------

struct Dataset {
  Vocabulary vocab;
  ImageSet train, test;
  std::int64_t records = 0;
};

ImageSet load_images(const fs::path& dir, const std::vector<CaptionRecord>& records) {
  ImageSet s;
  s.records = records;
  for (const auto& r : records) s.images.push_back(read_ppm(dir / r.image_path));
  return s;
}

Dataset load_dataset(const fs::path& dir, const TextdataSettings& t, const Vocabulary* vocab) {
  const auto raw = load_raw_dataset(dir);
  Dataset d;
  std::vector<CaptionRecord> records;
  if (vocab) {
    d.vocab = *vocab;
    records = encode_records(raw, *vocab, t.max_len);
  } else {
    const int min_freq = t.min_freq > 0 ? t.min_freq : (is_toy_dataset(dir) ? 1 : 2);
    auto corpus = build_corpus(raw, min_freq, t.max_len, t.captions_per_image);
    d.vocab = std::move(corpus.vocab);
    records = std::move(corpus.records);
  }
  d.records = static_cast<std::int64_t>(records.size());
  const auto split = split_dataset(std::move(records), t.train_fraction, t.split_seed);
  d.train = load_images(dir, split.train);
  d.test = load_images(dir, split.test);
  return d;
}

json textdata_json(const TextdataSettings& t) {
  return {{"max_len", t.max_len},
          {"min_freq", t.min_freq},
          {"train_fraction", t.train_fraction},
          {"split_seed", t.split_seed},
          {"captions_per_image", t.captions_per_image}};
}

TextdataSettings textdata_from(const json& j) {
  TextdataSettings t;
  t.max_len = j.at("max_len").get<std::int64_t>();
  t.min_freq = j.at("min_freq").get<int>();
  t.train_fraction = j.at("train_fraction").get<double>();
  t.split_seed = j.at("split_seed").get<std::uint64_t>();
  t.captions_per_image = j.at("captions_per_image").get<std::int64_t>();
  return t;
}

json encoders_json(const EncoderConfig& e) {
  return {{"vocab_size", e.vocab_size}, {"embed_dim", e.embed_dim}, {"hidden", e.hidden},  {"dim", e.dim},
          {"dropout", e.dropout},       {"image_size", e.image_size}, {"channels", e.channels}};
}

EncoderConfig encoders_from(const json& j) {
  EncoderConfig e;
  e.vocab_size = j.at("vocab_size").get<std::int64_t>();
  e.embed_dim = j.at("embed_dim").get<std::int64_t>();
  e.hidden = j.at("hidden").get<std::int64_t>();
  e.dim = j.at("dim").get<std::int64_t>();
  e.dropout = j.at("dropout").get<double>();
  e.image_size = j.at("image_size").get<int>();
  e.channels = j.at("channels").get<std::vector<std::int64_t>>();
  return e;
}

json damsm_json(const DamsmConfig& d) {
  return {{"gamma1", d.gamma1}, {"gamma2", d.gamma2}, {"gamma3", d.gamma3}};
}

json gan_json(const GanConfig& g) {
  return {{"beta", g.beta}, {"z_dim", g.z_dim}, {"c_dim", g.c_dim}, {"ngf", g.ngf}, {"ndf", g.ndf}};
}

GanConfig gan_from(const json& j, GanConfig g) {
  g.beta = j.at("beta").get<double>();
  g.z_dim = j.at("z_dim").get<int>();
  g.c_dim = j.at("c_dim").get<int>();
  g.ngf = j.at("ngf").get<int>();
  g.ndf = j.at("ndf").get<int>();
  return g;
}

/// Accepts either a run directory or its checkpoint/ subdirectory.
fs::path checkpoint_dir(const fs::path& p) {
  if (fs::is_directory(p / "checkpoint")) return p / "checkpoint";
  return p;
}

json read_model_json(const fs::path& ckpt, const std::string& kind) {
  const fs::path file = ckpt / "model.json";
  if (!fs::exists(file)) throw IoError("not a checkpoint (no model.json): " + ckpt.string());
  json j;
  try {
    j = json::parse(read_file(file));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + file.string() + ": " + e.what());
  }
  if (j.value("kind", "") != kind) {
    throw IncompatibleError(ckpt.string() + " holds a '" + j.value("kind", "?") + "' checkpoint, expected '" + kind + "'");
  }
  return j;
}

void write_checkpoint(const fs::path& dir, const json& model, const Vocabulary* vocab,
                      const std::vector<NamedTensor>& tensors) {
  fs::remove_all(dir);
  save_archive(dir, tensors);
  if (vocab) vocab->save(dir / "vocab.txt");
  write_file(dir / "model.json", model.dump(2) + "\n");
}

DamsmEncoders encoders_from_archive(const fs::path& ckpt, const json& model) {
  DamsmEncoders enc(encoders_from(model.at("encoders")), 0);
  assign_from_archive(load_archive(ckpt), enc.params());
  return enc;
}

std::string fixed6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---- commands -----------------------------------------------------------------

struct ToygenArgs {
  std::string out;
  std::int64_t n = 240;
  int size = 32;
  int captions = 10;
  Common common;
};

int cmd_toygen(const ToygenArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  Manifest m("toygen", argv);
  ToySpec spec = default_toy_spec(a.n, a.common.seed);
  spec.image_size = a.size;
  spec.captions_per_image = a.captions;
  make_dir(a.out);
  const auto items = gen_toy_dataset(spec, a.out);
  m.config("", {{"n", a.n}, {"size", a.size}, {"captions", a.captions}, {"seed", a.common.seed}});
  m.seeds(a.common.seed, {"toy"});
  m.write(a.out);
  out << "wrote " << items.size() << " images, " << items.size() * static_cast<std::size_t>(a.captions)
      << " captions to " << a.out << "\n";
  return kOk;
}

struct TrainDamsmArgs {
  std::string data, out;
  Common common;
};

int cmd_train_damsm(const TrainDamsmArgs& a, const std::vector<std::string>& argv, std::ostream& out,
                    std::ostream& err) {
  Manifest m("train-damsm", argv);
  const Settings s = a.common.settings();
  const auto t = s.textdata();
  auto ecfg = s.encoders();
  const auto dcfg = s.damsm();
  const auto data = load_dataset(a.data, t, nullptr);
  if (data.train.images.empty()) throw DatasetError("empty training split");
  ecfg.vocab_size = data.vocab.size();
  ecfg.image_size = data.train.images.front().width;
  DamsmEncoders enc(ecfg, a.common.seed);
  const auto history = train_damsm(enc, data.train, data.test, dcfg, a.common.seed, [&](const DamsmEpoch& e) {
    err << "damsm epoch " << e.epoch << " total " << fixed6(e.loss.total) << " top1_c2i " << fixed6(e.top1_c2i)
        << "\n";
  });

  make_dir(a.out);
  json model = {{"kind", "damsm"},
                {"encoders", encoders_json(ecfg)},
                {"damsm", damsm_json(dcfg)},
                {"textdata", textdata_json(t)},
                {"init_seed", a.common.seed}};
  write_checkpoint(fs::path(a.out) / "checkpoint", model, &data.vocab, enc.params());
  write_file(fs::path(a.out) / "history.csv", damsm_history_csv(history));

  m.config(a.common.config, s.resolved());
  m.seeds(a.common.seed,
          {"init/text_encoder", "init/image_encoder", "damsm/order", "damsm/caption", "damsm/dropout"});
  m.extra("dataset", {{"path", a.data}, {"records", data.records}, {"train", data.train.records.size()},
                      {"test", data.test.records.size()}, {"vocab_size", data.vocab.size()}});
  m.input("data", a.data);
  m.write(a.out);
  out << "trained DAMSM for " << history.size() << " epochs; checkpoint in " << (fs::path(a.out) / "checkpoint").string()
      << "\n";
  return kOk;
}

struct TrainGanArgs {
  std::string data, damsm, out;
  Common common;
};

int cmd_train_gan(const TrainGanArgs& a, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  Manifest m("train-gan", argv);
  const Settings s = a.common.settings();
  const auto gcfg = s.gan();
  const auto dcfg = s.damsm();
  const auto wanted = s.encoders();
  auto ck = load_damsm_checkpoint(a.damsm);
  if (ck.enc.config.dim != wanted.dim) {
    throw IncompatibleError("DAMSM checkpoint has D=" + std::to_string(ck.enc.config.dim) +
                            " but the configuration expects D=" + std::to_string(wanted.dim));
  }
  const auto data = load_dataset(a.data, ck.textdata, &ck.vocab);
  GanModel model(gcfg, ck.enc.config.dim, a.common.seed);
  const auto result = train_gan(model, ck.enc, data.train, dcfg, a.common.seed, [&](const GanEpoch& e) {
    err << "gan epoch " << e.epoch << " d " << fixed6(e.d[0] + e.d[1] + e.d[2]) << " lg "
        << fixed6(e.lg[0] + e.lg[1] + e.lg[2]) << " damsm " << fixed6(e.damsm) << "\n";
  });

  const fs::path dir(a.out);
  make_dir(dir / "samples");
  for (const auto& grid : result.samples)
    for (std::size_t st = 0; st < 3; ++st) {
      char name[48];
      std::snprintf(name, sizeof name, "epoch%03d_stage%zu.ppm", grid.epoch, st);
      write_ppm(dir / "samples" / name, grid.stages[st]);
    }
  write_file(dir / "history.csv", gan_history_csv(result.history));
  json model_json = {{"kind", "attngan"},
                     {"encoders", ck.model.at("encoders")},
                     {"damsm", damsm_json(dcfg)},
                     {"textdata", ck.model.at("textdata")},
                     {"gan", gan_json(gcfg)},
                     {"init_seed", a.common.seed}};
  auto tensors = ck.enc.params();
  for (auto& t : model.state()) tensors.push_back(std::move(t));
  write_checkpoint(dir / "checkpoint", model_json, &ck.vocab, tensors);

  m.config(a.common.config, s.resolved());
  m.seeds(a.common.seed, {"init/generator", "init/discriminator0", "init/discriminator1", "init/discriminator2",
                          "gan/order", "gan/caption", "gan/noise", "gan/ca", "gan/eval_noise"});
  m.extra("dataset", {{"path", a.data}, {"train", data.train.records.size()}, {"test", data.test.records.size()}});
  m.extra("stage_sizes", kStageSizes);
  m.input("data", a.data);
  m.input("damsm", checkpoint_dir(a.damsm));
  m.write(dir);
  out << "trained GAN for " << result.history.size() << " epochs; checkpoint in " << (dir / "checkpoint").string()
      << "\n";
  return kOk;
}

struct GenerateArgs {
  std::string ckpt, caption, out;
  std::int64_t n = 1;
  Common common;
};

int cmd_generate(const GenerateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  Manifest m("generate", argv);
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  const auto ck = load_gan_checkpoint(a.ckpt);
  const auto tokens = tokenize(a.caption);
  if (tokens.empty()) throw EmptyCaptionError("caption has no tokens after tokenization: '" + a.caption + "'");
  const TokenizedCaption cap = encode_caption(ck.vocab, tokens, ck.textdata.max_len, nfc(a.caption));
  const std::vector<const TokenizedCaption*> caps(static_cast<std::size_t>(a.n), &cap);
  RngStream noise(a.common.seed, "generate/noise");
  const Tensor z = sample_noise(a.n, ck.gan.generator.z_dim(), noise);
  const auto pyramid = generate_pyramid(ck.gan, ck.enc, caps, z);

  const fs::path dir(a.out);
  make_dir(dir);
  for (std::int64_t i = 0; i < a.n; ++i)
    for (std::size_t st = 0; st < 3; ++st) {
      char name[48];
      std::snprintf(name, sizeof name, "item%03lld_stage%zu.ppm", static_cast<long long>(i), st);
      write_ppm(dir / name, tensor_to_image(pyramid.images[st], i));
    }
  const auto words = caption_tokens(ck.vocab, cap);
  for (std::size_t k = 0; k < 2; ++k) {
    const Tensor& alpha = pyramid.attention[k];
    const std::int64_t T = alpha.dim(1);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(a.n * T), 0);
    for (std::int64_t i = 0; i < a.n; ++i)
      for (std::int64_t t = 0; t < cap.word_count() && t < T; ++t) mask[static_cast<std::size_t>(i * T + t)] = 1;
    const std::vector<std::vector<std::string>> toks(static_cast<std::size_t>(a.n), words);
    const auto top = top_attended(alpha, mask, toks, kTopWords);
    const int stage = static_cast<int>(k) + 1;
    write_attention_dump(dir, "attention_stage" + std::to_string(stage), stage, alpha, top,
                         std::vector<std::string>(static_cast<std::size_t>(a.n), cap.raw));
  }

  m.config("", {{"caption", a.caption}, {"n", a.n}, {"seed", a.common.seed}});
  m.seeds(a.common.seed, {"generate/noise"});
  m.extra("tokens", words);
  m.input("checkpoint", checkpoint_dir(a.ckpt));
  m.write(dir);
  out << "wrote " << a.n << " pyramids and attention sidecars to " << dir.string() << "\n";
  return kOk;
}

struct EvaluateArgs {
  std::string ckpt, data, classifier, out;
  bool identity = false, untrained = false;
  Common common;
};

int cmd_evaluate(const EvaluateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  Manifest m("evaluate", argv);
  if (a.identity && a.untrained) throw ConfigError("--identity and --untrained are exclusive");
  const Settings s = a.common.settings();
  const auto ecfg = s.eval();
  auto ck = load_gan_checkpoint(a.ckpt);
  const auto cls = load_classifier_checkpoint(a.classifier);
  const auto data = load_dataset(a.data, ck.textdata, &ck.vocab);
  if (data.test.images.size() < 2) throw DatasetError("test split needs at least 2 images");
  const std::int64_t size = data.test.images.front().width;
  if (cls.classifier.image_size() != size || size != kStageSizes[2]) {
    throw IncompatibleError("classifier expects " + std::to_string(cls.classifier.image_size()) +
                            " px images; test images are " + std::to_string(size) + " px and the generator emits " +
                            std::to_string(kStageSizes[2]) + " px");
  }

  std::string generator = "trained";
  std::vector<Image> generated;
  if (a.identity) {
    generator = "identity";
    generated = data.test.images;
  } else {
    if (a.untrained) {
      generator = "untrained";
      ck.gan = GanModel(ck.gan.config, ck.enc.config.dim, ck.init_seed);
    }
    generated = generate_samples(ck.gan, ck.enc, data.test, ecfg.n_samples, a.common.seed);
  }
  const auto report = evaluate_images(cls.classifier, generated, data.test.images, ecfg.splits, a.common.seed);
  for (const auto& w : report.warnings) out << "warning: " << w << "\n";

  json j = metrics_json(report);
  j["generator"] = generator;
  j["warnings"] = report.warnings;
  m.config(a.common.config, s.resolved());
  m.seeds(a.common.seed, {"eval/noise"});
  m.extra("reference", {{"split", "test"}, {"images", data.test.images.size()}});
  m.input("checkpoint", checkpoint_dir(a.ckpt));
  m.input("classifier", checkpoint_dir(a.classifier));
  m.input("data", a.data);
  j["manifest"] = m.finish(fs::path());
  const fs::path file(a.out);
  if (file.has_parent_path()) make_dir(file.parent_path());
  write_file(file, j.dump(2) + "\n");
  out << "fid " << j["fid"].dump() << " is " << j["is_mean"].dump() << " +- " << j["is_std"].dump() << "\n";
  return kOk;
}

struct TrainClassifierArgs {
  std::string out;
  Common common;
};

int cmd_train_classifier(const TrainClassifierArgs& a, const std::vector<std::string>& argv, std::ostream& out,
                         std::ostream& err) {
  Manifest m("train-classifier", argv);
  const Settings s = a.common.settings();
  const auto cfg = s.classifier();
  const auto data = toy_classifier_split(cfg.n_images, a.common.seed);
  const auto fit = train_standin_classifier(data.train, data.heldout, data.classes, cfg, a.common.seed);
  err << "classifier held-out accuracy " << fixed6(fit.heldout_accuracy) << "\n";

  const fs::path dir(a.out);
  make_dir(dir);
  json model = {{"kind", "standin-classifier"},
                {"classes", data.classes},
                {"feature_dim", fit.model.feature_dim()},
                {"image_size", fit.model.image_size()},
                {"heldout_accuracy", fit.heldout_accuracy},
                {"id", fit.model.id()}};
  write_checkpoint(dir / "checkpoint", model, nullptr, fit.model.params());
  std::string csv = "epoch,loss\n";
  for (std::size_t e = 0; e < fit.epoch_loss.size(); ++e) csv += std::to_string(e + 1) + "," + fixed6(fit.epoch_loss[e]) + "\n";
  write_file(dir / "history.csv", csv);

  m.config(a.common.config, s.resolved());
  m.seeds(a.common.seed, {"toy", "classifier/split", "init/classifier", "classifier/order"});
  m.extra("classifier", {{"id", fit.model.id()}, {"heldout_accuracy", fit.heldout_accuracy},
                         {"train", data.train.images.size()}, {"heldout", data.heldout.images.size()}});
  m.write(dir);
  out << "classifier " << fit.model.id() << " held-out accuracy " << fixed6(fit.heldout_accuracy) << "\n";
  return kOk;
}

}  // namespace

DamsmCheckpoint load_damsm_checkpoint(const fs::path& path) {
  const fs::path ckpt = checkpoint_dir(path);
  DamsmCheckpoint c;
  c.model = read_model_json(ckpt, "damsm");
  c.vocab = Vocabulary::load(ckpt / "vocab.txt");
  c.textdata = textdata_from(c.model.at("textdata"));
  c.enc = encoders_from_archive(ckpt, c.model);
  return c;
}

GanCheckpoint load_gan_checkpoint(const fs::path& path) {
  const fs::path ckpt = checkpoint_dir(path);
  GanCheckpoint c;
  c.model = read_model_json(ckpt, "attngan");
  c.vocab = Vocabulary::load(ckpt / "vocab.txt");
  c.textdata = textdata_from(c.model.at("textdata"));
  c.enc = encoders_from_archive(ckpt, c.model);
  const auto& d = c.model.at("damsm");
  c.damsm.gamma1 = d.at("gamma1").get<double>();
  c.damsm.gamma2 = d.at("gamma2").get<double>();
  c.damsm.gamma3 = d.at("gamma3").get<double>();
  c.init_seed = c.model.at("init_seed").get<std::uint64_t>();
  c.gan = GanModel(gan_from(c.model.at("gan"), GanConfig{}), c.enc.config.dim, c.init_seed);
  assign_from_archive(load_archive(ckpt), c.gan.state());
  return c;
}

ClassifierCheckpoint load_classifier_checkpoint(const fs::path& path) {
  const fs::path ckpt = checkpoint_dir(path);
  ClassifierCheckpoint c;
  c.model = read_model_json(ckpt, "standin-classifier");
  RngStream rng(0, "init/classifier");
  c.classifier = StandInClassifier(c.model.at("classes").get<std::int64_t>(), c.model.at("feature_dim").get<std::int64_t>(),
                                   c.model.at("image_size").get<std::int64_t>(), rng);
  assign_from_archive(load_archive(ckpt), c.classifier.params());
  return c;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bangla attentional text-to-image GAN at desk scale", "bangla-t2i"};
  app.require_subcommand(1);
  app.footer(Settings::reference() +
             "\nExit codes: 0 ok, 1 internal error, 2 usage, 3 I/O, 4 training failure, 5 incompatible inputs.");

  ToygenArgs toygen;
  auto* c_toygen = app.add_subcommand("toygen", "render the synthetic shapes dataset");
  c_toygen->add_option("--out", toygen.out, "output directory")->required();
  c_toygen->add_option("--n", toygen.n, "number of images")->capture_default_str()->check(CLI::PositiveNumber);
  c_toygen->add_option("--size", toygen.size, "image side in pixels")->capture_default_str()->check(CLI::Range(8, 1024));
  c_toygen->add_option("--captions", toygen.captions, "captions per image")->capture_default_str()->check(CLI::PositiveNumber);
  toygen.common.attach(c_toygen, false);

  TrainDamsmArgs damsm;
  auto* c_damsm = app.add_subcommand("train-damsm", "pretrain the text and image encoders");
  c_damsm->add_option("--data", damsm.data, "dataset directory")->required();
  c_damsm->add_option("--out", damsm.out, "output directory")->required();
  damsm.common.attach(c_damsm);

  TrainGanArgs gan;
  auto* c_gan = app.add_subcommand("train-gan", "train the three-stage generator against frozen encoders");
  c_gan->add_option("--data", gan.data, "dataset directory")->required();
  c_gan->add_option("--damsm", gan.damsm, "train-damsm output or checkpoint directory")->required();
  c_gan->add_option("--out", gan.out, "output directory")->required();
  gan.common.attach(c_gan);

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "render image pyramids and attention sidecars for one caption");
  c_gen->add_option("--ckpt", gen.ckpt, "train-gan output or checkpoint directory")->required();
  c_gen->add_option("--caption", gen.caption, "Bangla caption")->required();
  c_gen->add_option("--n", gen.n, "pyramids to render")->capture_default_str();
  c_gen->add_option("--out", gen.out, "output directory")->required();
  gen.common.attach(c_gen, false);

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "FID and Inception Score against the real test split");
  c_ev->add_option("--ckpt", ev.ckpt, "train-gan output or checkpoint directory")->required();
  c_ev->add_option("--data", ev.data, "dataset directory")->required();
  c_ev->add_option("--classifier", ev.classifier, "train-classifier output or checkpoint directory")->required();
  c_ev->add_option("--out", ev.out, "metrics JSON file")->required();
  c_ev->add_flag("--identity", ev.identity, "score the real test images against themselves");
  c_ev->add_flag("--untrained", ev.untrained, "score a freshly initialised generator with the checkpoint's seed");
  ev.common.attach(c_ev);

  TrainClassifierArgs cls;
  auto* c_cls = app.add_subcommand("train-classifier", "train the stand-in classifier on rendered toy images");
  c_cls->add_option("--out", cls.out, "output directory")->required();
  cls.common.attach(c_cls);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c_toygen->parsed()) return cmd_toygen(toygen, args, out);
    if (c_damsm->parsed()) return cmd_train_damsm(damsm, args, out, err);
    if (c_gan->parsed()) return cmd_train_gan(gan, args, out, err);
    if (c_gen->parsed()) return cmd_generate(gen, args, out);
    if (c_ev->parsed()) return cmd_evaluate(ev, args, out);
    if (c_cls->parsed()) return cmd_train_classifier(cls, args, out, err);
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << "error: " << e.what() << "\n";
    if (code == kUsage) err << "run with --help for usage\n";
    return code;
  }
  return kInternal;
}

}  // namespace t2i::cli
