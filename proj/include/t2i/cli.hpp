#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2i/damsm.hpp"
#include "t2i/gan.hpp"
#include "t2i/metrics.hpp"

namespace t2i::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kTraining = 4,
  kIncompatible = 5,
};

/// Maps a library error to its exit code.
int exit_code_for(const std::exception& e);

struct TextdataSettings {
  std::int64_t max_len = kDefaultMaxLen;
  int min_freq = 0;  // 0: 1 for toy datasets, 2 otherwise
  double train_fraction = 0.7;
  std::uint64_t split_seed = 0;
  std::int64_t captions_per_image = 10;
};

/// Flat `section.key` settings. Precedence: --set > config file > default.
class Settings {
 public:
  Settings();

  /// INI text with [textdata], [encoders], [damsm], [gan], [metrics] sections.
  /// Unknown sections or keys, keys outside a section, and repeats raise
  /// ConfigError.
  void load_file(const std::filesystem::path& path);
  void load_string(const std::string& text, const std::string& origin = "<string>");
  /// "section.key=value".
  void set(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;

  TextdataSettings textdata() const;
  EncoderConfig encoders() const;  // vocab_size and image_size left at defaults
  DamsmConfig damsm() const;
  GanConfig gan() const;
  ClassifierConfig classifier() const;
  EvalConfig eval() const;

  /// {section: {key: typed value}} in registry order.
  nlohmann::ordered_json resolved() const;
  /// "key  default  description" lines for --help.
  static std::string reference();

 private:
  void assign(const std::string& key, const std::string& value, const std::string& origin);
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> origin_;
};

struct DamsmCheckpoint {
  nlohmann::ordered_json model;  // model.json
  Vocabulary vocab;
  TextdataSettings textdata;
  DamsmEncoders enc;
};

struct GanCheckpoint {
  nlohmann::ordered_json model;
  Vocabulary vocab;
  TextdataSettings textdata;
  DamsmConfig damsm;
  DamsmEncoders enc;
  GanModel gan;
  std::uint64_t init_seed = 0;
};

struct ClassifierCheckpoint {
  nlohmann::ordered_json model;
  StandInClassifier classifier;
};

/// Each accepts a command's output directory or its checkpoint/ subdirectory.
DamsmCheckpoint load_damsm_checkpoint(const std::filesystem::path& path);
GanCheckpoint load_gan_checkpoint(const std::filesystem::path& path);
ClassifierCheckpoint load_classifier_checkpoint(const std::filesystem::path& path);

/// Runs one command line (args exclude the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace t2i::cli
