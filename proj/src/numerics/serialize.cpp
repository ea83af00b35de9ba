#include "t2i/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "t2i/errors.hpp"

namespace t2i {

namespace {

template <typename T>
void put_le(std::ostream& out, T v) {
  std::array<unsigned char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("tensor blob truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("T2IT", 4);
  put_le<std::uint16_t>(out, kTensorFormatVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("failed writing tensor blob");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "T2IT", 4) != 0) throw IoError("not a tensor blob (bad magic)");
  const auto version = get_le<std::uint16_t>(in);
  if (version != kTensorFormatVersion) throw IoError("unsupported tensor blob version " + std::to_string(version));
  const auto rank = get_le<std::uint16_t>(in);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::int64_t>(get_le<std::uint64_t>(in));
  std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return read_tensor(in);
}

void save_archive(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream index(dir / "params.tsv", std::ios::binary);
  if (!index) throw IoError("cannot write " + (dir / "params.tsv").string());
  for (const auto& [name, tensor] : tensors) {
    const std::string file = name + ".t2it";
    save_tensor(dir / file, tensor);
    index << name << '\t' << file << '\t';
    for (std::size_t i = 0; i < tensor.rank(); ++i) index << (i ? "," : "") << tensor.shape()[i];
    index << '\n';
  }
}

bool is_archive(const std::filesystem::path& dir) {
  return std::filesystem::is_regular_file(dir / "params.tsv");
}

std::vector<NamedTensor> load_archive(const std::filesystem::path& dir) {
  std::ifstream index(dir / "params.tsv", std::ios::binary);
  if (!index) throw IoError("missing checkpoint index " + (dir / "params.tsv").string());
  std::vector<NamedTensor> out;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name, file;
    if (!std::getline(fields, name, '\t') || !std::getline(fields, file, '\t')) {
      throw IoError("malformed checkpoint index line: " + line);
    }
    out.push_back({name, load_tensor(dir / file)});
  }
  return out;
}

void assign_from_archive(const std::vector<NamedTensor>& archive, const std::vector<NamedTensor>& into) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& item : archive) by_name[item.name] = &item.tensor;
  for (const auto& target : into) {
    auto it = by_name.find(target.name);
    if (it == by_name.end()) throw IncompatibleError("checkpoint lacks tensor " + target.name);
    if (it->second->shape() != target.tensor.shape()) {
      throw IncompatibleError("checkpoint tensor " + target.name + " has shape " + shape_str(it->second->shape()) +
                              ", model expects " + shape_str(target.tensor.shape()));
    }
    Tensor dst = target.tensor;
    std::ranges::copy(it->second->values(), dst.mutable_values().begin());
  }
}

}  // namespace t2i
