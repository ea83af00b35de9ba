#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "t2i/tensor.hpp"

namespace t2i {

// Tensor blob: "T2IT", u16 version, u16 rank, rank x u64 dims, then f64
// values. Everything little-endian.
inline constexpr std::uint16_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Directory archive: one blob per tensor plus `params.tsv`, an index of
/// `name<TAB>file<TAB>shape` lines in the given order.
void save_archive(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_archive(const std::filesystem::path& dir);
bool is_archive(const std::filesystem::path& dir);

/// Copies archive values into same-named, same-shape tensors of `into`.
/// Missing names or shape mismatches raise IncompatibleError.
void assign_from_archive(const std::vector<NamedTensor>& archive, const std::vector<NamedTensor>& into);

}  // namespace t2i
