#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace t2i {

/// Counter-based random stream (Philox4x32-10) keyed by (seed, label).
///
/// The label is hashed into the key, so "init", "noise" and "data" streams
/// of one seed never interfere. Every draw is a pure function of
/// (seed, label, draw index); no platform-dependent engine is involved.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view label);

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }
  std::uint64_t draws() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (both variates used).
  double normal();
  /// Uniform integer in [0, n), unbiased (rejection).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Child stream with label "<label>/<suffix>", same seed.
  RngStream child(std::string_view suffix) const;

 private:
  std::array<std::uint32_t, 4> block(std::uint64_t counter) const;

  std::uint64_t seed_;
  std::string label_;
  std::array<std::uint32_t, 2> key_{};
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int buffered_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace t2i
