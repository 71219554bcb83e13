#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace dmeta {

/// Mixes a label into a seed. Used to derive independent named sub-streams
/// from one master seed, e.g. "iter/3/task/1/noise".
std::uint64_t hash_label(std::uint64_t seed, std::string_view label);

/// Deterministic random stream backed by mt19937_64. All distributions are
/// implemented here rather than with std:: distribution objects, whose
/// output is implementation-defined; this keeps runs bit-reproducible
/// across standard libraries.
///
/// A stream remembers the hash it was created from, so derive() yields the
/// same child stream no matter how many values were drawn from the parent.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t origin);

  static RngStream from_label(std::uint64_t master_seed, std::string_view label) {
    return RngStream(hash_label(master_seed, label));
  }

  RngStream derive(std::string_view label) const {
    return RngStream(hash_label(origin_, label));
  }
  RngStream derive(std::string_view label, std::int64_t index) const;

  std::uint64_t origin() const { return origin_; }

  std::uint64_t u64() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::int64_t uniform_int(std::int64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Box-Muller normal draw.
  double normal(double mean = 0.0, double stddev = 1.0);

  /// Fisher-Yates shuffle (std::shuffle is implementation-defined).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

  /// k distinct indices drawn uniformly from [0, n) in draw order.
  std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k);

 private:
  std::uint64_t origin_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dmeta
