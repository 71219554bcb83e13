#include "dmeta/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dmeta {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t hash_label(std::uint64_t seed, std::string_view label) {
  // FNV-1a over the label, then splitmix-finalized together with the seed.
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t s = seed ^ h;
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1);
}

RngStream::RngStream(std::uint64_t origin) : origin_(origin) {
  std::uint64_t s = origin;
  engine_.seed(splitmix64(s));
}

RngStream RngStream::derive(std::string_view label, std::int64_t index) const {
  return RngStream(hash_label(hash_label(origin_, label),
                              std::to_string(index)));
}

double RngStream::uniform() {
  return static_cast<double>(u64() >> 11) * 0x1.0p-53;
}

std::int64_t RngStream::uniform_int(std::int64_t n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  // Rejection sampling on the top bits; unbiased and portable.
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t x;
  do {
    x = u64();
  } while (x >= limit);
  return static_cast<std::int64_t>(x % un);
}

double RngStream::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

std::vector<std::int64_t> RngStream::sample_without_replacement(std::int64_t n,
                                                                std::int64_t k) {
  if (k > n || k < 0) {
    throw std::invalid_argument("sample_without_replacement: k out of range");
  }
  std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    const std::int64_t j = i + uniform_int(n - i);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    out.push_back(pool[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace dmeta
