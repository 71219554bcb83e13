#include "dmeta/probability.hpp"

#include <cmath>
#include <stdexcept>

namespace dmeta {

double unique_class_probability(long long classes, long long images_per_class,
                                long long sample_size) {
  const long long c = classes;
  const long long m = images_per_class;
  const long long n = sample_size;
  if (c < 1 || m < 1) throw std::invalid_argument("need c >= 1 and m >= 1");
  if (n < 1 || n > c * m) {
    throw std::invalid_argument("sample size must be in [1, c*m]");
  }
  if (n > c) return 0.0;  // pigeonhole: some class repeats

  // The factorial ratio telescopes into n well-conditioned factors:
  //   P = prod_{i=0}^{n-1} (c - i) * m / (c*m - i)
  // Each factor is in (0, 1]; accumulating in log space keeps very small
  // probabilities exact to double precision without lgamma cancellation.
  double log_p = 0.0;
  for (long long i = 0; i < n; ++i) {
    log_p += std::log(static_cast<double>(c - i) * static_cast<double>(m) /
                      (static_cast<double>(c) * static_cast<double>(m) -
                       static_cast<double>(i)));
  }
  return std::exp(log_p);
}

}  // namespace dmeta
