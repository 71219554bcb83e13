#pragma once

namespace dmeta {

/// Probability that N images drawn without replacement from c classes of m
/// images each are all from distinct classes:
///   P = c! * m^N * (c*m - N)! / ((c - N)! * (c*m)!)
/// Evaluated with log-gamma to stay exact-in-double for large arguments.
/// N > c yields 0. Throws std::invalid_argument unless 1 <= N <= c*m.
double unique_class_probability(long long classes, long long images_per_class,
                                long long sample_size);

}  // namespace dmeta
