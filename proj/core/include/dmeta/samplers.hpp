#pragma once

#include "dmeta/dataset.hpp"
#include "dmeta/rng.hpp"
#include "dmeta/tasks.hpp"

namespace dmeta {

/// N distinct classes, K support + Q query images per class, sampled
/// without replacement. Labels are task-local indices 0..N-1 in class-major
/// order. Only classes with at least K+Q images are eligible; fewer than N
/// eligible classes is an invalid-argument error.
EvalTask sample_class_task(const Dataset& dataset, int way, int shot,
                           int query_per_class, RngStream& rng);

/// Uniform draw of `size` images without replacement from the whole split,
/// label-free. This is the unfavorable regime used by the divergent search
/// (90 images for Omniglot, 20 for Mini-ImageNet).
TaskBatch sample_ambiguous_batch(const Dataset& dataset, int size, RngStream& rng);

/// UMTRA-style statistically-favorable task: `way` images drawn uniformly,
/// each given a unique label and expanded to `variants_per_image` copies;
/// variant 0 is the unmodified source, the rest go through the
/// augmentation pipeline.
TaskBatch sample_umtra_task(const Dataset& dataset, int way, int variants_per_image,
                            RngStream& rng);

/// Gathers dataset images into a [B,C,H,W] batch tensor.
Tensor gather_images(const Dataset& dataset, const std::vector<int>& indices);

}  // namespace dmeta
