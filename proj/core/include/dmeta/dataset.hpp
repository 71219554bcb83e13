#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmeta/tensor.hpp"

namespace dmeta {

/// Immutable image collection with a class index. Pixels are stored
/// contiguously per image, scaled to [0,1].
struct Dataset {
  std::string name;
  std::string split;  ///< "pretraining" or "evaluation"
  int height = 28;
  int width = 28;
  int channels = 1;
  std::vector<float> pixels;
  std::vector<int> labels;                     ///< class id per image
  std::vector<std::vector<int>> class_index;   ///< class id -> image indices

  std::int64_t image_stride() const {
    return static_cast<std::int64_t>(channels) * height * width;
  }
  int num_images() const { return static_cast<int>(labels.size()); }
  int num_classes() const { return static_cast<int>(class_index.size()); }

  void copy_image(int idx, float* dst) const;
  Tensor image(int idx) const;  ///< [C,H,W]

  /// Checks the structural invariants (index consistency, pixel range).
  void validate() const;
};

struct DatasetPair {
  Dataset pretraining;
  Dataset evaluation;
};

/// Omniglot directory tree: root/alphabet/character/*.png. Classes are
/// (alphabet, character) pairs ordered lexicographically; the first 1200
/// become the pretraining split and the remainder the evaluation split.
/// Images are grayscale, area-average resized to 28x28. Emits a warning on
/// stderr when the observed counts differ from the expected 1200/423
/// classes with 20 images each.
DatasetPair load_omniglot(const std::string& root);

/// Pre-extracted Mini-ImageNet: root/class_name/*.png (or .jpg). 84x84
/// color; first 64 classes pretraining, remainder evaluation.
DatasetPair load_mini_imagenet(const std::string& root);

/// Tuning knobs for the procedural glyph generator.
struct SynthGlyphParams {
  int strokes_min = 2;
  int strokes_max = 4;
  double control_jitter_px = 1.1;   ///< per-sample control point jitter
  double rotation_deg = 12.0;       ///< per-sample rotation range (+-)
  double translate_px = 2.0;        ///< per-sample translation range (+-)
  double thickness_min = 0.9;
  double thickness_max = 1.8;
  double noise_sigma = 0.03;        ///< additive pixel noise
};

/// Procedurally drawn 28x28 glyph classes: each class is a fixed set of
/// quadratic strokes, each sample redraws them with small jitter. Bit
/// deterministic for a given (seed, params).
Dataset synth_glyphs(int num_classes, int per_class, std::uint64_t seed,
                     const SynthGlyphParams& params = {});

/// Pretraining/evaluation pair over disjoint procedural classes.
DatasetPair synth_glyph_pair(int pretrain_classes, int eval_classes, int per_class,
                             std::uint64_t seed, const SynthGlyphParams& params = {});

/// Area-averaging resampler (general box filter).
std::vector<float> resize_area(const std::vector<float>& src, int channels,
                               int src_h, int src_w, int dst_h, int dst_w);

struct DatasetSpec {
  std::string kind = "synthetic";  ///< omniglot | mini-imagenet | synthetic
  std::string root;
  int synth_pretrain_classes = 40;
  int synth_eval_classes = 20;
  int synth_per_class = 20;
  std::uint64_t synth_seed = 9001;
  SynthGlyphParams synth_params;
};

DatasetPair load_dataset(const DatasetSpec& spec);

}  // namespace dmeta
