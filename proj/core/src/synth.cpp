#include <algorithm>
#include <cmath>
#include <numbers>

#include "dmeta/dataset.hpp"
#include "dmeta/rng.hpp"

namespace dmeta {

namespace {

constexpr int kSize = 28;

struct Stroke {
  double px[3];
  double py[3];
  double thickness;
};

// Ink is dark (0) on a white (1) background, like as-loaded Omniglot.
void stamp(std::vector<float>& canvas, double x, double y, double radius) {
  const int x0 = std::max(0, static_cast<int>(std::floor(x - radius - 1)));
  const int x1 = std::min(kSize - 1, static_cast<int>(std::ceil(x + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(y - radius - 1)));
  const int y1 = std::min(kSize - 1, static_cast<int>(std::ceil(y + radius + 1)));
  for (int iy = y0; iy <= y1; ++iy) {
    for (int ix = x0; ix <= x1; ++ix) {
      const double d = std::hypot(ix - x, iy - y);
      // antialiased edge: fully dark inside, linear ramp over one pixel
      const double v = std::clamp(d - radius + 0.5, 0.0, 1.0);
      float& px = canvas[static_cast<std::size_t>(iy) * kSize + ix];
      px = std::min(px, static_cast<float>(v));
    }
  }
}

void draw_stroke(std::vector<float>& canvas, const Stroke& s) {
  const int steps = 60;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const double u = 1.0 - t;
    const double x = u * u * s.px[0] + 2 * u * t * s.px[1] + t * t * s.px[2];
    const double y = u * u * s.py[0] + 2 * u * t * s.py[1] + t * t * s.py[2];
    stamp(canvas, x, y, s.thickness * 0.5);
  }
}

}  // namespace

Dataset synth_glyphs(int num_classes, int per_class, std::uint64_t seed,
                     const SynthGlyphParams& params) {
  if (num_classes < 2) throw std::invalid_argument("synth_glyphs: need >= 2 classes");
  if (per_class < 1) throw std::invalid_argument("synth_glyphs: need >= 1 image per class");

  Dataset ds;
  ds.name = "synthetic";
  ds.split = "pretraining";
  ds.height = kSize;
  ds.width = kSize;
  ds.channels = 1;
  ds.pixels.reserve(static_cast<std::size_t>(num_classes) * per_class * kSize * kSize);

  RngStream root(seed);
  for (int c = 0; c < num_classes; ++c) {
    RngStream class_rng = root.derive("class", c);
    const int n_strokes = params.strokes_min +
        static_cast<int>(class_rng.uniform_int(params.strokes_max - params.strokes_min + 1));
    std::vector<Stroke> proto(static_cast<std::size_t>(n_strokes));
    for (auto& s : proto) {
      for (int p = 0; p < 3; ++p) {
        s.px[p] = class_rng.uniform(5.0, 23.0);
        s.py[p] = class_rng.uniform(5.0, 23.0);
      }
      s.thickness = class_rng.uniform(params.thickness_min, params.thickness_max);
    }

    ds.class_index.emplace_back();
    for (int i = 0; i < per_class; ++i) {
      RngStream jitter = root.derive("class", c).derive("sample", i);
      const double theta = jitter.uniform(-params.rotation_deg, params.rotation_deg) *
                           std::numbers::pi / 180.0;
      const double tx = jitter.uniform(-params.translate_px, params.translate_px);
      const double ty = jitter.uniform(-params.translate_px, params.translate_px);
      const double tscale = jitter.uniform(0.9, 1.1);
      const double cx = (kSize - 1) / 2.0, cy = (kSize - 1) / 2.0;

      std::vector<float> canvas(static_cast<std::size_t>(kSize) * kSize, 1.0f);
      for (const Stroke& s : proto) {
        Stroke js = s;
        js.thickness = s.thickness * tscale;
        for (int p = 0; p < 3; ++p) {
          const double jx = s.px[p] + jitter.normal(0.0, params.control_jitter_px);
          const double jy = s.py[p] + jitter.normal(0.0, params.control_jitter_px);
          const double dx = jx - cx, dy = jy - cy;
          js.px[p] = cx + std::cos(theta) * dx - std::sin(theta) * dy + tx;
          js.py[p] = cy + std::sin(theta) * dx + std::cos(theta) * dy + ty;
        }
        draw_stroke(canvas, js);
      }
      if (params.noise_sigma > 0) {
        for (float& v : canvas) {
          v = std::clamp(v + static_cast<float>(jitter.normal(0.0, params.noise_sigma)),
                         0.0f, 1.0f);
        }
      }
      ds.pixels.insert(ds.pixels.end(), canvas.begin(), canvas.end());
      ds.class_index.back().push_back(ds.num_images());
      ds.labels.push_back(c);
    }
  }
  ds.validate();
  return ds;
}

DatasetPair synth_glyph_pair(int pretrain_classes, int eval_classes, int per_class,
                             std::uint64_t seed, const SynthGlyphParams& params) {
  // Disjoint class ranges of one generator keep the splits independent.
  Dataset all = synth_glyphs(pretrain_classes + eval_classes, per_class, seed, params);
  DatasetPair pair;
  auto take = [&](int begin, int count, const std::string& split) {
    Dataset ds;
    ds.name = all.name;
    ds.split = split;
    ds.height = all.height;
    ds.width = all.width;
    ds.channels = all.channels;
    for (int c = 0; c < count; ++c) {
      ds.class_index.emplace_back();
      for (int idx : all.class_index[static_cast<std::size_t>(begin + c)]) {
        const float* src = all.pixels.data() + static_cast<std::size_t>(idx) * all.image_stride();
        ds.pixels.insert(ds.pixels.end(), src, src + all.image_stride());
        ds.class_index.back().push_back(ds.num_images());
        ds.labels.push_back(c);
      }
    }
    ds.validate();
    return ds;
  };
  pair.pretraining = take(0, pretrain_classes, "pretraining");
  pair.evaluation = take(pretrain_classes, eval_classes, "evaluation");
  return pair;
}

}  // namespace dmeta
