#include "dmeta/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dmeta {

namespace {

constexpr float kBackground = 1.0f;

float bilinear(const float* plane, int h, int w, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto at = [&](int ix, int iy) -> float {
    if (ix < 0 || ix >= w || iy < 0 || iy >= h) return kBackground;
    return plane[static_cast<std::size_t>(iy) * w + ix];
  };
  const double top = (1 - fx) * at(x0, y0) + fx * at(x0 + 1, y0);
  const double bot = (1 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1);
  return static_cast<float>((1 - fy) * top + fy * bot);
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0f;
  if (d == 0) {
    h = 0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0f) / 6.0f;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0f) / 6.0f;
  } else {
    h = ((r - g) / d + 4.0f) / 6.0f;
  }
  if (h < 0) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = std::fmod(h, 1.0f) * 6.0f;
  const int i = static_cast<int>(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s);
  const float q = v * (1 - s * f);
  const float t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace

AugmentParams sample_augment_params(RngStream& rng) {
  AugmentParams p;
  p.hflip = rng.bernoulli(0.5);
  p.hue_shift = static_cast<float>(rng.uniform(-0.08, 0.08));
  p.saturation = static_cast<float>(rng.uniform(0.6, 1.6));
  p.brightness = static_cast<float>(rng.uniform(-0.05, 0.05));
  p.contrast = static_cast<float>(rng.uniform(0.7, 1.3));
  p.rotation = static_cast<float>(rng.uniform(-std::numbers::pi / 4, std::numbers::pi / 4));
  p.crop_frac = static_cast<float>(rng.uniform(0.01, 0.20));
  p.crop_cx = static_cast<float>(rng.uniform());
  p.crop_cy = static_cast<float>(rng.uniform());
  return p;
}

Tensor apply_augment(const Tensor& image, const AugmentParams& params) {
  if (image.ndim() != 3) throw std::invalid_argument("augment: image must be [C,H,W]");
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  Tensor out = image;

  if (params.hflip) {
    for (int c = 0; c < C; ++c) {
      float* p = out.ptr() + c * plane;
      for (int y = 0; y < H; ++y) {
        std::reverse(p + static_cast<std::int64_t>(y) * W,
                     p + static_cast<std::int64_t>(y) * W + W);
      }
    }
  }

  if (C == 3 && (params.hue_shift != 0.0f || params.saturation != 1.0f)) {
    for (std::int64_t i = 0; i < plane; ++i) {
      float h, s, v;
      rgb_to_hsv(out[i], out[plane + i], out[2 * plane + i], h, s, v);
      h = h + params.hue_shift;
      if (h < 0) h += 1.0f;
      s = std::clamp(s * params.saturation, 0.0f, 1.0f);
      hsv_to_rgb(h, s, v, out.data[static_cast<std::size_t>(i)],
                 out.data[static_cast<std::size_t>(plane + i)],
                 out.data[static_cast<std::size_t>(2 * plane + i)]);
    }
  }

  if (params.brightness != 0.0f) {
    for (auto& v : out.data) v += params.brightness;
  }
  if (params.contrast != 1.0f) {
    for (int c = 0; c < C; ++c) {
      float* p = out.ptr() + c * plane;
      double mean = 0;
      for (std::int64_t i = 0; i < plane; ++i) mean += p[i];
      mean /= static_cast<double>(plane);
      for (std::int64_t i = 0; i < plane; ++i) {
        p[i] = static_cast<float>((p[i] - mean) * params.contrast + mean);
      }
    }
  }

  if (params.rotation != 0.0f) {
    Tensor rotated(out.shape);
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    const double cs = std::cos(params.rotation), sn = std::sin(params.rotation);
    for (int c = 0; c < C; ++c) {
      const float* src = out.ptr() + c * plane;
      float* dst = rotated.ptr() + c * plane;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double sx = cx + cs * dx + sn * dy;
          const double sy = cy - sn * dx + cs * dy;
          dst[static_cast<std::int64_t>(y) * W + x] = bilinear(src, H, W, sx, sy);
        }
      }
    }
    out = std::move(rotated);
  }

  if (params.crop_frac > 0.0f) {
    if (params.crop_frac >= 1.0f) throw std::invalid_argument("augment: crop removes everything");
    const double scale = std::sqrt(1.0 - params.crop_frac);
    const double wh = scale * H, ww = scale * W;
    const double y0 = params.crop_cy * (H - wh);
    const double x0 = params.crop_cx * (W - ww);
    Tensor cropped(out.shape);
    for (int c = 0; c < C; ++c) {
      const float* src = out.ptr() + c * plane;
      float* dst = cropped.ptr() + c * plane;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const double sy = y0 + (y + 0.5) * wh / H - 0.5;
          const double sx = x0 + (x + 0.5) * ww / W - 0.5;
          dst[static_cast<std::int64_t>(y) * W + x] = bilinear(src, H, W, sx, sy);
        }
      }
    }
    out = std::move(cropped);
  }

  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace dmeta
