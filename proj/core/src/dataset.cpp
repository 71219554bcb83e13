#include "dmeta/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>

#include "dmeta/errors.hpp"

namespace fs = std::filesystem;

namespace dmeta {

void Dataset::copy_image(int idx, float* dst) const {
  if (idx < 0 || idx >= num_images()) throw std::invalid_argument("image index out of range");
  std::memcpy(dst, pixels.data() + static_cast<std::size_t>(idx) * image_stride(),
              static_cast<std::size_t>(image_stride()) * sizeof(float));
}

Tensor Dataset::image(int idx) const {
  Tensor t({channels, height, width});
  copy_image(idx, t.ptr());
  return t;
}

void Dataset::validate() const {
  if (pixels.size() != static_cast<std::size_t>(image_stride()) * labels.size()) {
    throw std::invalid_argument("dataset: pixel buffer does not match image count");
  }
  std::size_t indexed = 0;
  for (std::size_t c = 0; c < class_index.size(); ++c) {
    for (int idx : class_index[c]) {
      if (idx < 0 || idx >= num_images() ||
          labels[static_cast<std::size_t>(idx)] != static_cast<int>(c)) {
        throw std::invalid_argument("dataset: class index inconsistent with labels");
      }
      ++indexed;
    }
  }
  if (indexed != labels.size()) {
    throw std::invalid_argument("dataset: class index does not cover all images");
  }
  for (float p : pixels) {
    if (!(p >= 0.0f && p <= 1.0f)) {
      throw std::invalid_argument("dataset: pixel outside [0,1]");
    }
  }
}

std::vector<float> resize_area(const std::vector<float>& src, int channels,
                               int src_h, int src_w, int dst_h, int dst_w) {
  std::vector<float> dst(static_cast<std::size_t>(channels) * dst_h * dst_w);
  const double sy = static_cast<double>(src_h) / dst_h;
  const double sx = static_cast<double>(src_w) / dst_w;
  for (int c = 0; c < channels; ++c) {
    const float* in = src.data() + static_cast<std::size_t>(c) * src_h * src_w;
    float* out = dst.data() + static_cast<std::size_t>(c) * dst_h * dst_w;
    for (int y = 0; y < dst_h; ++y) {
      const double y0 = y * sy, y1 = (y + 1) * sy;
      for (int x = 0; x < dst_w; ++x) {
        const double x0 = x * sx, x1 = (x + 1) * sx;
        double acc = 0.0;
        for (int iy = static_cast<int>(y0); iy < src_h && iy < y1; ++iy) {
          const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          if (wy <= 0) continue;
          for (int ix = static_cast<int>(x0); ix < src_w && ix < x1; ++ix) {
            const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            if (wx <= 0) continue;
            acc += wy * wx * in[static_cast<std::size_t>(iy) * src_w + ix];
          }
        }
        out[static_cast<std::size_t>(y) * dst_w + x] =
            static_cast<float>(acc / (sy * sx));
      }
    }
  }
  return dst;
}

namespace {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;           // 1 or 3
  std::vector<float> pixels;  // planar, [0,1]
};

PngImage read_png(const std::string& path, int want_channels) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open image: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("failed to decode PNG: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (want_channels == 1) {
    png_set_rgb_to_gray(png, 1, -1.0, -1.0);
  } else if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
             png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);

  PngImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = want_channels;
  const int row_ch = static_cast<int>(png_get_channels(png, info));
  std::vector<png_byte> row(static_cast<std::size_t>(img.width) * row_ch);
  img.pixels.resize(static_cast<std::size_t>(want_channels) * img.width * img.height);
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (int y = 0; y < img.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < want_channels; ++c) {
        const int sc = std::min(c, row_ch - 1);
        img.pixels[static_cast<std::size_t>(c) * plane +
                   static_cast<std::size_t>(y) * img.width + x] =
            static_cast<float>(row[static_cast<std::size_t>(x) * row_ch + sc]) / 255.0f;
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png";
}

struct ClassDir {
  std::string key;  // sort key
  std::vector<std::string> files;
};

Dataset build_split(const std::vector<ClassDir>& classes, std::size_t begin,
                    std::size_t end, const std::string& name,
                    const std::string& split, int channels, int out_h, int out_w) {
  Dataset ds;
  ds.name = name;
  ds.split = split;
  ds.height = out_h;
  ds.width = out_w;
  ds.channels = channels;
  for (std::size_t c = begin; c < end; ++c) {
    ds.class_index.emplace_back();
    for (const std::string& file : classes[c].files) {
      PngImage img = read_png(file, channels);
      std::vector<float> px = (img.height == out_h && img.width == out_w)
          ? std::move(img.pixels)
          : resize_area(img.pixels, channels, img.height, img.width, out_h, out_w);
      for (float& v : px) v = std::min(1.0f, std::max(0.0f, v));
      ds.pixels.insert(ds.pixels.end(), px.begin(), px.end());
      ds.class_index.back().push_back(ds.num_images());
      ds.labels.push_back(static_cast<int>(c - begin));
    }
  }
  ds.validate();
  return ds;
}

}  // namespace

DatasetPair load_omniglot(const std::string& root) {
  if (!fs::is_directory(root)) throw IoError("omniglot root is not a directory: " + root);
  std::vector<ClassDir> classes;
  std::vector<fs::path> alphabets;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) alphabets.push_back(e.path());
  }
  std::sort(alphabets.begin(), alphabets.end());
  for (const auto& alphabet : alphabets) {
    std::vector<fs::path> chars;
    for (const auto& e : fs::directory_iterator(alphabet)) {
      if (e.is_directory()) chars.push_back(e.path());
    }
    std::sort(chars.begin(), chars.end());
    for (const auto& ch : chars) {
      ClassDir cd;
      cd.key = alphabet.filename().string() + "/" + ch.filename().string();
      for (const auto& f : fs::directory_iterator(ch)) {
        if (f.is_regular_file() && has_image_extension(f.path())) {
          cd.files.push_back(f.path().string());
        }
      }
      std::sort(cd.files.begin(), cd.files.end());
      if (!cd.files.empty()) classes.push_back(std::move(cd));
    }
  }
  if (classes.empty()) throw IoError("no character classes under " + root);
  std::sort(classes.begin(), classes.end(),
            [](const ClassDir& a, const ClassDir& b) { return a.key < b.key; });

  const std::size_t total = classes.size();
  const std::size_t pretrain = std::min<std::size_t>(1200, total);
  if (total != 1623) {
    std::cerr << "warning: omniglot at " << root << " has " << total
              << " classes (expected 1200 pretraining + 423 evaluation)\n";
  }
  for (const auto& c : classes) {
    if (c.files.size() != 20) {
      std::cerr << "warning: omniglot class " << c.key << " has " << c.files.size()
                << " images (expected 20)\n";
      break;
    }
  }
  DatasetPair pair;
  pair.pretraining = build_split(classes, 0, pretrain, "omniglot", "pretraining", 1, 28, 28);
  pair.evaluation = build_split(classes, pretrain, total, "omniglot", "evaluation", 1, 28, 28);
  return pair;
}

DatasetPair load_mini_imagenet(const std::string& root) {
  if (!fs::is_directory(root)) {
    throw IoError("mini-imagenet root is not a directory: " + root);
  }
  std::vector<ClassDir> classes;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    ClassDir cd;
    cd.key = d.filename().string();
    for (const auto& f : fs::directory_iterator(d)) {
      if (f.is_regular_file() && has_image_extension(f.path())) {
        cd.files.push_back(f.path().string());
      }
    }
    std::sort(cd.files.begin(), cd.files.end());
    if (!cd.files.empty()) classes.push_back(std::move(cd));
  }
  if (classes.empty()) throw IoError("no classes under " + root);
  std::sort(classes.begin(), classes.end(),
            [](const ClassDir& a, const ClassDir& b) { return a.key < b.key; });

  const std::size_t total = classes.size();
  const std::size_t pretrain = std::min<std::size_t>(64, total);
  if (total != 100) {
    std::cerr << "warning: mini-imagenet at " << root << " has " << total
              << " classes (expected 64 pretraining + 36 evaluation)\n";
  }
  DatasetPair pair;
  pair.pretraining = build_split(classes, 0, pretrain, "mini-imagenet", "pretraining", 3, 84, 84);
  pair.evaluation = build_split(classes, pretrain, total, "mini-imagenet", "evaluation", 3, 84, 84);
  return pair;
}

DatasetPair load_dataset(const DatasetSpec& spec) {
  if (spec.kind == "omniglot") return load_omniglot(spec.root);
  if (spec.kind == "mini-imagenet") return load_mini_imagenet(spec.root);
  if (spec.kind == "synthetic") {
    return synth_glyph_pair(spec.synth_pretrain_classes, spec.synth_eval_classes,
                            spec.synth_per_class, spec.synth_seed, spec.synth_params);
  }
  throw std::invalid_argument("unknown dataset kind: " + spec.kind);
}

}  // namespace dmeta
