// SPDX-License-Identifier: Apache-2.0
#include "kdnas/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "kdnas/error.hpp"
#include "kdnas/io.hpp"

namespace kdnas {

InputShape Dataset::shape() const {
  if (images.rank() != 4) throw ValidationError("dataset images must be rank 4");
  return {images.dim(1), images.dim(2), images.dim(3)};
}

void Dataset::validate() const {
  if (images.rank() != 4) throw ValidationError(fmt::format("dataset '{}': images must be rank 4", id));
  if (static_cast<std::size_t>(images.dim(0)) != labels.size()) {
    throw ValidationError(fmt::format("dataset '{}': {} images but {} labels", id, images.dim(0), labels.size()));
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ValidationError(fmt::format("dataset '{}': label {} outside [0, {})", id, y, num_classes));
    }
  }
}

namespace {

std::size_t image_numel(const Dataset& d) {
  return static_cast<std::size_t>(d.images.dim(1)) * d.images.dim(2) * d.images.dim(3);
}

}  // namespace

Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t per = image_numel(data);
  Tensor out({static_cast<int>(indices.size()), data.images.dim(1), data.images.dim(2), data.images.dim(3)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= data.size()) throw ValidationError(fmt::format("example index {} out of range", indices[i]));
    std::copy_n(data.images.data() + indices[i] * per, per, out.data() + i * per);
  }
  return out;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.id = data.id;
  out.num_classes = data.num_classes;
  out.class_names = data.class_names;
  out.images = gather_images(data, indices);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(data.labels[i]);
  return out;
}

Dataset select_classes(const Dataset& data, const std::vector<int>& classes) {
  std::vector<int> relabel(data.num_classes, -1);
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const int c = classes[k];
    if (c < 0 || c >= data.num_classes) throw ValidationError(fmt::format("class {} out of range", c));
    if (relabel[c] != -1) throw ValidationError(fmt::format("class {} listed twice", c));
    relabel[c] = static_cast<int>(k);
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (relabel[data.labels[i]] >= 0) keep.push_back(i);
  }
  Dataset out = subset(data, keep);
  for (auto& y : out.labels) y = relabel[y];
  out.num_classes = static_cast<int>(classes.size());
  out.class_names.clear();
  for (int c : classes) {
    out.class_names.push_back(c < static_cast<int>(data.class_names.size()) ? data.class_names[c] : std::to_string(c));
  }
  return out;
}

TrainValSplit split_train_val(const Dataset& data, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ValidationError(fmt::format("val fraction must be in [0, 1), got {}", val_fraction));
  }
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, val;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    auto nv = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(members.size())));
    if (val_fraction > 0.0 && nv == 0 && members.size() >= 2) nv = 1;
    val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(nv));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(nv), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {subset(data, train), subset(data, val)};
}

Dataset make_synthetic_images(const SyntheticImageConfig& cfg) {
  if (cfg.num_classes < 1 || cfg.per_class < 1) throw ValidationError("synthetic dataset needs classes and examples");
  const auto [ch, h, w] = cfg.shape;
  if (ch < 1 || h < 1 || w < 1) throw ValidationError("synthetic dataset needs a positive image shape");
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t per = static_cast<std::size_t>(ch) * h * w;

  // Prototypes: three random plane waves per channel.
  std::vector<std::vector<double>> protos(cfg.num_classes, std::vector<double>(per, 0.0));
  for (auto& p : protos) {
    for (int c = 0; c < ch; ++c) {
      for (int k = 0; k < 3; ++k) {
        const double fy = std::floor(unit(rng) * 3.0), fx = std::floor(unit(rng) * 3.0);
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        const double amp = normal(rng) * 0.8;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            p[(static_cast<std::size_t>(c) * h + y) * w + x] +=
                amp * std::sin(2.0 * std::numbers::pi * (fy * y / h + fx * x / w) + phase);
          }
        }
      }
    }
  }

  Dataset d;
  d.id = fmt::format("synthetic-{}x{}-{}x{}x{}-n{}-m{}-s{}", cfg.num_classes, cfg.per_class, ch, h, w, cfg.noise,
                     cfg.max_shift, cfg.seed);
  d.num_classes = cfg.num_classes;
  for (int k = 0; k < cfg.num_classes; ++k) d.class_names.push_back(fmt::format("class{:03d}", k));
  const int n = cfg.num_classes * cfg.per_class;
  d.images = Tensor({n, ch, h, w});
  d.labels.resize(n);
  std::uniform_int_distribution<int> shift(-cfg.max_shift, cfg.max_shift);
  for (int i = 0; i < n; ++i) {
    const int label = i % cfg.num_classes;
    d.labels[i] = label;
    const int dy = shift(rng), dx = shift(rng);
    const double gain = 0.7 + 0.6 * unit(rng);
    double* out = d.images.data() + static_cast<std::size_t>(i) * per;
    const auto& p = protos[label];
    for (int c = 0; c < ch; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int sy = ((y + dy) % h + h) % h, sx = ((x + dx) % w + w) % w;
          out[(static_cast<std::size_t>(c) * h + y) * w + x] =
              gain * p[(static_cast<std::size_t>(c) * h + sy) * w + sx] + cfg.noise * normal(rng);
        }
      }
    }
  }
  return d;
}

namespace {

struct NetpbmImage {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // (C, H, W), in [0, 1]
};

class PnmReader {
 public:
  PnmReader(const std::string& bytes, std::string path) : b_(bytes), path_(std::move(path)) {}

  std::string token() {
    for (;;) {
      while (pos_ < b_.size() && std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
      if (pos_ < b_.size() && b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
        continue;
      }
      break;
    }
    const std::size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
    if (start == pos_) fail("unexpected end of file");
    return b_.substr(start, pos_ - start);
  }

  int integer() {
    const std::string t = token();
    int v = 0;
    for (char c : t) {
      if (!std::isdigit(static_cast<unsigned char>(c))) fail(fmt::format("expected an integer, got '{}'", t));
      v = v * 10 + (c - '0');
      if (v > 1 << 24) fail("integer too large");
    }
    return v;
  }

  unsigned raw(int bytes_per_sample) {
    unsigned v = 0;
    for (int k = 0; k < bytes_per_sample; ++k) {
      if (pos_ >= b_.size()) fail("truncated pixel data");
      v = (v << 8) | static_cast<unsigned char>(b_[pos_++]);
    }
    return v;
  }

  void skip_single_whitespace() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) fail("malformed header");
    ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) const { throw DecodeError(fmt::format("{}: {}", path_, what)); }

 private:
  const std::string& b_;
  std::string path_;
  std::size_t pos_ = 0;
};

NetpbmImage read_netpbm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  PnmReader r(bytes, path.string());
  const std::string magic = r.token();
  NetpbmImage img;
  bool binary = false;
  if (magic == "P2" || magic == "P5") {
    img.channels = 1;
  } else if (magic == "P3" || magic == "P6") {
    img.channels = 3;
  } else {
    r.fail(fmt::format("unsupported netpbm magic '{}'", magic));
  }
  binary = magic == "P5" || magic == "P6";
  img.width = r.integer();
  img.height = r.integer();
  const int maxval = r.integer();
  if (img.width < 1 || img.height < 1 || maxval < 1 || maxval > 65535) r.fail("invalid header values");
  if (binary) r.skip_single_whitespace();
  const int bps = maxval > 255 ? 2 : 1;
  const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
  img.pixels.assign(hw * img.channels, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    for (int c = 0; c < img.channels; ++c) {
      const unsigned v = binary ? r.raw(bps) : static_cast<unsigned>(r.integer());
      if (v > static_cast<unsigned>(maxval)) r.fail("sample exceeds maxval");
      img.pixels[c * hw + p] = static_cast<double>(v) / maxval;
    }
  }
  return img;
}

}  // namespace

Dataset load_image_folder(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError(fmt::format("{}: not a directory", root.string()));
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw ValidationError(fmt::format("{}: no class folders", root.string()));

  std::vector<NetpbmImage> images;
  std::vector<int> labels;
  Dataset d;
  d.id = root.filename().string();
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[k])) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      images.push_back(read_netpbm(f));
      labels.push_back(static_cast<int>(k));
    }
    d.class_names.push_back(class_dirs[k].filename().string());
  }
  if (images.empty()) throw ValidationError(fmt::format("{}: no netpbm images found", root.string()));
  int channels = 1;
  for (const auto& img : images) {
    channels = std::max(channels, img.channels);
    if (img.height != images[0].height || img.width != images[0].width) {
      throw ValidationError(fmt::format("{}: images differ in size ({}x{} vs {}x{})", root.string(), img.width,
                                        img.height, images[0].width, images[0].height));
    }
  }
  const int h = images[0].height, w = images[0].width;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  d.num_classes = static_cast<int>(class_dirs.size());
  d.labels = labels;
  d.images = Tensor({static_cast<int>(images.size()), channels, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    double* out = d.images.data() + i * channels * hw;
    for (int c = 0; c < channels; ++c) {
      const int src = images[i].channels == 1 ? 0 : c;
      for (std::size_t p = 0; p < hw; ++p) out[c * hw + p] = images[i].pixels[src * hw + p] - 0.5;
    }
  }
  return d;
}

}  // namespace kdnas
