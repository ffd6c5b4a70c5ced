#pragma once

#include <filesystem>
#include <fstream>
#include <optional>

#include "revit/tensor.hpp"

namespace revit {

/// Labeled image set; images hold raw pixel intensities in [0, 1].
struct Dataset {
  Tensor<float> images;  // [M, C, H, W]
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.extent(1); }
  std::size_t height() const { return images.extent(2); }
  std::size_t width() const { return images.extent(3); }
  std::size_t image_numel() const { return channels() * height() * width(); }

  /// Copy of image i, [C, H, W].
  Tensor<float> image(std::size_t i) const {
    const std::size_t n = image_numel();
    std::vector<float> v(images.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                         images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    return Tensor<float>(Shape{channels(), height(), width()}, std::move(v));
  }

  void validate() const {
    if (images.rank() != 4 || images.extent(0) != labels.size())
      throw ValidationError("dataset: images/labels mismatch");
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= class_count)
        throw ValidationError("dataset: label " + std::to_string(l) + " outside [0, " +
                              std::to_string(class_count) + ")");
  }
};

/// Geometry of one binary record: 1 label byte followed by C planes of H*W bytes.
struct RecordGeometry {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t record_size() const { return 1 + channels * height * width; }
};

constexpr std::size_t kCifarRecordsPerFile = 10000;

/// Reads a file of fixed-size label+pixel records (the CIFAR-10 binary layout).
inline Dataset load_record_file(const std::filesystem::path& path, const RecordGeometry& geo = {},
                                std::size_t class_count = 10,
                                std::optional<std::size_t> expected_records = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t rs = geo.record_size();
  if (bytes.empty() || bytes.size() % rs != 0)
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                      " is not a multiple of the record size " + std::to_string(rs));
  const std::size_t m = bytes.size() / rs;
  if (expected_records && m != *expected_records)
    throw FormatError(path.string() + ": " + std::to_string(m) + " records, expected " +
                      std::to_string(*expected_records));
  Dataset ds;
  ds.class_count = class_count;
  ds.images = Tensor<float>(Shape{m, geo.channels, geo.height, geo.width});
  ds.labels.resize(m);
  auto img = ds.images.data();
  const std::size_t px = rs - 1;
  for (std::size_t r = 0; r < m; ++r) {
    const unsigned char* rec = bytes.data() + r * rs;
    if (rec[0] >= class_count)
      throw FormatError(path.string() + ": record " + std::to_string(r) + " has label " +
                        std::to_string(int(rec[0])) + " outside [0, " + std::to_string(class_count) + ")");
    ds.labels[r] = rec[0];
    for (std::size_t k = 0; k < px; ++k) img[r * px + k] = static_cast<float>(rec[1 + k]) / 255.0f;
  }
  return ds;
}

inline Dataset concat_datasets(const std::vector<Dataset>& parts, std::string split) {
  if (parts.empty()) throw ValidationError("concat_datasets: no parts");
  const auto& first = parts.front();
  std::size_t m = 0;
  for (const auto& p : parts) m += p.size();
  Dataset ds;
  ds.class_count = first.class_count;
  ds.split = std::move(split);
  ds.images = Tensor<float>(Shape{m, first.channels(), first.height(), first.width()});
  auto dst = ds.images.data().begin();
  for (const auto& p : parts) {
    dst = std::copy(p.images.data().begin(), p.images.data().end(), dst);
    ds.labels.insert(ds.labels.end(), p.labels.begin(), p.labels.end());
  }
  return ds;
}

/// Standard CIFAR-10 binary distribution: data_batch_1..5.bin and test_batch.bin.
inline std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i)
    train.push_back(load_record_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), {}, 10,
                                     kCifarRecordsPerFile));
  auto test = load_record_file(dir / "test_batch.bin", {}, 10, kCifarRecordsPerFile);
  test.split = "test";
  return {concat_datasets(train, "train"), std::move(test)};
}

/// Writes a dataset in the record layout, quantizing pixels to bytes.
inline void write_record_file(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t px = ds.image_numel();
  auto img = ds.images.data();
  std::vector<char> rec(1 + px);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    rec[0] = static_cast<char>(ds.labels[r]);
    for (std::size_t k = 0; k < px; ++k) {
      const float v = std::clamp(img[r * px + k], 0.0f, 1.0f);
      rec[1 + k] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

struct SyntheticSpec {
  std::uint64_t seed = 0;
  std::size_t count = 640;
  std::size_t classes = 10;
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
};

/// Each class is a bright patch-aligned square at a class-specific grid cell
/// on a dim noise background. Labels are assigned round-robin.
inline Dataset synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.patch_size == 0 || spec.image_size % spec.patch_size != 0)
    throw ValidationError("synthetic_dataset: image_size must be a multiple of patch_size");
  const std::size_t grid = spec.image_size / spec.patch_size;
  if (spec.classes == 0 || spec.classes > grid * grid)
    throw ValidationError("synthetic_dataset: classes must be in [1, grid^2]");
  if (spec.count == 0) throw ValidationError("synthetic_dataset: count must be positive");
  Rng rng(spec.seed);
  const std::size_t S = spec.image_size, C = spec.channels, P = spec.patch_size;
  Dataset ds;
  ds.class_count = spec.classes;
  ds.split = "synthetic";
  ds.images = Tensor<float>(Shape{spec.count, C, S, S});
  ds.labels.resize(spec.count);
  auto img = ds.images.data();
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::size_t label = i % spec.classes;
    ds.labels[i] = static_cast<int>(label);
    const std::size_t cell = label * (grid * grid) / spec.classes;
    const std::size_t r0 = (cell / grid) * P, c0 = (cell % grid) * P;
    float* base = img.data() + i * C * S * S;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
          const bool inside = y >= r0 && y < r0 + P && x >= c0 && x < c0 + P;
          const double v = inside ? rng.uniform(0.8, 1.0) : rng.uniform(0.0, 0.4);
          base[(c * S + y) * S + x] = static_cast<float>(v);
        }
  }
  return ds;
}

enum class PerturbMode { hshift, vshift, scale };

inline PerturbMode parse_perturb_mode(const std::string& s) {
  if (s == "hshift") return PerturbMode::hshift;
  if (s == "vshift") return PerturbMode::vshift;
  if (s == "scale") return PerturbMode::scale;
  throw ValidationError("unknown perturbation '" + s + "' (expected hshift, vshift or scale)");
}

inline std::string perturb_mode_name(PerturbMode m) {
  switch (m) {
    case PerturbMode::hshift: return "hshift";
    case PerturbMode::vshift: return "vshift";
    case PerturbMode::scale: return "scale";
  }
  return "";
}

/// Percent grid used for the robustness sweep.
inline const std::vector<double>& perturb_grid() {
  static const std::vector<double> g{15.0, 30.0, 45.0, 60.0};
  return g;
}

struct PerturbSpec {
  PerturbMode mode = PerturbMode::hshift;
  double percent = 0.0;

  void validate() const {
    if (percent == 0.0) return;
    const auto& g = perturb_grid();
    if (std::find(g.begin(), g.end(), percent) == g.end())
      throw ValidationError("perturbation percent must be 0, 15, 30, 45 or 60");
  }
};

enum class Axis { horizontal, vertical };

/// Translates content by round(percent/100 * extent) pixels toward +x (or +y);
/// the vacated region is zero.
inline Tensor<float> shift_transform(const Tensor<float>& image, double percent, Axis axis) {
  if (image.rank() != 3) throw DimensionError("shift_transform: expected [C, H, W]");
  if (!(percent >= -100.0 && percent <= 100.0)) throw ValidationError("shift_transform: percent outside [-100, 100]");
  const std::size_t C = image.extent(0), H = image.extent(1), W = image.extent(2);
  const double extent = static_cast<double>(axis == Axis::horizontal ? W : H);
  const long shift = std::lround(percent / 100.0 * extent);
  Tensor<float> out(image.shape());
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        long sy = static_cast<long>(y), sx = static_cast<long>(x);
        if (axis == Axis::horizontal) sx -= shift;
        else sy -= shift;
        if (sx < 0 || sy < 0 || sx >= static_cast<long>(W) || sy >= static_cast<long>(H)) continue;
        dst[(c * H + y) * W + x] = src[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
      }
  return out;
}

enum class PadAnchor { top_left, center, bottom_right };

inline PadAnchor parse_pad_anchor(const std::string& s) {
  if (s == "top_left" || s == "top-left") return PadAnchor::top_left;
  if (s == "center") return PadAnchor::center;
  if (s == "bottom_right" || s == "bottom-right") return PadAnchor::bottom_right;
  throw ValidationError("unknown pad anchor '" + s + "'");
}

/// Bilinear downscale of each side to round((1 - percent/100) * extent),
/// placed at `anchor` on a zero canvas of the original size.
inline Tensor<float> scale_transform(const Tensor<float>& image, double percent,
                                     PadAnchor anchor = PadAnchor::top_left) {
  if (image.rank() != 3) throw DimensionError("scale_transform: expected [C, H, W]");
  if (!(percent >= 0.0 && percent < 100.0)) throw ValidationError("scale_transform: percent outside [0, 100)");
  const std::size_t C = image.extent(0), H = image.extent(1), W = image.extent(2);
  const double f = 1.0 - percent / 100.0;
  const long nh = std::lround(f * static_cast<double>(H));
  const long nw = std::lround(f * static_cast<double>(W));
  if (nh < 1 || nw < 1) throw ValidationError("scale_transform: resulting extent < 1");
  const std::size_t oh = static_cast<std::size_t>(nh), ow = static_cast<std::size_t>(nw);
  std::size_t oy = 0, ox = 0;
  if (anchor == PadAnchor::center) {
    oy = (H - oh) / 2;
    ox = (W - ow) / 2;
  } else if (anchor == PadAnchor::bottom_right) {
    oy = H - oh;
    ox = W - ow;
  }
  Tensor<float> out(image.shape());
  auto src = image.data();
  auto dst = out.data();
  // Half-pixel-centre mapping: identical sizes reproduce the input exactly.
  auto coord = [](std::size_t o, std::size_t in, std::size_t outn, std::size_t& i0, std::size_t& i1, double& w) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    w = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < oh; ++y) {
    std::size_t y0, y1;
    double wy;
    coord(y, H, oh, y0, y1, wy);
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t x0, x1;
      double wx;
      coord(x, W, ow, x0, x1, wx);
      for (std::size_t c = 0; c < C; ++c) {
        auto px = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(src[(c * H + yy) * W + xx]); };
        const double top = (1.0 - wx) * px(y0, x0) + wx * px(y0, x1);
        const double bot = (1.0 - wx) * px(y1, x0) + wx * px(y1, x1);
        dst[(c * H + oy + y) * W + ox + x] = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

inline Tensor<float> apply_perturbation(const Tensor<float>& image, const PerturbSpec& spec,
                                        PadAnchor anchor = PadAnchor::top_left) {
  switch (spec.mode) {
    case PerturbMode::hshift: return shift_transform(image, spec.percent, Axis::horizontal);
    case PerturbMode::vshift: return shift_transform(image, spec.percent, Axis::vertical);
    case PerturbMode::scale: return scale_transform(image, spec.percent, anchor);
  }
  return image.clone();
}

/// (x - mean[c]) / std[c] over images [M, C, H, W] or [C, H, W].
inline Tensor<float> normalize(const Tensor<float>& images, const std::vector<double>& mean,
                               const std::vector<double>& stddev) {
  const std::size_t caxis = images.rank() == 4 ? 1 : 0;
  const std::size_t C = images.extent(caxis);
  if (mean.size() != C || stddev.size() != C)
    throw ValidationError("normalize: need one mean/std per channel");
  for (double s : stddev)
    if (!(s > 0.0)) throw ValidationError("normalize: std must be positive");
  const std::size_t plane = images.extent(caxis + 1) * images.extent(caxis + 2);
  Tensor<float> out(images.shape());
  auto src = images.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t c = (i / plane) % C;
    dst[i] = static_cast<float>((src[i] - mean[c]) / stddev[c]);
  }
  return out;
}

inline Tensor<float> denormalize(const Tensor<float>& images, const std::vector<double>& mean,
                                 const std::vector<double>& stddev) {
  const std::size_t caxis = images.rank() == 4 ? 1 : 0;
  const std::size_t C = images.extent(caxis);
  if (mean.size() != C || stddev.size() != C)
    throw ValidationError("denormalize: need one mean/std per channel");
  const std::size_t plane = images.extent(caxis + 1) * images.extent(caxis + 2);
  Tensor<float> out(images.shape());
  auto src = images.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t c = (i / plane) % C;
    dst[i] = static_cast<float>(src[i] * stddev[c] + mean[c]);
  }
  return out;
}

/// Dataset with normalized pixels.
inline Dataset normalize(const Dataset& ds, const std::vector<double>& mean, const std::vector<double>& stddev) {
  Dataset out = ds;
  out.images = normalize(ds.images, mean, stddev);
  return out;
}

/// Batch of images [B, C, H, W] gathered from `ds` at `indices`, optionally
/// perturbed, then normalized.
/// Per-channel mean and population standard deviation over every pixel.
inline std::pair<std::vector<double>, std::vector<double>> channel_stats(const Dataset& ds) {
  const std::size_t C = ds.channels(), plane = ds.height() * ds.width(), n = ds.size();
  std::vector<double> sum(C, 0.0), sq(C, 0.0);
  auto px = ds.images.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < plane; ++k) {
        const double v = px[(i * C + c) * plane + k];
        sum[c] += v;
        sq[c] += v * v;
      }
  std::vector<double> mean(C), stddev(C);
  const double count = static_cast<double>(n * plane);
  for (std::size_t c = 0; c < C; ++c) {
    mean[c] = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - mean[c] * mean[c]);
    stddev[c] = var > 0.0 ? std::sqrt(var) : 1.0;  // constant channel: leave unscaled
  }
  return {mean, stddev};
}

template <typename T>
Tensor<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices, const std::vector<double>& mean,
                     const std::vector<double>& stddev, const PerturbSpec* perturb = nullptr,
                     PadAnchor anchor = PadAnchor::top_left) {
  const std::size_t n = ds.image_numel();
  const std::size_t C = ds.channels(), plane = ds.height() * ds.width();
  if (mean.size() != C || stddev.size() != C)
    throw ValidationError("make_batch: need one mean/std per channel (normalization statistics unresolved?)");
  Tensor<T> out(Shape{indices.size(), C, ds.height(), ds.width()});
  auto dst = out.data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    Tensor<float> img = ds.image(indices[b]);
    if (perturb && perturb->percent != 0.0) img = apply_perturbation(img, *perturb, anchor);
    auto src = img.data();
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t c = k / plane;
      dst[b * n + k] = static_cast<T>((src[k] - mean[c]) / stddev[c]);
    }
  }
  return out;
}

}  // namespace revit
