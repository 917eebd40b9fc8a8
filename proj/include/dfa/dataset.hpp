#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dfa/errors.hpp"
#include "dfa/rng.hpp"
#include "dfa/tensor.hpp"

namespace dfa {

// In-memory labeled image dataset. Pixels are doubles in [0,1], stored
// sample-major [n, channels, height, width].
struct Dataset {
  std::size_t n = 0;
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t n_classes = 0;
  std::vector<double> pixels;
  std::vector<int> labels;

  std::size_t sample_size() const { return channels * height * width; }

  void validate() const {
    if (pixels.size() != n * sample_size()) throw DataError("dataset: pixel buffer size mismatch");
    if (labels.size() != n) throw DataError("dataset: label count mismatch");
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
        throw DataError("dataset: label " + std::to_string(labels[i]) + " out of range at sample " +
                        std::to_string(i));
  }

  Tensor batch(const std::vector<std::size_t>& idx) const {
    const std::size_t s = sample_size();
    Tensor t({idx.size(), channels, height, width});
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(pixels.data() + idx[i] * s, s, t.data() + i * s);
    return t;
  }

  Tensor onehot(const std::vector<std::size_t>& idx) const {
    Tensor t({idx.size(), n_classes});
    for (std::size_t i = 0; i < idx.size(); ++i) t.at2(i, static_cast<std::size_t>(labels[idx[i]])) = 1.0;
    return t;
  }

  std::vector<int> label_subset(const std::vector<std::size_t>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
  }

  static std::vector<std::size_t> iota_indices(std::size_t count, std::size_t start = 0) {
    std::vector<std::size_t> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = start + i;
    return v;
  }
};

enum class DataFormat { idx, cifar_binary, raw_array };

inline DataFormat data_format_from_string(const std::string& s) {
  if (s == "idx") return DataFormat::idx;
  if (s == "cifar-binary" || s == "cifar" || s == "cifar_binary") return DataFormat::cifar_binary;
  if (s == "raw-array" || s == "raw" || s == "raw_array") return DataFormat::raw_array;
  throw ConfigError("unknown dataset format '" + s + "'");
}

namespace io {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'", 0);
  f.seekg(0, std::ios::end);
  const auto sz = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<unsigned char> buf(sz);
  if (sz) f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(sz));
  if (!f) throw FormatError("short read from '" + path + "'", 0);
  return buf;
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw FormatError("truncated big-endian word", off);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

inline std::uint32_t le32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw FormatError("truncated little-endian word", off);
  return std::uint32_t(b[off]) | (std::uint32_t(b[off + 1]) << 8) |
         (std::uint32_t(b[off + 2]) << 16) | (std::uint32_t(b[off + 3]) << 24);
}

}  // namespace io

// ---------------------------------------------------------------------------
// IDX (the MNIST container): big-endian magic 0x0000080? then u32 dims.
// Images are idx3 (magic 0x00000803), labels idx1 (0x00000801).
// ---------------------------------------------------------------------------

namespace detail {

// train-images-idx3-ubyte -> train-labels-idx1-ubyte
inline std::string derive_idx_labels_path(const std::string& images_path) {
  std::string p = images_path;
  auto replace = [&p](const std::string& from, const std::string& to) {
    auto pos = p.find(from);
    if (pos == std::string::npos) return false;
    p.replace(pos, from.size(), to);
    return true;
  };
  bool a = replace("images", "labels");
  bool b = replace("idx3", "idx1");
  if (!a && !b)
    throw ConfigError("idx: cannot derive labels path from '" + images_path +
                      "'; pass the labels file explicitly");
  return p;
}

}  // namespace detail

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = io::read_file(images_path);
  const std::uint32_t img_magic = io::be32(img, 0);
  if (img_magic != 0x00000803u)
    throw FormatError("idx: bad image magic in '" + images_path + "'", 0);
  const std::size_t n = io::be32(img, 4), h = io::be32(img, 8), w = io::be32(img, 12);
  const std::size_t expect = 16 + n * h * w;
  if (img.size() != expect)
    throw FormatError("idx: image payload is " + std::to_string(img.size()) + " bytes, expected " +
                          std::to_string(expect),
                      std::min(img.size(), expect));

  const auto lab = io::read_file(labels_path);
  if (io::be32(lab, 0) != 0x00000801u)
    throw FormatError("idx: bad label magic in '" + labels_path + "'", 0);
  if (io::be32(lab, 4) != n)
    throw FormatError("idx: label count " + std::to_string(io::be32(lab, 4)) +
                          " != image count " + std::to_string(n),
                      4);
  if (lab.size() != 8 + n)
    throw FormatError("idx: label payload truncated", std::min(lab.size(), 8 + n));

  Dataset ds;
  ds.n = n;
  ds.channels = 1;
  ds.height = h;
  ds.width = w;
  ds.pixels.resize(n * h * w);
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n * h * w; ++i) ds.pixels[i] = img[16 + i] / 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.n_classes = static_cast<std::size_t>(max_label) + 1;
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (3x32x32, plane-major R,G,B).
// ---------------------------------------------------------------------------

inline Dataset load_cifar_binary(const std::string& path) {
  const auto buf = io::read_file(path);
  constexpr std::size_t kRecord = 1 + 3072;
  if (buf.empty() || buf.size() % kRecord != 0)
    throw FormatError("cifar: file size " + std::to_string(buf.size()) +
                          " is not a multiple of 3073",
                      buf.size() - buf.size() % kRecord);
  const std::size_t n = buf.size() / kRecord;

  Dataset ds;
  ds.n = n;
  ds.channels = 3;
  ds.height = 32;
  ds.width = 32;
  ds.n_classes = 10;
  ds.pixels.resize(n * 3072);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * kRecord;
    if (buf[off] > 9) throw FormatError("cifar: label byte out of range", off);
    ds.labels[i] = buf[off];
    for (std::size_t j = 0; j < 3072; ++j) ds.pixels[i * 3072 + j] = buf[off + 1 + j] / 255.0;
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Raw-array container: "DFAR" magic, u32 LE header fields, float64 LE pixels
// in [0,1], then one u8 label per sample.
// ---------------------------------------------------------------------------

inline Dataset load_raw_array(const std::string& path) {
  const auto buf = io::read_file(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), "DFAR", 4) != 0)
    throw FormatError("raw-array: bad magic in '" + path + "'", 0);
  if (io::le32(buf, 4) != 1u) throw FormatError("raw-array: unsupported version", 4);
  Dataset ds;
  ds.n = io::le32(buf, 8);
  ds.channels = io::le32(buf, 12);
  ds.height = io::le32(buf, 16);
  ds.width = io::le32(buf, 20);
  ds.n_classes = io::le32(buf, 24);
  const std::size_t count = ds.n * ds.sample_size();
  const std::size_t expect = 28 + count * 8 + ds.n;
  if (buf.size() != expect)
    throw FormatError("raw-array: file is " + std::to_string(buf.size()) + " bytes, expected " +
                          std::to_string(expect),
                      std::min(buf.size(), expect));
  ds.pixels.resize(count);
  static_assert(sizeof(double) == 8);
  std::memcpy(ds.pixels.data(), buf.data() + 28, count * 8);
  for (std::size_t i = 0; i < count; ++i) {
    if (!(ds.pixels[i] >= 0.0 && ds.pixels[i] <= 1.0))
      throw FormatError("raw-array: pixel outside [0,1]", 28 + i * 8);
  }
  ds.labels.resize(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) ds.labels[i] = buf[28 + count * 8 + i];
  ds.validate();
  return ds;
}

inline void save_raw_array(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write '" + path + "'");
  auto put32 = [&f](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  f.write("DFAR", 4);
  put32(1);
  put32(static_cast<std::uint32_t>(ds.n));
  put32(static_cast<std::uint32_t>(ds.channels));
  put32(static_cast<std::uint32_t>(ds.height));
  put32(static_cast<std::uint32_t>(ds.width));
  put32(static_cast<std::uint32_t>(ds.n_classes));
  f.write(reinterpret_cast<const char*>(ds.pixels.data()),
          static_cast<std::streamsize>(ds.pixels.size() * 8));
  for (std::size_t i = 0; i < ds.n; ++i) {
    const unsigned char b = static_cast<unsigned char>(ds.labels[i]);
    f.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!f) throw DataError("short write to '" + path + "'");
}

inline Dataset load_dataset(const std::string& path, DataFormat format,
                            const std::string& labels_path = "") {
  switch (format) {
    case DataFormat::idx:
      return load_idx(path, labels_path.empty() ? detail::derive_idx_labels_path(path) : labels_path);
    case DataFormat::cifar_binary:
      return load_cifar_binary(path);
    case DataFormat::raw_array:
      return load_raw_array(path);
  }
  throw ConfigError("load_dataset: bad format enum");
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale datasets. Each class is a fixed template pattern;
// samples are brightness-jittered noisy copies, so classes live near rank-1
// manifolds. Style 1 generates a structurally different family for OOD runs.
// ---------------------------------------------------------------------------

struct SynthSpec {
  std::size_t n_classes = 10;
  std::size_t per_class = 200;
  std::size_t channels = 1;
  std::size_t height = 12;
  std::size_t width = 12;
  double brightness_lo = 0.6;
  double brightness_hi = 1.4;
  double noise = 0.08;
  int style = 0;  // 0 = smoothed random blobs, 1 = oriented gratings
  // blend every class template toward one shared base pattern; higher values
  // shrink inter-class margins and make the task attackable
  double template_similarity = 0.0;
  std::uint64_t seed = 7;
  // same seed + different stream = same class templates, fresh samples
  // (train/held-out splits of one synthetic distribution)
  std::uint64_t sample_stream = 0;
};

namespace detail {

inline std::vector<double> synth_template(const SynthSpec& spec, std::size_t cls, Rng& rng) {
  const std::size_t H = spec.height, W = spec.width, C = spec.channels;
  std::vector<double> t(C * H * W);
  if (spec.style == 0) {
    for (auto& v : t) v = rng.uniform();
    // two 3x3 box blurs smooth the field into blobs
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<double> s(t.size());
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            double acc = 0.0;
            int cnt = 0;
            for (int di = -1; di <= 1; ++di)
              for (int dj = -1; dj <= 1; ++dj) {
                const int ii = static_cast<int>(i) + di, jj = static_cast<int>(j) + dj;
                if (ii < 0 || jj < 0 || ii >= static_cast<int>(H) || jj >= static_cast<int>(W)) continue;
                acc += t[(c * H + ii) * W + jj];
                ++cnt;
              }
            s[(c * H + i) * W + j] = acc / cnt;
          }
      t = std::move(s);
    }
  } else {
    const double angle = rng.uniform(0.0, 3.14159265358979323846);
    const double freq = 1.5 + 0.5 * static_cast<double>(cls % 4);
    const double phase = rng.uniform(0.0, 6.28318530717958647692);
    const double ci = std::cos(angle), sj = std::sin(angle);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          t[(c * H + i) * W + j] =
              0.5 + 0.5 * std::sin(6.28318530717958647692 * freq *
                                       (ci * i / static_cast<double>(H) + sj * j / static_cast<double>(W)) +
                                   phase);
  }
  // rescale to [0.15, 0.85]
  double lo = t[0], hi = t[0];
  for (double v : t) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  for (auto& v : t) v = 0.15 + 0.7 * (v - lo) / span;
  return t;
}

}  // namespace detail

inline Dataset make_synthetic(const SynthSpec& spec) {
  if (spec.n_classes == 0 || spec.per_class == 0) throw ParameterError("make_synthetic: empty spec");
  Rng rng(spec.seed);
  Dataset ds;
  ds.n = spec.n_classes * spec.per_class;
  ds.channels = spec.channels;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.n_classes = spec.n_classes;
  ds.pixels.reserve(ds.n * ds.sample_size());
  ds.labels.reserve(ds.n);

  std::vector<std::vector<double>> templates;
  templates.reserve(spec.n_classes);
  Rng template_rng = rng.fork(1);
  const std::vector<double> base = detail::synth_template(spec, 0, template_rng);
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    std::vector<double> t = detail::synth_template(spec, k, template_rng);
    if (spec.template_similarity > 0.0) {
      const double g = spec.template_similarity;
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = g * base[i] + (1.0 - g) * t[i];
    }
    templates.push_back(std::move(t));
  }

  Rng sample_rng = rng.fork(2 + spec.sample_stream);
  for (std::size_t k = 0; k < spec.n_classes; ++k)
    for (std::size_t s = 0; s < spec.per_class; ++s) {
      const double a = sample_rng.uniform(spec.brightness_lo, spec.brightness_hi);
      for (double tv : templates[k]) {
        const double v = a * tv + sample_rng.normal(0.0, spec.noise);
        ds.pixels.push_back(std::clamp(v, 0.0, 1.0));
      }
      ds.labels.push_back(static_cast<int>(k));
    }
  return ds;
}

}  // namespace dfa
