#include "synprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <stdexcept>

#include "wire.hpp"

namespace synprune {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;  // label byte + 3*32*32 pixels

std::uint32_t be32(wire::Reader& r) {
  const auto b = r.take(4);
  return std::uint32_t(b[0]) << 24 | std::uint32_t(b[1]) << 16 | std::uint32_t(b[2]) << 8 |
         std::uint32_t(b[3]);
}

void write_be32(wire::Writer& w, std::uint32_t v) {
  w.u8(std::uint8_t(v >> 24));
  w.u8(std::uint8_t(v >> 16));
  w.u8(std::uint8_t(v >> 8));
  w.u8(std::uint8_t(v));
}

// Horizontal bar covering rows [row, row+thickness), columns [c0, c1].
void draw_h(float* img, int row, int c0, int c1, int thickness, float value) {
  for (int r = std::max(row, 0); r < std::min(row + thickness, 28); ++r)
    for (int c = std::max(c0, 0); c <= std::min(c1, 27); ++c) img[r * 28 + c] = value;
}

// Vertical bar covering columns [col, col+thickness), rows [r0, r1].
void draw_v(float* img, int col, int r0, int r1, int thickness, float value) {
  for (int c = std::max(col, 0); c < std::min(col + thickness, 28); ++c)
    for (int r = std::max(r0, 0); r <= std::min(r1, 27); ++r) img[r * 28 + c] = value;
}

}  // namespace

LabeledSet load_idx(const std::string& images_path, const std::string& labels_path) {
  wire::Reader imgs(images_path, "idx");
  const std::uint32_t magic = be32(imgs);
  if (magic != kIdxImagesMagic)
    throw std::runtime_error("idx: bad magic in " + images_path + " (images expect 0x803)");
  const std::uint32_t count = be32(imgs);
  const std::uint32_t rows = be32(imgs);
  const std::uint32_t cols = be32(imgs);
  const auto pixels = imgs.take(std::size_t(count) * rows * cols);

  wire::Reader labs(labels_path, "idx");
  const std::uint32_t lmagic = be32(labs);
  if (lmagic != kIdxLabelsMagic)
    throw std::runtime_error("idx: bad magic in " + labels_path + " (labels expect 0x801)");
  const std::uint32_t lcount = be32(labs);
  if (lcount != count)
    throw std::runtime_error("idx: image/label count mismatch (" + std::to_string(count) +
                             " images vs " + std::to_string(lcount) + " labels)");
  const auto bytes = labs.take(lcount);

  LabeledSet set;
  set.images = Tensor({count, 1, rows, cols});
  for (std::size_t i = 0; i < pixels.size(); ++i) set.images[i] = float(pixels[i]) / 255.0f;
  set.labels.reserve(lcount);
  for (std::uint8_t b : bytes) set.labels.push_back(int(b));
  return set;
}

void save_idx(const LabeledSet& set, const std::string& images_path,
              const std::string& labels_path) {
  check(set.images.rank() == 4 && set.images.dim(1) == 1,
        "idx: only single-channel sets can be written");
  check(set.images.dim(0) == set.labels.size(), "idx: image/label count mismatch");

  wire::Writer imgs(images_path, "idx");
  write_be32(imgs, kIdxImagesMagic);
  write_be32(imgs, std::uint32_t(set.images.dim(0)));
  write_be32(imgs, std::uint32_t(set.images.dim(2)));
  write_be32(imgs, std::uint32_t(set.images.dim(3)));
  std::vector<std::uint8_t> pixels(set.images.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const float v = std::clamp(set.images[i], 0.0f, 1.0f);
    pixels[i] = std::uint8_t(std::lround(v * 255.0f));
  }
  imgs.bytes(pixels);
  imgs.close(images_path);

  wire::Writer labs(labels_path, "idx");
  write_be32(labs, kIdxLabelsMagic);
  write_be32(labs, std::uint32_t(set.labels.size()));
  for (int label : set.labels) labs.u8(std::uint8_t(label));
  labs.close(labels_path);
}

LabeledSet load_cifar10(const std::vector<std::string>& batch_paths) {
  check(!batch_paths.empty(), "cifar10: no batch files given");
  std::vector<std::vector<std::uint8_t>> batches;
  std::size_t total = 0;
  for (const std::string& path : batch_paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cifar10: cannot open: " + path);
    std::vector<std::uint8_t> data{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
    if (data.size() % kCifarRecord != 0)
      throw std::runtime_error("cifar10: " + path + " length " + std::to_string(data.size()) +
                               " is not a multiple of 3073");
    total += data.size() / kCifarRecord;
    batches.push_back(std::move(data));
  }

  LabeledSet set;
  set.images = Tensor({total, 3, 32, 32});
  set.labels.reserve(total);
  std::size_t out = 0;
  for (std::size_t f = 0; f < batches.size(); ++f) {
    const auto& data = batches[f];
    for (std::size_t rec = 0; rec < data.size() / kCifarRecord; ++rec) {
      const std::uint8_t* p = data.data() + rec * kCifarRecord;
      if (p[0] > 9)
        throw std::runtime_error("cifar10: label byte " + std::to_string(int(p[0])) +
                                 " out of range in " + batch_paths[f]);
      set.labels.push_back(int(p[0]));
      float* dst = set.images.data() + out * 3 * 32 * 32;
      for (std::size_t i = 0; i < 3072; ++i) dst[i] = float(p[1 + i]) / 255.0f;
      ++out;
    }
  }
  return set;
}

LabeledSet synthetic_digits(std::size_t count, std::uint32_t seed) {
  // Segment presence per digit, order A (top), B (upper right), C (lower
  // right), D (bottom), E (lower left), F (upper left), G (middle).
  static constexpr bool kSegments[10][7] = {
      {1, 1, 1, 1, 1, 1, 0},  // 0
      {0, 1, 1, 0, 0, 0, 0},  // 1
      {1, 1, 0, 1, 1, 0, 1},  // 2
      {1, 1, 1, 1, 0, 0, 1},  // 3
      {0, 1, 1, 0, 0, 1, 1},  // 4
      {1, 0, 1, 1, 0, 1, 1},  // 5
      {1, 0, 1, 1, 1, 1, 1},  // 6
      {1, 1, 1, 0, 0, 0, 0},  // 7
      {1, 1, 1, 1, 1, 1, 1},  // 8
      {1, 1, 1, 1, 0, 1, 1},  // 9
  };

  LabeledSet set;
  set.images = Tensor({count, 1, 28, 28});
  set.labels.resize(count);
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> jitter(-2, 2);
  std::uniform_real_distribution<double> bright(0.75, 1.0);
  std::uniform_real_distribution<double> noise(0.0, 0.08);

  for (std::size_t i = 0; i < count; ++i) {
    const int digit = int(i % 10);
    set.labels[i] = digit;
    float* img = set.images.data() + i * 28 * 28;
    for (std::size_t p = 0; p < 28 * 28; ++p) img[p] = float(noise(rng));

    const int top = 5 + jitter(rng);
    const int left = 9 + jitter(rng);
    const int mid = top + 9, bottom = top + 18, right = left + 9;
    const int t = 2;
    const float v = float(bright(rng));
    const bool* seg = kSegments[digit];
    if (seg[0]) draw_h(img, top, left, right, t, v);          // A
    if (seg[6]) draw_h(img, mid, left, right, t, v);          // G
    if (seg[3]) draw_h(img, bottom, left, right, t, v);       // D
    if (seg[5]) draw_v(img, left, top, mid, t, v);            // F
    if (seg[1]) draw_v(img, right - t + 1, top, mid, t, v);   // B
    if (seg[4]) draw_v(img, left, mid, bottom + t - 1, t, v);          // E
    if (seg[2]) draw_v(img, right - t + 1, mid, bottom + t - 1, t, v);  // C
  }

  // Break the label ordering so plain prefixes are already class-mixed.
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  LabeledSet shuffled;
  shuffled.images = Tensor({count, 1, 28, 28});
  shuffled.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(set.images.data() + order[i] * 28 * 28, 28 * 28,
                shuffled.images.data() + i * 28 * 28);
    shuffled.labels[i] = set.labels[order[i]];
  }
  return shuffled;
}

LabeledSet synthetic_blobs(std::size_t count, std::uint32_t seed) {
  LabeledSet set;
  set.images = Tensor({count, 1, 10, 10});
  set.labels.resize(count);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> noise(-0.25, 0.25);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = int(i % 2);
    set.labels[i] = label;
    float* img = set.images.data() + i * 100;
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 10; ++c) {
        const bool lit = label == 0 ? (r < 5 && c < 5) : (r >= 5 && c >= 5);
        img[r * 10 + c] = float((lit ? 1.0 : 0.0) + noise(rng));
      }
  }
  return set;
}

LabeledSet subsample(const LabeledSet& set, std::size_t count, std::uint32_t seed) {
  const std::size_t n = set.size();
  if (count == 0 || count > n) count = n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t plane = set.images.size() / std::max<std::size_t>(n, 1);
  LabeledSet out;
  std::vector<std::size_t> shape = set.images.shape();
  shape[0] = count;
  out.images = Tensor(std::move(shape));
  out.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::copy_n(set.images.data() + order[i] * plane, plane, out.images.data() + i * plane);
    out.labels[i] = set.labels[order[i]];
  }
  return out;
}

Normalization compute_normalization(const LabeledSet& set) {
  check(set.images.rank() == 4 && set.size() > 0, "normalization: empty set");
  const std::size_t n = set.images.dim(0), ch = set.images.dim(1);
  const std::size_t hw = set.images.dim(2) * set.images.dim(3);
  Normalization norm;
  norm.mean.resize(ch);
  norm.stdev.resize(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = set.images.data() + (i * ch + c) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        sum += p[j];
        sq += double(p[j]) * p[j];
      }
    }
    const double m = sum / double(n * hw);
    const double var = std::max(sq / double(n * hw) - m * m, 0.0);
    norm.mean[c] = float(m);
    norm.stdev[c] = float(std::max(std::sqrt(var), 1e-6));
  }
  return norm;
}

void apply_normalization(LabeledSet& set, const Normalization& norm) {
  check(set.images.rank() == 4, "normalization: rank-4 image tensor expected");
  const std::size_t ch = set.images.dim(1);
  check(norm.mean.size() == ch && norm.stdev.size() == ch,
        "normalization: channel count mismatch");
  const std::size_t n = set.images.dim(0);
  const std::size_t hw = set.images.dim(2) * set.images.dim(3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      float* p = set.images.data() + (i * ch + c) * hw;
      for (std::size_t j = 0; j < hw; ++j) p[j] = (p[j] - norm.mean[c]) / norm.stdev[c];
    }
}

Tensor flip_horizontal(const Tensor& images) {
  check(images.rank() == 4, "flip: rank-4 image tensor expected");
  const std::size_t n = images.dim(0), ch = images.dim(1);
  const std::size_t h = images.dim(2), w = images.dim(3);
  Tensor out(images.shape());
  for (std::size_t i = 0; i < n * ch; ++i) {
    const float* src = images.data() + i * h * w;
    float* dst = out.data() + i * h * w;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) dst[r * w + c] = src[r * w + (w - 1 - c)];
  }
  return out;
}

Tensor pad_crop(const Tensor& images, int pad, int oy, int ox) {
  check(images.rank() == 4, "pad_crop: rank-4 image tensor expected");
  check(pad >= 0 && oy >= 0 && ox >= 0 && oy <= 2 * pad && ox <= 2 * pad,
        "pad_crop: offsets must lie in [0, 2*pad]");
  const long n = long(images.dim(0)) * long(images.dim(1));
  const long h = long(images.dim(2)), w = long(images.dim(3));
  Tensor out(images.shape());
  for (long i = 0; i < n; ++i) {
    const float* src = images.data() + i * h * w;
    float* dst = out.data() + i * h * w;
    for (long r = 0; r < h; ++r)
      for (long c = 0; c < w; ++c) {
        const long rs = r + oy - pad, cs = c + ox - pad;
        dst[r * w + c] =
            (rs >= 0 && rs < h && cs >= 0 && cs < w) ? src[rs * w + cs] : 0.0f;
      }
  }
  return out;
}

AugmentFn make_augment(int pad, bool flip) {
  check(pad >= 0, "augment: pad must be nonnegative");
  return [pad, flip](const Tensor& batch, std::mt19937& rng) {
    check(batch.rank() == 4, "augment: rank-4 image tensor expected");
    const std::size_t n = batch.dim(0), ch = batch.dim(1);
    const long h = long(batch.dim(2)), w = long(batch.dim(3));
    std::bernoulli_distribution coin(0.5);
    std::uniform_int_distribution<int> offset(0, 2 * pad);
    Tensor out(batch.shape());
    for (std::size_t i = 0; i < n; ++i) {
      // Fixed per-image draw order: flip coin, then row/column offsets.
      const bool mirrored = flip && coin(rng);
      const int oy = pad > 0 ? offset(rng) : 0;
      const int ox = pad > 0 ? offset(rng) : 0;
      for (std::size_t c = 0; c < ch; ++c) {
        const float* src = batch.data() + (i * ch + c) * h * w;
        float* dst = out.data() + (i * ch + c) * h * w;
        for (long r = 0; r < h; ++r)
          for (long col = 0; col < w; ++col) {
            const long rs = r + oy - pad, cs = col + ox - pad;
            if (rs < 0 || rs >= h || cs < 0 || cs >= w) {
              dst[r * w + col] = 0.0f;
            } else {
              dst[r * w + col] = src[rs * w + (mirrored ? w - 1 - cs : cs)];
            }
          }
      }
    }
    return out;
  };
}

}  // namespace synprune
