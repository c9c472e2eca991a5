#include "synprune/sparse.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "synprune/kernels.hpp"
#include "wire.hpp"

namespace synprune {

namespace {

constexpr std::uint32_t kSbcrVersion = 1;
constexpr std::uint8_t kSecConv = 1;
constexpr std::uint8_t kSecBn = 2;
constexpr std::uint8_t kSecLinear = 3;
constexpr float kBnEps = 1e-5f;

// Channel extents the spec walk implies for each conv (in) and each BN.
struct WalkShapes {
  std::vector<std::size_t> conv_in;
  std::vector<std::size_t> bn_channels;
};

WalkShapes walk_shapes(const ModelSpec& spec) {
  using K = LayerDesc::Kind;
  WalkShapes out;
  std::size_t ch = spec.in_channels;
  for (const LayerDesc& d : spec.layers) {
    if (d.kind == K::kConv) {
      out.conv_in.push_back(ch);
      ch = d.out_channels;
    } else if (d.kind == K::kBatchNorm) {
      out.bn_channels.push_back(ch);
    }
  }
  return out;
}

// 4x4 <- G k G^T for a 3x3 kernel (F(2x2, 3x3) weight transform).
void weight_transform_3x3(const float* k, float* u) {
  float t[4][3];
  for (int j = 0; j < 3; ++j) {
    const float k0 = k[0 * 3 + j], k1 = k[1 * 3 + j], k2 = k[2 * 3 + j];
    t[0][j] = k0;
    t[1][j] = 0.5f * (k0 + k1 + k2);
    t[2][j] = 0.5f * (k0 - k1 + k2);
    t[3][j] = k2;
  }
  for (int i = 0; i < 4; ++i) {
    const float t0 = t[i][0], t1 = t[i][1], t2 = t[i][2];
    u[i * 4 + 0] = t0;
    u[i * 4 + 1] = 0.5f * (t0 + t1 + t2);
    u[i * 4 + 2] = 0.5f * (t0 - t1 + t2);
    u[i * 4 + 3] = t2;
  }
}

// 4x4 <- B^T d B for one input tile.
inline void input_transform_tile(const float d[4][4], float* v) {
  float t[4][4];
  for (int j = 0; j < 4; ++j) {
    t[0][j] = d[0][j] - d[2][j];
    t[1][j] = d[1][j] + d[2][j];
    t[2][j] = d[2][j] - d[1][j];
    t[3][j] = d[1][j] - d[3][j];
  }
  for (int i = 0; i < 4; ++i) {
    v[i * 4 + 0] = t[i][0] - t[i][2];
    v[i * 4 + 1] = t[i][1] + t[i][2];
    v[i * 4 + 2] = t[i][2] - t[i][1];
    v[i * 4 + 3] = t[i][1] - t[i][3];
  }
}

// 2x2 <- A^T m A for one output tile.
inline void output_transform_tile(const float* m, float out[2][2]) {
  float t[2][4];
  for (int j = 0; j < 4; ++j) {
    t[0][j] = m[0 * 4 + j] + m[1 * 4 + j] + m[2 * 4 + j];
    t[1][j] = m[1 * 4 + j] - m[2 * 4 + j] - m[3 * 4 + j];
  }
  for (int i = 0; i < 2; ++i) {
    out[i][0] = t[i][0] + t[i][1] + t[i][2];
    out[i][1] = t[i][1] - t[i][2] - t[i][3];
  }
}

}  // namespace

void validate(const BcsrLayer& layer) {
  check(layer.filters > 0 && layer.channels > 0, "bcsr: empty layer extents");
  check(layer.kh > 0 && layer.kw > 0, "bcsr: empty block shape");
  check(layer.stride >= 1 && layer.pad >= 0, "bcsr: bad geometry");
  check(layer.row_ptr.size() == std::size_t(layer.filters) + 1, "bcsr: row_ptr length");
  check(layer.row_ptr.front() == 0, "bcsr: row_ptr must start at 0");
  for (std::size_t k = 0; k < layer.filters; ++k)
    check(layer.row_ptr[k] <= layer.row_ptr[k + 1], "bcsr: row_ptr must be nondecreasing");
  check(layer.row_ptr.back() == layer.col_idx.size(), "bcsr: row_ptr/col_idx mismatch");
  for (std::size_t k = 0; k < layer.filters; ++k)
    for (std::size_t b = layer.row_ptr[k]; b < layer.row_ptr[k + 1]; ++b) {
      check(layer.col_idx[b] < layer.channels, "bcsr: col_idx out of range");
      check(b == layer.row_ptr[k] || layer.col_idx[b - 1] < layer.col_idx[b],
            "bcsr: col_idx must be strictly increasing within a row");
    }
  check(layer.blocks.size() == layer.col_idx.size() * layer.kh * layer.kw,
        "bcsr: block payload length");
  for (float v : layer.blocks)
    check(std::isfinite(v), "bcsr: non-finite block value");
}

BcsrLayer bcsr_layer(const Model& m, std::size_t conv_index) {
  check(conv_index < m.convs.size(), "bcsr: conv index out of range");
  const auto& conv = m.convs[conv_index];
  const std::size_t kk = conv.ksize * conv.ksize;
  const bool unit_kernels = m.flags().kernel_norm;

  BcsrLayer out;
  out.filters = std::uint32_t(conv.out_channels);
  out.channels = std::uint32_t(conv.in_channels);
  out.kh = out.kw = std::uint32_t(conv.ksize);
  out.stride = conv.geom.stride;
  out.pad = conv.geom.pad;
  out.row_ptr.assign(conv.out_channels + 1, 0);

  const std::size_t center = (conv.ksize / 2) * conv.ksize + conv.ksize / 2;
  for (std::size_t k = 0; k < conv.out_channels; ++k) {
    for (std::size_t c = 0; c < conv.in_channels; ++c) {
      const std::size_t sl = k * conv.in_channels + c;
      if (!conv.mask[sl]) continue;
      out.col_idx.push_back(std::uint32_t(c));
      const float* d = conv.weights.value.data() + sl * kk;
      const std::size_t base = out.blocks.size();
      out.blocks.resize(base + kk, 0.0f);
      if (unit_kernels) {
        // Same float arithmetic as the training-time forward, so folded
        // blocks match the dense effective weights bit for bit.
        const float s = conv.strengths.value[sl];
        float sq = 0.0f;
        for (std::size_t t = 0; t < kk; ++t) sq += d[t] * d[t];
        const float norm = std::sqrt(sq);
        if (norm == 0.0f) {
          out.blocks[base + center] = s * 1.0f;
        } else {
          const float inv = 1.0f / norm;
          for (std::size_t t = 0; t < kk; ++t) out.blocks[base + t] = s * (d[t] * inv);
        }
      } else {
        std::copy(d, d + kk, out.blocks.begin() + long(base));
      }
    }
    out.row_ptr[k + 1] = std::uint32_t(out.col_idx.size());
  }
  validate(out);
  return out;
}

SparseModel export_bcsr(const Model& m) {
  SparseModel out;
  out.spec = m.spec();
  for (std::size_t i = 0; i < m.convs.size(); ++i) out.convs.push_back(bcsr_layer(m, i));
  for (const auto& bn : m.bns) {
    SparseBn s;
    if (bn.log_gamma.value.empty()) {
      s.gamma = Tensor::full({bn.channels}, 1.0f);
    } else {
      s.gamma = Tensor({bn.channels});
      for (std::size_t c = 0; c < bn.channels; ++c) s.gamma[c] = std::exp(bn.log_gamma.value[c]);
    }
    s.beta = bn.beta.value;
    s.run_mean = bn.running.mean;
    s.run_var = bn.running.var;
    out.bns.push_back(std::move(s));
  }
  out.fc.w = m.fc.w.value;
  out.fc.b = m.fc.b.value;
  return out;
}

Tensor dense_kernels(const BcsrLayer& layer) {
  const std::size_t kk = std::size_t(layer.kh) * layer.kw;
  Tensor w({layer.filters, layer.channels, layer.kh, layer.kw});
  for (std::size_t k = 0; k < layer.filters; ++k)
    for (std::size_t b = layer.row_ptr[k]; b < layer.row_ptr[k + 1]; ++b)
      std::copy(layer.blocks.begin() + long(b * kk), layer.blocks.begin() + long((b + 1) * kk),
                w.data() + (k * layer.channels + layer.col_idx[b]) * kk);
  return w;
}

Tensor sparse_direct_conv(const BcsrLayer& layer, const Tensor& x) {
  check(x.rank() == 4, "sparse conv: rank-4 input expected");
  check(x.dim(1) == layer.channels, "sparse conv: channel mismatch");
  const long n_batch = long(x.dim(0)), c_in = long(x.dim(1));
  const long in_h = long(x.dim(2)), in_w = long(x.dim(3));
  const long kh = layer.kh, kw = layer.kw;
  const ConvGeom g{layer.stride, layer.pad};
  const auto [oh_u, ow_u] = conv_output_hw(x.dim(2), x.dim(3), layer.kh, layer.kw, g);
  const long out_h = long(oh_u), out_w = long(ow_u);

  Tensor xpad;
  if (g.pad > 0) xpad = pad_nchw(x, g.pad);
  const float* xp = g.pad > 0 ? xpad.data() : x.data();
  const long pw = in_w + 2 * g.pad;
  const long plane = (in_h + 2 * g.pad) * pw;

  Tensor y({x.dim(0), layer.filters, oh_u, ow_u});
  const long k_out = long(layer.filters);
  float* yp = y.data();
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (long n = 0; n < n_batch; ++n)
    for (long k = 0; k < k_out; ++k) {
      float* yk = yp + (n * k_out + k) * out_h * out_w;
      for (std::size_t b = layer.row_ptr[std::size_t(k)]; b < layer.row_ptr[std::size_t(k) + 1];
           ++b) {
        const long c = long(layer.col_idx[b]);
        conv_plane_accumulate(xp + (n * c_in + c) * plane, layer.blocks.data() + b * kh * kw, yk,
                              pw, out_h, out_w, kh, kw, g.stride);
      }
    }
  return y;
}

bool winograd_supported(const BcsrLayer& layer) {
  return layer.kh == 3 && layer.kw == 3 && layer.stride == 1;
}

WinogradLayer winograd_transform(const BcsrLayer& layer) {
  check(winograd_supported(layer), "winograd: needs 3x3 blocks and stride 1");
  WinogradLayer out;
  out.filters = layer.filters;
  out.channels = layer.channels;
  out.pad = layer.pad;
  out.row_ptr = layer.row_ptr;
  out.col_idx = layer.col_idx;
  out.blocks.resize(layer.block_count() * 16);
  for (std::size_t b = 0; b < layer.block_count(); ++b)
    weight_transform_3x3(layer.blocks.data() + b * 9, out.blocks.data() + b * 16);
  return out;
}

Tensor winograd_conv(const WinogradLayer& layer, const Tensor& x) {
  check(x.rank() == 4, "winograd: rank-4 input expected");
  check(x.dim(1) == layer.channels, "winograd: channel mismatch");
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1);
  const std::size_t in_h = x.dim(2), in_w = x.dim(3);
  const auto [out_h, out_w] = conv_output_hw(in_h, in_w, 3, 3, ConvGeom{1, layer.pad});
  const std::size_t tiles_h = (out_h + 1) / 2, tiles_w = (out_w + 1) / 2;
  const std::size_t tiles = tiles_h * tiles_w;
  // Padded buffer with bottom/right slack so every 4x4 tile read is in
  // bounds; the assembled output is cropped to (out_h, out_w).
  const std::size_t ph = 2 * tiles_h + 2, pw = 2 * tiles_w + 2;
  const std::size_t pad = std::size_t(layer.pad);

  Tensor xp({n_batch, c_in, ph, pw});
  for (std::size_t n = 0; n < n_batch; ++n)
    for (std::size_t c = 0; c < c_in; ++c) {
      const float* src = x.data() + (n * c_in + c) * in_h * in_w;
      float* dst = xp.data() + (n * c_in + c) * ph * pw + pad * pw + pad;
      for (std::size_t h = 0; h < in_h; ++h)
        std::copy(src + h * in_w, src + (h + 1) * in_w, dst + h * pw);
    }

  Tensor y({n_batch, layer.filters, out_h, out_w});
  const std::size_t k_out = layer.filters;
  std::vector<float> v(c_in * tiles * 16);

  for (std::size_t n = 0; n < n_batch; ++n) {
    // Input transform: V[c][tile] = B^T d B.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long cl = 0; cl < long(c_in); ++cl) {
      const std::size_t c = std::size_t(cl);
      const float* plane = xp.data() + (n * c_in + c) * ph * pw;
      for (std::size_t ty = 0; ty < tiles_h; ++ty)
        for (std::size_t tx = 0; tx < tiles_w; ++tx) {
          float d[4][4];
          for (int r = 0; r < 4; ++r)
            for (int s = 0; s < 4; ++s) d[r][s] = plane[(2 * ty + std::size_t(r)) * pw + 2 * tx + std::size_t(s)];
          input_transform_tile(d, v.data() + (c * tiles + ty * tiles_w + tx) * 16);
        }
    }

    // Per filter: accumulate U (x) V over surviving blocks, then A^T m A.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long kl = 0; kl < long(k_out); ++kl) {
      const std::size_t k = std::size_t(kl);
      std::vector<float> acc(tiles * 16, 0.0f);
      for (std::size_t b = layer.row_ptr[k]; b < layer.row_ptr[k + 1]; ++b) {
        const float* u = layer.blocks.data() + b * 16;
        const float* vc = v.data() + std::size_t(layer.col_idx[b]) * tiles * 16;
        for (std::size_t t = 0; t < tiles; ++t) {
          float* m = acc.data() + t * 16;
          const float* vt = vc + t * 16;
          for (int i = 0; i < 16; ++i) m[i] += u[i] * vt[i];
        }
      }
      float* yk = y.data() + (n * k_out + k) * out_h * out_w;
      for (std::size_t ty = 0; ty < tiles_h; ++ty)
        for (std::size_t tx = 0; tx < tiles_w; ++tx) {
          float tile[2][2];
          output_transform_tile(acc.data() + (ty * tiles_w + tx) * 16, tile);
          for (int r = 0; r < 2; ++r)
            for (int s = 0; s < 2; ++s) {
              const std::size_t oy = 2 * ty + std::size_t(r), ox = 2 * tx + std::size_t(s);
              if (oy < out_h && ox < out_w) yk[oy * out_w + ox] = tile[r][s];
            }
        }
    }
  }
  return y;
}

std::string to_string(SparsePath path) {
  switch (path) {
    case SparsePath::kDense: return "dense";
    case SparsePath::kDirect: return "direct";
    default: return "winograd";
  }
}

void save_sbcr(const SparseModel& m, const std::string& path) {
  wire::Writer w(path, "sbcr");
  w.bytes({'S', 'B', 'C', 'R'});
  w.u32(kSbcrVersion);
  w.str(m.spec.name);
  w.u32(std::uint32_t(m.spec.in_channels));
  w.u32(std::uint32_t(m.spec.num_classes));
  w.u32(std::uint32_t(m.spec.layers.size()));
  for (const LayerDesc& d : m.spec.layers) {
    w.u8(std::uint8_t(d.kind));
    w.u32(std::uint32_t(d.out_channels));
    w.u32(std::uint32_t(d.ksize));
    w.u32(std::uint32_t(d.stride));
    w.u32(std::uint32_t(d.pad));
    w.u32(std::uint32_t(d.out_features));
  }

  w.u32(std::uint32_t(m.convs.size() + m.bns.size() + 1));
  for (const BcsrLayer& layer : m.convs) {
    w.u8(kSecConv);
    w.u64(7 * 4 + layer.row_ptr.size() * 4 + layer.col_idx.size() * 4 + layer.blocks.size() * 4);
    w.u32(layer.filters);
    w.u32(layer.channels);
    w.u32(layer.kh);
    w.u32(layer.kw);
    w.u32(std::uint32_t(layer.stride));
    w.u32(std::uint32_t(layer.pad));
    w.u32(std::uint32_t(layer.block_count()));
    for (std::uint32_t p : layer.row_ptr) w.u32(p);
    for (std::uint32_t c : layer.col_idx) w.u32(c);
    for (float b : layer.blocks) w.f32(b);
  }
  for (const SparseBn& bn : m.bns) {
    const std::size_t ch = bn.beta.size();
    w.u8(kSecBn);
    w.u64(4 + 16 * ch);
    w.u32(std::uint32_t(ch));
    for (std::size_t c = 0; c < ch; ++c) w.f32(bn.gamma[c]);
    for (std::size_t c = 0; c < ch; ++c) w.f32(bn.beta[c]);
    for (std::size_t c = 0; c < ch; ++c) w.f32(bn.run_mean[c]);
    for (std::size_t c = 0; c < ch; ++c) w.f32(bn.run_var[c]);
  }
  {
    const std::size_t rows = m.fc.w.dim(0), cols = m.fc.w.dim(1);
    w.u8(kSecLinear);
    w.u64(8 + (rows * cols + rows) * 4);
    w.u32(std::uint32_t(rows));
    w.u32(std::uint32_t(cols));
    for (std::size_t i = 0; i < m.fc.w.size(); ++i) w.f32(m.fc.w[i]);
    for (std::size_t i = 0; i < m.fc.b.size(); ++i) w.f32(m.fc.b[i]);
  }
  w.close(path);
}

SparseModel load_sbcr(const std::string& path) {
  wire::Reader r(path, "sbcr");
  const auto magic = r.take(4);
  if (magic != std::vector<std::uint8_t>{'S', 'B', 'C', 'R'})
    throw std::runtime_error("sbcr: bad magic in " + path);
  const std::uint32_t version = r.u32();
  if (version != kSbcrVersion)
    throw std::runtime_error("sbcr: unsupported version " + std::to_string(version));

  SparseModel m;
  m.spec.name = r.str();
  m.spec.in_channels = r.u32();
  m.spec.num_classes = r.u32();
  const std::uint32_t layer_count = r.u32();
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerDesc d;
    const std::uint8_t kind = r.u8();
    if (kind > std::uint8_t(LayerDesc::Kind::kResidualEnd))
      throw std::runtime_error("sbcr: unknown layer kind tag " + std::to_string(kind));
    d.kind = LayerDesc::Kind(kind);
    d.out_channels = r.u32();
    d.ksize = r.u32();
    d.stride = int(r.u32());
    d.pad = int(r.u32());
    d.out_features = r.u32();
    m.spec.layers.push_back(d);
  }
  validate_spec(m.spec);
  const WalkShapes shapes = walk_shapes(m.spec);

  bool have_linear = false;
  const std::uint32_t sections = r.u32();
  for (std::uint32_t sec = 0; sec < sections; ++sec) {
    const std::uint8_t tag = r.u8();
    const std::uint64_t len = r.u64();
    if (tag == kSecConv) {
      BcsrLayer layer;
      layer.filters = r.u32();
      layer.channels = r.u32();
      layer.kh = r.u32();
      layer.kw = r.u32();
      layer.stride = int(r.u32());
      layer.pad = int(r.u32());
      const std::uint32_t blocks = r.u32();
      layer.row_ptr.resize(std::size_t(layer.filters) + 1);
      for (auto& p : layer.row_ptr) p = r.u32();
      layer.col_idx.resize(blocks);
      for (auto& c : layer.col_idx) c = r.u32();
      layer.blocks.resize(std::size_t(blocks) * layer.kh * layer.kw);
      for (auto& b : layer.blocks) b = r.f32();
      validate(layer);
      const std::size_t idx = m.convs.size();
      if (idx >= shapes.conv_in.size())
        throw std::runtime_error("sbcr: more conv sections than the spec declares");
      if (layer.channels != shapes.conv_in[idx])
        throw std::runtime_error("sbcr: conv section channel extent disagrees with the spec");
      m.convs.push_back(std::move(layer));
    } else if (tag == kSecBn) {
      const std::uint32_t ch = r.u32();
      const std::size_t idx = m.bns.size();
      if (idx >= shapes.bn_channels.size())
        throw std::runtime_error("sbcr: more bn sections than the spec declares");
      if (ch != shapes.bn_channels[idx])
        throw std::runtime_error("sbcr: bn section channel extent disagrees with the spec");
      SparseBn bn;
      bn.gamma = Tensor({ch});
      bn.beta = Tensor({ch});
      bn.run_mean = Tensor({ch});
      bn.run_var = Tensor({ch});
      for (std::size_t c = 0; c < ch; ++c) bn.gamma[c] = r.f32();
      for (std::size_t c = 0; c < ch; ++c) bn.beta[c] = r.f32();
      for (std::size_t c = 0; c < ch; ++c) bn.run_mean[c] = r.f32();
      for (std::size_t c = 0; c < ch; ++c) bn.run_var[c] = r.f32();
      m.bns.push_back(std::move(bn));
    } else if (tag == kSecLinear) {
      const std::uint32_t rows = r.u32(), cols = r.u32();
      m.fc.w = Tensor({rows, cols});
      m.fc.b = Tensor({rows});
      for (std::size_t i = 0; i < m.fc.w.size(); ++i) m.fc.w[i] = r.f32();
      for (std::size_t i = 0; i < m.fc.b.size(); ++i) m.fc.b[i] = r.f32();
      have_linear = true;
    } else {
      r.take(std::size_t(len));  // lengths are explicit so unknown sections skip
    }
  }
  if (m.convs.size() != shapes.conv_in.size())
    throw std::runtime_error("sbcr: conv section count disagrees with the spec");
  if (m.bns.size() != shapes.bn_channels.size())
    throw std::runtime_error("sbcr: bn section count disagrees with the spec");
  if (!have_linear) throw std::runtime_error("sbcr: missing classifier section");
  if (m.fc.w.dim(0) != m.spec.num_classes)
    throw std::runtime_error("sbcr: classifier extent disagrees with the spec");
  return m;
}

SparseRunner::SparseRunner(SparseModel model) : model_(std::move(model)) {
  validate_spec(model_.spec);
  const WalkShapes shapes = walk_shapes(model_.spec);
  check(model_.convs.size() == shapes.conv_in.size(), "sparse model: conv layer count");
  check(model_.bns.size() == shapes.bn_channels.size(), "sparse model: bn layer count");
  for (const BcsrLayer& layer : model_.convs) {
    validate(layer);
    dense_.push_back(dense_kernels(layer));
    if (winograd_supported(layer)) {
      wino_.push_back(winograd_transform(layer));
      wino_ok_.push_back(1);
    } else {
      wino_.emplace_back();
      wino_ok_.push_back(0);
    }
  }
}

Tensor SparseRunner::run_conv(std::size_t conv_index, const Tensor& x, SparsePath path) const {
  check(conv_index < model_.convs.size(), "sparse model: conv index out of range");
  const BcsrLayer& layer = model_.convs[conv_index];
  switch (path) {
    case SparsePath::kDense:
      return conv2d(x, dense_[conv_index], ConvGeom{layer.stride, layer.pad});
    case SparsePath::kDirect:
      return sparse_direct_conv(layer, x);
    default:
      if (!wino_ok_[conv_index]) return sparse_direct_conv(layer, x);
      return winograd_conv(wino_[conv_index], x);
  }
}

Tensor SparseRunner::forward(const Tensor& x, SparsePath path) const {
  using K = LayerDesc::Kind;
  Tensor h = x;
  std::vector<Tensor> taps;
  std::size_t conv_i = 0, bn_i = 0;
  for (const LayerDesc& d : model_.spec.layers) {
    switch (d.kind) {
      case K::kConv:
        h = run_conv(conv_i++, h, path);
        break;
      case K::kBatchNorm: {
        const SparseBn& bn = model_.bns[bn_i++];
        h = batchnorm_forward_eval(h, &bn.gamma, bn.beta, bn.run_mean, bn.run_var, kBnEps);
        break;
      }
      case K::kRelu:
        h = relu(h);
        break;
      case K::kGlobalAvgPool:
        h = global_avg_pool(h);
        break;
      case K::kLinear:
        h = linear(h, model_.fc.w, model_.fc.b);
        break;
      case K::kResidualBegin:
        taps.push_back(h);
        break;
      case K::kResidualEnd:
        h = add(h, taps.back());
        taps.pop_back();
        break;
    }
  }
  return h;
}

double SparseRunner::layer_density(std::size_t conv_index) const {
  check(conv_index < model_.convs.size(), "sparse model: conv index out of range");
  const BcsrLayer& layer = model_.convs[conv_index];
  return double(layer.block_count()) / (double(layer.filters) * double(layer.channels));
}

std::vector<BenchRow> bench_sparse(const SparseRunner& runner, std::array<std::size_t, 2> input_hw,
                                   std::size_t batch, std::size_t repetitions, std::uint32_t seed) {
  using K = LayerDesc::Kind;
  check(repetitions >= 1, "bench: repetitions must be >= 1");
  const SparseModel& m = runner.model();
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  const auto fill = [&](Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  };
  const auto time_median = [&](const std::function<void()>& fn) {
    std::vector<std::uint64_t> ns(repetitions);
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      const auto t1 = std::chrono::steady_clock::now();
      ns[rep] = std::uint64_t(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    }
    std::sort(ns.begin(), ns.end());
    return ns[repetitions / 2];
  };
  const SparsePath paths[] = {SparsePath::kDense, SparsePath::kDirect, SparsePath::kWinograd};

  std::vector<BenchRow> rows;
  std::size_t h = input_hw[0], w = input_hw[1];
  std::size_t conv_i = 0;
  std::uint64_t survivors = 0, total = 0;
  for (const LayerDesc& d : m.spec.layers) {
    if (d.kind != K::kConv) continue;
    const BcsrLayer& layer = m.convs[conv_i];
    Tensor x({batch, layer.channels, h, w});
    fill(x);
    for (SparsePath path : paths) {
      BenchRow row;
      row.path = to_string(path);
      row.layer = std::to_string(conv_i);
      row.density = runner.layer_density(conv_i);
      row.median_ns = time_median([&] { (void)runner.run_conv(conv_i, x, path); });
      rows.push_back(std::move(row));
    }
    survivors += layer.block_count();
    total += std::uint64_t(layer.filters) * layer.channels;
    const auto out_hw = conv_output_hw(h, w, layer.kh, layer.kw, ConvGeom{layer.stride, layer.pad});
    h = out_hw[0];
    w = out_hw[1];
    ++conv_i;
  }

  Tensor x({batch, m.spec.in_channels, input_hw[0], input_hw[1]});
  fill(x);
  for (SparsePath path : paths) {
    BenchRow row;
    row.path = to_string(path);
    row.layer = "model";
    row.density = total > 0 ? double(survivors) / double(total) : 1.0;
    row.median_ns = time_median([&] { (void)runner.forward(x, path); });
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace synprune
