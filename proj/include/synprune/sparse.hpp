#pragma once

// Kernel-sparse inference. Pruned conv layers are stored block-compressed by
// rows: one kh*kw block per surviving kernel with the strength folded in, so
// inference needs no reparameterization machinery. Two sparse execution
// paths are provided — direct convolution and Winograd F(2x2, 3x3) — both
// skipping pruned blocks, plus a dense path reconstructed from the same
// storage for comparison. The SBCR container serializes a whole model.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "synprune/model.hpp"
#include "synprune/tensor.hpp"

namespace synprune {

struct BcsrLayer {
  std::uint32_t filters = 0;   // K
  std::uint32_t channels = 0;  // C
  std::uint32_t kh = 3, kw = 3;
  int stride = 1;
  int pad = 1;
  std::vector<std::uint32_t> row_ptr;  // K + 1 offsets into col_idx
  std::vector<std::uint32_t> col_idx;  // surviving input channel per block
  std::vector<float> blocks;           // block_count * kh * kw folded values
  std::size_t block_count() const { return col_idx.size(); }
};

// Same pattern as its source layer, blocks replaced by 4x4 transforms.
struct WinogradLayer {
  std::uint32_t filters = 0;
  std::uint32_t channels = 0;
  int pad = 1;
  std::vector<std::uint32_t> row_ptr;
  std::vector<std::uint32_t> col_idx;
  std::vector<float> blocks;  // 16 per block: U = G k G^T
};

struct SparseBn {
  Tensor gamma;  // all-ones when the source model fixed the scale
  Tensor beta;
  Tensor run_mean;
  Tensor run_var;
};

struct SparseLinear {
  Tensor w;
  Tensor b;
};

struct SparseModel {
  ModelSpec spec;
  std::vector<BcsrLayer> convs;
  std::vector<SparseBn> bns;
  SparseLinear fc;
};

// Structural invariants: row_ptr has K+1 nondecreasing entries starting at
// 0 and ending at the block count, col_idx strictly increasing within each
// row and < C, block values finite. Throws std::invalid_argument.
void validate(const BcsrLayer& layer);

// One conv layer of the model as BCSR, strengths folded into the blocks
// (raw-kernel variants copy the kernels; the BN scale stays in its layer).
BcsrLayer bcsr_layer(const Model& m, std::size_t conv_index);

// Whole model: every unmasked kernel becomes one block; BN shift/scale,
// running statistics, and the classifier are carried alongside.
SparseModel export_bcsr(const Model& m);

// Scatters the blocks back into a dense K x C x kh x kw weight tensor.
Tensor dense_kernels(const BcsrLayer& layer);

// y[n,k] = sum over row k's blocks of x[n,col] * block. Empty rows give
// zero output channels. Throws std::invalid_argument on a channel mismatch.
Tensor sparse_direct_conv(const BcsrLayer& layer, const Tensor& x);

bool winograd_supported(const BcsrLayer& layer);  // 3x3, stride 1

// U = G k G^T per surviving block; (row_ptr, col_idx) copied verbatim, so
// kernel-level sparsity is preserved exactly. Throws std::invalid_argument
// for unsupported geometry (caller falls back to the direct path).
WinogradLayer winograd_transform(const BcsrLayer& layer);

// Tiled F(2x2, 3x3): per 4x4 input tile d, V = B^T d B; per filter,
// m = sum over surviving blocks of U (x) V; output 2x2 tile = A^T m A.
// Inputs whose padded extents do not tile evenly are zero-padded on the
// bottom/right and the output cropped back.
Tensor winograd_conv(const WinogradLayer& layer, const Tensor& x);

void save_sbcr(const SparseModel& m, const std::string& path);
SparseModel load_sbcr(const std::string& path);

enum class SparsePath { kDense, kDirect, kWinograd };
std::string to_string(SparsePath path);

// Immutable inference engine over an imported model. The dense path runs
// conv2d on scattered kernels (cost independent of the mask); the Winograd
// path transforms eligible layers once at construction and falls back to
// direct for incompatible geometry.
class SparseRunner {
 public:
  explicit SparseRunner(SparseModel model);

  Tensor forward(const Tensor& x, SparsePath path) const;
  // One conv layer in isolation (Winograd falls back to direct when the
  // geometry does not support it).
  Tensor run_conv(std::size_t conv_index, const Tensor& x, SparsePath path) const;
  const SparseModel& model() const { return model_; }
  // Surviving blocks / (K * C) for one conv layer.
  double layer_density(std::size_t conv_index) const;

 private:
  SparseModel model_;
  std::vector<Tensor> dense_;
  std::vector<WinogradLayer> wino_;
  std::vector<std::uint8_t> wino_ok_;
};

struct BenchRow {
  std::string path;    // dense | direct | winograd
  std::string layer;   // conv index, or "model" for the full forward
  double density = 1;  // survivors / total kernels (whole model for "model" rows)
  std::uint64_t median_ns = 0;
};

// Times every conv layer in isolation on its in-model input shape, plus the
// full forward, for all three paths; deterministic seeded inputs.
std::vector<BenchRow> bench_sparse(const SparseRunner& runner, std::array<std::size_t, 2> input_hw,
                                   std::size_t batch, std::size_t repetitions, std::uint32_t seed);

}  // namespace synprune
