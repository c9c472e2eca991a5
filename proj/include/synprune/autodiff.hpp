#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "synprune/kernels.hpp"
#include "synprune/tensor.hpp"

// Minimal reverse-mode tape. Ops execute eagerly and append a replayable
// forward closure plus a backward closure; backward() walks the record in
// reverse and accumulates gradients additively into bound parameters.
namespace synprune::ad {

// Optimizer policy tag for a trainable tensor. Weight decay applies to every
// dense kind; the L1 subgradient applies only to strengths, which in turn
// never see weight decay.
enum class ParamKind {
  kWeight,       // dense weights (directions, classifier matrix)
  kBias,         // classifier bias
  kStrength,     // strength scalars: L1 subgradient instead of weight decay
  kGroupKernel,  // raw kernels: weight decay plus a per-kernel group penalty
  kPlain,        // BN shift / log-scale: weight decay only
};

template <typename T>
struct ParamT {
  std::string name;
  ParamKind kind = ParamKind::kPlain;
  TensorT<T> value;
  TensorT<T> grad;

  ParamT() = default;
  ParamT(std::string n, ParamKind k, TensorT<T> v)
      : name(std::move(n)), kind(k), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }

  template <typename U>
  ParamT<U> cast() const {
    ParamT<U> out(name, kind, value.template cast<U>());
    out.grad = grad.template cast<U>();
    return out;
  }
};

using Param = ParamT<float>;
using ParamD = ParamT<double>;

// kTrain: batch statistics, running stats updated by EMA at record time.
// kTrainStateless: batch statistics, running stats untouched (pure forward,
//   required for finite differencing).
// kEval: running statistics; backward through this mode is a logic error.
enum class BnMode { kTrain, kTrainStateless, kEval };

template <typename T>
struct BnRunning {
  TensorT<T> mean;
  TensorT<T> var;
  BnRunning() = default;
  explicit BnRunning(std::size_t channels)
      : mean({channels}), var(TensorT<T>::full({channels}, T(1))) {}
};

// Per-(filter, channel) connectivity, K*C entries, 1 = connected.
using KernelMask = std::vector<std::uint8_t>;

template <typename T>
class TapeT;

template <typename T>
class VarT {
 public:
  VarT() = default;
  bool defined() const { return node_ != nullptr; }
  const TensorT<T>& value() const;
  bool requires_grad() const;
  bool has_grad() const;
  // Gradient of the loss w.r.t. this node; throws unless backward() reached it.
  const TensorT<T>& grad() const;

 private:
  friend class TapeT<T>;
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
  };
  using NodePtr = std::shared_ptr<Node>;
  explicit VarT(NodePtr n) : node_(std::move(n)) {}
  NodePtr node_;
};

using Var = VarT<float>;
using VarD = VarT<double>;

template <typename T>
class TapeT {
 public:
  using Var = VarT<T>;

  // Leaves.
  Var input(TensorT<T> value);
  Var param(ParamT<T>& p);

  // Ops. Forward runs immediately; the record supports replay().
  Var conv(const Var& x, const Var& w, ConvGeom g, const KernelMask* mask = nullptr);
  // Unit-normalizes each kh*kw direction slice in the forward pass and scales
  // it by its strength scalar; gradients flow through the normalization.
  // Masked kernels contribute zero and receive zero gradient.
  Var reparam_conv(const Var& x, const Var& dirs, const Var& strengths, ConvGeom g,
                   const KernelMask* mask = nullptr);
  Var batchnorm(const Var& x, const Var* gamma, const Var& beta, BnRunning<T>* running, BnMode mode,
                T eps = T(1e-5), T momentum = T(0.9));
  Var relu(const Var& x);
  Var add(const Var& a, const Var& b);
  Var global_avg_pool(const Var& x);
  Var linear(const Var& x, const Var& w, const Var& b);
  Var exp(const Var& x);
  Var mul(const Var& a, const Var& b);
  Var sum(const Var& x);
  Var cross_entropy(const Var& logits, std::vector<int> labels);

  // Reverse sweep from a scalar loss. Accumulates into every bound ParamT's
  // grad; parameters the loss never touched are left untouched (zero if the
  // caller zeroed them first).
  void backward(const Var& loss);

  // Re-executes every recorded op in order from the stored leaf values,
  // overwriting node values. With unchanged leaves the recomputed values are
  // bit-identical to the original pass.
  void replay();

  std::size_t num_steps() const { return steps_.size(); }

 private:
  using Node = typename VarT<T>::Node;
  using NodePtr = typename VarT<T>::NodePtr;
  struct Step {
    std::function<void()> forward;
    std::function<void()> backward;
  };

  static NodePtr make_node(bool requires_grad);
  static void accumulate(Node& n, TensorT<T>&& g);
  Var push(NodePtr out, std::function<void()> fwd, std::function<void()> bwd);

  std::vector<Step> steps_;
  std::vector<std::pair<NodePtr, ParamT<T>*>> bound_;
  bool backward_done_ = false;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

}  // namespace synprune::ad
