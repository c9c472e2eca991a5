#include "synprune/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace synprune::ad {

template <typename T>
const TensorT<T>& VarT<T>::value() const {
  check(defined(), "var: value() on undefined var");
  return node_->value;
}

template <typename T>
bool VarT<T>::requires_grad() const {
  check(defined(), "var: requires_grad() on undefined var");
  return node_->requires_grad;
}

template <typename T>
bool VarT<T>::has_grad() const {
  check(defined(), "var: has_grad() on undefined var");
  return node_->has_grad;
}

template <typename T>
const TensorT<T>& VarT<T>::grad() const {
  check(defined(), "var: grad() on undefined var");
  check(node_->has_grad, "var: no gradient reached this node");
  return node_->grad;
}

template <typename T>
auto TapeT<T>::make_node(bool requires_grad) -> NodePtr {
  auto n = std::make_shared<Node>();
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
void TapeT<T>::accumulate(Node& n, TensorT<T>&& g) {
  if (!n.has_grad) {
    n.grad = std::move(g);
    n.has_grad = true;
    return;
  }
  check(n.grad.same_shape(g), "autodiff: gradient shape mismatch");
  T* a = n.grad.data();
  const T* b = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) a[i] += b[i];
}

template <typename T>
auto TapeT<T>::push(NodePtr out, std::function<void()> fwd, std::function<void()> bwd) -> Var {
  fwd();
  steps_.push_back({std::move(fwd), std::move(bwd)});
  return Var(std::move(out));
}

template <typename T>
auto TapeT<T>::input(TensorT<T> value) -> Var {
  NodePtr n = make_node(false);
  n->value = std::move(value);
  return Var(std::move(n));
}

template <typename T>
auto TapeT<T>::param(ParamT<T>& p) -> Var {
  NodePtr n = make_node(true);
  n->value = p.value;
  bound_.emplace_back(n, &p);
  return Var(std::move(n));
}

template <typename T>
auto TapeT<T>::conv(const Var& x, const Var& w, ConvGeom g, const KernelMask* mask) -> Var {
  check(x.defined() && w.defined(), "conv: undefined var");
  NodePtr xn = x.node_, wn = w.node_, yn = make_node(xn->requires_grad || wn->requires_grad);
  const std::size_t slices = wn->value.dim(0) * wn->value.dim(1);
  const std::size_t kk = wn->value.dim(2) * wn->value.dim(3);
  if (mask) check(mask->size() == slices, "conv: mask size mismatch");
  auto m = std::make_shared<KernelMask>(mask ? *mask : KernelMask());
  // Masked kernels are zeroed in the effective weights, so they contribute
  // nothing forward and their weight gradient is zeroed below.
  auto w_eff = std::make_shared<TensorT<T>>();

  auto fwd = [xn, wn, yn, w_eff, m, g, slices, kk] {
    if (m->empty()) {
      *w_eff = wn->value;
    } else {
      *w_eff = wn->value;
      for (std::size_t s = 0; s < slices; ++s)
        if (!(*m)[s])
          for (std::size_t i = 0; i < kk; ++i) (*w_eff)[s * kk + i] = T(0);
    }
    yn->value = conv2d(xn->value, *w_eff, g);
  };
  auto bwd = [xn, wn, yn, w_eff, m, g, slices, kk] {
    if (!yn->has_grad) return;
    if (wn->requires_grad) {
      TensorT<T> gw = conv2d_backward_weight(xn->value, yn->grad, g,
                                             {wn->value.dim(2), wn->value.dim(3)});
      for (std::size_t s = 0; !m->empty() && s < slices; ++s)
        if (!(*m)[s])
          for (std::size_t i = 0; i < kk; ++i) gw[s * kk + i] = T(0);
      accumulate(*wn, std::move(gw));
    }
    if (xn->requires_grad)
      accumulate(*xn, conv2d_backward_input(*w_eff, yn->grad, g,
                                            {xn->value.dim(2), xn->value.dim(3)}));
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

namespace {

template <typename T>
struct ReparamSaved {
  TensorT<T> units;            // unit directions, canonical delta where zero
  std::vector<T> norms;        // Frobenius norm per kernel slice
  std::vector<std::uint8_t> zero;
  TensorT<T> w_eff;            // strength * unit, zero where masked
};

// Slice-wise form of normalize_kernel over a K*C stack, plus the
// strength/mask composition into effective kernels.
template <typename T>
void build_reparam(const TensorT<T>& dirs, const TensorT<T>& strengths, const KernelMask& mask,
                   ReparamSaved<T>& out) {
  const std::size_t slices = dirs.dim(0) * dirs.dim(1);
  const std::size_t kh = dirs.dim(2), kw = dirs.dim(3), kk = kh * kw;
  out.units = TensorT<T>(dirs.shape());
  out.w_eff = TensorT<T>(dirs.shape());
  out.norms.assign(slices, T(0));
  out.zero.assign(slices, 0);
  const std::size_t center = (kh / 2) * kw + kw / 2;
  for (std::size_t s = 0; s < slices; ++s) {
    const T* d = dirs.data() + s * kk;
    T* u = out.units.data() + s * kk;
    T* e = out.w_eff.data() + s * kk;
    T sq = 0;
    for (std::size_t i = 0; i < kk; ++i) sq += d[i] * d[i];
    const T n = std::sqrt(sq);
    out.norms[s] = n;
    if (n == T(0)) {
      out.zero[s] = 1;
      for (std::size_t i = 0; i < kk; ++i) u[i] = T(0);
      u[center] = T(1);
    } else {
      const T inv = T(1) / n;
      for (std::size_t i = 0; i < kk; ++i) u[i] = d[i] * inv;
    }
    const T sc = (!mask.empty() && !mask[s]) ? T(0) : strengths[s];
    for (std::size_t i = 0; i < kk; ++i) e[i] = sc * u[i];
  }
}

}  // namespace

template <typename T>
auto TapeT<T>::reparam_conv(const Var& x, const Var& dirs, const Var& strengths, ConvGeom g,
                            const KernelMask* mask) -> Var {
  check(x.defined() && dirs.defined() && strengths.defined(), "reparam_conv: undefined var");
  NodePtr xn = x.node_, wn = dirs.node_, sn = strengths.node_;
  check(wn->value.rank() == 4, "reparam_conv: rank-4 directions expected");
  const std::size_t slices = wn->value.dim(0) * wn->value.dim(1);
  const std::size_t kk = wn->value.dim(2) * wn->value.dim(3);
  check(sn->value.rank() == 2 && sn->value.dim(0) == wn->value.dim(0) &&
            sn->value.dim(1) == wn->value.dim(1),
        "reparam_conv: strengths must be K x C");
  if (mask) check(mask->size() == slices, "reparam_conv: mask size mismatch");

  NodePtr yn = make_node(xn->requires_grad || wn->requires_grad || sn->requires_grad);
  auto m = std::make_shared<KernelMask>(mask ? *mask : KernelMask());
  auto saved = std::make_shared<ReparamSaved<T>>();

  auto fwd = [xn, wn, sn, yn, m, saved, g] {
    build_reparam(wn->value, sn->value, *m, *saved);
    yn->value = conv2d(xn->value, saved->w_eff, g);
  };
  auto bwd = [xn, wn, sn, yn, m, saved, g, slices, kk] {
    if (!yn->has_grad) return;
    if (wn->requires_grad || sn->requires_grad) {
      TensorT<T> gw_eff = conv2d_backward_weight(xn->value, yn->grad, g,
                                                 {wn->value.dim(2), wn->value.dim(3)});
      TensorT<T> gs(sn->value.shape());
      TensorT<T> gd(wn->value.shape());
      for (std::size_t s = 0; s < slices; ++s) {
        if (!m->empty() && !(*m)[s]) continue;  // pruned: zero gradient
        const T* ge = gw_eff.data() + s * kk;
        const T* u = saved->units.data() + s * kk;
        T dot = 0;
        for (std::size_t i = 0; i < kk; ++i) dot += ge[i] * u[i];
        gs[s] = dot;
        // d(s * d/|d|)/dd projects out the radial component; at the (never
        // trained-through) zero singularity the direction grad is left at 0.
        if (!saved->zero[s]) {
          const T scale = sn->value[s] / saved->norms[s];
          T* o = gd.data() + s * kk;
          for (std::size_t i = 0; i < kk; ++i) o[i] = scale * (ge[i] - dot * u[i]);
        }
      }
      if (sn->requires_grad) accumulate(*sn, std::move(gs));
      if (wn->requires_grad) accumulate(*wn, std::move(gd));
    }
    if (xn->requires_grad)
      accumulate(*xn, conv2d_backward_input(saved->w_eff, yn->grad, g,
                                            {xn->value.dim(2), xn->value.dim(3)}));
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

namespace {

template <typename T>
struct BnSaved {
  TensorT<T> xhat;
  BnStats<T> stats;
};

}  // namespace

template <typename T>
auto TapeT<T>::batchnorm(const Var& x, const Var* gamma, const Var& beta, BnRunning<T>* running,
                         BnMode mode, T eps, T momentum) -> Var {
  check(x.defined() && beta.defined(), "batchnorm: undefined var");
  NodePtr xn = x.node_, bn = beta.node_;
  NodePtr gn = gamma ? gamma->node_ : nullptr;
  const bool req = xn->requires_grad || bn->requires_grad || (gn && gn->requires_grad);
  NodePtr yn = make_node(req);

  if (mode == BnMode::kEval) {
    check(running != nullptr, "batchnorm: eval mode requires running stats");
    auto fwd = [xn, gn, bn, yn, running, eps] {
      yn->value = batchnorm_forward_eval(xn->value, gn ? &gn->value : nullptr, bn->value,
                                         running->mean, running->var, eps);
    };
    auto bwd = [yn] {
      if (yn->has_grad)
        throw std::logic_error("batchnorm: backward through eval-mode statistics");
    };
    return push(yn, std::move(fwd), std::move(bwd));
  }

  auto saved = std::make_shared<BnSaved<T>>();
  auto fwd = [xn, gn, bn, yn, saved, eps] {
    batchnorm_forward_train(xn->value, gn ? &gn->value : nullptr, bn->value, eps, yn->value,
                            saved->xhat, saved->stats);
  };

  auto bwd = [xn, gn, bn, yn, saved, eps] {
    if (!yn->has_grad) return;
    TensorT<T> gx, gbeta, ggamma;
    batchnorm_backward(yn->grad, saved->xhat, saved->stats, gn ? &gn->value : nullptr, eps, gx,
                       gn ? &ggamma : nullptr, gbeta);
    if (xn->requires_grad) accumulate(*xn, std::move(gx));
    if (gn && gn->requires_grad) accumulate(*gn, std::move(ggamma));
    if (bn->requires_grad) accumulate(*bn, std::move(gbeta));
  };
  Var out = push(yn, std::move(fwd), std::move(bwd));

  if (mode == BnMode::kTrain) {
    // EMA update is a record-time side effect, deliberately outside the
    // replayable closure so replay() stays pure.
    check(running != nullptr, "batchnorm: train mode requires running stats");
    const auto& st = *saved;
    check(running->mean.size() == st.stats.mean.size(), "batchnorm: running stat channel mismatch");
    for (std::size_t c = 0; c < running->mean.size(); ++c) {
      running->mean[c] = momentum * running->mean[c] + (T(1) - momentum) * st.stats.mean[c];
      running->var[c] = momentum * running->var[c] + (T(1) - momentum) * st.stats.var[c];
    }
  }
  return out;
}

template <typename T>
auto TapeT<T>::relu(const Var& x) -> Var {
  check(x.defined(), "relu: undefined var");
  NodePtr xn = x.node_, yn = make_node(xn->requires_grad);
  auto fwd = [xn, yn] { yn->value = synprune::relu(xn->value); };
  auto bwd = [xn, yn] {
    if (!yn->has_grad || !xn->requires_grad) return;
    accumulate(*xn, relu_backward(yn->grad, xn->value));
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

template <typename T>
auto TapeT<T>::add(const Var& a, const Var& b) -> Var {
  check(a.defined() && b.defined(), "add: undefined var");
  NodePtr an = a.node_, bn = b.node_;
  NodePtr yn = make_node(an->requires_grad || bn->requires_grad);
  auto fwd = [an, bn, yn] { yn->value = synprune::add(an->value, bn->value); };
  auto bwd = [an, bn, yn] {
    if (!yn->has_grad) return;
    if (an->requires_grad) accumulate(*an, TensorT<T>(yn->grad));
    if (bn->requires_grad) accumulate(*bn, TensorT<T>(yn->grad));
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

template <typename T>
auto TapeT<T>::global_avg_pool(const Var& x) -> Var {
  check(x.defined(), "global_avg_pool: undefined var");
  NodePtr xn = x.node_, yn = make_node(xn->requires_grad);
  auto fwd = [xn, yn] { yn->value = synprune::global_avg_pool(xn->value); };
  auto bwd = [xn, yn] {
    if (!yn->has_grad || !xn->requires_grad) return;
    accumulate(*xn, global_avg_pool_backward(yn->grad, {xn->value.dim(2), xn->value.dim(3)}));
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

template <typename T>
auto TapeT<T>::linear(const Var& x, const Var& w, const Var& b) -> Var {
  check(x.defined() && w.defined() && b.defined(), "linear: undefined var");
  NodePtr xn = x.node_, wn = w.node_, bn = b.node_;
  NodePtr yn = make_node(xn->requires_grad || wn->requires_grad || bn->requires_grad);
  auto fwd = [xn, wn, bn, yn] { yn->value = synprune::linear(xn->value, wn->value, bn->value); };
  auto bwd = [xn, wn, bn, yn] {
    if (!yn->has_grad) return;
    TensorT<T> gx, gw, gb;
    linear_backward(yn->grad, xn->value, wn->value, gx, gw, gb);
    if (xn->requires_grad) accumulate(*xn, std::move(gx));
    if (wn->requires_grad) accumulate(*wn, std::move(gw));
    if (bn->requires_grad) accumulate(*bn, std::move(gb));
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

template <typename T>
auto TapeT<T>::exp(const Var& x) -> Var {
  check(x.defined(), "exp: undefined var");
  NodePtr xn = x.node_, yn = make_node(xn->requires_grad);
  auto fwd = [xn, yn] {
    TensorT<T> y(xn->value.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(xn->value[i]);
    yn->value = std::move(y);
  };
  auto bwd = [xn, yn] {
    if (!yn->has_grad || !xn->requires_grad) return;
    TensorT<T> gx(xn->value.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = yn->grad[i] * yn->value[i];
    accumulate(*xn, std::move(gx));
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

template <typename T>
auto TapeT<T>::mul(const Var& a, const Var& b) -> Var {
  check(a.defined() && b.defined(), "mul: undefined var");
  NodePtr an = a.node_, bn = b.node_;
  check(an->value.same_shape(bn->value), "mul: shape mismatch");
  NodePtr yn = make_node(an->requires_grad || bn->requires_grad);
  auto fwd = [an, bn, yn] {
    TensorT<T> y(an->value.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = an->value[i] * bn->value[i];
    yn->value = std::move(y);
  };
  auto bwd = [an, bn, yn] {
    if (!yn->has_grad) return;
    if (an->requires_grad) {
      TensorT<T> g(an->value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = yn->grad[i] * bn->value[i];
      accumulate(*an, std::move(g));
    }
    if (bn->requires_grad) {
      TensorT<T> g(bn->value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = yn->grad[i] * an->value[i];
      accumulate(*bn, std::move(g));
    }
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

template <typename T>
auto TapeT<T>::sum(const Var& x) -> Var {
  check(x.defined(), "sum: undefined var");
  NodePtr xn = x.node_, yn = make_node(xn->requires_grad);
  auto fwd = [xn, yn] {
    T acc = 0;
    for (std::size_t i = 0; i < xn->value.size(); ++i) acc += xn->value[i];
    yn->value = TensorT<T>::scalar(acc);
  };
  auto bwd = [xn, yn] {
    if (!yn->has_grad || !xn->requires_grad) return;
    accumulate(*xn, TensorT<T>::full(xn->value.shape(), yn->grad[0]));
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

template <typename T>
auto TapeT<T>::cross_entropy(const Var& logits, std::vector<int> labels) -> Var {
  check(logits.defined(), "cross_entropy: undefined var");
  NodePtr xn = logits.node_, yn = make_node(xn->requires_grad);
  auto lab = std::make_shared<std::vector<int>>(std::move(labels));
  auto fwd = [xn, yn, lab] {
    yn->value = TensorT<T>::scalar(softmax_cross_entropy(xn->value, *lab));
  };
  auto bwd = [xn, yn, lab] {
    if (!yn->has_grad || !xn->requires_grad) return;
    TensorT<T> g = softmax_cross_entropy_backward(xn->value, *lab);
    const T seed = yn->grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= seed;
    accumulate(*xn, std::move(g));
  };
  return push(yn, std::move(fwd), std::move(bwd));
}

template <typename T>
void TapeT<T>::backward(const Var& loss) {
  check(!backward_done_, "backward: tape already swept");
  check(loss.defined(), "backward: undefined loss");
  check(loss.node_->value.size() == 1, "backward: loss must be scalar");
  loss.node_->grad = TensorT<T>::scalar(T(1));
  loss.node_->has_grad = true;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->backward();
  for (auto& [node, p] : bound_) {
    if (!node->has_grad) continue;
    check(p->grad.same_shape(node->grad), "backward: bound parameter shape changed");
    T* dst = p->grad.data();
    const T* src = node->grad.data();
    for (std::size_t i = 0; i < node->grad.size(); ++i) dst[i] += src[i];
  }
  backward_done_ = true;
}

template <typename T>
void TapeT<T>::replay() {
  for (auto& s : steps_) s.forward();
}

template class VarT<float>;
template class VarT<double>;
template class TapeT<float>;
template class TapeT<double>;

}  // namespace synprune::ad
