#pragma once

// Reverse-mode tape. A Tape records one computation (define-by-run); calling
// backward() on the scalar loss walks the nodes in reverse creation order,
// which is a valid topological order because ops only reference earlier
// nodes. Gradient accumulation order is therefore fixed and runs are
// reproducible.
//
// Leaves can either own their tensor or view an external one (model
// parameters), so building a step's graph never copies the big weight
// matrices. Leaves of frozen parameter groups are registered with
// needs_grad=false and receive no gradient entries at all.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "seqr/kernels.hpp"
#include "seqr/tensor.hpp"

namespace seqr {

struct autodiff_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class S = double>
class Tape {
 public:
  using Id = std::int32_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf viewing an external tensor (not copied).
  Id input(const Tensor<S>* t, bool needsGrad) {
    Node n;
    n.view = t;
    n.needsGrad = needsGrad;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  /// Leaf owning its tensor; never differentiated.
  Id constant(Tensor<S> t) {
    Node n;
    n.value = std::move(t);
    n.needsGrad = false;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  const Tensor<S>& value(Id id) const {
    const Node& n = node(id);
    return n.view ? *n.view : n.value;
  }

  bool has_grad(Id id) const { return !node(id).grad.empty(); }

  const Tensor<S>& grad(Id id) const {
    const Node& n = node(id);
    if (n.grad.empty()) throw autodiff_error("grad: no gradient recorded for node");
    return n.grad;
  }

  bool needs_grad(Id id) const { return node(id).needsGrad; }

  /// Force gradient computation for an intermediate node (analysis hooks).
  void retain_grad(Id id) { node(id).retain = true; }

  // -------------------------------------------------------------------------
  // Ops. Inputs may be [C,H,W] / [n] (unbatched) or [B,C,H,W] / [B,n].

  Id conv2d(Id x, Id w, Id b, int pad, int stride = 1) {
    if (stride != 1) throw autodiff_error("conv2d: only stride 1 is supported");
    if (pad < 0) throw autodiff_error("conv2d: negative padding");
    const Tensor<S>& xv = value(x);
    const Tensor<S>& wv = value(w);
    const Tensor<S>& bv = value(b);
    const bool batched = xv.ndim() == 4;
    if (!batched && xv.ndim() != 3) throw shape_error("conv2d: input must be [C,H,W] or [B,C,H,W]");
    if (wv.ndim() != 4 || wv.dim(2) != wv.dim(3)) throw shape_error("conv2d: kernels must be [Co,Ci,k,k]");

    kernels::ConvDims d;
    d.B = batched ? xv.dim(0) : 1;
    d.Ci = xv.dim(batched ? 1 : 0);
    d.H = xv.dim(batched ? 2 : 1);
    d.W = xv.dim(batched ? 3 : 2);
    d.Co = wv.dim(0);
    d.k = wv.dim(2);
    d.pad = pad;
    if (wv.dim(1) != d.Ci) throw shape_error("conv2d: channel mismatch");
    if (bv.ndim() != 1 || bv.dim(0) != d.Co) throw shape_error("conv2d: bias must be [Co]");
    d.Ho = d.H + 2 * pad - d.k + 1;
    d.Wo = d.W + 2 * pad - d.k + 1;
    if (d.Ho < 1 || d.Wo < 1) throw shape_error("conv2d: kernel larger than padded input");

    Tensor<S> out(batched ? std::vector<int>{d.B, d.Co, d.Ho, d.Wo}
                          : std::vector<int>{d.Co, d.Ho, d.Wo});
    kernels::conv2d_forward(xv.data(), wv.data(), bv.data(), out.data(), d);

    const Id y = emit(std::move(out), {x, w, b});
    if (node(y).needsGrad) {
      node(y).back = [this, x, w, b, y, d]() {
        const Tensor<S>& dy = node(y).grad;
        if (wants(x)) kernels::conv2d_backward_input(dy.data(), value(w).data(),
                                                     ensure_grad(x).data(), d);
        const bool ww = wants(w), wb = wants(b);
        if (ww || wb)
          kernels::conv2d_backward_params(value(x).data(), dy.data(),
                                          ww ? ensure_grad(w).data() : nullptr,
                                          wb ? ensure_grad(b).data() : nullptr, d);
      };
    }
    return y;
  }

  Id maxpool(Id x, int k, int stride = 1) {
    if (stride != 1) throw autodiff_error("maxpool: only stride 1 is supported");
    const Tensor<S>& xv = value(x);
    const bool batched = xv.ndim() == 4;
    if (!batched && xv.ndim() != 3) throw shape_error("maxpool: input must be [C,H,W] or [B,C,H,W]");
    const int B = batched ? xv.dim(0) : 1;
    const int C = xv.dim(batched ? 1 : 0);
    const int H = xv.dim(batched ? 2 : 1);
    const int W = xv.dim(batched ? 3 : 2);
    if (k < 1 || k > H || k > W) throw shape_error("maxpool: window larger than input");
    const int Ho = H - k + 1, Wo = W - k + 1;

    Tensor<S> out(batched ? std::vector<int>{B, C, Ho, Wo} : std::vector<int>{C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::int32_t>>(out.size());
    kernels::maxpool_forward(xv.data(), B, C, H, W, k, out.data(), argmax->data());

    const Id y = emit(std::move(out), {x});
    if (node(y).needsGrad) {
      node(y).back = [this, x, y, argmax, B, C, H, W, k]() {
        if (!wants(x)) return;
        kernels::maxpool_backward(argmax->data(), node(y).grad.data(), B, C, H, W, k,
                                  ensure_grad(x).data());
      };
    }
    return y;
  }

  Id affine(Id x, Id w, Id b) {
    const Tensor<S>& xv = value(x);
    const Tensor<S>& wv = value(w);
    const Tensor<S>& bv = value(b);
    const bool batched = xv.ndim() == 2;
    if (!batched && xv.ndim() != 1) throw shape_error("affine: input must be [n] or [B,n]");
    const int B = batched ? xv.dim(0) : 1;
    const int n = xv.dim(batched ? 1 : 0);
    if (wv.ndim() != 2 || wv.dim(1) != n) throw shape_error("affine: weight shape mismatch");
    const int m = wv.dim(0);
    if (bv.ndim() != 1 || bv.dim(0) != m) throw shape_error("affine: bias shape mismatch");

    Tensor<S> out(batched ? std::vector<int>{B, m} : std::vector<int>{m});
    kernels::affine_forward(xv.data(), B, n, wv.data(), m, bv.data(), out.data());

    const Id y = emit(std::move(out), {x, w, b});
    if (node(y).needsGrad) {
      node(y).back = [this, x, w, b, y, B, n, m]() {
        const Tensor<S>& dy = node(y).grad;
        if (wants(x))
          kernels::affine_backward_input(dy.data(), B, m, value(w).data(), n, ensure_grad(x).data());
        if (wants(w)) {
          Node& wn = node(w);
          const bool fresh = wn.grad.empty();
          if (fresh) wn.grad = Tensor<S>::zeros(value(w).shape());
          kernels::affine_backward_weight(dy.data(), B, m, value(x).data(), n, wn.grad.data(),
                                          /*accumulate=*/!fresh);
        }
        if (wants(b)) kernels::affine_backward_bias(dy.data(), B, m, ensure_grad(b).data());
      };
    }
    return y;
  }

  Id relu(Id x) {
    const Tensor<S>& xv = value(x);
    Tensor<S> out(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > S(0) ? xv[i] : S(0);
    const Id y = emit(std::move(out), {x});
    if (node(y).needsGrad) {
      node(y).back = [this, x, y]() {
        if (!wants(x)) return;
        const Tensor<S>& dy = node(y).grad;
        const Tensor<S>& xv = value(x);
        Tensor<S>& dx = ensure_grad(x);
        for (std::int64_t i = 0; i < xv.size(); ++i)
          if (xv[i] > S(0)) dx[i] += dy[i];  // subgradient 0 at the kink
      };
    }
    return y;
  }

  Id tanh_(Id x) {
    const Tensor<S>& xv = value(x);
    Tensor<S> out(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
    const Id y = emit(std::move(out), {x});
    if (node(y).needsGrad) {
      node(y).back = [this, x, y]() {
        if (!wants(x)) return;
        const Tensor<S>& dy = node(y).grad;
        const Tensor<S>& yv = node(y).value;
        Tensor<S>& dx = ensure_grad(x);
        for (std::int64_t i = 0; i < yv.size(); ++i) dx[i] += dy[i] * (S(1) - yv[i] * yv[i]);
      };
    }
    return y;
  }

  Id reshape(Id x, std::vector<int> shape) {
    const Tensor<S>& xv = value(x);
    Tensor<S> out = xv.reshaped(std::move(shape));
    const Id y = emit(std::move(out), {x});
    if (node(y).needsGrad) {
      node(y).back = [this, x, y]() {
        if (!wants(x)) return;
        const Tensor<S>& dy = node(y).grad;
        Tensor<S>& dx = ensure_grad(x);
        for (std::int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      };
    }
    return y;
  }

  /// [B,F] -> [B-1, 2F]; row i is row_i ++ row_{i+1}.
  Id pair_concat(Id x) {
    const Tensor<S>& xv = value(x);
    if (xv.ndim() != 2 || xv.dim(0) < 2) throw shape_error("pair_concat: need [B>=2, F]");
    const int B = xv.dim(0), F = xv.dim(1);
    Tensor<S> out({B - 1, 2 * F});
    for (int i = 0; i + 1 < B; ++i) {
      const S* a = xv.data() + static_cast<std::int64_t>(i) * F;
      S* o = out.data() + static_cast<std::int64_t>(i) * 2 * F;
      for (int j = 0; j < F; ++j) o[j] = a[j];
      for (int j = 0; j < F; ++j) o[F + j] = a[F + j];
    }
    const Id y = emit(std::move(out), {x});
    if (node(y).needsGrad) {
      node(y).back = [this, x, y, B, F]() {
        if (!wants(x)) return;
        const Tensor<S>& dy = node(y).grad;
        Tensor<S>& dx = ensure_grad(x);
        for (int i = 0; i + 1 < B; ++i) {
          const S* g = dy.data() + static_cast<std::int64_t>(i) * 2 * F;
          S* d0 = dx.data() + static_cast<std::int64_t>(i) * F;
          for (int j = 0; j < F; ++j) d0[j] += g[j];
          for (int j = 0; j < F; ++j) d0[F + j] += g[F + j];
        }
      };
    }
    return y;
  }

  /// [B] or [B,1] -> [B-1]; d_i = x_i - x_{i+1}.
  Id seq_diff(Id x) {
    const Tensor<S>& xv = value(x);
    const std::int64_t B = xv.size();
    if (B < 2) throw shape_error("seq_diff: need at least 2 elements");
    Tensor<S> out({static_cast<int>(B - 1)});
    for (std::int64_t i = 0; i + 1 < B; ++i) out[i] = xv[i] - xv[i + 1];
    const Id y = emit(std::move(out), {x});
    if (node(y).needsGrad) {
      node(y).back = [this, x, y, B]() {
        if (!wants(x)) return;
        const Tensor<S>& dy = node(y).grad;
        Tensor<S>& dx = ensure_grad(x);
        for (std::int64_t i = 0; i + 1 < B; ++i) {
          dx[i] += dy[i];
          dx[i + 1] -= dy[i];
        }
      };
    }
    return y;
  }

  /// x + s, with scalar s ([1]) broadcast over every element.
  Id add_scalar(Id x, Id s) {
    const Tensor<S>& xv = value(x);
    const Tensor<S>& sv = value(s);
    if (sv.size() != 1) throw shape_error("add_scalar: scalar operand must have one element");
    Tensor<S> out(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + sv[0];
    const Id y = emit(std::move(out), {x, s});
    if (node(y).needsGrad) {
      node(y).back = [this, x, s, y]() {
        const Tensor<S>& dy = node(y).grad;
        if (wants(x)) {
          Tensor<S>& dx = ensure_grad(x);
          for (std::int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
        }
        if (wants(s)) {
          S acc = S(0);
          for (std::int64_t i = 0; i < dy.size(); ++i) acc += dy[i];
          ensure_grad(s)[0] += acc;
        }
      };
    }
    return y;
  }

  Id square(Id x) {
    const Tensor<S>& xv = value(x);
    Tensor<S> out(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * xv[i];
    const Id y = emit(std::move(out), {x});
    if (node(y).needsGrad) {
      node(y).back = [this, x, y]() {
        if (!wants(x)) return;
        const Tensor<S>& dy = node(y).grad;
        const Tensor<S>& xv = value(x);
        Tensor<S>& dx = ensure_grad(x);
        for (std::int64_t i = 0; i < xv.size(); ++i) dx[i] += S(2) * xv[i] * dy[i];
      };
    }
    return y;
  }

  Id mean(Id x) {
    const Tensor<S>& xv = value(x);
    if (xv.size() == 0) throw shape_error("mean: empty input");
    S acc = S(0);
    for (std::int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
    const std::int64_t n = xv.size();
    Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(n));
    const Id y = emit(std::move(out), {x});
    if (node(y).needsGrad) {
      node(y).back = [this, x, y, n]() {
        if (!wants(x)) return;
        const S g = node(y).grad[0] / static_cast<S>(n);
        Tensor<S>& dx = ensure_grad(x);
        for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += g;
      };
    }
    return y;
  }

  Id sum(Id x) {
    const Tensor<S>& xv = value(x);
    S acc = S(0);
    for (std::int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
    Tensor<S> out = Tensor<S>::scalar(acc);
    const Id y = emit(std::move(out), {x});
    if (node(y).needsGrad) {
      node(y).back = [this, x, y]() {
        if (!wants(x)) return;
        const S g = node(y).grad[0];
        Tensor<S>& dx = ensure_grad(x);
        for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += g;
      };
    }
    return y;
  }

  // -------------------------------------------------------------------------

  /// Reverse-mode accumulation from a finite scalar loss node.
  void backward(Id loss) {
    const Tensor<S>& lv = value(loss);
    if (lv.size() != 1) throw autodiff_error("backward: loss must be scalar");
    if (!std::isfinite(static_cast<double>(lv[0])))
      throw autodiff_error("backward: non-finite loss poisons gradients");
    node(loss).grad = Tensor<S>::scalar(S(1));
    for (Id id = loss; id >= 0; --id) {
      Node& n = node(id);
      if (n.back && !n.grad.empty()) n.back();
    }
  }

 private:
  struct Node {
    Tensor<S> value;                    // owned (ops, constants)
    const Tensor<S>* view = nullptr;    // external leaves
    Tensor<S> grad;
    bool needsGrad = false;
    bool retain = false;
    std::function<void()> back;
  };

  Node& node(Id id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(Id id) const { return nodes_[static_cast<std::size_t>(id)]; }

  bool wants(Id id) const {
    const Node& n = node(id);
    return n.needsGrad || n.retain;
  }

  Tensor<S>& ensure_grad(Id id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad = Tensor<S>::zeros(value(id).shape());
    return n.grad;
  }

  Id emit(Tensor<S> out, std::initializer_list<Id> parents) {
    Node n;
    n.value = std::move(out);
    for (Id p : parents)
      if (wants(p)) n.needsGrad = true;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace seqr
