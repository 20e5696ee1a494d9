#pragma once

// Reverse-mode differentiation over a per-forward-pass tape, plus the
// handful of dense/convolutional operations the semantic-communication
// model needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "xsfl/errors.hpp"
#include "xsfl/tensor.hpp"

namespace xsfl {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Parameter name -> gradient of the same shape.
using GradientMap = std::map<std::string, Tensor>;

/// Ordered record of executed operations. Nodes are appended in execution
/// order, so every node's inputs precede it.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient (data, detached/frozen weights).
  Var constant(Tensor value) { return push(std::move(value), false, {}, {}, {}); }

  /// Differentiable non-parameter leaf; its gradient is available via grad_of.
  Var input(Tensor value) { return push(std::move(value), true, {}, {}, {}); }

  /// Trainable leaf reported by backward() under `name`.
  Var parameter(std::string name, Tensor value) {
    for (auto id : params_) {
      if (nodes_[id].param_name == name) throw ContractError("duplicate parameter '" + name + "'");
    }
    Var v = push(std::move(value), true, {}, {}, std::move(name));
    params_.push_back(v.id_);
    return v;
  }

  /// Appends an operation result. `fn` receives the output gradient and
  /// accumulates into inputs through grad().
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    bool rg = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& in : inputs) {
      check_owned(in);
      rg = rg || nodes_[in.id_].requires_grad;
      ids.push_back(in.id_);
    }
    return push(std::move(value), rg, std::move(ids), rg ? std::move(fn) : BackwardFn{}, {});
  }

  const Tensor& value(Var v) const {
    check_owned(v);
    return nodes_[v.id_].value;
  }

  /// True when the running backward pass needs a gradient for `v`.
  bool wants_grad(Var v) const { return active_[v.id_]; }

  /// Gradient accumulator of `v` for the running backward pass (zero-initialized).
  Tensor& grad(Var v) {
    Node& n = nodes_[v.id_];
    if (!n.has_grad) {
      if (n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape()) {
        n.grad.fill(0.0);
      } else {
        n.grad = Tensor(n.value.shape());
      }
      n.has_grad = true;
    }
    return n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Runs the backward pass of a scalar loss; read results with param_grad().
  void backpropagate(Var loss) {
    check_owned(loss);
    if (!nodes_[loss.id_].value.is_scalar()) {
      throw ContractError("backward() requires a scalar loss, got " +
                          shape_string(nodes_[loss.id_].value.shape()));
    }
    active_.assign(nodes_.size(), false);
    for (std::size_t i = 0; i < nodes_.size(); ++i) active_[i] = nodes_[i].requires_grad;
    run(loss.id_, 0);
  }

  /// Gradient left by the last backpropagate(), or nullptr if `v` was not reached.
  const Tensor* param_grad(Var v) const {
    check_owned(v);
    const Node& n = nodes_[v.id_];
    return n.has_grad ? &n.grad : nullptr;
  }

  /// Gradients of a scalar loss for every parameter on the tape. Parameters
  /// the loss does not reach get a zero entry; constants get none.
  GradientMap backward(Var loss) {
    backpropagate(loss);
    GradientMap out;
    for (auto id : params_) {
      Node& n = nodes_[id];
      out.emplace(n.param_name, n.has_grad ? n.grad : Tensor(n.value.shape()));
    }
    return out;
  }

  /// d(output)/d(wrt) for a scalar `output`; only nodes on a path from
  /// `wrt` to `output` are differentiated.
  Tensor grad_of(Var output, Var wrt) {
    check_owned(output);
    check_owned(wrt);
    if (!nodes_[output.id_].value.is_scalar()) {
      throw ContractError("grad_of() requires a scalar output component");
    }
    if (!nodes_[wrt.id_].requires_grad) {
      throw ContractError("grad_of(): target is a constant leaf");
    }
    active_.assign(nodes_.size(), false);
    active_[wrt.id_] = true;
    for (std::size_t i = wrt.id_ + 1; i <= output.id_; ++i) {
      for (auto in : nodes_[i].inputs) {
        if (active_[in]) {
          active_[i] = true;
          break;
        }
      }
    }
    if (!active_[output.id_]) {
      throw ContractError("grad_of(): output is not reachable from the target node");
    }
    run(output.id_, wrt.id_);
    return nodes_[wrt.id_].has_grad ? nodes_[wrt.id_].grad : Tensor(nodes_[wrt.id_].value.shape());
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string param_name;
  };

  Var push(Tensor value, bool requires_grad, std::vector<std::size_t> inputs, BackwardFn fn,
           std::string name) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    n.param_name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  void check_owned(Var v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) {
      throw ContractError("variable does not belong to this tape");
    }
  }

  void run(std::size_t root, std::size_t stop) {
    for (auto& n : nodes_) n.has_grad = false;
    grad(Var(this, root)).fill(1.0);
    for (std::size_t i = root + 1; i-- > stop;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !active_[i] || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> params_;
  std::vector<bool> active_;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() on an empty variable");
  return tape_->value(*this);
}

namespace detail {

inline Tape& same_tape(std::initializer_list<Var> vars) {
  Tape* t = vars.begin()->tape();
  for (const Var& v : vars) {
    if (v.tape() != t || t == nullptr) throw ContractError("operands live on different tapes");
  }
  return *t;
}

}  // namespace detail

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

}  // namespace detail

/// weight·input + bias. `input` is [in] or [batch, in]; weight is [out, in].
inline Var dense(Var input, Var weight, Var bias) {
  Tape& tape = detail::same_tape({input, weight, bias});
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  if (w.rank() != 2) throw DimensionError("dense weight must be [out,in], got " + shape_string(w.shape()));
  const auto out = static_cast<Eigen::Index>(w.dim(0));
  const auto in = static_cast<Eigen::Index>(w.dim(1));
  if (b.size() != w.dim(0)) throw DimensionError("dense bias length mismatch");
  if (x.rank() > 2 || x.shape().back() != w.dim(1)) {
    throw DimensionError("dense input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(w.shape()));
  }
  const auto batch = static_cast<Eigen::Index>(x.rank() == 2 ? x.dim(0) : 1);
  Tensor y(x.rank() == 2 ? Shape{x.dim(0), w.dim(0)} : Shape{w.dim(0)});
  {
    detail::ConstMatMap X(x.data().data(), batch, in);
    detail::ConstMatMap W(w.data().data(), out, in);
    detail::MatMap Y(y.data().data(), batch, out);
    Y.noalias() = X * W.transpose();
    Eigen::Map<const Eigen::RowVectorXd> B(b.data().data(), out);
    Y.rowwise() += B;
  }
  return tape.record(std::move(y), {input, weight, bias},
                     [input, weight, bias, batch, out, in](Tape& t, const Tensor& g) {
                       detail::ConstMatMap G(g.data().data(), batch, out);
                       if (t.wants_grad(input)) {
                         detail::ConstMatMap W(t.value(weight).data().data(), out, in);
                         detail::MatMap GX(t.grad(input).data().data(), batch, in);
                         GX.noalias() += G * W;
                       }
                       if (t.wants_grad(weight)) {
                         detail::ConstMatMap X(t.value(input).data().data(), batch, in);
                         detail::MatMap GW(t.grad(weight).data().data(), out, in);
                         GW.noalias() += G.transpose() * X;
                       }
                       if (t.wants_grad(bias)) {
                         Eigen::Map<Eigen::RowVectorXd> GB(t.grad(bias).data().data(), out);
                         GB += G.colwise().sum();
                       }
                     });
}

namespace detail {

inline Shape conv_output_shape(const Tensor& x, const Tensor& k, std::size_t stride) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("conv2d input must be [C,H,W] or [B,C,H,W], got " + shape_string(x.shape()));
  }
  if (k.rank() != 4) throw DimensionError("conv2d kernels must be [K,C,kh,kw], got " + shape_string(k.shape()));
  if (stride == 0) throw ParameterError("conv2d stride must be positive");
  const std::size_t a = x.rank() - 3;
  if (k.dim(1) != x.dim(a)) throw DimensionError("conv2d channel mismatch");
  if (k.dim(2) > x.dim(a + 1) || k.dim(3) > x.dim(a + 2)) {
    throw DimensionError("conv2d kernel " + shape_string(k.shape()) + " larger than input " +
                         shape_string(x.shape()));
  }
  Shape out{k.dim(0), (x.dim(a + 1) - k.dim(2)) / stride + 1, (x.dim(a + 2) - k.dim(3)) / stride + 1};
  if (a) out.insert(out.begin(), x.dim(0));
  return out;
}

struct ConvGeometry {
  std::size_t C, H, W, kh, kw, oh, ow, stride;
  std::size_t patch() const { return C * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

// cols[(c,di,dj), (oi,oj)] = x[c, oi*s+di, oj*s+dj]
inline void im2col(const double* x, const ConvGeometry& g, double* cols) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t di = 0; di < g.kh; ++di)
      for (std::size_t dj = 0; dj < g.kw; ++dj) {
        double* row = cols + ((c * g.kh + di) * g.kw + dj) * g.positions();
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          const double* src = x + (c * g.H + oi * g.stride + di) * g.W + dj;
          for (std::size_t oj = 0; oj < g.ow; ++oj) row[oi * g.ow + oj] = src[oj * g.stride];
        }
      }
}

inline void col2im_add(const double* cols, const ConvGeometry& g, double* x) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t di = 0; di < g.kh; ++di)
      for (std::size_t dj = 0; dj < g.kw; ++dj) {
        const double* row = cols + ((c * g.kh + di) * g.kw + dj) * g.positions();
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          double* dst = x + (c * g.H + oi * g.stride + di) * g.W + dj;
          for (std::size_t oj = 0; oj < g.ow; ++oj) dst[oj * g.stride] += row[oi * g.ow + oj];
        }
      }
}

}  // namespace detail

/// Valid (unpadded) cross-correlation of [C,H,W] (or batched [B,C,H,W])
/// input with [K,C,kh,kw] kernels.
inline Var conv2d(Var input, Var kernels, std::size_t stride) {
  Tape& tape = detail::same_tape({input, kernels});
  const Tensor& x = input.value();
  const Tensor& k = kernels.value();
  Tensor y(detail::conv_output_shape(x, k, stride));
  const std::size_t a = x.rank() - 3;
  const std::size_t batch = a ? x.dim(0) : 1;
  const detail::ConvGeometry geo{x.dim(a), x.dim(a + 1), x.dim(a + 2), k.dim(2), k.dim(3),
                                 y.dim(a + 1), y.dim(a + 2), stride};
  const auto K = static_cast<Eigen::Index>(k.dim(0));
  const auto P = static_cast<Eigen::Index>(geo.patch());
  const auto N = static_cast<Eigen::Index>(geo.positions());
  const std::size_t in_stride = geo.C * geo.H * geo.W;
  const std::size_t col_stride = geo.patch() * geo.positions();
  const std::size_t out_stride = k.dim(0) * geo.positions();
  auto cols = std::make_shared<std::vector<double>>(batch * col_stride);
  detail::ConstMatMap Km(k.data().data(), K, P);
  for (std::size_t s = 0; s < batch; ++s) {
    double* cs = cols->data() + s * col_stride;
    detail::im2col(x.data().data() + s * in_stride, geo, cs);
    detail::ConstMatMap Cm(cs, P, N);
    detail::MatMap Y(y.data().data() + s * out_stride, K, N);
    Y.noalias() = Km * Cm;
  }
  return tape.record(std::move(y), {input, kernels},
                     [input, kernels, geo, cols, K, P, N, batch, in_stride, col_stride, out_stride](
                         Tape& t, const Tensor& g) {
                       const bool gk_on = t.wants_grad(kernels);
                       const bool gx_on = t.wants_grad(input);
                       detail::ConstMatMap Km(t.value(kernels).data().data(), K, P);
                       detail::RowMatrix dcols;
                       for (std::size_t s = 0; s < batch; ++s) {
                         detail::ConstMatMap G(g.data().data() + s * out_stride, K, N);
                         if (gk_on) {
                           detail::ConstMatMap Cm(cols->data() + s * col_stride, P, N);
                           detail::MatMap GK(t.grad(kernels).data().data(), K, P);
                           GK.noalias() += G * Cm.transpose();
                         }
                         if (gx_on) {
                           dcols.noalias() = Km.transpose() * G;
                           detail::col2im_add(dcols.data(), geo, t.grad(input).data().data() + s * in_stride);
                         }
                       }
                     });
}

/// conv2d followed by a per-kernel bias.
inline Var conv2d(Var input, Var kernels, Var bias, std::size_t stride) {
  Tape& tape = detail::same_tape({input, kernels, bias});
  Var conv = conv2d(input, kernels, stride);
  const Tensor& b = bias.value();
  if (b.size() != kernels.value().dim(0)) throw DimensionError("conv2d bias length must equal kernel count");
  Tensor y = conv.value();
  const std::size_t r = y.rank();
  const std::size_t plane = y.dim(r - 2) * y.dim(r - 1);
  const std::size_t kernels_n = b.size();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[(i / plane) % kernels_n];
  return tape.record(std::move(y), {conv, bias}, [conv, bias, plane, kernels_n](Tape& t, const Tensor& g) {
    if (t.wants_grad(conv)) {
      Tensor& gc = t.grad(conv);
      for (std::size_t i = 0; i < g.size(); ++i) gc[i] += g[i];
    }
    if (t.wants_grad(bias)) {
      Tensor& gb = t.grad(bias);
      for (std::size_t i = 0; i < g.size(); ++i) gb[(i / plane) % kernels_n] += g[i];
    }
  });
}

inline void check_leaky_slope(double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ParameterError("leaky ReLU slope must lie in (0,1), got " + std::to_string(slope));
  }
}

/// Scalar leaky ReLU: max(0,v) + slope*min(0,v).
inline double leaky_relu(double v, double slope) { return v >= 0.0 ? v : slope * v; }

inline Var leaky_relu(Var input, double slope) {
  check_leaky_slope(slope);
  Tape& tape = *input.tape();
  Tensor y = input.value();
  for (double& v : y.data()) v = leaky_relu(v, slope);
  return tape.record(std::move(y), {input}, [input, slope](Tape& t, const Tensor& g) {
    if (!t.wants_grad(input)) return;
    const Tensor& x = t.value(input);
    Tensor& gx = t.grad(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += x[i] >= 0.0 ? g[i] : slope * g[i];
  });
}

/// Same values, new shape.
inline Var reshape(Var input, Shape shape) {
  Tape& tape = *input.tape();
  Tensor y = input.value().reshaped(std::move(shape));
  return tape.record(std::move(y), {input}, [input](Tape& t, const Tensor& g) {
    if (!t.wants_grad(input)) return;
    Tensor& gx = t.grad(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

inline Var flatten(Var input) { return reshape(input, {input.value().size()}); }

/// [B, ...] -> [B, prod(...)].
inline Var flatten_rows(Var input) {
  const Tensor& x = input.value();
  return reshape(input, {x.dim(0), x.size() / x.dim(0)});
}

/// gain*input + offset, with `offset` held constant under differentiation.
inline Var affine(Var input, double gain, const Tensor& offset) {
  Tape& tape = *input.tape();
  const Tensor& x = input.value();
  if (offset.size() != x.size()) throw DimensionError("affine offset length mismatch");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain * x[i] + offset[i];
  return tape.record(std::move(y), {input}, [input, gain](Tape& t, const Tensor& g) {
    if (!t.wants_grad(input)) return;
    Tensor& gx = t.grad(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += gain * g[i];
  });
}

inline Var sum(Var input) {
  Tape& tape = *input.tape();
  double s = 0.0;
  for (double v : input.value().data()) s += v;
  return tape.record(Tensor::scalar(s), {input}, [input](Tape& t, const Tensor& g) {
    if (!t.wants_grad(input)) return;
    Tensor& gx = t.grad(input);
    for (double& v : gx.data()) v += g[0];
  });
}

inline Var square(Var input) {
  Tape& tape = *input.tape();
  Tensor y = input.value();
  for (double& v : y.data()) v *= v;
  return tape.record(std::move(y), {input}, [input](Tape& t, const Tensor& g) {
    if (!t.wants_grad(input)) return;
    const Tensor& x = t.value(input);
    Tensor& gx = t.grad(input);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * x[i] * g[i];
  });
}

/// Scalar node holding input[flat_index].
inline Var element(Var input, std::size_t flat_index) {
  Tape& tape = *input.tape();
  const Tensor& x = input.value();
  if (flat_index >= x.size()) {
    throw IndexError("element index " + std::to_string(flat_index) + " out of range");
  }
  return tape.record(Tensor::scalar(x[flat_index]), {input}, [input, flat_index](Tape& t, const Tensor& g) {
    if (t.wants_grad(input)) t.grad(input)[flat_index] += g[0];
  });
}

/// Max-subtracted log-sum-exp minus the label logit.
inline double softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  if (logits.size() < 2) throw DimensionError("cross-entropy needs at least two logits");
  if (label >= logits.size()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  return std::log(s) + mx - logits[label];
}

inline Var softmax_cross_entropy(Var logits, std::size_t label) {
  Tape& tape = *logits.tape();
  const Tensor& z = logits.value();
  const double loss = softmax_cross_entropy(z.data(), label);
  return tape.record(Tensor::scalar(loss), {logits}, [logits, label](Tape& t, const Tensor& g) {
    if (!t.wants_grad(logits)) return;
    const Tensor& z = t.value(logits);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z.data()) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z.data()) s += std::exp(v - mx);
    Tensor& gz = t.grad(logits);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = std::exp(z[i] - mx) / s;
      gz[i] += g[0] * (p - (i == label ? 1.0 : 0.0));
    }
  });
}

/// Mean cross-entropy over the rows of [B,M] logits.
inline Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  Tape& tape = *logits.tape();
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw DimensionError("batched cross-entropy expects [B,M] logits with B labels");
  }
  const std::size_t B = z.dim(0), M = z.dim(1);
  double total = 0.0;
  for (std::size_t s = 0; s < B; ++s) total += softmax_cross_entropy(z.data().subspan(s * M, M), labels[s]);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return tape.record(Tensor::scalar(total / static_cast<double>(B)), {logits},
                     [logits, lab = std::move(lab), B, M](Tape& t, const Tensor& g) {
                       if (!t.wants_grad(logits)) return;
                       const Tensor& z = t.value(logits);
                       Tensor& gz = t.grad(logits);
                       const double scale = g[0] / static_cast<double>(B);
                       for (std::size_t s = 0; s < B; ++s) {
                         const double* row = z.data().data() + s * M;
                         double mx = -std::numeric_limits<double>::infinity();
                         for (std::size_t i = 0; i < M; ++i) mx = std::max(mx, row[i]);
                         double sum = 0.0;
                         for (std::size_t i = 0; i < M; ++i) sum += std::exp(row[i] - mx);
                         for (std::size_t i = 0; i < M; ++i) {
                           const double p = std::exp(row[i] - mx) / sum;
                           gz[s * M + i] += scale * (p - (i == lab[s] ? 1.0 : 0.0));
                         }
                       }
                     });
}

}  // namespace xsfl
