#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pairrl/errors.hpp"
#include "pairrl/tensor.hpp"

namespace pairrl {

// Reverse-mode automatic differentiation on a linear tape.
//
// A tape records every operation in creation order, which is already a
// topological order of the graph. Tapes are meant to be short lived: build one
// per micro-batch, call backward() once, read gradients, discard.

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  subtract,
  multiply,
  scale,
  tanh,
  relu,
  exp,
  log,
  softmax,
  log_softmax,
  sum,
  mean,
  concat,
  slice,
  clip_min,
  stop_grad,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::subtract: return "subtract";
    case Op::multiply: return "multiply";
    case Op::scale: return "scale";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::clip_min: return "clip_min";
    case Op::stop_grad: return "stop_grad";
  }
  return "?";
}

/// Per-op attributes. `axis` is -1 for "all elements" reductions, otherwise
/// 0 (over rows) or 1 (over columns). `scalar` is the factor for scale and the
/// bound for clip_min. `begin`/`end` delimit a slice along `axis`.
struct OpAttrs {
  double scalar = 0.0;
  int axis = -1;
  std::size_t begin = 0;
  std::size_t end = 0;
};

template <class Real>
class BasicTape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class Real>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicTape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  BasicTape<Real>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const BasicTensor<Real>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  Real item() const { return value().item(); }

 private:
  BasicTape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class Real>
class BasicTape {
 public:
  using TensorT = BasicTensor<Real>;
  using Var = BasicVar<Real>;
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapC = Eigen::Map<const Mat>;
  using MapM = Eigen::Map<Mat>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var constant(TensorT value) { return add_leaf(std::move(value), false, {}); }
  Var variable(TensorT value) { return add_leaf(std::move(value), true, {}); }

  /// Leaf that requires grad and is reported by name from backward().
  Var param(const std::string& name, TensorT value) { return add_leaf(std::move(value), true, name); }

  std::size_t size() const { return nodes_.size(); }
  const TensorT& value(Var v) const { return nodes_.at(v.id()).value; }
  Op op(Var v) const { return nodes_.at(v.id()).op; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

  /// Gradient of the last backward() loss with respect to `v`; zeros when no
  /// gradient reached the node.
  TensorT grad(Var v) const {
    const auto& n = nodes_.at(v.id());
    if (n.grad.empty()) return TensorT(n.value.shape(), Real(0));
    return n.grad;
  }

  /// Generic dispatcher: records `op` applied to `inputs`.
  Var forward(Op op, std::span<const Var> inputs, const OpAttrs& attrs = {}) {
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw ContractError("operand belongs to another tape");
    }
    auto expect = [&](std::size_t n) {
      if (inputs.size() != n) {
        throw ContractError(std::string(op_name(op)) + " expects " + std::to_string(n) + " inputs");
      }
    };
    switch (op) {
      case Op::leaf: throw ContractError("use constant()/variable() to create leaves");
      case Op::matmul: expect(2); return do_matmul(inputs[0], inputs[1]);
      case Op::add:
      case Op::subtract:
      case Op::multiply: expect(2); return do_binary(op, inputs[0], inputs[1]);
      case Op::scale:
      case Op::tanh:
      case Op::relu:
      case Op::exp:
      case Op::log:
      case Op::clip_min:
      case Op::stop_grad: expect(1); return do_unary(op, inputs[0], attrs);
      case Op::softmax:
      case Op::log_softmax: expect(1); return do_softmax(op, inputs[0]);
      case Op::sum:
      case Op::mean: expect(1); return do_reduce(op, inputs[0], attrs.axis);
      case Op::concat: return do_concat(inputs, attrs.axis);
      case Op::slice: expect(1); return do_slice(inputs[0], attrs);
    }
    throw ContractError("unknown op");
  }

  Var forward(Op op, std::initializer_list<Var> inputs, const OpAttrs& attrs = {}) {
    return forward(op, std::span<const Var>(inputs.begin(), inputs.size()), attrs);
  }

  /// Runs reverse accumulation from a scalar `loss`. Returns the gradient of
  /// every named parameter (zeros for parameters the loss does not reach).
  BasicParamSet<Real> backward(Var loss) {
    if (value(loss).size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + shape_str(value(loss).shape()));
    }
    for (auto& n : nodes_) n.grad = TensorT();
    auto& root = nodes_[loss.id()];
    if (root.requires_grad) root.grad = TensorT(root.value.shape(), Real(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || n.op == Op::leaf) continue;
      propagate(i);
    }
    BasicParamSet<Real> out;
    for (const auto& [name, id] : named_) out.insert_or_assign(name, grad(Var(this, id)));
    return out;
  }

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    Op op = Op::leaf;
    std::vector<std::size_t> parents;
    OpAttrs attrs;
    bool requires_grad = false;
    // broadcast mode of parents[1] for binary ops
    int bcast = 0;
  };

  enum Broadcast : int { same = 0, scalar = 1, row = 2, col = 3 };

  Var add_leaf(TensorT value, bool requires_grad, const std::string& name) {
    if (!value.all_finite()) throw NumericError("non-finite value supplied to tape leaf");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    if (!name.empty()) named_.emplace_back(name, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
  }

  Var push(Op op, TensorT value, std::vector<std::size_t> parents, OpAttrs attrs = {}, int bcast = 0) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op_name(op));
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.attrs = attrs;
    n.bcast = bcast;
    n.requires_grad = false;
    if (op != Op::stop_grad) {
      for (auto p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
    }
    n.parents = std::move(parents);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  TensorT& grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = TensorT(n.value.shape(), Real(0));
    return n.grad;
  }

  static int broadcast_mode(const TensorT& a, const TensorT& b) {
    if (a.shape() == b.shape()) return same;
    if (b.size() == 1) return scalar;
    if (b.rows() == 1 && b.cols() == a.cols() && a.rank() <= 2) return row;
    if (b.rank() == 2 && b.cols() == 1 && b.rows() == a.rows() && a.rank() == 2) return col;
    throw DimensionError("cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
  }

  static std::size_t bindex(int mode, std::size_t r, std::size_t c, std::size_t cols) {
    switch (mode) {
      case scalar: return 0;
      case row: return c;
      case col: return r;
      default: return r * cols + c;
    }
  }

  Var do_matmul(Var av, Var bv) {
    const auto& a = value(av);
    const auto& b = value(bv);
    if (a.rank() > 2 || b.rank() != 2 || a.cols() != b.rows()) {
      throw DimensionError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    TensorT out = TensorT::matrix(a.rows(), b.cols());
    rowwise_matmul(a.storage().data(), b.storage().data(), out.storage().data(), a.rows(), a.cols(), b.cols());
    return push(Op::matmul, std::move(out), {av.id(), bv.id()});
  }

  static void axpy(Real* __restrict out, Real alpha, const Real* __restrict x, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) out[j] += alpha * x[j];
  }

  // Every output row accumulates over k in ascending order, so a row's result
  // is independent of the other rows in the batch. Zero entries of `a` are
  // skipped; observation features are mostly zero.
  static void rowwise_matmul(const Real* a, const Real* b, Real* out, std::size_t m, std::size_t k, std::size_t n) {
    constexpr std::size_t block = 4;
    for (std::size_t i0 = 0; i0 < m; i0 += block) {
      const std::size_t i1 = std::min(m, i0 + block);
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Real* brow = b + kk * n;
        for (std::size_t i = i0; i < i1; ++i) {
          const Real av = a[i * k + kk];
          if (av != Real(0)) axpy(out + i * n, av, brow, n);
        }
      }
    }
  }

  Var do_binary(Op op, Var av, Var bv) {
    const auto& a = value(av);
    const auto& b = value(bv);
    const int mode = broadcast_mode(a, b);
    TensorT out(a.shape());
    const std::size_t rows = a.rows(), cols = a.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const Real x = a[r * cols + c];
        const Real y = b[bindex(mode, r, c, cols)];
        out[r * cols + c] = op == Op::add ? x + y : op == Op::subtract ? x - y : x * y;
      }
    }
    return push(op, std::move(out), {av.id(), bv.id()}, {}, mode);
  }

  Var do_unary(Op op, Var xv, const OpAttrs& attrs) {
    const auto& x = value(xv);
    TensorT out(x.shape());
    const auto s = static_cast<Real>(attrs.scalar);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Real v = x[i];
      switch (op) {
        case Op::scale: out[i] = s * v; break;
        case Op::tanh: out[i] = std::tanh(v); break;
        case Op::relu: out[i] = v > Real(0) ? v : Real(0); break;
        case Op::exp: out[i] = std::exp(v); break;
        case Op::log:
          if (!(v > Real(0))) throw NumericError("log of non-positive value");
          out[i] = std::log(v);
          break;
        case Op::clip_min: out[i] = v <= s ? v : s; break;
        case Op::stop_grad: out[i] = v; break;
        default: throw ContractError("not a unary op");
      }
    }
    return push(op, std::move(out), {xv.id()}, attrs);
  }

  Var do_softmax(Op op, Var xv) {
    const auto& x = value(xv);
    TensorT out(x.shape());
    const std::size_t rows = x.rows(), cols = x.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* in = x.storage().data() + r * cols;
      Real* o = out.storage().data() + r * cols;
      const Real mx = *std::max_element(in, in + cols);
      double z = 0.0;
      for (std::size_t c = 0; c < cols; ++c) z += std::exp(static_cast<double>(in[c] - mx));
      const double log_z = std::log(z);
      for (std::size_t c = 0; c < cols; ++c) {
        const double shifted = static_cast<double>(in[c] - mx) - log_z;
        o[c] = static_cast<Real>(op == Op::softmax ? std::exp(shifted) : shifted);
      }
    }
    return push(op, std::move(out), {xv.id()});
  }

  Var do_reduce(Op op, Var xv, int axis) {
    const auto& x = value(xv);
    const std::size_t rows = x.rows(), cols = x.cols();
    OpAttrs attrs;
    attrs.axis = axis;
    if (axis == -1) {
      double acc = 0.0;
      for (auto v : x.data()) acc += v;
      if (op == Op::mean) acc /= static_cast<double>(x.size());
      return push(op, TensorT::scalar(static_cast<Real>(acc)), {xv.id()}, attrs);
    }
    if (axis != 0 && axis != 1) throw DimensionError("reduction axis must be -1, 0 or 1");
    if (axis == 0) {
      std::vector<double> acc(cols, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) acc[c] += x[r * cols + c];
      TensorT out = TensorT::matrix(1, cols);
      for (std::size_t c = 0; c < cols; ++c)
        out[c] = static_cast<Real>(op == Op::mean ? acc[c] / static_cast<double>(rows) : acc[c]);
      return push(op, std::move(out), {xv.id()}, attrs);
    }
    TensorT out = TensorT::matrix(rows, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) acc += x[r * cols + c];
      out[r] = static_cast<Real>(op == Op::mean ? acc / static_cast<double>(cols) : acc);
    }
    return push(op, std::move(out), {xv.id()}, attrs);
  }

  Var do_concat(std::span<const Var> inputs, int axis) {
    if (inputs.empty()) throw ContractError("concat of zero tensors");
    if (axis != 0 && axis != 1) throw DimensionError("concat axis must be 0 or 1");
    std::vector<std::size_t> parents;
    std::size_t rows = 0, cols = 0;
    for (const auto& in : inputs) {
      const auto& t = value(in);
      if (t.rank() > 2) throw DimensionError("concat supports rank <= 2");
      if (axis == 1) {
        if (rows == 0) rows = t.rows();
        if (t.rows() != rows) throw DimensionError("concat along columns needs equal row counts");
        cols += t.cols();
      } else {
        if (cols == 0) cols = t.cols();
        if (t.cols() != cols) throw DimensionError("concat along rows needs equal column counts");
        rows += t.rows();
      }
      parents.push_back(in.id());
    }
    TensorT out = TensorT::matrix(rows, cols);
    std::size_t offset = 0;
    for (const auto& in : inputs) {
      const auto& t = value(in);
      for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) {
          if (axis == 1) out.at(r, offset + c) = t.at(r, c);
          else out.at(offset + r, c) = t.at(r, c);
        }
      offset += axis == 1 ? t.cols() : t.rows();
    }
    OpAttrs attrs;
    attrs.axis = axis;
    return push(Op::concat, std::move(out), std::move(parents), attrs);
  }

  Var do_slice(Var xv, const OpAttrs& attrs) {
    const auto& x = value(xv);
    if (attrs.axis != 0 && attrs.axis != 1) throw DimensionError("slice axis must be 0 or 1");
    const std::size_t extent = attrs.axis == 0 ? x.rows() : x.cols();
    if (attrs.begin >= attrs.end || attrs.end > extent) {
      throw DimensionError("slice [" + std::to_string(attrs.begin) + "," + std::to_string(attrs.end) +
                           ") out of range for " + shape_str(x.shape()));
    }
    const std::size_t n = attrs.end - attrs.begin;
    const std::size_t rows = attrs.axis == 0 ? n : x.rows();
    const std::size_t cols = attrs.axis == 1 ? n : x.cols();
    TensorT out = TensorT::matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out.at(r, c) = attrs.axis == 0 ? x.at(attrs.begin + r, c) : x.at(r, attrs.begin + c);
    return push(Op::slice, std::move(out), {xv.id()}, attrs);
  }

  void propagate(std::size_t id) {
    // `node` stays valid: grad_buffer only touches existing nodes.
    const Node& node = nodes_[id];
    const TensorT& g = node.grad;
    const auto needs = [&](std::size_t k) { return nodes_[node.parents[k]].requires_grad; };

    switch (node.op) {
      case Op::leaf: break;
      case Op::matmul: {
        const auto& a = nodes_[node.parents[0]].value;
        const auto& b = nodes_[node.parents[1]].value;
        MapC gm(g.storage().data(), g.rows(), g.cols());
        if (needs(0)) {
          auto& ga = grad_buffer(node.parents[0]);
          MapM(ga.storage().data(), a.rows(), a.cols()).noalias() +=
              gm * MapC(b.storage().data(), b.rows(), b.cols()).transpose();
        }
        if (needs(1)) {
          auto& gb = grad_buffer(node.parents[1]);
          MapM(gb.storage().data(), b.rows(), b.cols()).noalias() +=
              MapC(a.storage().data(), a.rows(), a.cols()).transpose() * gm;
        }
        break;
      }
      case Op::add:
      case Op::subtract:
      case Op::multiply: {
        const auto& a = nodes_[node.parents[0]].value;
        const auto& b = nodes_[node.parents[1]].value;
        const std::size_t rows = a.rows(), cols = a.cols();
        if (needs(0)) {
          auto& ga = grad_buffer(node.parents[0]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              ga[i] += node.op == Op::multiply ? g[i] * b[bindex(node.bcast, r, c, cols)] : g[i];
            }
        }
        if (needs(1)) {
          auto& gb = grad_buffer(node.parents[1]);
          const Real sign = node.op == Op::subtract ? Real(-1) : Real(1);
          if (node.bcast == same) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += node.op == Op::multiply ? g[i] * a[i] : sign * g[i];
          } else {
            std::vector<double> acc(gb.size(), 0.0);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                acc[bindex(node.bcast, r, c, cols)] += node.op == Op::multiply ? double(g[i]) * a[i] : double(g[i]);
              }
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += static_cast<Real>(sign * acc[i]);
          }
        }
        break;
      }
      case Op::scale:
      case Op::tanh:
      case Op::relu:
      case Op::exp:
      case Op::log:
      case Op::clip_min: {
        if (!needs(0)) break;
        const auto& x = nodes_[node.parents[0]].value;
        const auto& y = node.value;
        auto& gx = grad_buffer(node.parents[0]);
        const auto s = static_cast<Real>(node.attrs.scalar);
        for (std::size_t i = 0; i < g.size(); ++i) {
          Real d = 0;
          switch (node.op) {
            case Op::scale: d = s; break;
            case Op::tanh: d = Real(1) - y[i] * y[i]; break;
            case Op::relu: d = x[i] > Real(0) ? Real(1) : Real(0); break;
            case Op::exp: d = y[i]; break;
            case Op::log: d = Real(1) / x[i]; break;
            case Op::clip_min: d = x[i] <= s ? Real(1) : Real(0); break;
            default: break;
          }
          gx[i] += g[i] * d;
        }
        break;
      }
      case Op::softmax:
      case Op::log_softmax: {
        if (!needs(0)) break;
        const auto& y = node.value;
        auto& gx = grad_buffer(node.parents[0]);
        const std::size_t rows = y.rows(), cols = y.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * cols;
          double dot = 0.0;
          if (node.op == Op::softmax) {
            for (std::size_t c = 0; c < cols; ++c) dot += double(g[base + c]) * y[base + c];
            for (std::size_t c = 0; c < cols; ++c)
              gx[base + c] += static_cast<Real>(y[base + c] * (g[base + c] - dot));
          } else {
            for (std::size_t c = 0; c < cols; ++c) dot += g[base + c];
            for (std::size_t c = 0; c < cols; ++c)
              gx[base + c] += static_cast<Real>(g[base + c] - std::exp(double(y[base + c])) * dot);
          }
        }
        break;
      }
      case Op::sum:
      case Op::mean: {
        if (!needs(0)) break;
        const auto& x = nodes_[node.parents[0]].value;
        auto& gx = grad_buffer(node.parents[0]);
        const std::size_t rows = x.rows(), cols = x.cols();
        const int axis = node.attrs.axis;
        double div = 1.0;
        if (node.op == Op::mean) div = axis == -1 ? double(x.size()) : axis == 0 ? double(rows) : double(cols);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const Real gv = axis == -1 ? g[0] : axis == 0 ? g[c] : g[r];
            gx[r * cols + c] += static_cast<Real>(gv / div);
          }
        break;
      }
      case Op::concat: {
        std::size_t offset = 0;
        const int axis = node.attrs.axis;
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
          const auto& t = nodes_[node.parents[k]].value;
          if (needs(k)) {
            auto& gt = grad_buffer(node.parents[k]);
            for (std::size_t r = 0; r < t.rows(); ++r)
              for (std::size_t c = 0; c < t.cols(); ++c)
                gt.at(r, c) += axis == 1 ? g.at(r, offset + c) : g.at(offset + r, c);
          }
          offset += axis == 1 ? t.cols() : t.rows();
        }
        break;
      }
      case Op::slice: {
        if (!needs(0)) break;
        auto& gx = grad_buffer(node.parents[0]);
        const auto& a = node.attrs;
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) {
            if (a.axis == 0) gx.at(a.begin + r, c) += g.at(r, c);
            else gx.at(r, a.begin + c) += g.at(r, c);
          }
        break;
      }
      case Op::stop_grad: break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> named_;
};

using Tape = BasicTape<float>;
using Var = BasicVar<float>;
using Tape64 = BasicTape<double>;
using Var64 = BasicVar<double>;

// Free-function wrappers over BasicTape::forward.

template <class R>
BasicVar<R> matmul(BasicVar<R> a, BasicVar<R> b) { return a.tape().forward(Op::matmul, {a, b}); }
template <class R>
BasicVar<R> add(BasicVar<R> a, BasicVar<R> b) { return a.tape().forward(Op::add, {a, b}); }
template <class R>
BasicVar<R> subtract(BasicVar<R> a, BasicVar<R> b) { return a.tape().forward(Op::subtract, {a, b}); }
template <class R>
BasicVar<R> multiply(BasicVar<R> a, BasicVar<R> b) { return a.tape().forward(Op::multiply, {a, b}); }

template <class R>
BasicVar<R> scale(BasicVar<R> a, double s) {
  OpAttrs at;
  at.scalar = s;
  return a.tape().forward(Op::scale, {a}, at);
}

template <class R>
BasicVar<R> tanh(BasicVar<R> a) { return a.tape().forward(Op::tanh, {a}); }
template <class R>
BasicVar<R> relu(BasicVar<R> a) { return a.tape().forward(Op::relu, {a}); }
template <class R>
BasicVar<R> exp(BasicVar<R> a) { return a.tape().forward(Op::exp, {a}); }
template <class R>
BasicVar<R> log(BasicVar<R> a) { return a.tape().forward(Op::log, {a}); }
template <class R>
BasicVar<R> softmax(BasicVar<R> a) { return a.tape().forward(Op::softmax, {a}); }
template <class R>
BasicVar<R> log_softmax(BasicVar<R> a) { return a.tape().forward(Op::log_softmax, {a}); }
template <class R>
BasicVar<R> stop_grad(BasicVar<R> a) { return a.tape().forward(Op::stop_grad, {a}); }

template <class R>
BasicVar<R> sum(BasicVar<R> a, int axis = -1) {
  OpAttrs at;
  at.axis = axis;
  return a.tape().forward(Op::sum, {a}, at);
}

template <class R>
BasicVar<R> mean(BasicVar<R> a, int axis = -1) {
  OpAttrs at;
  at.axis = axis;
  return a.tape().forward(Op::mean, {a}, at);
}

template <class R>
BasicVar<R> concat(std::span<const BasicVar<R>> parts, int axis = 1) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  OpAttrs at;
  at.axis = axis;
  return parts.front().tape().forward(Op::concat, parts, at);
}

template <class R>
BasicVar<R> slice(BasicVar<R> a, int axis, std::size_t begin, std::size_t end) {
  OpAttrs at;
  at.axis = axis;
  at.begin = begin;
  at.end = end;
  return a.tape().forward(Op::slice, {a}, at);
}

/// min(x, bound) elementwise. Gradient is 1 where x <= bound, else 0.
template <class R>
BasicVar<R> clip_min(BasicVar<R> a, double bound) {
  OpAttrs at;
  at.scalar = bound;
  return a.tape().forward(Op::clip_min, {a}, at);
}

// Compositions of the primitives above.

/// max(x, bound) = -min(-x, -bound); ties pass through.
template <class R>
BasicVar<R> clip_max(BasicVar<R> a, double bound) { return scale(clip_min(scale(a, -1.0), -bound), -1.0); }

template <class R>
BasicVar<R> clamp(BasicVar<R> a, double lo, double hi) { return clip_min(clip_max(a, lo), hi); }

/// Elementwise min(a, b) = a - relu(a - b). At ties the gradient goes to `a`.
template <class R>
BasicVar<R> minimum(BasicVar<R> a, BasicVar<R> b) { return subtract(a, relu(subtract(a, b))); }

/// Elementwise max(a, b) = a + relu(b - a). At ties the gradient goes to `a`.
template <class R>
BasicVar<R> maximum(BasicVar<R> a, BasicVar<R> b) { return add(a, relu(subtract(b, a))); }

template <class R>
BasicVar<R> square(BasicVar<R> a) { return multiply(a, a); }

template <class R>
BasicVar<R> operator+(BasicVar<R> a, BasicVar<R> b) { return add(a, b); }
template <class R>
BasicVar<R> operator-(BasicVar<R> a, BasicVar<R> b) { return subtract(a, b); }
template <class R>
BasicVar<R> operator*(BasicVar<R> a, BasicVar<R> b) { return multiply(a, b); }
template <class R>
BasicVar<R> operator*(double s, BasicVar<R> a) { return scale(a, s); }
template <class R>
BasicVar<R> operator-(BasicVar<R> a) { return scale(a, -1.0); }

/// Compares reverse-mode gradients against central differences.
///
/// `f(tape, vars)` must build a scalar from `vars` (one per entry of `params`)
/// and be deterministic. Returns the maximum over all parameter entries of
/// |analytic - numeric| / max(1, |analytic|).
template <class Real, class F>
double grad_check(F&& f, const std::vector<BasicTensor<Real>>& params, double h) {
  if (!(h > 0.0)) throw ContractError("grad_check perturbation must be positive");

  auto evaluate = [&](const std::vector<BasicTensor<Real>>& values) {
    BasicTape<Real> tape;
    std::vector<BasicVar<Real>> vars;
    vars.reserve(values.size());
    for (const auto& v : values) vars.push_back(tape.variable(v));
    return static_cast<double>(f(tape, vars).item());
  };

  std::vector<BasicTensor<Real>> analytic;
  {
    BasicTape<Real> tape;
    std::vector<BasicVar<Real>> vars;
    for (const auto& p : params) vars.push_back(tape.variable(p));
    auto loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  double worst = 0.0;
  auto probe = params;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const Real orig = probe[k][i];
      probe[k][i] = static_cast<Real>(orig + h);
      const double up = evaluate(probe);
      probe[k][i] = static_cast<Real>(orig - h);
      const double down = evaluate(probe);
      probe[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace pairrl
