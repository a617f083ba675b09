#include "graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <malloc.h>

#include "error.hpp"

namespace alignlab {

namespace {

// Tape values are short-lived buffers of up to a few MB. glibc would serve
// each from a fresh mmap and pay the page faults every step; keeping them on
// the heap lets freed blocks be reused.
[[maybe_unused]] const bool heap_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_stride;
  std::vector<std::size_t> b_stride;
};

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank - a.size(), 1), pb(rank - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
  BroadcastPlan plan;
  plan.out.resize(rank);
  plan.a_stride.resize(rank);
  plan.b_stride.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(a) + " with " + shape_string(b) +
                       " (dim " + std::to_string(d) + ")");
    }
    plan.out[d] = std::max(pa[d], pb[d]);
    plan.a_stride[d] = pa[d] == 1 ? 0 : sa[d];
    plan.b_stride[d] = pb[d] == 1 ? 0 : sb[d];
  }
  return plan;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t rank = plan.out.size();
  const std::size_t total = shape_numel(plan.out);
  if (total == 0) return;
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = plan.out[rank - 1];
  const std::size_t as = plan.a_stride[rank - 1], bs = plan.b_stride[rank - 1];
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ai = 0, bi = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, ai + k * as, bi + k * bs);
    // advance the outer counters
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++counter[d];
      ai += plan.a_stride[d];
      bi += plan.b_stride[d];
      if (counter[d] < plan.out[d]) break;
      ai -= plan.a_stride[d] * counter[d];
      bi -= plan.b_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
}

// (outer, n, inner) view of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t d = 0; d < axis; ++d) s.outer *= shape[d];
  s.n = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) s.inner *= shape[d];
  return s;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

void im2col(const double* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, double* col) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * hw;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          double* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = x + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long sx = static_cast<long>(xx) + dx;
            dst[xx] = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, double* x) {
  const long pad = static_cast<long>(k / 2);
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * hw;
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const double* src = row + y * w;
          double* dst = x + (c * h + static_cast<std::size_t>(sy)) * w;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long sx = static_cast<long>(xx) + dx;
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += src[xx];
          }
        }
      }
    }
  }
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Scale: return "scale";
    case OpKind::Shift: return "shift";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Square: return "square";
    case OpKind::Relu: return "relu";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Downsample2: return "downsample2";
    case OpKind::Upsample: return "upsample";
    case OpKind::Softmax: return "softmax";
    case OpKind::Sum: return "sum";
    case OpKind::SumAxis: return "sum_axis";
    case OpKind::Mean: return "mean";
  }
  return "unknown";
}

const Graph::Node& Graph::at(NodeId id) const {
  if (id.index >= nodes_.size()) throw Error("graph: node " + std::to_string(id.index) + " does not exist");
  return nodes_[id.index];
}

const Tensor& Graph::value(NodeId node) const { return at(node).value; }
OpKind Graph::kind(NodeId node) const { return at(node).kind; }

NodeId Graph::record(Node node) {
  for (NodeId in : node.inputs) {
    const Node& src = at(in);
    node.needs_grad = node.needs_grad || src.needs_grad;
  }
  run_forward(node);
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

NodeId Graph::input(std::string name, Tensor value) {
  if (inputs_.count(name)) throw Error("graph: duplicate input '" + name + "'");
  Node n;
  n.kind = OpKind::Input;
  n.value = std::move(value);
  n.name = name;
  auto id = record(std::move(n));
  inputs_[std::move(name)] = id;
  return id;
}

NodeId Graph::parameter(std::string name, Tensor value) {
  if (params_.count(name)) throw Error("graph: duplicate parameter '" + name + "'");
  Node n;
  n.kind = OpKind::Parameter;
  n.value = std::move(value);
  n.value.set_requires_grad(true);
  n.needs_grad = true;
  n.name = name;
  auto id = record(std::move(n));
  params_[std::move(name)] = id;
  return id;
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return record(std::move(n));
}

namespace {
template <typename... Ids>
std::vector<NodeId> ids(Ids... in) {
  return {in...};
}
}  // namespace

#define ALIGNLAB_BINARY(fn, KIND)          \
  NodeId Graph::fn(NodeId a, NodeId b) {   \
    Node n;                                \
    n.kind = OpKind::KIND;                 \
    n.inputs = ids(a, b);                  \
    return record(std::move(n));           \
  }
ALIGNLAB_BINARY(add, Add)
ALIGNLAB_BINARY(sub, Sub)
ALIGNLAB_BINARY(mul, Mul)
ALIGNLAB_BINARY(div, Div)
ALIGNLAB_BINARY(matmul, MatMul)
ALIGNLAB_BINARY(conv2d, Conv2d)
#undef ALIGNLAB_BINARY

#define ALIGNLAB_UNARY(fn, KIND)         \
  NodeId Graph::fn(NodeId a) {           \
    Node n;                              \
    n.kind = OpKind::KIND;               \
    n.inputs = ids(a);                   \
    return record(std::move(n));         \
  }
ALIGNLAB_UNARY(exp, Exp)
ALIGNLAB_UNARY(log, Log)
ALIGNLAB_UNARY(sqrt, Sqrt)
ALIGNLAB_UNARY(square, Square)
ALIGNLAB_UNARY(relu, Relu)
ALIGNLAB_UNARY(transpose, Transpose)
ALIGNLAB_UNARY(downsample2, Downsample2)
ALIGNLAB_UNARY(sum, Sum)
ALIGNLAB_UNARY(mean, Mean)
#undef ALIGNLAB_UNARY

NodeId Graph::scale(NodeId a, double factor) {
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = ids(a);
  n.scalar = factor;
  return record(std::move(n));
}

NodeId Graph::shift(NodeId a, double offset) {
  Node n;
  n.kind = OpKind::Shift;
  n.inputs = ids(a);
  n.scalar = offset;
  return record(std::move(n));
}

NodeId Graph::reshape(NodeId a, Shape shape) {
  Node n;
  n.kind = OpKind::Reshape;
  n.inputs = ids(a);
  n.shape_attr = std::move(shape);
  return record(std::move(n));
}

NodeId Graph::gather_rows(NodeId a, std::vector<std::size_t> rows) {
  Node n;
  n.kind = OpKind::GatherRows;
  n.inputs = ids(a);
  n.indices = std::move(rows);
  return record(std::move(n));
}

NodeId Graph::upsample(NodeId x, std::size_t factor) {
  Node n;
  n.kind = OpKind::Upsample;
  n.inputs = ids(x);
  n.axis = factor;
  return record(std::move(n));
}

NodeId Graph::softmax(NodeId x, std::size_t axis) {
  Node n;
  n.kind = OpKind::Softmax;
  n.inputs = ids(x);
  n.axis = axis;
  return record(std::move(n));
}

NodeId Graph::sum_axis(NodeId x, std::size_t axis) {
  Node n;
  n.kind = OpKind::SumAxis;
  n.inputs = ids(x);
  n.axis = axis;
  return record(std::move(n));
}

void Graph::set_output(const std::string& name, NodeId node) {
  at(node);
  outputs_[name] = node;
}

std::vector<std::string> Graph::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& [name, id] : params_) names.push_back(name);
  return names;
}

std::optional<NodeId> Graph::find_parameter(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) return std::nullopt;
  return it->second;
}

void Graph::set_parameter(const std::string& name, Tensor value) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("graph: unknown parameter '" + name + "'");
  Node& node = nodes_[it->second.index];
  if (node.value.shape() != value.shape()) {
    throw ShapeError("set_parameter '" + name + "': expected " + shape_string(node.value.shape()) + ", got " +
                     shape_string(value.shape()));
  }
  value.set_requires_grad(true);
  node.value = std::move(value);
}

void Graph::run_forward(Node& node) {
  const char* op = op_name(node.kind);
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[node.inputs[i].index].value; };

  switch (node.kind) {
    case OpKind::Input:
    case OpKind::Parameter:
    case OpKind::Constant:
      break;

    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const bool same = a.shape() == b.shape();
      const BroadcastPlan plan = same ? BroadcastPlan{} : plan_broadcast(a.shape(), b.shape(), op);
      Tensor out(same ? a.shape() : plan.out);
      auto o = out.data();
      auto av = a.data(), bv = b.data();
      auto run = [&](auto f) {
        if (same) {
          for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(av[i], bv[i]);
        } else {
          for_each_broadcast(plan, [&](std::size_t oi, std::size_t ai, std::size_t bi) { o[oi] = f(av[ai], bv[bi]); });
        }
      };
      switch (node.kind) {
        case OpKind::Add: run([](double x, double y) { return x + y; }); break;
        case OpKind::Sub: run([](double x, double y) { return x - y; }); break;
        case OpKind::Mul: run([](double x, double y) { return x * y; }); break;
        default: run([](double x, double y) { return x / y; }); break;
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::Scale:
    case OpKind::Shift:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Sqrt:
    case OpKind::Square:
    case OpKind::Relu: {
      const Tensor& a = in(0);
      Tensor out(a.shape());
      auto o = out.data();
      auto av = a.data();
      const double c = node.scalar;
      switch (node.kind) {
        case OpKind::Scale: for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * c; break;
        case OpKind::Shift: for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + c; break;
        case OpKind::Exp: for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(av[i]); break;
        case OpKind::Log: for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(av[i]); break;
        case OpKind::Sqrt: for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::sqrt(av[i]); break;
        case OpKind::Square: for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * av[i]; break;
        default: for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] > 0.0 ? av[i] : 0.0; break;
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_rank(a, 2, op);
      require_rank(b, 2, op);
      if (a.dim(1) != b.dim(0)) {
        throw ShapeError(std::string(op) + ": inner dims differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
      }
      Tensor out({a.dim(0), b.dim(1)});
      MatMap(out.data().data(), a.dim(0), b.dim(1)).noalias() =
          ConstMatMap(a.data().data(), a.dim(0), a.dim(1)) * ConstMatMap(b.data().data(), b.dim(0), b.dim(1));
      node.value = std::move(out);
      break;
    }

    case OpKind::Transpose: {
      const Tensor& a = in(0);
      require_rank(a, 2, op);
      Tensor out({a.dim(1), a.dim(0)});
      MatMap(out.data().data(), a.dim(1), a.dim(0)) = ConstMatMap(a.data().data(), a.dim(0), a.dim(1)).transpose();
      node.value = std::move(out);
      break;
    }

    case OpKind::Reshape:
      node.value = in(0).reshaped(node.shape_attr);
      node.value.set_requires_grad(false);
      break;

    case OpKind::GatherRows: {
      const Tensor& a = in(0);
      require_rank(a, 2, op);
      const std::size_t cols = a.dim(1);
      Tensor out({node.indices.size(), cols});
      for (std::size_t r = 0; r < node.indices.size(); ++r) {
        const std::size_t src = node.indices[r];
        if (src >= a.dim(0)) {
          throw ShapeError(std::string(op) + ": row " + std::to_string(src) + " out of range for " +
                           shape_string(a.shape()));
        }
        std::copy_n(a.data().data() + src * cols, cols, out.data().data() + r * cols);
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::Conv2d: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      require_rank(x, 3, op);
      require_rank(w, 4, op);
      const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
      const std::size_t cout = w.dim(0), k = w.dim(2);
      if (w.dim(1) != cin || w.dim(3) != k || k % 2 == 0) {
        throw ShapeError(std::string(op) + ": kernel " + shape_string(w.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
      }
      const std::size_t rows = cin * k * k, hw = h * wd;
      const double* colp = x.data().data();
      if (k > 1) {
        node.saved.resize(rows * hw);
        im2col(x.data().data(), cin, h, wd, k, node.saved.data());
        colp = node.saved.data();
      }
      Tensor out({cout, h, wd});
      MatMap(out.data().data(), cout, hw).noalias() =
          ConstMatMap(w.data().data(), cout, rows) * ConstMatMap(colp, rows, hw);
      node.value = std::move(out);
      break;
    }

    case OpKind::Downsample2: {
      const Tensor& x = in(0);
      require_rank(x, 3, op);
      const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
      if (h % 2 || w % 2) throw ShapeError(std::string(op) + ": odd spatial dims in " + shape_string(x.shape()));
      const std::size_t oh = h / 2, ow = w / 2;
      Tensor out({c, oh, ow});
      auto xv = x.data();
      auto o = out.data();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y) {
          const double* r0 = xv.data() + (ch * h + 2 * y) * w;
          const double* r1 = r0 + w;
          double* dst = o.data() + (ch * oh + y) * ow;
          for (std::size_t xx = 0; xx < ow; ++xx)
            dst[xx] = 0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
        }
      node.value = std::move(out);
      break;
    }

    case OpKind::Upsample: {
      const Tensor& x = in(0);
      require_rank(x, 3, op);
      const std::size_t f = node.axis;
      if (f == 0) throw ShapeError(std::string(op) + ": factor must be positive");
      const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
      Tensor out({c, h * f, w * f});
      auto xv = x.data();
      auto o = out.data();
      const std::size_t ow = w * f;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h * f; ++y) {
          const double* src = xv.data() + (ch * h + y / f) * w;
          double* dst = o.data() + (ch * h * f + y) * ow;
          for (std::size_t xx = 0; xx < ow; ++xx) dst[xx] = src[xx / f];
        }
      node.value = std::move(out);
      break;
    }

    case OpKind::Softmax: {
      const Tensor& x = in(0);
      auto s = split_axis(x.shape(), node.axis, op);
      Tensor out(x.shape());
      auto xv = x.data();
      auto o = out.data();
      std::vector<double> mx(s.inner), tot(s.inner);
      for (std::size_t a = 0; a < s.outer; ++a) {
        const std::size_t base = a * s.n * s.inner;
        std::fill(mx.begin(), mx.end(), -INFINITY);
        for (std::size_t k = 0; k < s.n; ++k)
          for (std::size_t i = 0; i < s.inner; ++i) mx[i] = std::max(mx[i], xv[base + k * s.inner + i]);
        std::fill(tot.begin(), tot.end(), 0.0);
        for (std::size_t k = 0; k < s.n; ++k)
          for (std::size_t i = 0; i < s.inner; ++i) {
            const double e = std::exp(xv[base + k * s.inner + i] - mx[i]);
            o[base + k * s.inner + i] = e;
            tot[i] += e;
          }
        for (std::size_t k = 0; k < s.n; ++k)
          for (std::size_t i = 0; i < s.inner; ++i) o[base + k * s.inner + i] /= tot[i];
      }
      node.value = std::move(out);
      break;
    }

    case OpKind::Sum:
    case OpKind::Mean: {
      const Tensor& x = in(0);
      if (x.numel() == 0) throw ShapeError(std::string(op) + ": empty tensor");
      double acc = 0.0;
      for (double v : x.data()) acc += v;
      if (node.kind == OpKind::Mean) acc /= static_cast<double>(x.numel());
      node.value = Tensor::scalar(acc);
      break;
    }

    case OpKind::SumAxis: {
      const Tensor& x = in(0);
      auto s = split_axis(x.shape(), node.axis, op);
      Shape shape = x.shape();
      shape[node.axis] = 1;
      Tensor out(shape);
      auto xv = x.data();
      auto o = out.data();
      for (std::size_t a = 0; a < s.outer; ++a)
        for (std::size_t k = 0; k < s.n; ++k) {
          const double* src = xv.data() + (a * s.n + k) * s.inner;
          double* dst = o.data() + a * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
      node.value = std::move(out);
      break;
    }
  }

  if (!node.value.all_finite()) {
    throw NumericError(std::string("op ") + op + ": non-finite output of shape " + shape_string(node.value.shape()));
  }
}

namespace {

std::vector<double>& grad_slot(std::vector<std::vector<double>>& grads, NodeId id, std::size_t n) {
  auto& g = grads[id.index];
  if (g.empty()) g.assign(n, 0.0);
  return g;
}

}  // namespace

void Graph::run_backward(const Node& node, std::vector<std::vector<double>>& grads) const {
  const auto& g = grads[&node - nodes_.data()];
  if (g.empty()) return;
  auto in = [&](std::size_t i) -> const Node& { return nodes_[node.inputs[i].index]; };
  auto slot = [&](std::size_t i) -> std::vector<double>* {
    const Node& src = in(i);
    if (!src.needs_grad) return nullptr;
    return &grad_slot(grads, node.inputs[i], src.value.numel());
  };
  const double* gv = g.data();

  switch (node.kind) {
    case OpKind::Input:
    case OpKind::Parameter:
    case OpKind::Constant:
      break;

    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div: {
      const auto& a = in(0).value;
      const auto& b = in(1).value;
      auto* ga = slot(0);
      auto* gb = slot(1);
      auto av = a.data(), bv = b.data();
      const bool same = a.shape() == b.shape();
      auto run = [&](auto visit) {
        if (same) {
          for (std::size_t i = 0; i < a.numel(); ++i) visit(i, i, i);
        } else {
          for_each_broadcast(plan_broadcast(a.shape(), b.shape(), op_name(node.kind)), visit);
        }
      };
      switch (node.kind) {
        case OpKind::Add:
        case OpKind::Sub: {
          const double sign = node.kind == OpKind::Add ? 1.0 : -1.0;
          if (ga && gb) {
            run([&](std::size_t o, std::size_t ai, std::size_t bi) {
              (*ga)[ai] += gv[o];
              (*gb)[bi] += sign * gv[o];
            });
          } else if (ga) {
            run([&](std::size_t o, std::size_t ai, std::size_t) { (*ga)[ai] += gv[o]; });
          } else if (gb) {
            run([&](std::size_t o, std::size_t, std::size_t bi) { (*gb)[bi] += sign * gv[o]; });
          }
          break;
        }
        case OpKind::Mul:
          if (ga) run([&](std::size_t o, std::size_t ai, std::size_t bi) { (*ga)[ai] += gv[o] * bv[bi]; });
          if (gb) run([&](std::size_t o, std::size_t ai, std::size_t bi) { (*gb)[bi] += gv[o] * av[ai]; });
          break;
        default:
          if (ga) run([&](std::size_t o, std::size_t ai, std::size_t bi) { (*ga)[ai] += gv[o] / bv[bi]; });
          if (gb) {
            run([&](std::size_t o, std::size_t ai, std::size_t bi) {
              (*gb)[bi] -= gv[o] * av[ai] / (bv[bi] * bv[bi]);
            });
          }
          break;
      }
      break;
    }

    case OpKind::Scale:
    case OpKind::Shift:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Sqrt:
    case OpKind::Square:
    case OpKind::Relu: {
      auto* ga = slot(0);
      if (!ga) break;
      auto xv = in(0).value.data();
      auto ov = node.value.data();
      auto& out = *ga;
      const std::size_t n = out.size();
      switch (node.kind) {
        case OpKind::Scale: for (std::size_t i = 0; i < n; ++i) out[i] += gv[i] * node.scalar; break;
        case OpKind::Shift: for (std::size_t i = 0; i < n; ++i) out[i] += gv[i]; break;
        case OpKind::Exp: for (std::size_t i = 0; i < n; ++i) out[i] += gv[i] * ov[i]; break;
        case OpKind::Log: for (std::size_t i = 0; i < n; ++i) out[i] += gv[i] / xv[i]; break;
        case OpKind::Sqrt:
          for (std::size_t i = 0; i < n; ++i)
            if (gv[i] != 0.0) out[i] += gv[i] / (2.0 * ov[i]);
          break;
        case OpKind::Square: for (std::size_t i = 0; i < n; ++i) out[i] += 2.0 * xv[i] * gv[i]; break;
        default:
          for (std::size_t i = 0; i < n; ++i)
            if (xv[i] > 0.0) out[i] += gv[i];
          break;
      }
      break;
    }

    case OpKind::MatMul: {
      const auto& a = in(0).value;
      const auto& b = in(1).value;
      const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
      ConstMatMap go(gv, n, m);
      if (auto* ga = slot(0)) MatMap(ga->data(), n, k).noalias() += go * ConstMatMap(b.data().data(), k, m).transpose();
      if (auto* gb = slot(1)) MatMap(gb->data(), k, m).noalias() += ConstMatMap(a.data().data(), n, k).transpose() * go;
      break;
    }

    case OpKind::Transpose: {
      auto* ga = slot(0);
      if (!ga) break;
      const auto& a = in(0).value;
      MatMap(ga->data(), a.dim(0), a.dim(1)) += ConstMatMap(gv, a.dim(1), a.dim(0)).transpose();
      break;
    }

    case OpKind::Reshape: {
      auto* ga = slot(0);
      if (!ga) break;
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += gv[i];
      break;
    }

    case OpKind::GatherRows: {
      auto* ga = slot(0);
      if (!ga) break;
      const std::size_t cols = in(0).value.dim(1);
      for (std::size_t r = 0; r < node.indices.size(); ++r) {
        double* dst = ga->data() + node.indices[r] * cols;
        const double* src = gv + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
      break;
    }

    case OpKind::Conv2d: {
      const auto& x = in(0).value;
      const auto& w = in(1).value;
      const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
      const std::size_t cout = w.dim(0), k = w.dim(2);
      const std::size_t rows = cin * k * k, hw = h * wd;
      ConstMatMap go(gv, cout, hw);
      const double* colp = k > 1 ? node.saved.data() : x.data().data();
      if (auto* gw = slot(1)) MatMap(gw->data(), cout, rows).noalias() += go * ConstMatMap(colp, rows, hw).transpose();
      if (auto* gx = slot(0)) {
        if (k == 1) {
          MatMap(gx->data(), cin, hw).noalias() += ConstMatMap(w.data().data(), cout, rows).transpose() * go;
        } else {
          std::vector<double> gcol(rows * hw);
          MatMap(gcol.data(), rows, hw).noalias() = ConstMatMap(w.data().data(), cout, rows).transpose() * go;
          col2im_add(gcol.data(), cin, h, wd, k, gx->data());
        }
      }
      break;
    }

    case OpKind::Downsample2: {
      auto* ga = slot(0);
      if (!ga) break;
      const auto& x = in(0).value;
      const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), oh = h / 2, ow = w / 2;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y) {
          double* r0 = ga->data() + (ch * h + 2 * y) * w;
          double* r1 = r0 + w;
          const double* src = gv + (ch * oh + y) * ow;
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const double q = 0.25 * src[xx];
            r0[2 * xx] += q;
            r0[2 * xx + 1] += q;
            r1[2 * xx] += q;
            r1[2 * xx + 1] += q;
          }
        }
      break;
    }

    case OpKind::Upsample: {
      auto* ga = slot(0);
      if (!ga) break;
      const auto& x = in(0).value;
      const std::size_t f = node.axis, c = x.dim(0), h = x.dim(1), w = x.dim(2), ow = w * f;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h * f; ++y) {
          double* dst = ga->data() + (ch * h + y / f) * w;
          const double* src = gv + (ch * h * f + y) * ow;
          for (std::size_t xx = 0; xx < ow; ++xx) dst[xx / f] += src[xx];
        }
      break;
    }

    case OpKind::Softmax: {
      auto* ga = slot(0);
      if (!ga) break;
      auto s = split_axis(node.value.shape(), node.axis, "softmax");
      auto sv = node.value.data();
      std::vector<double> dot(s.inner);
      for (std::size_t a = 0; a < s.outer; ++a) {
        const std::size_t base = a * s.n * s.inner;
        std::fill(dot.begin(), dot.end(), 0.0);
        for (std::size_t k = 0; k < s.n; ++k)
          for (std::size_t i = 0; i < s.inner; ++i) dot[i] += gv[base + k * s.inner + i] * sv[base + k * s.inner + i];
        for (std::size_t k = 0; k < s.n; ++k)
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t j = base + k * s.inner + i;
            (*ga)[j] += sv[j] * (gv[j] - dot[i]);
          }
      }
      break;
    }

    case OpKind::Sum:
    case OpKind::Mean: {
      auto* ga = slot(0);
      if (!ga) break;
      const double q = node.kind == OpKind::Mean ? gv[0] / static_cast<double>(ga->size()) : gv[0];
      for (double& v : *ga) v += q;
      break;
    }

    case OpKind::SumAxis: {
      auto* ga = slot(0);
      if (!ga) break;
      auto s = split_axis(in(0).value.shape(), node.axis, "sum_axis");
      for (std::size_t a = 0; a < s.outer; ++a)
        for (std::size_t k = 0; k < s.n; ++k) {
          double* dst = ga->data() + (a * s.n + k) * s.inner;
          const double* src = gv + a * s.inner;
          for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
      break;
    }
  }
}

std::map<std::string, Tensor> Graph::evaluate(const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, value] : inputs) {
    auto it = inputs_.find(name);
    if (it == inputs_.end()) throw Error("evaluate: graph has no input named '" + name + "'");
    nodes_[it->second.index].value = value;
  }
  for (auto& node : nodes_) run_forward(node);
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : outputs_) out[name] = nodes_[id.index].value;
  return out;
}

Gradients Graph::backpropagate(NodeId loss) const {
  const Node& root = at(loss);
  if (root.value.numel() != 1) {
    throw ShapeError("backpropagate: loss node must be scalar, got " + shape_string(root.value.shape()));
  }
  std::vector<std::vector<double>> grads(nodes_.size());
  if (root.needs_grad) {
    grads[loss.index].assign(1, 1.0);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      if (nodes_[i].needs_grad) run_backward(nodes_[i], grads);
    }
  }
  Gradients out;
  for (const auto& [name, id] : params_) {
    const Node& p = nodes_[id.index];
    auto& g = grads[id.index];
    if (g.empty()) g.assign(p.value.numel(), 0.0);
    out.emplace(name, Tensor(p.value.shape(), std::move(g)));
  }
  return out;
}

std::map<std::string, Tensor> evaluate(Graph& graph, const std::map<std::string, Tensor>& inputs) {
  return graph.evaluate(inputs);
}

Gradients backpropagate(const Graph& graph, NodeId loss) { return graph.backpropagate(loss); }

double finite_difference_check(Graph& graph, NodeId loss, const std::string& param, double epsilon,
                               std::size_t max_elements) {
  auto pid = graph.find_parameter(param);
  if (!pid) throw Error("finite_difference_check: unknown parameter '" + param + "'");
  const Tensor original = graph.value(*pid);
  const Tensor analytic = graph.backpropagate(loss).at(param);

  const std::size_t n = original.numel();
  std::size_t stride = 1;
  if (max_elements > 0 && n > max_elements) stride = (n + max_elements - 1) / max_elements;

  double worst = 0.0;
  Tensor probe = original;
  for (std::size_t i = 0; i < n; i += stride) {
    probe[i] = original[i] + epsilon;
    graph.set_parameter(param, probe);
    graph.evaluate({});
    const double up = graph.value(loss).item();
    probe[i] = original[i] - epsilon;
    graph.set_parameter(param, probe);
    graph.evaluate({});
    const double down = graph.value(loss).item();
    probe[i] = original[i];
    const double numeric = (up - down) / (2.0 * epsilon);
    const double denom = std::max(std::abs(analytic[i]), 1e-8);
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  graph.set_parameter(param, original);
  graph.evaluate({});
  return worst;
}

}  // namespace alignlab
