#include "svre/graph.hpp"

#include "svre/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace svre {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::max_pool2d: return "max_pool2d";
    case OpKind::avg_pool2d: return "avg_pool2d";
    case OpKind::flatten: return "flatten";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::sum: return "sum";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::nll: return "nll";
  }
  return "?";
}

Var Var::named(std::string label) const {
  graph_->set_name(id_, std::move(label));
  return *this;
}

Var Graph::input(std::string name, Shape shape) {
  if (find_input(name) >= 0) throw InvalidArgument("duplicate graph input '" + name + "'");
  Node n;
  n.kind = OpKind::input;
  n.name = std::move(name);
  n.declared_shape = std::move(shape);
  return append(std::move(n));
}

Var Graph::constant(Tensor value, std::string label) {
  Node n;
  n.kind = OpKind::constant;
  n.value = std::move(value);
  n.name = std::move(label);
  return append(std::move(n));
}

Var Graph::append(Node node) {
  const int id = static_cast<int>(nodes_.size());
  for (int in : node.inputs) {
    if (in < 0 || in >= id) throw InvalidArgument("graph input ids must precede their consumer");
  }
  nodes_.push_back(std::move(node));
  return Var(this, id);
}

void Graph::set_name(int id, std::string name) {
  Node& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.kind == OpKind::input) throw InvalidArgument("placeholders are renamed only at creation");
  n.name = std::move(name);
}

void Graph::set_output(Var v) {
  if (&v.graph() != this) throw InvalidArgument("output belongs to another graph");
  output_ = v.id();
}

int Graph::output() const {
  if (output_ < 0) throw StateError("graph has no output");
  return output_;
}

int Graph::find_input(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::input && nodes_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::string Graph::describe(int id) const {
  const Node& n = node(id);
  std::string s = "node " + std::to_string(id) + " (" + op_name(n.kind);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ")";
}

namespace {

Var unary(OpKind kind, Var a) {
  Node n;
  n.kind = kind;
  n.inputs = {a.id()};
  return a.graph().append(std::move(n));
}

Var binary(OpKind kind, Var a, Var b) {
  if (&a.graph() != &b.graph()) throw InvalidArgument("operands belong to different graphs");
  Node n;
  n.kind = kind;
  n.inputs = {a.id(), b.id()};
  return a.graph().append(std::move(n));
}

Var pool(OpKind kind, Var x, Index kernel, Index stride) {
  if (kernel < 1 || stride < 1) throw InvalidArgument("pooling kernel and stride must be positive");
  Node n;
  n.kind = kind;
  n.inputs = {x.id()};
  n.kernel = kernel;
  n.stride = stride;
  return x.graph().append(std::move(n));
}

}  // namespace

Var matmul(Var a, Var b) { return binary(OpKind::matmul, a, b); }

namespace {

Var conv_node(std::vector<int> inputs, Graph& graph, ConvOptions options) {
  if (options.stride < 1 || options.padding < 0) throw InvalidArgument("conv2d needs stride >= 1 and padding >= 0");
  Node n;
  n.kind = OpKind::conv2d;
  n.inputs = std::move(inputs);
  n.stride = options.stride;
  n.padding = options.padding;
  return graph.append(std::move(n));
}

}  // namespace

Var conv2d(Var x, Var w, ConvOptions options) { return conv_node({x.id(), w.id()}, x.graph(), options); }

Var conv2d(Var x, Var w, Var b, ConvOptions options) {
  return conv_node({x.id(), w.id(), b.id()}, x.graph(), options);
}

Var relu(Var x) { return unary(OpKind::relu, x); }
Var max_pool2d(Var x, Index kernel, Index stride) { return pool(OpKind::max_pool2d, x, kernel, stride); }
Var avg_pool2d(Var x, Index kernel, Index stride) { return pool(OpKind::avg_pool2d, x, kernel, stride); }
Var flatten(Var x) { return unary(OpKind::flatten, x); }
Var add(Var a, Var b) { return binary(OpKind::add, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::mul, a, b); }

Var scale(Var a, double factor) {
  Node n;
  n.kind = OpKind::scale;
  n.inputs = {a.id()};
  n.factor = factor;
  return a.graph().append(std::move(n));
}

Var sum(Var a) { return unary(OpKind::sum, a); }
Var exp(Var a) { return unary(OpKind::exp, a); }
Var log(Var a) { return unary(OpKind::log, a); }
Var log_softmax(Var logits) { return unary(OpKind::log_softmax, logits); }
Var cross_entropy(Var logits, Var one_hot) { return binary(OpKind::cross_entropy, logits, one_hot); }
Var nll(Var log_probs, Var one_hot) { return binary(OpKind::nll, log_probs, one_hot); }

// ---------------------------------------------------------------------------
// Kernels

namespace {

struct ConvGeometry {
  Index n, c, h, w;     // input
  Index o, kh, kw;      // kernel
  Index ho, wo;         // output
  Index stride, padding;
  Index patch() const { return c * kh * kw; }
  Index pixels() const { return ho * wo; }
};

[[noreturn]] void shape_fail(const Graph& g, int id, const std::string& what) {
  throw ShapeError(g.describe(id) + ": " + what);
}

ConvGeometry conv_geometry(const Graph& g, int id, const Tensor& x, const Tensor& w, const Tensor* b) {
  const Node& node = g.node(id);
  if (x.rank() != 4) shape_fail(g, id, "input must be [N,C,H,W], got " + shape_string(x.shape()));
  if (w.rank() != 4) shape_fail(g, id, "kernel must be [O,C,KH,KW], got " + shape_string(w.shape()));
  if (w.dim(1) != x.dim(1)) {
    shape_fail(g, id, "input has " + std::to_string(x.dim(1)) + " channels but kernel expects " +
                          std::to_string(w.dim(1)));
  }
  if (b && (b->rank() != 1 || b->dim(0) != w.dim(0))) {
    shape_fail(g, id, "bias must be [" + std::to_string(w.dim(0)) + "], got " + shape_string(b->shape()));
  }
  ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0,
                   node.stride, node.padding};
  const Index span_h = geo.h + 2 * geo.padding - geo.kh;
  const Index span_w = geo.w + 2 * geo.padding - geo.kw;
  if (span_h < 0 || span_w < 0) shape_fail(g, id, "kernel larger than padded input");
  geo.ho = span_h / geo.stride + 1;
  geo.wo = span_w / geo.stride + 1;
  return geo;
}

// Unfolds one image [C,H,W] into a [C*KH*KW, Ho*Wo] patch matrix.
void im2col(const double* img, const ConvGeometry& g, RowMatrix& col) {
  col.resize(g.patch(), g.pixels());
  for (Index c = 0; c < g.c; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        double* row = col.row((c * g.kh + ki) * g.kw + kj).data();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.padding + ki;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = img + (c * g.h + iy) * g.w;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.padding + kj;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch gradients back into an image.
void col2im(const RowMatrix& col, const ConvGeometry& g, double* img) {
  for (Index c = 0; c < g.c; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const double* row = col.row((c * g.kh + ki) * g.kw + kj).data();
        for (Index oy = 0; oy < g.ho; ++oy) {
          const Index iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = img + (c * g.h + iy) * g.w;
          const double* src = row + oy * g.wo;
          for (Index ox = 0; ox < g.wo; ++ox) {
            const Index ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct PoolGeometry {
  Index n, c, h, w, ho, wo, k, s;
};

PoolGeometry pool_geometry(const Graph& g, int id, const Tensor& x) {
  const Node& node = g.node(id);
  if (x.rank() != 4) shape_fail(g, id, "input must be [N,C,H,W], got " + shape_string(x.shape()));
  if (x.dim(2) < node.kernel || x.dim(3) < node.kernel) shape_fail(g, id, "window larger than input");
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), (x.dim(2) - node.kernel) / node.stride + 1,
          (x.dim(3) - node.kernel) / node.stride + 1, node.kernel, node.stride};
}

bool trailing_match(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Index last_dim(const Tensor& t) { return t.dim(t.rank() - 1); }

// Row-wise log-softmax over the last dimension.
RowMatrix log_softmax_rows(const Tensor& logits) {
  const Index cols = last_dim(logits);
  const Index rows = logits.size() / cols;
  ConstRowMatrixMap z = logits.matrix(rows, cols);
  RowMatrix out(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const double m = z.row(r).maxCoeff();
    const double lse = m + std::log((z.row(r).array() - m).exp().sum());
    out.row(r) = z.row(r).array() - lse;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Executor

Executor::Executor(std::shared_ptr<const Graph> graph) : graph_(std::move(graph)) {
  if (!graph_) throw InvalidArgument("executor needs a graph");
}

const Tensor& Executor::value(int node_id) const {
  if (!has_forward_) throw StateError("value requested before forward");
  return values_.at(static_cast<std::size_t>(node_id));
}

const Tensor& Executor::forward(const Feed& inputs) {
  const Graph& g = *graph_;
  const auto& nodes = g.nodes();
  const int out_id = g.output();
  has_forward_ = false;
  values_.assign(nodes.size(), Tensor());
  argmax_.assign(nodes.size(), {});

  for (const auto& [name, t] : inputs) {
    if (g.find_input(name) < 0) throw InvalidArgument("graph has no input named '" + name + "'");
  }

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const int id = static_cast<int>(i);
    const Node& node = nodes[i];
    auto in = [&](std::size_t k) -> const Tensor& { return values_[static_cast<std::size_t>(node.inputs[k])]; };
    Tensor& out = values_[i];

    switch (node.kind) {
      case OpKind::input: {
        auto it = inputs.find(node.name);
        if (it == inputs.end()) throw InvalidArgument("missing feed for graph input '" + node.name + "'");
        const Shape& got = it->second.shape();
        bool ok = got.size() == node.declared_shape.size();
        for (std::size_t d = 0; ok && d < got.size(); ++d) {
          ok = node.declared_shape[d] <= 0 || node.declared_shape[d] == got[d];
        }
        if (!ok) {
          shape_fail(g, id, "fed shape " + shape_string(got) + " but declared " + shape_string(node.declared_shape));
        }
        out = it->second;
        break;
      }
      case OpKind::constant:
        out = node.value;
        break;
      case OpKind::matmul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
          shape_fail(g, id, "cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
        }
        out = Tensor({a.dim(0), b.dim(1)});
        out.matrix(a.dim(0), b.dim(1)).noalias() = a.matrix(a.dim(0), a.dim(1)) * b.matrix(b.dim(0), b.dim(1));
        break;
      }
      case OpKind::conv2d: {
        const Tensor& x = in(0);
        const Tensor& w = in(1);
        const Tensor* b = node.inputs.size() > 2 ? &in(2) : nullptr;
        const ConvGeometry geo = conv_geometry(g, id, x, w, b);
        out = Tensor({geo.n, geo.o, geo.ho, geo.wo});
        ConstRowMatrixMap wm = w.matrix(geo.o, geo.patch());
        RowMatrix col;
        for (Index s = 0; s < geo.n; ++s) {
          im2col(x.data() + s * geo.c * geo.h * geo.w, geo, col);
          RowMatrixMap dst(out.data() + s * geo.o * geo.pixels(), geo.o, geo.pixels());
          dst.noalias() = wm * col;
          if (b) dst.colwise() += b->values();
        }
        break;
      }
      case OpKind::relu:
        out = Tensor(in(0).shape(), in(0).values().cwiseMax(0.0));
        break;
      case OpKind::max_pool2d: {
        const Tensor& x = in(0);
        const PoolGeometry p = pool_geometry(g, id, x);
        out = Tensor({p.n, p.c, p.ho, p.wo});
        auto& arg = argmax_[i];
        arg.resize(static_cast<std::size_t>(out.size()));
        Index o = 0;
        for (Index plane = 0; plane < p.n * p.c; ++plane) {
          const Index base = plane * p.h * p.w;
          for (Index oy = 0; oy < p.ho; ++oy) {
            for (Index ox = 0; ox < p.wo; ++ox, ++o) {
              Index best = base + (oy * p.s) * p.w + ox * p.s;
              for (Index ky = 0; ky < p.k; ++ky) {
                for (Index kx = 0; kx < p.k; ++kx) {
                  const Index at = base + (oy * p.s + ky) * p.w + ox * p.s + kx;
                  if (x[at] > x[best]) best = at;
                }
              }
              arg[static_cast<std::size_t>(o)] = best;
              out[o] = x[best];
            }
          }
        }
        break;
      }
      case OpKind::avg_pool2d: {
        const Tensor& x = in(0);
        const PoolGeometry p = pool_geometry(g, id, x);
        out = Tensor({p.n, p.c, p.ho, p.wo});
        const double inv = 1.0 / static_cast<double>(p.k * p.k);
        Index o = 0;
        for (Index plane = 0; plane < p.n * p.c; ++plane) {
          const Index base = plane * p.h * p.w;
          for (Index oy = 0; oy < p.ho; ++oy) {
            for (Index ox = 0; ox < p.wo; ++ox, ++o) {
              double acc = 0.0;
              for (Index ky = 0; ky < p.k; ++ky) {
                for (Index kx = 0; kx < p.k; ++kx) acc += x[base + (oy * p.s + ky) * p.w + ox * p.s + kx];
              }
              out[o] = acc * inv;
            }
          }
        }
        break;
      }
      case OpKind::flatten: {
        const Tensor& x = in(0);
        if (x.rank() < 2) shape_fail(g, id, "flatten needs a batch dimension, got " + shape_string(x.shape()));
        out = x.reshaped({x.dim(0), x.size() / x.dim(0)});
        break;
      }
      case OpKind::add: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        if (a.shape() == b.shape()) {
          out = Tensor(a.shape(), a.values() + b.values());
        } else if (trailing_match(a.shape(), b.shape())) {
          out = a;
          const Index inner = b.size();
          out.matrix(a.size() / inner, inner).rowwise() += b.values().transpose();
        } else {
          shape_fail(g, id, "cannot add " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
        }
        break;
      }
      case OpKind::mul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        if (a.shape() != b.shape()) {
          shape_fail(g, id, "cannot multiply " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
        }
        out = Tensor(a.shape(), a.values().cwiseProduct(b.values()));
        break;
      }
      case OpKind::scale:
        out = Tensor(in(0).shape(), node.factor * in(0).values());
        break;
      case OpKind::sum:
        out = Tensor::scalar(in(0).values().sum());
        break;
      case OpKind::exp:
        out = Tensor(in(0).shape(), in(0).values().array().exp().matrix());
        break;
      case OpKind::log:
        out = Tensor(in(0).shape(), in(0).values().array().log().matrix());
        break;
      case OpKind::log_softmax: {
        RowMatrix ls = log_softmax_rows(in(0));
        out = Tensor(in(0).shape(), Eigen::Map<const Eigen::VectorXd>(ls.data(), ls.size()));
        break;
      }
      case OpKind::cross_entropy:
      case OpKind::nll: {
        const Tensor& z = in(0);
        const Tensor& t = in(1);
        if (z.shape() != t.shape()) {
          shape_fail(g, id, "prediction " + shape_string(z.shape()) + " vs target " + shape_string(t.shape()));
        }
        const Index cols = last_dim(z);
        const Index rows = z.size() / cols;
        double total;
        if (node.kind == OpKind::cross_entropy) {
          const RowMatrix ls = log_softmax_rows(z);
          total = -(ls.array() * t.matrix(rows, cols).array()).sum();
        } else {
          // Zero-weight entries are skipped so log-probabilities of -inf do not give 0 * inf.
          total = -t.values().binaryExpr(z.values(), [](double w, double v) { return w == 0.0 ? 0.0 : w * v; }).sum();
        }
        out = Tensor::scalar(total / static_cast<double>(rows));
        break;
      }
    }
  }
  (void)out_id;
  has_forward_ = true;
  return values_[static_cast<std::size_t>(out_id)];
}

Tensor Executor::backward(std::string_view wrt) {
  std::vector<Tensor> g = backward(std::vector<std::string>{std::string(wrt)});
  return std::move(g.front());
}

std::vector<Tensor> Executor::backward(const std::vector<std::string>& wrt) {
  if (!has_forward_) throw StateError("backward called before forward");
  const Graph& g = *graph_;
  const auto& nodes = g.nodes();
  const std::size_t count = nodes.size();
  const int out_id = g.output();

  // Only propagate along paths that reach a requested placeholder.
  std::vector<char> needs(count, 0);
  std::vector<int> targets;
  for (const auto& name : wrt) {
    const int id = g.find_input(name);
    if (id < 0) throw InvalidArgument("graph has no input named '" + name + "'");
    needs[static_cast<std::size_t>(id)] = 1;
    targets.push_back(id);
  }
  for (std::size_t i = 0; i < count; ++i) {
    for (int in : nodes[i].inputs) needs[i] = needs[i] || needs[static_cast<std::size_t>(in)];
  }

  std::vector<Tensor> adj(count);
  std::vector<char> has(count, 0);
  auto accumulate = [&](int id, const Eigen::Ref<const Eigen::VectorXd>& delta) {
    const auto k = static_cast<std::size_t>(id);
    if (!needs[k]) return;
    if (!has[k]) {
      adj[k] = Tensor(values_[k].shape(), delta);
      has[k] = 1;
    } else {
      adj[k].values() += delta;
    }
  };

  {
    const Tensor& out = values_[static_cast<std::size_t>(out_id)];
    accumulate(out_id, Eigen::VectorXd::Ones(out.size()));
  }

  for (std::size_t ri = count; ri-- > 0;) {
    if (!has[ri] || nodes[ri].kind == OpKind::input || nodes[ri].kind == OpKind::constant) continue;
    const Node& node = nodes[ri];
    const int id = static_cast<int>(ri);
    const Tensor& gy = adj[ri];
    auto in = [&](std::size_t k) -> const Tensor& { return values_[static_cast<std::size_t>(node.inputs[k])]; };
    auto need = [&](std::size_t k) { return needs[static_cast<std::size_t>(node.inputs[k])] != 0; };

    switch (node.kind) {
      case OpKind::input:
      case OpKind::constant:
        break;
      case OpKind::matmul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        ConstRowMatrixMap gm = gy.matrix(a.dim(0), b.dim(1));
        if (need(0)) {
          RowMatrix da = gm * b.matrix(b.dim(0), b.dim(1)).transpose();
          accumulate(node.inputs[0], Eigen::Map<const Eigen::VectorXd>(da.data(), da.size()));
        }
        if (need(1)) {
          RowMatrix db = a.matrix(a.dim(0), a.dim(1)).transpose() * gm;
          accumulate(node.inputs[1], Eigen::Map<const Eigen::VectorXd>(db.data(), db.size()));
        }
        break;
      }
      case OpKind::conv2d: {
        const Tensor& x = in(0);
        const Tensor& w = in(1);
        const bool has_bias = node.inputs.size() > 2;
        const ConvGeometry geo = conv_geometry(g, id, x, w, has_bias ? &in(2) : nullptr);
        ConstRowMatrixMap wm = w.matrix(geo.o, geo.patch());
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(need(0) ? x.size() : 0);
        RowMatrix dw = RowMatrix::Zero(need(1) ? geo.o : 0, need(1) ? geo.patch() : 0);
        Eigen::VectorXd db = Eigen::VectorXd::Zero(has_bias && need(2) ? geo.o : 0);
        RowMatrix col;
        RowMatrix dcol;
        for (Index s = 0; s < geo.n; ++s) {
          ConstRowMatrixMap gs(gy.data() + s * geo.o * geo.pixels(), geo.o, geo.pixels());
          if (need(1)) {
            im2col(x.data() + s * geo.c * geo.h * geo.w, geo, col);
            dw.noalias() += gs * col.transpose();
          }
          if (need(0)) {
            dcol.noalias() = wm.transpose() * gs;
            col2im(dcol, geo, dx.data() + s * geo.c * geo.h * geo.w);
          }
          if (has_bias && need(2)) db += gs.rowwise().sum();
        }
        if (need(0)) accumulate(node.inputs[0], dx);
        if (need(1)) accumulate(node.inputs[1], Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size()));
        if (has_bias && need(2)) accumulate(node.inputs[2], db);
        break;
      }
      case OpKind::relu: {
        const Tensor& x = in(0);
        accumulate(node.inputs[0], (x.array() > 0.0).select(gy.array(), 0.0).matrix());
        break;
      }
      case OpKind::max_pool2d: {
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(in(0).size());
        const auto& arg = argmax_[ri];
        for (std::size_t o = 0; o < arg.size(); ++o) dx[arg[o]] += gy[static_cast<Index>(o)];
        accumulate(node.inputs[0], dx);
        break;
      }
      case OpKind::avg_pool2d: {
        const Tensor& x = in(0);
        const PoolGeometry p = pool_geometry(g, id, x);
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(x.size());
        const double inv = 1.0 / static_cast<double>(p.k * p.k);
        Index o = 0;
        for (Index plane = 0; plane < p.n * p.c; ++plane) {
          const Index base = plane * p.h * p.w;
          for (Index oy = 0; oy < p.ho; ++oy) {
            for (Index ox = 0; ox < p.wo; ++ox, ++o) {
              const double share = gy[o] * inv;
              for (Index ky = 0; ky < p.k; ++ky) {
                for (Index kx = 0; kx < p.k; ++kx) dx[base + (oy * p.s + ky) * p.w + ox * p.s + kx] += share;
              }
            }
          }
        }
        accumulate(node.inputs[0], dx);
        break;
      }
      case OpKind::flatten:
        accumulate(node.inputs[0], gy.values());
        break;
      case OpKind::add: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        accumulate(node.inputs[0], gy.values());
        if (need(1)) {
          if (a.shape() == b.shape()) {
            accumulate(node.inputs[1], gy.values());
          } else {
            const Index inner = b.size();
            Eigen::VectorXd db = gy.matrix(a.size() / inner, inner).colwise().sum().transpose();
            accumulate(node.inputs[1], db);
          }
        }
        break;
      }
      case OpKind::mul:
        if (need(0)) accumulate(node.inputs[0], gy.values().cwiseProduct(in(1).values()));
        if (need(1)) accumulate(node.inputs[1], gy.values().cwiseProduct(in(0).values()));
        break;
      case OpKind::scale:
        accumulate(node.inputs[0], node.factor * gy.values());
        break;
      case OpKind::sum:
        accumulate(node.inputs[0], Eigen::VectorXd::Constant(in(0).size(), gy.item()));
        break;
      case OpKind::exp:
        accumulate(node.inputs[0], gy.values().cwiseProduct(values_[ri].values()));
        break;
      case OpKind::log:
        // A zero adjoint stays zero even where the input underflowed to 0.
        accumulate(node.inputs[0], gy.values().binaryExpr(in(0).values(), [](double g, double v) {
          return g == 0.0 ? 0.0 : g / v;
        }));
        break;
      case OpKind::log_softmax: {
        // dz = gy - softmax * rowsum(gy)
        const Tensor& y = values_[ri];
        const Index cols = last_dim(y);
        const Index rows = y.size() / cols;
        RowMatrix dz = gy.matrix(rows, cols);
        ConstRowMatrixMap ym = y.matrix(rows, cols);
        for (Index r = 0; r < rows; ++r) {
          const double s = gy.matrix(rows, cols).row(r).sum();
          dz.row(r).array() -= ym.row(r).array().exp() * s;
        }
        accumulate(node.inputs[0], Eigen::Map<const Eigen::VectorXd>(dz.data(), dz.size()));
        break;
      }
      case OpKind::cross_entropy: {
        const Tensor& z = in(0);
        const Tensor& t = in(1);
        const Index cols = last_dim(z);
        const Index rows = z.size() / cols;
        const double scale_out = gy.item() / static_cast<double>(rows);
        const RowMatrix ls = log_softmax_rows(z);
        ConstRowMatrixMap tm = t.matrix(rows, cols);
        if (need(0)) {
          RowMatrix dz(rows, cols);
          for (Index r = 0; r < rows; ++r) {
            dz.row(r) = (ls.row(r).array().exp() * tm.row(r).sum() - tm.row(r).array()) * scale_out;
          }
          accumulate(node.inputs[0], Eigen::Map<const Eigen::VectorXd>(dz.data(), dz.size()));
        }
        if (need(1)) {
          RowMatrix dt = -scale_out * ls;
          accumulate(node.inputs[1], Eigen::Map<const Eigen::VectorXd>(dt.data(), dt.size()));
        }
        break;
      }
      case OpKind::nll: {
        const Index rows = in(0).size() / last_dim(in(0));
        const double scale_out = -gy.item() / static_cast<double>(rows);
        if (need(0)) accumulate(node.inputs[0], scale_out * in(1).values());
        if (need(1)) accumulate(node.inputs[1], scale_out * in(0).values());
        break;
      }
    }
  }

  std::vector<Tensor> grads;
  grads.reserve(targets.size());
  for (int id : targets) {
    const auto k = static_cast<std::size_t>(id);
    grads.push_back(has[k] ? adj[k] : Tensor::zeros(values_[k].shape()));
  }
  return grads;
}

std::vector<Index> Executor::branch_pattern() const {
  if (!has_forward_) throw StateError("branch pattern requested before forward");
  std::vector<Index> pattern;
  const auto& nodes = graph_->nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].kind == OpKind::relu) {
      const Tensor& x = values_[static_cast<std::size_t>(nodes[i].inputs[0])];
      for (Index k = 0; k < x.size(); ++k) pattern.push_back(x[k] > 0.0 ? 1 : 0);
    } else if (nodes[i].kind == OpKind::max_pool2d) {
      pattern.insert(pattern.end(), argmax_[i].begin(), argmax_[i].end());
    }
  }
  return pattern;
}

}  // namespace svre
