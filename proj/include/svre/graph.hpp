#ifndef SVRE_GRAPH_HPP
#define SVRE_GRAPH_HPP

#include "svre/tensor.hpp"

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace svre {

enum class OpKind {
  input,
  constant,
  matmul,
  conv2d,
  relu,
  max_pool2d,
  avg_pool2d,
  flatten,
  add,
  mul,
  scale,
  sum,
  exp,
  log,
  log_softmax,
  cross_entropy,
  nll,
};

const char* op_name(OpKind kind);

/// One record of the computation graph. Inputs always refer to earlier nodes.
struct Node {
  OpKind kind = OpKind::input;
  std::vector<int> inputs;
  std::string name;
  Shape declared_shape;  // placeholders only; a dimension <= 0 matches any size
  Tensor value;          // constants only
  double factor = 1.0;   // scale
  Index kernel = 0;      // pooling window / unused
  Index stride = 1;
  Index padding = 0;
};

class Graph;

/// Handle to a node while a graph is being built.
class Var {
 public:
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}
  int id() const { return id_; }
  Graph& graph() const { return *graph_; }
  /// Attaches a label used in error messages.
  Var named(std::string label) const;

 private:
  Graph* graph_;
  int id_;
};

/// A static, topologically ordered computation graph.
///
/// Nodes are appended in construction order, so every node's inputs precede it.
/// The graph must not be moved while Var handles into it are alive; once built it
/// is typically frozen behind a shared_ptr<const Graph> and evaluated by any number
/// of Executors.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Named placeholder fed at evaluation time.
  Var input(std::string name, Shape shape);
  Var constant(Tensor value, std::string label = {});

  void set_output(Var v);
  int output() const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  /// Index of the placeholder with this name, or -1.
  int find_input(std::string_view name) const;
  std::string describe(int id) const;

  Var append(Node node);
  void set_name(int id, std::string name);

 private:
  std::vector<Node> nodes_;
  int output_ = -1;
};

struct ConvOptions {
  Index stride = 1;
  Index padding = 0;
};

// Builders. Shapes are validated on every forward pass.

/// [n,k] x [k,m] -> [n,m]
Var matmul(Var a, Var b);
/// x [N,C,H,W], w [O,C,KH,KW] -> [N,O,Ho,Wo]; cross-correlation with zero padding.
Var conv2d(Var x, Var w, ConvOptions options = {});
/// As above with a per-channel bias b [O].
Var conv2d(Var x, Var w, Var b, ConvOptions options = {});
Var relu(Var x);
/// Unpadded pooling over [N,C,H,W].
Var max_pool2d(Var x, Index kernel, Index stride);
Var avg_pool2d(Var x, Index kernel, Index stride);
/// [N, ...] -> [N, prod(...)]
Var flatten(Var x);
/// Element-wise sum; b may also match the trailing dimensions of a (broadcast).
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var exp(Var a);
Var log(Var a);
/// Over the last dimension.
Var log_softmax(Var logits);
/// Mean over rows of -sum(one_hot * log_softmax(logits)); returns shape {1}.
Var cross_entropy(Var logits, Var one_hot);
/// Mean over rows of -sum(one_hot * log_probs); returns shape {1}.
Var nll(Var log_probs, Var one_hot);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

using Feed = std::map<std::string, Tensor, std::less<>>;

/// Evaluation scratch state for one graph: cached forward values and adjoints.
///
/// The graph is shared read-only; each concurrent worker owns its own Executor.
class Executor {
 public:
  explicit Executor(std::shared_ptr<const Graph> graph);

  /// Evaluates the whole graph and returns the output node's value.
  const Tensor& forward(const Feed& inputs);
  const Tensor& value(int node_id) const;

  /// d(sum of output)/d(input) for the named placeholder.
  Tensor backward(std::string_view wrt);
  /// One reverse sweep producing gradients for several placeholders.
  std::vector<Tensor> backward(const std::vector<std::string>& wrt);

  /// Discrete decisions taken by piecewise-linear ops in the last forward pass
  /// (relu activity masks and max-pool argmax positions).
  std::vector<Index> branch_pattern() const;

  const Graph& graph() const { return *graph_; }

 private:
  std::shared_ptr<const Graph> graph_;
  std::vector<Tensor> values_;
  std::vector<std::vector<Index>> argmax_;
  bool has_forward_ = false;
};

}  // namespace svre

#endif  // SVRE_GRAPH_HPP
