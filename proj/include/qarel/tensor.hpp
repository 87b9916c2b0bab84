#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Graph records every primitive applied to its Vars in construction order,
// which is also a valid topological order. Leaves come in three kinds:
//   parameter(t)  references t; backward() accumulates into t.grad
//   constant(t)   references t; never receives gradient
//   input(t)      owns t; never receives gradient
// Referenced tensors must outlive the graph. A Graph and the tensors it
// references belong to one thread at a time.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qarel {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Row-major float64 array. An empty shape is a scalar holding one value.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  ///< empty until gradient is first accumulated

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  /// Rank-2 helpers; a rank-1 tensor is viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double item() const;

  void zero_grad() { grad.assign(data.size(), 0.0); }
  bool all_finite() const;
};

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  explicit operator bool() const { return graph != nullptr; }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  Var parameter(Tensor& t);
  Var constant(const Tensor& t);
  Var input(Tensor t);

  const Tensor& value(std::size_t id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse-mode pass from a scalar loss. Every parameter reachable from the
  /// loss has d loss / d parameter added to its grad; repeated calls keep
  /// accumulating until the caller zeroes the grads. Throws NumericError if
  /// the loss is not a scalar node of this graph.
  void backward(Var loss);

  // Primitive implementation interface ----------------------------------

  /// Appends an op node. `backward` may be empty for non-differentiable ops;
  /// it is only invoked when some input requires gradient.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Upstream gradient of a node (valid during backward).
  const std::vector<double>& grad_of(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient accumulator of an input, zero-initialised on first use.
  std::vector<double>& grad_accumulator(std::size_t id);
  std::size_t input(std::size_t node, std::size_t k) const { return nodes_[node].inputs[k]; }

 private:
  struct Node {
    const char* op = "";
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::vector<double> grad;
  };

  std::vector<Node> nodes_;
};

/// Differentiable primitives. Shape rules are documented per op; violations
/// throw NumericError naming the op and the offending shapes. Every op checks
/// that its output is finite.
namespace ops {

/// Elementwise sum; equal shapes.
Var add(Var a, Var b);
/// Elementwise product; equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// n x c plus a bias of shape {c} or {1, c} broadcast over rows.
Var add_row(Var x, Var bias);
/// Sum / mean of all elements to a scalar.
Var sum(Var a);
Var mean(Var a);
/// (m x k) (k x n) -> m x n.
Var matmul(Var a, Var b);
Var transpose(Var a);
/// Softmax along each row. With a key mask (length = cols, entries 0 or 1),
/// masked columns are excluded and receive probability exactly 0.
Var row_softmax(Var x);
Var row_softmax(Var x, std::span<const double> key_mask);
Var row_log_softmax(Var x);
/// Per-row normalisation to zero mean / unit variance, then gain and bias
/// (each {c}). Variance uses the population denominator.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-12);
/// Exact Gaussian error linear unit, x * Phi(x).
Var gelu(Var x);
/// Mean of the rows whose mask entry is 1; n x c -> 1 x c.
Var mean_rows_masked(Var x, std::span<const double> row_mask);
/// Horizontal / vertical concatenation.
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
/// Gathers rows of a table; gradient is scattered back.
Var lookup_rows(Var table, std::span<const int> ids);
/// Scales every row to unit L2 norm; zero rows throw NumericError.
Var row_normalize(Var x);
/// Diagonal of a square matrix as a rank-1 tensor.
Var diagonal(Var x);

}  // namespace ops

enum class InitScheme { UniformScaled, Zeros };

/// UniformScaled draws U(-b, b) with b = sqrt(6 / (fan_in + fan_out)), where
/// fan_in = shape[0] and fan_out = shape[1] for rank 2 (both = shape[0] for
/// rank 1). Values come from qarel::Rng, so results are identical across
/// platforms for a given seed.
Tensor seeded_init(const Shape& shape, InitScheme scheme, std::uint64_t seed);

/// Compares backward() gradients with central differences
/// (L(t + eps) - L(t - eps)) / 2 eps for every element of every parameter and
/// returns max |a - n| / max(1e-8, |a| + |n|). `build_loss` must bind the
/// parameters with Graph::parameter and return a scalar. Throws ArgumentError
/// unless 0 < eps <= 1e-2 and NumericError on a non-finite loss.
double grad_check(const std::function<Var(Graph&)>& build_loss, std::span<Tensor* const> params,
                  double eps);

}  // namespace qarel
