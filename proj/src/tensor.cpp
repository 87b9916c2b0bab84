#include "qarel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "qarel/error.hpp"
#include "qarel/rng.hpp"

namespace qarel {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw NumericError("tensor: " + std::to_string(data.size()) + " values for shape " +
                       shape_string(shape));
  }
}

std::size_t Tensor::rows() const {
  if (shape.size() == 2) return shape[0];
  if (shape.size() <= 1) return 1;
  throw NumericError("tensor: rows() on rank-" + std::to_string(shape.size()) + " tensor");
}

std::size_t Tensor::cols() const {
  if (shape.size() == 2) return shape[1];
  if (shape.size() == 1) return shape[0];
  if (shape.empty()) return 1;
  throw NumericError("tensor: cols() on rank-" + std::to_string(shape.size()) + " tensor");
}

double Tensor::item() const {
  if (data.size() != 1) throw NumericError("tensor: item() on shape " + shape_string(shape));
  return data[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return graph->value(id); }

// ---------------------------------------------------------------------------
// Graph

Var Graph::parameter(Tensor& t) {
  Node n;
  n.op = "parameter";
  n.ref = &t;
  n.param = &t;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::constant(const Tensor& t) {
  Node n;
  n.op = "constant";
  n.ref = &t;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::input(Tensor t) {
  Node n;
  n.op = "input";
  n.owned = std::move(t);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.ref ? *n.ref : n.owned;
}

Var Graph::record(const char* op, Tensor value, std::vector<std::size_t> inputs,
                  BackwardFn backward) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
  Node n;
  n.op = op;
  n.owned = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::vector<double>& Graph::grad_accumulator(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph == nullptr || nodes_.empty()) {
    throw NumericError("backward: called before any forward computation");
  }
  if (loss.graph != this || loss.id >= nodes_.size()) {
    throw NumericError("backward: loss does not belong to this graph");
  }
  if (value(loss.id).size() != 1) {
    throw NumericError("backward: loss must be a scalar, got shape " +
                       shape_string(value(loss.id).shape));
  }
  for (auto& n : nodes_) n.grad.clear();
  nodes_[loss.id].grad.assign(1, 1.0);

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      auto& g = n.param->grad;
      if (g.size() != n.param->size()) g.assign(n.param->size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Primitives

namespace ops {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw NumericError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a) {
  throw NumericError(std::string(op) + ": unsupported shape " + shape_string(a));
}

Graph& graph_of(const char* op, Var a) {
  if (a.graph == nullptr) throw NumericError(std::string(op) + ": null variable");
  return *a.graph;
}

Graph& graph_of(const char* op, Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw NumericError(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph;
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) shape_error(op, t.shape);
}

// Adds `scale * src` into the accumulator of node `id` if it needs gradient.
void accumulate(Graph& g, std::size_t id, const std::vector<double>& src, double scale = 1.0) {
  if (!g.requires_grad(id)) return;
  auto& dst = g.grad_accumulator(id);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = graph_of("add", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape != y.shape) shape_error("add", x.shape, y.shape);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] + y.data[i];
  return g.record("add", std::move(out), {a.id, b.id}, [](Graph& g, std::size_t self) {
    accumulate(g, g.input(self, 0), g.grad_of(self));
    accumulate(g, g.input(self, 1), g.grad_of(self));
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape != y.shape) shape_error("mul", x.shape, y.shape);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] * y.data[i];
  return g.record("mul", std::move(out), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const auto& up = g.grad_of(self);
    const std::size_t ia = g.input(self, 0);
    const std::size_t ib = g.input(self, 1);
    const auto& xa = g.value(ia).data;
    const auto& xb = g.value(ib).data;
    if (g.requires_grad(ia)) {
      auto& ga = g.grad_accumulator(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += up[i] * xb[i];
    }
    if (g.requires_grad(ib)) {
      auto& gb = g.grad_accumulator(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += up[i] * xa[i];
    }
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of("scale", a);
  Tensor out = Tensor(a.value().shape, a.value().data);
  for (auto& v : out.data) v *= s;
  return g.record("scale", std::move(out), {a.id}, [s](Graph& g, std::size_t self) {
    accumulate(g, g.input(self, 0), g.grad_of(self), s);
  });
}

Var add_row(Var x, Var bias) {
  Graph& g = graph_of("add_row", x, bias);
  const Tensor& m = x.value();
  const Tensor& b = bias.value();
  require_matrix("add_row", m);
  if (b.size() != m.cols() || b.rank() > 2 || (b.rank() == 2 && b.shape[0] != 1)) {
    shape_error("add_row", m.shape, b.shape);
  }
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  Tensor out(m.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = m.data[r * cols + c] + b.data[c];
  }
  return g.record("add_row", std::move(out), {x.id, bias.id},
                  [rows, cols](Graph& g, std::size_t self) {
                    const auto& up = g.grad_of(self);
                    accumulate(g, g.input(self, 0), up);
                    const std::size_t ib = g.input(self, 1);
                    if (g.requires_grad(ib)) {
                      auto& gb = g.grad_accumulator(ib);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < cols; ++c) gb[c] += up[r * cols + c];
                      }
                    }
                  });
}

Var sum(Var a) {
  Graph& g = graph_of("sum", a);
  double total = 0.0;
  for (double v : a.value().data) total += v;
  return g.record("sum", Tensor::scalar(total), {a.id}, [](Graph& g, std::size_t self) {
    const std::size_t ia = g.input(self, 0);
    if (!g.requires_grad(ia)) return;
    const double up = g.grad_of(self)[0];
    for (auto& v : g.grad_accumulator(ia)) v += up;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw NumericError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of("matmul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0]) {
    shape_error("matmul", x.shape, y.shape);
  }
  const std::size_t m = x.shape[0];
  const std::size_t k = x.shape[1];
  const std::size_t n = y.shape[1];
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out.data[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x.data[i * k + p];
      const double* yrow = &y.data[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
    }
  }
  return g.record("matmul", std::move(out), {a.id, b.id}, [m, k, n](Graph& g, std::size_t self) {
    const auto& up = g.grad_of(self);
    const std::size_t ia = g.input(self, 0);
    const std::size_t ib = g.input(self, 1);
    const auto& xd = g.value(ia).data;
    const auto& yd = g.value(ib).data;
    if (g.requires_grad(ia)) {
      // dX = dOut * Y^T
      auto& ga = g.grad_accumulator(ia);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += up[i * n + j] * yd[p * n + j];
          ga[i * k + p] += s;
        }
      }
    }
    if (g.requires_grad(ib)) {
      // dY = X^T * dOut
      auto& gb = g.grad_accumulator(ib);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = xd[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += xv * up[i * n + j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  Graph& g = graph_of("transpose", a);
  const Tensor& x = a.value();
  require_matrix("transpose", x);
  const std::size_t r = x.shape[0];
  const std::size_t c = x.shape[1];
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = x.data[i * c + j];
  }
  return g.record("transpose", std::move(out), {a.id}, [r, c](Graph& g, std::size_t self) {
    const std::size_t ia = g.input(self, 0);
    if (!g.requires_grad(ia)) return;
    const auto& up = g.grad_of(self);
    auto& ga = g.grad_accumulator(ia);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += up[j * r + i];
    }
  });
}

namespace {

Var softmax_impl(Var x, std::vector<double> mask) {
  Graph& g = graph_of("row_softmax", x);
  const Tensor& in = x.value();
  if (in.rank() > 2 || in.rank() == 0) shape_error("row_softmax", in.shape);
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  if (!mask.empty() && mask.size() != cols) {
    shape_error("row_softmax", in.shape, Shape{mask.size()});
  }
  auto live = [&mask](std::size_t c) { return mask.empty() || mask[c] != 0.0; };

  Tensor out(in.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &in.data[r * cols];
    double* yr = &out.data[r * cols];
    double mx = -INFINITY;
    for (std::size_t c = 0; c < cols; ++c) {
      if (live(c)) mx = std::max(mx, xr[c]);
    }
    if (mx == -INFINITY) throw NumericError("row_softmax: every column of a row is masked");
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (live(c)) {
        yr[c] = std::exp(xr[c] - mx);
        z += yr[c];
      }
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] = live(c) ? yr[c] / z : 0.0;
  }
  return g.record("row_softmax", std::move(out), {x.id}, [rows, cols](Graph& g, std::size_t self) {
    const std::size_t ia = g.input(self, 0);
    if (!g.requires_grad(ia)) return;
    const auto& up = g.grad_of(self);
    const auto& y = g.value(self).data;
    auto& ga = g.grad_accumulator(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += up[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        ga[r * cols + c] += y[r * cols + c] * (up[r * cols + c] - dot);
      }
    }
  });
}

}  // namespace

Var row_softmax(Var x) { return softmax_impl(x, {}); }

Var row_softmax(Var x, std::span<const double> key_mask) {
  return softmax_impl(x, std::vector<double>(key_mask.begin(), key_mask.end()));
}

Var row_log_softmax(Var x) {
  Graph& g = graph_of("row_log_softmax", x);
  const Tensor& in = x.value();
  if (in.rank() > 2 || in.rank() == 0) shape_error("row_log_softmax", in.shape);
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  Tensor out(in.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &in.data[r * cols];
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = xr[c] - lse;
  }
  return g.record("row_log_softmax", std::move(out), {x.id},
                  [rows, cols](Graph& g, std::size_t self) {
                    const std::size_t ia = g.input(self, 0);
                    if (!g.requires_grad(ia)) return;
                    const auto& up = g.grad_of(self);
                    const auto& y = g.value(self).data;
                    auto& ga = g.grad_accumulator(ia);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double total = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) total += up[r * cols + c];
                      for (std::size_t c = 0; c < cols; ++c) {
                        ga[r * cols + c] += up[r * cols + c] - std::exp(y[r * cols + c]) * total;
                      }
                    }
                  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of("layer_norm", x, gain);
  graph_of("layer_norm", x, bias);
  const Tensor& in = x.value();
  require_matrix("layer_norm", in);
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  if (gain.value().size() != cols) shape_error("layer_norm", in.shape, gain.value().shape);
  if (bias.value().size() != cols) shape_error("layer_norm", in.shape, bias.value().shape);
  const auto& gv = gain.value().data;
  const auto& bv = bias.value().data;

  // Normalised activations and inverse deviations are kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(in.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &in.data[r * cols];
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = rs;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mu) * rs;
      (*xhat)[r * cols + c] = h;
      out.data[r * cols + c] = gv[c] * h + bv[c];
    }
  }
  return g.record(
      "layer_norm", std::move(out), {x.id, gain.id, bias.id},
      [rows, cols, xhat, inv_std](Graph& g, std::size_t self) {
        const auto& up = g.grad_of(self);
        const std::size_t ix = g.input(self, 0);
        const std::size_t ig = g.input(self, 1);
        const std::size_t ib = g.input(self, 2);
        const auto& gv = g.value(ig).data;
        if (g.requires_grad(ig)) {
          auto& gg = g.grad_accumulator(ig);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) gg[c] += up[r * cols + c] * (*xhat)[r * cols + c];
          }
        }
        if (g.requires_grad(ib)) {
          auto& gb = g.grad_accumulator(ib);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) gb[c] += up[r * cols + c];
          }
        }
        if (g.requires_grad(ix)) {
          auto& gx = g.grad_accumulator(ix);
          const double inv_n = 1.0 / static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0;
            double mean_dh = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = up[r * cols + c] * gv[c];
              mean_d += d;
              mean_dh += d * (*xhat)[r * cols + c];
            }
            mean_d *= inv_n;
            mean_dh *= inv_n;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = up[r * cols + c] * gv[c];
              gx[r * cols + c] +=
                  (*inv_std)[r] * (d - mean_d - (*xhat)[r * cols + c] * mean_dh);
            }
          }
        }
      });
}

Var gelu(Var x) {
  Graph& g = graph_of("gelu", x);
  const Tensor& in = x.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in.data[i];
    out.data[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  }
  return g.record("gelu", std::move(out), {x.id}, [](Graph& g, std::size_t self) {
    const std::size_t ia = g.input(self, 0);
    if (!g.requires_grad(ia)) return;
    const auto& up = g.grad_of(self);
    const auto& xv = g.value(ia).data;
    auto& ga = g.grad_accumulator(ia);
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      ga[i] += up[i] * (cdf + v * pdf);
    }
  });
}

Var mean_rows_masked(Var x, std::span<const double> row_mask) {
  Graph& g = graph_of("mean_rows_masked", x);
  const Tensor& in = x.value();
  require_matrix("mean_rows_masked", in);
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  if (row_mask.size() != rows) shape_error("mean_rows_masked", in.shape, Shape{row_mask.size()});
  std::vector<std::size_t> live;
  for (std::size_t r = 0; r < rows; ++r) {
    if (row_mask[r] != 0.0) live.push_back(r);
  }
  if (live.empty()) throw NumericError("mean_rows_masked: mask selects no rows");
  const double inv = 1.0 / static_cast<double>(live.size());
  Tensor out(Shape{1, cols});
  for (std::size_t r : live) {
    for (std::size_t c = 0; c < cols; ++c) out.data[c] += in.data[r * cols + c];
  }
  for (auto& v : out.data) v *= inv;
  return g.record("mean_rows_masked", std::move(out), {x.id},
                  [live = std::move(live), cols, inv](Graph& g, std::size_t self) {
                    const std::size_t ia = g.input(self, 0);
                    if (!g.requires_grad(ia)) return;
                    const auto& up = g.grad_of(self);
                    auto& ga = g.grad_accumulator(ia);
                    for (std::size_t r : live) {
                      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += inv * up[c];
                    }
                  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw NumericError("concat_cols: no operands");
  Graph& g = graph_of("concat_cols", parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    graph_of("concat_cols", parts[0], p);
    const Tensor& t = p.value();
    require_matrix("concat_cols", t);
    if (t.rows() != rows) shape_error("concat_cols", parts[0].value().shape, t.shape);
    widths.push_back(t.cols());
    ids.push_back(p.id);
    total += t.cols();
  }
  Tensor out(Shape{rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(&t.data[r * widths[k]], widths[k], &out.data[r * total + offset]);
    }
    offset += widths[k];
  }
  return g.record("concat_cols", std::move(out), std::move(ids),
                  [rows, total, widths](Graph& g, std::size_t self) {
                    const auto& up = g.grad_of(self);
                    std::size_t offset = 0;
                    for (std::size_t k = 0; k < widths.size(); ++k) {
                      const std::size_t ik = g.input(self, k);
                      if (g.requires_grad(ik)) {
                        auto& gk = g.grad_accumulator(ik);
                        for (std::size_t r = 0; r < rows; ++r) {
                          for (std::size_t c = 0; c < widths[k]; ++c) {
                            gk[r * widths[k] + c] += up[r * total + offset + c];
                          }
                        }
                      }
                      offset += widths[k];
                    }
                  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw NumericError("concat_rows: no operands");
  Graph& g = graph_of("concat_rows", parts[0]);
  const std::size_t cols = parts[0].value().cols();
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> ids;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    graph_of("concat_rows", parts[0], p);
    const Tensor& t = p.value();
    if (t.rank() != 2 && t.rank() != 1) shape_error("concat_rows", t.shape);
    if (t.cols() != cols) shape_error("concat_rows", parts[0].value().shape, t.shape);
    sizes.push_back(t.size());
    ids.push_back(p.id);
    rows += t.rows();
  }
  Tensor out(Shape{rows, cols});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const auto& d = p.value().data;
    std::copy(d.begin(), d.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += d.size();
  }
  return g.record("concat_rows", std::move(out), std::move(ids),
                  [sizes](Graph& g, std::size_t self) {
                    const auto& up = g.grad_of(self);
                    std::size_t offset = 0;
                    for (std::size_t k = 0; k < sizes.size(); ++k) {
                      const std::size_t ik = g.input(self, k);
                      if (g.requires_grad(ik)) {
                        auto& gk = g.grad_accumulator(ik);
                        for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += up[offset + i];
                      }
                      offset += sizes[k];
                    }
                  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  Graph& g = graph_of("slice_cols", x);
  const Tensor& in = x.value();
  require_matrix("slice_cols", in);
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  if (count == 0 || begin + count > cols) {
    throw NumericError("slice_cols: columns [" + std::to_string(begin) + ", " +
                       std::to_string(begin + count) + ") out of range for shape " +
                       shape_string(in.shape));
  }
  Tensor out(Shape{rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(&in.data[r * cols + begin], count, &out.data[r * count]);
  }
  return g.record("slice_cols", std::move(out), {x.id},
                  [rows, cols, begin, count](Graph& g, std::size_t self) {
                    const std::size_t ia = g.input(self, 0);
                    if (!g.requires_grad(ia)) return;
                    const auto& up = g.grad_of(self);
                    auto& ga = g.grad_accumulator(ia);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < count; ++c) {
                        ga[r * cols + begin + c] += up[r * count + c];
                      }
                    }
                  });
}

Var lookup_rows(Var table, std::span<const int> ids) {
  Graph& g = graph_of("lookup_rows", table);
  const Tensor& t = table.value();
  require_matrix("lookup_rows", t);
  const std::size_t n_rows = t.rows();
  const std::size_t cols = t.cols();
  std::vector<std::size_t> idx(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= n_rows) {
      throw NumericError("lookup_rows: id " + std::to_string(ids[i]) + " out of range for table " +
                         shape_string(t.shape));
    }
    idx[i] = static_cast<std::size_t>(ids[i]);
  }
  if (idx.empty()) throw NumericError("lookup_rows: no ids");
  Tensor out(Shape{idx.size(), cols});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(&t.data[idx[i] * cols], cols, &out.data[i * cols]);
  }
  return g.record("lookup_rows", std::move(out), {table.id},
                  [idx = std::move(idx), cols](Graph& g, std::size_t self) {
                    const std::size_t ia = g.input(self, 0);
                    if (!g.requires_grad(ia)) return;
                    const auto& up = g.grad_of(self);
                    auto& ga = g.grad_accumulator(ia);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      for (std::size_t c = 0; c < cols; ++c) ga[idx[i] * cols + c] += up[i * cols + c];
                    }
                  });
}

Var row_normalize(Var x) {
  Graph& g = graph_of("row_normalize", x);
  const Tensor& in = x.value();
  if (in.rank() > 2 || in.rank() == 0) shape_error("row_normalize", in.shape);
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  auto norms = std::make_shared<std::vector<double>>(rows);
  Tensor out(in.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += in.data[r * cols + c] * in.data[r * cols + c];
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0)) {
      throw NumericError("row_normalize: row " + std::to_string(r) + " has zero norm");
    }
    (*norms)[r] = norm;
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = in.data[r * cols + c] / norm;
  }
  return g.record("row_normalize", std::move(out), {x.id},
                  [rows, cols, norms](Graph& g, std::size_t self) {
                    const std::size_t ia = g.input(self, 0);
                    if (!g.requires_grad(ia)) return;
                    const auto& up = g.grad_of(self);
                    const auto& y = g.value(self).data;
                    auto& ga = g.grad_accumulator(ia);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double dot = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * up[r * cols + c];
                      for (std::size_t c = 0; c < cols; ++c) {
                        ga[r * cols + c] += (up[r * cols + c] - y[r * cols + c] * dot) / (*norms)[r];
                      }
                    }
                  });
}

Var diagonal(Var x) {
  Graph& g = graph_of("diagonal", x);
  const Tensor& in = x.value();
  if (in.rank() != 2 || in.shape[0] != in.shape[1]) shape_error("diagonal", in.shape);
  const std::size_t n = in.shape[0];
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) out.data[i] = in.data[i * n + i];
  return g.record("diagonal", std::move(out), {x.id}, [n](Graph& g, std::size_t self) {
    const std::size_t ia = g.input(self, 0);
    if (!g.requires_grad(ia)) return;
    const auto& up = g.grad_of(self);
    auto& ga = g.grad_accumulator(ia);
    for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += up[i];
  });
}

}  // namespace ops

// ---------------------------------------------------------------------------

Tensor seeded_init(const Shape& shape, InitScheme scheme, std::uint64_t seed) {
  for (std::size_t d : shape) {
    if (d == 0) throw ArgumentError("seeded_init: zero-sized dimension in " + shape_string(shape));
  }
  Tensor t(shape);
  if (scheme == InitScheme::Zeros) return t;
  std::size_t fan_in = 1;
  std::size_t fan_out = 1;
  if (shape.size() >= 2) {
    fan_in = shape[0];
    fan_out = shape[1];
  } else if (shape.size() == 1) {
    fan_in = fan_out = shape[0];
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

double grad_check(const std::function<Var(Graph&)>& build_loss, std::span<Tensor* const> params,
                  double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ArgumentError("grad_check: epsilon must be in (0, 1e-2]");

  auto evaluate = [&]() {
    Graph g;
    const double v = build_loss(g).value().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss");
    return v;
  };

  for (Tensor* p : params) p->zero_grad();
  {
    Graph g;
    Var loss = build_loss(g);
    if (!std::isfinite(loss.value().item())) throw NumericError("grad_check: non-finite loss");
    g.backward(loss);
  }

  double worst = 0.0;
  for (Tensor* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->data[i];
      p->data[i] = saved + eps;
      const double up = evaluate();
      p->data[i] = saved - eps;
      const double down = evaluate();
      p->data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double rel =
          std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace qarel
