#include "stylenerf/tensor.hpp"

#include "stylenerf/error.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_map>
#include <unordered_set>

namespace snerf::ad {

namespace {

thread_local bool g_grad_enabled = true;

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_str(const Mat& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

Var make_result(Mat value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.defined() && v.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

void broadcast_shape(const Mat& a, const Mat& b, Index& rows, Index& cols, const char* op) {
  rows = std::max(a.rows(), b.rows());
  cols = std::max(a.cols(), b.cols());
  const bool ok = (a.rows() == rows || a.rows() == 1) && (b.rows() == rows || b.rows() == 1) &&
                  (a.cols() == cols || a.cols() == 1) && (b.cols() == cols || b.cols() == 1);
  if (!ok) {
    throw ConfigError(std::string("shape mismatch in ") + op + ": " + shape_str(a) + " vs " +
                      shape_str(b));
  }
}

auto bcast(const Mat& m, Index rows, Index cols) {
  return m.array().replicate(rows / m.rows(), cols / m.cols());
}

Var expand(const Var& x, Index rows, Index cols);

Var reduce_to(const Var& g, Index rows, Index cols) {
  Var r = g;
  if (r.rows() != rows) r = sum_rows(r);
  if (r.cols() != cols) r = sum_cols(r);
  return r;
}

Var expand(const Var& x, Index rows, Index cols) {
  if (x.rows() == rows && x.cols() == cols) return x;
  Mat v = bcast(x.value(), rows, cols).matrix();
  return make_result(
      std::move(v), {x},
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = reduce_to(g, self.inputs[0].rows(), self.inputs[0].cols());
      },
      "expand");
}

template <typename F>
Var unary(const Var& x, F&& f, BackwardFn backward, const char* op) {
  Mat v = f(x.value().array()).matrix();
  return make_result(std::move(v), {x}, std::move(backward), op);
}

// Output value of `self` as a differentiable Var when recording, a constant otherwise.
template <typename F>
Var output_of(const Node& self, F&& recompute) {
  if (g_grad_enabled) return recompute(self.inputs[0]);
  return constant(self.value);
}

Var embed_cols(const Var& g, Index total, Index start);
Var embed_rows(const Var& g, Index total, Index start);

Var apply_impl(const RowMapPtr& map, const Var& x, bool adjoint) {
  const SpMat& m = adjoint ? map->adjoint : map->forward;
  if (m.cols() != x.rows()) {
    throw ConfigError("row map expects " + std::to_string(m.cols()) + " rows, got " +
                      shape_str(x.value()));
  }
  Mat v = m * x.value();
  return make_result(
      std::move(v), {x},
      [map, adjoint](const Node&, const Var& g, std::vector<Var>& out) {
        out[0] = apply_impl(map, g, !adjoint);
      },
      "row_map");
}

Var embed_cols(const Var& g, Index total, Index start) {
  Mat v = Mat::Zero(g.rows(), total);
  v.middleCols(start, g.cols()) = g.value();
  const Index count = g.cols();
  return make_result(
      std::move(v), {g},
      [start, count](const Node&, const Var& gg, std::vector<Var>& out) {
        out[0] = slice_cols(gg, start, count);
      },
      "embed_cols");
}

Var embed_rows(const Var& g, Index total, Index start) {
  Mat v = Mat::Zero(total, g.cols());
  v.middleRows(start, g.rows()) = g.value();
  const Index count = g.rows();
  return make_result(
      std::move(v), {g},
      [start, count](const Node&, const Var& gg, std::vector<Var>& out) {
        out[0] = slice_rows(gg, start, count);
      },
      "embed_rows");
}

}  // namespace

RowMapPtr make_row_map(SpMat forward) {
  auto map = std::make_shared<RowMap>();
  forward.makeCompressed();
  map->adjoint = SpMat(forward.transpose());
  map->adjoint.makeCompressed();
  map->forward = std::move(forward);
  return map;
}

const Mat& Var::value() const { return node_->value; }
Mat& Var::mutable_value() const { return node_->value; }
bool Var::requires_grad() const { return node_ && node_->requires_grad; }
double Var::item() const { return node_->value(0, 0); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
EnableGradGuard::EnableGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var constant(Mat value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var constant(double value) {
  Mat m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var leaf(Mat value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var zeros(Index rows, Index cols) { return constant(Mat::Zero(rows, cols)); }
Var detach(const Var& x) { return constant(x.value()); }

std::vector<Var> grad(const Var& y, std::span<const Var> xs, bool create_graph) {
  if (y.rows() != 1 || y.cols() != 1) throw ArgumentError("grad() requires a scalar output");

  // Iterative post-order DFS over nodes that require grad.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  if (y.requires_grad()) {
    std::vector<std::pair<Node*, std::size_t>> stack{{y.node(), 0}};
    visited.insert(y.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node* child = node->inputs[next++].node();
        if (child && child->requires_grad && visited.insert(child).second) {
          stack.emplace_back(child, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_set<Node*> wanted;
  for (const auto& x : xs) wanted.insert(x.node());

  std::optional<NoGradGuard> no_grad;
  std::optional<EnableGradGuard> with_grad;
  if (create_graph) {
    with_grad.emplace();
  } else {
    no_grad.emplace();
  }

  std::unordered_map<Node*, Var> grads;
  if (y.requires_grad()) grads[y.node()] = constant(Mat::Ones(1, 1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (!node->backward) continue;
    Var g = found->second;
    if (!wanted.count(node)) grads.erase(found);
    std::vector<Var> input_grads(node->inputs.size());
    node->backward(*node, g, input_grads);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Var& in = node->inputs[i];
      if (!input_grads[i].defined() || !in.requires_grad()) continue;
      auto [slot, inserted] = grads.try_emplace(in.node(), input_grads[i]);
      if (!inserted) slot->second = add(slot->second, input_grads[i]);
    }
  }

  std::vector<Var> result;
  result.reserve(xs.size());
  for (const auto& x : xs) {
    auto found = grads.find(x.node());
    if (found != grads.end()) {
      result.push_back(found->second);
    } else {
      result.push_back(zeros(x.rows(), x.cols()));
    }
  }
  return result;
}

std::vector<Var> grad(const Var& y, std::initializer_list<Var> xs, bool create_graph) {
  std::vector<Var> v(xs);
  return grad(y, std::span<const Var>(v), create_graph);
}

Var add(const Var& a, const Var& b) {
  Index r, c;
  broadcast_shape(a.value(), b.value(), r, c, "add");
  Mat v = (bcast(a.value(), r, c) + bcast(b.value(), r, c)).matrix();
  return make_result(
      std::move(v), {a, b},
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        const auto& a = self.inputs[0];
        const auto& b = self.inputs[1];
        out[0] = reduce_to(g, a.rows(), a.cols());
        out[1] = reduce_to(g, b.rows(), b.cols());
      },
      "add");
}

Var sub(const Var& a, const Var& b) {
  Index r, c;
  broadcast_shape(a.value(), b.value(), r, c, "sub");
  Mat v = (bcast(a.value(), r, c) - bcast(b.value(), r, c)).matrix();
  return make_result(
      std::move(v), {a, b},
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        const auto& a = self.inputs[0];
        const auto& b = self.inputs[1];
        out[0] = reduce_to(g, a.rows(), a.cols());
        out[1] = neg(reduce_to(g, b.rows(), b.cols()));
      },
      "sub");
}

Var mul(const Var& a, const Var& b) {
  Index r, c;
  broadcast_shape(a.value(), b.value(), r, c, "mul");
  Mat v = (bcast(a.value(), r, c) * bcast(b.value(), r, c)).matrix();
  return make_result(
      std::move(v), {a, b},
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        const auto& a = self.inputs[0];
        const auto& b = self.inputs[1];
        if (a.requires_grad()) out[0] = reduce_to(mul(g, b), a.rows(), a.cols());
        if (b.requires_grad()) out[1] = reduce_to(mul(g, a), b.rows(), b.cols());
      },
      "mul");
}

Var div(const Var& a, const Var& b) {
  Index r, c;
  broadcast_shape(a.value(), b.value(), r, c, "div");
  Mat v = (bcast(a.value(), r, c) / bcast(b.value(), r, c)).matrix();
  return make_result(
      std::move(v), {a, b},
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        const auto& a = self.inputs[0];
        const auto& b = self.inputs[1];
        if (a.requires_grad()) out[0] = reduce_to(div(g, b), a.rows(), a.cols());
        if (b.requires_grad()) {
          out[1] = reduce_to(neg(div(mul(g, a), square(b))), b.rows(), b.cols());
        }
      },
      "div");
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var scale(const Var& x, double s) {
  Mat v = x.value() * s;
  return make_result(
      std::move(v), {x},
      [s](const Node&, const Var& g, std::vector<Var>& out) { out[0] = scale(g, s); }, "scale");
}

Var add_scalar(const Var& x, double s) {
  Mat v = (x.value().array() + s).matrix();
  return make_result(
      std::move(v), {x}, [](const Node&, const Var& g, std::vector<Var>& out) { out[0] = g; },
      "add_scalar");
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ConfigError("matmul shape mismatch: " + shape_str(a.value()) + " x " +
                      shape_str(b.value()));
  }
  Mat v = a.value() * b.value();
  return make_result(
      std::move(v), {a, b},
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        const auto& a = self.inputs[0];
        const auto& b = self.inputs[1];
        if (a.requires_grad()) out[0] = matmul(g, transpose(b));
        if (b.requires_grad()) out[1] = matmul(transpose(a), g);
      },
      "matmul");
}

Var transpose(const Var& x) {
  Mat v = x.value().transpose();
  return make_result(
      std::move(v), {x},
      [](const Node&, const Var& g, std::vector<Var>& out) { out[0] = transpose(g); },
      "transpose");
}

Var apply(const RowMapPtr& map, const Var& x) { return apply_impl(map, x, false); }

Var hcat(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("hcat of nothing");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ConfigError("hcat row mismatch");
    cols += p.cols();
  }
  Mat v(rows, cols);
  Index at = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    widths.push_back(p.cols());
  }
  return make_result(
      std::move(v), std::vector<Var>(parts.begin(), parts.end()),
      [widths](const Node&, const Var& g, std::vector<Var>& out) {
        Index start = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          out[i] = slice_cols(g, start, widths[i]);
          start += widths[i];
        }
      },
      "hcat");
}

Var hcat(std::initializer_list<Var> parts) {
  std::vector<Var> v(parts);
  return hcat(std::span<const Var>(v));
}

Var vcat(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("vcat of nothing");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ConfigError("vcat column mismatch");
    rows += p.rows();
  }
  Mat v(rows, cols);
  Index at = 0;
  std::vector<Index> heights;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    heights.push_back(p.rows());
  }
  return make_result(
      std::move(v), std::vector<Var>(parts.begin(), parts.end()),
      [heights](const Node&, const Var& g, std::vector<Var>& out) {
        Index start = 0;
        for (std::size_t i = 0; i < heights.size(); ++i) {
          out[i] = slice_rows(g, start, heights[i]);
          start += heights[i];
        }
      },
      "vcat");
}

Var vcat(std::initializer_list<Var> parts) {
  std::vector<Var> v(parts);
  return vcat(std::span<const Var>(v));
}

Var slice_cols(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ArgumentError("slice_cols range");
  Mat v = x.value().middleCols(start, count);
  const Index total = x.cols();
  return make_result(
      std::move(v), {x},
      [total, start](const Node&, const Var& g, std::vector<Var>& out) {
        out[0] = embed_cols(g, total, start);
      },
      "slice_cols");
}

Var slice_rows(const Var& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ArgumentError("slice_rows range");
  Mat v = x.value().middleRows(start, count);
  const Index total = x.rows();
  return make_result(
      std::move(v), {x},
      [total, start](const Node&, const Var& g, std::vector<Var>& out) {
        out[0] = embed_rows(g, total, start);
      },
      "slice_rows");
}

Var reshape(const Var& x, Index rows, Index cols) {
  if (rows * cols != x.rows() * x.cols()) throw ConfigError("reshape size mismatch");
  Mat v = Eigen::Map<const Mat>(x.value().data(), rows, cols);
  const Index r0 = x.rows();
  const Index c0 = x.cols();
  return make_result(
      std::move(v), {x},
      [r0, c0](const Node&, const Var& g, std::vector<Var>& out) { out[0] = reshape(g, r0, c0); },
      "reshape");
}

Var sum(const Var& x) {
  Mat v(1, 1);
  v(0, 0) = x.value().sum();
  return make_result(
      std::move(v), {x},
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = expand(g, self.inputs[0].rows(), self.inputs[0].cols());
      },
      "sum");
}

Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.rows() * x.cols()));
}

Var sum_rows(const Var& x) {
  Mat v = x.value().colwise().sum();
  return make_result(
      std::move(v), {x},
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = expand(g, self.inputs[0].rows(), self.inputs[0].cols());
      },
      "sum_rows");
}

Var sum_cols(const Var& x) {
  Mat v = x.value().rowwise().sum();
  return make_result(
      std::move(v), {x},
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = expand(g, self.inputs[0].rows(), self.inputs[0].cols());
      },
      "sum_cols");
}

Var exp(const Var& x) {
  return unary(
      x, [](const auto& a) { return a.exp(); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = mul(g, output_of(self, [](const Var& in) { return exp(in); }));
      },
      "exp");
}

Var log(const Var& x) {
  return unary(
      x, [](const auto& a) { return a.log(); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = div(g, self.inputs[0]);
      },
      "log");
}

Var sqrt(const Var& x) {
  return unary(
      x, [](const auto& a) { return a.sqrt(); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        Var y = output_of(self, [](const Var& in) { return sqrt(in); });
        out[0] = div(scale(g, 0.5), y);
      },
      "sqrt");
}

Var rsqrt(const Var& x) {
  return unary(
      x, [](const auto& a) { return a.rsqrt(); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        Var y = output_of(self, [](const Var& in) { return rsqrt(in); });
        out[0] = mul(scale(g, -0.5), mul(y, square(y)));
      },
      "rsqrt");
}

Var square(const Var& x) {
  return unary(
      x, [](const auto& a) { return a.square(); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = mul(scale(g, 2.0), self.inputs[0]);
      },
      "square");
}

Var sin(const Var& x) {
  return unary(
      x, [](const auto& a) { return a.sin(); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = mul(g, cos(self.inputs[0]));
      },
      "sin");
}

Var cos(const Var& x) {
  return unary(
      x, [](const auto& a) { return a.cos(); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = neg(mul(g, sin(self.inputs[0])));
      },
      "cos");
}

Var tanh(const Var& x) {
  return unary(
      x, [](const auto& a) { return a.tanh(); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        Var y = output_of(self, [](const Var& in) { return tanh(in); });
        out[0] = mul(g, add_scalar(neg(square(y)), 1.0));
      },
      "tanh");
}

namespace {
Array stable_sigmoid(const Array& a) {
  Array out(a.rows(), a.cols());
  for (Index i = 0; i < a.size(); ++i) {
    const double v = a.data()[i];
    if (v >= 0) {
      out.data()[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out.data()[i] = e / (1.0 + e);
    }
  }
  return out;
}
}  // namespace

Var sigmoid(const Var& x) {
  return unary(
      x, [](const auto& a) { return stable_sigmoid(a); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        Var y = output_of(self, [](const Var& in) { return sigmoid(in); });
        out[0] = mul(g, mul(y, add_scalar(neg(y), 1.0)));
      },
      "sigmoid");
}

Var softplus(const Var& x) {
  return unary(
      x, [](const auto& a) { return a.max(0.0) + (-a.abs()).exp().log1p(); },
      [](const Node& self, const Var& g, std::vector<Var>& out) {
        out[0] = mul(g, sigmoid(self.inputs[0]));
      },
      "softplus");
}

Var leaky_relu(const Var& x, double slope) {
  Mat m = (x.value().array() > 0.0).select(Array::Ones(x.rows(), x.cols()), slope).matrix();
  return mask(x, m);
}

Var smooth_l1(const Var& x, double beta) {
  const Array a = x.value().array();
  Mat v = (a.abs() < beta).select(0.5 * a.square() / beta, a.abs() - 0.5 * beta).matrix();
  return make_result(
      std::move(v), {x},
      [beta](const Node& self, const Var& g, std::vector<Var>& out) {
        const Var& in = self.inputs[0];
        const Array a = in.value().array();
        Mat inside = (a.abs() < beta).cast<double>().matrix();
        Mat outside_sign = (a.abs() < beta).select(Array::Zero(a.rows(), a.cols()), a.sign());
        out[0] = add(mask(mul(g, in), inside * (1.0 / beta)), mask(g, outside_sign));
      },
      "smooth_l1");
}

Var mask(const Var& x, const Mat& m) {
  if (m.rows() != x.rows() || m.cols() != x.cols()) throw ConfigError("mask shape mismatch");
  Mat v = x.value().cwiseProduct(m);
  return make_result(
      std::move(v), {x},
      [m](const Node&, const Var& g, std::vector<Var>& out) { out[0] = mask(g, m); }, "mask");
}

}  // namespace snerf::ad
