#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every value is a 2-D matrix. Images and feature grids are stored as
// (batch * height * width) x channels, so spatial operators (convolution,
// pixel shuffle, blur, gathers) are expressed as constant sparse linear maps
// applied to the row dimension. Backward passes are themselves built from
// differentiable operations, so `grad(..., create_graph = true)` yields
// gradients that can be differentiated again (needed for the R1 penalty).

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace snerf::ad {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Constant linear operator on the row dimension, stored with its transpose.
struct RowMap {
  SpMat forward;
  SpMat adjoint;
  Index out_rows() const { return forward.rows(); }
  Index in_rows() const { return forward.cols(); }
};
using RowMapPtr = std::shared_ptr<const RowMap>;

RowMapPtr make_row_map(SpMat forward);

struct Node;

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Mat& value() const;
  /// Direct access for optimizers; never call while a graph that reads it is alive.
  Mat& mutable_value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const;
  double item() const;
  Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<Node> node_;
};

using BackwardFn =
    std::function<void(const Node& self, const Var& grad, std::vector<Var>& input_grads)>;

struct Node {
  Mat value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;
  const char* op = "leaf";
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Mat value);
Var constant(double value);
Var leaf(Mat value, bool requires_grad = true);
Var zeros(Index rows, Index cols);
Var detach(const Var& x);

/// Gradients of scalar `y` with respect to each of `xs`. Inputs that do not
/// influence `y` receive a zero matrix of their shape.
std::vector<Var> grad(const Var& y, std::span<const Var> xs, bool create_graph = false);
std::vector<Var> grad(const Var& y, std::initializer_list<Var> xs, bool create_graph = false);

// Elementwise binary ops with row/column/scalar broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var neg(const Var& x);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);
Var apply(const RowMapPtr& map, const Var& x);

Var hcat(std::span<const Var> parts);
Var hcat(std::initializer_list<Var> parts);
Var vcat(std::span<const Var> parts);
Var vcat(std::initializer_list<Var> parts);
Var slice_cols(const Var& x, Index start, Index count);
Var slice_rows(const Var& x, Index start, Index count);
Var reshape(const Var& x, Index rows, Index cols);

Var sum(const Var& x);
Var mean(const Var& x);
/// Column sums: R x C -> 1 x C.
Var sum_rows(const Var& x);
/// Row sums: R x C -> R x 1.
Var sum_cols(const Var& x);

Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var rsqrt(const Var& x);
Var square(const Var& x);
Var sin(const Var& x);
Var cos(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
/// log(1 + exp(x)) in an overflow-free form.
Var softplus(const Var& x);
Var leaky_relu(const Var& x, double slope);
/// Huber-style smoothed L1 with transition width beta.
Var smooth_l1(const Var& x, double beta);
/// Multiplies by a constant mask; no gradient flows into the mask.
Var mask(const Var& x, const Mat& m);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }

}  // namespace snerf::ad
