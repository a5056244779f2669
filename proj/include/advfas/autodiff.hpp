#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace advfas::ad {

// Dense row-major matrix of doubles. Rows index examples in a batch.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::span<const double> v);
  static Tensor row(std::span<const double> v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates into parents' grads.
  std::function<void(Node&)> backward;
};

// Handle to a node in a reverse-mode graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }
  static Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  const Tensor& value() const { return node_->value; }
  // Gradient after backward(); zero tensor of value's shape if nothing reached it.
  Tensor grad() const;
  double item() const;

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const noexcept { return node_ != nullptr; }

  // Seeds d(this)/d(this) = 1 and propagates to every reachable leaf.
  // The root must be 1x1. Gradients accumulate across calls; build a fresh
  // graph per evaluation.
  void backward() const;

  // True if `other` is reachable from this node through parent edges.
  bool depends_on(const Var& other) const;

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// y = x W^T + b, with x [B x in], W [out x in], b [1 x out].
Var linear(const Var& x, const Var& w, const Var& b);
Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
// Elementwise product of equal shapes.
Var mul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double k);
// k * a + c elementwise.
Var affine(const Var& a, double k, double c);
// Same value, no gradient flows through.
Var detach(const Var& a);
// Row r taken from `a` when take_a[r] != 0, else from `b`. Gradient is routed
// to the source row only.
Var select_rows(std::span<const std::uint8_t> take_a, const Var& a, const Var& b);
// Column slice [first, first+count) of every row.
Var columns(const Var& a, std::size_t first, std::size_t count);
// Elementwise binary cross-entropy with probabilities clamped to
// [eps, 1-eps] before the logarithms. Target may itself carry gradient.
Var bce(const Var& p, const Var& t, double eps);
// Per-row mean over columns: [B x C] -> [B x 1].
Var row_mean(const Var& a);
// Sum of all entries -> 1x1.
Var sum(const Var& a);
// Mean of all entries -> 1x1.
Var mean(const Var& a);
// Sum_i w_i a_i / Sum_i w_i over a [B x 1] column; rows with w_i == 0 are
// never read. A zero weight total yields the constant 0.
Var weighted_mean(const Var& a, std::span<const double> weights);

}  // namespace advfas::ad
