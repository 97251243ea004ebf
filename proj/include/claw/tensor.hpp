#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "claw/errors.hpp"

namespace claw {

namespace detail {

// One node of the define-by-run graph. Nodes created by an operation keep
// shared ownership of their inputs; leaves have no parents. `seq` records
// creation order, and backward() sweeps reachable nodes in decreasing `seq`,
// so every node is visited exactly once after all of its consumers.
struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // lazily allocated, same length as values
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorData>> parents;
  std::function<void(const TensorData&)> backprop;

  std::vector<double>& ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

std::uint64_t next_seq();

}  // namespace detail

std::string shape_str(const std::vector<std::size_t>& shape);

// Dense row-major tensor of 64-bit reals; also a node in the differentiation
// graph. Handles are cheap to copy and share the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::vector<double> values, std::vector<std::size_t> shape,
                     bool requires_grad = false);
  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->values.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::vector<double>& grad() { return impl_->ensure_grad(); }
  void zero_grad();

  // Copy of the values with no graph history.
  Tensor detach() const;

  detail::TensorData* node() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorData>& ptr() const { return impl_; }

  static Tensor make_node(std::vector<double> values, std::vector<std::size_t> shape,
                          std::vector<std::shared_ptr<detail::TensorData>> parents,
                          std::function<void(const detail::TensorData&)> backprop);

 private:
  std::shared_ptr<detail::TensorData> impl_;
};

// Binary elementwise ops accept equal shapes or a scalar (size-1) paired with
// a tensor; anything else raises ShapeError naming both shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double c);
Tensor sub(const Tensor& a, double c);
Tensor sub(double c, const Tensor& a);
Tensor mul(const Tensor& a, double c);
Tensor div(const Tensor& a, double c);
Tensor div(double c, const Tensor& a);

Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);   // domain: strictly positive inputs
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);  // domain: non-negative inputs
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Row-broadcast helpers for dense layers: v has length a.cols().
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor mul_rowvec(const Tensor& a, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);

// Mean over the batch of -log softmax(logits)[label], stabilized by row-max
// subtraction. labels.size() must equal logits.rows().
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Forward-only row softmax (no graph), flattened row-major.
std::vector<double> softmax_rows(const Tensor& logits);

// Reverse-mode sweep from a scalar root. Each reachable node is visited once,
// in reverse creation order. Leaf gradients accumulate across repeated calls;
// intermediate buffers are reset per sweep.
void backward(const Tensor& root);

}  // namespace claw
