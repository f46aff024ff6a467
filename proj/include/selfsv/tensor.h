// Copyright 2026 The selfsv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SELFSV_TENSOR_H_
#define SELFSV_TENSOR_H_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfsv {

using Shape = std::vector<std::size_t>;

std::string ShapeToString(const Shape& shape);
std::size_t NumElements(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One vertex of the autodiff graph. Data is fixed after construction;
/// only the gradient buffer (and, for leaves, the optimizer) mutates it.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& GradBuffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Shared handle to a graph node. Copies alias the same storage.
///
/// Forward math runs in float (Tensor); Tensor64 exists for gradient
/// checking, where central differences need the extra precision.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static BasicTensor Zeros(Shape shape, bool requires_grad = false);
  static BasicTensor Full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor FromData(Shape shape, std::vector<T> data,
                              bool requires_grad = false);
  static BasicTensor Scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Only for leaves (parameters, inputs). Writing into a tensor that is
  // already part of a recorded graph invalidates its backward pass.
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void ZeroGrad() { node_->grad.assign(node_->data.size(), T(0)); }
  void ClearGrad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  T item() const;
  T at(std::size_t row, std::size_t col) const;
  bool AllFinite() const;

  // Leaf copy of the current values, cut from the graph.
  BasicTensor Detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool GradEnabled();

/// Builds a graph node from precomputed values. `backward` receives the
/// finished node (grad populated) and must accumulate into parents.
/// Used by the built-in ops and by model code with fused kernels.
template <typename T>
BasicTensor<T> MakeOp(const char* op, Shape shape, std::vector<T> data,
                      std::vector<BasicTensor<T>> parents,
                      std::function<void(Node<T>&)> backward);

// Linear algebra.
template <typename T>
BasicTensor<T> Matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> Transpose(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> Reshape(const BasicTensor<T>& a, Shape shape);

// Elementwise with 2-D broadcasting: a 1-D [n] operand acts as [1, n];
// either operand may have extent 1 along any axis.
template <typename T>
BasicTensor<T> Add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> Sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> Mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> Div(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> Scale(const BasicTensor<T>& a, T factor);
template <typename T>
BasicTensor<T> AddScalar(const BasicTensor<T>& a, T value);

template <typename T>
BasicTensor<T> Gelu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> Relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> Sigmoid(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> Tanh(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> Sqrt(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> Swish(const BasicTensor<T>& x);

// Shape manipulation on 2-D tensors.
template <typename T>
BasicTensor<T> Concat(const std::vector<BasicTensor<T>>& parts,
                      std::size_t axis);
template <typename T>
BasicTensor<T> Slice(const BasicTensor<T>& a, std::size_t axis,
                     std::size_t start, std::size_t length);
// Gathers rows of a 2-D table; doubles as embedding lookup.
template <typename T>
BasicTensor<T> IndexRows(const BasicTensor<T>& table,
                         std::span<const std::size_t> rows);

// Reductions. Sum/Mean return shape [1]; the axis variants keep 2-D form.
template <typename T>
BasicTensor<T> Sum(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> Mean(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> SumAxis(const BasicTensor<T>& a, std::size_t axis);
template <typename T>
BasicTensor<T> MeanAxis(const BasicTensor<T>& a, std::size_t axis);

template <typename T>
BasicTensor<T> Softmax(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> LayerNorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, T eps);

struct Conv1dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

std::size_t Conv1dOutputLength(std::size_t input_length, std::size_t kernel,
                               const Conv1dOptions& opts);

/// Time-major 1-D convolution. x: [T, Cin], weight: [Cout, Cin/groups, K],
/// bias: [Cout] or undefined. Returns [T', Cout].
template <typename T>
BasicTensor<T> Conv1d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const Conv1dOptions& opts);

/// Mean negative log-likelihood of `labels` under row-wise softmax(logits).
template <typename T>
BasicTensor<T> CrossEntropy(const BasicTensor<T>& logits,
                            std::span<const int> labels);

/// Cosine similarity of two equal-size tensors, returned as shape [1].
template <typename T>
BasicTensor<T> Cosine(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Divides every row by its L2 norm.
template <typename T>
BasicTensor<T> L2NormalizeRows(const BasicTensor<T>& x, T eps = T(1e-12));

/// Reverse-mode pass from a scalar. Gradients add into existing buffers.
template <typename T>
void Backward(const BasicTensor<T>& loss);

}  // namespace selfsv

#endif  // SELFSV_TENSOR_H_
