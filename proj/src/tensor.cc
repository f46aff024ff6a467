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

#include "selfsv/tensor.h"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace selfsv {

namespace {

thread_local bool g_grad_enabled = true;

// Row-major C = alpha * op(A) * op(B) + beta * C.
void Gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const float* a, const float* b, float* c,
          float beta) {
  if (m == 0 || n == 0) return;
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              trans_a ? static_cast<int>(m) : static_cast<int>(k), b,
              trans_b ? static_cast<int>(k) : static_cast<int>(n), beta, c,
              static_cast<int>(n));
}

void Gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const double* a, const double* b, double* c,
          double beta) {
  if (m == 0 || n == 0) return;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a,
              trans_a ? static_cast<int>(m) : static_cast<int>(k), b,
              trans_b ? static_cast<int>(k) : static_cast<int>(n), beta, c,
              static_cast<int>(n));
}

template <typename T>
bool Tracks(const std::shared_ptr<Node<T>>& n) {
  return n && n->requires_grad;
}

void Require2d(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " +
                     ShapeToString(s));
  }
}

struct Dims2 {
  std::size_t rows;
  std::size_t cols;
};

Dims2 As2d(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  return {1, NumElements(s)};
}

template <typename T, typename Forward, typename Partials>
BasicTensor<T> Broadcast(const char* op, const BasicTensor<T>& a,
                         const BasicTensor<T>& b, Forward forward,
                         Partials partials) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape out_shape;
  Dims2 da = As2d(sa), db = As2d(sb);
  Dims2 out;
  if (sa == sb) {
    out_shape = sa;
    da = db = out = {1, a.numel()};
  } else {
    if (sa.size() > 2 || sb.size() > 2) {
      throw ShapeError(std::string(op) + ": cannot broadcast " +
                       ShapeToString(sa) + " with " + ShapeToString(sb));
    }
    auto pick = [&](std::size_t x, std::size_t y) {
      if (x == y || y == 1) return x;
      if (x == 1) return y;
      throw ShapeError(std::string(op) + ": cannot broadcast " +
                       ShapeToString(sa) + " with " + ShapeToString(sb));
    };
    out = {pick(da.rows, db.rows), pick(da.cols, db.cols)};
    out_shape = {out.rows, out.cols};
  }
  const std::size_t rs_a = da.rows == 1 ? 0 : da.cols;
  const std::size_t cs_a = da.cols == 1 ? 0 : 1;
  const std::size_t rs_b = db.rows == 1 ? 0 : db.cols;
  const std::size_t cs_b = db.cols == 1 ? 0 : 1;

  const auto& xa = a.values();
  const auto& xb = b.values();
  std::vector<T> data(out.rows * out.cols);
  for (std::size_t i = 0; i < out.rows; ++i) {
    for (std::size_t j = 0; j < out.cols; ++j) {
      data[i * out.cols + j] = forward(xa[i * rs_a + j * cs_a],
                                       xb[i * rs_b + j * cs_b]);
    }
  }
  return MakeOp<T>(
      op, std::move(out_shape), std::move(data), {a, b},
      [=](Node<T>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        const bool ga = pa->requires_grad, gb = pb->requires_grad;
        T* grad_a = ga ? pa->GradBuffer().data() : nullptr;
        T* grad_b = gb ? pb->GradBuffer().data() : nullptr;
        for (std::size_t i = 0; i < out.rows; ++i) {
          for (std::size_t j = 0; j < out.cols; ++j) {
            const std::size_t ia = i * rs_a + j * cs_a;
            const std::size_t ib = i * rs_b + j * cs_b;
            const T g = self.grad[i * out.cols + j];
            T d_a, d_b;
            partials(pa->data[ia], pb->data[ib], &d_a, &d_b);
            if (ga) grad_a[ia] += g * d_a;
            if (gb) grad_b[ib] += g * d_b;
          }
        }
      });
}

template <typename T, typename Forward, typename Derivative>
BasicTensor<T> Unary(const char* op, const BasicTensor<T>& x, Forward forward,
                     Derivative derivative) {
  std::vector<T> data(x.numel());
  const auto& in = x.values();
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = forward(in[i]);
  return MakeOp<T>(op, x.shape(), std::move(data), {x}, [=](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->GradBuffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * derivative(p->data[i], self.data[i]);
    }
  });
}

}  // namespace

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool GradEnabled() { return g_grad_enabled; }

template <typename T>
BasicTensor<T> BasicTensor<T>::Zeros(Shape shape, bool requires_grad) {
  return Full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::Full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive");
  }
  node->data.assign(NumElements(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::FromData(Shape shape, std::vector<T> data,
                                        bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive");
  }
  if (NumElements(shape) != data.size()) {
    throw ShapeError("shape " + ShapeToString(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::Scalar(T value, bool requires_grad) {
  return FromData({1}, {value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + ShapeToString(shape()));
  }
  return node_->data[0];
}

template <typename T>
T BasicTensor<T>::at(std::size_t row, std::size_t col) const {
  Require2d(shape(), "at");
  return node_->data.at(row * node_->shape[1] + col);
}

template <typename T>
bool BasicTensor<T>::AllFinite() const {
  return std::all_of(node_->data.begin(), node_->data.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
BasicTensor<T> BasicTensor<T>::Detach() const {
  return FromData(shape(), node_->data, false);
}

template <typename T>
BasicTensor<T> MakeOp(const char* op, Shape shape, std::vector<T> data,
                      std::vector<BasicTensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) track = track || Tracks(p.node());
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward);
  }
  return BasicTensor<T>(std::move(node));
}

template <typename T>
BasicTensor<T> Matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " +
                     ShapeToString(a.shape()) + " x " +
                     ShapeToString(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> data(m * n);
  Gemm(false, false, m, n, k, a.values().data(), b.values().data(),
       data.data(), T(0));
  return MakeOp<T>("matmul", {m, n}, std::move(data), {a, b},
                   [m, k, n](Node<T>& self) {
                     auto& pa = self.parents[0];
                     auto& pb = self.parents[1];
                     if (pa->requires_grad) {
                       Gemm(false, true, m, k, n, self.grad.data(),
                            pb->data.data(), pa->GradBuffer().data(), T(1));
                     }
                     if (pb->requires_grad) {
                       Gemm(true, false, k, n, m, pa->data.data(),
                            self.grad.data(), pb->GradBuffer().data(), T(1));
                     }
                   });
}

template <typename T>
BasicTensor<T> Transpose(const BasicTensor<T>& a) {
  Require2d(a.shape(), "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<T> data(r * c);
  const auto& x = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) data[j * r + i] = x[i * c + j];
  return MakeOp<T>("transpose", {c, r}, std::move(data), {a},
                   [r, c](Node<T>& self) {
                     auto& g = self.parents[0]->GradBuffer();
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < c; ++j)
                         g[i * c + j] += self.grad[j * r + i];
                   });
}

template <typename T>
BasicTensor<T> Reshape(const BasicTensor<T>& a, Shape shape) {
  if (NumElements(shape) != a.numel()) {
    throw ShapeError("reshape: " + ShapeToString(a.shape()) + " -> " +
                     ShapeToString(shape));
  }
  return MakeOp<T>("reshape", std::move(shape), a.values(), {a},
                   [](Node<T>& self) {
                     auto& g = self.parents[0]->GradBuffer();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += self.grad[i];
                   });
}

template <typename T>
BasicTensor<T> Add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return Broadcast<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T* da, T* db) { *da = T(1), *db = T(1); });
}

template <typename T>
BasicTensor<T> Sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return Broadcast<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T* da, T* db) { *da = T(1), *db = T(-1); });
}

template <typename T>
BasicTensor<T> Mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return Broadcast<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T* da, T* db) { *da = y, *db = x; });
}

template <typename T>
BasicTensor<T> Div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return Broadcast<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T x, T y, T* da, T* db) { *da = T(1) / y, *db = -x / (y * y); });
}

template <typename T>
BasicTensor<T> Scale(const BasicTensor<T>& a, T factor) {
  return Unary<T>(
      "scale", a, [factor](T x) { return x * factor; },
      [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> AddScalar(const BasicTensor<T>& a, T value) {
  return Unary<T>(
      "add_scalar", a, [value](T x) { return x + value; },
      [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> Gelu(const BasicTensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  return Unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * kInvSqrt2)) +
               v * kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
BasicTensor<T> Relu(const BasicTensor<T>& x) {
  return Unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> Sigmoid(const BasicTensor<T>& x) {
  return Unary<T>(
      "sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> Tanh(const BasicTensor<T>& x) {
  return Unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> Sqrt(const BasicTensor<T>& x) {
  return Unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return T(0.5) / y; });
}

template <typename T>
BasicTensor<T> Swish(const BasicTensor<T>& x) {
  return Unary<T>(
      "swish", x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s + v * s * (T(1) - s);
      });
}

template <typename T>
BasicTensor<T> Concat(const std::vector<BasicTensor<T>>& parts,
                      std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const auto& p : parts) Require2d(p.shape(), "concat");
  const std::size_t other = parts[0].dim(1 - axis);
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.dim(1 - axis) != other) {
      throw ShapeError("concat: mismatched shapes " +
                       ShapeToString(parts[0].shape()) + " and " +
                       ShapeToString(p.shape()));
    }
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  const std::size_t rows = axis == 0 ? total : other;
  const std::size_t cols = axis == 0 ? other : total;
  std::vector<T> data(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& x = p.values();
    const std::size_t pr = p.dim(0), pc = p.dim(1);
    for (std::size_t i = 0; i < pr; ++i) {
      const std::size_t dst = axis == 0 ? (offset + i) * cols : i * cols + offset;
      std::copy_n(x.begin() + i * pc, pc, data.begin() + dst);
    }
    offset += p.dim(axis);
  }
  return MakeOp<T>(
      "concat", {rows, cols}, std::move(data), parts,
      [axis, cols, extents](Node<T>& self) {
        std::size_t offset = 0;
        for (std::size_t n = 0; n < self.parents.size(); ++n) {
          auto& p = self.parents[n];
          if (p->requires_grad) {
            auto& g = p->GradBuffer();
            const std::size_t pr = p->shape[0], pc = p->shape[1];
            for (std::size_t i = 0; i < pr; ++i) {
              const std::size_t src =
                  axis == 0 ? (offset + i) * cols : i * cols + offset;
              for (std::size_t j = 0; j < pc; ++j)
                g[i * pc + j] += self.grad[src + j];
            }
          }
          offset += extents[n];
        }
      });
}

template <typename T>
BasicTensor<T> Slice(const BasicTensor<T>& a, std::size_t axis,
                     std::size_t start, std::size_t length) {
  Require2d(a.shape(), "slice");
  if (axis > 1 || length == 0 || start + length > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") on axis " +
                     std::to_string(axis) + " of " + ShapeToString(a.shape()));
  }
  const std::size_t r = a.dim(0), c = a.dim(1);
  const std::size_t rows = axis == 0 ? length : r;
  const std::size_t cols = axis == 0 ? c : length;
  const std::size_t r0 = axis == 0 ? start : 0;
  const std::size_t c0 = axis == 0 ? 0 : start;
  std::vector<T> data(rows * cols);
  const auto& x = a.values();
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(x.begin() + (r0 + i) * c + c0, cols, data.begin() + i * cols);
  return MakeOp<T>("slice", {rows, cols}, std::move(data), {a},
                   [=](Node<T>& self) {
                     auto& g = self.parents[0]->GradBuffer();
                     for (std::size_t i = 0; i < rows; ++i)
                       for (std::size_t j = 0; j < cols; ++j)
                         g[(r0 + i) * c + c0 + j] += self.grad[i * cols + j];
                   });
}

template <typename T>
BasicTensor<T> IndexRows(const BasicTensor<T>& table,
                         std::span<const std::size_t> rows) {
  Require2d(table.shape(), "index_rows");
  if (rows.empty()) throw ShapeError("index_rows: empty index list");
  const std::size_t n = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<T> data(idx.size() * d);
  const auto& x = table.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) {
      throw std::out_of_range("index_rows: row " + std::to_string(idx[i]) +
                              " out of range for " +
                              ShapeToString(table.shape()));
    }
    std::copy_n(x.begin() + idx[i] * d, d, data.begin() + i * d);
  }
  return MakeOp<T>("index_rows", {idx.size(), d}, std::move(data), {table},
                   [idx, d](Node<T>& self) {
                     auto& g = self.parents[0]->GradBuffer();
                     for (std::size_t i = 0; i < idx.size(); ++i)
                       for (std::size_t j = 0; j < d; ++j)
                         g[idx[i] * d + j] += self.grad[i * d + j];
                   });
}

template <typename T>
BasicTensor<T> Sum(const BasicTensor<T>& a) {
  T total = T(0);
  for (T v : a.values()) total += v;
  return MakeOp<T>("sum", {1}, {total}, {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->GradBuffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> Mean(const BasicTensor<T>& a) {
  return Scale(Sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> SumAxis(const BasicTensor<T>& a, std::size_t axis) {
  Require2d(a.shape(), "sum_axis");
  if (axis > 1) throw ShapeError("sum_axis: axis must be 0 or 1");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto& x = a.values();
  Shape shape = axis == 0 ? Shape{1, c} : Shape{r, 1};
  std::vector<T> data(axis == 0 ? c : r, T(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      data[axis == 0 ? j : i] += x[i * c + j];
  return MakeOp<T>("sum_axis", std::move(shape), std::move(data), {a},
                   [axis, r, c](Node<T>& self) {
                     auto& g = self.parents[0]->GradBuffer();
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < c; ++j)
                         g[i * c + j] += self.grad[axis == 0 ? j : i];
                   });
}

template <typename T>
BasicTensor<T> MeanAxis(const BasicTensor<T>& a, std::size_t axis) {
  Require2d(a.shape(), "mean_axis");
  return Scale(SumAxis(a, axis), T(1) / static_cast<T>(a.dim(axis)));
}

template <typename T>
BasicTensor<T> Softmax(const BasicTensor<T>& x) {
  if (x.ndim() == 0 || x.shape().back() == 0) {
    throw ShapeError("softmax: empty last axis");
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  const auto& in = x.values();
  std::vector<T> data(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = in.data() + r * d;
    T* dst = data.data() + r * d;
    const T peak = *std::max_element(src, src + d);
    T total = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      dst[j] = std::exp(src[j] - peak);
      total += dst[j];
    }
    for (std::size_t j = 0; j < d; ++j) dst[j] /= total;
  }
  return MakeOp<T>("softmax", x.shape(), std::move(data), {x},
                   [rows, d](Node<T>& self) {
                     auto& g = self.parents[0]->GradBuffer();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* y = self.data.data() + r * d;
                       const T* gy = self.grad.data() + r * d;
                       T dot = T(0);
                       for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
                       for (std::size_t j = 0; j < d; ++j)
                         g[r * d + j] += y[j] * (gy[j] - dot);
                     }
                   });
}

template <typename T>
BasicTensor<T> LayerNorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta, T eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: affine parameters " +
                     ShapeToString(gamma.shape()) + "/" +
                     ShapeToString(beta.shape()) + " do not match " +
                     ShapeToString(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& in = x.values();
  const auto& gm = gamma.values();
  const auto& bt = beta.values();
  std::vector<T> data(in.size());
  std::vector<T> normalized(in.size());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = in.data() + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += src[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (src[j] - mean) * (src[j] - mean);
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + eps);
    inv_std[r] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = (src[j] - mean) * rstd;
      normalized[r * d + j] = xhat;
      data[r * d + j] = xhat * gm[j] + bt[j];
    }
  }
  return MakeOp<T>(
      "layer_norm", x.shape(), std::move(data), {x, gamma, beta},
      [rows, d, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const auto& gm = pg->data;
        if (pg->requires_grad) {
          auto& g = pg->GradBuffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j)
              g[j] += self.grad[r * d + j] * normalized[r * d + j];
        }
        if (pb->requires_grad) {
          auto& g = pb->GradBuffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
        }
        if (px->requires_grad) {
          auto& g = px->GradBuffer();
          const T inv_d = T(1) / static_cast<T>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const T* gy = self.grad.data() + r * d;
            const T* xh = normalized.data() + r * d;
            T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxhat = gy[j] * gm[j];
              mean_dxhat += dxhat;
              mean_dxhat_xhat += dxhat * xh[j];
            }
            mean_dxhat *= inv_d;
            mean_dxhat_xhat *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const T dxhat = gy[j] * gm[j];
              g[r * d + j] +=
                  inv_std[r] * (dxhat - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

std::size_t Conv1dOutputLength(std::size_t input_length, std::size_t kernel,
                               const Conv1dOptions& opts) {
  const std::size_t span = opts.dilation * (kernel - 1) + 1;
  const std::size_t padded = input_length + 2 * opts.padding;
  if (padded < span) return 0;
  return (padded - span) / opts.stride + 1;
}

template <typename T>
BasicTensor<T> Conv1d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const Conv1dOptions& opts) {
  Require2d(x.shape(), "conv1d");
  if (weight.ndim() != 3) {
    throw ShapeError("conv1d: weight must be [Cout, Cin/groups, K], got " +
                     ShapeToString(weight.shape()));
  }
  if (opts.stride == 0 || opts.dilation == 0 || opts.groups == 0) {
    throw std::invalid_argument("conv1d: stride, dilation, groups must be >= 1");
  }
  const std::size_t t_in = x.dim(0), c_in = x.dim(1);
  const std::size_t c_out = weight.dim(0), k = weight.dim(2);
  const std::size_t groups = opts.groups;
  if (c_in % groups || c_out % groups || weight.dim(1) != c_in / groups) {
    throw ShapeError("conv1d: weight " + ShapeToString(weight.shape()) +
                     " incompatible with input " + ShapeToString(x.shape()) +
                     " and groups=" + std::to_string(groups));
  }
  if (bias.defined() && bias.numel() != c_out) {
    throw ShapeError("conv1d: bias " + ShapeToString(bias.shape()) +
                     " does not match Cout=" + std::to_string(c_out));
  }
  const std::size_t t_out = Conv1dOutputLength(t_in, k, opts);
  if (t_out == 0) {
    throw ShapeError("conv1d: input of length " + std::to_string(t_in) +
                     " is shorter than the kernel span");
  }
  const std::size_t stride = opts.stride, pad = opts.padding,
                    dil = opts.dilation;
  // Input index for output frame t and tap j, or -1 when it falls in padding.
  auto source = [=](std::size_t t, std::size_t j) -> long {
    const long pos = static_cast<long>(t * stride + j * dil) -
                     static_cast<long>(pad);
    return (pos < 0 || pos >= static_cast<long>(t_in)) ? -1 : pos;
  };

  const auto& xin = x.values();
  const auto& w = weight.values();
  std::vector<T> data(t_out * c_out, T(0));
  std::vector<BasicTensor<T>> parents = {x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) parents.push_back(bias);

  if (groups == 1) {
    const std::size_t cols = c_in * k;
    std::vector<T> patches(t_out * cols, T(0));
    for (std::size_t t = 0; t < t_out; ++t) {
      for (std::size_t j = 0; j < k; ++j) {
        const long s = source(t, j);
        if (s < 0) continue;
        for (std::size_t c = 0; c < c_in; ++c)
          patches[t * cols + c * k + j] = xin[s * c_in + c];
      }
    }
    Gemm(false, true, t_out, c_out, cols, patches.data(), w.data(),
         data.data(), T(0));
    if (has_bias) {
      const auto& b = bias.values();
      for (std::size_t t = 0; t < t_out; ++t)
        for (std::size_t o = 0; o < c_out; ++o) data[t * c_out + o] += b[o];
    }
    return MakeOp<T>(
        "conv1d", {t_out, c_out}, std::move(data), std::move(parents),
        [=, patches = std::move(patches)](Node<T>& self) {
          auto& px = self.parents[0];
          auto& pw = self.parents[1];
          if (pw->requires_grad) {
            Gemm(true, false, c_out, cols, t_out, self.grad.data(),
                 patches.data(), pw->GradBuffer().data(), T(1));
          }
          if (has_bias && self.parents[2]->requires_grad) {
            auto& gb = self.parents[2]->GradBuffer();
            for (std::size_t t = 0; t < t_out; ++t)
              for (std::size_t o = 0; o < c_out; ++o)
                gb[o] += self.grad[t * c_out + o];
          }
          if (px->requires_grad) {
            std::vector<T> dpatches(t_out * cols, T(0));
            Gemm(false, false, t_out, cols, c_out, self.grad.data(),
                 pw->data.data(), dpatches.data(), T(0));
            auto& gx = px->GradBuffer();
            for (std::size_t t = 0; t < t_out; ++t) {
              for (std::size_t j = 0; j < k; ++j) {
                const long s = source(t, j);
                if (s < 0) continue;
                for (std::size_t c = 0; c < c_in; ++c)
                  gx[s * c_in + c] += dpatches[t * cols + c * k + j];
              }
            }
          }
        });
  }

  const std::size_t in_per_group = c_in / groups;
  const std::size_t out_per_group = c_out / groups;
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t o = 0; o < c_out; ++o) {
      const std::size_t g = o / out_per_group;
      T acc = has_bias ? bias.values()[o] : T(0);
      for (std::size_t ci = 0; ci < in_per_group; ++ci) {
        const std::size_t c = g * in_per_group + ci;
        for (std::size_t j = 0; j < k; ++j) {
          const long s = source(t, j);
          if (s >= 0) acc += w[(o * in_per_group + ci) * k + j] * xin[s * c_in + c];
        }
      }
      data[t * c_out + o] = acc;
    }
  }
  return MakeOp<T>(
      "conv1d_grouped", {t_out, c_out}, std::move(data), std::move(parents),
      [=](Node<T>& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        const bool gx_on = px->requires_grad, gw_on = pw->requires_grad;
        T* gx = gx_on ? px->GradBuffer().data() : nullptr;
        T* gw = gw_on ? pw->GradBuffer().data() : nullptr;
        T* gb = (has_bias && self.parents[2]->requires_grad)
                    ? self.parents[2]->GradBuffer().data()
                    : nullptr;
        const auto& xv = px->data;
        const auto& wv = pw->data;
        for (std::size_t t = 0; t < t_out; ++t) {
          for (std::size_t o = 0; o < c_out; ++o) {
            const T g_out = self.grad[t * c_out + o];
            if (gb) gb[o] += g_out;
            const std::size_t g = o / out_per_group;
            for (std::size_t ci = 0; ci < in_per_group; ++ci) {
              const std::size_t c = g * in_per_group + ci;
              for (std::size_t j = 0; j < k; ++j) {
                const long s = source(t, j);
                if (s < 0) continue;
                const std::size_t wi = (o * in_per_group + ci) * k + j;
                if (gw) gw[wi] += g_out * xv[s * c_in + c];
                if (gx) gx[s * c_in + c] += g_out * wv[wi];
              }
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> CrossEntropy(const BasicTensor<T>& logits,
                            std::span<const int> labels) {
  Require2d(logits.shape(), "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  std::vector<int> target(labels.begin(), labels.end());
  for (int y : target) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) +
                              " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto& z = logits.values();
  std::vector<T> probs(n * k);
  T total = T(0);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = z.data() + r * k;
    const T peak = *std::max_element(row, row + k);
    T denom = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      probs[r * k + j] = std::exp(row[j] - peak);
      denom += probs[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] /= denom;
    total += std::log(denom) + peak - row[target[r]];
  }
  const T loss = total / static_cast<T>(n);
  return MakeOp<T>("cross_entropy", {1}, {loss}, {logits},
                   [n, k, target = std::move(target),
                    probs = std::move(probs)](Node<T>& self) {
                     auto& g = self.parents[0]->GradBuffer();
                     const T scale = self.grad[0] / static_cast<T>(n);
                     for (std::size_t r = 0; r < n; ++r) {
                       for (std::size_t j = 0; j < k; ++j) {
                         const T onehot =
                             static_cast<int>(j) == target[r] ? T(1) : T(0);
                         g[r * k + j] += scale * (probs[r * k + j] - onehot);
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> Cosine(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.numel() != b.numel()) {
    throw ShapeError("cosine: " + ShapeToString(a.shape()) + " vs " +
                     ShapeToString(b.shape()));
  }
  const auto& x = a.values();
  const auto& y = b.values();
  T dot = T(0), nx = T(0), ny = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == T(0) || ny == T(0)) {
    throw std::invalid_argument("cosine: zero vector");
  }
  nx = std::sqrt(nx);
  ny = std::sqrt(ny);
  const T cos = dot / (nx * ny);
  return MakeOp<T>("cosine", {1}, {cos}, {a, b},
                   [nx, ny, cos](Node<T>& self) {
                     auto& pa = self.parents[0];
                     auto& pb = self.parents[1];
                     const T g = self.grad[0];
                     if (pa->requires_grad) {
                       auto& ga = pa->GradBuffer();
                       for (std::size_t i = 0; i < ga.size(); ++i)
                         ga[i] += g * (pb->data[i] / (nx * ny) -
                                       cos * pa->data[i] / (nx * nx));
                     }
                     if (pb->requires_grad) {
                       auto& gb = pb->GradBuffer();
                       for (std::size_t i = 0; i < gb.size(); ++i)
                         gb[i] += g * (pa->data[i] / (nx * ny) -
                                       cos * pb->data[i] / (ny * ny));
                     }
                   });
}

template <typename T>
BasicTensor<T> L2NormalizeRows(const BasicTensor<T>& x, T eps) {
  Require2d(x.shape(), "l2_normalize_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto& in = x.values();
  std::vector<T> data(in.size());
  std::vector<T> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    T ss = T(0);
    for (std::size_t j = 0; j < c; ++j) ss += in[i * c + j] * in[i * c + j];
    norms[i] = std::max(std::sqrt(ss), eps);
    for (std::size_t j = 0; j < c; ++j) data[i * c + j] = in[i * c + j] / norms[i];
  }
  return MakeOp<T>("l2_normalize_rows", {r, c}, std::move(data), {x},
                   [r, c, norms = std::move(norms)](Node<T>& self) {
                     auto& g = self.parents[0]->GradBuffer();
                     for (std::size_t i = 0; i < r; ++i) {
                       const T* y = self.data.data() + i * c;
                       const T* gy = self.grad.data() + i * c;
                       T dot = T(0);
                       for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
                       for (std::size_t j = 0; j < c; ++j)
                         g[i * c + j] += (gy[j] - y[j] * dot) / norms[i];
                     }
                   });
}

template <typename T>
void Backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? ShapeToString(loss.shape())
                                     : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a valid reverse-topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->GradBuffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

#define SELFSV_INSTANTIATE(T)                                                  \
  template class BasicTensor<T>;                                               \
  template BasicTensor<T> MakeOp<T>(const char*, Shape, std::vector<T>,        \
                                    std::vector<BasicTensor<T>>,               \
                                    std::function<void(Node<T>&)>);            \
  template BasicTensor<T> Matmul(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> Transpose(const BasicTensor<T>&);                    \
  template BasicTensor<T> Reshape(const BasicTensor<T>&, Shape);               \
  template BasicTensor<T> Add(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> Sub(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> Mul(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> Div(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> Scale(const BasicTensor<T>&, T);                     \
  template BasicTensor<T> AddScalar(const BasicTensor<T>&, T);                 \
  template BasicTensor<T> Gelu(const BasicTensor<T>&);                         \
  template BasicTensor<T> Relu(const BasicTensor<T>&);                         \
  template BasicTensor<T> Sigmoid(const BasicTensor<T>&);                      \
  template BasicTensor<T> Tanh(const BasicTensor<T>&);                         \
  template BasicTensor<T> Sqrt(const BasicTensor<T>&);                         \
  template BasicTensor<T> Swish(const BasicTensor<T>&);                        \
  template BasicTensor<T> Concat(const std::vector<BasicTensor<T>>&,           \
                                 std::size_t);                                 \
  template BasicTensor<T> Slice(const BasicTensor<T>&, std::size_t,            \
                                std::size_t, std::size_t);                     \
  template BasicTensor<T> IndexRows(const BasicTensor<T>&,                     \
                                    std::span<const std::size_t>);             \
  template BasicTensor<T> Sum(const BasicTensor<T>&);                          \
  template BasicTensor<T> Mean(const BasicTensor<T>&);                         \
  template BasicTensor<T> SumAxis(const BasicTensor<T>&, std::size_t);         \
  template BasicTensor<T> MeanAxis(const BasicTensor<T>&, std::size_t);        \
  template BasicTensor<T> Softmax(const BasicTensor<T>&);                      \
  template BasicTensor<T> LayerNorm(const BasicTensor<T>&,                     \
                                    const BasicTensor<T>&,                     \
                                    const BasicTensor<T>&, T);                 \
  template BasicTensor<T> Conv1d(const BasicTensor<T>&, const BasicTensor<T>&, \
                                 const BasicTensor<T>&, const Conv1dOptions&); \
  template BasicTensor<T> CrossEntropy(const BasicTensor<T>&,                  \
                                       std::span<const int>);                  \
  template BasicTensor<T> Cosine(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> L2NormalizeRows(const BasicTensor<T>&, T);           \
  template void Backward(const BasicTensor<T>&);

SELFSV_INSTANTIATE(float)
SELFSV_INSTANTIATE(double)

#undef SELFSV_INSTANTIATE

}  // namespace selfsv
