#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "af/errors.hpp"

namespace af {

/// Dense row-major tensor (last index fastest). Layout conventions are NCHW
/// for images and NCTHW for clips. `grad` stays empty until backward needs it.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static Tensor from(std::vector<int> s, std::vector<T> d) {
    Tensor t;
    t.shape = std::move(s);
    if (numel_of(t.shape) != static_cast<int64_t>(d.size()))
      throw ShapeError("tensor data length " + std::to_string(d.size()) +
                       " does not match shape product " +
                       std::to_string(numel_of(t.shape)));
    t.data = std::move(d);
    return t;
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int e : s) {
      if (e <= 0) throw ShapeError("non-positive extent " + std::to_string(e));
      n *= e;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  int dim(int i) const {
    if (i < 0 || i >= rank())
      throw ShapeError("dimension index " + std::to_string(i) +
                       " out of range for rank " + std::to_string(rank()));
    return shape[static_cast<size_t>(i)];
  }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }

  bool has_grad() const { return !grad.empty(); }

  bool finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, T fill = T(0)) {
  return std::make_shared<Tensor<T>>(std::move(shape), fill);
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int> shape, std::vector<T> data) {
  return std::make_shared<Tensor<T>>(Tensor<T>::from(std::move(shape), std::move(data)));
}

/// Creates a leaf whose gradient will be populated by Tape::backward.
template <typename T>
TensorPtr<T> make_leaf(std::vector<int> shape, std::vector<T> data) {
  auto t = make_tensor<T>(std::move(shape), std::move(data));
  t->requires_grad = true;
  return t;
}

/// Records one backward rule per executed operation, in execution order.
/// New nodes only ever read tensors produced by earlier nodes or leaves, so
/// the reverse sweep in backward() visits each node exactly once and sees
/// fully accumulated output gradients.
///
/// A tape constructed with recording=false computes forward values only;
/// useful for evaluation where gradients are never needed.
template <typename T>
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool recording) : recording_(recording) {}

  bool recording() const { return recording_; }

  void record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
  }

  size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1, runs every rule in reverse order, then
  /// discards the tape. `loss` must be a scalar reachable from the tape.
  void backward(const TensorPtr<T>& loss) {
    if (loss->numel() != 1)
      throw ShapeError("backward requires a scalar loss, got " +
                       std::to_string(loss->numel()) + " elements");
    if (!loss->requires_grad)
      throw Error("backward called on a tensor that is not connected to the tape");
    loss->ensure_grad();
    loss->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
  bool recording_ = true;
};

}  // namespace af
