#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "sc/error.hpp"

namespace sc {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // allocated iff requires_grad
  bool requires_grad = false;
};
}  // namespace detail

// Dense n-dimensional float32 tensor with value semantics over a shared
// buffer. Written once by its producing op; gradients live in a parallel
// buffer filled during Tape::backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const;
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  float* data() { return impl_->data.data(); }
  const float* data() const { return impl_->data.data(); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool rg);
  float* grad();
  const float* grad() const;
  void zero_grad();

  // scalar convenience
  float value() const;

  // element access for tests / oracles (row-major)
  float& at(std::initializer_list<int> idx);
  float at(std::initializer_list<int> idx) const;

  // deep copy of values (fresh buffer, no grad history)
  Tensor clone() const;

  bool same_object(const Tensor& other) const { return impl_ == other.impl_; }
  const void* id() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
  friend class Tape;
};

// Throws NumericError naming `what` if any value is NaN/Inf.
void check_finite(const float* values, int64_t n, const char* what);
void check_finite(const Tensor& t, const char* what);

// Ordered record of executed ops. Backward zeroes the gradients of every
// tracked tensor, seeds the root with 1 and replays the pull closures in
// reverse execution order; a tensor consumed by k ops accumulates k
// contributions via +=.
class Tape {
 public:
  // `receivers`: the requires_grad tensors this op writes gradients into.
  // Their buffers are finite-checked after `pull` runs.
  void record(const char* name, std::vector<Tensor> receivers, std::function<void()> pull);

  void backward(const Tensor& root);

  size_t size() const { return steps_.size(); }
  void clear();

 private:
  void track(const Tensor& t);

  struct Step {
    const char* name;
    std::vector<Tensor> receivers;
    std::function<void()> pull;
  };
  std::vector<Step> steps_;
  std::vector<Tensor> tracked_;
};

// True when the op should record: a tape is present and any input needs grad.
bool wants_grad(const Tape* tape, std::initializer_list<const Tensor*> inputs);

}  // namespace sc
