#include "sc/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sc {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  int64_t n = shape_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<size_t>(n), 0.0f);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.impl_->data) v = value;
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values, bool requires_grad) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw ShapeError("from_vector: shape " + shape_str(shape) + " implies " + std::to_string(n) +
                     " values, got " + std::to_string(values.size()));
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(values);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_vector({}, {value}, requires_grad);
}

int Tensor::dim(int i) const {
  if (i < 0 || i >= rank()) throw ShapeError("dim index " + std::to_string(i) + " out of rank " + std::to_string(rank()));
  return impl_->shape[static_cast<size_t>(i)];
}

void Tensor::set_requires_grad(bool rg) {
  impl_->requires_grad = rg;
  if (rg && impl_->grad.size() != impl_->data.size())
    impl_->grad.assign(impl_->data.size(), 0.0f);
  if (!rg) impl_->grad.clear();
}

float* Tensor::grad() {
  if (!requires_grad()) throw Error("grad() on tensor without requires_grad");
  return impl_->grad.data();
}

const float* Tensor::grad() const {
  if (!requires_grad()) throw Error("grad() on tensor without requires_grad");
  return impl_->grad.data();
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::value() const {
  if (numel() != 1) throw ShapeError("value() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

static size_t flat_index(const Shape& shape, std::initializer_list<int> idx) {
  if (idx.size() != shape.size()) throw ShapeError("index rank mismatch");
  size_t flat = 0;
  size_t axis = 0;
  for (int i : idx) {
    if (i < 0 || i >= shape[axis]) throw ShapeError("index out of range on axis " + std::to_string(axis));
    flat = flat * static_cast<size_t>(shape[axis]) + static_cast<size_t>(i);
    ++axis;
  }
  return flat;
}

float& Tensor::at(std::initializer_list<int> idx) { return impl_->data[flat_index(shape(), idx)]; }
float Tensor::at(std::initializer_list<int> idx) const { return impl_->data[flat_index(shape(), idx)]; }

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.set_requires_grad(impl_->requires_grad);
  return t;
}

void check_finite(const float* values, int64_t n, const char* what) {
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(values[i]))
      throw NumericError(std::string(what) + ": non-finite value " + std::to_string(values[i]) +
                         " at flat index " + std::to_string(i));
  }
}

void check_finite(const Tensor& t, const char* what) { check_finite(t.data(), t.numel(), what); }

void Tape::track(const Tensor& t) {
  if (t.requires_grad()) tracked_.push_back(t);
}

void Tape::record(const char* name, std::vector<Tensor> receivers, std::function<void()> pull) {
  for (const auto& r : receivers) track(r);
  steps_.push_back(Step{name, std::move(receivers), std::move(pull)});
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    throw ShapeError("backward: root must be a defined scalar tensor");
  if (!root.requires_grad())
    throw Error("backward: root does not require grad (nothing recorded reaches it)");

  std::unordered_set<const void*> zeroed;
  for (auto& t : tracked_) {
    if (zeroed.insert(t.id()).second) const_cast<Tensor&>(t).zero_grad();
  }
  Tensor r = root;
  r.zero_grad();
  r.grad()[0] = 1.0f;

  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    it->pull();
    for (const auto& rec : it->receivers) {
      const float* g = rec.grad();
      const int64_t n = rec.numel();
      for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(g[i]))
          throw NumericError(std::string("backward ") + it->name + ": non-finite gradient " +
                             std::to_string(g[i]) + " at flat index " + std::to_string(i));
      }
    }
  }
}

void Tape::clear() {
  steps_.clear();
  tracked_.clear();
}

bool wants_grad(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t && t->requires_grad()) return true;
  return false;
}

}  // namespace sc
