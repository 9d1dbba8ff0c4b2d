#include "pcam/tensor.hpp"

#include <atomic>
#include <sstream>

namespace pcam {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

thread_local GradTape* g_active_tape = nullptr;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->size = shape_numel(impl_->shape);
  impl_->data = std::make_shared<std::vector<double>>(impl_->size, fill);
  impl_->requires_grad = requires_grad;
  impl_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->size = values.size();
  impl_->data = std::make_shared<std::vector<double>>(std::move(values));
  impl_->requires_grad = requires_grad;
  impl_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (!impl_ || impl_->size != 1) {
    throw ContractError("item() requires a one-element tensor");
  }
  return (*impl_->data)[0];
}

Tensor Tensor::view_as(Shape new_shape) const {
  if (shape_numel(new_shape) != impl_->size) {
    throw DimensionError("cannot view " + shape_str(impl_->shape) + " as " +
                         shape_str(new_shape));
  }
  Tensor out;
  out.impl_ = std::make_shared<Impl>();
  out.impl_->shape = std::move(new_shape);
  out.impl_->size = impl_->size;
  out.impl_->data = impl_->data;
  out.impl_->requires_grad = impl_->requires_grad;
  out.impl_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return out;
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(impl_->shape, *impl_->data, requires_grad);
}

GradTape::GradTape() {
  previous_ = g_active_tape;
  g_active_tape = this;
}

GradTape::~GradTape() {
  if (g_active_tape == this) g_active_tape = previous_;
}

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(TapeNode node) { nodes_.push_back(std::move(node)); }

void GradTape::backward(const Tensor& loss) {
  if (consumed_) {
    throw ContractError("backward() called twice on the same tape without reset()");
  }
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  consumed_ = true;

  // Recording stays off while gradient closures run.
  NoGradGuard no_grad;

  gradients_.clear();
  gradients_.emplace(loss.id(), Tensor(Shape{1}, 1.0));

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const TapeNode& node = *it;
    auto found = gradients_.find(node.output_id);
    if (found == gradients_.end()) continue;
    const Tensor grad_out = found->second;
    std::vector<Tensor> input_grads = node.backward(grad_out);
    if (input_grads.size() != node.inputs.size()) {
      throw ContractError(std::string("op '") + node.op +
                          "' returned a wrong-arity gradient list");
    }
    for (std::size_t i = 0; i < input_grads.size(); ++i) {
      if (!input_grads[i].defined()) continue;
      const Tensor& input = node.inputs[i];
      if (input_grads[i].size() != input.size()) {
        throw DimensionError(std::string("op '") + node.op +
                             "' produced a gradient of mismatched size");
      }
      auto slot = gradients_.find(input.id());
      if (slot == gradients_.end()) {
        // First contribution: deep copy, so closures may hand back shared
        // tensors (e.g. grad_out itself for both inputs of add).
        gradients_.emplace(input.id(), Tensor(input.shape(), input_grads[i].values()));
      } else {
        std::vector<double>& acc = slot->second.mutable_values();
        const std::vector<double>& add = input_grads[i].values();
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += add[k];
      }
    }
  }
}

const Tensor* GradTape::grad(const Tensor& t) const {
  auto it = gradients_.find(t.id());
  return it == gradients_.end() ? nullptr : &it->second;
}

Tensor GradTape::grad_or_zeros(const Tensor& t) const {
  const Tensor* g = grad(t);
  if (g) return *g;
  return Tensor(t.shape(), 0.0);
}

void GradTape::reset() {
  nodes_.clear();
  gradients_.clear();
  consumed_ = false;
}

NoGradGuard::NoGradGuard() {
  saved_ = g_active_tape;
  g_active_tape = nullptr;
}

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

}  // namespace pcam
