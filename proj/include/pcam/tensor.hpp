#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcam/errors.hpp"

namespace pcam {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense N-dimensional array of 64-bit reals, row-major contiguous.
// Copies are shallow: they share storage and identity. A tensor's shape is
// fixed at construction; reshape() in ops.hpp returns a new view over the
// same storage. Tensors are treated as immutable once they have entered an
// operation; the optimizer mutates leaf parameters in place between
// forward passes only.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->size; }
  std::size_t extent(std::size_t axis) const;
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  std::uint64_t id() const { return impl_->id; }

  const std::vector<double>& values() const { return *impl_->data; }
  // In-place access; reserved for construction and optimizer updates.
  std::vector<double>& mutable_values() { return *impl_->data; }

  double item() const;
  double flat(std::size_t i) const { return (*impl_->data)[i]; }

  // The same data buffer under a different shape (shared storage).
  Tensor view_as(Shape new_shape) const;
  // Deep copy with fresh identity.
  Tensor clone(bool requires_grad = false) const;

  bool same_storage(const Tensor& other) const {
    return impl_ && other.impl_ && impl_->data == other.impl_->data;
  }

 private:
  struct Impl {
    Shape shape;
    std::size_t size = 0;
    std::shared_ptr<std::vector<double>> data;
    bool requires_grad = false;
    std::uint64_t id = 0;
  };

  std::shared_ptr<Impl> impl_;
};

// Row-major flat index helpers for the layouts used throughout: feature
// maps are C x H x W x S and volumes are H x W x S, innermost axis last.
inline std::size_t idx3(std::size_t H, std::size_t W, std::size_t S,
                        std::size_t h, std::size_t w, std::size_t s) {
  (void)H;
  return (h * W + w) * S + s;
}

inline std::size_t idx4(std::size_t C, std::size_t H, std::size_t W,
                        std::size_t S, std::size_t c, std::size_t h,
                        std::size_t w, std::size_t s) {
  (void)C;
  return ((c * H + h) * W + w) * S + s;
}

// One reverse-mode record: the operation, its inputs (kept alive through
// the stored handles) and a closure producing per-input gradients from the
// output gradient.
struct TapeNode {
  const char* op = "";
  std::uint64_t output_id = 0;
  std::vector<Tensor> inputs;
  std::function<std::vector<Tensor>(const Tensor& grad_out)> backward;
};

// Append-only operation record for reverse-mode differentiation. A tape
// activates for the constructing thread and restores the previously active
// tape on destruction; operations record nodes only while a tape is active
// and some input requires a gradient. Distinct tapes on distinct threads
// are independent.
class GradTape {
 public:
  GradTape();
  ~GradTape();

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void record(TapeNode node);
  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and walks the tape in reverse. The loss must
  // be a scalar produced under this tape. Calling backward a second time
  // without reset() is an error.
  void backward(const Tensor& loss);

  // Gradient of a tensor after backward(); nullptr when none was reached.
  const Tensor* grad(const Tensor& t) const;
  Tensor grad_or_zeros(const Tensor& t) const;

  void reset();

 private:
  std::vector<TapeNode> nodes_;
  std::unordered_map<std::uint64_t, Tensor> gradients_;
  bool consumed_ = false;
  GradTape* previous_ = nullptr;
};

// Suspends tape recording for the current thread for the guard's lifetime.
// Used during backward walks and anywhere a plain forward pass is wanted.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();

  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  GradTape* saved_;
};

}  // namespace pcam
