#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace regavae::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float64 array with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage. Use clone() for a
// deep copy. Shapes are 1-D or 2-D throughout this library; a 1-D tensor of
// length n behaves as a 1 x n row where a 2-D view is needed.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Gradient buffers are not part of the tensor's value, so these are const on
  // the handle. mutable_grad() allocates a zero buffer on first use.
  std::span<double> mutable_grad() const;
  void zero_grad() const;
  void clear_grad() const;

  // Deep copy of data only; the result does not require grad.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  explicit Tensor(std::shared_ptr<Storage> impl) : impl_(std::move(impl)) {}
  const Storage& impl() const;
  Storage& impl();

  std::shared_ptr<Storage> impl_;
  Storage& mutable_impl() const;
};

// Define-by-run record of differentiable operations.
//
// Ops append a node only when at least one input requires grad, so node
// inputs always precede the node itself. backward() may run once per
// recording; a second call throws ContractError until reset() is called.
// backward() zeroes the gradient of every grad-requiring tensor the tape
// touches before accumulating, so results never double count.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  // A tape that drops every record; for inference-only forward passes.
  static Tape no_grad() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  bool recording() const { return recording_; }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
  bool recording_ = true;
};

}  // namespace regavae::nn
