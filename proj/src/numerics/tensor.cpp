#include "regavae/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "regavae/error.hpp"

namespace regavae::nn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got shape " +
                         shape_string(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) {
      throw DimensionError("tensor dimensions must be positive, got " +
                           shape_string(shape));
    }
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<Storage>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  auto impl = std::make_shared<Storage>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Tensor::Storage& Tensor::impl() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return *impl_;
}

Tensor::Storage& Tensor::impl() {
  if (!impl_) throw ContractError("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
std::size_t Tensor::numel() const { return impl().data.size(); }

std::size_t Tensor::rows() const {
  const Shape& s = shape();
  return s.size() == 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const { return shape().back(); }

std::span<const double> Tensor::data() const { return impl().data; }
std::span<double> Tensor::mutable_data() { return impl().data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on non-scalar tensor of shape " +
                        shape_string(shape()));
  }
  return impl().data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return impl().data[r * cols() + c];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool value) { impl().requires_grad = value; }

bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const double> Tensor::grad() const { return impl().grad; }

Tensor::Storage& Tensor::mutable_impl() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return *impl_;
}

std::span<double> Tensor::mutable_grad() const {
  Storage& s = mutable_impl();
  if (s.grad.empty()) s.grad.assign(s.data.size(), 0.0);
  return s.grad;
}

void Tensor::zero_grad() const {
  Storage& s = mutable_impl();
  s.grad.assign(s.data.size(), 0.0);
}

void Tensor::clear_grad() const { mutable_impl().grad.clear(); }

Tensor Tensor::clone() const {
  auto copy = std::make_shared<Storage>();
  copy->shape = impl().shape;
  copy->data = impl().data;
  return Tensor(std::move(copy));
}

void Tape::record(std::vector<Tensor> inputs, Tensor output,
                  BackwardFn backward) {
  if (!recording_) return;
  if (consumed_) {
    throw ContractError("recording onto a consumed tape; call reset() first");
  }
  nodes_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape())
                                        : std::string("<undefined>")));
  }
  if (consumed_) {
    throw ContractError("backward() already ran on this tape; call reset()");
  }
  const bool on_tape =
      std::any_of(nodes_.begin(), nodes_.end(), [&](const Node& n) {
        return n.output.same_storage(loss);
      });
  if (!on_tape) {
    throw ContractError("loss tensor was not recorded on this tape");
  }

  for (Node& node : nodes_) {
    for (Tensor& t : node.inputs) {
      if (t.requires_grad()) t.zero_grad();
    }
    node.output.zero_grad();
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
  }
  consumed_ = true;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

}  // namespace regavae::nn
