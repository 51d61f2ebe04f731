#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rtcc {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

using Dims = std::vector<std::int64_t>;

std::int64_t numel(const Dims& dims);
std::string to_string(const Dims& dims);
const char* to_string(DType dtype);

namespace detail {
struct Node;
}

// Reference-counted handle to a dense row-major array plus its autograd
// bookkeeping. Copies share the underlying node. A "meta" tensor carries dims
// but no storage; every op accepts meta inputs and returns meta outputs, which
// lets the profiler walk the network without computing anything.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Dims& dims, DType dtype = DType::f32);
  static Tensor full(const Dims& dims, double value, DType dtype = DType::f32);
  static Tensor from_values(const Dims& dims, std::span<const double> values,
                            DType dtype = DType::f32);
  static Tensor from_vector(const Dims& dims, std::vector<float> values);
  static Tensor from_vector(const Dims& dims, std::vector<double> values);
  static Tensor meta(const Dims& dims, DType dtype = DType::f32);

  bool defined() const { return node_ != nullptr; }
  bool is_meta() const;
  const Dims& dims() const;
  // Negative indices count from the back.
  std::int64_t dim(int index) const;
  std::int64_t rank() const;
  std::int64_t numel() const;
  DType dtype() const;

  template <typename T>
  std::span<const T> data() const;
  template <typename T>
  std::span<T> mutable_data();

  double value(std::int64_t flat_index) const;
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  // Undefined tensor until a backward pass has reached this leaf.
  Tensor grad() const;
  void zero_grad();
  // Reverse-mode pass from a single-element tensor. Leaf gradients accumulate.
  void backward() const;

  // Shares storage, drops history.
  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;
  // Same storage viewed with different dims; differentiable.
  Tensor reshape(const Dims& dims) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend struct TensorAccess;
};

template <typename F>
decltype(auto) dispatch(DType dtype, F&& fn) {
  if (dtype == DType::f64) return fn.template operator()<double>();
  return fn.template operator()<float>();
}

namespace autograd {

// Maps the gradient of an op's output to gradients of its inputs, aligned with
// the input list given to record(). Undefined entries mean "no contribution".
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool any_requires_grad(std::span<const Tensor> inputs);

// Attaches history to `out` when grad mode is on and an input requires grad.
// The backward function must not capture `out` itself (use out.detach()).
void record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn);

// grad += delta, elementwise, same dims and dtype.
void accumulate(Tensor& grad, const Tensor& delta);

}  // namespace autograd

}  // namespace rtcc
