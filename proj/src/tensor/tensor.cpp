#include "rtcc/tensor/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <variant>

#include "rtcc/error.hpp"

namespace rtcc {

namespace detail {

using Buffer = std::variant<std::monostate, std::vector<float>, std::vector<double>>;

struct GradFn {
  std::vector<Tensor> inputs;
  autograd::BackwardFn fn;
};

struct Node {
  Dims dims;
  DType dtype = DType::f32;
  std::shared_ptr<Buffer> storage;  // null for meta tensors
  bool requires_grad = false;
  std::shared_ptr<Node> grad;
  std::unique_ptr<GradFn> grad_fn;
};

}  // namespace detail

struct TensorAccess {
  static Tensor wrap(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }
  static const std::shared_ptr<detail::Node>& node(const Tensor& t) { return t.node_; }
};

namespace {

std::shared_ptr<detail::Node> make_node(const Dims& dims, DType dtype, bool allocate) {
  for (auto d : dims) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + to_string(dims));
  }
  auto node = std::make_shared<detail::Node>();
  node->dims = dims;
  node->dtype = dtype;
  if (allocate) {
    const auto n = static_cast<std::size_t>(numel(dims));
    if (dtype == DType::f64) {
      node->storage = std::make_shared<detail::Buffer>(std::vector<double>(n, 0.0));
    } else {
      node->storage = std::make_shared<detail::Buffer>(std::vector<float>(n, 0.0f));
    }
  }
  return node;
}

detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw UsageError("operation on an undefined tensor");
  return *node;
}

thread_local bool g_grad_enabled = true;

}  // namespace

std::int64_t numel(const Dims& dims) {
  std::int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string to_string(const Dims& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ')';
  return os.str();
}

const char* to_string(DType dtype) { return dtype == DType::f64 ? "f64" : "f32"; }

Tensor Tensor::zeros(const Dims& dims, DType dtype) { return Tensor(make_node(dims, dtype, true)); }

Tensor Tensor::full(const Dims& dims, double value, DType dtype) {
  Tensor t = zeros(dims, dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.mutable_data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(const Dims& dims, std::span<const double> values, DType dtype) {
  if (static_cast<std::int64_t>(values.size()) != rtcc::numel(dims)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match dims " +
                     to_string(dims));
  }
  Tensor t = zeros(dims, dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.mutable_data<T>();
    std::transform(values.begin(), values.end(), d.begin(), [](double v) { return static_cast<T>(v); });
  });
  return t;
}

Tensor Tensor::from_vector(const Dims& dims, std::vector<float> values) {
  if (static_cast<std::int64_t>(values.size()) != rtcc::numel(dims)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match dims " +
                     to_string(dims));
  }
  auto node = make_node(dims, DType::f32, false);
  node->storage = std::make_shared<detail::Buffer>(std::move(values));
  return Tensor(std::move(node));
}

Tensor Tensor::from_vector(const Dims& dims, std::vector<double> values) {
  if (static_cast<std::int64_t>(values.size()) != rtcc::numel(dims)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match dims " +
                     to_string(dims));
  }
  auto node = make_node(dims, DType::f64, false);
  node->storage = std::make_shared<detail::Buffer>(std::move(values));
  return Tensor(std::move(node));
}

Tensor Tensor::meta(const Dims& dims, DType dtype) { return Tensor(make_node(dims, dtype, false)); }

bool Tensor::is_meta() const { return checked(node_).storage == nullptr; }
const Dims& Tensor::dims() const { return checked(node_).dims; }

std::int64_t Tensor::dim(int index) const {
  const auto& d = dims();
  const int r = static_cast<int>(d.size());
  const int i = index < 0 ? r + index : index;
  if (i < 0 || i >= r) {
    throw ShapeError("dim index " + std::to_string(index) + " out of range for " + to_string(d));
  }
  return d[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::rank() const { return static_cast<std::int64_t>(dims().size()); }
std::int64_t Tensor::numel() const { return rtcc::numel(dims()); }
DType Tensor::dtype() const { return checked(node_).dtype; }

template <typename T>
std::span<const T> Tensor::data() const {
  auto& node = checked(node_);
  if (!node.storage) throw UsageError("data access on a meta tensor");
  auto* v = std::get_if<std::vector<T>>(node.storage.get());
  if (!v) throw UsageError(std::string("dtype mismatch on data access, tensor is ") + to_string(node.dtype));
  return {v->data(), v->size()};
}

template <typename T>
std::span<T> Tensor::mutable_data() {
  auto& node = checked(node_);
  if (!node.storage) throw UsageError("data access on a meta tensor");
  auto* v = std::get_if<std::vector<T>>(node.storage.get());
  if (!v) throw UsageError(std::string("dtype mismatch on data access, tensor is ") + to_string(node.dtype));
  return {v->data(), v->size()};
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();

double Tensor::value(std::int64_t flat_index) const {
  if (flat_index < 0 || flat_index >= numel()) {
    throw ShapeError("flat index " + std::to_string(flat_index) + " out of range for " + to_string(dims()));
  }
  return dispatch(dtype(), [&]<typename T>() {
    return static_cast<double>(data<T>()[static_cast<std::size_t>(flat_index)]);
  });
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() requires a single-element tensor, got " + to_string(dims()));
  return value(0);
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&]<typename T>() {
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  auto& node = checked(node_);
  if (node.grad_fn) throw UsageError("requires_grad can only be set on leaf tensors");
  node.requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return checked(node_).grad_fn == nullptr; }

Tensor Tensor::grad() const {
  auto& node = checked(node_);
  return node.grad ? Tensor(node.grad) : Tensor();
}

void Tensor::zero_grad() { checked(node_).grad.reset(); }

void Tensor::backward() const {
  auto& root = checked(node_);
  if (numel() != 1) throw UsageError("backward() requires a scalar loss, got dims " + to_string(root.dims));
  if (!root.requires_grad) throw UsageError("backward() on a tensor that does not require grad");
  if (!root.storage) throw UsageError("backward() on a meta tensor");

  // Iterative post-order DFS yields a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    const std::size_t fan = n->grad_fn ? n->grad_fn->inputs.size() : 0;
    if (next < fan) {
      auto* child = TensorAccess::node(n->grad_fn->inputs[next++]).get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  autograd::NoGradGuard no_grad;
  std::unordered_map<detail::Node*, Tensor> pending;
  pending.emplace(node_.get(), Tensor::full(root.dims, 1.0, root.dtype));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    auto found = pending.find(n);
    if (found == pending.end()) continue;
    Tensor g = std::move(found->second);
    pending.erase(found);
    if (!n->grad_fn) {
      if (n->grad) {
        Tensor acc(n->grad);
        autograd::accumulate(acc, g);
      } else {
        n->grad = TensorAccess::node(g.clone());
      }
      continue;
    }
    auto input_grads = n->grad_fn->fn(g);
    const auto& inputs = n->grad_fn->inputs;
    for (std::size_t i = 0; i < inputs.size() && i < input_grads.size(); ++i) {
      auto* child = TensorAccess::node(inputs[i]).get();
      if (!child->requires_grad || !input_grads[i].defined()) continue;
      if (input_grads[i].dims() != child->dims) {
        throw ShapeError("internal: gradient dims " + to_string(input_grads[i].dims()) +
                         " do not match input dims " + to_string(child->dims));
      }
      auto slot = pending.find(child);
      if (slot == pending.end()) {
        pending.emplace(child, std::move(input_grads[i]));
      } else {
        // Op-returned gradients may alias their upstream buffer; never write into them.
        Tensor sum = slot->second.clone();
        autograd::accumulate(sum, input_grads[i]);
        slot->second = std::move(sum);
      }
    }
  }
}

Tensor Tensor::detach() const {
  auto& node = checked(node_);
  auto copy = std::make_shared<detail::Node>();
  copy->dims = node.dims;
  copy->dtype = node.dtype;
  copy->storage = node.storage;
  return Tensor(std::move(copy));
}

Tensor Tensor::clone() const {
  auto& node = checked(node_);
  auto copy = std::make_shared<detail::Node>();
  copy->dims = node.dims;
  copy->dtype = node.dtype;
  if (node.storage) copy->storage = std::make_shared<detail::Buffer>(*node.storage);
  return Tensor(std::move(copy));
}

Tensor Tensor::to(DType target) const {
  if (is_meta()) return meta(dims(), target);
  if (target == dtype()) return clone();
  Tensor out = zeros(dims(), target);
  dispatch(dtype(), [&]<typename S>() {
    dispatch(target, [&]<typename D>() {
      auto src = data<S>();
      auto dst = out.mutable_data<D>();
      std::transform(src.begin(), src.end(), dst.begin(), [](S v) { return static_cast<D>(v); });
    });
  });
  return out;
}

Tensor Tensor::reshape(const Dims& new_dims) const {
  auto& node = checked(node_);
  if (rtcc::numel(new_dims) != rtcc::numel(node.dims)) {
    throw ShapeError("cannot reshape " + to_string(node.dims) + " to " + to_string(new_dims));
  }
  auto view = make_node(new_dims, node.dtype, false);
  view->storage = node.storage;
  Tensor out(std::move(view));
  const Dims old_dims = node.dims;
  autograd::record(out, {*this}, [old_dims](const Tensor& g) -> std::vector<Tensor> {
    return {g.reshape(old_dims)};
  });
  return out;
}

namespace autograd {

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool any_requires_grad(std::span<const Tensor> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

void record(Tensor& out, std::vector<Tensor> inputs, BackwardFn fn) {
  if (!g_grad_enabled || !any_requires_grad(inputs)) return;
  auto& node = *TensorAccess::node(out);
  node.requires_grad = true;
  node.grad_fn = std::make_unique<detail::GradFn>(detail::GradFn{std::move(inputs), std::move(fn)});
}

void accumulate(Tensor& grad, const Tensor& delta) {
  if (grad.dims() != delta.dims() || grad.dtype() != delta.dtype()) {
    throw ShapeError("gradient accumulation mismatch: " + to_string(grad.dims()) + " vs " +
                     to_string(delta.dims()));
  }
  dispatch(grad.dtype(), [&]<typename T>() {
    auto dst = grad.mutable_data<T>();
    auto src = delta.data<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

}  // namespace autograd

}  // namespace rtcc
