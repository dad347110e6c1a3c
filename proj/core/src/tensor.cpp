#include "voxseg/tensor.hpp"

#include <atomic>
#include <sstream>

namespace voxseg {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {
std::atomic<uint64_t> g_next_tensor_id{1};
}

template <typename F>
auto Tensor<F>::make(Shape shape, bool requires_grad)
    -> std::shared_ptr<Data> {
  for (int64_t d : shape) {
    if (d < 1) {
      throw Error("tensor shape " + shape_str(shape) +
                  " has a dimension smaller than 1");
    }
  }
  auto d = std::make_shared<Data>();
  d->values.resize(static_cast<size_t>(numel(shape)));
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  d->id = g_next_tensor_id.fetch_add(1, std::memory_order_relaxed);
  return d;
}

template <typename F>
Tensor<F> Tensor<F>::wrap(std::shared_ptr<Data> d) {
  Tensor t;
  t.d_ = std::move(d);
  return t;
}

template <typename F>
Tensor<F> Tensor<F>::zeros(Shape shape, bool requires_grad) {
  return wrap(make(std::move(shape), requires_grad));
}

template <typename F>
Tensor<F> Tensor<F>::full(Shape shape, F value, bool requires_grad) {
  auto d = make(std::move(shape), requires_grad);
  std::fill(d->values.begin(), d->values.end(), value);
  return wrap(std::move(d));
}

template <typename F>
Tensor<F> Tensor<F>::from_values(Shape shape, std::vector<F> values,
                                 bool requires_grad) {
  auto d = make(std::move(shape), requires_grad);
  if (values.size() != d->values.size()) {
    throw Error("tensor value count " + std::to_string(values.size()) +
                " does not match shape " + shape_str(d->shape));
  }
  d->values = std::move(values);
  return wrap(std::move(d));
}

template <typename F>
Tensor<F> Tensor<F>::scalar(F value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

template <typename F>
F Tensor<F>::item() const {
  if (!d_ || d_->values.size() != 1) {
    throw Error("item() requires a tensor with exactly one element");
  }
  return d_->values[0];
}

template <typename F>
std::span<const F> Tensor<F>::grad() const {
  if (d_->grad.empty()) {
    throw Error("tensor has no gradient");
  }
  return d_->grad;
}

template <typename F>
std::span<F> Tensor<F>::grad_buffer() const {
  if (d_->grad.empty()) {
    d_->grad.assign(d_->values.size(), F(0));
  }
  return d_->grad;
}

template <typename F>
void Tape<F>::record(std::initializer_list<Tensor<F>> inputs,
                     const Tensor<F>& output, std::function<void()> pullback) {
  if (!recording_) return;
  output_ids_.insert(output.id());
  bool needs = false;
  for (const auto& in : inputs) {
    if (wants_grad(in)) {
      needs = true;
      break;
    }
  }
  if (!needs) return;
  grad_ids_.insert(output.id());
  nodes_.push_back(Node{output, std::move(pullback)});
}

template <typename F>
bool Tape<F>::wants_grad(const Tensor<F>& t) const {
  return t.requires_grad() || grad_ids_.contains(t.id());
}

template <typename F>
void Tape<F>::backward(const Tensor<F>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw Error("backward requires a scalar loss tensor");
  }
  if (!output_ids_.contains(loss.id())) {
    throw Error("backward called on a tensor that is not on this record");
  }
  loss.grad_buffer()[0] += F(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) {
      it->pullback();
    }
    // Release closure captures as we go; activations die as soon as no
    // later pullback needs them.
    it->pullback = nullptr;
    it->output = Tensor<F>();
  }
  nodes_.clear();
}

template <typename F>
void Tape<F>::clear() {
  nodes_.clear();
  grad_ids_.clear();
  output_ids_.clear();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace voxseg
