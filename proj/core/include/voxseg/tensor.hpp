#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace voxseg {

// Runtime failures: bad data, broken files, numeric breakdown.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments. The command-line tool maps these to a
// distinct exit code.
struct ConfigError : Error {
  using Error::Error;
};

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense N-dimensional array with value semantics on the handle and shared
// storage underneath. Values are stored flat with the last axis fastest.
// Storage is treated as immutable once an op has consumed the tensor; the
// gradient buffer is the one mutable exception and may be touched through a
// const handle.
template <typename F>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, F value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<F> values,
                            bool requires_grad = false);
  static Tensor scalar(F value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int64_t dim(int axis) const { return d_->shape.at(axis); }
  int64_t size() const { return static_cast<int64_t>(d_->values.size()); }

  std::span<const F> values() const { return d_->values; }
  std::span<F> mutable_values() { return d_->values; }
  F item() const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }
  bool has_grad() const { return !d_->grad.empty(); }
  std::span<const F> grad() const;
  // Allocates a zero-filled gradient buffer on first use.
  std::span<F> grad_buffer() const;
  void zero_grad() const { d_->grad.clear(); }

  // Stable identity of the underlying storage.
  uint64_t id() const { return d_->id; }
  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  struct Data {
    Shape shape;
    std::vector<F> values;
    std::vector<F> grad;
    bool requires_grad = false;
    uint64_t id = 0;
  };
  std::shared_ptr<Data> d_;
  static std::shared_ptr<Data> make(Shape shape, bool requires_grad);
  static Tensor wrap(std::shared_ptr<Data> d);
};

// Reverse-mode record of differentiable ops in execution order. Ops append a
// pullback when gradients can flow through them; backward() replays the
// pullbacks in reverse, accumulating into gradient buffers so that a tensor
// used several times receives the sum of its contributions. Nodes are
// released as backward consumes them. The tape must outlive any pullbacks it
// stores, which hold a reference to it.
template <typename F>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  void record(std::initializer_list<Tensor<F>> inputs, const Tensor<F>& output,
              std::function<void()> pullback);

  // True when gradient must be accumulated into this tensor: it is a leaf
  // that requires grad, or it was produced by a recorded node on this tape.
  bool wants_grad(const Tensor<F>& t) const;

  void backward(const Tensor<F>& loss);

  size_t node_count() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor<F> output;
    std::function<void()> pullback;
  };
  std::vector<Node> nodes_;
  std::unordered_set<uint64_t> grad_ids_;
  std::unordered_set<uint64_t> output_ids_;
  bool recording_ = true;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace voxseg
