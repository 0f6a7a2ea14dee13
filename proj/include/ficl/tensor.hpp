#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

namespace ficl {

using Shape = std::vector<std::size_t>;

class Tape;

// Dense row-major double tensor. Storage is shared and never mutated after
// construction, so copies are cheap and a tensor can be captured by the tape.
// A tensor is "tracked" when it is a node on a Tape; untracked tensors are
// constants as far as differentiation is concerned.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool empty() const { return size() == 0; }
  // Leading extent; a rank-1 tensor counts as one row.
  std::size_t rows() const;
  // Trailing extent.
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<const double> row(std::size_t r) const;
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }

  // Same values, no tape association.
  Tensor detached() const;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  bool requires_grad_ = false;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;

  friend class Tape;
  friend class GradientMap;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

class GradientMap {
 public:
  // Gradient of the loss with respect to a watched leaf, or nullptr when the
  // leaf is frozen, belongs to another tape, or did not influence the loss.
  const Tensor* find(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const { return find(leaf) != nullptr; }
  std::size_t size() const { return grads_.size(); }

 private:
  const Tape* tape_ = nullptr;
  std::map<std::size_t, Tensor> grads_;
  friend class Tape;
};

// Records differentiable operations in execution order. One tape per thread;
// tensors hold a raw pointer to their tape so it must outlive them.
class Tape {
 public:
  // grad_in[i] is null when input i needs no gradient; otherwise the callback
  // adds its contribution into the zero-initialised buffer.
  using BackwardFn = std::function<void(std::span<const double> grad_out,
                                        std::span<std::vector<double>* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Returns a tracked copy of `leaf` with requires_grad set.
  Tensor watch(const Tensor& leaf);

  // Replays the tape in reverse. Only watched leaves appear in the result.
  GradientMap backward(const Tensor& loss) const;

  std::size_t size() const { return nodes_.size(); }

  // Used by the op implementations. When none of `inputs` is tracked the
  // result is returned unrecorded.
  static Tensor record(Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn fn);
  static Tensor record(Tensor out, std::span<const Tensor> inputs, BackwardFn fn);

 private:
  struct Node {
    std::vector<std::size_t> inputs;  // kUntracked for constant inputs
    BackwardFn backward;
    Shape shape;
    bool leaf = false;
  };
  static constexpr std::size_t kUntracked = static_cast<std::size_t>(-1);

  Tensor push(Tensor out, std::vector<std::size_t> inputs, BackwardFn fn);

  std::vector<Node> nodes_;
};

// ---- operations -----------------------------------------------------------
// All operations return fresh tensors and throw NumericError when an output
// element is not finite.

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ for a [m×k], b [n×k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
// Adds a length-d vector to every row of a [...×d].
Tensor add_row(const Tensor& a, const Tensor& v);
Tensor scale(const Tensor& a, double s);
Tensor gelu(const Tensor& a);
Tensor sum(const Tensor& a);

Tensor softmax_rows(const Tensor& x);
// Row i may only attend to columns j <= i + (cols - rows); the rest get
// exactly zero probability. For square inputs this is the usual causal mask.
Tensor causal_softmax_rows(const Tensor& x);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
// Selects rows of `table` by index.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

}  // namespace ficl
