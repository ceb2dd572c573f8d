#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace seqsrl {

class Rng;

/// 64-byte aligned storage. Vectorised reductions peel differently
/// depending on where a buffer starts, so every array the kernels see
/// starts on the same boundary to keep results bit-reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles. Rank 1 tensors behave as 1 x n rows in
/// every matrix operation.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor row(std::vector<double> data);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);

  bool has_grad() const { return !grad_.empty(); }
  /// Gradient buffer; allocated (zeroed) on first access.
  std::span<double> grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  std::string shape_string() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<std::size_t> shape_;
  Buffer data_;
  Buffer grad_;
  bool requires_grad_ = false;
};

std::string shape_string(const std::vector<std::size_t>& shape);

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t index() const { return index_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Define-by-run record of operations for reverse-mode differentiation.
///
/// Every operation appends one node holding its forward value. backward()
/// walks the nodes in exact reverse order, so a node's gradient is complete
/// before it is propagated to its inputs. Parameter leaves accumulate
/// directly into the gradient buffer of the referenced Tensor; repeated
/// backward passes over separate tapes therefore sum.
///
/// A tape is confined to one thread. Parameters referenced by a live tape
/// must outlive it and must not be modified until backward has run.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant input; never receives a gradient.
  Var constant(Tensor value);
  /// Leaf referencing a parameter. Gradients flow into it only if the
  /// parameter has requires_grad set.
  Var param(Tensor& parameter);

  Var matmul(Var a, Var b);
  /// a * transpose(b).
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  /// Adds a 1 x n row to every row of an m x n matrix.
  Var add_row(Var a, Var row);
  Var scale(Var a, double factor);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var sum(Var a);
  /// Mean of the scalar inputs.
  Var mean(std::span<const Var> scalars);

  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t start, std::size_t count);
  Var slice_rows(Var a, std::size_t start, std::size_t count);
  Var gather_rows(Var table, std::span<const std::size_t> ids);
  /// Row-wise softmax with max subtraction.
  Var softmax_rows(Var a);
  /// Inverted dropout: kept units are scaled by 1/(1-rate).
  Var dropout(Var a, double rate, Rng& rng);

  /// Negative log of the probability mass assigned to one output token
  /// under a softmax that shares its normaliser between generation scores
  /// (1 x G) and copy scores (1 x T). The token's mass is the generation
  /// event at gen_index (if any) plus every copy event in copy_positions.
  /// copy may be an invalid Var when copying is disabled.
  Var shared_softmax_nll(Var gen, Var copy, std::optional<std::size_t> gen_index,
                         std::span<const std::size_t> copy_positions);

  /// Single-layer LSTM run over the rows of x (T x in). Gate order in the
  /// 4d columns of w_in, w_rec and bias is input, forget, candidate, output.
  /// Returns the T x d hidden states; when reverse is set the sequence is
  /// processed from the last row to the first and row t still holds the
  /// state for input row t.
  ///
  /// With lengths given, x packs several sequences back to back (lengths
  /// must sum to the row count); each runs independently from a zero state
  /// and all of them advance together one step at a time.
  Var lstm_sequence(Var x, Var w_in, Var w_rec, Var bias, bool reverse,
                    std::span<const std::size_t> lengths = {});

  /// Populates gradients for every parameter reachable from loss, which
  /// must be a scalar recorded on this tape. The tape is consumed.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  /// Op names in execution order.
  std::vector<std::string> op_names() const;
  /// Order in which the last backward() visited nodes.
  const std::vector<std::size_t>& backward_order() const { return backward_order_; }
  void reset();

 private:
  friend class Var;
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // parameter leaf: value lives elsewhere
    Tensor* param = nullptr;
    Buffer grad;
    bool needs_grad = false;
    BackwardFn back;
    const char* op = "";
  };

  const Tensor& value_of(std::size_t i) const;
  std::span<double> grad_of(std::size_t i);
  bool needs_grad(Var v) const { return nodes_[v.index_].needs_grad; }
  Var push(const char* op, Tensor value, bool needs_grad, BackwardFn back);
  void check(Var v) const;
  // Queues grad(param) += lhs^T * rhs; all queued rows are summed in one
  // product when backward() finishes.
  void defer_outer(Tensor* param, std::span<const double> lhs, std::size_t lhs_cols,
                   std::span<const double> rhs, std::size_t rhs_cols);
  void flush_deferred();

  struct Deferred {
    Tensor* param = nullptr;
    std::size_t lhs_cols = 0, rhs_cols = 0, rows = 0;
    Buffer lhs, rhs;
  };

  std::vector<Node> nodes_;
  std::vector<Deferred> deferred_;
  std::vector<std::size_t> backward_order_;
  bool consumed_ = false;
};

}  // namespace seqsrl
