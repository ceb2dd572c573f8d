#include "seqsrl/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include "seqsrl/errors.hpp"
#include "seqsrl/rng.hpp"

namespace seqsrl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }

ConstMap as_matrix(std::span<const double> buf, std::size_t rows, std::size_t cols) {
  return ConstMap(buf.data(), rows, cols);
}

MutMap as_matrix(std::span<double> buf, std::size_t rows, std::size_t cols) {
  return MutMap(buf.data(), rows, cols);
}

// Few-row products stream the right factor once instead of packing it.
constexpr Eigen::Index kFewRows = 8;
constexpr Eigen::Index kColBlock = 256;

using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

// out (m x n) += a (m x k) * b (k x n)
void mul_add(ConstMap a, ConstMap b, MutMap out) {
  const Eigen::Index m = a.rows(), k = a.cols(), n = b.cols();
  if (m > kFewRows) {
    out.noalias() += a * b;
    return;
  }
  for (Eigen::Index j0 = 0; j0 < n; j0 += kColBlock) {
    const Eigen::Index jn = std::min(kColBlock, n - j0);
    for (Eigen::Index p = 0; p < k; ++p) {
      const ConstVecMap w(b.data() + p * n + j0, jn);
      for (Eigen::Index r = 0; r < m; ++r) VecMap(out.data() + r * n + j0, jn) += a(r, p) * w;
    }
  }
}

// out (m x k) += a (m x n) * transpose(b (k x n))
void mul_nt_add(ConstMap a, ConstMap b, MutMap out) {
  const Eigen::Index m = a.rows(), n = a.cols(), k = b.rows();
  if (m > kFewRows) {
    out.noalias() += a * b.transpose();
    return;
  }
  for (Eigen::Index j0 = 0; j0 < n; j0 += 2 * kColBlock) {
    const Eigen::Index jn = std::min(2 * kColBlock, n - j0);
    for (Eigen::Index p = 0; p < k; ++p) {
      const ConstVecMap w(b.data() + p * n + j0, jn);
      for (Eigen::Index r = 0; r < m; ++r) out(r, p) += ConstVecMap(a.data() + r * n + j0, jn).dot(w);
    }
  }
}

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2, got shape " + shape_string(shape));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  check_shape(shape_);
  if (data_.size() != product(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         seqsrl::shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::row(std::vector<double> data) {
  const std::size_t n = data.size();
  return Tensor({1, n}, std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, std::vector<double>{value}); }

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string());
  return data_[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (!on) grad_.clear();
}

std::span<double> Tensor::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

std::string Tensor::shape_string() const { return seqsrl::shape_string(shape_); }

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() on an empty Var");
  return tape_->value_of(index_);
}

// ---------------------------------------------------------------------------
// Tape bookkeeping

const Tensor& Tape::value_of(std::size_t i) const {
  if (i >= nodes_.size()) throw IndexError("Var refers to a node that is no longer on the tape");
  const Node& n = nodes_[i];
  return n.external ? *n.external : n.value;
}

std::span<double> Tape::grad_of(std::size_t i) {
  Node& n = nodes_[i];
  if (n.param) return n.param->grad();
  if (n.grad.empty()) n.grad.assign(value_of(i).size(), 0.0);
  return n.grad;
}

void Tape::check(Var v) const {
  if (v.tape_ != this) throw ContractError("Var belongs to a different tape");
  if (v.index_ >= nodes_.size()) throw IndexError("Var refers to a node that is no longer on the tape");
}

Var Tape::push(const char* op, Tensor value, bool needs_grad, BackwardFn back) {
  if (consumed_) throw ContractError("tape already consumed by backward(); call reset()");
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  n.op = op;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::reset() {
  nodes_.clear();
  backward_order_.clear();
  deferred_.clear();
  consumed_ = false;
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const Node& n : nodes_) names.emplace_back(n.op);
  return names;
}

Var Tape::constant(Tensor value) { return push("constant", std::move(value), false, nullptr); }

Var Tape::param(Tensor& parameter) {
  if (consumed_) throw ContractError("tape already consumed by backward(); call reset()");
  Node n;
  n.external = &parameter;
  n.needs_grad = parameter.requires_grad();
  n.param = n.needs_grad ? &parameter : nullptr;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  check(loss);
  if (consumed_) throw ContractError("backward() called twice on the same tape");
  if (value_of(loss.index_).size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        value_of(loss.index_).shape_string());
  }
  consumed_ = true;
  backward_order_.clear();
  if (!nodes_[loss.index_].needs_grad) return;
  grad_of(loss.index_)[0] += 1.0;
  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.back || n.grad.empty()) continue;
    backward_order_.push_back(i);
    n.back(*this, i);
  }
  flush_deferred();
}

void Tape::defer_outer(Tensor* param, std::span<const double> lhs, std::size_t lhs_cols,
                       std::span<const double> rhs, std::size_t rhs_cols) {
  auto it = std::find_if(deferred_.begin(), deferred_.end(),
                         [param](const Deferred& d) { return d.param == param; });
  if (it == deferred_.end()) {
    deferred_.push_back(Deferred{param, lhs_cols, rhs_cols, 0, {}, {}});
    it = std::prev(deferred_.end());
  }
  it->lhs.insert(it->lhs.end(), lhs.begin(), lhs.end());
  it->rhs.insert(it->rhs.end(), rhs.begin(), rhs.end());
  it->rows += lhs.size() / lhs_cols;
}

void Tape::flush_deferred() {
  for (Deferred& d : deferred_) {
    as_matrix(d.param->grad(), d.lhs_cols, d.rhs_cols).noalias() +=
        as_matrix(std::span<const double>(d.lhs), d.rows, d.lhs_cols).transpose() *
        as_matrix(std::span<const double>(d.rhs), d.rows, d.rhs_cols);
  }
  deferred_.clear();
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + av.shape_string() + " and " +
                         bv.shape_string());
  }
  Tensor out({av.rows(), bv.cols()});
  mul_add(as_matrix(av), as_matrix(bv), as_matrix(out.data(), out.rows(), out.cols()));
  const std::size_t ia = a.index_, ib = b.index_;
  return push("matmul", std::move(out), needs_grad(a) || needs_grad(b),
              [ia, ib](Tape& t, std::size_t self) {
                const Tensor& av = t.value_of(ia);
                const Tensor& bv = t.value_of(ib);
                auto g = as_matrix(std::span<const double>(t.nodes_[self].grad), av.rows(), bv.cols());
                if (t.nodes_[ia].needs_grad) {
                  mul_nt_add(g, as_matrix(bv), as_matrix(t.grad_of(ia), av.rows(), av.cols()));
                }
                if (t.nodes_[ib].param) {
                  t.defer_outer(t.nodes_[ib].param, av.data(), av.cols(), t.nodes_[self].grad, bv.cols());
                } else if (t.nodes_[ib].needs_grad) {
                  as_matrix(t.grad_of(ib), bv.rows(), bv.cols()).noalias() +=
                      as_matrix(av).transpose() * g;
                }
              });
}

Var Tape::matmul_nt(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ for " + av.shape_string() + " and " +
                         bv.shape_string() + "^T");
  }
  Tensor out({av.rows(), bv.rows()});
  mul_nt_add(as_matrix(av), as_matrix(bv), as_matrix(out.data(), out.rows(), out.cols()));
  const std::size_t ia = a.index_, ib = b.index_;
  return push("matmul_nt", std::move(out), needs_grad(a) || needs_grad(b),
              [ia, ib](Tape& t, std::size_t self) {
                const Tensor& av = t.value_of(ia);
                const Tensor& bv = t.value_of(ib);
                auto g = as_matrix(std::span<const double>(t.nodes_[self].grad), av.rows(), bv.rows());
                if (t.nodes_[ia].needs_grad) {
                  mul_add(g, as_matrix(bv), as_matrix(t.grad_of(ia), av.rows(), av.cols()));
                }
                if (t.nodes_[ib].param) {
                  t.defer_outer(t.nodes_[ib].param, t.nodes_[self].grad, bv.rows(), av.data(), av.cols());
                } else if (t.nodes_[ib].needs_grad) {
                  as_matrix(t.grad_of(ib), bv.rows(), bv.cols()).noalias() +=
                      g.transpose() * as_matrix(av);
                }
              });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes differ, " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.index_, ib = b.index_;
  return push("add", std::move(out), needs_grad(a) || needs_grad(b),
              [ia, ib](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                for (std::size_t in : {ia, ib}) {
                  if (!t.nodes_[in].needs_grad) continue;
                  auto dst = t.grad_of(in);
                  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                }
              });
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.index_, ib = b.index_;
  return push("sub", std::move(out), needs_grad(a) || needs_grad(b),
              [ia, ib](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                if (t.nodes_[ia].needs_grad) {
                  auto dst = t.grad_of(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                }
                if (t.nodes_[ib].needs_grad) {
                  auto dst = t.grad_of(ib);
                  for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
                }
              });
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  out.drop_grad();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.index_, ib = b.index_;
  return push("mul", std::move(out), needs_grad(a) || needs_grad(b),
              [ia, ib](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                const auto av = t.value_of(ia).data();
                const auto bv = t.value_of(ib).data();
                if (t.nodes_[ia].needs_grad) {
                  auto dst = t.grad_of(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bv[i];
                }
                if (t.nodes_[ib].needs_grad) {
                  auto dst = t.grad_of(ib);
                  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * av[i];
                }
              });
}

Var Tape::add_row(Var a, Var row) {
  check(a);
  check(row);
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw DimensionError("add_row: row " + rv.shape_string() + " does not broadcast over " +
                         av.shape_string());
  }
  Tensor out = av;
  out.drop_grad();
  const std::size_t n = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += rv[c];
  }
  const std::size_t ia = a.index_, ir = row.index_;
  return push("add_row", std::move(out), needs_grad(a) || needs_grad(row),
              [ia, ir, n](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                if (t.nodes_[ia].needs_grad) {
                  auto dst = t.grad_of(ia);
                  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                }
                if (t.nodes_[ir].needs_grad) {
                  auto dst = t.grad_of(ir);
                  for (std::size_t i = 0; i < g.size(); ++i) dst[i % n] += g[i];
                }
              });
}

Var Tape::scale(Var a, double factor) {
  check(a);
  Tensor out = a.value();
  out.drop_grad();
  for (double& v : out.data()) v *= factor;
  const std::size_t ia = a.index_;
  return push("scale", std::move(out), needs_grad(a), [ia, factor](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    auto dst = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  });
}

Var Tape::tanh(Var a) {
  check(a);
  Tensor out = a.value();
  out.drop_grad();
  for (double& v : out.data()) v = std::tanh(v);
  const std::size_t ia = a.index_;
  return push("tanh", std::move(out), needs_grad(a), [ia](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    const auto y = t.nodes_[self].value.data();
    auto dst = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var Tape::sigmoid(Var a) {
  check(a);
  Tensor out = a.value();
  out.drop_grad();
  for (double& v : out.data()) v = sigmoid_scalar(v);
  const std::size_t ia = a.index_;
  return push("sigmoid", std::move(out), needs_grad(a), [ia](Tape& t, std::size_t self) {
    const auto& g = t.nodes_[self].grad;
    const auto y = t.nodes_[self].value.data();
    auto dst = t.grad_of(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var Tape::sum(Var a) {
  check(a);
  const auto av = a.value().data();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  const std::size_t ia = a.index_;
  return push("sum", Tensor::scalar(total), needs_grad(a), [ia](Tape& t, std::size_t self) {
    const double g = t.nodes_[self].grad[0];
    for (double& d : t.grad_of(ia)) d += g;
  });
}

Var Tape::mean(std::span<const Var> scalars) {
  if (scalars.empty()) throw ContractError("mean of an empty list");
  double total = 0.0;
  bool any_grad = false;
  std::vector<std::size_t> ids;
  ids.reserve(scalars.size());
  for (Var v : scalars) {
    check(v);
    if (v.value().size() != 1) throw DimensionError("mean expects scalars, got " + v.value().shape_string());
    total += v.value()[0];
    any_grad = any_grad || needs_grad(v);
    ids.push_back(v.index_);
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  return push("mean", Tensor::scalar(total * inv), any_grad,
              [ids = std::move(ids), inv](Tape& t, std::size_t self) {
                const double g = t.nodes_[self].grad[0] * inv;
                for (std::size_t in : ids) {
                  if (t.nodes_[in].needs_grad) t.grad_of(in)[0] += g;
                }
              });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols of an empty list");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool any_grad = false;
  std::vector<std::size_t> ids, widths;
  for (Var p : parts) {
    check(p);
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row counts differ, " + parts.front().value().shape_string() +
                           " vs " + p.value().shape_string());
    }
    cols += p.cols();
    any_grad = any_grad || needs_grad(p);
    ids.push_back(p.index_);
    widths.push_back(p.cols());
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data().begin() + r * v.cols(), v.cols(), out.data().begin() + r * cols + offset);
    }
    offset += v.cols();
  }
  return push("concat_cols", std::move(out), any_grad,
              [ids = std::move(ids), widths = std::move(widths), rows, cols](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                std::size_t offset = 0;
                for (std::size_t k = 0; k < ids.size(); ++k) {
                  if (t.nodes_[ids[k]].needs_grad) {
                    auto dst = t.grad_of(ids[k]);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < widths[k]; ++c) {
                        dst[r * widths[k] + c] += g[r * cols + offset + c];
                      }
                    }
                  }
                  offset += widths[k];
                }
              });
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows of an empty list");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  bool any_grad = false;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    check(p);
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column counts differ, " +
                           parts.front().value().shape_string() + " vs " + p.value().shape_string());
    }
    rows += p.rows();
    any_grad = any_grad || needs_grad(p);
    ids.push_back(p.index_);
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (Var p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return push("concat_rows", Tensor::matrix(rows, cols, std::move(data)), any_grad,
              [ids = std::move(ids)](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                std::size_t offset = 0;
                for (std::size_t in : ids) {
                  const std::size_t n = t.value_of(in).size();
                  if (t.nodes_[in].needs_grad) {
                    auto dst = t.grad_of(in);
                    for (std::size_t i = 0; i < n; ++i) dst[i] += g[offset + i];
                  }
                  offset += n;
                }
              });
}

Var Tape::slice_cols(Var a, std::size_t start, std::size_t count) {
  check(a);
  const Tensor& av = a.value();
  if (count == 0 || start + count > av.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + av.shape_string());
  }
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor out({rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data().begin() + r * cols + start, count, out.data().begin() + r * count);
  }
  const std::size_t ia = a.index_;
  return push("slice_cols", std::move(out), needs_grad(a),
              [ia, start, count, rows, cols](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                auto dst = t.grad_of(ia);
                for (std::size_t r = 0; r < rows; ++r) {
                  for (std::size_t c = 0; c < count; ++c) dst[r * cols + start + c] += g[r * count + c];
                }
              });
}

Var Tape::slice_rows(Var a, std::size_t start, std::size_t count) {
  check(a);
  const Tensor& av = a.value();
  if (count == 0 || start + count > av.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + av.shape_string());
  }
  const std::size_t cols = av.cols();
  std::vector<double> data(av.data().begin() + start * cols, av.data().begin() + (start + count) * cols);
  const std::size_t ia = a.index_;
  return push("slice_rows", Tensor::matrix(count, cols, std::move(data)), needs_grad(a),
              [ia, start, cols](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                auto dst = t.grad_of(ia);
                for (std::size_t i = 0; i < g.size(); ++i) dst[start * cols + i] += g[i];
              });
}

Var Tape::gather_rows(Var table, std::span<const std::size_t> ids) {
  check(table);
  const Tensor& tv = table.value();
  if (ids.empty()) throw ContractError("gather_rows with no ids");
  const std::size_t cols = tv.cols();
  Tensor out({ids.size(), cols});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= tv.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[k]) + " outside table " + tv.shape_string());
    }
    std::copy_n(tv.data().begin() + ids[k] * cols, cols, out.data().begin() + k * cols);
  }
  const std::size_t it = table.index_;
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return push("gather_rows", std::move(out), needs_grad(table),
              [it, rows = std::move(rows), cols](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                auto dst = t.grad_of(it);
                for (std::size_t k = 0; k < rows.size(); ++k) {
                  for (std::size_t c = 0; c < cols; ++c) dst[rows[k] * cols + c] += g[k * cols + c];
                }
              });
}

// ---------------------------------------------------------------------------
// Normalisation and regularisation

Var Tape::softmax_rows(Var a) {
  check(a);
  Tensor out = a.value();
  out.drop_grad();
  const std::size_t rows = out.rows(), cols = out.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = out.data().subspan(r * cols, cols);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) z += (v = std::exp(v - m));
    for (double& v : row) v /= z;
  }
  const std::size_t ia = a.index_;
  return push("softmax_rows", std::move(out), needs_grad(a),
              [ia, rows, cols](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                const auto y = t.nodes_[self].value.data();
                auto dst = t.grad_of(ia);
                for (std::size_t r = 0; r < rows; ++r) {
                  double dot = 0.0;
                  for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                  for (std::size_t c = 0; c < cols; ++c) {
                    dst[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
                  }
                }
              });
}

Var Tape::dropout(Var a, double rate, Rng& rng) {
  check(a);
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.value().size());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = a.value();
  out.drop_grad();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ia = a.index_;
  return push("dropout", std::move(out), needs_grad(a),
              [ia, mask = std::move(mask)](Tape& t, std::size_t self) {
                const auto& g = t.nodes_[self].grad;
                auto dst = t.grad_of(ia);
                for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * mask[i];
              });
}

Var Tape::shared_softmax_nll(Var gen, Var copy, std::optional<std::size_t> gen_index,
                             std::span<const std::size_t> copy_positions) {
  check(gen);
  const bool has_copy = copy.valid();
  if (has_copy) check(copy);
  const Tensor& gv = gen.value();
  if (gv.rows() != 1) throw DimensionError("shared_softmax_nll: generation scores must be a row");
  const std::size_t n_gen = gv.cols();
  const std::size_t n_copy = has_copy ? copy.value().size() : 0;
  if (has_copy && copy.value().rows() != 1) throw DimensionError("shared_softmax_nll: copy scores must be a row");
  if (gen_index && *gen_index >= n_gen) throw IndexError("shared_softmax_nll: generation index out of range");
  for (std::size_t p : copy_positions) {
    if (p >= n_copy) throw IndexError("shared_softmax_nll: copy position out of range");
  }
  if (!gen_index && copy_positions.empty()) {
    throw ContractError("shared_softmax_nll: target token has no generation or copy event");
  }

  // Joint event vector: generation events first, then copy events.
  std::vector<double> scores(gv.data().begin(), gv.data().end());
  if (has_copy) scores.insert(scores.end(), copy.value().data().begin(), copy.value().data().end());
  std::vector<std::size_t> gold;
  if (gen_index) gold.push_back(*gen_index);
  for (std::size_t p : copy_positions) gold.push_back(n_gen + p);

  const double m_all = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - m_all);
  const double log_z = m_all + std::log(z);
  double m_gold = -std::numeric_limits<double>::infinity();
  for (std::size_t k : gold) m_gold = std::max(m_gold, scores[k]);
  double mass = 0.0;
  for (std::size_t k : gold) mass += std::exp(scores[k] - m_gold);
  const double log_mass = m_gold + std::log(mass);

  const std::size_t ig = gen.index_;
  const std::size_t ic = has_copy ? copy.index_ : 0;
  const bool any_grad = needs_grad(gen) || (has_copy && needs_grad(copy));
  return push("shared_softmax_nll", Tensor::scalar(log_z - log_mass), any_grad,
              [ig, ic, has_copy, n_gen, n_copy, scores = std::move(scores), gold = std::move(gold), log_z,
               log_mass](Tape& t, std::size_t self) {
                const double g = t.nodes_[self].grad[0];
                std::vector<double> d(scores.size());
                for (std::size_t k = 0; k < scores.size(); ++k) d[k] = std::exp(scores[k] - log_z);
                for (std::size_t k : gold) d[k] -= std::exp(scores[k] - log_mass);
                if (t.nodes_[ig].needs_grad) {
                  auto dst = t.grad_of(ig);
                  for (std::size_t k = 0; k < n_gen; ++k) dst[k] += g * d[k];
                }
                if (has_copy && t.nodes_[ic].needs_grad) {
                  auto dst = t.grad_of(ic);
                  for (std::size_t k = 0; k < n_copy; ++k) dst[k] += g * d[n_gen + k];
                }
              });
}

// ---------------------------------------------------------------------------
// Recurrent layer

Var Tape::lstm_sequence(Var x, Var w_in, Var w_rec, Var bias, bool reverse,
                        std::span<const std::size_t> lengths) {
  check(x);
  check(w_in);
  check(w_rec);
  check(bias);
  const Tensor& xv = x.value();
  const Tensor& wi = w_in.value();
  const Tensor& wr = w_rec.value();
  const Tensor& bv = bias.value();
  const std::size_t rows = xv.rows(), in = xv.cols(), hidden = wr.rows();
  if (wi.rows() != in || wi.cols() != 4 * hidden || wr.cols() != 4 * hidden || bv.rows() != 1 ||
      bv.cols() != 4 * hidden) {
    throw DimensionError("lstm_sequence: incompatible shapes x" + xv.shape_string() + " w_in" +
                         wi.shape_string() + " w_rec" + wr.shape_string() + " bias" + bv.shape_string());
  }

  // Packed layout: sequence b occupies rows [offset[b], offset[b] + len[b]).
  auto len = std::make_shared<std::vector<std::size_t>>();
  if (lengths.empty()) {
    len->push_back(rows);
  } else {
    len->assign(lengths.begin(), lengths.end());
  }
  const std::size_t batch = len->size();
  std::vector<std::size_t> offset(batch, 0);
  std::size_t total = 0, longest = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    if ((*len)[b] == 0) throw DimensionError("lstm_sequence: empty sequence in batch");
    offset[b] = total;
    total += (*len)[b];
    longest = std::max(longest, (*len)[b]);
  }
  if (total != rows) {
    throw DimensionError("lstm_sequence: lengths sum to " + std::to_string(total) + " but x has " +
                         std::to_string(rows) + " rows");
  }
  // Row of sequence b visited at step s, or npos when the sequence is done.
  auto row_at = [len, offset, reverse](std::size_t b, std::size_t s) {
    const std::size_t n = (*len)[b];
    if (s >= n) return std::numeric_limits<std::size_t>::max();
    return offset[b] + (reverse ? n - 1 - s : s);
  };

  struct Cache {
    Buffer acts;    // rows x 4h: i, f, g, o after nonlinearity
    Buffer cells;   // rows x h
    Buffer h_prev;  // rows x h: recurrent input seen at each row
    Buffer c_prev;  // rows x h
  };
  auto cache = std::make_shared<Cache>();
  const std::size_t g4 = 4 * hidden;
  cache->acts.resize(rows * g4);
  cache->cells.resize(rows * hidden);
  cache->h_prev.assign(rows * hidden, 0.0);
  cache->c_prev.assign(rows * hidden, 0.0);

  RowMat pre = as_matrix(xv) * as_matrix(wi);
  pre.rowwise() += as_matrix(bv).row(0);
  Tensor out({rows, hidden});
  RowMat h = RowMat::Zero(batch, hidden);
  RowMat c = RowMat::Zero(batch, hidden);
  RowMat h_act(batch, hidden), gates(batch, g4);
  std::vector<std::size_t> active, active_rows;
  const auto wr_m = as_matrix(wr);
  for (std::size_t s = 0; s < longest; ++s) {
    active.clear();
    active_rows.clear();
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t r = row_at(b, s);
      if (r == std::numeric_limits<std::size_t>::max()) continue;
      h_act.row(active.size()) = h.row(b);
      active.push_back(b);
      active_rows.push_back(r);
    }
    const auto n = static_cast<Eigen::Index>(active.size());
    MutMap gates_n(gates.data(), n, static_cast<Eigen::Index>(g4));
    gates_n.setZero();
    mul_add(ConstMap(h_act.data(), n, static_cast<Eigen::Index>(hidden)), wr_m, gates_n);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t b = active[a], t = active_rows[a];
      std::copy_n(h.row(b).data(), hidden, cache->h_prev.begin() + t * hidden);
      std::copy_n(c.row(b).data(), hidden, cache->c_prev.begin() + t * hidden);
      double* act = cache->acts.data() + t * g4;
      for (std::size_t k = 0; k < hidden; ++k) {
        const double ig = sigmoid_scalar(pre(t, k) + gates(a, k));
        const double fg = sigmoid_scalar(pre(t, hidden + k) + gates(a, hidden + k));
        const double cg = std::tanh(pre(t, 2 * hidden + k) + gates(a, 2 * hidden + k));
        const double og = sigmoid_scalar(pre(t, 3 * hidden + k) + gates(a, 3 * hidden + k));
        act[k] = ig;
        act[hidden + k] = fg;
        act[2 * hidden + k] = cg;
        act[3 * hidden + k] = og;
        c(b, k) = fg * c(b, k) + ig * cg;
        h(b, k) = og * std::tanh(c(b, k));
      }
      std::copy_n(c.row(b).data(), hidden, cache->cells.begin() + t * hidden);
      std::copy_n(h.row(b).data(), hidden, out.data().begin() + t * hidden);
    }
  }

  const std::size_t ix = x.index_, iwi = w_in.index_, iwr = w_rec.index_, ib = bias.index_;
  const bool any_grad = needs_grad(x) || needs_grad(w_in) || needs_grad(w_rec) || needs_grad(bias);
  return push("lstm_sequence", std::move(out), any_grad,
              [=](Tape& t, std::size_t self) {
                const auto& dh_out = t.nodes_[self].grad;
                const auto wr_m = as_matrix(t.value_of(iwr));
                RowMat d_gates(rows, g4);
                RowMat dh_rec = RowMat::Zero(batch, hidden);
                RowMat dc_next = RowMat::Zero(batch, hidden);
                RowMat dg_act(batch, g4), dh_act(batch, hidden);
                std::vector<std::size_t> act_b;
                for (std::size_t s = longest; s-- > 0;) {
                  act_b.clear();
                  for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t r = row_at(b, s);
                    if (r == std::numeric_limits<std::size_t>::max()) continue;
                    const double* act = cache->acts.data() + r * g4;
                    const double* cell = cache->cells.data() + r * hidden;
                    const double* c_prev = cache->c_prev.data() + r * hidden;
                    const auto a = static_cast<Eigen::Index>(act_b.size());
                    for (std::size_t k = 0; k < hidden; ++k) {
                      const double ig = act[k], fg = act[hidden + k], cg = act[2 * hidden + k],
                                   og = act[3 * hidden + k];
                      const double tc = std::tanh(cell[k]);
                      const double dh = dh_out[r * hidden + k] + dh_rec(b, k);
                      const double dc = dh * og * (1.0 - tc * tc) + dc_next(b, k);
                      d_gates(r, k) = dc * cg * ig * (1.0 - ig);
                      d_gates(r, hidden + k) = dc * c_prev[k] * fg * (1.0 - fg);
                      d_gates(r, 2 * hidden + k) = dc * ig * (1.0 - cg * cg);
                      d_gates(r, 3 * hidden + k) = dh * tc * og * (1.0 - og);
                      dc_next(b, k) = dc * fg;
                    }
                    dg_act.row(a) = d_gates.row(r);
                    act_b.push_back(b);
                  }
                  const auto n = static_cast<Eigen::Index>(act_b.size());
                  MutMap dh_n(dh_act.data(), n, static_cast<Eigen::Index>(hidden));
                  dh_n.setZero();
                  mul_nt_add(ConstMap(dg_act.data(), n, static_cast<Eigen::Index>(g4)), wr_m, dh_n);
                  for (std::size_t a = 0; a < act_b.size(); ++a) dh_rec.row(act_b[a]) = dh_act.row(a);
                }
                if (t.nodes_[iwr].needs_grad) {
                  as_matrix(t.grad_of(iwr), hidden, g4).noalias() +=
                      as_matrix(std::span<const double>(cache->h_prev), rows, hidden).transpose() * d_gates;
                }
                if (t.nodes_[iwi].needs_grad) {
                  as_matrix(t.grad_of(iwi), in, g4).noalias() += as_matrix(t.value_of(ix)).transpose() * d_gates;
                }
                if (t.nodes_[ib].needs_grad) {
                  as_matrix(t.grad_of(ib), 1, g4) += d_gates.colwise().sum();
                }
                if (t.nodes_[ix].needs_grad) {
                  as_matrix(t.grad_of(ix), rows, in).noalias() += d_gates * as_matrix(t.value_of(iwi)).transpose();
                }
              });
}

}  // namespace seqsrl
