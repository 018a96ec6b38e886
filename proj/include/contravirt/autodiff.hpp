#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "contravirt/matrix.hpp"

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation in execution order. Leaves are either
// constants, tracked parameters (gradients flow back into Parameter::grad), or
// frozen parameters (value snapshot, no gradient). Operations whose inputs are
// all untracked record only their value, so a forward pass with frozen
// parameters costs no more than plain evaluation.

namespace contravirt::ad {

struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Matrix value);

  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad();
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Parameter& p);
  Var frozen(const Parameter& p);

  /// Records an op output. `inputs` decide whether the node is tracked; the
  /// backward rule is dropped when none of them is.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn backward);

  /// Propagates d(loss)/d(node) to every tracked node and adds the result into
  /// the gradients of the tracked parameters. `loss` must be 1x1.
  void backward(Var loss);

  const Matrix& value(std::size_t i) const { return nodes_[i].value; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  /// Gradient buffer of node `i`, allocated as zeros on first use.
  Matrix& grad(std::size_t i);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---- primitive operations -------------------------------------------------

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var exp(Var a);
/// Throws DomainError on non-positive entries.
Var log(Var a);
/// a + row, broadcasting a 1 x cols row vector over every row of a.
Var add_row(Var a, Var row);
Var sum(Var a);
Var mean(Var a);

/// Element-wise dispatch mirroring the primitive set above.
enum class Elementwise { Relu, Add, Sub, Mul, Scale, Exp, Log };
Var elementwise(Elementwise op, Var a, Var b = {}, double s = 1.0);

/// Block-wise sparse propagation, see kernels::spmm_blocks. `s` is shared so
/// the backward rule can reuse its transpose.
struct SharedCsr {
  explicit SharedCsr(CsrMatrix m);
  CsrMatrix forward;
  CsrMatrix transpose;
};
Var spmm_blocks(std::shared_ptr<const SharedCsr> s, Var x);

/// Rows are laid out as [outer][steps][width]; returns [outer][width] holding
/// the mean over `steps`.
Var block_mean(Var x, std::size_t steps, std::size_t width);
/// a + e broadcast over steps: `a` rows are [outer][steps][width], `e` rows
/// [outer][width]. The adjoint of block_mean up to the 1/steps factor.
Var add_broadcast_steps(Var a, Var e, std::size_t steps, std::size_t width);

/// out.row(r) = table.row(idx[r]); a negative index yields a zero row.
Var gather_rows(Var table, std::vector<long> idx);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

/// x / max(|x|, kNormFloor) per row: unit rows, and zero rows stay zero.
inline constexpr double kNormFloor = 1e-12;
Var l2_normalize_rows(Var a);
/// Row-wise dot products: n x 1.
Var row_dot(Var a, Var b);

/// Mean over rows of -log softmax(logits.row(i))[target[i]]. With
/// `exclude_target_from_denominator` the normaliser omits the target logit.
Var cross_entropy_rows(Var logits, std::vector<std::size_t> targets, bool exclude_target_from_denominator = false);

// ---- verification -------------------------------------------------------

using LossFn = std::function<Var(Tape&)>;

/// Compares analytic gradients of `f` against central differences
/// (f(p+eps) - f(p-eps)) / 2eps for every entry of every parameter and returns
/// the worst relative error |a - n| / max(|a|, |n|, floor).
double check_gradients(const LossFn& f, std::span<Parameter* const> params, double eps = 1e-5,
                       double floor = 1e-6);

}  // namespace contravirt::ad
