#include "contravirt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "contravirt/errors.hpp"
#include "contravirt/kernels.hpp"

namespace contravirt::ad {

Parameter::Parameter(std::string name_, Matrix value_)
    : name(std::move(name_)), value(std::move(value_)), grad(value.rows(), value.cols()) {}

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) {
    grad = Matrix(value.rows(), value.cols());
  } else {
    grad.fill(0.0);
  }
}

const Matrix& Var::value() const { return tape_->value(index_); }
bool Var::requires_grad() const { return tape_->requires_grad(index_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, true, {}, &p});
  return Var(this, nodes_.size() - 1);
}

Var Tape::frozen(const Parameter& p) { return constant(p.value); }

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
  bool tracked = false;
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw ContractError("operand belongs to a different tape");
    tracked = tracked || nodes_[v.index_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, tracked, tracked ? std::move(backward) : BackwardFn{}, nullptr});
  return Var(this, nodes_.size() - 1);
}

Matrix& Tape::grad(std::size_t i) {
  Node& n = nodes_[i];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ContractError("loss belongs to a different tape");
  const Matrix& lv = nodes_[loss.index_].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward needs a scalar loss, got " + lv.shape_string());
  }
  if (backward_done_) throw ContractError("backward already ran on this tape");
  backward_done_ = true;
  if (!nodes_[loss.index_].requires_grad) return;
  grad(loss.index_)(0, 0) = 1.0;
  for (std::size_t i = loss.index_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      if (!n.param->grad.same_shape(n.param->value)) n.param->zero_grad();
      const double* g = n.grad.data();
      double* pg = n.param->grad.data();
      for (std::size_t k = 0; k < n.grad.size(); ++k) pg[k] += g[k];
    }
  }
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.value().shape_string() + " * " + b.value().shape_string());
  }
  Matrix out;
  kernels::gemm_nn(a.value(), b.value(), out);
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) kernels::gemm_nt(g, t.value(ib), t.grad(ia), true);
    if (t.requires_grad(ib)) kernels::gemm_tn(t.value(ia), g, t.grad(ib), true);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + a.value().shape_string() + " * " + b.value().shape_string() + "^T");
  }
  Matrix out;
  kernels::gemm_nt(a.value(), b.value(), out);
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) kernels::gemm_nn(g, t.value(ib), t.grad(ia), true);
    if (t.requires_grad(ib)) kernels::gemm_tn(g, t.value(ia), t.grad(ib), true);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!t.requires_grad(in)) continue;
      Matrix& gi = t.grad(in);
      for (std::size_t k = 0; k < g.size(); ++k) gi[k] += g[k];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad(ib);
      for (std::size_t k = 0; k < g.size(); ++k) gb[k] -= g[k];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Matrix out(a.rows(), a.cols());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = a.value()[k] * b.value()[k];
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      const Matrix& bv = t.value(ib);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * bv[k];
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad(ib);
      const Matrix& av = t.value(ia);
      for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * av[k];
    }
  });
}

Var scale(Var a, double s) {
  Matrix out = map(a.value(), [s](double v) { return s * v; });
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += s * g[k];
  });
}

Var relu(Var a) {
  Matrix out = map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    Matrix& ga = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (av[k] > 0.0) ga[k] += g[k];
  });
}

Var exp(Var a) {
  Matrix out = map(a.value(), [](double v) { return std::exp(v); });
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * y[k];
  });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  Matrix out = map(a.value(), [](double v) { return std::log(v); });
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& av = t.value(ia);
    Matrix& ga = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] / av[k];
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: " + a.value().shape_string() + " + " + row.value().shape_string());
  }
  Matrix out = a.value();
  const std::size_t c = a.cols();
  const double* rv = row.value().data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double* o = out.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) o[j] += rv[j];
  }
  const std::size_t ia = a.index(), ir = row.index();
  return a.tape().record(std::move(out), {a, row}, [ia, ir](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
    }
    if (t.requires_grad(ir)) {
      Matrix& gr = t.grad(ir);
      const std::size_t cols = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < cols; ++j) gr[j] += g(r, j);
    }
  });
}

Var sum(Var a) {
  Matrix out(1, 1, contravirt::sum(a.value()));
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    Matrix& ga = t.grad(ia);
    for (auto& v : ga.values()) v += g;
  });
}

Var mean(Var a) {
  if (a.value().size() == 0) throw DimensionError("mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var elementwise(Elementwise op, Var a, Var b, double s) {
  switch (op) {
    case Elementwise::Relu: return relu(a);
    case Elementwise::Add: return add(a, b);
    case Elementwise::Sub: return sub(a, b);
    case Elementwise::Mul: return mul(a, b);
    case Elementwise::Scale: return scale(a, s);
    case Elementwise::Exp: return exp(a);
    case Elementwise::Log: return log(a);
  }
  throw ContractError("unknown elementwise op");
}

SharedCsr::SharedCsr(CsrMatrix m) : forward(std::move(m)), transpose(forward.transposed()) {}

Var spmm_blocks(std::shared_ptr<const SharedCsr> s, Var x) {
  Matrix out;
  kernels::spmm_blocks(s->forward, x.value(), out);
  const std::size_t ix = x.index();
  return x.tape().record(std::move(out), {x}, [ix, s = std::move(s)](Tape& t, std::size_t self) {
    kernels::spmm_blocks(s->transpose, t.grad(self), t.grad(ix), true);
  });
}

Var add_broadcast_steps(Var a, Var e, std::size_t steps, std::size_t width) {
  const std::size_t d = a.cols();
  if (steps == 0 || width == 0 || a.rows() % (steps * width) != 0) {
    throw DimensionError("add_broadcast_steps: " + std::to_string(a.rows()) + " rows not divisible by " +
                         std::to_string(steps) + "x" + std::to_string(width));
  }
  const std::size_t outer = a.rows() / (steps * width);
  if (e.rows() != outer * width || e.cols() != d) {
    throw DimensionError("add_broadcast_steps: " + e.value().shape_string() + " does not match " +
                         std::to_string(outer * width) + "x" + std::to_string(d));
  }
  Matrix out = a.value();
  const Matrix& ev = e.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t s = 0; s < steps; ++s)
      for (std::size_t w = 0; w < width; ++w) {
        const double* src = ev.data() + (o * width + w) * d;
        double* dst = out.data() + ((o * steps + s) * width + w) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
  const std::size_t ia = a.index(), ie = e.index();
  return a.tape().record(std::move(out), {a, e}, [ia, ie, steps, width, outer, d](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
    }
    if (t.requires_grad(ie)) {
      Matrix& ge = t.grad(ie);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t s = 0; s < steps; ++s)
          for (std::size_t w = 0; w < width; ++w) {
            const double* src = g.data() + ((o * steps + s) * width + w) * d;
            double* dst = ge.data() + (o * width + w) * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
          }
    }
  });
}

Var block_mean(Var x, std::size_t steps, std::size_t width) {
  const std::size_t d = x.cols();
  if (steps == 0 || width == 0 || x.rows() % (steps * width) != 0) {
    throw DimensionError("block_mean: " + std::to_string(x.rows()) + " rows not divisible by " +
                         std::to_string(steps) + "x" + std::to_string(width));
  }
  const std::size_t outer = x.rows() / (steps * width);
  Matrix out(outer * width, d);
  const double inv = 1.0 / static_cast<double>(steps);
  const Matrix& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t s = 0; s < steps; ++s) {
      for (std::size_t w = 0; w < width; ++w) {
        const double* src = xv.data() + ((o * steps + s) * width + w) * d;
        double* dst = out.data() + (o * width + w) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  }
  for (auto& v : out.values()) v *= inv;
  const std::size_t ix = x.index();
  return x.tape().record(std::move(out), {x}, [ix, steps, width, outer, d, inv](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad(ix);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t s = 0; s < steps; ++s)
        for (std::size_t w = 0; w < width; ++w) {
          const double* src = g.data() + (o * width + w) * d;
          double* dst = gx.data() + ((o * steps + s) * width + w) * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += inv * src[j];
        }
  });
}

Var gather_rows(Var table, std::vector<long> idx) {
  const std::size_t d = table.cols();
  const auto n = static_cast<long>(table.rows());
  Matrix out(idx.size(), d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " out of range");
    if (idx[r] < 0) continue;
    const auto src = table.value().row(static_cast<std::size_t>(idx[r]));
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t it = table.index();
  return table.tape().record(std::move(out), {table}, [it, idx = std::move(idx), d](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad(it);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      double* dst = gt.data() + static_cast<std::size_t>(idx[r]) * d;
      const double* src = g.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) throw DimensionError("slice_rows out of range");
  const std::size_t d = a.cols();
  Matrix out(count, d);
  std::copy_n(a.value().data() + begin * d, count * d, out.data());
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), {a}, [ia, begin, d](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    double* dst = t.grad(ia).data() + begin * d;
    for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw DimensionError("slice_cols out of range");
  const std::size_t n = a.rows(), d = a.cols();
  Matrix out(n, count);
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(a.value().data() + r * d + begin, count, out.data() + r * count);
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), {a}, [ia, begin, count, n, d](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < count; ++j) ga(r, begin + j) += g(r, j);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != n) throw DimensionError("concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix out(n, total);
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t r = 0; r < n; ++r)
      std::copy_n(p.value().data() + r * p.cols(), p.cols(), out.data() + r * total + off);
    offsets.push_back(off);
    ids.push_back(p.index());
    off += p.cols();
  }
  return parts[0].tape().record(std::move(out), parts,
                                [offsets, ids, n, total](Tape& t, std::size_t self) {
                                  const Matrix& g = t.grad(self);
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (!t.requires_grad(ids[k])) continue;
                                    Matrix& gp = t.grad(ids[k]);
                                    const std::size_t c = gp.cols();
                                    for (std::size_t r = 0; r < n; ++r)
                                      for (std::size_t j = 0; j < c; ++j) gp(r, j) += g.data()[r * total + offsets[k] + j];
                                  }
                                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t d = parts[0].cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.cols() != d) throw DimensionError("concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix out(total, d);
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + off * d);
    offsets.push_back(off);
    ids.push_back(p.index());
    off += p.rows();
  }
  return parts[0].tape().record(std::move(out), parts, [offsets, ids, d](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Matrix& gp = t.grad(ids[k]);
      const double* src = g.data() + offsets[k] * d;
      for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += src[j];
    }
  });
}

Var l2_normalize_rows(Var a) {
  const std::size_t n = a.rows(), d = a.cols();
  Matrix out(n, d);
  std::vector<double> norms(n);
  std::vector<bool> floors(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (double v : a.value().row(r)) s += v * v;
    // Floored like the usual x / max(|x|, eps): a dead (all-zero) embedding
    // stays zero instead of aborting the step.
    norms[r] = std::sqrt(s);
    if (std::isnan(norms[r])) throw DomainError("cannot normalise a non-finite row (row " + std::to_string(r) + ")");
    const bool floored = norms[r] < kNormFloor;
    if (floored) norms[r] = kNormFloor;
    floors[r] = floored;
    for (std::size_t j = 0; j < d; ++j) out(r, j) = a.value()(r, j) / norms[r];
  }
  const std::size_t ia = a.index();
  return a.tape().record(std::move(out), {a}, [ia, norms = std::move(norms), floors = std::move(floors), n, d](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t r = 0; r < n; ++r) {
      if (floors[r]) {
        for (std::size_t j = 0; j < d; ++j) ga(r, j) += g(r, j) / norms[r];
        continue;
      }
      double yg = 0.0;
      for (std::size_t j = 0; j < d; ++j) yg += y(r, j) * g(r, j);
      for (std::size_t j = 0; j < d; ++j) ga(r, j) += (g(r, j) - y(r, j) * yg) / norms[r];
    }
  });
}

Var row_dot(Var a, Var b) {
  require_same_shape(a, b, "row_dot");
  const std::size_t n = a.rows(), d = a.cols();
  Matrix out(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += a.value()(r, j) * b.value()(r, j);
    out(r, 0) = s;
  }
  const std::size_t ia = a.index(), ib = b.index();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, n, d](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      const Matrix& bv = t.value(ib);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) ga(r, j) += g(r, 0) * bv(r, j);
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad(ib);
      const Matrix& av = t.value(ia);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) gb(r, j) += g(r, 0) * av(r, j);
    }
  });
}

Var cross_entropy_rows(Var logits, std::vector<std::size_t> targets, bool exclude_target) {
  const std::size_t n = logits.rows(), m = logits.cols();
  if (targets.size() != n) throw DimensionError("cross_entropy_rows: one target per row required");
  if (n == 0) throw DimensionError("cross_entropy_rows: no rows");
  if (exclude_target && m < 2) {
    throw ConfigError("cross_entropy_rows: denominator is empty once the target is excluded");
  }
  const Matrix& l = logits.value();
  // probs holds the softmax over the denominator set for each row.
  Matrix probs(n, m);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= m) throw DimensionError("cross_entropy_rows: target out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (!(exclude_target && j == targets[r])) mx = std::max(mx, l(r, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (exclude_target && j == targets[r]) continue;
      probs(r, j) = std::exp(l(r, j) - mx);
      z += probs(r, j);
    }
    for (std::size_t j = 0; j < m; ++j) probs(r, j) /= z;
    total += mx + std::log(z) - l(r, targets[r]);
  }
  Matrix out(1, 1, total / static_cast<double>(n));
  const std::size_t il = logits.index();
  return logits.tape().record(
      std::move(out), {logits}, [il, probs = std::move(probs), targets = std::move(targets), n, m](Tape& t, std::size_t self) {
        const double g = t.grad(self)(0, 0) / static_cast<double>(n);
        Matrix& gl = t.grad(il);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < m; ++j) gl(r, j) += g * probs(r, j);
          gl(r, targets[r]) -= g;
        }
      });
}

namespace {
double evaluate_loss(const LossFn& f) {
  Tape t;
  Var l = f(t);
  if (l.rows() != 1 || l.cols() != 1) throw ContractError("loss function must return a scalar");
  const double v = l.value()(0, 0);
  if (!std::isfinite(v)) throw NumericalError("non-finite loss during gradient check");
  return v;
}
}  // namespace

double check_gradients(const LossFn& f, std::span<Parameter* const> params, double eps, double floor) {
  if (!(eps > 0.0)) throw ContractError("check_gradients: eps must be positive");
  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    Var l = f(t);
    if (!std::isfinite(l.value()(0, 0))) throw NumericalError("non-finite loss during gradient check");
    t.backward(l);
  }
  double worst = 0.0;
  for (Parameter* p : params) {
    const Matrix analytic = p->grad;
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double saved = p->value[k];
      p->value[k] = saved + eps;
      const double fp = evaluate_loss(f);
      p->value[k] = saved - eps;
      const double fm = evaluate_loss(f);
      p->value[k] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace contravirt::ad
