#include "maw/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "maw/errors.hpp"

namespace maw::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a) + " and " + shape_str(b));
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw DomainError("autodiff: variables live on different tapes");
}

double clamp_gap(double gap) {
  const double sign = gap >= 0.0 ? 1.0 : -1.0;
  return sign * std::max(std::abs(gap), kEigenGapClamp);
}

Matrix unflatten(const Eigen::Ref<const Eigen::RowVectorXd>& row, Eigen::Index dim) {
  Matrix m(dim, dim);
  for (Eigen::Index p = 0; p < dim; ++p)
    for (Eigen::Index q = 0; q < dim; ++q) m(p, q) = row(p * dim + q);
  return m;
}

void flatten_into(const Matrix& m, Eigen::Ref<Eigen::RowVectorXd> row) {
  const Eigen::Index dim = m.rows();
  for (Eigen::Index p = 0; p < dim; ++p)
    for (Eigen::Index q = 0; q < dim; ++q) row(p * dim + q) = m(p, q);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Leaf: return "leaf";
    case Op::Parameter: return "parameter";
    case Op::Affine: return "affine";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Hadamard: return "hadamard";
    case Op::Relu: return "relu";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Exp: return "exp";
    case Op::Softplus: return "softplus";
    case Op::Square: return "square";
    case Op::BatchNorm: return "batch_norm";
    case Op::RowL2NormOfDiff: return "row_l2norm_of_diff";
    case Op::RowSqNormOfDiff: return "row_sq_norm_of_diff";
    case Op::Mean: return "mean";
    case Op::Sum: return "sum";
    case Op::UnitNormalize: return "unit_normalize";
    case Op::SliceCols: return "slice_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::ConcatRows: return "concat_rows";
    case Op::RowSelect: return "row_select";
    case Op::BatchMatVec: return "batch_matvec";
    case Op::DiagSandwich: return "diag_sandwich";
    case Op::DiagSandwichRows: return "diag_sandwich_rows";
    case Op::SymEigValues: return "sym_eig_values";
    case Op::SymEigVectors: return "sym_eig_vectors";
    case Op::TruncateSpectrumRows: return "truncate_spectrum_rows";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ParamStore

Matrix& ParamStore::add(const std::string& name, Matrix init, bool trainable) {
  if (params_.count(name) != 0) throw DomainError("ParamStore: duplicate parameter " + name);
  auto [it, inserted] = params_.emplace(name, Param{std::move(init), trainable});
  return it->second.value;
}

Param& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw DomainError("ParamStore: unknown parameter " + name);
  return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DomainError("ParamStore: unknown parameter " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::trainable_names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params_) {
    if (p.trainable && name.compare(0, prefix.size(), prefix) == 0) out.push_back(name);
  }
  return out;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto it = other.params_.begin();
  for (const auto& [name, p] : params_) {
    if (name != it->first || p.trainable != it->second.trainable) return false;
    if (p.value.rows() != it->second.value.rows() || p.value.cols() != it->second.value.cols()) return false;
    if (p.value != it->second.value) return false;
    ++it;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("Var::scalar: value is " + shape_str(v));
  return v(0, 0);
}

Var Tape::push(Op op, Matrix value, std::vector<std::size_t> parents, BackwardFn backward) {
  if (backward_done_) throw DomainError("Tape: cannot record after backward(); call reset()");
  nodes_.push_back(Node{op, std::move(value), Matrix(), std::move(parents), std::move(backward)});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(Op::Constant, std::move(value), {}, nullptr); }

Var Tape::constant_scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Tape::leaf(Matrix value) {
  Var v = push(Op::Leaf, std::move(value), {}, nullptr);
  return v;
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{this, it->second};
  Var v = push(Op::Parameter, store.value(name), {}, nullptr);
  param_ids_[name] = v.id;
  param_names_[v.id] = name;
  return v;
}

Matrix& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.adjoint.size() == 0) n.adjoint = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

void Tape::note_kink(double distance) { kink_margin_ = std::min(kink_margin_, distance); }

void Tape::note_eigen_gap(double gap) { eigen_gap_margin_ = std::min(eigen_gap_margin_, gap); }

Gradients Tape::backward(Var root) {
  if (root.tape != this) throw DomainError("Tape::backward: root belongs to another tape");
  if (backward_done_) throw DomainError("Tape::backward: tape already consumed; call reset()");
  const Matrix& rv = nodes_[root.id].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw DomainError("Tape::backward: root must be scalar, got " + shape_str(rv));
  }
  backward_done_ = true;
  grad_slot(root.id)(0, 0) = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.adjoint.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
  Gradients grads;
  for (const auto& [id, name] : param_names_) {
    const Node& n = nodes_[id];
    grads[name] = n.adjoint.size() != 0 ? n.adjoint : Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return grads;
}

Matrix Tape::adjoint(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.adjoint.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

void Tape::reset() {
  nodes_.clear();
  param_ids_.clear();
  param_names_.clear();
  backward_done_ = false;
  kink_margin_ = std::numeric_limits<double>::infinity();
  eigen_gap_margin_ = std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Elementwise and linear ops

Var affine(Var x, Var w, Var b) {
  require_same_tape(x, w);
  require_same_tape(x, b);
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Matrix& bv = b.value();
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeError("affine: x " + shape_str(xv) + ", w " + shape_str(wv) + ", b " + shape_str(bv));
  }
  Matrix out = xv * wv;
  out.rowwise() += bv.row(0);
  const std::size_t xi = x.id, wi = w.id, bi = b.id;
  return x.tape->push(Op::Affine, std::move(out), {xi, wi, bi}, [xi, wi, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    if (t.op(xi) != Op::Constant) t.grad_slot(xi).noalias() += g * t.value(wi).transpose();
    t.grad_slot(wi).noalias() += t.value(xi).transpose() * g;
    t.grad_slot(bi) += g.colwise().sum();
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Matrix out = linalg::matmul(a.value(), b.value());
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push(Op::MatMul, std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    t.grad_slot(ai).noalias() += g * t.value(bi).transpose();
    t.grad_slot(bi).noalias() += t.value(ai).transpose() * g;
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  const std::size_t ai = a.id;
  return a.tape->push(Op::Transpose, std::move(out), {ai}, [ai](Tape& t, std::size_t self) {
    t.grad_slot(ai) += t.adj(self).transpose();
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value() + b.value();
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push(Op::Add, std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    t.grad_slot(ai) += t.adj(self);
    t.grad_slot(bi) += t.adj(self);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value() - b.value();
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push(Op::Sub, std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    t.grad_slot(ai) += t.adj(self);
    t.grad_slot(bi) -= t.adj(self);
  });
}

Var scale(Var a, double factor) {
  Matrix out = factor * a.value();
  const std::size_t ai = a.id;
  return a.tape->push(Op::Scale, std::move(out), {ai}, [ai, factor](Tape& t, std::size_t self) {
    t.grad_slot(ai) += factor * t.adj(self);
  });
}

Var add_scalar(Var a, double offset) {
  Matrix out = a.value().array() + offset;
  const std::size_t ai = a.id;
  return a.tape->push(Op::AddScalar, std::move(out), {ai}, [ai](Tape& t, std::size_t self) {
    t.grad_slot(ai) += t.adj(self);
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push(Op::Hadamard, std::move(out), {ai, bi}, [ai, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    t.grad_slot(ai) += g.cwiseProduct(t.value(bi));
    t.grad_slot(bi) += g.cwiseProduct(t.value(ai));
  });
}

Var relu(Var x) {
  const Matrix& xv = x.value();
  x.tape->note_kink(xv.size() ? xv.cwiseAbs().minCoeff() : std::numeric_limits<double>::infinity());
  Matrix out = xv.cwiseMax(0.0);
  const std::size_t xi = x.id;
  return x.tape->push(Op::Relu, std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    const Matrix& xv = t.value(xi);
    t.grad_slot(xi) += (xv.array() > 0.0).select(g, 0.0);
  });
}

Var leaky_relu(Var x, double slope) {
  const Matrix& xv = x.value();
  x.tape->note_kink(xv.size() ? xv.cwiseAbs().minCoeff() : std::numeric_limits<double>::infinity());
  Matrix out = (xv.array() > 0.0).select(xv, slope * xv);
  const std::size_t xi = x.id;
  return x.tape->push(Op::LeakyRelu, std::move(out), {xi}, [xi, slope](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    const Matrix& xv = t.value(xi);
    t.grad_slot(xi) += (xv.array() > 0.0).select(g, slope * g);
  });
}

Var exp(Var x) {
  Matrix out = x.value().array().exp();
  const std::size_t xi = x.id;
  return x.tape->push(Op::Exp, std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
    t.grad_slot(xi) += t.adj(self).cwiseProduct(t.value(self));
  });
}

Var softplus(Var x) {
  const Matrix& xv = x.value();
  Matrix out = xv.cwiseMax(0.0).array() + (-xv.cwiseAbs().array()).exp().log1p();
  const std::size_t xi = x.id;
  return x.tape->push(Op::Softplus, std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
    const Matrix& xv = t.value(xi);
    Matrix sig = (1.0 + (-xv.array()).exp()).inverse();
    t.grad_slot(xi) += t.adj(self).cwiseProduct(sig);
  });
}

Var square(Var x) {
  Matrix out = x.value().array().square();
  const std::size_t xi = x.id;
  return x.tape->push(Op::Square, std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
    t.grad_slot(xi) += 2.0 * t.adj(self).cwiseProduct(t.value(xi));
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

Var batch_norm(Var x, Var gamma, Var beta, Matrix& running_mean, Matrix& running_var,
               const BatchNormOptions& options) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index f = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != f || beta.rows() != 1 || beta.cols() != f ||
      running_mean.rows() != 1 || running_mean.cols() != f || running_var.rows() != 1 ||
      running_var.cols() != f) {
    throw ShapeError("batch_norm: parameter shapes do not match " + std::to_string(f) + " features");
  }
  const double eps = options.epsilon;

  if (options.mode == BnMode::Eval) {
    Eigen::RowVectorXd inv_std = (running_var.row(0).array() + eps).rsqrt();
    Matrix xhat = (xv.rowwise() - running_mean.row(0)).array().rowwise() * inv_std.array();
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                 beta.value().row(0).array();
    const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
    return x.tape->push(Op::BatchNorm, std::move(out), {xi, gi, bi},
                        [xi, gi, bi, inv_std, xhat = std::move(xhat)](Tape& t, std::size_t self) {
                          const Matrix& g = t.adj(self);
                          const Eigen::RowVectorXd gv = t.value(gi).row(0);
                          if (t.op(xi) != Op::Constant)
                            t.grad_slot(xi) += (g.array().rowwise() * (gv.array() * inv_std.array())).matrix();
                          t.grad_slot(gi) += g.cwiseProduct(xhat).colwise().sum();
                          t.grad_slot(bi) += g.colwise().sum();
                        });
  }

  if (n < 2) throw DomainError("batch_norm: training mode needs a batch of at least 2 rows");
  const Eigen::RowVectorXd mu = xv.colwise().mean();
  Matrix centered = xv.rowwise() - mu;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();

  running_mean = options.momentum * running_mean + (1.0 - options.momentum) * Matrix(mu);
  running_var = options.momentum * running_var + (1.0 - options.momentum) * Matrix(var);

  const std::size_t xi = x.id, gi = gamma.id, bi = beta.id;
  return x.tape->push(
      Op::BatchNorm, std::move(out), {xi, gi, bi},
      [xi, gi, bi, inv_std, xhat = std::move(xhat)](Tape& t, std::size_t self) {
        const Matrix& g = t.adj(self);
        const double rows = static_cast<double>(g.rows());
        const Eigen::RowVectorXd gv = t.value(gi).row(0);
        t.grad_slot(gi) += g.cwiseProduct(xhat).colwise().sum();
        t.grad_slot(bi) += g.colwise().sum();
        if (t.op(xi) == Op::Constant) return;
        // dxhat = g * gamma; dx = inv_std/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
        Matrix dxhat = g.array().rowwise() * gv.array();
        const Eigen::RowVectorXd s1 = dxhat.colwise().sum();
        const Eigen::RowVectorXd s2 = dxhat.cwiseProduct(xhat).colwise().sum();
        Matrix dx = (rows * dxhat).rowwise() - s1;
        dx -= (xhat.array().rowwise() * s2.array()).matrix();
        dx = dx.array().rowwise() * (inv_std.array() / rows);
        t.grad_slot(xi) += dx;
      });
}

// ---------------------------------------------------------------------------
// Reductions and norms

Var row_l2norm_of_diff(Var x, Var y) {
  require_same_tape(x, y);
  require_same_shape(x.value(), y.value(), "row_l2norm_of_diff");
  Matrix diff = x.value() - y.value();
  Matrix out = diff.rowwise().norm();
  const std::size_t xi = x.id, yi = y.id;
  return x.tape->push(Op::RowL2NormOfDiff, std::move(out), {xi, yi},
                      [xi, yi, diff = std::move(diff)](Tape& t, std::size_t self) {
                        const Matrix& g = t.adj(self);
                        const Matrix& r = t.value(self);
                        Matrix dir = Matrix::Zero(diff.rows(), diff.cols());
                        for (Eigen::Index i = 0; i < diff.rows(); ++i) {
                          if (r(i, 0) > 0.0) dir.row(i) = diff.row(i) * (g(i, 0) / r(i, 0));
                        }
                        if (t.op(xi) != Op::Constant) t.grad_slot(xi) += dir;
                        if (t.op(yi) != Op::Constant) t.grad_slot(yi) -= dir;
                      });
}

Var row_sq_norm_of_diff(Var x, Var y) {
  require_same_tape(x, y);
  require_same_shape(x.value(), y.value(), "row_sq_norm_of_diff");
  Matrix diff = x.value() - y.value();
  Matrix out = diff.rowwise().squaredNorm();
  const std::size_t xi = x.id, yi = y.id;
  return x.tape->push(Op::RowSqNormOfDiff, std::move(out), {xi, yi},
                      [xi, yi, diff = std::move(diff)](Tape& t, std::size_t self) {
                        const Matrix& g = t.adj(self);
                        Matrix dir = diff.array().colwise() * (2.0 * g.col(0).array());
                        if (t.op(xi) != Op::Constant) t.grad_slot(xi) += dir;
                        if (t.op(yi) != Op::Constant) t.grad_slot(yi) -= dir;
                      });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeError("mean: empty input");
  Matrix out(1, 1);
  out(0, 0) = x.value().sum() / n;
  const std::size_t xi = x.id;
  return x.tape->push(Op::Mean, std::move(out), {xi}, [xi, n](Tape& t, std::size_t self) {
    t.grad_slot(xi).array() += t.adj(self)(0, 0) / n;
  });
}

Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const std::size_t xi = x.id;
  return x.tape->push(Op::Sum, std::move(out), {xi}, [xi](Tape& t, std::size_t self) {
    t.grad_slot(xi).array() += t.adj(self)(0, 0);
  });
}

Var unit_normalize(Var x) {
  const Matrix& xv = x.value();
  Eigen::VectorXd norms = xv.rowwise().norm();
  Matrix out = Matrix::Zero(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    if (norms(i) > 0.0) out.row(i) = xv.row(i) / norms(i);
  }
  const std::size_t xi = x.id;
  return x.tape->push(Op::UnitNormalize, std::move(out), {xi},
                      [xi, norms = std::move(norms)](Tape& t, std::size_t self) {
                        const Matrix& g = t.adj(self);
                        const Matrix& y = t.value(self);
                        Matrix& dx = t.grad_slot(xi);
                        for (Eigen::Index i = 0; i < y.rows(); ++i) {
                          if (norms(i) == 0.0) continue;
                          const double proj = y.row(i).dot(g.row(i));
                          dx.row(i) += (g.row(i) - proj * y.row(i)) / norms(i);
                        }
                      });
}

// ---------------------------------------------------------------------------
// Structural ops

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  const Matrix& xv = x.value();
  if (start < 0 || count <= 0 || start + count > xv.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") out of " + shape_str(xv));
  }
  Matrix out = xv.middleCols(start, count);
  const std::size_t xi = x.id;
  return x.tape->push(Op::SliceCols, std::move(out), {xi}, [xi, start, count](Tape& t, std::size_t self) {
    t.grad_slot(xi).middleCols(start, count) += t.adj(self);
  });
}

Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
  const Matrix& xv = x.value();
  if (start < 0 || count <= 0 || start + count > xv.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") out of " + shape_str(xv));
  }
  Matrix out = xv.middleRows(start, count);
  const std::size_t xi = x.id;
  return x.tape->push(Op::SliceRows, std::move(out), {xi}, [xi, start, count](Tape& t, std::size_t self) {
    t.grad_slot(xi).middleRows(start, count) += t.adj(self);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> offsets;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    offsets.push_back(rows);
    rows += p.rows();
    ids.push_back(p.id);
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) out.middleRows(offsets[k], parts[k].rows()) = parts[k].value();
  std::vector<std::size_t> parents = ids;
  return parts.front().tape->push(
      Op::ConcatRows, std::move(out), std::move(parents),
      [ids, offsets](Tape& t, std::size_t self) {
        const Matrix& g = t.adj(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.op(ids[k]) == Op::Constant) continue;
          const Eigen::Index r = t.value(ids[k]).rows();
          t.grad_slot(ids[k]) += g.middleRows(offsets[k], r);
        }
      });
}

Var row_select(Var a, Var b, const std::vector<bool>& take_a) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "row_select");
  if (static_cast<Eigen::Index>(take_a.size()) != a.rows()) throw ShapeError("row_select: mask length");
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) out.row(i) = take_a[i] ? a.value().row(i) : b.value().row(i);
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->push(Op::RowSelect, std::move(out), {ai, bi}, [ai, bi, take_a](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    Matrix& ga = t.grad_slot(ai);
    Matrix& gb = t.grad_slot(bi);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (take_a[i]) ga.row(i) += g.row(i);
      else gb.row(i) += g.row(i);
    }
  });
}

Var batch_matvec(Var mats, Var vecs) {
  require_same_tape(mats, vecs);
  const Matrix& mv = mats.value();
  const Matrix& ev = vecs.value();
  const Eigen::Index d = ev.cols();
  if (mv.rows() != ev.rows() || mv.cols() != d * d) {
    throw ShapeError("batch_matvec: mats " + shape_str(mv) + ", vecs " + shape_str(ev));
  }
  Matrix out(ev.rows(), d);
  for (Eigen::Index i = 0; i < ev.rows(); ++i) {
    for (Eigen::Index p = 0; p < d; ++p) {
      double acc = 0.0;
      for (Eigen::Index q = 0; q < d; ++q) acc += mv(i, p * d + q) * ev(i, q);
      out(i, p) = acc;
    }
  }
  const std::size_t mi = mats.id, ei = vecs.id;
  return mats.tape->push(Op::BatchMatVec, std::move(out), {mi, ei}, [mi, ei, d](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    const Matrix& mv = t.value(mi);
    const Matrix& ev = t.value(ei);
    Matrix& gm = t.grad_slot(mi);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index p = 0; p < d; ++p)
        for (Eigen::Index q = 0; q < d; ++q) gm(i, p * d + q) += g(i, p) * ev(i, q);
    if (t.op(ei) == Op::Constant) return;
    Matrix& ge = t.grad_slot(ei);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index p = 0; p < d; ++p)
        for (Eigen::Index q = 0; q < d; ++q) ge(i, q) += mv(i, p * d + q) * g(i, p);
  });
}

// ---------------------------------------------------------------------------
// Spectral ops

Var diag_sandwich(Var a, Var s) {
  require_same_tape(a, s);
  const Matrix& av = a.value();
  const Matrix& sv = s.value();
  if (sv.size() != av.rows() || (sv.rows() != 1 && sv.cols() != 1)) {
    throw ShapeError("diag_sandwich: a " + shape_str(av) + ", s " + shape_str(sv));
  }
  const Eigen::Index d = av.cols();
  const Eigen::Map<const Eigen::VectorXd> svec(sv.data(), sv.size());
  Matrix out(d, d);
  for (Eigen::Index p = 0; p < d; ++p) {
    for (Eigen::Index q = p; q < d; ++q) {
      const double v = (av.col(p).array() * svec.array() * av.col(q).array()).sum();
      out(p, q) = v;
      out(q, p) = v;
    }
  }
  const std::size_t ai = a.id, si = s.id;
  return a.tape->push(Op::DiagSandwich, std::move(out), {ai, si}, [ai, si](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    const Matrix& av = t.value(ai);
    const Matrix& sv = t.value(si);
    const Eigen::Map<const Eigen::VectorXd> svec(sv.data(), sv.size());
    const Matrix h = g + g.transpose();
    t.grad_slot(ai) += svec.asDiagonal() * (av * h.transpose());
    const Matrix ag = av * g;  // k x d
    Eigen::VectorXd ds = (ag.array() * av.array()).rowwise().sum();
    Matrix& gs = t.grad_slot(si);
    for (Eigen::Index k = 0; k < ds.size(); ++k) gs.data()[k] += ds(k);
  });
}

Var diag_sandwich_rows(Var a, Var s) {
  require_same_tape(a, s);
  const Matrix& av = a.value();
  const Matrix& sv = s.value();
  if (sv.cols() != av.rows()) throw ShapeError("diag_sandwich_rows: a " + shape_str(av) + ", s " + shape_str(sv));
  const Eigen::Index d = av.cols();
  const Eigen::Index k = av.rows();
  Matrix pairs(k, d * d);
  for (Eigen::Index p = 0; p < d; ++p)
    for (Eigen::Index q = 0; q < d; ++q) pairs.col(p * d + q) = av.col(p).cwiseProduct(av.col(q));
  Matrix out = sv * pairs;
  const std::size_t ai = a.id, si = s.id;
  return a.tape->push(Op::DiagSandwichRows, std::move(out), {ai, si},
                      [ai, si, d, pairs = std::move(pairs)](Tape& t, std::size_t self) {
                        const Matrix& g = t.adj(self);
                        const Matrix& av = t.value(ai);
                        const Matrix& sv = t.value(si);
                        if (t.op(si) != Op::Constant) t.grad_slot(si).noalias() += g * pairs.transpose();
                        const Matrix w = sv.transpose() * g;  // k x d*d
                        Matrix& ga = t.grad_slot(ai);
                        for (Eigen::Index p = 0; p < d; ++p)
                          for (Eigen::Index q = 0; q < d; ++q)
                            ga.col(p) += (w.col(p * d + q) + w.col(q * d + p)).cwiseProduct(av.col(q));
                      });
}

EigVars sym_eig_diff(Var m) {
  auto eig = std::make_shared<const linalg::SymEig>(linalg::sym_eig(m.value()));
  const Eigen::Index d = eig->eigenvalues.size();
  for (Eigen::Index i = 0; i + 1 < d; ++i) m.tape->note_eigen_gap(eig->eigenvalues(i) - eig->eigenvalues(i + 1));
  const std::size_t mi = m.id;

  Matrix values = eig->eigenvalues;
  Var vals = m.tape->push(Op::SymEigValues, std::move(values), {mi}, [mi, eig](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    const Matrix& u = eig->eigenvectors;
    Eigen::VectorXd gl = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    t.grad_slot(mi) += u * gl.asDiagonal() * u.transpose();
  });

  Matrix vectors = eig->eigenvectors;
  Var vecs = m.tape->push(Op::SymEigVectors, std::move(vectors), {mi}, [mi, eig, d](Tape& t, std::size_t self) {
    const Matrix& g = t.adj(self);
    const Matrix& u = eig->eigenvectors;
    const Eigen::VectorXd& lam = eig->eigenvalues;
    Matrix inner = u.transpose() * g;
    for (Eigen::Index i = 0; i < d; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) {
        inner(i, j) = (i == j) ? 0.0 : inner(i, j) / clamp_gap(lam(j) - lam(i));
      }
    }
    const Matrix gm = u * inner * u.transpose();
    t.grad_slot(mi) += 0.5 * (gm + gm.transpose());
  });
  return EigVars{vals, vecs};
}

Var truncate_spectrum_rows(Var mats, Eigen::Index dim, Eigen::Index keep) {
  const Matrix& mv = mats.value();
  if (mv.cols() != dim * dim) throw ShapeError("truncate_spectrum_rows: expected " + std::to_string(dim * dim) + " columns");
  if (keep < 0 || keep > dim) throw DomainError("truncate_spectrum_rows: keep out of range");
  const Eigen::Index n = mv.rows();
  auto decomps = std::make_shared<std::vector<linalg::SymEig>>();
  decomps->reserve(static_cast<std::size_t>(n));
  Matrix out(n, dim * dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    linalg::SymEig eig = linalg::sym_eig(unflatten(mv.row(i), dim));
    if (keep > 0 && keep < dim) mats.tape->note_eigen_gap(eig.eigenvalues(keep - 1) - eig.eigenvalues(keep));
    Eigen::VectorXd kept = eig.eigenvalues;
    for (Eigen::Index j = keep; j < dim; ++j) kept(j) = 0.0;
    Matrix trunc = eig.eigenvectors * kept.asDiagonal() * eig.eigenvectors.transpose();
    trunc = linalg::symmetrize(trunc);
    flatten_into(trunc, out.row(i));
    decomps->push_back(std::move(eig));
  }
  const std::size_t mi = mats.id;
  return mats.tape->push(
      Op::TruncateSpectrumRows, std::move(out), {mi}, [mi, dim, keep, decomps](Tape& t, std::size_t self) {
        const Matrix& g = t.adj(self);
        Matrix& gm = t.grad_slot(mi);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const linalg::SymEig& eig = (*decomps)[static_cast<std::size_t>(i)];
          const Matrix& u = eig.eigenvectors;
          const Eigen::VectorXd& lam = eig.eigenvalues;
          Matrix gi = unflatten(g.row(i), dim);
          gi = linalg::symmetrize(gi);
          Matrix b = u.transpose() * gi * u;
          // Divided differences of f(lambda) = lambda on kept indices, 0 otherwise.
          for (Eigen::Index p = 0; p < dim; ++p) {
            for (Eigen::Index q = 0; q < dim; ++q) {
              const bool kp = p < keep;
              const bool kq = q < keep;
              double factor;
              if (kp && kq) factor = 1.0;
              else if (!kp && !kq) factor = 0.0;
              else {
                const double fp = kp ? lam(p) : 0.0;
                const double fq = kq ? lam(q) : 0.0;
                factor = (fp - fq) / clamp_gap(lam(p) - lam(q));
              }
              b(p, q) *= factor;
            }
          }
          Matrix back = u * b * u.transpose();
          Eigen::RowVectorXd flat(dim * dim);
          flatten_into(back, flat);
          gm.row(i) += flat;
        }
      });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(double s, Var a) { return scale(a, s); }

}  // namespace maw::ad
