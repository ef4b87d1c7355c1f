#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "maw/linalg.hpp"

namespace maw::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while the tape lives
/// and has not been reset.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
};

struct Param {
  Matrix value;
  bool trainable = true;
};

/// Named parameter matrices plus non-trainable buffers (batch-norm running
/// statistics). Ordered by name so iteration and serialization are stable.
class ParamStore {
 public:
  Matrix& add(const std::string& name, Matrix init, bool trainable = true);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  Matrix& value(const std::string& name) { return at(name).value; }
  const Matrix& value(const std::string& name) const { return at(name).value; }
  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names(const std::string& prefix = "") const;
  const std::map<std::string, Param>& all() const { return params_; }
  bool operator==(const ParamStore& other) const;

 private:
  std::map<std::string, Param> params_;
};

using Gradients = std::map<std::string, Matrix>;

enum class Op : std::uint8_t {
  Constant,
  Leaf,
  Parameter,
  Affine,
  MatMul,
  Transpose,
  Add,
  Sub,
  Scale,
  AddScalar,
  Hadamard,
  Relu,
  LeakyRelu,
  Exp,
  Softplus,
  Square,
  BatchNorm,
  RowL2NormOfDiff,
  RowSqNormOfDiff,
  Mean,
  Sum,
  UnitNormalize,
  SliceCols,
  SliceRows,
  ConcatRows,
  RowSelect,
  BatchMatVec,
  DiagSandwich,
  DiagSandwichRows,
  SymEigValues,
  SymEigVectors,
  TruncateSpectrumRows,
};

const char* op_name(Op op);

enum class BnMode { Train, Eval };

struct BatchNormOptions {
  BnMode mode = BnMode::Train;
  double momentum = 0.9;
  double epsilon = 1e-5;
};

/// Smallest eigen-gap the eigen backward passes divide by.
inline constexpr double kEigenGapClamp = 1e-6;

/// Append-only record of a computation. Parents always precede children, so
/// the reverse sweep is a single pass over the node vector. A tape supports
/// exactly one backward pass per forward build; call reset() to reuse it.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant_scalar(double value);
  /// Differentiable input that is not a named parameter (gradient checks).
  Var leaf(Matrix value);
  /// Parameter node; repeated calls with the same name return the same node.
  Var param(const ParamStore& store, const std::string& name);

  /// Reverse sweep from a 1x1 root. Returns d(root)/d(p) for every parameter
  /// registered on this tape, zero for those the root does not depend on.
  Gradients backward(Var root);

  void reset();

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  Op op(std::size_t id) const { return nodes_[id].op; }
  /// Adjoint after backward(); zero matrix if the node was not reached.
  Matrix adjoint(Var v) const;

  /// Closest distance of any relu/leaky-relu input to its kink.
  double kink_margin() const { return kink_margin_; }
  /// Smallest unclamped eigen-gap seen by an eigen op.
  double eigen_gap_margin() const { return eigen_gap_margin_; }

  // Building blocks for op implementations.
  Var push(Op op, Matrix value, std::vector<std::size_t> parents, BackwardFn backward);
  const Matrix& adj(std::size_t id) const { return nodes_[id].adjoint; }
  Matrix& grad_slot(std::size_t id);
  bool has_adj(std::size_t id) const { return nodes_[id].adjoint.size() != 0; }
  void note_kink(double distance);
  void note_eigen_gap(double gap);

 private:
  struct Node {
    Op op;
    Matrix value;
    Matrix adjoint;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> param_ids_;
  std::map<std::size_t, std::string> param_names_;
  bool backward_done_ = false;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  double eigen_gap_margin_ = std::numeric_limits<double>::infinity();
};

// Dense layer: x (n x in) * w (in x out) + b (1 x out, broadcast over rows).
Var affine(Var x, Var w, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var hadamard(Var a, Var b);
Var relu(Var x);
Var leaky_relu(Var x, double slope);
Var exp(Var x);
Var softplus(Var x);
Var square(Var x);

/// Column-wise batch normalization. Train mode uses batch statistics (batch
/// of at least 2 rows) and updates the running buffers in place; eval mode
/// uses the running buffers.
Var batch_norm(Var x, Var gamma, Var beta, Matrix& running_mean, Matrix& running_var,
               const BatchNormOptions& options);

/// Per-row Euclidean norm of x - y, shape n x 1.
Var row_l2norm_of_diff(Var x, Var y);
/// Per-row squared Euclidean norm of x - y, shape n x 1.
Var row_sq_norm_of_diff(Var x, Var y);
Var mean(Var x);
Var sum(Var x);
/// Scales each row to unit L2 norm; all-zero rows map to zero.
Var unit_normalize(Var x);

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var x, Eigen::Index start, Eigen::Index count);
Var concat_rows(const std::vector<Var>& parts);
/// Row i comes from `a` when take_a[i] is true, otherwise from `b`.
Var row_select(Var a, Var b, const std::vector<bool>& take_a);

/// Row i of `mats` is a row-major d x d matrix M_i; row i of the result is
/// M_i * e_i where e_i is row i of `vecs`.
Var batch_matvec(Var mats, Var vecs);

/// a^T diag(s) a for a (k x d) and s with k entries.
Var diag_sandwich(Var a, Var s);
/// Row i of the result is a^T diag(s_i) a flattened row-major (n x d*d).
Var diag_sandwich_rows(Var a, Var s);

struct EigVars {
  Var values;   // d x 1, descending
  Var vectors;  // d x d, columns
};
EigVars sym_eig_diff(Var m);

/// Row-wise spectral truncation of flattened symmetric d x d matrices: keeps
/// the `keep` largest eigenvalues (signed, descending) and zeroes the rest.
Var truncate_spectrum_rows(Var mats, Eigen::Index dim, Eigen::Index keep);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(double s, Var a);

}  // namespace maw::ad
