#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maw/autodiff.hpp"
#include "maw/linalg.hpp"

namespace maw::nets {

using Rng = std::mt19937_64;

enum class Activation { None, Relu, LeakyRelu };

enum class FinalTransform { None, UnitNormalize, SplitFour };

struct MlpSpec {
  int input_dim = 1;
  std::vector<int> widths;
  std::vector<Activation> activations;  // one per layer; the last is normally None
  double leaky_slope = 0.2;
  bool batch_norm = true;               // applied to hidden layers
  FinalTransform final_transform = FinalTransform::None;

  void validate() const;
};

/// Hidden layers use `hidden` and the output layer is linear.
MlpSpec make_mlp_spec(int input_dim, std::vector<int> widths, Activation hidden, bool batch_norm,
                      FinalTransform final_transform, double leaky_slope = 0.2);

/// Uniform on [-L, L] with L = sqrt(6 / (rows + cols)).
Matrix glorot_init(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Fully connected network whose parameters live in a ParamStore under
/// `<prefix>.l<k>.{W,b,bn_gamma,bn_beta,bn_mean,bn_var}`.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, MlpSpec spec);

  void init(ad::ParamStore& store, Rng& rng) const;
  /// Training-mode pass; batch-norm running statistics in `store` are updated.
  ad::Var forward(ad::Tape& tape, ad::ParamStore& store, ad::Var x) const;
  /// Inference pass using the stored running statistics; `store` is untouched.
  ad::Var forward_eval(ad::Tape& tape, const ad::ParamStore& store, ad::Var x) const;

  const MlpSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }
  int output_dim() const { return spec_.widths.back(); }

 private:
  std::string layer_name(std::size_t layer, const char* field) const;
  ad::Var run(ad::Tape& tape, const ad::ParamStore& store, ad::ParamStore* stats, ad::Var x) const;

  std::string prefix_;
  MlpSpec spec_;
};

enum class OptimizerKind { Adam, RmsProp };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double rho = 0.9;

  static OptimizerConfig adam(double lr);
  static OptimizerConfig rmsprop(double lr);
};

/// First/second moment slots (Adam) or the mean-square accumulator (RMSprop,
/// stored in `second`) for one parameter.
struct OptimizerSlot {
  Matrix first;
  Matrix second;
};

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig config, const ad::ParamStore& store, std::vector<std::string> names);

  /// One update of every managed parameter. Parameters missing from `grads`
  /// are treated as having zero gradient. NaN gradients raise NumericalError
  /// naming the parameter, before anything is modified.
  void step(ad::ParamStore& store, const ad::Gradients& grads);

  const OptimizerConfig& config() const { return config_; }
  const std::vector<std::string>& names() const { return names_; }
  long steps() const { return steps_; }
  const std::map<std::string, OptimizerSlot>& slots() const { return slots_; }

  nlohmann::json to_json() const;
  static Optimizer from_json(const nlohmann::json& j);

 private:
  OptimizerConfig config_;
  std::vector<std::string> names_;
  std::map<std::string, OptimizerSlot> slots_;
  long steps_ = 0;
};

/// Clamp every named parameter elementwise into [lo, hi].
void clip_weights(ad::ParamStore& store, const std::vector<std::string>& names, double lo = -1.0,
                  double hi = 1.0);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const ad::ParamStore& store);
ad::ParamStore params_from_json(const nlohmann::json& j);

}  // namespace maw::nets
