#include "maw/nets.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "maw/errors.hpp"

namespace maw::nets {

void MlpSpec::validate() const {
  if (input_dim <= 0) throw DomainError("MlpSpec: input dimension must be positive");
  if (widths.empty()) throw DomainError("MlpSpec: at least one layer is required");
  if (activations.size() != widths.size()) throw DomainError("MlpSpec: one activation per layer");
  for (int w : widths)
    if (w <= 0) throw DomainError("MlpSpec: layer widths must be positive");
  if (final_transform == FinalTransform::SplitFour && widths.back() % 4 != 0) {
    throw DomainError("MlpSpec: split-four output width must be divisible by 4");
  }
}

MlpSpec make_mlp_spec(int input_dim, std::vector<int> widths, Activation hidden, bool batch_norm,
                      FinalTransform final_transform, double leaky_slope) {
  MlpSpec spec;
  spec.input_dim = input_dim;
  spec.activations.assign(widths.size(), hidden);
  if (!spec.activations.empty()) spec.activations.back() = Activation::None;
  spec.widths = std::move(widths);
  spec.batch_norm = batch_norm;
  spec.final_transform = final_transform;
  spec.leaky_slope = leaky_slope;
  spec.validate();
  return spec;
}

Matrix glorot_init(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  if (rows <= 0 || cols <= 0) throw DomainError("glorot_init: dimensions must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Mlp::Mlp(std::string prefix, MlpSpec spec) : prefix_(std::move(prefix)), spec_(std::move(spec)) {
  spec_.validate();
}

std::string Mlp::layer_name(std::size_t layer, const char* field) const {
  return prefix_ + ".l" + std::to_string(layer) + "." + field;
}

void Mlp::init(ad::ParamStore& store, Rng& rng) const {
  int fan_in = spec_.input_dim;
  for (std::size_t k = 0; k < spec_.widths.size(); ++k) {
    const int fan_out = spec_.widths[k];
    store.add(layer_name(k, "W"), glorot_init(fan_in, fan_out, rng));
    store.add(layer_name(k, "b"), Matrix::Zero(1, fan_out));
    const bool hidden = k + 1 < spec_.widths.size();
    if (spec_.batch_norm && hidden) {
      store.add(layer_name(k, "bn_gamma"), Matrix::Ones(1, fan_out));
      store.add(layer_name(k, "bn_beta"), Matrix::Zero(1, fan_out));
      store.add(layer_name(k, "bn_mean"), Matrix::Zero(1, fan_out), false);
      store.add(layer_name(k, "bn_var"), Matrix::Ones(1, fan_out), false);
    }
    fan_in = fan_out;
  }
}

ad::Var Mlp::forward(ad::Tape& tape, ad::ParamStore& store, ad::Var x) const {
  return run(tape, store, &store, x);
}

ad::Var Mlp::forward_eval(ad::Tape& tape, const ad::ParamStore& store, ad::Var x) const {
  return run(tape, store, nullptr, x);
}

ad::Var Mlp::run(ad::Tape& tape, const ad::ParamStore& store, ad::ParamStore* stats, ad::Var x) const {
  if (x.cols() != spec_.input_dim) {
    throw ShapeError(prefix_ + ": expected input width " + std::to_string(spec_.input_dim) + ", got " +
                     std::to_string(x.cols()));
  }
  ad::Var h = x;
  for (std::size_t k = 0; k < spec_.widths.size(); ++k) {
    h = ad::affine(h, tape.param(store, layer_name(k, "W")), tape.param(store, layer_name(k, "b")));
    const bool hidden = k + 1 < spec_.widths.size();
    if (spec_.batch_norm && hidden) {
      ad::BatchNormOptions opts;
      ad::Var gamma = tape.param(store, layer_name(k, "bn_gamma"));
      ad::Var beta = tape.param(store, layer_name(k, "bn_beta"));
      if (stats != nullptr) {
        opts.mode = ad::BnMode::Train;
        h = ad::batch_norm(h, gamma, beta, stats->value(layer_name(k, "bn_mean")),
                           stats->value(layer_name(k, "bn_var")), opts);
      } else {
        opts.mode = ad::BnMode::Eval;
        Matrix running_mean = store.value(layer_name(k, "bn_mean"));
        Matrix running_var = store.value(layer_name(k, "bn_var"));
        h = ad::batch_norm(h, gamma, beta, running_mean, running_var, opts);
      }
    }
    switch (spec_.activations[k]) {
      case Activation::None: break;
      case Activation::Relu: h = ad::relu(h); break;
      case Activation::LeakyRelu: h = ad::leaky_relu(h, spec_.leaky_slope); break;
    }
  }
  if (spec_.final_transform == FinalTransform::UnitNormalize) h = ad::unit_normalize(h);
  return h;
}

OptimizerConfig OptimizerConfig::adam(double lr) {
  OptimizerConfig c;
  c.kind = OptimizerKind::Adam;
  c.learning_rate = lr;
  return c;
}

OptimizerConfig OptimizerConfig::rmsprop(double lr) {
  OptimizerConfig c;
  c.kind = OptimizerKind::RmsProp;
  c.learning_rate = lr;
  return c;
}

Optimizer::Optimizer(OptimizerConfig config, const ad::ParamStore& store, std::vector<std::string> names)
    : config_(config), names_(std::move(names)) {
  if (!(config_.learning_rate > 0.0)) throw DomainError("Optimizer: learning rate must be positive");
  for (const auto& name : names_) {
    const Matrix& v = store.value(name);
    slots_[name] = OptimizerSlot{Matrix::Zero(v.rows(), v.cols()), Matrix::Zero(v.rows(), v.cols())};
  }
}

void Optimizer::step(ad::ParamStore& store, const ad::Gradients& grads) {
  for (const auto& name : names_) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    if (!it->second.allFinite()) throw NumericalError("optimizer: non-finite gradient for parameter " + name);
    const Matrix& v = store.value(name);
    if (it->second.rows() != v.rows() || it->second.cols() != v.cols()) {
      throw ShapeError("optimizer: gradient shape mismatch for parameter " + name);
    }
  }
  ++steps_;
  const double lr = config_.learning_rate;
  for (const auto& name : names_) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Matrix& g = it->second;
    Matrix& theta = store.value(name);
    OptimizerSlot& slot = slots_.at(name);
    if (config_.kind == OptimizerKind::Adam) {
      const double b1 = config_.beta1;
      const double b2 = config_.beta2;
      slot.first = b1 * slot.first + (1.0 - b1) * g;
      slot.second = b2 * slot.second + (1.0 - b2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
      theta.array() -= lr * (slot.first.array() / c1) / ((slot.second.array() / c2).sqrt() + config_.epsilon);
    } else {
      const double rho = config_.rho;
      slot.second = rho * slot.second + (1.0 - rho) * g.cwiseProduct(g);
      theta.array() -= lr * g.array() / (slot.second.array().sqrt() + config_.epsilon);
    }
  }
}

nlohmann::json Optimizer::to_json() const {
  nlohmann::json j;
  j["kind"] = config_.kind == OptimizerKind::Adam ? "adam" : "rmsprop";
  j["learning_rate"] = config_.learning_rate;
  j["beta1"] = config_.beta1;
  j["beta2"] = config_.beta2;
  j["epsilon"] = config_.epsilon;
  j["rho"] = config_.rho;
  j["steps"] = steps_;
  j["names"] = names_;
  nlohmann::json slots = nlohmann::json::object();
  for (const auto& [name, slot] : slots_) {
    slots[name] = {{"first", matrix_to_json(slot.first)}, {"second", matrix_to_json(slot.second)}};
  }
  j["slots"] = std::move(slots);
  return j;
}

Optimizer Optimizer::from_json(const nlohmann::json& j) {
  Optimizer opt;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "adam") opt.config_.kind = OptimizerKind::Adam;
  else if (kind == "rmsprop") opt.config_.kind = OptimizerKind::RmsProp;
  else throw FormatError("optimizer: unknown kind " + kind);
  opt.config_.learning_rate = j.at("learning_rate").get<double>();
  opt.config_.beta1 = j.at("beta1").get<double>();
  opt.config_.beta2 = j.at("beta2").get<double>();
  opt.config_.epsilon = j.at("epsilon").get<double>();
  opt.config_.rho = j.at("rho").get<double>();
  opt.steps_ = j.at("steps").get<long>();
  opt.names_ = j.at("names").get<std::vector<std::string>>();
  for (const auto& [name, slot] : j.at("slots").items()) {
    opt.slots_[name] = OptimizerSlot{matrix_from_json(slot.at("first")), matrix_from_json(slot.at("second"))};
  }
  return opt;
}

void clip_weights(ad::ParamStore& store, const std::vector<std::string>& names, double lo, double hi) {
  if (!(lo < hi)) throw DomainError("clip_weights: lo must be below hi");
  for (const auto& name : names) {
    Matrix& v = store.value(name);
    v = v.cwiseMax(lo).cwiseMin(hi);
  }
}

nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw FormatError("matrix: data length does not match rows x cols");
  }
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

nlohmann::json params_to_json(const ad::ParamStore& store) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, p] : store.all()) {
    nlohmann::json entry = matrix_to_json(p.value);
    entry["trainable"] = p.trainable;
    j[name] = std::move(entry);
  }
  return j;
}

ad::ParamStore params_from_json(const nlohmann::json& j) {
  ad::ParamStore store;
  for (const auto& [name, entry] : j.items()) {
    store.add(name, matrix_from_json(entry), entry.at("trainable").get<bool>());
  }
  return store;
}

}  // namespace maw::nets
