#include "maw/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "maw/errors.hpp"

namespace maw {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr int kScoreChunk = 256;

struct VariantName {
  Variant variant;
  const char* name;
};

constexpr VariantName kVariantNames[] = {
    {Variant::Maw, "maw"},
    {Variant::Mse, "maw-mse"},
    {Variant::Kl, "maw-kl"},
    {Variant::SameRank, "maw-same-rank"},
    {Variant::SingleGaussian, "maw-single-gaussian"},
    {Variant::DiagonalCov, "maw-diagonal-cov"},
    {Variant::Vae, "vae"},
};

ad::Var tile_rows(ad::Var v, int times) {
  if (times == 1) return v;
  return ad::concat_rows(std::vector<ad::Var>(static_cast<std::size_t>(times), v));
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

template <typename T>
T json_field(const nlohmann::json& j, const std::string& field, const std::string& key) {
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("invalid value for " + key, key);
  }
}

}  // namespace

std::string to_string(Variant v) {
  for (const auto& entry : kVariantNames)
    if (entry.variant == v) return entry.name;
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (const auto& entry : kVariantNames)
    if (name == entry.name) return entry.variant;
  throw ConfigError("unknown variant '" + name + "'", "variant");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> variants = {Variant::Maw,           Variant::Mse,
                                                Variant::Kl,            Variant::SameRank,
                                                Variant::SingleGaussian, Variant::DiagonalCov,
                                                Variant::Vae};
  return variants;
}

// ---------------------------------------------------------------------------
// Hyperparams

void Hyperparams::validate() const {
  if (latent_dim < 2 || latent_dim % 2 != 0) {
    throw ConfigError("latent_dim must be even and at least 2", "model.latent_dim");
  }
  if (feature_dim < 1) throw ConfigError("feature_dim must be positive", "model.feature_dim");
  if (!(eta > 0.5 && eta < 1.0)) throw ConfigError("eta must lie in (0.5, 1)", "model.eta");
  if (samples < 1) throw ConfigError("samples must be at least 1", "model.samples");
  if (epochs < 0) throw ConfigError("epochs must be non-negative", "model.epochs");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2", "model.batch_size");
  if (!(lr_vae > 0.0)) throw ConfigError("lr_vae must be positive", "model.lr_vae");
  if (!(lr_gen > 0.0)) throw ConfigError("lr_gen must be positive", "model.lr_gen");
  if (!(lr_critic > 0.0)) throw ConfigError("lr_critic must be positive", "model.lr_critic");
  if (!(clip > 0.0)) throw ConfigError("clip must be positive", "model.clip");
}

nlohmann::json Hyperparams::to_json() const {
  return {{"latent_dim", latent_dim}, {"feature_dim", feature_dim}, {"eta", eta},
          {"samples", samples},       {"epochs", epochs},           {"batch_size", batch_size},
          {"lr_vae", lr_vae},         {"lr_gen", lr_gen},           {"lr_critic", lr_critic},
          {"clip", clip},             {"variant", to_string(variant)}};
}

Hyperparams Hyperparams::from_json(const nlohmann::json& j, const std::string& key_prefix) {
  if (!j.is_object()) throw ConfigError("expected an object", key_prefix);
  Hyperparams hp;
  for (const auto& [field, value] : j.items()) {
    const std::string key = key_prefix.empty() ? field : key_prefix + "." + field;
    if (field == "latent_dim") hp.latent_dim = json_field<int>(j, field, key);
    else if (field == "feature_dim") hp.feature_dim = json_field<int>(j, field, key);
    else if (field == "eta") hp.eta = json_field<double>(j, field, key);
    else if (field == "samples") hp.samples = json_field<int>(j, field, key);
    else if (field == "epochs") hp.epochs = json_field<int>(j, field, key);
    else if (field == "batch_size") hp.batch_size = json_field<int>(j, field, key);
    else if (field == "lr_vae") hp.lr_vae = json_field<double>(j, field, key);
    else if (field == "lr_gen") hp.lr_gen = json_field<double>(j, field, key);
    else if (field == "lr_critic") hp.lr_critic = json_field<double>(j, field, key);
    else if (field == "clip") hp.clip = json_field<double>(j, field, key);
    else if (field == "variant") {
      try {
        hp.variant = parse_variant(json_field<std::string>(j, field, key));
      } catch (const ConfigError& e) {
        throw ConfigError(e.what(), key);
      }
    } else {
      throw ConfigError("unknown key " + key, key);
    }
  }
  return hp;
}

// ---------------------------------------------------------------------------
// Pure reduction, sampling and losses

Matrix truncate_spectrum(const Matrix& m, int drop) {
  const linalg::SymEig eig = linalg::sym_eig(m);
  Vector kept = eig.eigenvalues;
  const Eigen::Index n = kept.size();
  if (drop < 0 || drop > n) throw DomainError("truncate_spectrum: drop count out of range");
  for (Eigen::Index i = n - drop; i < n; ++i) kept(i) = 0.0;
  return linalg::symmetrize(eig.eigenvectors * kept.asDiagonal() * eig.eigenvectors.transpose());
}

MixturePosterior reduce(const Vector& mu01, const Vector& mu02, const Vector& s01, const Vector& s02,
                        const Matrix& a, double eta, bool truncate) {
  const Eigen::Index k = a.rows();
  const Eigen::Index d = a.cols();
  if (mu01.size() != k || mu02.size() != k || s01.size() != k || s02.size() != k) {
    throw ShapeError("reduce: encoder features must have " + std::to_string(k) + " entries");
  }
  if (truncate && d % 2 != 0) throw DomainError("reduce: latent dimension must be even");
  MixturePosterior post;
  post.eta = eta;
  post.mu1 = a.transpose() * mu01;
  post.mu2 = a.transpose() * mu02;
  const Matrix m1 = linalg::symmetrize(a.transpose() * s01.asDiagonal() * a);
  post.m2 = linalg::symmetrize(a.transpose() * s02.asDiagonal() * a);
  post.m1 = truncate ? truncate_spectrum(m1, static_cast<int>(d / 2)) : m1;
  const Matrix eye = Matrix::Identity(d, d);
  post.sigma1 = post.m1 * post.m1.transpose() + eye;
  post.sigma2 = post.m2 * post.m2.transpose() + eye;
  return post;
}

LatentSample sample_latent(const MixturePosterior& post, int samples, Rng& rng, bool single_mode) {
  if (samples < 1) throw DomainError("sample_latent: need at least one sample");
  const Eigen::Index d = post.mu1.size();
  std::bernoulli_distribution pick_inlier(post.eta);
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentSample out;
  out.z.reserve(static_cast<std::size_t>(samples));
  out.component.reserve(static_cast<std::size_t>(samples));
  Vector e1(d);
  Vector e2(d);
  for (int t = 0; t < samples; ++t) {
    const bool inlier = single_mode || pick_inlier(rng);
    for (Eigen::Index i = 0; i < d; ++i) e1(i) = normal(rng);
    for (Eigen::Index i = 0; i < d; ++i) e2(i) = normal(rng);
    if (inlier) out.z.push_back(post.mu1 + post.m1 * e1 + e2);
    else out.z.push_back(post.mu2 + post.m2 * e1 + e2);
    out.component.push_back(inlier ? 1 : 2);
  }
  return out;
}

double loss_vae(const Matrix& x, const Matrix& decoded, Reconstruction kind) {
  if (x.rows() == 0 || decoded.rows() == 0 || decoded.rows() % x.rows() != 0 || decoded.cols() != x.cols()) {
    throw ShapeError("loss_vae: decoded rows must be a positive multiple of the batch");
  }
  double total = 0.0;
  for (Eigen::Index r = 0; r < decoded.rows(); ++r) {
    const double sq = (decoded.row(r) - x.row(r % x.rows())).squaredNorm();
    total += kind == Reconstruction::L2 ? std::sqrt(sq) : sq;
  }
  return total / static_cast<double>(decoded.rows());
}

double loss_w1_critic(const Vector& critic_gen, const Vector& critic_hyp) {
  if (critic_gen.size() != critic_hyp.size() || critic_gen.size() == 0) {
    throw ShapeError("loss_w1_critic: generated and prior counts differ");
  }
  return critic_gen.mean() - critic_hyp.mean();
}

double loss_gen(const Vector& critic_gen) {
  if (critic_gen.size() == 0) throw ShapeError("loss_gen: empty input");
  return -critic_gen.mean();
}

double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// ---------------------------------------------------------------------------
// Model

MawModel::MawModel(int input_dim, Hyperparams hp, std::uint64_t seed)
    : hp_(std::move(hp)), input_dim_(input_dim), seed_(seed) {
  hp_.validate();
  if (input_dim_ < 1) throw DomainError("MawModel: input dimension must be positive");
  build_networks();
  Rng rng(stream_seed(seed_, 0));
  encoder_.init(params_, rng);
  if (uses_reduction()) params_.add(kReductionParam, nets::glorot_init(hp_.feature_dim, hp_.latent_dim, rng));
  decoder_.init(params_, rng);
  if (uses_critic()) critic_.init(params_, rng);

  std::vector<std::string> vae_names = encoder_params();
  const std::vector<std::string> dec = decoder_params();
  vae_names.insert(vae_names.end(), dec.begin(), dec.end());
  vae_opt_ = nets::Optimizer(nets::OptimizerConfig::adam(hp_.lr_vae), params_, vae_names);
  if (uses_critic()) {
    gen_opt_ = nets::Optimizer(nets::OptimizerConfig::adam(hp_.lr_gen), params_, encoder_params());
    critic_opt_ = nets::Optimizer(nets::OptimizerConfig::rmsprop(hp_.lr_critic), params_, critic_params());
  }
}

void MawModel::build_networks() {
  const int d = hp_.latent_dim;
  int enc_out = 4 * hp_.feature_dim;
  nets::FinalTransform enc_final = nets::FinalTransform::SplitFour;
  if (hp_.variant == Variant::DiagonalCov) enc_out = 4 * d;
  if (hp_.variant == Variant::Vae) {
    enc_out = 2 * d;
    enc_final = nets::FinalTransform::None;
  }
  encoder_ = nets::Mlp("encoder", nets::make_mlp_spec(input_dim_, {32, 64, 128, enc_out}, nets::Activation::Relu,
                                                      true, enc_final));
  decoder_ = nets::Mlp("decoder", nets::make_mlp_spec(d, {128, 64, 32, input_dim_}, nets::Activation::Relu, true,
                                                      nets::FinalTransform::UnitNormalize));
  critic_ = nets::Mlp("critic", nets::make_mlp_spec(d, {32, 64, 128, 1}, nets::Activation::LeakyRelu, true,
                                                    nets::FinalTransform::None, 0.2));
}

int MawModel::kept_rank() const {
  const int d = hp_.latent_dim;
  switch (hp_.variant) {
    case Variant::SameRank:
    case Variant::SingleGaussian:
    case Variant::Vae: return d;
    default: return d / 2;
  }
}

std::vector<std::string> MawModel::encoder_params() const {
  std::vector<std::string> names = params_.trainable_names("encoder.");
  if (uses_reduction()) names.emplace_back(kReductionParam);
  return names;
}

std::vector<std::string> MawModel::decoder_params() const { return params_.trainable_names("decoder."); }

std::vector<std::string> MawModel::critic_params() const { return params_.trainable_names("critic."); }

MixturePosterior MawModel::posterior(const Vector& y) const {
  if (hp_.variant == Variant::Vae) throw DomainError("posterior: the plain VAE has no mixture posterior");
  if (y.size() != input_dim_) throw ShapeError("posterior: input has the wrong dimension");
  ad::Tape tape;
  const ad::Var out = encoder_.forward_eval(tape, params_, tape.constant(Matrix(y.transpose())));
  const Matrix& e = out.value();
  const Eigen::Index k = e.cols() / 4;
  const Vector mu01 = e.row(0).segment(0, k).transpose();
  const Vector mu02 = e.row(0).segment(k, k).transpose();
  const Vector s01 = e.row(0).segment(2 * k, k).transpose();
  const Vector s02 = e.row(0).segment(3 * k, k).transpose();
  const Matrix a = uses_reduction() ? params_.value(kReductionParam) : Matrix::Identity(k, k);
  return reduce(mu01, mu02, s01, s02, a, hp_.eta, kept_rank() < hp_.latent_dim);
}

nlohmann::json MawModel::to_json() const {
  nlohmann::json j;
  j["format"] = "maw-checkpoint";
  j["version"] = kCheckpointVersion;
  j["input_dim"] = input_dim_;
  j["seed"] = seed_;
  j["hyperparams"] = hp_.to_json();
  j["params"] = nets::params_to_json(params_);
  j["optimizers"] = {{"vae", vae_opt_.to_json()}, {"gen", gen_opt_.to_json()}, {"critic", critic_opt_.to_json()}};
  return j;
}

MawModel MawModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "maw-checkpoint") throw FormatError("checkpoint: wrong format tag");
    if (j.at("version").get<int>() != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    MawModel m;
    m.hp_ = Hyperparams::from_json(j.at("hyperparams"), "hyperparams");
    m.hp_.validate();
    m.input_dim_ = j.at("input_dim").get<int>();
    m.seed_ = j.at("seed").get<std::uint64_t>();
    m.build_networks();
    m.params_ = nets::params_from_json(j.at("params"));
    const auto& opts = j.at("optimizers");
    m.vae_opt_ = nets::Optimizer::from_json(opts.at("vae"));
    m.gen_opt_ = nets::Optimizer::from_json(opts.at("gen"));
    m.critic_opt_ = nets::Optimizer::from_json(opts.at("critic"));
    // Parameter names and shapes must match a freshly built model.
    MawModel reference(m.input_dim_, m.hp_, m.seed_);
    for (const auto& [name, p] : reference.params_.all()) {
      if (!m.params_.contains(name)) throw FormatError("checkpoint: missing parameter " + name);
      const Matrix& v = m.params_.value(name);
      if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
        throw FormatError("checkpoint: parameter " + name + " has the wrong shape");
      }
    }
    if (m.params_.names().size() != reference.params_.names().size()) {
      throw FormatError("checkpoint: unexpected extra parameters");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

void MawModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << to_json().dump() << '\n';
  if (!out) throw FormatError("failed writing " + path);
}

MawModel MawModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint " + path + ": " + e.what());
  }
  return from_json(j);
}

bool MawModel::operator==(const MawModel& other) const {
  return input_dim_ == other.input_dim_ && seed_ == other.seed_ && hp_.to_json() == other.hp_.to_json() &&
         params_ == other.params_ && vae_opt_.to_json() == other.vae_opt_.to_json() &&
         gen_opt_.to_json() == other.gen_opt_.to_json() && critic_opt_.to_json() == other.critic_opt_.to_json();
}

// ---------------------------------------------------------------------------
// Differentiable pipeline

BatchNoise draw_batch_noise(const MawModel& model, int rows, Rng& rng) {
  const Hyperparams& hp = model.hyperparams();
  const int n = rows * hp.samples;
  const bool single = hp.variant == Variant::SingleGaussian || hp.variant == Variant::Vae;
  BatchNoise noise;
  noise.rows = rows;
  noise.samples = hp.samples;
  std::bernoulli_distribution pick_inlier(hp.eta);
  noise.inlier.resize(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) noise.inlier[static_cast<std::size_t>(r)] = single || pick_inlier(rng);
  noise.eps1 = standard_normal(n, hp.latent_dim, rng);
  noise.eps2 = standard_normal(n, hp.latent_dim, rng);
  noise.z_hyp = standard_normal(n, hp.latent_dim, rng);
  return noise;
}

namespace {

LatentGraph latent_from_encoding(const MawModel& model, ad::Tape& tape, ad::Var enc, const BatchNoise& noise) {
  const Hyperparams& hp = model.hyperparams();
  const int d = hp.latent_dim;
  const int t = noise.samples;
  if (enc.rows() != noise.rows) throw ShapeError("latent: noise was drawn for a different batch size");
  ad::Var eps1 = tape.constant(noise.eps1);
  LatentGraph out;

  if (hp.variant == Variant::Vae) {
    ad::Var mu = ad::slice_cols(enc, 0, d);
    ad::Var logvar = ad::slice_cols(enc, d, d);
    ad::Var stddev = ad::exp(ad::scale(logvar, 0.5));
    out.z = tile_rows(mu, t) + ad::hadamard(tile_rows(stddev, t), eps1);
    // Mean over the batch of 0.5 * sum(exp(lv) + mu^2 - 1 - lv).
    ad::Var terms = ad::exp(logvar) + ad::square(mu) - logvar;
    out.kl_penalty = ad::add_scalar(ad::scale(ad::sum(terms), 0.5 / static_cast<double>(noise.rows)), -0.5 * d);
    out.has_kl = true;
    return out;
  }

  const Eigen::Index k = enc.cols() / 4;
  ad::Var mu01 = ad::slice_cols(enc, 0, k);
  ad::Var mu02 = ad::slice_cols(enc, k, k);
  ad::Var s01 = ad::slice_cols(enc, 2 * k, k);
  ad::Var s02 = ad::slice_cols(enc, 3 * k, k);
  ad::Var a = model.uses_reduction() ? tape.param(model.params(), kReductionParam)
                                     : tape.constant(Matrix::Identity(d, d));
  ad::Var mu1 = ad::matmul(mu01, a);
  ad::Var mu2 = ad::matmul(mu02, a);
  ad::Var m1 = ad::diag_sandwich_rows(a, s01);
  ad::Var m2 = ad::diag_sandwich_rows(a, s02);
  if (model.kept_rank() < d) m1 = ad::truncate_spectrum_rows(m1, d, model.kept_rank());

  ad::Var mu = ad::row_select(tile_rows(mu1, t), tile_rows(mu2, t), noise.inlier);
  ad::Var m = ad::row_select(tile_rows(m1, t), tile_rows(m2, t), noise.inlier);
  out.z = mu + ad::batch_matvec(m, eps1) + tape.constant(noise.eps2);
  return out;
}

ad::Var critic_pair(MawModel& model, ad::Tape& tape, ad::Var z_gen, ad::Var z_hyp, bool train_mode) {
  if (z_gen.rows() != z_hyp.rows()) throw ShapeError("critic: generated and prior counts differ");
  ad::Var both = ad::concat_rows({z_gen, z_hyp});
  return train_mode ? model.critic().forward(tape, model.params(), both)
                    : model.critic().forward_eval(tape, model.params(), both);
}

}  // namespace

LatentGraph build_latent(MawModel& model, ad::Tape& tape, ad::Var x, const BatchNoise& noise, bool train_mode) {
  if (!train_mode) return build_latent_eval(model, tape, x, noise);
  ad::Var enc = model.encoder().forward(tape, model.params(), x);
  return latent_from_encoding(model, tape, enc, noise);
}

LatentGraph build_latent_eval(const MawModel& model, ad::Tape& tape, ad::Var x, const BatchNoise& noise) {
  ad::Var enc = model.encoder().forward_eval(tape, model.params(), x);
  return latent_from_encoding(model, tape, enc, noise);
}

ad::Var vae_objective(MawModel& model, ad::Tape& tape, ad::Var x, const LatentGraph& latent, bool train_mode) {
  const int t = static_cast<int>(latent.z.rows() / x.rows());
  ad::Var decoded = train_mode ? model.decoder().forward(tape, model.params(), latent.z)
                               : model.decoder().forward_eval(tape, model.params(), latent.z);
  ad::Var target = tile_rows(x, t);
  const Variant v = model.hyperparams().variant;
  const bool squared = v == Variant::Mse || v == Variant::Vae;
  ad::Var residual = squared ? ad::row_sq_norm_of_diff(target, decoded) : ad::row_l2norm_of_diff(target, decoded);
  ad::Var loss = ad::mean(residual);
  if (latent.has_kl) loss = loss + latent.kl_penalty;
  return loss;
}

ad::Var critic_objective(MawModel& model, ad::Tape& tape, ad::Var z_gen, ad::Var z_hyp, bool train_mode) {
  const Eigen::Index n = z_gen.rows();
  ad::Var out = critic_pair(model, tape, z_gen, z_hyp, train_mode);
  ad::Var gen = ad::slice_rows(out, 0, n);
  ad::Var hyp = ad::slice_rows(out, n, n);
  if (model.hyperparams().variant == Variant::Kl) {
    // Prior draws are labelled real (1), generated draws fake (0).
    return ad::mean(ad::softplus(gen)) + ad::mean(ad::softplus(ad::scale(hyp, -1.0)));
  }
  return ad::mean(gen) - ad::mean(hyp);
}

ad::Var generator_objective(MawModel& model, ad::Tape& tape, ad::Var z_gen, ad::Var z_hyp, bool train_mode) {
  const Eigen::Index n = z_gen.rows();
  ad::Var out = critic_pair(model, tape, z_gen, z_hyp, train_mode);
  ad::Var gen = ad::slice_rows(out, 0, n);
  if (model.hyperparams().variant == Variant::Kl) return ad::mean(ad::softplus(ad::scale(gen, -1.0)));
  return ad::scale(ad::mean(gen), -1.0);
}

// ---------------------------------------------------------------------------
// Training

BatchLoss train_batch(MawModel& model, const Matrix& x, const BatchNoise& noise) {
  BatchLoss loss;
  ad::Tape tape;
  Matrix z_gen;
  {
    ad::Var xv = tape.constant(x);
    LatentGraph latent = build_latent(model, tape, xv, noise, true);
    ad::Var l = vae_objective(model, tape, xv, latent, true);
    loss.vae = l.scalar();
    z_gen = latent.z.value();
    model.vae_optimizer().step(model.params(), tape.backward(l));
  }
  if (!model.uses_critic()) return loss;

  tape.reset();
  {
    ad::Var l = critic_objective(model, tape, tape.constant(z_gen), tape.constant(noise.z_hyp), true);
    loss.critic = l.scalar();
    model.critic_optimizer().step(model.params(), tape.backward(l));
    if (model.clips_critic()) {
      const double c = model.hyperparams().clip;
      nets::clip_weights(model.params(), model.critic_params(), -c, c);
    }
  }

  tape.reset();
  {
    ad::Var xv = tape.constant(x);
    LatentGraph latent = build_latent(model, tape, xv, noise, true);
    ad::Var l = generator_objective(model, tape, latent.z, tape.constant(noise.z_hyp), true);
    loss.gen = l.scalar();
    model.gen_optimizer().step(model.params(), tape.backward(l));
  }
  return loss;
}

std::vector<std::pair<int, int>> batch_ranges(int n, int batch_size) {
  if (batch_size < 1) throw DomainError("batch_ranges: batch size must be positive");
  std::vector<std::pair<int, int>> ranges;
  for (int start = 0; start < n; start += batch_size) ranges.emplace_back(start, std::min(n, start + batch_size));
  if (ranges.size() >= 2 && ranges.back().second - ranges.back().first == 1) {
    ranges[ranges.size() - 2].second = ranges.back().second;
    ranges.pop_back();
  }
  return ranges;
}

TrainResult train(const Matrix& data, const Hyperparams& hp, std::uint64_t seed, const EpochCallback& on_epoch) {
  hp.validate();
  if (data.rows() < 2) throw DomainError("train: need at least two training points");
  linalg::require_finite(data, "train data");
  TrainResult result{MawModel(static_cast<int>(data.cols()), hp, seed), {}};
  MawModel& model = result.model;
  Rng rng(stream_seed(seed, 1));
  const int n = static_cast<int>(data.rows());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const auto ranges = batch_ranges(n, hp.batch_size);

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLoss sum;
    sum.epoch = epoch;
    for (std::size_t b = 0; b < ranges.size(); ++b) {
      const auto [lo, hi] = ranges[b];
      Matrix x(hi - lo, data.cols());
      for (int r = lo; r < hi; ++r) x.row(r - lo) = data.row(order[static_cast<std::size_t>(r)]);
      const BatchNoise noise = draw_batch_noise(model, hi - lo, rng);
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1);
      BatchLoss l;
      try {
        l = train_batch(model, x, noise);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (" + where + ")");
      }
      if (!std::isfinite(l.vae) || !std::isfinite(l.critic) || !std::isfinite(l.gen)) {
        throw NumericalError("train: non-finite loss (" + where + ")");
      }
      sum.vae += l.vae;
      sum.critic += l.critic;
      sum.gen += l.gen;
    }
    const double nb = static_cast<double>(ranges.size());
    sum.vae /= nb;
    sum.critic /= nb;
    sum.gen /= nb;
    result.trace.push_back(sum);
    if (on_epoch) on_epoch(sum);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scoring

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over a golden-ratio stride.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

struct PointNoise {
  Matrix eps1;  // T x d
  Matrix eps2;  // T x d
};

PointNoise draw_point_noise(const MawModel& model, int samples, Rng& rng) {
  const int d = model.hyperparams().latent_dim;
  PointNoise p;
  p.eps1 = standard_normal(samples, d, rng);
  p.eps2 = standard_normal(samples, d, rng);
  return p;
}

std::vector<double> score_block(const MawModel& model, const Matrix& y, const std::vector<PointNoise>& noise,
                                int samples) {
  const int n = static_cast<int>(y.rows());
  const int d = model.hyperparams().latent_dim;
  BatchNoise bn;
  bn.rows = n;
  bn.samples = samples;
  bn.eps1.resize(n * samples, d);
  bn.eps2.resize(n * samples, d);
  bn.inlier.assign(static_cast<std::size_t>(n * samples), true);
  for (int t = 0; t < samples; ++t) {
    for (int j = 0; j < n; ++j) {
      bn.eps1.row(t * n + j) = noise[static_cast<std::size_t>(j)].eps1.row(t);
      bn.eps2.row(t * n + j) = noise[static_cast<std::size_t>(j)].eps2.row(t);
    }
  }
  ad::Tape tape;
  LatentGraph latent = build_latent_eval(model, tape, tape.constant(y), bn);
  const Matrix decoded = model.decoder().forward_eval(tape, model.params(), latent.z).value();
  std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int t = 0; t < samples; ++t) acc += cosine(y.row(j).transpose(), decoded.row(t * n + j).transpose());
    scores[static_cast<std::size_t>(j)] = acc / samples;
  }
  return scores;
}

}  // namespace

double score(const MawModel& model, const Vector& y, int samples, Rng& rng) {
  if (samples < 1) throw DomainError("score: need at least one sample");
  if (y.size() != model.input_dim()) throw ShapeError("score: input has the wrong dimension");
  std::vector<PointNoise> noise{draw_point_noise(model, samples, rng)};
  return score_block(model, Matrix(y.transpose()), noise, samples).front();
}

std::vector<double> score_all(const MawModel& model, const Matrix& y, int samples, std::uint64_t seed) {
  if (samples < 1) throw DomainError("score: need at least one sample");
  if (y.cols() != model.input_dim()) throw ShapeError("score: input has the wrong dimension");
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index start = 0; start < y.rows(); start += kScoreChunk) {
    const Eigen::Index count = std::min<Eigen::Index>(kScoreChunk, y.rows() - start);
    std::vector<PointNoise> noise;
    noise.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index j = 0; j < count; ++j) {
      Rng rng(stream_seed(seed, static_cast<std::uint64_t>(start + j)));
      noise.push_back(draw_point_noise(model, samples, rng));
    }
    const auto block = score_block(model, y.middleRows(start, count), noise, samples);
    scores.insert(scores.end(), block.begin(), block.end());
  }
  return scores;
}

}  // namespace maw
