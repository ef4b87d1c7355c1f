#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maw/autodiff.hpp"
#include "maw/linalg.hpp"
#include "maw/nets.hpp"

namespace maw {

using Rng = nets::Rng;

enum class Variant { Maw, Mse, Kl, SameRank, SingleGaussian, DiagonalCov, Vae };

std::string to_string(Variant v);
/// Accepts "maw", "maw-mse", "maw-kl", "maw-same-rank", "maw-single-gaussian",
/// "maw-diagonal-cov", "vae". Anything else raises ConfigError.
Variant parse_variant(const std::string& name);
const std::vector<Variant>& all_variants();

struct Hyperparams {
  int latent_dim = 2;        // d, even
  int feature_dim = 128;     // D'
  double eta = 5.0 / 6.0;
  int samples = 5;           // T
  int epochs = 100;
  int batch_size = 128;      // L
  double lr_vae = 5e-5;      // Adam, encoder + A + decoder
  double lr_gen = 5e-5;      // Adam, encoder + A
  double lr_critic = 5e-4;   // RMSprop
  double clip = 1.0;         // critic weights live in [-clip, clip]
  Variant variant = Variant::Maw;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys raise ConfigError.
  static Hyperparams from_json(const nlohmann::json& j, const std::string& key_prefix = "model");
};

struct MixturePosterior {
  Vector mu1;
  Vector mu2;
  Matrix m1;  // truncated factor (rank <= d/2 unless truncation is disabled)
  Matrix m2;
  Matrix sigma1;  // m1 m1^T + I
  Matrix sigma2;  // m2 m2^T + I
  double eta = 5.0 / 6.0;
};

/// mu_j = A^T mu0_j, M_j = A^T diag(s0_j) A, M1 loses its d/2 smallest
/// (signed) eigenvalues when `truncate` is set.
MixturePosterior reduce(const Vector& mu01, const Vector& mu02, const Vector& s01, const Vector& s02,
                        const Matrix& a, double eta, bool truncate = true);

/// Zero the `drop` smallest signed eigenvalues of a symmetric matrix.
Matrix truncate_spectrum(const Matrix& m, int drop);

struct LatentSample {
  std::vector<Vector> z;
  std::vector<int> component;  // 1 = inlier mode, 2 = outlier mode
};

/// Per draw: component 1 with probability eta (always 1 when `single_mode`),
/// then z = mu_j + M_j e1 + e2 with e1, e2 ~ N(0, I).
LatentSample sample_latent(const MixturePosterior& post, int samples, Rng& rng, bool single_mode = false);

enum class Reconstruction { L2, SquaredL2 };

/// x is L x D, decoded is (L*T) x D with row t*L + i reconstructing x row i.
double loss_vae(const Matrix& x, const Matrix& decoded, Reconstruction kind = Reconstruction::L2);
double loss_w1_critic(const Vector& critic_gen, const Vector& critic_hyp);
double loss_gen(const Vector& critic_gen);

/// Cosine similarity; 0 when either vector is zero.
double cosine(const Vector& a, const Vector& b);

class MawModel {
 public:
  MawModel() = default;
  /// Glorot-initialized model for D-dimensional inputs.
  MawModel(int input_dim, Hyperparams hp, std::uint64_t seed);

  const Hyperparams& hyperparams() const { return hp_; }
  int input_dim() const { return input_dim_; }
  std::uint64_t seed() const { return seed_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  const nets::Mlp& encoder() const { return encoder_; }
  const nets::Mlp& decoder() const { return decoder_; }
  const nets::Mlp& critic() const { return critic_; }
  nets::Optimizer& vae_optimizer() { return vae_opt_; }
  nets::Optimizer& gen_optimizer() { return gen_opt_; }
  nets::Optimizer& critic_optimizer() { return critic_opt_; }

  bool uses_critic() const { return hp_.variant != Variant::Vae; }
  bool uses_reduction() const { return hp_.variant != Variant::Vae && hp_.variant != Variant::DiagonalCov; }
  bool clips_critic() const { return uses_critic() && hp_.variant != Variant::Kl; }
  /// Number of eigenvalues kept in M1.
  int kept_rank() const;

  std::vector<std::string> encoder_params() const;
  std::vector<std::string> decoder_params() const;
  std::vector<std::string> critic_params() const;

  /// Posterior for one input under eval-mode batch norm. Not defined for the
  /// plain VAE variant, whose posterior is a single diagonal Gaussian.
  MixturePosterior posterior(const Vector& y) const;

  nlohmann::json to_json() const;
  static MawModel from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static MawModel load(const std::string& path);

  bool operator==(const MawModel& other) const;

 private:
  void build_networks();

  Hyperparams hp_;
  int input_dim_ = 0;
  std::uint64_t seed_ = 0;
  ad::ParamStore params_;
  nets::Mlp encoder_;
  nets::Mlp decoder_;
  nets::Mlp critic_;
  nets::Optimizer vae_opt_;
  nets::Optimizer gen_opt_;
  nets::Optimizer critic_opt_;
};

inline constexpr const char* kReductionParam = "reduce.A";

// ---------------------------------------------------------------------------
// Differentiable pipeline (one batch, sampling noise frozen)

struct BatchNoise {
  int rows = 0;                    // L
  int samples = 0;                 // T
  Matrix eps1;                     // (L*T) x d, row t*L + i
  Matrix eps2;                     // (L*T) x d
  std::vector<bool> inlier;        // per draw
  Matrix z_hyp;                    // (L*T) x d prior draws
};

BatchNoise draw_batch_noise(const MawModel& model, int rows, Rng& rng);

/// Latent graph for a batch: encoder, reduction, reparameterized sampling.
struct LatentGraph {
  ad::Var z;            // (L*T) x d
  ad::Var kl_penalty;   // plain VAE only: mean analytic KL; unset otherwise
  bool has_kl = false;
};

/// `train_mode` selects batch statistics (and updates running buffers).
LatentGraph build_latent(MawModel& model, ad::Tape& tape, ad::Var x, const BatchNoise& noise, bool train_mode);
/// Eval-mode variant over a const model.
LatentGraph build_latent_eval(const MawModel& model, ad::Tape& tape, ad::Var x, const BatchNoise& noise);

/// Reconstruction loss (plus the KL term for the plain VAE).
ad::Var vae_objective(MawModel& model, ad::Tape& tape, ad::Var x, const LatentGraph& latent, bool train_mode);
/// Critic loss on generated vs prior latents; both pass through the critic
/// as one batch.
ad::Var critic_objective(MawModel& model, ad::Tape& tape, ad::Var z_gen, ad::Var z_hyp, bool train_mode);
/// Generator loss on generated latents, with prior latents sharing the batch.
ad::Var generator_objective(MawModel& model, ad::Tape& tape, ad::Var z_gen, ad::Var z_hyp, bool train_mode);

// ---------------------------------------------------------------------------
// Training and scoring

struct EpochLoss {
  int epoch = 0;
  double vae = 0.0;
  double critic = 0.0;
  double gen = 0.0;
};

struct BatchLoss {
  double vae = 0.0;
  double critic = 0.0;
  double gen = 0.0;
};

/// One pass of the per-batch update: VAE step, critic step (+ clipping),
/// generator step.
BatchLoss train_batch(MawModel& model, const Matrix& x, const BatchNoise& noise);

struct TrainResult {
  MawModel model;
  std::vector<EpochLoss> trace;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Rows of `data` are training points. Deterministic given `seed`.
TrainResult train(const Matrix& data, const Hyperparams& hp, std::uint64_t seed,
                  const EpochCallback& on_epoch = {});

/// Batch index ranges for n points; a trailing singleton is merged into the
/// previous batch.
std::vector<std::pair<int, int>> batch_ranges(int n, int batch_size);

/// Mean over T inlier-mode draws of cos(y, decoded). Higher is more normal.
double score(const MawModel& model, const Vector& y, int samples, Rng& rng);
/// Scores every row; row j uses its own RNG stream derived from (seed, j).
std::vector<double> score_all(const MawModel& model, const Matrix& y, int samples, std::uint64_t seed);

/// Stream seed for item `index` under base `seed`.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace maw
