// Noise predictors: the abstract contract, an exact closed-form
// Gaussian-mixture score oracle, and a tiny seeded token self-attention
// denoiser with key/value feature capture and injection.
#pragma once

#include "proxdiff/schedule.hpp"
#include "proxdiff/types.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace proxdiff {

class EpsilonPredictor {
 public:
  virtual ~EpsilonPredictor() = default;
  virtual Latent epsilon(const Latent& z, int t, const Condition& c) const = 0;
  virtual Eigen::Index latent_dim() const = 0;
  virtual Eigen::Index condition_size() const = 0;  // expected logits length
};

struct MixtureComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  double scale = 1.0;
};

// Data model: a K-component Gaussian mixture. The forward-noised marginal at
// time t has component means sqrt(abar)*(mu_k + shift) and isotropic variance
// abar*s_k^2 + (1 - abar), which admits an exact score and hence an exact
// eps(z, t, C). Conditioning reweights components multiplicatively with
// softmax(logits), so zero logits are exactly neutral.
class MixtureOracle final : public EpsilonPredictor {
 public:
  MixtureOracle(std::vector<MixtureComponent> components, NoiseSchedule schedule);

  Latent epsilon(const Latent& z, int t, const Condition& c) const override;
  Eigen::Index latent_dim() const override { return dim_; }
  Eigen::Index condition_size() const override {
    return static_cast<Eigen::Index>(components_.size());
  }

  // Posterior component responsibilities at (z, t) under condition c; always
  // sums to 1.
  Eigen::ArrayXd responsibilities(const Latent& z, int t, const Condition& c) const;

  const std::vector<MixtureComponent>& components() const { return components_; }
  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  std::vector<MixtureComponent> components_;
  NoiseSchedule schedule_;
  Eigen::Index dim_ = 0;
};

Latent epsilon_mixture(const Latent& z, int t, const Condition& c, const MixtureOracle& oracle,
                       const NoiseSchedule& schedule);

enum class InjectionMode { none, source, joint };

// Key/value token matrices captured per attention block. Rows cover the
// latent tokens plus one trailing condition token.
struct AttentionFeatures {
  std::vector<Eigen::MatrixXd> keys;
  std::vector<Eigen::MatrixXd> values;
};

struct TokenDenoiserConfig {
  int token_count = 16;
  int embed_dim = 16;
  int head_count = 2;
  int block_count = 2;
  Eigen::Index condition_size = 4;
  double init_scale = 0.15;
  std::uint64_t seed = 7;
};

// Fixed random parameters drawn once from the seed; never trained. The
// condition enters only through an extra key/value token, so replacing the
// key/value set (mode=source) makes the output independent of this model's
// own condition argument.
class TokenDenoiser final : public EpsilonPredictor {
 public:
  explicit TokenDenoiser(const TokenDenoiserConfig& cfg);

  struct ForwardResult {
    Latent eps;
    AttentionFeatures captured;
  };

  ForwardResult forward(const Latent& z, int t, const Condition& c,
                        InjectionMode mode = InjectionMode::none,
                        const AttentionFeatures* injected = nullptr) const;

  Latent epsilon(const Latent& z, int t, const Condition& c) const override {
    return forward(z, t, c).eps;
  }
  Eigen::Index latent_dim() const override {
    return static_cast<Eigen::Index>(cfg_.token_count) * cfg_.embed_dim;
  }
  Eigen::Index condition_size() const override { return cfg_.condition_size; }

  const TokenDenoiserConfig& config() const { return cfg_; }

 private:
  struct Block {
    Eigen::MatrixXd wq, wk, wv, wo;
  };

  Eigen::VectorXd condition_token(const Condition& c) const;

  TokenDenoiserConfig cfg_;
  std::vector<Block> blocks_;
  Eigen::MatrixXd w_time;   // timestep embedding mixer
  Eigen::MatrixXd w_cond;   // logits -> condition token
  Eigen::MatrixXd w_shift;  // pooled shift -> condition token
  Eigen::MatrixXd w_out;    // final per-token projection
};

TokenDenoiser::ForwardResult epsilon_attention(const Latent& z, int t, const Condition& c,
                                               const TokenDenoiser& model,
                                               InjectionMode mode = InjectionMode::none,
                                               const AttentionFeatures* injected = nullptr);

// Jacobian of eps with respect to the flattened condition coordinates
// (logits, then shift), by central finite differences with step h.
Eigen::MatrixXd epsilon_grad_condition(const Latent& z, int t, const Condition& c,
                                       const EpsilonPredictor& predictor, double h = 1e-4);

}  // namespace proxdiff
