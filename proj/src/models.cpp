#include "proxdiff/models.hpp"

#include "proxdiff/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace proxdiff {

namespace {

void check_condition(const Condition& c, Eigen::Index logit_count, Eigen::Index dim) {
  if (c.logits.size() != logit_count)
    throw std::invalid_argument("condition logits length does not match predictor");
  if (!c.logits.allFinite()) throw std::invalid_argument("condition logits must be finite");
  if (c.has_shift()) {
    if (c.shift.size() != dim)
      throw std::invalid_argument("condition shift length does not match latent dimension");
    if (!c.shift.allFinite()) throw std::invalid_argument("condition shift must be finite");
  }
}

}  // namespace

MixtureOracle::MixtureOracle(std::vector<MixtureComponent> components, NoiseSchedule schedule)
    : components_(std::move(components)), schedule_(std::move(schedule)) {
  if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
  dim_ = components_.front().mean.size();
  if (dim_ == 0) throw std::invalid_argument("mixture component means must be nonempty");
  double total = 0.0;
  for (const auto& comp : components_) {
    if (comp.mean.size() != dim_)
      throw std::invalid_argument("mixture component means must share one dimension");
    if (!comp.mean.allFinite()) throw std::invalid_argument("mixture means must be finite");
    if (!(comp.weight > 0.0)) throw std::invalid_argument("mixture weights must be positive");
    if (!(comp.scale > 0.0)) throw std::invalid_argument("mixture scales must be positive");
    total += comp.weight;
  }
  for (auto& comp : components_) comp.weight /= total;
}

Eigen::ArrayXd MixtureOracle::responsibilities(const Latent& z, int t, const Condition& c) const {
  check_condition(c, condition_size(), dim_);
  if (z.size() != dim_) throw std::invalid_argument("latent dimension does not match oracle");
  if (!z.allFinite()) throw std::invalid_argument("latent must be finite");

  const double abar = schedule_.alpha_bar_at(t);
  const auto k = static_cast<Eigen::Index>(components_.size());

  // Unnormalized log posterior per component; kept in log space and
  // normalized with a max-shifted softmax for stability.
  Eigen::ArrayXd logp(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& comp = components_[static_cast<std::size_t>(i)];
    Eigen::VectorXd mean = comp.mean;
    if (c.has_shift()) mean += c.shift;
    const double var = abar * comp.scale * comp.scale + (1.0 - abar);
    const double sq = (z.matrix() - std::sqrt(abar) * mean).squaredNorm();
    logp[i] = std::log(comp.weight) + c.logits[i] -
              0.5 * static_cast<double>(dim_) * std::log(var) - sq / (2.0 * var);
  }
  logp -= logp.maxCoeff();
  Eigen::ArrayXd r = logp.exp();
  return r / r.sum();
}

Latent MixtureOracle::epsilon(const Latent& z, int t, const Condition& c) const {
  return epsilon_mixture(z, t, c, *this, schedule_);
}

Latent epsilon_mixture(const Latent& z, int t, const Condition& c, const MixtureOracle& oracle,
                       const NoiseSchedule& schedule) {
  const Eigen::ArrayXd r = oracle.responsibilities(z, t, c);
  const double abar = schedule.alpha_bar_at(t);
  const double root_abar = std::sqrt(abar);
  const double root_resid = std::sqrt(1.0 - abar);

  Latent eps = Latent::Zero(z.size());
  const auto& comps = oracle.components();
  for (std::size_t i = 0; i < comps.size(); ++i) {
    Eigen::VectorXd mean = comps[i].mean;
    if (c.has_shift()) mean += c.shift;
    const double var = abar * comps[i].scale * comps[i].scale + (1.0 - abar);
    eps += r[static_cast<Eigen::Index>(i)] * root_resid / var *
           (z - root_abar * mean.array());
  }
  return eps;
}

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double init_scale) {
  Eigen::MatrixXd m(rows, cols);
  const double scale = init_scale / std::sqrt(static_cast<double>(cols));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

Eigen::VectorXd sinusoid_embedding(int t, Eigen::Index dim) {
  Eigen::VectorXd e(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i / 2 * 2) / static_cast<double>(dim));
    const double angle = t * freq;
    e[i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return e;
}

Eigen::MatrixXd softmax_rows(Eigen::MatrixXd scores) {
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::ArrayXd row = scores.row(i).array();
    row -= row.maxCoeff();
    row = row.exp();
    scores.row(i) = (row / row.sum()).matrix();
  }
  return scores;
}

}  // namespace

TokenDenoiser::TokenDenoiser(const TokenDenoiserConfig& cfg) : cfg_(cfg) {
  if (cfg_.token_count < 1 || cfg_.embed_dim < 1 || cfg_.head_count < 1 || cfg_.block_count < 1)
    throw std::invalid_argument("token denoiser dimensions must be positive");
  if (cfg_.condition_size < 1)
    throw std::invalid_argument("token denoiser condition size must be positive");
  if (cfg_.embed_dim % cfg_.head_count != 0)
    throw std::invalid_argument("embed_dim must be divisible by head_count");

  Rng rng(cfg_.seed);
  const Eigen::Index e = cfg_.embed_dim;
  blocks_.resize(static_cast<std::size_t>(cfg_.block_count));
  for (auto& b : blocks_) {
    b.wq = random_matrix(rng, e, e, cfg_.init_scale);
    b.wk = random_matrix(rng, e, e, cfg_.init_scale);
    b.wv = random_matrix(rng, e, e, cfg_.init_scale);
    b.wo = random_matrix(rng, e, e, cfg_.init_scale);
  }
  w_time = random_matrix(rng, e, e, cfg_.init_scale);
  w_cond = random_matrix(rng, e, cfg_.condition_size, cfg_.init_scale);
  w_shift = random_matrix(rng, e, e, cfg_.init_scale);
  w_out = random_matrix(rng, e, e, cfg_.init_scale);
}

Eigen::VectorXd TokenDenoiser::condition_token(const Condition& c) const {
  Eigen::VectorXd tok = w_cond * c.logits;
  if (c.has_shift()) {
    // Pool the shift image over tokens so the condition token stays one row.
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        shift(c.shift.data(), cfg_.token_count, cfg_.embed_dim);
    tok += w_shift * shift.colwise().mean().transpose();
  }
  return tok;
}

TokenDenoiser::ForwardResult TokenDenoiser::forward(const Latent& z, int t, const Condition& c,
                                                    InjectionMode mode,
                                                    const AttentionFeatures* injected) const {
  const Eigen::Index tc = cfg_.token_count;
  const Eigen::Index e = cfg_.embed_dim;
  if (z.size() != tc * e)
    throw std::invalid_argument("latent is not reshapeable to (token_count, embed_dim)");
  if (!z.allFinite()) throw std::invalid_argument("latent must be finite");
  check_condition(c, cfg_.condition_size, latent_dim());
  if (mode != InjectionMode::none) {
    if (injected == nullptr)
      throw std::invalid_argument("injection mode requires captured features");
    if (injected->keys.size() != blocks_.size() || injected->values.size() != blocks_.size())
      throw std::invalid_argument("injected features block count mismatch");
  }

  Eigen::MatrixXd x =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          z.data(), tc, e);
  x.rowwise() += (w_time * sinusoid_embedding(t, e)).transpose();
  const Eigen::VectorXd ctok = condition_token(c);

  ForwardResult out;
  const Eigen::Index heads = cfg_.head_count;
  const Eigen::Index dh = e / heads;

  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const Block& b = blocks_[bi];
    Eigen::MatrixXd y(tc + 1, e);
    y.topRows(tc) = x;
    y.row(tc) = ctok.transpose();

    Eigen::MatrixXd own_k = y * b.wk;
    Eigen::MatrixXd own_v = y * b.wv;
    out.captured.keys.push_back(own_k);
    out.captured.values.push_back(own_v);

    Eigen::MatrixXd k_use, v_use;
    switch (mode) {
      case InjectionMode::none:
        k_use = own_k;
        v_use = own_v;
        break;
      case InjectionMode::source: {
        const auto& ik = injected->keys[bi];
        const auto& iv = injected->values[bi];
        if (ik.rows() != tc + 1 || ik.cols() != e || iv.rows() != tc + 1 || iv.cols() != e)
          throw std::invalid_argument("injected feature shape mismatch");
        k_use = ik;
        v_use = iv;
        break;
      }
      case InjectionMode::joint: {
        const auto& ik = injected->keys[bi];
        const auto& iv = injected->values[bi];
        if (ik.rows() != tc + 1 || ik.cols() != e || iv.rows() != tc + 1 || iv.cols() != e)
          throw std::invalid_argument("injected feature shape mismatch");
        k_use.resize(2 * (tc + 1), e);
        k_use << own_k, ik;
        v_use.resize(2 * (tc + 1), e);
        v_use << own_v, iv;
        break;
      }
    }

    const Eigen::MatrixXd q = x * b.wq;
    Eigen::MatrixXd attended(tc, e);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto qh = q.middleCols(h * dh, dh);
      const auto kh = k_use.middleCols(h * dh, dh);
      const auto vh = v_use.middleCols(h * dh, dh);
      const Eigen::MatrixXd weights =
          softmax_rows(qh * kh.transpose() / std::sqrt(static_cast<double>(dh)));
      attended.middleCols(h * dh, dh) = weights * vh;
    }
    x += attended * b.wo;
  }

  const Eigen::MatrixXd eps_mat = x * w_out;
  Latent eps(tc * e);
  for (Eigen::Index i = 0; i < tc; ++i)
    for (Eigen::Index j = 0; j < e; ++j) eps[i * e + j] = eps_mat(i, j);
  out.eps = std::move(eps);
  return out;
}

TokenDenoiser::ForwardResult epsilon_attention(const Latent& z, int t, const Condition& c,
                                               const TokenDenoiser& model, InjectionMode mode,
                                               const AttentionFeatures* injected) {
  return model.forward(z, t, c, mode, injected);
}

Eigen::MatrixXd epsilon_grad_condition(const Latent& z, int t, const Condition& c,
                                       const EpsilonPredictor& predictor, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("epsilon_grad_condition: h must be positive");
  const Eigen::Index n = z.size();
  const Eigen::Index m = c.coord_count();
  Eigen::MatrixXd jac(n, m);
  Condition probe = c;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double original = probe.coord(j);
    probe.set_coord(j, original + h);
    const Latent plus = predictor.epsilon(z, t, probe);
    probe.set_coord(j, original - h);
    const Latent minus = predictor.epsilon(z, t, probe);
    probe.set_coord(j, original);
    jac.col(j) = ((plus - minus) / (2.0 * h)).matrix();
  }
  return jac;
}

}  // namespace proxdiff
