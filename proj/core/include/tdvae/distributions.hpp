#pragma once

#include "tdvae/ops.hpp"
#include "tdvae/rng.hpp"
#include "tdvae/tensor.hpp"

namespace tdvae {

// log standard deviations are hard-clamped to this range everywhere a
// network emits them.
inline constexpr double kLogStdMin = -8.0;
inline constexpr double kLogStdMax = 4.0;

// Diagonal Gaussian in parameter form. mean and log_std share one shape,
// either [d] or [batch x d].
struct GaussianParams {
  Tensor mean;
  Tensor log_std;
};

// Clamps log_std into the supported range; use for every network output.
GaussianParams make_gaussian(Tensor mean, Tensor raw_log_std);

// Factorized Bernoulli in logit form.
struct BernoulliLogits {
  Tensor logits;
};

// Source of standard-normal draws consumed by reparameterized sampling.
// Keeping this behind an interface lets gradient checks replay the exact
// noise of a previous evaluation.
struct NoiseSource {
  virtual ~NoiseSource() = default;
  virtual Tensor standard_normal(const Shape& shape) = 0;
};

// Live draws from an Rng stream.
class RngNoise : public NoiseSource {
 public:
  explicit RngNoise(Rng& rng) : rng_(&rng) {}
  Tensor standard_normal(const Shape& shape) override;

 private:
  Rng* rng_;
};

// Records draws on first use and replays them bit-identically after
// rewind(). Replay checks shapes, which catches graphs whose structure
// depends on parameter values.
class RecordedNoise : public NoiseSource {
 public:
  explicit RecordedNoise(Rng rng) : rng_(rng) {}
  Tensor standard_normal(const Shape& shape) override;
  void rewind() { pos_ = 0; }

 private:
  Rng rng_;
  std::vector<Tensor> draws_;
  std::size_t pos_ = 0;
};

// mean + exp(log_std) * noise, differentiable in the distribution
// parameters (the pathwise estimator).
Tensor gaussian_sample(const GaussianParams& p, const Tensor& noise);
Tensor gaussian_sample(const GaussianParams& p, NoiseSource& noise);

// Sum over the trailing axis of elementwise log N(v; mean, exp(log_std)^2):
// [batch x d] -> [batch], [d] -> scalar.
Tensor gaussian_log_prob(const GaussianParams& p, const Tensor& v);

// Closed-form KL(q || p) between diagonal Gaussians, reduced like
// gaussian_log_prob. Exactly zero when q and p are the same tensors.
Tensor gaussian_kl(const GaussianParams& q, const GaussianParams& p);

// Sum over the trailing axis of t*l - softplus(l); targets must be 0 or 1.
Tensor bernoulli_log_prob(const BernoulliLogits& b, const Tensor& target);

}  // namespace tdvae
