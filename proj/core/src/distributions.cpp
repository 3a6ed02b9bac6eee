#include "tdvae/distributions.hpp"

#include <cmath>
#include <numbers>

namespace tdvae {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2*pi)

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// [batch x d] -> [batch], [d] -> scalar.
Tensor reduce_trailing(const Tensor& elt) {
  if (elt.rank() == 2) return reduce_sum(elt, 1);
  return reduce_sum(elt);
}

}  // namespace

GaussianParams make_gaussian(Tensor mean, Tensor raw_log_std) {
  check_same_shape(mean, raw_log_std, "make_gaussian");
  return {std::move(mean), clamp(raw_log_std, kLogStdMin, kLogStdMax)};
}

Tensor RngNoise::standard_normal(const Shape& shape) {
  Tensor t(shape);
  rng_->fill_normal({t.data(), t.numel()});
  return t;
}

Tensor RecordedNoise::standard_normal(const Shape& shape) {
  if (pos_ < draws_.size()) {
    const Tensor& t = draws_[pos_];
    if (t.shape() != shape)
      throw ContractError("recorded noise: replay shape " + shape_str(shape) +
                          " differs from recorded " + shape_str(t.shape()));
    ++pos_;
    return t;
  }
  Tensor t(shape);
  rng_.fill_normal({t.data(), t.numel()});
  draws_.push_back(t);
  ++pos_;
  return t;
}

Tensor gaussian_sample(const GaussianParams& p, const Tensor& noise) {
  check_same_shape(p.mean, p.log_std, "gaussian_sample");
  check_same_shape(p.mean, noise, "gaussian_sample noise");
  if (noise.attached())
    throw ContractError("gaussian_sample: noise must be a constant");
  return p.mean + exp(p.log_std) * noise;
}

Tensor gaussian_sample(const GaussianParams& p, NoiseSource& noise) {
  return gaussian_sample(p, noise.standard_normal(p.mean.shape()));
}

Tensor gaussian_log_prob(const GaussianParams& p, const Tensor& v) {
  check_same_shape(p.mean, p.log_std, "gaussian_log_prob");
  check_same_shape(p.mean, v, "gaussian_log_prob value");
  Tensor z = (v - p.mean) * exp(neg(p.log_std));
  Tensor elt =
      add_scalar(neg(p.log_std) - scale(square(z), 0.5), -kHalfLog2Pi);
  return reduce_trailing(elt);
}

Tensor gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
  check_same_shape(q.mean, q.log_std, "gaussian_kl q");
  check_same_shape(p.mean, p.log_std, "gaussian_kl p");
  check_same_shape(q.mean, p.mean, "gaussian_kl");
  // (p.ls - q.ls) + (exp(2(q.ls - p.ls)) + ((q.m - p.m) exp(-p.ls))^2)/2 - 1/2
  // Written so KL(q, q) cancels to exactly zero in floating point.
  Tensor dls = p.log_std - q.log_std;
  Tensor var_ratio = exp(scale(dls, -2.0));
  Tensor md = (q.mean - p.mean) * exp(neg(p.log_std));
  Tensor elt = add_scalar(dls + scale(var_ratio + square(md), 0.5), -0.5);
  return reduce_trailing(elt);
}

Tensor bernoulli_log_prob(const BernoulliLogits& b, const Tensor& target) {
  check_same_shape(b.logits, target, "bernoulli_log_prob");
  const double* t = target.data();
  for (std::size_t i = 0; i < target.numel(); ++i)
    if (t[i] != 0.0 && t[i] != 1.0)
      throw ContractError("bernoulli_log_prob: target " +
                          std::to_string(t[i]) + " at flat index " +
                          std::to_string(i) + " is not 0 or 1");
  Tensor elt = target * b.logits - softplus(b.logits);
  return reduce_trailing(elt);
}

}  // namespace tdvae
