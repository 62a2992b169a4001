#pragma once

// EDM-preconditioned diffusion: scaling coefficients, lognormal noise
// sampling, the weighted denoising loss, classifier-free guidance, and
// the deterministic Heun sampler. The network is any callable
// net(z_scaled, c_noise, cond) -> Tensor of the same shape.

#include <cmath>
#include <random>
#include <vector>

#include "loris/conditioning.hpp"
#include "loris/errors.hpp"
#include "loris/tensor.hpp"

namespace loris {

template <typename S>
struct EdmConfig {
  S sigma_data = S(0.1);
  S p_mean = S(-3.0);
  S p_std = S(1.0);
  S sigma_min = S(0.002);
  S sigma_max = S(1.0);
  S rho = S(7.0);
  int steps = 50;
  S guidance = S(20.0);
};

template <typename S>
struct ScalingCoeffs {
  S c_skip, c_out, c_in, c_noise;
};

template <typename S>
ScalingCoeffs<S> scaling(S sigma, const EdmConfig<S>& cfg) {
  if (!(sigma > S(0)))
    throw DomainError("scaling: sigma must be > 0");
  S sd2 = cfg.sigma_data * cfg.sigma_data;
  S denom = sigma * sigma + sd2;
  ScalingCoeffs<S> c;
  c.c_skip = sd2 / denom;
  c.c_out = sigma * cfg.sigma_data / std::sqrt(denom);
  c.c_in = S(1) / std::sqrt(denom);
  c.c_noise = std::log(sigma) / S(4);
  return c;
}

// D(z, sigma) = c_skip * z + c_out * net(c_in * z, c_noise, cond)
template <typename S, typename Net>
Tensor<S> denoise(const Tensor<S>& z_noisy, S sigma,
                  const ConditioningSet<S>& cond, Net&& net,
                  const EdmConfig<S>& cfg) {
  auto c = scaling(sigma, cfg);
  Tensor<S> f = net(mul(z_noisy, c.c_in), c.c_noise, cond);
  if (f.shape() != z_noisy.shape())
    throw DimensionError("denoise: net output " + shape_str(f.shape()) +
                         " does not match input " + shape_str(z_noisy.shape()));
  return add(mul(z_noisy, c.c_skip), mul(f, c.c_out));
}

template <typename S, typename Rng>
S sample_sigma(Rng& rng, const EdmConfig<S>& cfg) {
  std::lognormal_distribution<double> d(static_cast<double>(cfg.p_mean),
                                        static_cast<double>(cfg.p_std));
  return static_cast<S>(d(rng));
}

// Loss at a fixed (sigma, noise) draw: lambda(sigma) * mean||D - z0||^2
// with lambda = 1/c_out^2.
template <typename S, typename Net>
Tensor<S> training_loss_at(const Tensor<S>& z0, const ConditioningSet<S>& cond,
                           S sigma, const Tensor<S>& noise, Net&& net,
                           const EdmConfig<S>& cfg) {
  if (noise.shape() != z0.shape())
    throw DimensionError("training_loss: noise shape mismatch");
  Tensor<S> z_noisy = add(z0, mul(noise, sigma));
  Tensor<S> d = denoise(z_noisy, sigma, cond, net, cfg);
  S lambda = S(1) / (scaling(sigma, cfg).c_out * scaling(sigma, cfg).c_out);
  return mul(mean(square(sub(d, z0))), lambda);
}

template <typename S, typename Net, typename Rng>
Tensor<S> training_loss(const Tensor<S>& z0, const ConditioningSet<S>& cond,
                        Rng& rng, Net&& net, const EdmConfig<S>& cfg) {
  S sigma = sample_sigma(rng, cfg);
  Tensor<S> noise = Tensor<S>::randn(z0.shape(), rng);
  return training_loss_at(z0, cond, sigma, noise, net, cfg);
}

// D_cfg = D_uncond + w * (D_cond - D_uncond); w = 0 and w = 1 collapse
// to the plain branches without arithmetic.
template <typename S, typename Net>
Tensor<S> cfg_denoise(const Tensor<S>& z_noisy, S sigma,
                      const ConditioningSet<S>& cond,
                      const ConditioningSet<S>& null_cond, Net&& net,
                      const EdmConfig<S>& cfg, S w) {
  if (w == S(1)) return denoise(z_noisy, sigma, cond, net, cfg);
  Tensor<S> du = denoise(z_noisy, sigma, null_cond, net, cfg);
  if (w == S(0)) return du;
  Tensor<S> dc = denoise(z_noisy, sigma, cond, net, cfg);
  return add(du, mul(sub(dc, du), w));
}

// sigma_i = (max^(1/rho) + (i/(N-1))(min^(1/rho) - max^(1/rho)))^rho for
// i = 0..N-1, with a trailing 0. Strictly decreasing, sigma_{N-1} = min.
template <typename S>
std::vector<S> sigma_schedule(const EdmConfig<S>& cfg) {
  if (cfg.steps < 1) throw ConfigError("sigma_schedule: steps must be >= 1");
  if (!(cfg.sigma_min > S(0)) || !(cfg.sigma_min < cfg.sigma_max))
    throw ConfigError("sigma_schedule: need 0 < sigma_min < sigma_max");
  std::vector<S> s(cfg.steps + 1, S(0));
  double inv_rho = 1.0 / static_cast<double>(cfg.rho);
  double hi = std::pow(static_cast<double>(cfg.sigma_max), inv_rho);
  double lo = std::pow(static_cast<double>(cfg.sigma_min), inv_rho);
  for (int i = 0; i < cfg.steps; ++i) {
    double f = cfg.steps == 1 ? 0.0 : static_cast<double>(i) / (cfg.steps - 1);
    s[i] = static_cast<S>(std::pow(hi + f * (lo - hi), static_cast<double>(cfg.rho)));
  }
  return s;
}

// Deterministic Heun sampler over any denoiser den(z, sigma). The Euler
// predictor is written as D + (s_next/s)*(z - D) so the final step lands
// exactly on the denoised value; the 2nd-order correction is skipped when
// s_next = 0.
template <typename S, typename Den, typename Rng>
Tensor<S> sample_with_denoiser(Den&& den, const Shape& shape,
                               const EdmConfig<S>& cfg, Rng& rng) {
  auto s = sigma_schedule(cfg);
  Tensor<S> z = Tensor<S>::randn(shape, rng, s[0]);
  for (int i = 0; i < cfg.steps; ++i) {
    S si = s[i], sn = s[i + 1];
    Tensor<S> d = den(z, si);
    Tensor<S> z_pred = add(d, mul(sub(z, d), sn / si));
    if (sn > S(0)) {
      Tensor<S> slope = mul(sub(z, d), S(1) / si);
      Tensor<S> d2 = den(z_pred, sn);
      Tensor<S> slope2 = mul(sub(z_pred, d2), S(1) / sn);
      z_pred = add(z, mul(add(slope, slope2), (sn - si) / S(2)));
    }
    z = z_pred;
  }
  return z;
}

template <typename S, typename Net, typename Rng>
Tensor<S> sample(const ConditioningSet<S>& cond,
                 const ConditioningSet<S>& null_cond, Net&& net,
                 const Shape& shape, const EdmConfig<S>& cfg, Rng& rng) {
  auto den = [&](const Tensor<S>& z, S sigma) {
    return cfg_denoise(z, sigma, cond, null_cond, net, cfg, cfg.guidance);
  };
  return sample_with_denoiser<S>(den, shape, cfg, rng);
}

}  // namespace loris
