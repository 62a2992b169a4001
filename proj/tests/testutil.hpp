#pragma once

// Shared test helpers: finite-difference gradient oracle and small
// generators. The oracle only touches tensor values and the public
// backward path, never the op internals it is checking.

#include <cmath>
#include <random>
#include <vector>

#include "loris/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b) {
  double denom = std::max({1e-8, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

// Central finite differences against tape gradients at `points_per_param`
// random coordinates of every parameter. `loss_fn` must rebuild the loss
// from the current parameter values each call. Returns the worst relative
// error seen.
template <class Fn>
double max_fd_rel_err(std::vector<loris::Tensor<double>> params, Fn loss_fn,
                      std::mt19937& rng, int points_per_param = 10,
                      double h = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    loris::Tape<double> tape;
    auto loss = loss_fn();
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& p : params) {
    std::uniform_int_distribution<long> pick(0, p.size() - 1);
    for (int i = 0; i < points_per_param; ++i) {
      long j = pick(rng);
      double orig = p.data()[j];
      p.data()[j] = orig + h;
      double lp = loss_fn().item();
      p.data()[j] = orig - h;
      double lm = loss_fn().item();
      p.data()[j] = orig;
      double fd = (lp - lm) / (2.0 * h);
      double an = p.grad()[j];
      if (std::fabs(fd) < 1e-9 && std::fabs(an) < 1e-9) continue;
      worst = std::max(worst, rel_err(fd, an));
    }
  }
  return worst;
}

}  // namespace testutil
