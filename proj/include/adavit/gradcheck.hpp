#pragma once

// Central finite-difference oracle, independent of the autodiff path it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "adavit/tensor.hpp"

namespace adavit::testing {

// Max relative error between analytic d(loss)/d(input) and central differences
// perturbing every element of `input`. `forward` must rebuild the graph from
// current input values and return the scalar loss.
inline double gradcheck(Tensor input, const std::function<Tensor()>& forward, double h = 1e-5) {
  input.zero_grad();  // drop any gradient accumulated by an earlier check
  Tensor loss = forward();
  loss.backward();
  std::vector<double> analytic = input.grad();
  if (analytic.empty()) analytic.assign(input.size(), 0.0);

  double max_rel = 0.0;
  auto& data = input.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double keep = data[i];
    data[i] = keep + h;
    const double fp = forward().item();
    data[i] = keep - h;
    const double fm = forward().item();
    data[i] = keep;
    const double fd = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
    max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
  }
  return max_rel;
}

// Directional derivative check over a whole ParamStore: compares g.v against
// (f(p + h v) - f(p - h v)) / 2h for a random direction v. Two evaluations
// regardless of parameter count, so it scales to end-to-end paths.
inline double directional_gradcheck(ParamStore& params, const std::function<Tensor()>& forward,
                                    Rng& rng, double h = 1e-5) {
  params.zero_grad();
  Tensor loss = forward();
  loss.backward();

  std::vector<std::vector<double>> dirs;
  double gdotv = 0.0;
  for (const auto& name : params.names()) {
    Tensor t = params.get(name);
    std::vector<double> v(t.size(), 0.0);
    if (t.requires_grad()) {
      for (auto& x : v) x = rng.gaussian();
      if (t.has_grad())
        for (std::size_t i = 0; i < v.size(); ++i) gdotv += t.grad()[i] * v[i];
    }
    dirs.push_back(std::move(v));
  }

  auto shift = [&](double step) {
    std::size_t k = 0;
    for (const auto& name : params.names()) {
      auto& d = params.get(name).mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += step * dirs[k][i];
      ++k;
    }
  };
  shift(h);
  const double fp = forward().item();
  shift(-2.0 * h);
  const double fm = forward().item();
  shift(h);
  const double fd = (fp - fm) / (2.0 * h);
  const double denom = std::max({std::abs(fd), std::abs(gdotv), 1e-8});
  return std::abs(fd - gdotv) / denom;
}

}  // namespace adavit::testing
