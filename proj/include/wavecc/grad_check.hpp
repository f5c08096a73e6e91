#pragma once

// Central finite-difference gradient checker. Graphs are evaluated in
// double precision so roundoff does not mask real derivative errors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "wavecc/autodiff.hpp"

namespace wavecc {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckParam {
  std::string name;
  Var<double> var;
};

/// Below `floor` both values are compared in absolute terms.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares the analytic gradient of `loss_fn` against
/// (f(theta + eps) - f(theta - eps)) / (2 eps) on up to `coords_per_param`
/// randomly chosen coordinates of every parameter.
inline GradCheckReport grad_check(const std::function<Var<double>()>& loss_fn,
                                  const std::vector<GradCheckParam>& params, double eps,
                                  std::size_t coords_per_param = 8, std::uint64_t seed = 7) {
  for (const auto& p : params) const_cast<Var<double>&>(p.var).zero_grad();
  double base = 0.0;
  {
    Var<double> loss = loss_fn();
    if (!std::isfinite(loss.value()[0])) fail(ErrorKind::kNumeric, "grad_check: non-finite loss at base point");
    base = loss.value()[0];
    backward(loss);
  }
  // Smallest slope the difference quotient can resolve against roundoff in f.
  const double floor = std::max(1e-8, 1e3 * std::numeric_limits<double>::epsilon() * std::abs(base) / eps);
  std::mt19937_64 rng(seed);
  GradCheckReport report;
  for (const auto& p : params) {
    Var<double> v = p.var;
    const std::size_t n = v.size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (n > coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(coords_per_param);
    }
    for (std::size_t i : coords) {
      const double analytic = v.has_grad() ? v.grad()[i] : 0.0;
      double& theta = v.mutable_value()[i];
      const double saved = theta;
      double f_plus, f_minus;
      {
        NoGradGuard guard;
        theta = saved + eps;
        f_plus = loss_fn().value()[0];
        theta = saved - eps;
        f_minus = loss_fn().value()[0];
      }
      theta = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        fail(ErrorKind::kNumeric, "grad_check: non-finite loss while probing " + p.name + "[" + std::to_string(i) + "]");
      }
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double rel = relative_error(analytic, numeric, floor);
      ++report.checked;
      if (rel > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        if (rel >= report.max_rel_error) {
          report.worst_param = p.name;
          report.worst_index = i;
          report.worst_analytic = analytic;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace wavecc
