#pragma once

// Test-only oracles, independent of the library code paths they check:
// adaptive quadrature for 1-D divergences, value iteration for tabular Q,
// and central finite differences for gradients.

#include <cmath>
#include <functional>
#include <stdexcept>

#include <Eigen/Core>

#include "offpoc/net.hpp"
#include "offpoc/tabular.hpp"

namespace oracles {

// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f,
                               double a, double b, double tol, int depth,
                               double fa, double fm, double fb) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return adaptive_simpson(f, a, m, tol / 2.0, depth - 1, fa, flm, fm) +
         adaptive_simpson(f, m, b, tol / 2.0, depth - 1, fm, frm, fb);
}

// Panelized so narrow features cannot slip between the first samples of a
// single adaptive call over a wide range.
inline double integrate(const std::function<double(double)>& f, double a,
                        double b, double tol = 1e-11) {
  constexpr int kPanels = 128;
  const double width = (b - a) / kPanels;
  double total = 0.0;
  for (int i = 0; i < kPanels; ++i) {
    const double lo = a + i * width;
    const double hi = lo + width;
    const double m = 0.5 * (lo + hi);
    total += adaptive_simpson(f, lo, hi, tol / kPanels, 40, f(lo), f(m),
                              f(hi));
  }
  return total;
}

struct Gaussian1d {
  double mean;
  double variance;
  // Log density stays finite far into the tails where the density itself
  // underflows; the integrands below work in log space.
  double log_density(double x) const {
    const double d = x - mean;
    return -0.5 * d * d / variance -
           0.5 * std::log(2.0 * M_PI * variance);
  }
};

// Integration range covering both densities far into the tails.
inline std::pair<double, double> support(const Gaussian1d& p,
                                         const Gaussian1d& q) {
  const double sp = std::sqrt(p.variance);
  const double sq = std::sqrt(q.variance);
  const double lo = std::min(p.mean - 14.0 * sp, q.mean - 14.0 * sq);
  const double hi = std::max(p.mean + 14.0 * sp, q.mean + 14.0 * sq);
  return {lo, hi};
}

// KL(p || q) by quadrature of e^{lp} (lp - lq).
inline double kl_by_quadrature(const Gaussian1d& p, const Gaussian1d& q) {
  const auto [lo, hi] = support(p, q);
  return integrate(
      [&](double x) {
        const double lp = p.log_density(x);
        const double lq = q.log_density(x);
        const double dp = std::exp(lp);
        return dp == 0.0 ? 0.0 : dp * (lp - lq);
      },
      lo, hi);
}

// JSD by quadrature of the defining integral with mixture m.
inline double jsd_by_quadrature(const Gaussian1d& p, const Gaussian1d& q) {
  const auto [lo, hi] = support(p, q);
  return integrate(
      [&](double x) {
        const double lp = p.log_density(x);
        const double lq = q.log_density(x);
        const double hi_l = std::max(lp, lq);
        const double lm =
            hi_l + std::log1p(std::exp(std::min(lp, lq) - hi_l)) -
            std::log(2.0);
        const double dp = std::exp(lp);
        const double dq = std::exp(lq);
        double total = 0.0;
        if (dp > 0.0) total += 0.5 * dp * (lp - lm);
        if (dq > 0.0) total += 0.5 * dq * (lq - lm);
        return total;
      },
      lo, hi);
}

// Value iteration as an independent check of the linear Bellman solve.
inline Eigen::MatrixXd value_iteration_q(const offpoc::FiniteMdp& mdp,
                                         const offpoc::TabularPolicy& pi,
                                         int iterations) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(mdp.num_states, mdp.num_actions);
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd v = (pi.probs.array() * q.array()).rowwise().sum();
    const Eigen::VectorXd bootstrap = mdp.transitions * v;
    Eigen::MatrixXd next(mdp.num_states, mdp.num_actions);
    for (int s = 0; s < mdp.num_states; ++s)
      for (int a = 0; a < mdp.num_actions; ++a)
        next(s, a) =
            mdp.rewards(s, a) + mdp.discount * bootstrap[mdp.row(s, a)];
    q = next;
  }
  return q;
}

// Central finite differences of a scalar function over every network
// parameter; returns the maximum relative error against `analytic`.
inline double max_relative_gradient_error(
    offpoc::NetworkParams& net, const std::function<double()>& evaluate,
    const offpoc::Gradients& analytic, double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto probe = [&](double& param, double analytic_grad) {
      const double saved = param;
      param = saved + step;
      const double up = evaluate();
      param = saved - step;
      const double down = evaluate();
      param = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double scale =
          std::max({1.0, std::abs(numeric), std::abs(analytic_grad)});
      worst = std::max(worst, std::abs(numeric - analytic_grad) / scale);
    };
    for (Eigen::Index r = 0; r < net.layers[l].weight.rows(); ++r)
      for (Eigen::Index c = 0; c < net.layers[l].weight.cols(); ++c)
        probe(net.layers[l].weight(r, c), analytic.layers[l].weight(r, c));
    for (Eigen::Index r = 0; r < net.layers[l].bias.size(); ++r)
      probe(net.layers[l].bias[r], analytic.layers[l].bias[r]);
  }
  return worst;
}

}  // namespace oracles
