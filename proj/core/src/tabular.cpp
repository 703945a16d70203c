#include "offpoc/tabular.hpp"

#include <cmath>
#include <iomanip>
#include <iostream>
#include <stdexcept>

#include <Eigen/Dense>

#include "offpoc/rng.hpp"

namespace offpoc {

void validate_mdp(const FiniteMdp& mdp) {
  if (mdp.num_states < 1 || mdp.num_actions < 1) {
    throw std::invalid_argument("mdp: needs at least one state and action");
  }
  if (!(mdp.discount >= 0.0 && mdp.discount < 1.0)) {
    throw std::invalid_argument("mdp: discount must lie in [0, 1)");
  }
  if (mdp.transitions.rows() !=
          static_cast<Eigen::Index>(mdp.num_states) * mdp.num_actions ||
      mdp.transitions.cols() != mdp.num_states) {
    throw std::invalid_argument("mdp: transition tensor shape mismatch");
  }
  if (mdp.rewards.rows() != mdp.num_states ||
      mdp.rewards.cols() != mdp.num_actions) {
    throw std::invalid_argument("mdp: reward tensor shape mismatch");
  }
  if (!mdp.rewards.allFinite()) {
    throw std::invalid_argument("mdp: non-finite rewards");
  }
  for (Eigen::Index r = 0; r < mdp.transitions.rows(); ++r) {
    if ((mdp.transitions.row(r).array() < 0.0).any()) {
      throw std::invalid_argument("mdp: negative transition probability");
    }
    if (std::abs(mdp.transitions.row(r).sum() - 1.0) > 1e-12) {
      throw std::invalid_argument("mdp: transition row does not sum to one");
    }
  }
}

void validate_policy(const FiniteMdp& mdp, const TabularPolicy& policy) {
  if (policy.probs.rows() != mdp.num_states ||
      policy.probs.cols() != mdp.num_actions) {
    throw std::invalid_argument("policy: shape mismatch");
  }
  for (Eigen::Index s = 0; s < policy.probs.rows(); ++s) {
    if ((policy.probs.row(s).array() < 0.0).any() ||
        std::abs(policy.probs.row(s).sum() - 1.0) > 1e-12) {
      throw std::invalid_argument("policy: row is not a distribution");
    }
  }
}

FiniteMdp random_mdp(int num_states, int num_actions, double discount,
                     std::uint64_t seed) {
  Rng rng(seed);
  FiniteMdp mdp;
  mdp.num_states = num_states;
  mdp.num_actions = num_actions;
  mdp.discount = discount;
  mdp.transitions.resize(
      static_cast<Eigen::Index>(num_states) * num_actions, num_states);
  for (Eigen::Index r = 0; r < mdp.transitions.rows(); ++r) {
    Eigen::VectorXd row(num_states);
    for (int s = 0; s < num_states; ++s) row[s] = -std::log(1.0 - rng.uniform());
    row /= row.sum();
    // Renormalize so the row sums to one at double precision.
    row[num_states - 1] = 1.0 - row.head(num_states - 1).sum();
    mdp.transitions.row(r) = row;
  }
  mdp.rewards.resize(num_states, num_actions);
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a)
      mdp.rewards(s, a) = rng.uniform(-1.0, 1.0);
  return mdp;
}

TabularPolicy random_policy(const FiniteMdp& mdp, std::uint64_t seed) {
  Rng rng(seed);
  TabularPolicy policy;
  policy.probs.resize(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s) {
    Eigen::VectorXd row(mdp.num_actions);
    for (int a = 0; a < mdp.num_actions; ++a)
      row[a] = -std::log(1.0 - rng.uniform());
    row /= row.sum();
    row[mdp.num_actions - 1] = 1.0 - row.head(mdp.num_actions - 1).sum();
    policy.probs.row(s) = row;
  }
  return policy;
}

TabularPolicy uniform_policy(const FiniteMdp& mdp) {
  TabularPolicy policy;
  policy.probs = Eigen::MatrixXd::Constant(
      mdp.num_states, mdp.num_actions, 1.0 / mdp.num_actions);
  return policy;
}

Eigen::MatrixXd exact_q(const FiniteMdp& mdp, const TabularPolicy& pi) {
  validate_mdp(mdp);
  validate_policy(mdp, pi);
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  const Eigen::Index n = static_cast<Eigen::Index>(S) * A;

  // Q(s,a) = R(s,a) + gamma sum_{s'} P(s'|s,a) sum_b pi(b|s') Q(s',b)
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd rhs(n);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const Eigen::Index i = mdp.row(s, a);
      rhs[i] = mdp.rewards(s, a);
      for (int sp = 0; sp < S; ++sp) {
        const double p = mdp.transitions(i, sp);
        if (p == 0.0) continue;
        for (int b = 0; b < A; ++b) {
          system(i, mdp.row(sp, b)) -= mdp.discount * p * pi.probs(sp, b);
        }
      }
    }
  }
  const Eigen::VectorXd solution = system.partialPivLu().solve(rhs);
  if ((system * solution - rhs).lpNorm<Eigen::Infinity>() > 1e-10) {
    throw std::runtime_error("exact_q: solve residual too large");
  }
  Eigen::MatrixXd q(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) q(s, a) = solution[mdp.row(s, a)];
  return q;
}

namespace {

// Per-(s,a) expected TD residual under Q: R + gamma P (pi . Q) - Q.
Eigen::MatrixXd expected_td(const FiniteMdp& mdp, const TabularPolicy& pi,
                            const Eigen::MatrixXd& q) {
  const Eigen::VectorXd v_pi = (pi.probs.array() * q.array()).rowwise().sum();
  const Eigen::VectorXd bootstrap = mdp.transitions * v_pi;  // (S*A)
  Eigen::MatrixXd td(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a)
      td(s, a) = mdp.rewards(s, a) + mdp.discount * bootstrap[mdp.row(s, a)] -
                 q(s, a);
  return td;
}

double checked_lambda(const LambdaFn& lambda, int t, int s, int a) {
  const double value = lambda(t, s, a);
  if (!(value >= 0.0 && value <= 1.0)) {
    throw std::invalid_argument("lambda must lie in [0, 1]");
  }
  return value;
}

// Occupancy over (state, action) after one behavioral step:
// d'(s',a') = sum_{s,a} d(s,a) P(s'|s,a) eta(a'|s').
Eigen::MatrixXd propagate(const FiniteMdp& mdp, const TabularPolicy& eta,
                          const Eigen::MatrixXd& d) {
  Eigen::VectorXd flat(
      static_cast<Eigen::Index>(mdp.num_states) * mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a)
      flat[mdp.row(s, a)] = d(s, a);
  const Eigen::VectorXd state_marginal = mdp.transitions.transpose() * flat;
  return state_marginal.asDiagonal() * eta.probs;
}

}  // namespace

Eigen::MatrixXd apply_operator(const FiniteMdp& mdp, const TabularPolicy& pi,
                               const TabularPolicy& eta,
                               const Eigen::MatrixXd& q,
                               const LambdaFn& lambda, int horizon) {
  validate_mdp(mdp);
  validate_policy(mdp, pi);
  validate_policy(mdp, eta);
  if (horizon < 1) {
    throw std::invalid_argument("apply_operator: horizon must be >= 1");
  }
  if (q.rows() != mdp.num_states || q.cols() != mdp.num_actions) {
    throw std::invalid_argument("apply_operator: q shape mismatch");
  }

  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  const Eigen::MatrixXd td = expected_td(mdp, pi, q);
  // Lambda values per time step, evaluated once and shared by every start.
  Eigen::MatrixXd lambda_t(S, A);

  Eigen::MatrixXd hq = q;
  std::vector<Eigen::MatrixXd> occupancy(
      static_cast<std::size_t>(S) * A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      occupancy[mdp.row(s, a)] = Eigen::MatrixXd::Zero(S, A);
      occupancy[mdp.row(s, a)](s, a) = 1.0;
    }
  }

  double discount_pow = 1.0;
  for (int t = 0; t <= horizon; ++t) {
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        lambda_t(s, a) = checked_lambda(lambda, t, s, a);
    const Eigen::MatrixXd weighted_td =
        (lambda_t.array() * td.array()).matrix();
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        const Eigen::MatrixXd& d = occupancy[mdp.row(s, a)];
        hq(s, a) += discount_pow * (d.array() * weighted_td.array()).sum();
      }
    }
    if (t < horizon) {
      for (auto& d : occupancy) d = propagate(mdp, eta, d);
      discount_pow *= mdp.discount;
    }
  }
  return hq;
}

ContractionReport contraction_audit(const FiniteMdp& mdp,
                                    const TabularPolicy& pi,
                                    const TabularPolicy& eta,
                                    const Eigen::MatrixXd& q,
                                    const LambdaFn& lambda, int horizon) {
  validate_mdp(mdp);
  validate_policy(mdp, pi);
  validate_policy(mdp, eta);
  if (horizon < 1) {
    throw std::invalid_argument("contraction_audit: horizon must be >= 1");
  }

  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  ContractionReport report;
  report.horizon = horizon;
  report.q_pi = exact_q(mdp, pi);
  report.hq = apply_operator(mdp, pi, eta, q, lambda, horizon);

  const Eigen::MatrixXd td = expected_td(mdp, pi, q);
  report.truncation_tail_bound =
      std::pow(mdp.discount, horizon + 1) / (1.0 - mdp.discount) *
      td.cwiseAbs().maxCoeff();

  report.w.assign(static_cast<std::size_t>(S) * A,
                  Eigen::MatrixXd::Zero(S, A));
  std::vector<Eigen::MatrixXd> occupancy(static_cast<std::size_t>(S) * A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      occupancy[mdp.row(s, a)] = Eigen::MatrixXd::Zero(S, A);
      occupancy[mdp.row(s, a)](s, a) = 1.0;
    }

  Eigen::MatrixXd lambda_t(S, A);
  double discount_pow = 1.0;
  for (int t = 1; t <= horizon; ++t) {
    for (auto& d : occupancy) d = propagate(mdp, eta, d);
    discount_pow *= mdp.discount;
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        lambda_t(s, a) = checked_lambda(lambda, t, s, a);
    // pi(b|y) - eta(b|y) lambda_t(y,b), shared across starts at time t.
    const Eigen::MatrixXd mismatch =
        pi.probs - (eta.probs.array() * lambda_t.array()).matrix();
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        const Eigen::VectorXd state_marginal =
            occupancy[mdp.row(s, a)].rowwise().sum();
        report.w[mdp.row(s, a)] +=
            discount_pow * (state_marginal.asDiagonal() * mismatch);
      }
    }
  }

  report.xi.resize(S, A);
  report.negative_w_counts.resize(S, A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const Eigen::MatrixXd& w = report.w[mdp.row(s, a)];
      report.xi(s, a) = w.sum();
      report.negative_w_counts(s, a) =
          static_cast<int>((w.array() < -1e-12).count());
    }
  }

  const double denom =
      (q - report.q_pi).cwiseAbs().maxCoeff();
  if (denom > 0.0) {
    report.empirical_ratio =
        (report.hq - report.q_pi).cwiseAbs().maxCoeff() / denom;
  }
  return report;
}

void save_mdp(std::ostream& out, const FiniteMdp& mdp) {
  out << std::setprecision(17);
  out << "mdp 1\n";
  out << "states " << mdp.num_states << '\n';
  out << "actions " << mdp.num_actions << '\n';
  out << "discount " << mdp.discount << '\n';
  out << "rewards\n";
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      if (a) out << ' ';
      out << mdp.rewards(s, a);
    }
    out << '\n';
  }
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      out << "transition " << s << ' ' << a << '\n';
      for (int sp = 0; sp < mdp.num_states; ++sp) {
        if (sp) out << ' ';
        out << mdp.transitions(mdp.row(s, a), sp);
      }
      out << '\n';
    }
  }
}

FiniteMdp load_mdp(std::istream& in) {
  std::string token;
  if (!(in >> token) || token != "mdp") {
    throw std::runtime_error("mdp file: missing header");
  }
  int version = 0;
  in >> version;
  if (version != 1) {
    throw std::runtime_error("mdp file: unsupported version");
  }
  FiniteMdp mdp;
  auto expect = [&](const char* expected) {
    if (!(in >> token) || token != expected) {
      throw std::runtime_error(std::string("mdp file: expected ") + expected);
    }
  };
  expect("states");
  in >> mdp.num_states;
  expect("actions");
  in >> mdp.num_actions;
  expect("discount");
  in >> mdp.discount;
  if (mdp.num_states < 1 || mdp.num_actions < 1) {
    throw std::runtime_error("mdp file: bad sizes");
  }
  expect("rewards");
  mdp.rewards.resize(mdp.num_states, mdp.num_actions);
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a) {
      if (!(in >> mdp.rewards(s, a))) {
        throw std::runtime_error("mdp file: truncated rewards");
      }
    }
  mdp.transitions.resize(
      static_cast<Eigen::Index>(mdp.num_states) * mdp.num_actions,
      mdp.num_states);
  mdp.transitions.setConstant(-1.0);
  for (int k = 0;
       k < mdp.num_states * mdp.num_actions; ++k) {
    expect("transition");
    int s = -1;
    int a = -1;
    in >> s >> a;
    if (s < 0 || s >= mdp.num_states || a < 0 || a >= mdp.num_actions) {
      throw std::runtime_error("mdp file: transition index out of range");
    }
    for (int sp = 0; sp < mdp.num_states; ++sp) {
      if (!(in >> mdp.transitions(mdp.row(s, a), sp))) {
        throw std::runtime_error("mdp file: truncated transition row");
      }
    }
  }
  validate_mdp(mdp);
  return mdp;
}

}  // namespace offpoc
