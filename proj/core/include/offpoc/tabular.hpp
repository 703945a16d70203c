#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace offpoc {

// Finite MDP with dense dynamics. transitions has one row per (state,
// action) pair, indexed state * num_actions + action; each row is a
// distribution over successor states.
struct FiniteMdp {
  int num_states = 0;
  int num_actions = 0;
  Eigen::MatrixXd transitions;  // (S*A) x S
  Eigen::MatrixXd rewards;      // S x A
  double discount = 0.9;

  Eigen::Index row(int state, int action) const {
    return static_cast<Eigen::Index>(state) * num_actions + action;
  }
};

// Throws std::invalid_argument when rows do not sum to one (1e-12), entries
// are negative, rewards are non-finite, or the discount is outside [0, 1).
void validate_mdp(const FiniteMdp& mdp);

struct TabularPolicy {
  Eigen::MatrixXd probs;  // S x A, rows sum to one
};

void validate_policy(const FiniteMdp& mdp, const TabularPolicy& policy);

FiniteMdp random_mdp(int num_states, int num_actions, double discount,
                     std::uint64_t seed);
TabularPolicy random_policy(const FiniteMdp& mdp, std::uint64_t seed);
TabularPolicy uniform_policy(const FiniteMdp& mdp);

// Exact Q^pi by direct solve of the linear Bellman system; the residual of
// the returned solution is below 1e-10.
Eigen::MatrixXd exact_q(const FiniteMdp& mdp, const TabularPolicy& pi);

// One-step importance-sampling coefficient as a deterministic function of
// (time step, state, action); values must lie in [0, 1].
using LambdaFn = std::function<double(int t, int state, int action)>;

// One-step importance-sampling expectation operator, evaluated by exact
// distribution propagation under eta and truncated at `horizon`:
//   HQ(s,a) = Q(s,a) + sum_{t=0}^{T} gamma^t E_eta[lambda_t (r_t
//             + gamma E_pi Q(s_{t+1}, .) - Q(s_t, a_t))].
Eigen::MatrixXd apply_operator(const FiniteMdp& mdp, const TabularPolicy& pi,
                               const TabularPolicy& eta,
                               const Eigen::MatrixXd& q,
                               const LambdaFn& lambda, int horizon);

// Contraction measurement around Q^pi: the proof coefficients
//   w_{y,b}(s,a) = sum_{t=1}^{T} gamma^t P(s_t=y | s,a, eta)
//                  (pi(b|y) - eta(b|y) lambda_t(y,b)),
// their per-(s,a) sums xi, sign diagnostics, and the observed ratio
// ||HQ - Q^pi||_inf / ||Q - Q^pi||_inf.
struct ContractionReport {
  Eigen::MatrixXd hq;
  Eigen::MatrixXd q_pi;
  std::vector<Eigen::MatrixXd> w;        // indexed s*A+a, each S x A
  Eigen::MatrixXd xi;                    // S x A
  Eigen::MatrixXi negative_w_counts;     // entries of w below -1e-12
  std::optional<double> empirical_ratio;  // absent when Q == Q^pi
  double truncation_tail_bound = 0.0;
  int horizon = 0;

  bool all_w_nonnegative(int state, int action) const {
    return negative_w_counts(state, action) == 0;
  }
};

ContractionReport contraction_audit(const FiniteMdp& mdp,
                                    const TabularPolicy& pi,
                                    const TabularPolicy& eta,
                                    const Eigen::MatrixXd& q,
                                    const LambdaFn& lambda, int horizon);

// Text format:
//   mdp 1
//   states S
//   actions A
//   discount g
//   rewards            (S lines of A values)
//   transition s a     (followed by one line of S probabilities), for all s,a
void save_mdp(std::ostream& out, const FiniteMdp& mdp);
FiniteMdp load_mdp(std::istream& in);

}  // namespace offpoc
