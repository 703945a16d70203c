#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "offpoc/correction.hpp"
#include "offpoc/env.hpp"
#include "offpoc/net.hpp"
#include "offpoc/replay.hpp"

namespace offpoc {

enum class AgentKind { kDeterministic, kStochastic };
enum class ActionMode { kExplore, kEvaluate };
enum class StochasticGradient { kReparameterized, kScoreFunction };
enum class OptimizerKind { kAdam, kSgd };

struct SmoothingConfig {
  double noise_std = 0.2;
  double clip = 0.5;
};

struct AgentConfig {
  double gamma = 0.99;
  double tau = 0.005;
  int batch_size = 256;
  double exploration_std = 0.1;
  int exploration_steps = 1000;
  bool twin_critics = false;
  int policy_delay = 1;
  std::optional<SmoothingConfig> target_policy_smoothing;
  double entropy_bonus = 0.0;  // stochastic agent only
  std::optional<OffPocConfig> offpoc;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  std::vector<Eigen::Index> hidden = {64, 64};
  Activation activation = Activation::kRelu;
  StochasticGradient stochastic_gradient =
      StochasticGradient::kReparameterized;
  OptimizerKind optimizer = OptimizerKind::kAdam;
};

// Throws std::invalid_argument with a field-level message on any violated
// constraint (e.g. the batch-of-two minimum the deterministic correction's
// covariance fit requires).
void validate_agent_config(const AgentConfig& config, AgentKind kind);

struct UpdateDiagnostics {
  Eigen::VectorXd td_errors;     // y - Q(S, A), first critic
  Eigen::VectorXd critic_target; // y
  double critic_loss = 0.0;
  double policy_objective = 0.0;
  std::optional<WeightReport> lambda_report;
  bool skipped = false;  // update skipped (zero weight mass or bad grads)
};

// Sampled transitions assembled into padded matrices, one row per sample.
struct TransitionBatch {
  Eigen::MatrixXd states;
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;
  Eigen::VectorXd done_mask;  // 1.0 on terminal transitions
  std::vector<DiagonalGaussian> policy_params;  // empty unless all present
  std::vector<std::size_t> indices;
  Eigen::VectorXd is_weights;
};

TransitionBatch assemble_batch(const ReplayBuffer& buffer,
                               const SampleBatch& sample);

// One actor-critic learner covering both policy classes: a tanh-squashed
// deterministic actor or a squashed diagonal-Gaussian head, single or twin
// critics, target networks, optional target-policy smoothing and delayed
// actor updates, and optional AC importance-weight correction.
class Agent {
 public:
  Agent(AgentKind kind, const EnvSpec& spec, AgentConfig config,
        std::uint64_t seed);

  AgentKind kind() const { return kind_; }
  const AgentConfig& config() const { return config_; }
  const EnvSpec& env_spec() const { return spec_; }

  Eigen::VectorXd act(const Eigen::VectorXd& state, ActionMode mode,
                      std::uint64_t seed) const;

  // Parameters of the action distribution the current policy induces at
  // `state`: squashed mean and pre-squash standard deviation. Stochastic
  // agent only.
  DiagonalGaussian policy_params_at(const Eigen::VectorXd& state) const;

  // Importance weights for the batch; requires config().offpoc. The
  // stochastic variant needs behavioral parameters on every transition.
  WeightReport compute_weights(const TransitionBatch& batch,
                               std::uint64_t seed) const;

  UpdateDiagnostics critic_update(const TransitionBatch& batch,
                                  const WeightReport* weights,
                                  std::uint64_t seed);
  // Also applies the Polyak update to every target network.
  UpdateDiagnostics actor_update(const TransitionBatch& batch,
                                 const WeightReport* weights,
                                 std::uint64_t seed);

  // Gradient-only variants used by the update paths and by tests.
  // `objective` receives the loss (critic) or ascent objective (actor).
  Gradients critic_gradients(const TransitionBatch& batch,
                             const WeightReport* weights, std::uint64_t seed,
                             UpdateDiagnostics* diag) const;
  Gradients actor_gradients(const TransitionBatch& batch,
                            const WeightReport* weights, std::uint64_t seed,
                            double* objective) const;

  // Deterministic per-update TD pieces, exposed for the critic gradient and
  // the tests: y = R + gamma (1 - done) Q_target(S', a'(S')).
  Eigen::VectorXd td_target(const TransitionBatch& batch,
                            std::uint64_t seed) const;

  const NetworkParams& actor() const { return actor_; }
  const NetworkParams& critic(int i = 0) const {
    return i == 0 ? critic1_ : critic2_;
  }
  const NetworkParams& actor_target() const { return actor_target_; }
  const NetworkParams& critic_target(int i = 0) const {
    return i == 0 ? critic1_target_ : critic2_target_;
  }
  NetworkParams& mutable_actor() { return actor_; }
  NetworkParams& mutable_critic(int i = 0) {
    return i == 0 ? critic1_ : critic2_;
  }

  void save(std::ostream& out) const;
  static std::unique_ptr<Agent> load(std::istream& in);

 private:
  Eigen::MatrixXd target_actions(const Eigen::MatrixXd& next_states,
                                 std::uint64_t seed) const;
  Eigen::VectorXd critic_values(const NetworkParams& critic,
                                const Eigen::MatrixXd& states,
                                const Eigen::MatrixXd& actions,
                                ForwardCache* cache = nullptr) const;

  AgentKind kind_;
  EnvSpec spec_;
  AgentConfig config_;
  NetworkParams actor_, actor_target_;
  NetworkParams critic1_, critic1_target_;
  NetworkParams critic2_, critic2_target_;
  AdamState actor_adam_, critic1_adam_, critic2_adam_;
};

struct TrainOptions {
  long total_steps = 0;
  int eval_interval = 1000;
  int eval_episodes = 10;
  int diag_interval = 100;
  std::uint64_t seed = 0;
};

struct EvalSummary {
  double mean_return = 0.0;
  double std_return = 0.0;
  int episodes = 0;
};

class MetricsSink;

// Noise-free episodes on a dedicated environment instance.
EvalSummary evaluate_policy(const Agent& agent, Env& env, int episodes,
                            std::uint64_t seed);

// Full training loop: seeded exploration phase with uniform random actions,
// then per step collect / store / sample / (weights) / critic update /
// delayed actor update, with periodic evaluations streamed to the sink.
// The stochastic agent with correction enabled purges the buffer at twice
// the exploration step count and starts weighting afterwards.
void train(Agent& agent, Env& env, Env& eval_env, ReplayBuffer& buffer,
           const TrainOptions& options, MetricsSink* sink);

}  // namespace offpoc
