#include "offpoc/agent.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "offpoc/metrics.hpp"
#include "offpoc/rng.hpp"
#include "offpoc/tensor_io.hpp"

namespace offpoc {

namespace {
constexpr double kEntropyConst = 1.4189385332046727;  // 0.5 * (1 + ln 2pi)

double symmetric_bound(const EnvSpec& spec) {
  if (spec.action_low.size() != spec.action_dim ||
      spec.action_high.size() != spec.action_dim) {
    throw std::invalid_argument("agent: malformed action bounds");
  }
  const double bound = spec.action_high[0];
  for (Eigen::Index i = 0; i < spec.action_dim; ++i) {
    if (spec.action_high[i] != bound || spec.action_low[i] != -bound) {
      throw std::invalid_argument(
          "agent: action bounds must be symmetric and uniform");
    }
  }
  if (!(bound > 0.0)) {
    throw std::invalid_argument("agent: action bound must be positive");
  }
  return bound;
}
}  // namespace

void validate_agent_config(const AgentConfig& config, AgentKind kind) {
  if (!(config.gamma >= 0.0 && config.gamma < 1.0)) {
    throw std::invalid_argument("agent_config.gamma: must lie in [0, 1)");
  }
  if (!(config.tau > 0.0 && config.tau <= 1.0)) {
    throw std::invalid_argument("agent_config.tau: must lie in (0, 1]");
  }
  if (config.batch_size < 1) {
    throw std::invalid_argument("agent_config.batch_size: must be positive");
  }
  if (config.exploration_std < 0.0) {
    throw std::invalid_argument(
        "agent_config.exploration_std: must be non-negative");
  }
  if (config.exploration_steps < 1) {
    throw std::invalid_argument(
        "agent_config.exploration_steps: must be positive");
  }
  if (config.policy_delay < 1) {
    throw std::invalid_argument("agent_config.policy_delay: must be positive");
  }
  if (config.entropy_bonus < 0.0) {
    throw std::invalid_argument(
        "agent_config.entropy_bonus: must be non-negative");
  }
  if (config.entropy_bonus > 0.0 && kind == AgentKind::kDeterministic) {
    throw std::invalid_argument(
        "agent_config.entropy_bonus: applies to the stochastic agent only");
  }
  if (!(config.actor_lr > 0.0) || !(config.critic_lr > 0.0)) {
    throw std::invalid_argument("agent_config: learning rates must be positive");
  }
  if (config.target_policy_smoothing) {
    if (!(config.target_policy_smoothing->noise_std >= 0.0) ||
        !(config.target_policy_smoothing->clip >= 0.0)) {
      throw std::invalid_argument(
          "agent_config.target_policy_smoothing: negative parameters");
    }
  }
  if (config.offpoc) {
    if (!(config.offpoc->exploration_std > 0.0)) {
      throw std::invalid_argument(
          "offpoc.exploration_std: must be positive");
    }
    if (config.offpoc->jsd_sample_count < 1) {
      throw std::invalid_argument("offpoc.jsd_sample_count: must be positive");
    }
    if (kind == AgentKind::kDeterministic && config.batch_size < 2) {
      throw std::invalid_argument(
          "agent_config.batch_size: deterministic correction fits a "
          "covariance over the batch and needs batch_size >= 2");
    }
  }
}

TransitionBatch assemble_batch(const ReplayBuffer& buffer,
                               const SampleBatch& sample) {
  TransitionBatch batch;
  const auto b = static_cast<Eigen::Index>(sample.indices.size());
  if (b == 0) {
    throw std::invalid_argument("assemble_batch: empty sample");
  }
  const Transition& first = buffer[sample.indices[0]];
  const Eigen::Index m = first.state.size();
  const Eigen::Index n = first.action.size();
  batch.states.resize(b, m);
  batch.actions.resize(b, n);
  batch.rewards.resize(b);
  batch.next_states.resize(b, m);
  batch.done_mask.resize(b);
  batch.indices = sample.indices;
  batch.is_weights = sample.is_weights;
  bool all_params = true;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Transition& t = buffer[sample.indices[static_cast<std::size_t>(i)]];
    batch.states.row(i) = t.state.transpose();
    batch.actions.row(i) = t.action.transpose();
    batch.rewards[i] = t.reward;
    batch.next_states.row(i) = t.next_state.transpose();
    batch.done_mask[i] = t.done ? 1.0 : 0.0;
    all_params = all_params && t.policy_params.has_value();
  }
  if (all_params) {
    batch.policy_params.reserve(static_cast<std::size_t>(b));
    for (Eigen::Index i = 0; i < b; ++i) {
      batch.policy_params.push_back(
          *buffer[sample.indices[static_cast<std::size_t>(i)]].policy_params);
    }
  }
  return batch;
}

Agent::Agent(AgentKind kind, const EnvSpec& spec, AgentConfig config,
             std::uint64_t seed)
    : kind_(kind), spec_(spec), config_(std::move(config)) {
  validate_agent_config(config_, kind_);
  const double bound = symmetric_bound(spec_);

  std::vector<Eigen::Index> actor_dims{spec_.state_dim};
  std::vector<Eigen::Index> critic_dims{spec_.state_dim + spec_.action_dim};
  for (const auto h : config_.hidden) {
    actor_dims.push_back(h);
    critic_dims.push_back(h);
  }
  critic_dims.push_back(1);

  if (kind_ == AgentKind::kDeterministic) {
    actor_dims.push_back(spec_.action_dim);
    actor_ = make_network(actor_dims, config_.activation,
                          OutputTransform::kTanhScaled, bound,
                          derive_seed(seed, 1));
  } else {
    actor_dims.push_back(2 * spec_.action_dim);
    actor_ = make_network(actor_dims, config_.activation,
                          OutputTransform::kGaussianHead, bound,
                          derive_seed(seed, 1));
  }
  critic1_ = make_network(critic_dims, config_.activation,
                          OutputTransform::kIdentity, 1.0,
                          derive_seed(seed, 2));
  critic2_ = make_network(critic_dims, config_.activation,
                          OutputTransform::kIdentity, 1.0,
                          derive_seed(seed, 3));
  actor_target_ = actor_;
  critic1_target_ = critic1_;
  critic2_target_ = critic2_;

  actor_adam_ = AdamState::create(actor_, {.learning_rate = config_.actor_lr});
  critic1_adam_ =
      AdamState::create(critic1_, {.learning_rate = config_.critic_lr});
  critic2_adam_ =
      AdamState::create(critic2_, {.learning_rate = config_.critic_lr});
}

Eigen::VectorXd Agent::act(const Eigen::VectorXd& state, ActionMode mode,
                           std::uint64_t seed) const {
  if (state.size() != spec_.state_dim || !state.allFinite()) {
    throw std::invalid_argument("act: bad state");
  }
  const Eigen::MatrixXd row = state.transpose();
  Eigen::VectorXd action;
  if (kind_ == AgentKind::kDeterministic) {
    action = forward(actor_, row).row(0).transpose();
    if (mode == ActionMode::kExplore && config_.exploration_std > 0.0) {
      Rng rng(seed);
      action += config_.exploration_std * rng.normal_vector(action.size());
      action = action.cwiseMax(spec_.action_low).cwiseMin(spec_.action_high);
    }
  } else {
    if (mode == ActionMode::kExplore) {
      Rng rng(seed);
      const Eigen::MatrixXd noise = rng.normal_matrix(1, spec_.action_dim);
      action = gaussian_head_sample(actor_, row, noise).action.row(0)
                   .transpose();
    } else {
      const Eigen::MatrixXd out = forward(actor_, row);
      const Eigen::VectorXd mean =
          out.row(0).head(spec_.action_dim).transpose();
      action = actor_.action_bound * mean.array().tanh();
    }
  }
  if (!action.allFinite()) {
    std::ostringstream msg;
    msg << "act: non-finite action for state [" << state.transpose() << "]";
    throw std::runtime_error(msg.str());
  }
  return action;
}

DiagonalGaussian Agent::policy_params_at(const Eigen::VectorXd& state) const {
  if (kind_ != AgentKind::kStochastic) {
    throw std::logic_error("policy_params_at: deterministic agent");
  }
  const Eigen::MatrixXd out = forward(actor_, state.transpose());
  const Eigen::Index n = spec_.action_dim;
  DiagonalGaussian params;
  params.mean =
      actor_.action_bound * out.row(0).head(n).transpose().array().tanh();
  params.std = out.row(0).tail(n).transpose().array().exp();
  return params;
}

WeightReport Agent::compute_weights(const TransitionBatch& batch,
                                    std::uint64_t seed) const {
  if (!config_.offpoc) {
    throw std::logic_error("compute_weights: correction not configured");
  }
  if (kind_ == AgentKind::kDeterministic) {
    const Eigen::MatrixXd current = forward(actor_, batch.states);
    return deterministic_weight(current, batch.actions, *config_.offpoc,
                                seed);
  }
  const auto b = static_cast<std::size_t>(batch.states.rows());
  if (batch.policy_params.size() != b) {
    throw std::invalid_argument(
        "compute_weights: stochastic correction needs behavioral policy "
        "parameters on every transition");
  }
  const Eigen::MatrixXd out = forward(actor_, batch.states);
  const Eigen::Index n = spec_.action_dim;
  std::vector<DiagonalGaussian> current(b);
  std::vector<DiagonalGaussian> stored(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    current[i].mean = out.row(r).head(n).transpose();
    current[i].std = out.row(r).tail(n).transpose().array().exp();
    // Stored means are squashed action-space values; compare pre-squash.
    stored[i].mean =
        unsquash_action(batch.policy_params[i].mean.transpose(),
                        actor_.action_bound)
            .row(0)
            .transpose();
    stored[i].std = batch.policy_params[i].std;
  }
  return stochastic_weights(current, stored, *config_.offpoc, seed);
}

Eigen::MatrixXd Agent::target_actions(const Eigen::MatrixXd& next_states,
                                      std::uint64_t seed) const {
  Eigen::MatrixXd actions;
  if (kind_ == AgentKind::kDeterministic) {
    actions = forward(actor_target_, next_states);
  } else {
    Rng rng(derive_seed(seed, 11));
    const Eigen::MatrixXd noise =
        rng.normal_matrix(next_states.rows(), spec_.action_dim);
    actions = gaussian_head_sample(actor_target_, next_states, noise).action;
  }
  if (config_.target_policy_smoothing) {
    const auto& smoothing = *config_.target_policy_smoothing;
    Rng rng(derive_seed(seed, 12));
    Eigen::MatrixXd noise =
        smoothing.noise_std *
        rng.normal_matrix(actions.rows(), actions.cols());
    noise = noise.cwiseMax(-smoothing.clip).cwiseMin(smoothing.clip);
    actions += noise;
    for (Eigen::Index c = 0; c < actions.cols(); ++c) {
      actions.col(c) = actions.col(c)
                           .cwiseMax(spec_.action_low[c])
                           .cwiseMin(spec_.action_high[c]);
    }
  }
  return actions;
}

Eigen::VectorXd Agent::critic_values(const NetworkParams& critic,
                                     const Eigen::MatrixXd& states,
                                     const Eigen::MatrixXd& actions,
                                     ForwardCache* cache) const {
  Eigen::MatrixXd input(states.rows(), states.cols() + actions.cols());
  input << states, actions;
  return forward(critic, input, cache).col(0);
}

Eigen::VectorXd Agent::td_target(const TransitionBatch& batch,
                                 std::uint64_t seed) const {
  const Eigen::MatrixXd next_actions =
      target_actions(batch.next_states, seed);
  Eigen::VectorXd next_q =
      critic_values(critic1_target_, batch.next_states, next_actions);
  if (config_.twin_critics) {
    next_q = next_q.cwiseMin(
        critic_values(critic2_target_, batch.next_states, next_actions));
  }
  return batch.rewards.array() +
         config_.gamma * (1.0 - batch.done_mask.array()) * next_q.array();
}

namespace {

// Coefficients c with dLoss/dQ = -2 c o delta, plus the loss value.
struct CriticLossShape {
  Eigen::VectorXd coeffs;
  double normalizer = 1.0;
};

CriticLossShape critic_loss_shape(const TransitionBatch& batch,
                                  const WeightReport* weights) {
  const auto b = batch.rewards.size();
  CriticLossShape shape;
  if (weights == nullptr) {
    shape.coeffs = batch.is_weights / static_cast<double>(b);
    return shape;
  }
  if (weights->variant == WeightVariant::kDeterministic) {
    shape.coeffs = (*weights->lambda_scalar) * batch.is_weights /
                   static_cast<double>(b);
    return shape;
  }
  const Eigen::VectorXd& lambda = *weights->lambda_vector;
  if (lambda.size() != b) {
    throw std::invalid_argument("critic update: weight length mismatch");
  }
  const double mass = lambda.lpNorm<1>();
  shape.normalizer = mass;
  if (mass < 1e-12) {
    shape.coeffs = Eigen::VectorXd::Zero(b);
    return shape;
  }
  shape.coeffs =
      (batch.is_weights.array() * lambda.array().square() / mass).matrix();
  return shape;
}

}  // namespace

Gradients Agent::critic_gradients(const TransitionBatch& batch,
                                  const WeightReport* weights,
                                  std::uint64_t seed,
                                  UpdateDiagnostics* diag) const {
  const Eigen::VectorXd y = td_target(batch, seed);
  const CriticLossShape shape = critic_loss_shape(batch, weights);

  ForwardCache cache;
  const Eigen::VectorXd q = critic_values(critic1_, batch.states,
                                          batch.actions, &cache);
  const Eigen::VectorXd delta = y - q;
  const double loss = (shape.coeffs.array() * delta.array().square()).sum();
  Gradients grads = zero_gradients(critic1_);
  const Eigen::MatrixXd dq =
      (-2.0 * shape.coeffs.array() * delta.array()).matrix();
  backward(critic1_, cache, dq, grads);

  if (diag) {
    diag->td_errors = delta;
    diag->critic_target = y;
    diag->critic_loss = loss;
    if (weights) diag->lambda_report = *weights;
    diag->skipped = weights &&
                    weights->variant == WeightVariant::kStochastic &&
                    shape.normalizer < 1e-12;
  }
  return grads;
}

UpdateDiagnostics Agent::critic_update(const TransitionBatch& batch,
                                       const WeightReport* weights,
                                       std::uint64_t seed) {
  UpdateDiagnostics diag;
  Gradients grads1 = critic_gradients(batch, weights, seed, &diag);
  if (diag.skipped) {
    return diag;
  }
  if (!std::isfinite(diag.critic_loss)) {
    throw std::runtime_error("critic_update: non-finite loss");
  }

  auto step = [&](NetworkParams& params, const Gradients& grads,
                  AdamState& adam) {
    const bool ok = config_.optimizer == OptimizerKind::kAdam
                        ? adam_step(params, grads, adam)
                        : sgd_step(params, grads, config_.critic_lr);
    if (!ok) diag.skipped = true;
  };
  step(critic1_, grads1, critic1_adam_);

  if (config_.twin_critics) {
    const Eigen::VectorXd y = diag.critic_target;
    const CriticLossShape shape = critic_loss_shape(batch, weights);
    ForwardCache cache;
    const Eigen::VectorXd q2 = critic_values(critic2_, batch.states,
                                             batch.actions, &cache);
    const Eigen::VectorXd delta2 = y - q2;
    Gradients grads2 = zero_gradients(critic2_);
    const Eigen::MatrixXd dq2 =
        (-2.0 * shape.coeffs.array() * delta2.array()).matrix();
    backward(critic2_, cache, dq2, grads2);
    step(critic2_, grads2, critic2_adam_);
  }
  return diag;
}

Gradients Agent::actor_gradients(const TransitionBatch& batch,
                                 const WeightReport* weights,
                                 std::uint64_t seed,
                                 double* objective) const {
  const auto b = batch.states.rows();
  Gradients grads = zero_gradients(actor_);

  if (kind_ == AgentKind::kDeterministic) {
    if (weights && weights->variant != WeightVariant::kDeterministic) {
      throw std::invalid_argument("actor update: weight variant mismatch");
    }
    const double lambda =
        weights ? *weights->lambda_scalar : 1.0;
    const double scale = lambda / static_cast<double>(b);

    ForwardCache actor_cache;
    const Eigen::MatrixXd actions =
        forward(actor_, batch.states, &actor_cache);
    ForwardCache critic_cache;
    const Eigen::VectorXd q =
        critic_values(critic1_, batch.states, actions, &critic_cache);
    if (objective) *objective = scale * q.sum();

    Gradients critic_scratch = zero_gradients(critic1_);
    const Eigen::MatrixXd dq = Eigen::MatrixXd::Constant(b, 1, scale);
    const Eigen::MatrixXd dinput =
        backward(critic1_, critic_cache, dq, critic_scratch);
    const Eigen::MatrixXd dactions =
        dinput.rightCols(spec_.action_dim);
    backward(actor_, actor_cache, dactions, grads);
    return grads;
  }

  // Stochastic actor: per-sample coefficients from the weight vector.
  Eigen::VectorXd coeffs;
  if (weights) {
    if (weights->variant != WeightVariant::kStochastic) {
      throw std::invalid_argument("actor update: weight variant mismatch");
    }
    const Eigen::VectorXd& lambda = *weights->lambda_vector;
    const double mass = lambda.lpNorm<1>();
    if (mass < 1e-12) {
      if (objective) *objective = 0.0;
      return grads;  // zero gradients; caller skips
    }
    coeffs = lambda / mass;
  } else {
    coeffs = Eigen::VectorXd::Constant(b, 1.0 / static_cast<double>(b));
  }

  const Eigen::Index n = spec_.action_dim;
  const double beta = config_.entropy_bonus;

  if (config_.stochastic_gradient == StochasticGradient::kReparameterized) {
    Rng rng(derive_seed(seed, 21));
    const Eigen::MatrixXd noise = rng.normal_matrix(b, n);
    ForwardCache actor_cache;
    const GaussianHeadSample head =
        gaussian_head_sample(actor_, batch.states, noise, &actor_cache);
    ForwardCache critic_cache;
    const Eigen::VectorXd q =
        critic_values(critic1_, batch.states, head.action, &critic_cache);

    // Entropy of the pre-squash Gaussian, closed form.
    const Eigen::VectorXd entropy =
        head.log_std.rowwise().sum().array() +
        static_cast<double>(n) * kEntropyConst;
    if (objective) {
      *objective =
          (coeffs.array() * (q.array() + beta * entropy.array())).sum();
    }

    Gradients critic_scratch = zero_gradients(critic1_);
    const Eigen::MatrixXd dinput =
        backward(critic1_, critic_cache, coeffs, critic_scratch);
    const Eigen::MatrixXd dact = dinput.rightCols(n);
    const Eigen::ArrayXXd tanh_u = (head.action / actor_.action_bound).array();
    const Eigen::ArrayXXd du =
        dact.array() * actor_.action_bound * (1.0 - tanh_u.square());
    Eigen::MatrixXd packed(b, 2 * n);
    packed.leftCols(n) = du.matrix();
    packed.rightCols(n) =
        (du * head.std_dev.array() * head.noise.array()).matrix();
    packed.rightCols(n).colwise() += beta * coeffs;
    backward(actor_, actor_cache, packed, grads);
    return grads;
  }

  // Score-function gradient on the stored actions; critic values are
  // constants.
  const Eigen::MatrixXd u = unsquash_action(batch.actions, actor_.action_bound);
  ForwardCache actor_cache;
  const Eigen::MatrixXd out = forward(actor_, batch.states, &actor_cache);
  const Eigen::MatrixXd mean = out.leftCols(n);
  const Eigen::MatrixXd log_std = out.rightCols(n);
  const Eigen::ArrayXXd inv_std = (-log_std).array().exp();
  const Eigen::ArrayXXd z = (u - mean).array() * inv_std;
  const Eigen::VectorXd q_hat =
      critic_values(critic1_, batch.states, batch.actions);
  const Eigen::VectorXd log_prob =
      gaussian_head_log_prob(mean, log_std, u, actor_.action_bound);
  const Eigen::VectorXd entropy =
      log_std.rowwise().sum().array() + static_cast<double>(n) * kEntropyConst;
  if (objective) {
    *objective = (coeffs.array() *
                  (log_prob.array() * q_hat.array() + beta * entropy.array()))
                     .sum();
  }

  const Eigen::VectorXd row_scale =
      (coeffs.array() * q_hat.array()).matrix();
  Eigen::MatrixXd packed(b, 2 * n);
  packed.leftCols(n) =
      (z * inv_std).matrix();  // d log N / d mean = (u - mean) / sigma^2
  packed.leftCols(n).array().colwise() *= row_scale.array();
  packed.rightCols(n) = (z.square() - 1.0).matrix();
  packed.rightCols(n).array().colwise() *= row_scale.array();
  packed.rightCols(n).colwise() += beta * coeffs;
  backward(actor_, actor_cache, packed, grads);
  return grads;
}

UpdateDiagnostics Agent::actor_update(const TransitionBatch& batch,
                                      const WeightReport* weights,
                                      std::uint64_t seed) {
  UpdateDiagnostics diag;
  double objective = 0.0;
  Gradients grads = actor_gradients(batch, weights, seed, &objective);
  diag.policy_objective = objective;
  if (weights) diag.lambda_report = *weights;
  if (!std::isfinite(objective)) {
    throw std::runtime_error("actor_update: non-finite objective");
  }

  scale_gradients(grads, -1.0);  // ascent
  const bool ok = config_.optimizer == OptimizerKind::kAdam
                      ? adam_step(actor_, grads, actor_adam_)
                      : sgd_step(actor_, grads, config_.actor_lr);
  if (!ok) {
    diag.skipped = true;
    return diag;
  }

  soft_update(actor_target_, actor_, config_.tau);
  soft_update(critic1_target_, critic1_, config_.tau);
  if (config_.twin_critics) {
    soft_update(critic2_target_, critic2_, config_.tau);
  }
  return diag;
}

void Agent::save(std::ostream& out) const {
  out << "agent 1\n";
  out << "kind "
      << (kind_ == AgentKind::kDeterministic ? "deterministic" : "stochastic")
      << '\n';
  out << "env " << spec_.name << '\n';
  out << "state_dim " << spec_.state_dim << '\n';
  out << "action_dim " << spec_.action_dim << '\n';
  out << "action_low ";
  write_vector(out, spec_.action_low);
  out << "action_high ";
  write_vector(out, spec_.action_high);
  out << "max_episode_steps " << spec_.max_episode_steps << '\n';
  out << "exploration_std ";
  write_scalar(out, config_.exploration_std);
  out << '\n';
  out << "offpoc " << (config_.offpoc ? 1 : 0) << '\n';
  if (config_.offpoc) {
    out << "offpoc_exploration_std ";
    write_scalar(out, config_.offpoc->exploration_std);
    out << '\n';
    out << "offpoc_divergence "
        << (config_.offpoc->divergence == Divergence::kJsd ? "jsd" : "kl")
        << '\n';
    out << "offpoc_jsd_method "
        << (config_.offpoc->jsd_method == JsdMethod::kMonteCarlo
                ? "monte-carlo"
                : "moment-matched")
        << '\n';
    out << "offpoc_jsd_samples " << config_.offpoc->jsd_sample_count << '\n';
  }
  out << "twin_critics " << (config_.twin_critics ? 1 : 0) << '\n';
  out << "networks " << (config_.twin_critics ? 6 : 4) << '\n';
  out << "actor\n";
  save_network(out, actor_);
  out << "actor_target\n";
  save_network(out, actor_target_);
  out << "critic1\n";
  save_network(out, critic1_);
  out << "critic1_target\n";
  save_network(out, critic1_target_);
  if (config_.twin_critics) {
    out << "critic2\n";
    save_network(out, critic2_);
    out << "critic2_target\n";
    save_network(out, critic2_target_);
  }
}

std::unique_ptr<Agent> Agent::load(std::istream& in) {
  expect_token(in, "agent");
  int version = 0;
  in >> version;
  if (version != 1) {
    throw std::runtime_error("agent checkpoint: unsupported version");
  }
  expect_token(in, "kind");
  std::string token;
  in >> token;
  const AgentKind kind = token == "stochastic" ? AgentKind::kStochastic
                                               : AgentKind::kDeterministic;
  EnvSpec spec;
  expect_token(in, "env");
  in >> spec.name;
  expect_token(in, "state_dim");
  in >> spec.state_dim;
  expect_token(in, "action_dim");
  in >> spec.action_dim;
  expect_token(in, "action_low");
  spec.action_low = read_vector(in);
  expect_token(in, "action_high");
  spec.action_high = read_vector(in);
  expect_token(in, "max_episode_steps");
  in >> spec.max_episode_steps;

  AgentConfig config;
  expect_token(in, "exploration_std");
  config.exploration_std = read_scalar(in);
  expect_token(in, "offpoc");
  int has_offpoc = 0;
  in >> has_offpoc;
  if (has_offpoc) {
    OffPocConfig offpoc;
    expect_token(in, "offpoc_exploration_std");
    offpoc.exploration_std = read_scalar(in);
    expect_token(in, "offpoc_divergence");
    in >> token;
    offpoc.divergence = token == "kl" ? Divergence::kKl : Divergence::kJsd;
    expect_token(in, "offpoc_jsd_method");
    in >> token;
    offpoc.jsd_method = token == "moment-matched" ? JsdMethod::kMomentMatched
                                                  : JsdMethod::kMonteCarlo;
    expect_token(in, "offpoc_jsd_samples");
    in >> offpoc.jsd_sample_count;
    config.offpoc = offpoc;
  }
  expect_token(in, "twin_critics");
  int twin = 0;
  in >> twin;
  config.twin_critics = twin != 0;

  auto agent = std::make_unique<Agent>(kind, spec, config, 0);
  expect_token(in, "networks");
  int count = 0;
  in >> count;
  for (int i = 0; i < count; ++i) {
    in >> token;
    NetworkParams net = load_network(in);
    if (token == "actor") agent->actor_ = std::move(net);
    else if (token == "actor_target") agent->actor_target_ = std::move(net);
    else if (token == "critic1") agent->critic1_ = std::move(net);
    else if (token == "critic1_target") agent->critic1_target_ = std::move(net);
    else if (token == "critic2") agent->critic2_ = std::move(net);
    else if (token == "critic2_target") agent->critic2_target_ = std::move(net);
    else throw std::runtime_error("agent checkpoint: unknown network " + token);
  }
  return agent;
}

void train(Agent& agent, Env& env, Env& eval_env, ReplayBuffer& buffer,
           const TrainOptions& options, MetricsSink* sink) {
  const AgentConfig& cfg = agent.config();
  if (options.total_steps <= cfg.exploration_steps) {
    throw std::invalid_argument(
        "train: total_steps must exceed the exploration phase");
  }
  const bool stochastic = agent.kind() == AgentKind::kStochastic;
  const bool corrected = cfg.offpoc.has_value();
  // The stochastic agent has no behavioral parameters for the uniform
  // exploration phase; the buffer is purged at this step and weighting
  // starts on the uniformly parameterized buffer that follows.
  const long purge_step =
      stochastic && corrected ? 2L * cfg.exploration_steps : -1;
  const std::uint64_t seed = options.seed;

  Rng explore_rng(derive_seed(seed, 7));
  std::uint64_t episode = 0;
  Eigen::VectorXd state = env.reset(derive_seed(seed, 100, episode++));
  long updates = 0;

  for (long step = 1; step <= options.total_steps; ++step) {
    Eigen::VectorXd action;
    std::optional<DiagonalGaussian> params;
    if (step <= cfg.exploration_steps) {
      const EnvSpec& spec = env.spec();
      action.resize(spec.action_dim);
      for (Eigen::Index i = 0; i < spec.action_dim; ++i) {
        action[i] = explore_rng.uniform(spec.action_low[i],
                                        spec.action_high[i]);
      }
    } else {
      action = agent.act(state, ActionMode::kExplore,
                         derive_seed(seed, 102, static_cast<std::uint64_t>(step)));
      if (stochastic) params = agent.policy_params_at(state);
    }

    const StepResult result = env.step(action);
    Transition t;
    t.state = state;
    t.action = action;
    t.reward = result.reward;
    t.next_state = result.next_state;
    t.done = result.done;
    t.policy_params = std::move(params);
    buffer.push(std::move(t));

    state = result.next_state;
    if (result.done || result.truncated) {
      state = env.reset(derive_seed(seed, 100, episode++));
    }

    if (step == purge_step) {
      buffer.purge_exploration(purge_step);
    }

    if (step > cfg.exploration_steps &&
        buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
      const auto ustep = static_cast<std::uint64_t>(step);
      const SampleBatch sample =
          buffer.sample(static_cast<std::size_t>(cfg.batch_size),
                        derive_seed(seed, 103, ustep));
      const TransitionBatch batch = assemble_batch(buffer, sample);

      std::optional<WeightReport> weights;
      if (corrected) {
        const bool ready = !stochastic || (purge_step > 0 && step > purge_step);
        if (ready) {
          weights = agent.compute_weights(batch, derive_seed(seed, 104, ustep));
        }
      }
      const WeightReport* weights_ptr = weights ? &*weights : nullptr;

      const UpdateDiagnostics critic_diag =
          agent.critic_update(batch, weights_ptr, derive_seed(seed, 105, ustep));
      if (buffer.sampler() == SamplerKind::kPer) {
        buffer.update_priorities(sample.indices, critic_diag.td_errors);
      }
      updates += 1;

      double policy_objective = 0.0;
      if (updates % cfg.policy_delay == 0) {
        const UpdateDiagnostics actor_diag = agent.actor_update(
            batch, weights_ptr, derive_seed(seed, 106, ustep));
        policy_objective = actor_diag.policy_objective;
      }

      if (sink && step % options.diag_interval == 0) {
        sink->append_diagnostics(step, critic_diag.critic_loss,
                                 policy_objective,
                                 critic_diag.td_errors.mean(), weights_ptr);
      }
    }

    if (sink && step % options.eval_interval == 0) {
      const EvalSummary summary =
          evaluate_policy(agent, eval_env, options.eval_episodes,
                          derive_seed(seed, 107, static_cast<std::uint64_t>(step)));
      sink->append_evaluation(step, summary.mean_return, summary.std_return,
                              summary.episodes);
    }
  }
}

EvalSummary evaluate_policy(const Agent& agent, Env& env, int episodes,
                            std::uint64_t seed) {
  if (episodes < 1) {
    throw std::invalid_argument("evaluate_policy: episodes must be positive");
  }
  Eigen::VectorXd returns(episodes);
  for (int ep = 0; ep < episodes; ++ep) {
    Eigen::VectorXd state =
        env.reset(derive_seed(seed, 900, static_cast<std::uint64_t>(ep)));
    double total = 0.0;
    for (int t = 0;; ++t) {
      const Eigen::VectorXd action =
          agent.act(state, ActionMode::kEvaluate,
                    derive_seed(seed, 901, static_cast<std::uint64_t>(t)));
      const StepResult result = env.step(action);
      total += result.reward;
      state = result.next_state;
      if (result.done || result.truncated) break;
    }
    returns[ep] = total;
  }
  EvalSummary summary;
  summary.episodes = episodes;
  summary.mean_return = returns.mean();
  if (episodes > 1) {
    summary.std_return = std::sqrt(
        (returns.array() - summary.mean_return).square().sum() /
        static_cast<double>(episodes - 1));
  }
  return summary;
}

}  // namespace offpoc
