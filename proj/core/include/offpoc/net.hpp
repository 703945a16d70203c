#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

namespace offpoc {

enum class Activation { kRelu, kTanh };

// Transform applied to the final affine layer's output.
//   kIdentity    - raw output (critics).
//   kTanhScaled  - action_bound * tanh(z) (deterministic actors).
//   kGaussianHead- first half of the columns is the mean, second half the
//                  log standard deviation clamped to [-20, 2].
enum class OutputTransform { kIdentity, kTanhScaled, kGaussianHead };

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

struct LayerParams {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct NetworkParams {
  std::vector<LayerParams> layers;
  Activation activation = Activation::kRelu;
  OutputTransform output = OutputTransform::kIdentity;
  double action_bound = 1.0;

  Eigen::Index input_dim() const { return layers.front().weight.cols(); }
  Eigen::Index output_dim() const { return layers.back().weight.rows(); }
  bool all_finite() const;
};

// Dense network with the given layer widths (dims.front() inputs,
// dims.back() raw outputs). Weights and biases are initialized uniformly in
// +-1/sqrt(fan_in) from the seed.
NetworkParams make_network(const std::vector<Eigen::Index>& dims,
                           Activation activation, OutputTransform output,
                           double action_bound, std::uint64_t seed);

struct ForwardCache {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre_activations;  // per layer
  std::vector<Eigen::MatrixXd> activations;      // hidden layers only
};

// Batch forward pass; rows are independent samples. Fills `cache` for a
// later backward() when given.
Eigen::MatrixXd forward(const NetworkParams& net, const Eigen::MatrixXd& input,
                        ForwardCache* cache = nullptr);

struct Gradients {
  std::vector<LayerParams> layers;
};

Gradients zero_gradients(const NetworkParams& net);
void scale_gradients(Gradients& grads, double factor);
void accumulate_gradients(Gradients& into, const Gradients& from);
double gradient_norm(const Gradients& grads);
bool gradients_finite(const Gradients& grads);

// Exact reverse-mode gradients. `output_gradient` is dLoss/d(transformed
// output); returns dLoss/d(input) and accumulates parameter gradients into
// `grads`. Throws std::invalid_argument if the cache does not match the
// network and gradient shapes.
Eigen::MatrixXd backward(const NetworkParams& net, const ForwardCache& cache,
                         const Eigen::MatrixXd& output_gradient,
                         Gradients& grads);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<LayerParams> first_moment;
  std::vector<LayerParams> second_moment;

  static AdamState create(const NetworkParams& net, AdamConfig config);
};

// One Adam update with bias correction. Returns false and leaves the
// parameters untouched when the gradients are non-finite.
bool adam_step(NetworkParams& params, const Gradients& grads,
               AdamState& state);

// Plain gradient-descent step (used where an update linear in the gradient
// is wanted, e.g. the weight-scaling checks).
bool sgd_step(NetworkParams& params, const Gradients& grads,
              double learning_rate);

// target <- tau * online + (1 - tau) * target, elementwise.
void soft_update(NetworkParams& target, const NetworkParams& online,
                 double tau);

// --- Gaussian policy head -------------------------------------------------

// One reparameterized draw through a kGaussianHead network with fixed noise:
// u = mean + std o noise, action = bound * tanh(u). log_prob includes the
// tanh change-of-variables correction.
struct GaussianHeadSample {
  Eigen::MatrixXd mean;        // B x n (pre-squash)
  Eigen::MatrixXd log_std;     // B x n (clamped)
  Eigen::MatrixXd std_dev;     // B x n
  Eigen::MatrixXd noise;       // B x n
  Eigen::MatrixXd pre_squash;  // B x n
  Eigen::MatrixXd action;      // B x n
  Eigen::VectorXd log_prob;    // B
};

GaussianHeadSample gaussian_head_sample(const NetworkParams& net,
                                        const Eigen::MatrixXd& states,
                                        const Eigen::MatrixXd& noise,
                                        ForwardCache* cache = nullptr);

// Log density of given pre-squash values under the head output (mean,
// log_std), including the tanh correction for the squashed action.
Eigen::VectorXd gaussian_head_log_prob(const Eigen::MatrixXd& mean,
                                       const Eigen::MatrixXd& log_std,
                                       const Eigen::MatrixXd& pre_squash,
                                       double action_bound);

// Inverse of action = bound * tanh(u), clamped away from the asymptotes.
Eigen::MatrixXd unsquash_action(const Eigen::MatrixXd& action,
                                double action_bound);

// --- Checkpoint tensor dump ------------------------------------------------

// Versioned textual dump with shape headers and hexfloat payload; reload is
// bit-exact.
void save_network(std::ostream& out, const NetworkParams& net);
NetworkParams load_network(std::istream& in);

}  // namespace offpoc
