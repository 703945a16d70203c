#include "offpoc/net.hpp"

#include <cmath>
#include <stdexcept>

#include "offpoc/rng.hpp"
#include "offpoc/tensor_io.hpp"

namespace offpoc {

namespace {
constexpr double kLog2Pi = 1.8378770664093455;
constexpr double kLn2 = 0.6931471805599453;

Eigen::ArrayXXd softplus(const Eigen::ArrayXXd& x) {
  // log(1 + e^x), overflow-safe.
  return x.max(0.0) + (-x.abs()).exp().log1p();
}
}  // namespace

bool NetworkParams::all_finite() const {
  for (const auto& layer : layers) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

NetworkParams make_network(const std::vector<Eigen::Index>& dims,
                           Activation activation, OutputTransform output,
                           double action_bound, std::uint64_t seed) {
  if (dims.size() < 2) {
    throw std::invalid_argument("make_network: need input and output dims");
  }
  if (output == OutputTransform::kGaussianHead && dims.back() % 2 != 0) {
    throw std::invalid_argument(
        "make_network: gaussian head needs an even output width");
  }
  NetworkParams net;
  net.activation = activation;
  net.output = output;
  net.action_bound = action_bound;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Eigen::Index in = dims[l];
    const Eigen::Index out = dims[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    LayerParams layer;
    layer.weight.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c)
        layer.weight(r, c) = rng.uniform(-scale, scale);
    layer.bias.resize(out);
    for (Eigen::Index r = 0; r < out; ++r)
      layer.bias[r] = rng.uniform(-scale, scale);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Eigen::MatrixXd forward(const NetworkParams& net, const Eigen::MatrixXd& input,
                        ForwardCache* cache) {
  if (input.cols() != net.input_dim()) {
    throw std::invalid_argument("forward: input width mismatch");
  }
  if (!input.allFinite()) {
    throw std::invalid_argument("forward: non-finite input");
  }
  if (cache) {
    cache->input = input;
    cache->pre_activations.clear();
    cache->activations.clear();
  }

  Eigen::MatrixXd h = input;
  const std::size_t depth = net.layers.size();
  for (std::size_t l = 0; l < depth; ++l) {
    const LayerParams& layer = net.layers[l];
    Eigen::MatrixXd z =
        (h * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    if (cache) cache->pre_activations.push_back(z);
    if (l + 1 < depth) {
      switch (net.activation) {
        case Activation::kRelu:
          h = z.cwiseMax(0.0);
          break;
        case Activation::kTanh:
          h = z.array().tanh().matrix();
          break;
      }
      if (cache) cache->activations.push_back(h);
    } else {
      switch (net.output) {
        case OutputTransform::kIdentity:
          h = std::move(z);
          break;
        case OutputTransform::kTanhScaled:
          h = net.action_bound * z.array().tanh();
          break;
        case OutputTransform::kGaussianHead: {
          const Eigen::Index half = z.cols() / 2;
          h = z;
          h.rightCols(half) =
              h.rightCols(half).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
          break;
        }
      }
    }
  }
  return h;
}

Gradients zero_gradients(const NetworkParams& net) {
  Gradients grads;
  grads.layers.reserve(net.layers.size());
  for (const auto& layer : net.layers) {
    grads.layers.push_back(
        {Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
         Eigen::VectorXd::Zero(layer.bias.size())});
  }
  return grads;
}

void scale_gradients(Gradients& grads, double factor) {
  for (auto& layer : grads.layers) {
    layer.weight *= factor;
    layer.bias *= factor;
  }
}

void accumulate_gradients(Gradients& into, const Gradients& from) {
  for (std::size_t l = 0; l < into.layers.size(); ++l) {
    into.layers[l].weight += from.layers[l].weight;
    into.layers[l].bias += from.layers[l].bias;
  }
}

double gradient_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& layer : grads.layers) {
    sq += layer.weight.squaredNorm() + layer.bias.squaredNorm();
  }
  return std::sqrt(sq);
}

bool gradients_finite(const Gradients& grads) {
  for (const auto& layer : grads.layers) {
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

Eigen::MatrixXd backward(const NetworkParams& net, const ForwardCache& cache,
                         const Eigen::MatrixXd& output_gradient,
                         Gradients& grads) {
  const std::size_t depth = net.layers.size();
  if (cache.pre_activations.size() != depth ||
      cache.activations.size() + 1 != depth ||
      cache.input.cols() != net.input_dim()) {
    throw std::invalid_argument("backward: cache does not match network");
  }
  if (output_gradient.rows() != cache.input.rows() ||
      output_gradient.cols() != net.output_dim()) {
    throw std::invalid_argument("backward: output gradient shape mismatch");
  }
  if (grads.layers.size() != depth) {
    throw std::invalid_argument("backward: gradient holder shape mismatch");
  }

  // Through the output transform.
  const Eigen::MatrixXd& z_last = cache.pre_activations.back();
  Eigen::MatrixXd dz;
  switch (net.output) {
    case OutputTransform::kIdentity:
      dz = output_gradient;
      break;
    case OutputTransform::kTanhScaled: {
      const Eigen::ArrayXXd t = z_last.array().tanh();
      dz = (output_gradient.array() * net.action_bound * (1.0 - t.square()))
               .matrix();
      break;
    }
    case OutputTransform::kGaussianHead: {
      const Eigen::Index half = z_last.cols() / 2;
      dz = output_gradient;
      // Clamped log-std entries receive zero gradient.
      const Eigen::ArrayXXd raw = z_last.rightCols(half).array();
      dz.rightCols(half) =
          (dz.rightCols(half).array() *
           ((raw > kLogStdMin) && (raw < kLogStdMax)).cast<double>())
              .matrix();
      break;
    }
  }

  for (std::size_t l = depth; l-- > 0;) {
    const Eigen::MatrixXd& h_prev =
        (l == 0) ? cache.input : cache.activations[l - 1];
    grads.layers[l].weight += dz.transpose() * h_prev;
    grads.layers[l].bias += dz.colwise().sum().transpose();
    if (l == 0) {
      return dz * net.layers[0].weight;
    }
    Eigen::MatrixXd dh = dz * net.layers[l].weight;
    const Eigen::MatrixXd& z_prev = cache.pre_activations[l - 1];
    switch (net.activation) {
      case Activation::kRelu:
        dz = (dh.array() * (z_prev.array() > 0.0).cast<double>()).matrix();
        break;
      case Activation::kTanh: {
        const Eigen::ArrayXXd a = cache.activations[l - 1].array();
        dz = (dh.array() * (1.0 - a.square())).matrix();
        break;
      }
    }
  }
  throw std::logic_error("backward: unreachable");
}

AdamState AdamState::create(const NetworkParams& net, AdamConfig config) {
  AdamState state;
  state.config = config;
  state.step = 0;
  for (const auto& layer : net.layers) {
    state.first_moment.push_back(
        {Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
         Eigen::VectorXd::Zero(layer.bias.size())});
    state.second_moment.push_back(
        {Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
         Eigen::VectorXd::Zero(layer.bias.size())});
  }
  return state;
}

bool adam_step(NetworkParams& params, const Gradients& grads,
               AdamState& state) {
  if (grads.layers.size() != params.layers.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  if (!gradients_finite(grads)) {
    return false;
  }
  state.step += 1;
  const auto& cfg = state.config;
  const double bias1 = 1.0 - std::pow(cfg.beta1, state.step);
  const double bias2 = 1.0 - std::pow(cfg.beta2, state.step);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& m = state.first_moment[l];
    auto& v = state.second_moment[l];
    const auto& g = grads.layers[l];
    m.weight = cfg.beta1 * m.weight + (1.0 - cfg.beta1) * g.weight;
    m.bias = cfg.beta1 * m.bias + (1.0 - cfg.beta1) * g.bias;
    v.weight = cfg.beta2 * v.weight.array().matrix() +
               (1.0 - cfg.beta2) * g.weight.array().square().matrix();
    v.bias = cfg.beta2 * v.bias.array().matrix() +
             (1.0 - cfg.beta2) * g.bias.array().square().matrix();
    params.layers[l].weight.array() -=
        cfg.learning_rate * (m.weight.array() / bias1) /
        ((v.weight.array() / bias2).sqrt() + cfg.epsilon);
    params.layers[l].bias.array() -=
        cfg.learning_rate * (m.bias.array() / bias1) /
        ((v.bias.array() / bias2).sqrt() + cfg.epsilon);
  }
  return true;
}

bool sgd_step(NetworkParams& params, const Gradients& grads,
              double learning_rate) {
  if (grads.layers.size() != params.layers.size()) {
    throw std::invalid_argument("sgd_step: shape mismatch");
  }
  if (!gradients_finite(grads)) {
    return false;
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    params.layers[l].weight -= learning_rate * grads.layers[l].weight;
    params.layers[l].bias -= learning_rate * grads.layers[l].bias;
  }
  return true;
}

void soft_update(NetworkParams& target, const NetworkParams& online,
                 double tau) {
  if (target.layers.size() != online.layers.size()) {
    throw std::invalid_argument("soft_update: shape mismatch");
  }
  for (std::size_t l = 0; l < target.layers.size(); ++l) {
    if (target.layers[l].weight.rows() != online.layers[l].weight.rows() ||
        target.layers[l].weight.cols() != online.layers[l].weight.cols()) {
      throw std::invalid_argument("soft_update: layer shape mismatch");
    }
    target.layers[l].weight =
        tau * online.layers[l].weight + (1.0 - tau) * target.layers[l].weight;
    target.layers[l].bias =
        tau * online.layers[l].bias + (1.0 - tau) * target.layers[l].bias;
  }
}

GaussianHeadSample gaussian_head_sample(const NetworkParams& net,
                                        const Eigen::MatrixXd& states,
                                        const Eigen::MatrixXd& noise,
                                        ForwardCache* cache) {
  if (net.output != OutputTransform::kGaussianHead) {
    throw std::invalid_argument("gaussian_head_sample: wrong head");
  }
  const Eigen::MatrixXd out = forward(net, states, cache);
  const Eigen::Index half = out.cols() / 2;
  if (noise.rows() != states.rows() || noise.cols() != half) {
    throw std::invalid_argument("gaussian_head_sample: noise shape mismatch");
  }
  GaussianHeadSample s;
  s.mean = out.leftCols(half);
  s.log_std = out.rightCols(half);
  s.std_dev = s.log_std.array().exp().matrix();
  s.noise = noise;
  s.pre_squash = s.mean + s.std_dev.cwiseProduct(noise);
  s.action = net.action_bound * s.pre_squash.array().tanh();
  s.log_prob =
      gaussian_head_log_prob(s.mean, s.log_std, s.pre_squash, net.action_bound);
  return s;
}

Eigen::VectorXd gaussian_head_log_prob(const Eigen::MatrixXd& mean,
                                       const Eigen::MatrixXd& log_std,
                                       const Eigen::MatrixXd& pre_squash,
                                       double action_bound) {
  const Eigen::ArrayXXd z =
      (pre_squash - mean).array() * (-log_std).array().exp();
  const Eigen::ArrayXXd gauss =
      -0.5 * z.square() - log_std.array() - 0.5 * kLog2Pi;
  // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u)), evaluated stably.
  const Eigen::ArrayXXd u = pre_squash.array();
  const Eigen::ArrayXXd correction =
      2.0 * (kLn2 - u - softplus(-2.0 * u)) + std::log(action_bound);
  return (gauss - correction).rowwise().sum().matrix();
}

Eigen::MatrixXd unsquash_action(const Eigen::MatrixXd& action,
                                double action_bound) {
  const double limit = 1.0 - 1e-9;
  const Eigen::ArrayXXd ratio =
      (action.array() / action_bound).max(-limit).min(limit);
  return ratio.atanh().matrix();
}

void save_network(std::ostream& out, const NetworkParams& net) {
  out << "net 1\n";
  out << "layers " << net.layers.size() << '\n';
  out << "activation " << (net.activation == Activation::kRelu ? "relu" : "tanh")
      << '\n';
  const char* head = "identity";
  if (net.output == OutputTransform::kTanhScaled) head = "tanh-scaled";
  if (net.output == OutputTransform::kGaussianHead) head = "gaussian-head";
  out << "output " << head << '\n';
  out << "action_bound ";
  write_scalar(out, net.action_bound);
  out << '\n';
  for (const auto& layer : net.layers) {
    out << "weight ";
    write_matrix(out, layer.weight);
    out << "bias ";
    write_vector(out, layer.bias);
  }
}

NetworkParams load_network(std::istream& in) {
  expect_token(in, "net");
  int version = 0;
  in >> version;
  if (version != 1) {
    throw std::runtime_error("load_network: unsupported version");
  }
  expect_token(in, "layers");
  std::size_t count = 0;
  in >> count;
  NetworkParams net;
  expect_token(in, "activation");
  std::string token;
  in >> token;
  if (token == "relu") {
    net.activation = Activation::kRelu;
  } else if (token == "tanh") {
    net.activation = Activation::kTanh;
  } else {
    throw std::runtime_error("load_network: unknown activation " + token);
  }
  expect_token(in, "output");
  in >> token;
  if (token == "identity") {
    net.output = OutputTransform::kIdentity;
  } else if (token == "tanh-scaled") {
    net.output = OutputTransform::kTanhScaled;
  } else if (token == "gaussian-head") {
    net.output = OutputTransform::kGaussianHead;
  } else {
    throw std::runtime_error("load_network: unknown output " + token);
  }
  expect_token(in, "action_bound");
  net.action_bound = read_scalar(in);
  for (std::size_t l = 0; l < count; ++l) {
    LayerParams layer;
    expect_token(in, "weight");
    layer.weight = read_matrix(in);
    expect_token(in, "bias");
    layer.bias = read_vector(in);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

}  // namespace offpoc
