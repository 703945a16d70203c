#include "offpoc/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "offpoc/metrics.hpp"
#include "offpoc/rng.hpp"

namespace offpoc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Object reader that tracks consumed keys and rejects leftovers.
class StrictObject {
 public:
  StrictObject(const json& node, std::string path)
      : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) {
      throw std::invalid_argument(path_ + ": expected an object");
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    const json* v = find(key);
    if (!v) return fallback;
    try {
      return v->get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument(path_ + "." + key + ": wrong type");
    }
  }

  std::string child_path(const std::string& key) const {
    return path_ + "." + key;
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      (void)value;
      if (!seen_.contains(key)) {
        throw std::invalid_argument(path_ + ": unknown key '" + key + "'");
      }
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

EnvParams parse_env_params(const json& node, const std::string& path) {
  if (!node.is_object()) {
    throw std::invalid_argument(path + ": expected an object");
  }
  EnvParams params;
  for (const auto& [key, value] : node.items()) {
    if (!value.is_number()) {
      throw std::invalid_argument(path + "." + key + ": expected a number");
    }
    params[key] = value.get<double>();
  }
  return params;
}

OffPocConfig parse_offpoc(const json& node, const std::string& path,
                          AgentKind agent_kind, double agent_std) {
  StrictObject obj(node, path);
  const std::string variant = obj.get<std::string>(
      "variant",
      agent_kind == AgentKind::kDeterministic ? "deterministic" : "stochastic");
  if (variant != "deterministic" && variant != "stochastic") {
    throw std::invalid_argument(path + ".variant: unknown value " + variant);
  }
  const AgentKind variant_kind = variant == "deterministic"
                                     ? AgentKind::kDeterministic
                                     : AgentKind::kStochastic;
  if (variant_kind != agent_kind) {
    throw std::invalid_argument(
        path + ".variant: must match the agent kind (" + variant +
        " correction with a " +
        (agent_kind == AgentKind::kDeterministic ? "deterministic"
                                                 : "stochastic") +
        " agent)");
  }
  OffPocConfig cfg;
  // The reference covariance couples to the exploration noise by default.
  cfg.exploration_std = obj.get<double>("exploration_std", agent_std);
  const std::string divergence = obj.get<std::string>("divergence", "jsd");
  if (divergence == "jsd") cfg.divergence = Divergence::kJsd;
  else if (divergence == "kl") cfg.divergence = Divergence::kKl;
  else throw std::invalid_argument(path + ".divergence: unknown " + divergence);
  const std::string method = obj.get<std::string>("jsd_method", "monte-carlo");
  if (method == "monte-carlo") cfg.jsd_method = JsdMethod::kMonteCarlo;
  else if (method == "moment-matched") cfg.jsd_method = JsdMethod::kMomentMatched;
  else throw std::invalid_argument(path + ".jsd_method: unknown " + method);
  cfg.jsd_sample_count = obj.get<int>("jsd_samples", 1024);
  obj.finish();
  return cfg;
}

AgentConfig parse_agent_config(const json& node, const std::string& path) {
  StrictObject obj(node, path);
  AgentConfig cfg;
  cfg.gamma = obj.get<double>("gamma", cfg.gamma);
  cfg.tau = obj.get<double>("tau", cfg.tau);
  cfg.batch_size = obj.get<int>("batch_size", cfg.batch_size);
  cfg.exploration_std = obj.get<double>("exploration_std", cfg.exploration_std);
  cfg.exploration_steps =
      obj.get<int>("exploration_steps", cfg.exploration_steps);
  cfg.twin_critics = obj.get<bool>("twin_critics", cfg.twin_critics);
  cfg.policy_delay = obj.get<int>("policy_delay", cfg.policy_delay);
  if (const json* smoothing = obj.find("target_policy_smoothing")) {
    if (!smoothing->is_null()) {
      StrictObject sm(*smoothing, obj.child_path("target_policy_smoothing"));
      SmoothingConfig s;
      s.noise_std = sm.get<double>("noise_std", s.noise_std);
      s.clip = sm.get<double>("clip", s.clip);
      sm.finish();
      cfg.target_policy_smoothing = s;
    }
  }
  cfg.entropy_bonus = obj.get<double>("entropy_bonus", cfg.entropy_bonus);
  cfg.actor_lr = obj.get<double>("actor_lr", cfg.actor_lr);
  cfg.critic_lr = obj.get<double>("critic_lr", cfg.critic_lr);
  if (const json* hidden = obj.find("hidden")) {
    if (!hidden->is_array()) {
      throw std::invalid_argument(path + ".hidden: expected an array");
    }
    cfg.hidden.clear();
    for (const auto& h : *hidden) {
      if (!h.is_number_integer() || h.get<long>() < 1) {
        throw std::invalid_argument(path + ".hidden: widths must be >= 1");
      }
      cfg.hidden.push_back(h.get<Eigen::Index>());
    }
  }
  const std::string act = obj.get<std::string>("activation", "relu");
  if (act == "relu") cfg.activation = Activation::kRelu;
  else if (act == "tanh") cfg.activation = Activation::kTanh;
  else throw std::invalid_argument(path + ".activation: unknown " + act);
  const std::string grad =
      obj.get<std::string>("stochastic_gradient", "reparameterized");
  if (grad == "reparameterized")
    cfg.stochastic_gradient = StochasticGradient::kReparameterized;
  else if (grad == "score")
    cfg.stochastic_gradient = StochasticGradient::kScoreFunction;
  else
    throw std::invalid_argument(path + ".stochastic_gradient: unknown " + grad);
  const std::string opt = obj.get<std::string>("optimizer", "adam");
  if (opt == "adam") cfg.optimizer = OptimizerKind::kAdam;
  else if (opt == "sgd") cfg.optimizer = OptimizerKind::kSgd;
  else throw std::invalid_argument(path + ".optimizer: unknown " + opt);
  obj.finish();
  return cfg;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment +
                                "': expected path=value");
  }
  const std::string dotted = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // plain string

  json* node = &doc;
  std::stringstream keys(dotted);
  std::string key;
  std::vector<std::string> parts;
  while (std::getline(keys, key, '.')) parts.push_back(key);
  if (parts.empty()) {
    throw std::invalid_argument("override '" + assignment + "': empty path");
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) {
      throw std::invalid_argument("override '" + assignment +
                                  "': path through non-object");
    }
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  (*node)[parts.back()] = value;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides) {
  json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded()) {
    throw std::invalid_argument("config: not valid json");
  }
  for (const auto& assignment : overrides) {
    apply_override(doc, assignment);
  }

  StrictObject obj(doc, "config");
  RunConfig cfg;
  const std::string agent = obj.get<std::string>("agent", "deterministic");
  if (agent == "deterministic") cfg.agent_kind = AgentKind::kDeterministic;
  else if (agent == "stochastic") cfg.agent_kind = AgentKind::kStochastic;
  else throw std::invalid_argument("config.agent: unknown value " + agent);

  if (const json* env = obj.find("env")) {
    StrictObject env_obj(*env, "config.env");
    cfg.env_name = env_obj.get<std::string>("name", cfg.env_name);
    if (const json* params = env_obj.find("params")) {
      cfg.env_params = parse_env_params(*params, "config.env.params");
    }
    env_obj.finish();
  }
  cfg.seed = obj.get<std::uint64_t>("seed", cfg.seed);
  cfg.total_steps = obj.get<long>("total_steps", cfg.total_steps);
  cfg.eval_interval = obj.get<int>("eval_interval", cfg.eval_interval);
  cfg.eval_episodes = obj.get<int>("eval_episodes", cfg.eval_episodes);
  cfg.diag_interval = obj.get<int>("diag_interval", cfg.diag_interval);
  cfg.output_dir = obj.get<std::string>("output_dir", cfg.output_dir);
  if (const json* agent_cfg = obj.find("agent_config")) {
    cfg.agent = parse_agent_config(*agent_cfg, "config.agent_config");
  }
  if (const json* offpoc = obj.find("offpoc")) {
    if (!offpoc->is_null()) {
      cfg.agent.offpoc = parse_offpoc(*offpoc, "config.offpoc", cfg.agent_kind,
                                      cfg.agent.exploration_std);
    }
  }
  if (const json* buffer = obj.find("buffer")) {
    StrictObject buf(*buffer, "config.buffer");
    const long capacity =
        buf.get<long>("capacity", static_cast<long>(cfg.buffer_capacity));
    if (capacity < 1) {
      throw std::invalid_argument("config.buffer.capacity: must be positive");
    }
    cfg.buffer_capacity = static_cast<std::size_t>(capacity);
    const std::string sampler = buf.get<std::string>("sampler", "uniform");
    if (sampler == "uniform") cfg.sampler = SamplerKind::kUniform;
    else if (sampler == "cer") cfg.sampler = SamplerKind::kCer;
    else if (sampler == "per") cfg.sampler = SamplerKind::kPer;
    else throw std::invalid_argument("config.buffer.sampler: unknown " + sampler);
    if (const json* per = buf.find("per")) {
      StrictObject per_obj(*per, "config.buffer.per");
      cfg.per.priority_exponent =
          per_obj.get<double>("alpha", cfg.per.priority_exponent);
      cfg.per.is_exponent = per_obj.get<double>("beta", cfg.per.is_exponent);
      cfg.per.priority_epsilon =
          per_obj.get<double>("epsilon", cfg.per.priority_epsilon);
      per_obj.finish();
    }
    buf.finish();
  }
  obj.finish();

  if (cfg.total_steps < 1) {
    throw std::invalid_argument("config.total_steps: must be positive");
  }
  if (cfg.eval_interval < 1 || cfg.eval_episodes < 1 ||
      cfg.diag_interval < 1) {
    throw std::invalid_argument(
        "config: eval_interval, eval_episodes and diag_interval must be "
        "positive");
  }
  validate_agent_config(cfg.agent, cfg.agent_kind);
  return cfg;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("config: cannot open " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str(), overrides);
}

std::string resolved_config_json(const RunConfig& config) {
  const AgentConfig& a = config.agent;
  json doc;
  doc["agent"] = config.agent_kind == AgentKind::kDeterministic
                     ? "deterministic"
                     : "stochastic";
  doc["env"]["name"] = config.env_name;
  doc["env"]["params"] = json::object();
  for (const auto& [key, value] : config.env_params) {
    doc["env"]["params"][key] = value;
  }
  doc["seed"] = config.seed;
  doc["total_steps"] = config.total_steps;
  doc["eval_interval"] = config.eval_interval;
  doc["eval_episodes"] = config.eval_episodes;
  doc["diag_interval"] = config.diag_interval;
  doc["output_dir"] = config.output_dir;
  json& ac = doc["agent_config"];
  ac["gamma"] = a.gamma;
  ac["tau"] = a.tau;
  ac["batch_size"] = a.batch_size;
  ac["exploration_std"] = a.exploration_std;
  ac["exploration_steps"] = a.exploration_steps;
  ac["twin_critics"] = a.twin_critics;
  ac["policy_delay"] = a.policy_delay;
  if (a.target_policy_smoothing) {
    ac["target_policy_smoothing"] = {
        {"noise_std", a.target_policy_smoothing->noise_std},
        {"clip", a.target_policy_smoothing->clip}};
  } else {
    ac["target_policy_smoothing"] = nullptr;
  }
  ac["entropy_bonus"] = a.entropy_bonus;
  ac["actor_lr"] = a.actor_lr;
  ac["critic_lr"] = a.critic_lr;
  ac["hidden"] = json::array();
  for (const auto h : a.hidden) ac["hidden"].push_back(h);
  ac["activation"] = a.activation == Activation::kRelu ? "relu" : "tanh";
  ac["stochastic_gradient"] =
      a.stochastic_gradient == StochasticGradient::kReparameterized
          ? "reparameterized"
          : "score";
  ac["optimizer"] = a.optimizer == OptimizerKind::kAdam ? "adam" : "sgd";
  if (a.offpoc) {
    doc["offpoc"] = {
        {"variant", config.agent_kind == AgentKind::kDeterministic
                        ? "deterministic"
                        : "stochastic"},
        {"exploration_std", a.offpoc->exploration_std},
        {"divergence",
         a.offpoc->divergence == Divergence::kJsd ? "jsd" : "kl"},
        {"jsd_method", a.offpoc->jsd_method == JsdMethod::kMonteCarlo
                           ? "monte-carlo"
                           : "moment-matched"},
        {"jsd_samples", a.offpoc->jsd_sample_count}};
  } else {
    doc["offpoc"] = nullptr;
  }
  const char* sampler = "uniform";
  if (config.sampler == SamplerKind::kCer) sampler = "cer";
  if (config.sampler == SamplerKind::kPer) sampler = "per";
  doc["buffer"] = {{"capacity", config.buffer_capacity},
                   {"sampler", sampler},
                   {"per",
                    {{"alpha", config.per.priority_exponent},
                     {"beta", config.per.is_exponent},
                     {"epsilon", config.per.priority_epsilon}}}};
  return doc.dump(2);
}

int run_train(const RunConfig& config) {
  fs::create_directories(config.output_dir);
  const std::string log_path = config.output_dir + "/run.log";
  std::ofstream log(log_path);
  log << timestamp() << " start\n";
  log.flush();

  {
    std::ofstream lock(config.output_dir + "/config.lock.json");
    lock << resolved_config_json(config) << '\n';
  }

  try {
    auto env = make_env(config.env_name, config.env_params);
    auto eval_env = make_env(config.env_name, config.env_params);
    Agent agent(config.agent_kind, env->spec(), config.agent,
                derive_seed(config.seed, 1));
    ReplayBuffer buffer(config.buffer_capacity, config.sampler, config.per);
    MetricsSink sink(config.output_dir + "/metrics.jsonl");

    TrainOptions options;
    options.total_steps = config.total_steps;
    options.eval_interval = config.eval_interval;
    options.eval_episodes = config.eval_episodes;
    options.diag_interval = config.diag_interval;
    options.seed = config.seed;
    train(agent, *env, *eval_env, buffer, options, &sink);

    {
      std::ofstream out(config.output_dir + "/checkpoint.ckpt");
      agent.save(out);
    }
    {
      std::ofstream out(config.output_dir + "/buffer.snap");
      buffer.save(out);
    }
  } catch (const std::exception& e) {
    log << timestamp() << " fault: " << e.what() << '\n';
    std::cerr << "train fault: " << e.what() << '\n';
    return 2;
  }
  log << timestamp() << " done\n";
  return 0;
}

int run_eval(const EvalArgs& args) {
  std::ifstream in(args.checkpoint);
  if (!in) {
    throw std::invalid_argument("eval: cannot open checkpoint " +
                                args.checkpoint);
  }
  const auto agent = Agent::load(in);
  const std::string env_name =
      args.env_name.empty() ? agent->env_spec().name : args.env_name;
  auto env = make_env(env_name, args.env_params);
  if (env->spec().state_dim != agent->env_spec().state_dim ||
      env->spec().action_dim != agent->env_spec().action_dim) {
    throw std::invalid_argument(
        "eval: environment dimensions do not match the checkpoint");
  }
  const EvalSummary summary =
      evaluate_policy(*agent, *env, args.episodes, args.seed);
  std::printf("eval %s episodes %d mean %.6f std %.6f\n", env_name.c_str(),
              summary.episodes, summary.mean_return, summary.std_return);
  if (!args.out_path.empty()) {
    MetricsSink sink(args.out_path);
    sink.append_evaluation(0, summary.mean_return, summary.std_return,
                           summary.episodes);
  }
  return 0;
}

namespace {

Eigen::VectorXd min_max_normalized(const Eigen::VectorXd& v) {
  const double lo = v.minCoeff();
  const double hi = v.maxCoeff();
  if (hi - lo <= 0.0) return Eigen::VectorXd::Constant(v.size(), 0.5);
  return (v.array() - lo) / (hi - lo);
}

}  // namespace

int run_weights(const WeightsArgs& args, double* spearman_out) {
  std::ifstream snap(args.buffer_snapshot);
  if (!snap) {
    throw std::invalid_argument("weights: cannot open snapshot " +
                                args.buffer_snapshot);
  }
  const ReplayBuffer buffer = ReplayBuffer::load(snap);
  std::ifstream ckpt(args.checkpoint);
  if (!ckpt) {
    throw std::invalid_argument("weights: cannot open checkpoint " +
                                args.checkpoint);
  }
  const auto agent = Agent::load(ckpt);

  const auto size = static_cast<long>(buffer.size());
  const long window = args.window;
  const long stride = args.stride > 0 ? args.stride : window;
  if (window < 1 || window > size) {
    throw std::invalid_argument(
        "weights: window must lie in [1, buffer size]");
  }
  const bool stochastic = agent->kind() == AgentKind::kStochastic;
  if (stochastic && !buffer.uniformly_parameterized()) {
    throw std::invalid_argument(
        "weights: stochastic analysis needs policy parameters on every "
        "stored transition");
  }
  OffPocConfig cfg = agent->config().offpoc.value_or(OffPocConfig{
      .exploration_std = agent->config().exploration_std,
      .divergence = Divergence::kJsd,
      .jsd_method = JsdMethod::kMonteCarlo,
      .jsd_sample_count = 1024});

  const Eigen::Index n = agent->env_spec().action_dim;
  std::vector<double> centers;
  std::vector<double> lambdas;
  for (long start = 0; start + window <= size; start += stride) {
    const long center = start + window / 2;
    const std::uint64_t call_seed =
        derive_seed(args.seed, static_cast<std::uint64_t>(start));
    double lambda = 0.0;
    if (!stochastic) {
      Eigen::MatrixXd states(window, agent->env_spec().state_dim);
      Eigen::MatrixXd actions(window, n);
      for (long i = 0; i < window; ++i) {
        const Transition& t = buffer[static_cast<std::size_t>(start + i)];
        states.row(i) = t.state.transpose();
        actions.row(i) = t.action.transpose();
      }
      const Eigen::MatrixXd current = forward(agent->actor(), states);
      lambda = *deterministic_weight(current, actions, cfg, call_seed)
                    .lambda_scalar;
    } else {
      const Transition& t = buffer[static_cast<std::size_t>(center)];
      const Eigen::MatrixXd out = forward(agent->actor(), t.state.transpose());
      std::vector<DiagonalGaussian> current(1);
      current[0].mean = out.row(0).head(n).transpose();
      current[0].std = out.row(0).tail(n).transpose().array().exp();
      std::vector<DiagonalGaussian> stored(1);
      stored[0].mean = unsquash_action(t.policy_params->mean.transpose(),
                                       agent->actor().action_bound)
                           .row(0)
                           .transpose();
      stored[0].std = t.policy_params->std;
      lambda =
          (*stochastic_weights(current, stored, cfg, call_seed).lambda_vector)[0];
    }
    centers.push_back(
        static_cast<double>(buffer[static_cast<std::size_t>(center)].birth_step));
    lambdas.push_back(lambda);
  }

  const auto rows = static_cast<Eigen::Index>(centers.size());
  const Eigen::VectorXd center_v =
      Eigen::Map<const Eigen::VectorXd>(centers.data(), rows);
  const Eigen::VectorXd lambda_v =
      Eigen::Map<const Eigen::VectorXd>(lambdas.data(), rows);
  const Eigen::VectorXd center_norm = min_max_normalized(center_v);
  const Eigen::VectorXd lambda_norm = min_max_normalized(lambda_v);

  std::ofstream csv(args.out_csv);
  if (!csv) {
    throw std::invalid_argument("weights: cannot open output " + args.out_csv);
  }
  csv << "center_step,lambda,center_step_norm,lambda_norm\n";
  for (Eigen::Index i = 0; i < rows; ++i) {
    csv << format_double(center_v[i]) << ',' << format_double(lambda_v[i])
        << ',' << format_double(center_norm[i]) << ','
        << format_double(lambda_norm[i]) << '\n';
  }

  const double spearman =
      rows > 1 ? spearman_correlation(center_v, lambda_v) : 0.0;
  if (spearman_out) *spearman_out = spearman;
  MetricsSink summary(args.out_csv + ".summary.jsonl");
  summary.append_weight_analysis(rows, spearman);
  std::printf("weights rows %ld spearman %.4f -> %s\n",
              static_cast<long>(rows), spearman, args.out_csv.c_str());
  return 0;
}

TabularPolicy parse_policy_spec(const std::string& spec,
                                const FiniteMdp& mdp) {
  if (spec == "uniform") return uniform_policy(mdp);
  if (spec.rfind("random:", 0) == 0) {
    const auto seed = std::stoull(spec.substr(7));
    return random_policy(mdp, seed);
  }
  throw std::invalid_argument("policy spec '" + spec +
                              "': expected uniform or random:<seed>");
}

LambdaFn parse_lambda_spec(const std::string& spec, const FiniteMdp& mdp) {
  if (spec == "zero") {
    return [](int, int, int) { return 0.0; };
  }
  if (spec == "one") {
    return [](int, int, int) { return 1.0; };
  }
  auto parse_value = [&](const std::string& text) {
    const double v = std::stod(text);
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("lambda spec '" + spec +
                                  "': values must lie in [0, 1]");
    }
    return v;
  };
  if (spec.rfind("const:", 0) == 0) {
    const double v = parse_value(spec.substr(6));
    return [v](int, int, int) { return v; };
  }
  if (spec.rfind("time-decay:", 0) == 0) {
    const double v = parse_value(spec.substr(11));
    return [v](int t, int, int) { return std::pow(v, t); };
  }
  if (spec.rfind("state-toggle:", 0) == 0) {
    const std::string rest = spec.substr(13);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) {
      throw std::invalid_argument("lambda spec '" + spec +
                                  "': expected two values");
    }
    const double v0 = parse_value(rest.substr(0, comma));
    const double v1 = parse_value(rest.substr(comma + 1));
    return [v0, v1](int, int s, int) { return s % 2 == 0 ? v0 : v1; };
  }
  if (spec.rfind("action-profile:", 0) == 0) {
    const auto seed = std::stoull(spec.substr(15));
    // Correction-style profile: a fixed weight in [0, 1] per (state, action).
    Rng rng(seed);
    Eigen::MatrixXd profile(mdp.num_states, mdp.num_actions);
    for (int s = 0; s < mdp.num_states; ++s)
      for (int a = 0; a < mdp.num_actions; ++a) profile(s, a) = rng.uniform();
    return [profile](int, int s, int a) { return profile(s, a); };
  }
  throw std::invalid_argument("lambda spec '" + spec + "': unknown form");
}

namespace {

Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  Eigen::VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_correlation(const Eigen::VectorXd& a,
                            const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman: needs two same-length series");
  }
  const Eigen::VectorXd ra = average_ranks(a);
  const Eigen::VectorXd rb = average_ranks(b);
  const Eigen::ArrayXd da = ra.array() - ra.mean();
  const Eigen::ArrayXd db = rb.array() - rb.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  if (denom == 0.0) return 0.0;
  return (da * db).sum() / denom;
}

long count_contraction_violations(const ContractionReport& report,
                                  const Eigen::MatrixXd& q) {
  const double denom = (q - report.q_pi).cwiseAbs().maxCoeff();
  const double slack =
      report.truncation_tail_bound + 1e-9 * (1.0 + denom);
  long violations = 0;
  for (int s = 0; s < report.xi.rows(); ++s) {
    for (int a = 0; a < report.xi.cols(); ++a) {
      if (!report.all_w_nonnegative(s, a)) continue;
      const double lhs = std::abs(report.hq(s, a) - report.q_pi(s, a));
      if (lhs > report.xi(s, a) * denom + slack) violations += 1;
    }
  }
  return violations;
}

int run_contract(const ContractArgs& args, ContractSummary* summary_out) {
  std::ifstream in(args.mdp_file);
  if (!in) {
    throw std::invalid_argument("contract: cannot open mdp file " +
                                args.mdp_file);
  }
  const FiniteMdp mdp = load_mdp(in);
  const TabularPolicy pi = parse_policy_spec(args.pi_spec, mdp);
  const TabularPolicy eta = parse_policy_spec(args.eta_spec, mdp);
  const LambdaFn lambda = parse_lambda_spec(args.lambda_spec, mdp);
  if (args.horizon < 1 || args.q_samples < 1) {
    throw std::invalid_argument(
        "contract: horizon and q-samples must be positive");
  }

  fs::create_directories(args.output_dir);
  ContractSummary summary;
  json ratios = json::array();
  std::optional<ContractionReport> first_report;
  for (int k = 0; k < args.q_samples; ++k) {
    Rng rng(derive_seed(args.seed, static_cast<std::uint64_t>(k)));
    Eigen::MatrixXd q(mdp.num_states, mdp.num_actions);
    for (int s = 0; s < mdp.num_states; ++s)
      for (int a = 0; a < mdp.num_actions; ++a) q(s, a) = rng.uniform(-2.0, 2.0);
    const ContractionReport report =
        contraction_audit(mdp, pi, eta, q, lambda, args.horizon);
    if (report.empirical_ratio) {
      summary.worst_ratio = std::max(summary.worst_ratio,
                                     *report.empirical_ratio);
      ratios.push_back(*report.empirical_ratio);
    }
    summary.violations += count_contraction_violations(report, q);
    if (!first_report) {
      summary.negative_w_cells = report.negative_w_counts.sum();
      summary.xi_max = report.xi.maxCoeff();
      summary.tail_bound = report.truncation_tail_bound;
      first_report = report;
    }
  }

  {
    std::ofstream xi_csv(args.output_dir + "/xi.csv");
    xi_csv << "state,action,xi,negative_w_entries\n";
    for (int s = 0; s < mdp.num_states; ++s) {
      for (int a = 0; a < mdp.num_actions; ++a) {
        xi_csv << s << ',' << a << ',' << format_double(first_report->xi(s, a))
               << ',' << first_report->negative_w_counts(s, a) << '\n';
      }
    }
  }
  {
    json report{{"discount", mdp.discount},
                {"horizon", args.horizon},
                {"lambda", args.lambda_spec},
                {"pi", args.pi_spec},
                {"eta", args.eta_spec},
                {"q_samples", args.q_samples},
                {"worst_ratio", summary.worst_ratio},
                {"ratios", ratios},
                {"negative_w_cells", summary.negative_w_cells},
                {"violations", summary.violations},
                {"xi_max", summary.xi_max},
                {"truncation_tail_bound", summary.tail_bound}};
    std::ofstream out(args.output_dir + "/report.json");
    out << report.dump(2) << '\n';
  }
  MetricsSink sink(args.output_dir + "/metrics.jsonl");
  sink.append_contraction(summary.worst_ratio, summary.negative_w_cells,
                          summary.violations, summary.xi_max);
  std::printf(
      "contract worst_ratio %.6f xi_max %.6f negative_w_cells %ld "
      "violations %ld\n",
      summary.worst_ratio, summary.xi_max, summary.negative_w_cells,
      summary.violations);
  if (summary_out) *summary_out = summary;
  return 0;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Off-policy actor-critic with divergence-based "
               "importance-weight correction"};
  app.require_subcommand(1);

  auto* train_cmd =
      app.add_subcommand("train", "Train an agent from a config file");
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed_override = -1;
  train_cmd->add_option("--config", config_path, "JSON run config")
      ->required();
  train_cmd->add_option("--set", overrides,
                        "Dotted-path override, e.g. agent_config.tau=0.01");
  train_cmd->add_option("--seed", seed_override, "Override the run seed");

  auto* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint without noise");
  EvalArgs eval_args;
  std::vector<std::string> eval_params;
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--env", eval_args.env_name,
                       "Environment name (defaults to the checkpoint's)");
  eval_cmd->add_option("--param", eval_params, "Environment override k=v");
  eval_cmd->add_option("--episodes", eval_args.episodes);
  eval_cmd->add_option("--seed", eval_args.seed);
  eval_cmd->add_option("--out", eval_args.out_path, "JSONL summary path");

  auto* weights_cmd = app.add_subcommand(
      "weights", "Importance-weight trace over a saved buffer");
  WeightsArgs weights_args;
  weights_cmd->add_option("--buffer", weights_args.buffer_snapshot)
      ->required();
  weights_cmd->add_option("--checkpoint", weights_args.checkpoint)->required();
  weights_cmd->add_option("--out", weights_args.out_csv)->required();
  weights_cmd->add_option("--window", weights_args.window);
  weights_cmd->add_option("--stride", weights_args.stride);
  weights_cmd->add_option("--seed", weights_args.seed);

  auto* contract_cmd = app.add_subcommand(
      "contract", "Operator fixed-point and contraction audit");
  ContractArgs contract_args;
  contract_cmd->add_option("--mdp", contract_args.mdp_file)->required();
  contract_cmd->add_option("--out", contract_args.output_dir)->required();
  contract_cmd->add_option("--pi", contract_args.pi_spec);
  contract_cmd->add_option("--eta", contract_args.eta_spec);
  contract_cmd->add_option("--lambda", contract_args.lambda_spec);
  contract_cmd->add_option("--horizon", contract_args.horizon);
  contract_cmd->add_option("--q-samples", contract_args.q_samples);
  contract_cmd->add_option("--seed", contract_args.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train_cmd->parsed()) {
      if (seed_override >= 0) {
        overrides.push_back("seed=" + std::to_string(seed_override));
      }
      const RunConfig config = load_run_config(config_path, overrides);
      return run_train(config);
    }
    if (eval_cmd->parsed()) {
      for (const auto& assignment : eval_params) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) {
          throw std::invalid_argument("eval: --param expects k=v");
        }
        eval_args.env_params[assignment.substr(0, eq)] =
            std::stod(assignment.substr(eq + 1));
      }
      return run_eval(eval_args);
    }
    if (weights_cmd->parsed()) {
      return run_weights(weights_args);
    }
    if (contract_cmd->parsed()) {
      return run_contract(contract_args);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fault: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace offpoc
