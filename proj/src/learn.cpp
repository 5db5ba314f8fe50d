#include "vbt/learn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace vbt {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum Stream : std::uint64_t { kPolicyInit = 1, kQInit = 2, kVInit = 3, kBatches = 4 };

AdamConfig adam_config(const TrainConfig& c) {
  AdamConfig a;
  a.learning_rate = c.learning_rate;
  return a;
}

std::vector<int> layers(int input, const std::vector<int>& hidden, int output) {
  std::vector<int> sizes{input};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output);
  return sizes;
}

void require(const std::optional<Mlp>& net, const char* what, const char* op) {
  if (!net) throw ContractViolation(std::string(op) + ": models have no " + what);
}

void check_finite(double value, long step, const char* term) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "training diverged at step " << step << ": non-finite " << term << " (" << value << ")";
    throw TrainingError(msg.str());
  }
}

nlohmann::json loss_json(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

double loss_from_json(const nlohmann::json& j) { return j.is_null() ? kNoLoss : j.get<double>(); }

}  // namespace

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::BC: return "BC";
    case Algorithm::AWAC: return "AWAC";
    case Algorithm::IQL: return "IQL";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "BC") return Algorithm::BC;
  if (name == "AWAC") return Algorithm::AWAC;
  if (name == "IQL") return Algorithm::IQL;
  throw ConfigError("unknown algorithm '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0,1)");
  if (!(expectile_tau > 0.0 && expectile_tau < 1.0)) throw ConfigError("expectile_tau must lie in (0,1)");
  if (!(inv_temperature_beta > 0.0)) throw ConfigError("inv_temperature_beta must be positive");
  if (!(weight_clip > 0.0)) throw ConfigError("weight_clip must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (gradient_steps < 0) throw ConfigError("gradient_steps must be >= 0");
  if (!(target_update_polyak > 0.0 && target_update_polyak <= 1.0)) {
    throw ConfigError("target_update_polyak must lie in (0,1]");
  }
  if (frame_stack_k < 1) throw ConfigError("frame_stack_k must be >= 1");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  for (int h : hidden_sizes) {
    if (h < 1) throw ConfigError("hidden sizes must be positive");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"gamma", c.gamma},
      {"expectile_tau", c.expectile_tau},
      {"inv_temperature_beta", c.inv_temperature_beta},
      {"weight_clip", c.weight_clip},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"gradient_steps", c.gradient_steps},
      {"target_update_polyak", c.target_update_polyak},
      {"frame_stack_k", c.frame_stack_k},
      {"hidden_sizes", c.hidden_sizes},
      {"log_every", c.log_every},
      {"seed", c.seed},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    c.gamma = j.value("gamma", c.gamma);
    c.expectile_tau = j.value("expectile_tau", c.expectile_tau);
    c.inv_temperature_beta = j.value("inv_temperature_beta", c.inv_temperature_beta);
    c.weight_clip = j.value("weight_clip", c.weight_clip);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.gradient_steps = j.value("gradient_steps", c.gradient_steps);
    c.target_update_polyak = j.value("target_update_polyak", c.target_update_polyak);
    c.frame_stack_k = j.value("frame_stack_k", c.frame_stack_k);
    c.hidden_sizes = j.value("hidden_sizes", c.hidden_sizes);
    c.log_every = j.value("log_every", c.log_every);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainedModels init_models(Algorithm algorithm, int observation_size, int num_actions, const TrainConfig& config) {
  config.validate();
  TrainedModels m;
  m.algorithm = algorithm;
  m.frame_stack_k = config.frame_stack_k;
  m.observation_size = observation_size;
  m.num_actions = num_actions;
  m.config = config;
  const int in = m.input_size();

  Rng policy_rng(derive_seed(config.seed, kPolicyInit));
  m.policy = Mlp(layers(in, config.hidden_sizes, num_actions), policy_rng);
  if (algorithm != Algorithm::BC) {
    Rng q_rng(derive_seed(config.seed, kQInit));
    m.q = Mlp(layers(in, config.hidden_sizes, num_actions), q_rng);
    m.q_target = m.q;
  }
  if (algorithm == Algorithm::IQL) {
    Rng v_rng(derive_seed(config.seed, kVInit));
    m.v = Mlp(layers(in, config.hidden_sizes, 1), v_rng);
  }
  return m;
}

Batch make_batch(std::span<const StackedSample> samples) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto d = samples.empty() ? 0 : static_cast<Eigen::Index>(samples.front().observation.size());
  b.observations.resize(d, n);
  b.next_observations.resize(d, n);
  b.rewards.resize(n);
  b.dones.resize(n);
  b.actions.reserve(samples.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    b.observations.col(i) = Eigen::Map<const VectorXd>(s.observation.data(), d);
    b.next_observations.col(i) = Eigen::Map<const VectorXd>(s.next_observation.data(), d);
    b.actions.push_back(s.action);
    b.rewards[i] = s.reward;
    b.dones[i] = s.done ? 1.0 : 0.0;
  }
  return b;
}

Batch table_from_dataset(const Dataset& dataset, int k) {
  std::vector<StackedSample> all;
  all.reserve(static_cast<std::size_t>(dataset.total_steps()));
  for (const auto& ep : dataset.episodes) {
    auto s = stack(ep, k);
    std::move(s.begin(), s.end(), std::back_inserter(all));
  }
  return make_batch(all);
}

Batch gather(const Batch& table, std::span<const int> indices) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(indices.size());
  b.observations.resize(table.observations.rows(), n);
  b.next_observations.resize(table.next_observations.rows(), n);
  b.rewards.resize(n);
  b.dones.resize(n);
  b.actions.reserve(indices.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int j = indices[static_cast<std::size_t>(i)];
    b.observations.col(i) = table.observations.col(j);
    b.next_observations.col(i) = table.next_observations.col(j);
    b.rewards[i] = table.rewards[j];
    b.dones[i] = table.dones[j];
    b.actions.push_back(table.actions[static_cast<std::size_t>(j)]);
  }
  return b;
}

Batch sample_table(const Batch& table, int batch_size, Rng& rng) {
  if (table.size() == 0) throw DatasetError("cannot sample from an empty dataset");
  std::vector<int> idx(static_cast<std::size_t>(batch_size));
  for (auto& i : idx) i = rng.uniform_int(table.size());
  return gather(table, idx);
}

double expectile_loss(double u, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw ContractViolation("expectile_loss: tau must lie in (0,1)");
  const double w = u < 0.0 ? 1.0 - tau : tau;
  return w * u * u;
}

double awr_weight(double q_sa, double v_s, double beta, double clip) {
  if (!(clip > 0.0)) throw ContractViolation("awr_weight: clip must be positive");
  return std::min(std::exp(beta * (q_sa - v_s)), clip);
}

VectorXd taken_values(const MatrixXd& per_action, std::span<const int> actions) {
  VectorXd out(static_cast<Eigen::Index>(actions.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = per_action(actions[static_cast<std::size_t>(i)], i);
  return out;
}

LossGrad nll_loss(const Mlp& policy, const MatrixXd& obs, std::span<const int> actions, const VectorXd& weights) {
  Mlp::Tape tape;
  const MatrixXd logits = policy.forward(obs, tape);
  const MatrixXd logp = log_softmax(logits);
  const auto n = obs.cols();
  MatrixXd dlogits = logp.array().exp();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    const double w = weights.size() == 0 ? 1.0 : weights[i];
    loss -= w * logp(a, i);
    dlogits(a, i) -= 1.0;
    dlogits.col(i) *= w / static_cast<double>(n);
  }
  return {loss / static_cast<double>(n), policy.backward(tape, dlogits)};
}

LossGrad expectile_value_loss(const Mlp& value, const MatrixXd& obs, const VectorXd& targets, double tau) {
  Mlp::Tape tape;
  const MatrixXd v = value.forward(obs, tape);
  const auto n = obs.cols();
  MatrixXd dv(1, n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = targets[i] - v(0, i);
    const double w = u < 0.0 ? 1.0 - tau : tau;
    loss += w * u * u;
    dv(0, i) = -2.0 * w * u / static_cast<double>(n);
  }
  return {loss / static_cast<double>(n), value.backward(tape, dv)};
}

LossGrad td_loss(const Mlp& q, const MatrixXd& obs, std::span<const int> actions, const VectorXd& targets) {
  Mlp::Tape tape;
  const MatrixXd qs = q.forward(obs, tape);
  const auto n = obs.cols();
  MatrixXd dq = MatrixXd::Zero(qs.rows(), n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int a = actions[static_cast<std::size_t>(i)];
    const double err = qs(a, i) - targets[i];
    loss += err * err;
    dq(a, i) = 2.0 * err / static_cast<double>(n);
  }
  return {loss / static_cast<double>(n), q.backward(tape, dq)};
}

VectorXd iql_q_targets(const TrainedModels& m, const Batch& b, double gamma) {
  require(m.v, "value network", "iql_q_targets");
  const VectorXd v_next = m.v->forward(b.next_observations).row(0).transpose();
  return b.rewards.array() + gamma * (1.0 - b.dones.array()) * v_next.array();
}

VectorXd awac_q_targets(const TrainedModels& m, const Batch& b, double gamma) {
  require(m.q_target, "target critic", "awac_q_targets");
  const MatrixXd pi_next = softmax(m.policy.forward(b.next_observations));
  const MatrixXd q_next = m.q_target->forward(b.next_observations);
  const VectorXd expected = pi_next.cwiseProduct(q_next).colwise().sum().transpose();
  return b.rewards.array() + gamma * (1.0 - b.dones.array()) * expected.array();
}

VectorXd iql_policy_weights(const TrainedModels& m, const Batch& b, const TrainConfig& c) {
  require(m.q_target, "target critic", "iql_policy_weights");
  require(m.v, "value network", "iql_policy_weights");
  const VectorXd q = taken_values(m.q_target->forward(b.observations), b.actions);
  const MatrixXd v = m.v->forward(b.observations);
  VectorXd w(q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) w[i] = awr_weight(q[i], v(0, i), c.inv_temperature_beta, c.weight_clip);
  return w;
}

VectorXd awac_policy_weights(const TrainedModels& m, const Batch& b, const TrainConfig& c) {
  require(m.q_target, "target critic", "awac_policy_weights");
  const MatrixXd qs = m.q_target->forward(b.observations);
  const MatrixXd pi = softmax(m.policy.forward(b.observations));
  const VectorXd baseline = pi.cwiseProduct(qs).colwise().sum().transpose();
  const VectorXd q = taken_values(qs, b.actions);
  VectorXd w(q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    w[i] = awr_weight(q[i], baseline[i], c.inv_temperature_beta, c.weight_clip);
  }
  return w;
}

LossRecord bc_update(TrainedModels& m, const Batch& b, Optimizers& optim, const TrainConfig& c) {
  const auto adam = adam_config(c);
  LossRecord r;
  auto pl = nll_loss(m.policy, b.observations, b.actions);
  r.policy = pl.loss;
  adam_step(m.policy.parameters(), pl.grad, optim.policy, adam);
  return r;
}

LossRecord iql_update(TrainedModels& m, const Batch& b, Optimizers& optim, const TrainConfig& c) {
  require(m.q, "critic", "iql_update");
  require(m.q_target, "target critic", "iql_update");
  require(m.v, "value network", "iql_update");
  const auto adam = adam_config(c);
  LossRecord r;

  // (1) V <- expectile of Q_target(s, a)
  const VectorXd q_target_sa = taken_values(m.q_target->forward(b.observations), b.actions);
  auto vl = expectile_value_loss(*m.v, b.observations, q_target_sa, c.expectile_tau);
  r.v = vl.loss;
  adam_step(m.v->parameters(), vl.grad, optim.v, adam);

  // (2) Q <- r + gamma (1 - done) V(s')
  const VectorXd y = iql_q_targets(m, b, c.gamma);
  auto ql = td_loss(*m.q, b.observations, b.actions, y);
  r.q = ql.loss;
  adam_step(m.q->parameters(), ql.grad, optim.q, adam);

  // (3) advantage-weighted NLL, weights held constant
  const VectorXd w = iql_policy_weights(m, b, c);
  auto pl = nll_loss(m.policy, b.observations, b.actions, w);
  r.policy = pl.loss;
  adam_step(m.policy.parameters(), pl.grad, optim.policy, adam);

  // (4)
  polyak_update(*m.q_target, *m.q, c.target_update_polyak);
  return r;
}

LossRecord awac_update(TrainedModels& m, const Batch& b, Optimizers& optim, const TrainConfig& c) {
  require(m.q, "critic", "awac_update");
  require(m.q_target, "target critic", "awac_update");
  const auto adam = adam_config(c);
  LossRecord r;

  const VectorXd y = awac_q_targets(m, b, c.gamma);
  auto ql = td_loss(*m.q, b.observations, b.actions, y);
  r.q = ql.loss;
  adam_step(m.q->parameters(), ql.grad, optim.q, adam);

  const VectorXd w = awac_policy_weights(m, b, c);
  auto pl = nll_loss(m.policy, b.observations, b.actions, w);
  r.policy = pl.loss;
  adam_step(m.policy.parameters(), pl.grad, optim.policy, adam);

  polyak_update(*m.q_target, *m.q, c.target_update_polyak);
  return r;
}

TrainedModels train(Algorithm algorithm, const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.empty() || dataset.total_steps() == 0) throw TrainingError("train: dataset is empty");

  auto m = init_models(algorithm, dataset.env.observation_size(), dataset.env.num_actions(), config);
  const Batch table = table_from_dataset(dataset, config.frame_stack_k);
  Rng rng(derive_seed(config.seed, kBatches));
  Optimizers optim;

  for (long step = 1; step <= config.gradient_steps; ++step) {
    const Batch b = sample_table(table, config.batch_size, rng);
    LossRecord r;
    switch (algorithm) {
      case Algorithm::BC: r = bc_update(m, b, optim, config); break;
      case Algorithm::AWAC: r = awac_update(m, b, optim, config); break;
      case Algorithm::IQL: r = iql_update(m, b, optim, config); break;
    }
    r.step = step;
    check_finite(r.policy, step, "policy loss");
    if (algorithm != Algorithm::BC) check_finite(r.q, step, "q loss");
    if (algorithm == Algorithm::IQL) check_finite(r.v, step, "v loss");
    if (step == 1 || step % config.log_every == 0 || step == config.gradient_steps) m.loss_history.push_back(r);
  }
  return m;
}

MatrixXd policy_probabilities(const TrainedModels& m, const MatrixXd& obs) { return softmax(m.policy.forward(obs)); }

MatrixXd q_values(const TrainedModels& m, const MatrixXd& obs) {
  if (!m.q) throw ContractViolation("no critic: " + std::string(to_string(m.algorithm)) + " models have no Q network");
  return m.q->forward(obs);
}

VectorXd state_values(const TrainedModels& m, const MatrixXd& obs) {
  switch (m.algorithm) {
    case Algorithm::IQL: return m.v->forward(obs).row(0).transpose();
    case Algorithm::AWAC: {
      const MatrixXd qs = q_values(m, obs);
      return policy_probabilities(m, obs).cwiseProduct(qs).colwise().sum().transpose();
    }
    case Algorithm::BC: break;
  }
  throw ContractViolation("no critic: BC models have no value function");
}

nlohmann::json to_json(const TrainedModels& m) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : m.loss_history) history.push_back({r.step, loss_json(r.policy), loss_json(r.q), loss_json(r.v)});
  const auto opt = [](const std::optional<Mlp>& net) { return net ? to_json(*net) : nlohmann::json(nullptr); };
  return {
      {"schema", kModelSchema},
      {"algorithm", std::string(to_string(m.algorithm))},
      {"frame_stack_k", m.frame_stack_k},
      {"observation_size", m.observation_size},
      {"num_actions", m.num_actions},
      {"config", to_json(m.config)},
      {"policy", to_json(m.policy)},
      {"q", opt(m.q)},
      {"q_target", opt(m.q_target)},
      {"v", opt(m.v)},
      {"loss_history", std::move(history)},
  };
}

TrainedModels models_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<std::string>() != kModelSchema) {
      throw ConfigError("model schema '" + j.at("schema").get<std::string>() + "' is not " + std::string(kModelSchema));
    }
    TrainedModels m;
    m.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    m.frame_stack_k = j.at("frame_stack_k").get<int>();
    m.observation_size = j.at("observation_size").get<int>();
    m.num_actions = j.at("num_actions").get<int>();
    m.config = train_config_from_json(j.at("config"));
    m.policy = mlp_from_json(j.at("policy"));
    const auto opt = [&](const char* key) -> std::optional<Mlp> {
      if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
      return mlp_from_json(j.at(key));
    };
    m.q = opt("q");
    m.q_target = opt("q_target");
    m.v = opt("v");
    for (const auto& r : j.at("loss_history")) {
      m.loss_history.push_back({r.at(0).get<long>(), loss_from_json(r.at(1)), loss_from_json(r.at(2)),
                                loss_from_json(r.at(3))});
    }
    const bool critics_ok = (m.algorithm == Algorithm::BC) == !m.q.has_value() &&
                            m.q.has_value() == m.q_target.has_value() &&
                            (m.algorithm == Algorithm::IQL) == m.v.has_value();
    if (!critics_ok) throw ConfigError("checkpoint networks do not match the algorithm tag");
    if (m.policy.input_size() != m.input_size()) throw ConfigError("checkpoint policy input size mismatch");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model checkpoint: ") + e.what());
  }
}

void save_models(const TrainedModels& m, const std::filesystem::path& path, const std::string& config_hash) {
  auto j = to_json(m);
  j["config_hash"] = config_hash;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out << j.dump() << '\n';
}

TrainedModels load_models(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open model checkpoint '" + path.string() + "'");
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("model checkpoint '" + path.string() + "' is not valid JSON");
  return models_from_json(j);
}

std::string loss_history_csv(const TrainedModels& m) {
  std::ostringstream out;
  out.precision(17);
  out << "step,policy_loss,q_loss,v_loss\n";
  const auto cell = [&](double v) {
    if (!std::isnan(v)) out << v;
  };
  for (const auto& r : m.loss_history) {
    out << r.step << ',';
    cell(r.policy);
    out << ',';
    cell(r.q);
    out << ',';
    cell(r.v);
    out << '\n';
  }
  return out.str();
}

std::string_view to_string(LossTerm term) {
  switch (term) {
    case LossTerm::BcNll: return "bc_nll";
    case LossTerm::ExpectileV: return "expectile_v";
    case LossTerm::TdQ: return "td_q";
    case LossTerm::AwrPolicy: return "awr_policy";
    case LossTerm::Constant: return "constant";
  }
  return "?";
}

GradCheckReport grad_check(const GradCheckSpec& spec, double tolerance) {
  Rng rng(spec.seed);
  const int n = spec.batch_size;
  MatrixXd obs(spec.input_size, n);
  for (Eigen::Index i = 0; i < obs.size(); ++i) obs.data()[i] = 2.0 * rng.uniform() - 1.0;
  std::vector<int> actions(static_cast<std::size_t>(n));
  for (auto& a : actions) a = rng.uniform_int(spec.num_actions);
  VectorXd targets(n), weights(n);
  for (int i = 0; i < n; ++i) {
    targets[i] = 2.0 * rng.uniform() - 1.0;
    weights[i] = awr_weight(2.0 * rng.uniform() - 1.0, 0.0, 1.0, 100.0);
  }

  GradCheckReport report;
  for (const LossTerm term : spec.losses) {
    const int out = term == LossTerm::ExpectileV ? 1 : spec.num_actions;
    Mlp net(layers(spec.input_size, spec.hidden_sizes, out), rng);
    // Non-zero biases so that every parameter influences the loss.
    for (Eigen::Index i = 0; i < net.parameters().size(); ++i) net.parameters()[i] += 0.05 * (rng.uniform() - 0.5);

    const auto eval = [&](const Mlp& m) -> LossGrad {
      switch (term) {
        case LossTerm::BcNll: return nll_loss(m, obs, actions);
        case LossTerm::ExpectileV: return expectile_value_loss(m, obs, targets, spec.expectile_tau);
        case LossTerm::TdQ: return td_loss(m, obs, actions, targets);
        case LossTerm::AwrPolicy: return nll_loss(m, obs, actions, weights);
        case LossTerm::Constant: return {1.0, VectorXd::Zero(m.parameters().size())};
      }
      return {};
    };

    const VectorXd analytic = eval(net).grad;
    Mlp probe = net;
    GradCheckReport::Entry e{term, 0.0, 0.0, 0.0};
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
      const double orig = probe.parameters()[i];
      probe.parameters()[i] = orig + spec.step;
      const double plus = eval(probe).loss;
      probe.parameters()[i] = orig - spec.step;
      const double minus = eval(probe).loss;
      probe.parameters()[i] = orig;
      const double numeric = (plus - minus) / (2.0 * spec.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      e.max_relative_error = std::max(e.max_relative_error, std::abs(analytic[i] - numeric) / denom);
      e.max_abs_analytic = std::max(e.max_abs_analytic, std::abs(analytic[i]));
      e.max_abs_numeric = std::max(e.max_abs_numeric, std::abs(numeric));
    }
    report.max_relative_error = std::max(report.max_relative_error, e.max_relative_error);
    report.entries.push_back(e);
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

double weighted_expectile(std::span<const double> values, std::span<const double> weights, double tau) {
  if (values.empty() || values.size() != weights.size()) throw ContractViolation("weighted_expectile: bad input");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });

  // With k samples strictly below v the stationarity condition is linear in v.
  double below_num = 0.0, below_den = 0.0;
  double above_num = 0.0, above_den = 0.0;
  for (auto i : order) {
    above_num += tau * weights[i] * values[i];
    above_den += tau * weights[i];
  }
  double best = values[order.front()];
  double best_violation = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= order.size(); ++k) {
    const double v = (below_num + above_num) / (below_den + above_den);
    const double lo = k == 0 ? -std::numeric_limits<double>::infinity() : values[order[k - 1]];
    const double hi = k == order.size() ? std::numeric_limits<double>::infinity() : values[order[k]];
    const double violation = std::max({0.0, lo - v, v - hi});
    if (violation < best_violation) {
      best_violation = violation;
      best = std::clamp(v, lo, hi);
      if (violation == 0.0) break;
    }
    if (k < order.size()) {
      const auto i = order[k];
      above_num -= tau * weights[i] * values[i];
      above_den -= tau * weights[i];
      below_num += (1.0 - tau) * weights[i] * values[i];
      below_den += (1.0 - tau) * weights[i];
    }
  }
  return best;
}

TabularValues tabular_iql(std::span<const TabularTransition> data, int n_states, int n_actions, double gamma,
                          double tau, int max_iterations, double tolerance) {
  TabularValues t;
  t.v.assign(static_cast<std::size_t>(n_states), 0.0);
  t.q.assign(static_cast<std::size_t>(n_states), std::vector<double>(static_cast<std::size_t>(n_actions), 0.0));
  t.counts.assign(static_cast<std::size_t>(n_states), std::vector<int>(static_cast<std::size_t>(n_actions), 0));
  t.visited.assign(static_cast<std::size_t>(n_states), false);
  for (const auto& d : data) {
    if (d.state < 0 || d.state >= n_states || d.next_state < 0 || d.next_state >= n_states || d.action < 0 ||
        d.action >= n_actions) {
      throw ContractViolation("tabular_iql: transition index out of range");
    }
    t.counts[static_cast<std::size_t>(d.state)][static_cast<std::size_t>(d.action)] += 1;
    t.visited[static_cast<std::size_t>(d.state)] = true;
  }

  std::vector<std::vector<double>> target_sum(t.q.size(), std::vector<double>(static_cast<std::size_t>(n_actions)));
  for (t.iterations = 0; t.iterations < max_iterations;) {
    ++t.iterations;
    // Q step: the TD loss minimiser per (s, a) is the mean bootstrap target.
    for (auto& row : target_sum) std::fill(row.begin(), row.end(), 0.0);
    for (const auto& d : data) {
      target_sum[static_cast<std::size_t>(d.state)][static_cast<std::size_t>(d.action)] +=
          d.reward + (d.done ? 0.0 : gamma * t.v[static_cast<std::size_t>(d.next_state)]);
    }
    for (std::size_t s = 0; s < t.q.size(); ++s) {
      for (std::size_t a = 0; a < t.q[s].size(); ++a) {
        if (t.counts[s][a] > 0) t.q[s][a] = target_sum[s][a] / t.counts[s][a];
      }
    }
    // V step: expectile of Q over the dataset's actions, weighted by counts.
    double delta = 0.0;
    for (std::size_t s = 0; s < t.v.size(); ++s) {
      if (!t.visited[s]) continue;
      std::vector<double> vals, ws;
      for (std::size_t a = 0; a < t.q[s].size(); ++a) {
        if (t.counts[s][a] == 0) continue;
        vals.push_back(t.q[s][a]);
        ws.push_back(t.counts[s][a]);
      }
      const double v = weighted_expectile(vals, ws, tau);
      delta = std::max(delta, std::abs(v - t.v[s]));
      t.v[s] = v;
    }
    if (delta < tolerance) break;
  }
  return t;
}

}  // namespace vbt
