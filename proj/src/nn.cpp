#include "vbt/nn.hpp"

#include <cmath>

namespace vbt {

Mlp::Mlp(std::vector<int> layer_sizes, Rng& rng) : sizes_(std::move(layer_sizes)) {
  compute_offsets();
  params_ = Eigen::VectorXd::Zero(offsets_.back());
  for (int l = 0; l < num_layers(); ++l) {
    const int fan_in = sizes_[static_cast<std::size_t>(l)];
    const double limit = std::sqrt(6.0 / fan_in);
    const Eigen::Index n = static_cast<Eigen::Index>(sizes_[static_cast<std::size_t>(l) + 1]) * fan_in;
    for (Eigen::Index i = 0; i < n; ++i) params_[offsets_[2 * l] + i] = limit * (2.0 * rng.uniform() - 1.0);
  }
}

Mlp::Mlp(std::vector<int> layer_sizes, Eigen::VectorXd parameters)
    : sizes_(std::move(layer_sizes)), params_(std::move(parameters)) {
  compute_offsets();
  if (params_.size() != offsets_.back()) {
    throw ConfigError("Mlp: parameter vector has " + std::to_string(params_.size()) + " entries, expected " +
                      std::to_string(offsets_.back()));
  }
}

void Mlp::compute_offsets() {
  if (sizes_.size() < 2) throw ConfigError("Mlp needs at least an input and an output layer");
  for (int s : sizes_) {
    if (s < 1) throw ConfigError("Mlp layer sizes must be positive");
  }
  offsets_.assign(1, 0);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(offsets_.back() + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1]);  // weights
    offsets_.push_back(offsets_.back() + sizes_[l + 1]);                                         // bias
  }
}

Mlp::MatMap Mlp::weight(int l) const {
  return MatMap(params_.data() + offsets_[static_cast<std::size_t>(2 * l)], sizes_[static_cast<std::size_t>(l) + 1],
                sizes_[static_cast<std::size_t>(l)]);
}

Mlp::VecMap Mlp::bias(int l) const {
  return VecMap(params_.data() + offsets_[static_cast<std::size_t>(2 * l + 1)],
                sizes_[static_cast<std::size_t>(l) + 1]);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input) const {
  Tape tape;
  return forward(input, tape);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Tape& tape) const {
  if (input.rows() != input_size()) {
    throw ContractViolation("Mlp::forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                            std::to_string(input_size()));
  }
  tape.activations.clear();
  tape.activations.push_back(input);
  for (int l = 0; l < num_layers(); ++l) {
    Eigen::MatrixXd z = weight(l) * tape.activations.back();
    z.colwise() += bias(l);
    if (l + 1 < num_layers()) z = z.cwiseMax(0.0);
    tape.activations.push_back(std::move(z));
  }
  return tape.activations.back();
}

Eigen::VectorXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& output_grad) const {
  if (output_grad.rows() != output_size() || output_grad.cols() != tape.activations.front().cols()) {
    throw ContractViolation("Mlp::backward: gradient shape does not match the forward batch");
  }
  Eigen::VectorXd grad(params_.size());
  Eigen::MatrixXd delta = output_grad;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const auto& in = tape.activations[static_cast<std::size_t>(l)];
    const auto rows = sizes_[static_cast<std::size_t>(l) + 1];
    const auto cols = sizes_[static_cast<std::size_t>(l)];
    Eigen::Map<Eigen::MatrixXd>(grad.data() + offsets_[static_cast<std::size_t>(2 * l)], rows, cols).noalias() =
        delta * in.transpose();
    Eigen::Map<Eigen::VectorXd>(grad.data() + offsets_[static_cast<std::size_t>(2 * l + 1)], rows) =
        delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = weight(l).transpose() * delta;
      // ReLU derivative; the activation stored is post-ReLU, so a zero
      // activation means the unit was inactive.
      delta = (in.array() > 0.0).select(back, 0.0);
    }
  }
  return grad;
}

nlohmann::json to_json(const Mlp& net) {
  const auto& p = net.parameters();
  return {{"layer_sizes", net.layer_sizes()}, {"parameters", std::vector<double>(p.data(), p.data() + p.size())}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
  const auto values = j.at("parameters").get<std::vector<double>>();
  return Mlp(sizes, Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& s, const AdamConfig& c) {
  if (s.first_moment.size() != params.size()) s = AdamState(params.size());
  s.step += 1;
  s.first_moment = c.beta1 * s.first_moment + (1.0 - c.beta1) * grad;
  s.second_moment = c.beta2 * s.second_moment + (1.0 - c.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  params.array() -= c.learning_rate * (s.first_moment.array() / bc1) /
                    ((s.second_moment.array() / bc2).sqrt() + c.epsilon);
}

void polyak_update(Mlp& target, const Mlp& source, double rate) {
  target.parameters() = (1.0 - rate) * target.parameters() + rate * source.parameters();
}

Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out = logits;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double m = out.col(c).maxCoeff();
    const double lse = m + std::log((out.col(c).array() - m).exp().sum());
    out.col(c).array() -= lse;
  }
  return out;
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) { return log_softmax(logits).array().exp(); }

}  // namespace vbt
