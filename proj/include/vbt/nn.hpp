#pragma once

#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vbt/common.hpp"

namespace vbt {

/// Fully connected ReLU network. Parameters live in one flat vector so that
/// Adam, Polyak averaging and finite-difference checks can treat every
/// network uniformly; layer views are Eigen::Map slices into it.
///
/// Batches are column-major: an input matrix is (input_size x batch).
class Mlp {
 public:
  Mlp() = default;
  // He-uniform weights, zero biases.
  Mlp(std::vector<int> layer_sizes, Rng& rng);
  Mlp(std::vector<int> layer_sizes, Eigen::VectorXd parameters);

  struct Tape {
    // activations[0] is the input; activations[i] the post-ReLU output of layer i.
    std::vector<Eigen::MatrixXd> activations;
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Tape& tape) const;

  // Gradient of the loss w.r.t. all parameters, given dLoss/dOutput.
  Eigen::VectorXd backward(const Tape& tape, const Eigen::MatrixXd& output_grad) const;

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }

  Eigen::VectorXd& parameters() { return params_; }
  const Eigen::VectorXd& parameters() const { return params_; }

  bool operator==(const Mlp& other) const { return sizes_ == other.sizes_ && params_ == other.params_; }

 private:
  using MatMap = Eigen::Map<const Eigen::MatrixXd>;
  using VecMap = Eigen::Map<const Eigen::VectorXd>;

  MatMap weight(int layer) const;
  VecMap bias(int layer) const;
  void compute_offsets();

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Eigen::VectorXd params_;
};

nlohmann::json to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& j);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  long step = 0;

  AdamState() = default;
  explicit AdamState(Eigen::Index n) : first_moment(Eigen::VectorXd::Zero(n)), second_moment(Eigen::VectorXd::Zero(n)) {}

  bool operator==(const AdamState& o) const {
    return step == o.step && first_moment == o.first_moment && second_moment == o.second_moment;
  }
};

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, const AdamConfig& config);

// target <- (1 - rate) * target + rate * source
void polyak_update(Mlp& target, const Mlp& source, double rate);

// Column-wise numerically stable log-softmax / softmax.
Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits);
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

}  // namespace vbt
