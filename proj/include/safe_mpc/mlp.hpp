#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "safe_mpc/rng.hpp"

namespace safe_mpc {

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;
};

/// Feedforward regressor: ReLU hidden layers and a linear output head.
///
/// Batched calls take one sample per column.
class MlpRegressor {
public:
    MlpRegressor() = default;

    /// Kaiming-uniform weights (bound sqrt(6 / fan_in) for ReLU layers,
    /// sqrt(3 / fan_in) for the head), zero biases.
    MlpRegressor(int input_dim, const std::vector<int>& hidden, int output_dim, Rng& rng);

    int input_dim() const;
    int output_dim() const;
    std::vector<int> hidden_sizes() const;

    Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
    Eigen::VectorXd forward(const Eigen::VectorXd& input) const;

    /// Mean squared error over every output element of the batch. When
    /// `gradient` is non-null it receives dLoss/dParameters with the same
    /// layout as `layers()`.
    double loss_and_gradient(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                             std::vector<DenseLayer>* gradient) const;

    std::size_t parameter_count() const;
    /// Flat view: per layer, weights in column-major order followed by biases.
    double& parameter(std::size_t index);
    double parameter(std::size_t index) const;

    std::vector<DenseLayer>& layers() noexcept { return layers_; }
    const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

private:
    std::vector<DenseLayer> layers_;
};

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers);

/// Adam moment estimates for one regressor.
class AdamOptimizer {
public:
    AdamOptimizer(const MlpRegressor& model, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                  double epsilon = 1e-8);

    void step(MlpRegressor& model, const std::vector<DenseLayer>& gradient);

private:
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<DenseLayer> m_, v_;
};

/// Compares analytic MSE gradients with central finite differences on a
/// seeded random subset of at least `min_parameters` parameters (all of them
/// when the network is smaller). Returns the maximum relative error.
double gradient_check(const MlpRegressor& regressor, const Eigen::VectorXd& input, const Eigen::VectorXd& target,
                      std::uint64_t seed = 0, std::size_t min_parameters = 100, double step = 1e-5);

}  // namespace safe_mpc
