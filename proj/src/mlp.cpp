#include "safe_mpc/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "safe_mpc/errors.hpp"

namespace safe_mpc {

MlpRegressor::MlpRegressor(int input_dim, const std::vector<int>& hidden, int output_dim, Rng& rng) {
    if (input_dim < 1 || output_dim < 1) throw ConfigError("regressor dimensions must be positive");
    int fan_in = input_dim;
    std::vector<int> widths = hidden;
    widths.push_back(output_dim);
    for (std::size_t l = 0; l < widths.size(); ++l) {
        const int out = widths[l];
        if (out < 1) throw ConfigError("hidden layer widths must be positive");
        const bool head = l + 1 == widths.size();
        const double bound = std::sqrt((head ? 3.0 : 6.0) / fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        DenseLayer layer{Eigen::MatrixXd(out, fan_in), Eigen::VectorXd::Zero(out)};
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
            for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = u(rng);
        layers_.push_back(std::move(layer));
        fan_in = out;
    }
}

int MlpRegressor::input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }

int MlpRegressor::output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

std::vector<int> MlpRegressor::hidden_sizes() const {
    std::vector<int> h;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) h.push_back(static_cast<int>(layers_[l].weight.rows()));
    return h;
}

Eigen::MatrixXd MlpRegressor::forward(const Eigen::MatrixXd& inputs) const {
    if (inputs.rows() != input_dim()) throw ShapeError("regressor input has wrong dimension");
    Eigen::MatrixXd a = inputs;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Eigen::MatrixXd z = layers_[l].weight * a;
        z.colwise() += layers_[l].bias;
        if (l + 1 < layers_.size()) z = z.cwiseMax(0.0);
        a = std::move(z);
    }
    return a;
}

Eigen::VectorXd MlpRegressor::forward(const Eigen::VectorXd& input) const {
    return forward(Eigen::MatrixXd(input)).col(0);
}

double MlpRegressor::loss_and_gradient(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                                       std::vector<DenseLayer>* gradient) const {
    if (inputs.rows() != input_dim() || targets.rows() != output_dim() || inputs.cols() != targets.cols())
        throw ShapeError("regressor batch shapes do not match");
    const std::size_t n_layers = layers_.size();
    std::vector<Eigen::MatrixXd> activations;
    activations.reserve(n_layers + 1);
    activations.push_back(inputs);
    for (std::size_t l = 0; l < n_layers; ++l) {
        Eigen::MatrixXd z = layers_[l].weight * activations.back();
        z.colwise() += layers_[l].bias;
        if (l + 1 < n_layers) z = z.cwiseMax(0.0);
        activations.push_back(std::move(z));
    }
    Eigen::MatrixXd diff = activations.back() - targets;
    const double count = static_cast<double>(diff.size());
    const double loss = diff.squaredNorm() / count;
    if (!gradient) return loss;

    gradient->resize(n_layers);
    Eigen::MatrixXd delta = (2.0 / count) * diff;
    for (std::size_t l = n_layers; l-- > 0;) {
        auto& g = (*gradient)[l];
        g.weight.noalias() = delta * activations[l].transpose();
        g.bias = delta.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd back = layers_[l].weight.transpose() * delta;
            // ReLU derivative from the post-activation values
            delta = back.cwiseProduct((activations[l].array() > 0.0).cast<double>().matrix());
        }
    }
    return loss;
}

std::size_t MlpRegressor::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

double& MlpRegressor::parameter(std::size_t index) {
    for (auto& l : layers_) {
        const auto nw = static_cast<std::size_t>(l.weight.size());
        if (index < nw) return l.weight.data()[index];
        index -= nw;
        const auto nb = static_cast<std::size_t>(l.bias.size());
        if (index < nb) return l.bias.data()[index];
        index -= nb;
    }
    throw ShapeError("parameter index out of range");
}

double MlpRegressor::parameter(std::size_t index) const { return const_cast<MlpRegressor*>(this)->parameter(index); }

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& layers) {
    std::vector<DenseLayer> z;
    z.reserve(layers.size());
    for (const auto& l : layers)
        z.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
    return z;
}

AdamOptimizer::AdamOptimizer(const MlpRegressor& model, double learning_rate, double beta1, double beta2,
                             double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(zeros_like(model.layers())),
      v_(zeros_like(model.layers())) {}

void AdamOptimizer::step(MlpRegressor& model, const std::vector<DenseLayer>& gradient) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const double step_size = lr_ * std::sqrt(c2) / c1;
    auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
        m = beta1_ * m + (1.0 - beta1_) * grad;
        v = beta2_ * v + (1.0 - beta2_) * grad.cwiseAbs2();
        param.array() -= step_size * m.array() / (v.array().sqrt() + eps_ * std::sqrt(c2));
    };
    auto& layers = model.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        update(layers[l].weight, gradient[l].weight, m_[l].weight, v_[l].weight);
        update(layers[l].bias, gradient[l].bias, m_[l].bias, v_[l].bias);
    }
}

double gradient_check(const MlpRegressor& regressor, const Eigen::VectorXd& input, const Eigen::VectorXd& target,
                      std::uint64_t seed, std::size_t min_parameters, double step) {
    const Eigen::MatrixXd x = input;
    const Eigen::MatrixXd y = target;
    std::vector<DenseLayer> grad;
    regressor.loss_and_gradient(x, y, &grad);
    MlpRegressor probe = regressor;
    const MlpRegressor grad_view = [&] {
        MlpRegressor g = regressor;
        g.layers() = grad;
        return g;
    }();

    const std::size_t total = regressor.parameter_count();
    std::vector<std::size_t> indices(total);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (total > min_parameters) {
        Rng rng(seed);
        std::shuffle(indices.begin(), indices.end(), rng);
        indices.resize(min_parameters);
        std::sort(indices.begin(), indices.end());
    }

    double worst = 0.0;
    for (std::size_t idx : indices) {
        double& p = probe.parameter(idx);
        const double original = p;
        p = original + step;
        const double up = probe.loss_and_gradient(x, y, nullptr);
        p = original - step;
        const double down = probe.loss_and_gradient(x, y, nullptr);
        p = original;
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = grad_view.parameter(idx);
        const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        worst = std::max(worst, std::abs(numeric - analytic) / scale);
    }
    return worst;
}

}  // namespace safe_mpc
