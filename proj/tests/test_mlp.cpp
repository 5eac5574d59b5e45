#include <doctest.h>

#include <random>

#include "safe_mpc/mlp.hpp"

using namespace safe_mpc;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

}  // namespace

TEST_CASE("gradient check on a 2-4-2 probe network") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        MlpRegressor net(2, {4}, 2, rng);
        for (auto& l : net.layers()) l.bias.setConstant(0.1);  // keep ReLUs away from the kink
        const Eigen::VectorXd x = random_matrix(2, 1, 100 + seed).col(0);
        const Eigen::VectorXd y = random_matrix(2, 1, 200 + seed).col(0);
        CHECK(net.parameter_count() == 2 * 4 + 4 + 4 * 2 + 2);
        CHECK(gradient_check(net, x, y, seed) < 1e-4);
    }
}

TEST_CASE("gradient check samples a subset of large networks") {
    Rng rng(3);
    MlpRegressor net(6, {32, 32}, 3, rng);
    const Eigen::VectorXd x = random_matrix(6, 1, 5).col(0);
    const Eigen::VectorXd y = random_matrix(3, 1, 6).col(0);
    CHECK(gradient_check(net, x, y, 1, 100) < 1e-4);
}

TEST_CASE("gradient vanishes at zero loss") {
    Rng rng(4);
    MlpRegressor net(3, {8, 8}, 2, rng);
    const Eigen::MatrixXd x = random_matrix(3, 16, 9);
    const Eigen::MatrixXd y = net.forward(x);
    std::vector<DenseLayer> grad;
    CHECK(net.loss_and_gradient(x, y, &grad) == 0.0);
    double sq = 0.0;
    for (const auto& g : grad) sq += g.weight.squaredNorm() + g.bias.squaredNorm();
    CHECK(std::sqrt(sq) < 1e-8);
}

TEST_CASE("batched and single forward agree") {
    Rng rng(5);
    MlpRegressor net(4, {16}, 3, rng);
    const Eigen::MatrixXd x = random_matrix(4, 10, 11);
    const Eigen::MatrixXd out = net.forward(x);
    for (int c = 0; c < 10; ++c) CHECK((net.forward(Eigen::VectorXd(x.col(c))) - out.col(c)).norm() < 1e-12);
}

TEST_CASE("flat parameter view covers weights then biases") {
    Rng rng(6);
    MlpRegressor net(2, {3}, 1, rng);
    CHECK(net.parameter(0) == net.layers()[0].weight(0, 0));
    CHECK(net.parameter(1) == net.layers()[0].weight(1, 0));
    CHECK(net.parameter(6) == net.layers()[0].bias(0));
    CHECK(net.parameter(9) == net.layers()[1].weight(0, 0));
    CHECK(net.parameter(12) == net.layers()[1].bias(0));
    net.parameter(12) = 2.5;
    CHECK(net.layers()[1].bias(0) == 2.5);
}

TEST_CASE("initialisation is bounded and biases start at zero") {
    Rng rng(7);
    MlpRegressor net(10, {20}, 5, rng);
    CHECK(net.layers()[0].weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 10.0));
    CHECK(net.layers()[1].weight.cwiseAbs().maxCoeff() <= std::sqrt(3.0 / 20.0));
    CHECK(net.layers()[0].bias.isZero());
}

TEST_CASE("adam reduces a regression loss") {
    Rng rng(8);
    MlpRegressor net(2, {16}, 1, rng);
    const Eigen::MatrixXd x = random_matrix(2, 64, 12);
    const Eigen::MatrixXd y = x.row(0) - 0.5 * x.row(1);
    AdamOptimizer adam(net, 1e-2);
    std::vector<DenseLayer> grad;
    const double first = net.loss_and_gradient(x, y, &grad);
    double last = first;
    for (int i = 0; i < 300; ++i) {
        last = net.loss_and_gradient(x, y, &grad);
        adam.step(net, grad);
    }
    CHECK(last < 0.05 * first);
}
