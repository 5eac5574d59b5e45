#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "safe_mpc/environment.hpp"
#include "safe_mpc/mlp.hpp"
#include "safe_mpc/model_interfaces.hpp"

namespace safe_mpc {

/// The unit stored in replay buffers.
struct Transition {
    Observation observation;
    Action action;
    Observation next_observation;
    int cost = 0;
    bool reset = false;  // goal relocated or nearest-object slots reordered during this step
};

struct TrainConfig {
    int batch_size = 256;
    double learning_rate = 1e-3;
    int epochs = 70;
    double subsample_fraction = 0.8;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const;
};

inline constexpr double kNormalizerStdFloor = 1e-6;

/// Per-dimension standardisation of regressor inputs and delta targets.
struct Normalizer {
    Eigen::VectorXd input_mean, input_std;
    Eigen::VectorXd target_mean, target_std;

    static Normalizer identity(int input_dim, int target_dim);

    Eigen::MatrixXd normalize_inputs(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd normalize_targets(const Eigen::MatrixXd& y) const;
    Eigen::MatrixXd denormalize_targets(const Eigen::MatrixXd& y) const;
};

/// Computes column means and floored population standard deviations.
std::pair<Eigen::VectorXd, Eigen::VectorXd> column_statistics(const Eigen::MatrixXd& samples);

struct FitReport {
    std::size_t n_train = 0;                           // transitions after reset filtering
    std::vector<std::vector<double>> epoch_loss;       // [member][epoch], normalized MSE
    std::vector<std::vector<std::size_t>> subsets;     // [member] sorted sample indices
};

/// Bootstrap ensemble of regressors predicting normalized state deltas.
class EnsembleDynamicsModel : public MemberDynamics {
public:
    EnsembleDynamicsModel() = default;
    EnsembleDynamicsModel(int observation_dim, int action_dim, int ensemble_size, const std::vector<int>& hidden,
                          std::uint64_t seed);

    /// Trains every member on an independent subsample of the non-reset
    /// transitions. Members continue from their current weights; the
    /// normalizer is refit on the full filtered dataset first.
    FitReport fit(const std::vector<Transition>& data, const TrainConfig& cfg, std::uint64_t seed);

    Observation predict_member(int member, const Observation& obs, const Action& action) const;
    std::pair<Observation, Eigen::VectorXd> predict_distribution(const Observation& obs, const Action& action) const;

    int ensemble_size() const override { return static_cast<int>(members_.size()); }
    Eigen::MatrixXd predict_member_batch(int member, const Eigen::MatrixXd& states,
                                         const Eigen::MatrixXd& actions) const override;

    int observation_dim() const noexcept { return obs_dim_; }
    int action_dim() const noexcept { return act_dim_; }
    const Normalizer& normalizer() const noexcept { return normalizer_; }
    Normalizer& normalizer() noexcept { return normalizer_; }
    const std::vector<MlpRegressor>& members() const noexcept { return members_; }
    std::vector<MlpRegressor>& members() noexcept { return members_; }

    void save(const std::filesystem::path& path) const;
    static EnsembleDynamicsModel load(const std::filesystem::path& path);

private:
    void check_shapes(Eigen::Index obs_rows, Eigen::Index act_rows) const;

    int obs_dim_ = 0;
    int act_dim_ = 0;
    std::vector<MlpRegressor> members_;
    Normalizer normalizer_;
};

}  // namespace safe_mpc
