#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace safe_mpc {

/// Per-member transition model consumed by trajectory sampling.
/// Batched calls carry one state (and action) per column.
class MemberDynamics {
public:
    virtual ~MemberDynamics() = default;

    virtual int ensemble_size() const = 0;
    virtual Eigen::MatrixXd predict_member_batch(int member, const Eigen::MatrixXd& states,
                                                 const Eigen::MatrixXd& actions) const = 0;
};

/// Hard-label constraint-violation model c(s) in {0, 1}.
class CostIndicator {
public:
    virtual ~CostIndicator() = default;

    /// Writes one label per column of `states`.
    virtual void predict_batch(const Eigen::MatrixXd& states, std::vector<std::uint8_t>& labels) const = 0;
};

}  // namespace safe_mpc
