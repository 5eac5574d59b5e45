#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

#include "safe_mpc/environment.hpp"
#include "safe_mpc/model_interfaces.hpp"

namespace safe_mpc {

struct GbdtConfig {
    int n_estimators = 400;
    int max_depth = 8;
    int max_leaves = 12;
    double learning_rate = 0.3;
    int min_samples_leaf = 5;
    double decision_threshold = 0.5;
    double l2_regularization = 1.0;
    double min_child_hessian = 1e-3;

    void validate() const;
};

/// Flat node array. A node with `feature < 0` is a leaf carrying `value`;
/// internal nodes send x[feature] <= threshold to `left`.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double evaluate(const double* x) const;
    int depth() const;
    int leaf_count() const;
    double max_abs_leaf() const;
};

/// Additive logistic tree ensemble approximating the indicator cost c(s).
class GbdtModel : public CostIndicator {
public:
    GbdtModel() = default;
    GbdtModel(int n_features, double base_score, double shrinkage, double decision_threshold,
              std::vector<RegressionTree> trees);

    /// base_score + shrinkage * (sum of the first `n_trees` leaf scores).
    double margin(const Eigen::VectorXd& x, std::size_t n_trees) const;
    double margin(const Eigen::VectorXd& x) const { return margin(x, trees_.size()); }
    double probability(const Eigen::VectorXd& x) const;

    /// 1 iff sigmoid(margin) >= decision threshold.
    int predict(const Eigen::VectorXd& x) const;

    /// Same labels as `predict`, column by column. Stops summing trees once the
    /// remaining leaves cannot move the margin across the threshold.
    void predict_batch(const Eigen::MatrixXd& states, std::vector<std::uint8_t>& labels) const override;

    /// shrinkage * sum over trees [first_tree, end) of max |leaf|.
    double remaining_leaf_bound(std::size_t first_tree) const;

    int n_features() const noexcept { return n_features_; }
    double base_score() const noexcept { return base_score_; }
    double shrinkage() const noexcept { return shrinkage_; }
    double decision_threshold() const noexcept { return threshold_; }
    const std::vector<RegressionTree>& trees() const noexcept { return trees_; }

    void save(const std::filesystem::path& path) const;
    static GbdtModel load(const std::filesystem::path& path);

private:
    void check_features(Eigen::Index n) const;

    int n_features_ = 0;
    double base_score_ = 0.0;
    double shrinkage_ = 1.0;
    double threshold_ = 0.5;
    std::vector<RegressionTree> trees_;
    std::vector<double> suffix_bound_{0.0};  // remaining_leaf_bound(t) for t = 0..n_trees
};

/// Second-order logistic boosting with leaf-wise, depth-capped growth and
/// exact split search. `features` holds one sample per column.
GbdtModel fit_gbdt(const GbdtConfig& cfg, const Eigen::MatrixXd& features, const std::vector<std::uint8_t>& labels);

/// Separate safe and unsafe observation stores with a capped training ratio.
class DualBuffer {
public:
    /// Capacity 0 means unbounded; bounded stores evict oldest-first.
    explicit DualBuffer(double max_safe_ratio = 3.0, std::size_t safe_capacity = 0, std::size_t unsafe_capacity = 0);

    void ingest(const Observation& obs, int cost);

    struct TrainingSet {
        Eigen::MatrixXd features;
        std::vector<std::uint8_t> labels;
        std::size_t n_safe = 0;
        std::size_t n_unsafe = 0;
    };

    /// All unsafe observations plus a seeded uniform subsample of at most
    /// floor(max_safe_ratio * |unsafe|) safe ones. With no unsafe data every
    /// safe observation is used.
    TrainingSet draw(std::uint64_t seed) const;

    const std::deque<Observation>& safe() const noexcept { return safe_; }
    const std::deque<Observation>& unsafe() const noexcept { return unsafe_; }
    double max_safe_ratio() const noexcept { return max_safe_ratio_; }
    std::size_t size() const noexcept { return safe_.size() + unsafe_.size(); }

private:
    double max_safe_ratio_;
    std::size_t safe_capacity_;
    std::size_t unsafe_capacity_;
    std::deque<Observation> safe_;
    std::deque<Observation> unsafe_;
};

/// Fits a classifier on a ratio-capped draw from the buffer.
GbdtModel fit_classifier(const GbdtConfig& cfg, const DualBuffer& buffer, std::uint64_t seed);

}  // namespace safe_mpc
