#include "safe_mpc/cost_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "safe_mpc/errors.hpp"
#include "safe_mpc/rng.hpp"

namespace safe_mpc {

void GbdtConfig::validate() const {
    if (n_estimators < 1) throw ConfigError("n_estimators must be at least 1");
    if (max_depth < 1) throw ConfigError("max_depth must be at least 1");
    if (max_leaves < 2) throw ConfigError("max_leaves must be at least 2");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("learning_rate must lie in (0, 1]");
    if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be at least 1");
    if (!(decision_threshold > 0.0 && decision_threshold < 1.0))
        throw ConfigError("decision_threshold must lie in (0, 1)");
    if (l2_regularization < 0.0) throw ConfigError("l2_regularization must be non-negative");
}

double RegressionTree::evaluate(const double* x) const {
    int i = 0;
    while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
        const TreeNode& n = nodes[static_cast<std::size_t>(i)];
        i = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].value;
}

int RegressionTree::depth() const {
    // nodes are appended after their parent, so one forward pass suffices
    std::vector<int> d(nodes.size(), 0);
    int deepest = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        deepest = std::max(deepest, d[i]);
        if (nodes[i].feature >= 0) {
            d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
            d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
        }
    }
    return deepest;
}

int RegressionTree::leaf_count() const {
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

double RegressionTree::max_abs_leaf() const {
    double m = 0.0;
    for (const auto& n : nodes)
        if (n.feature < 0) m = std::max(m, std::abs(n.value));
    return m;
}

GbdtModel::GbdtModel(int n_features, double base_score, double shrinkage, double decision_threshold,
                     std::vector<RegressionTree> trees)
    : n_features_(n_features), base_score_(base_score), shrinkage_(shrinkage), threshold_(decision_threshold),
      trees_(std::move(trees)), suffix_bound_(trees_.size() + 1, 0.0) {
    for (std::size_t t = trees_.size(); t-- > 0;)
        suffix_bound_[t] = suffix_bound_[t + 1] + shrinkage_ * trees_[t].max_abs_leaf();
}

void GbdtModel::check_features(Eigen::Index n) const {
    if (n != n_features_)
        throw ShapeError("classifier expects " + std::to_string(n_features_) + " features, got " + std::to_string(n));
}

double GbdtModel::margin(const Eigen::VectorXd& x, std::size_t n_trees) const {
    check_features(x.size());
    double sum = 0.0;
    const std::size_t m = std::min(n_trees, trees_.size());
    for (std::size_t t = 0; t < m; ++t) sum += trees_[t].evaluate(x.data());
    return base_score_ + shrinkage_ * sum;
}

double GbdtModel::probability(const Eigen::VectorXd& x) const { return 1.0 / (1.0 + std::exp(-margin(x))); }

int GbdtModel::predict(const Eigen::VectorXd& x) const { return probability(x) >= threshold_ ? 1 : 0; }

void GbdtModel::predict_batch(const Eigen::MatrixXd& states, std::vector<std::uint8_t>& labels) const {
    check_features(states.rows());
    labels.resize(static_cast<std::size_t>(states.cols()));
    // Decision boundary in margin space, widened by a slack that absorbs
    // rounding differences between partial and full sums.
    const double boundary = std::log(threshold_ / (1.0 - threshold_));
    const double slack = 1e-9 * (1.0 + std::abs(boundary) + suffix_bound_.front());
    for (Eigen::Index c = 0; c < states.cols(); ++c) {
        const double* x = states.col(c).data();
        double sum = 0.0;
        int decided = -1;
        for (std::size_t t = 0; t < trees_.size(); ++t) {
            sum += trees_[t].evaluate(x);
            const double m = base_score_ + shrinkage_ * sum;
            const double rest = suffix_bound_[t + 1] + slack;
            if (m - rest > boundary) {
                decided = 1;
                break;
            }
            if (m + rest < boundary) {
                decided = 0;
                break;
            }
        }
        if (decided < 0) {
            const double p = 1.0 / (1.0 + std::exp(-(base_score_ + shrinkage_ * sum)));
            decided = p >= threshold_ ? 1 : 0;
        }
        labels[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(decided);
    }
}

double GbdtModel::remaining_leaf_bound(std::size_t first_tree) const {
    return suffix_bound_[std::min(first_tree, trees_.size())];
}

namespace {

struct SplitCandidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

struct GrowingLeaf {
    int node = 0;
    int depth = 0;
    std::vector<std::vector<int>> sorted;  // per feature, sample ids ascending by value
    double grad_sum = 0.0;
    double hess_sum = 0.0;
    SplitCandidate best;
};

class TreeBuilder {
public:
    TreeBuilder(const GbdtConfig& cfg, const std::vector<std::vector<double>>& columns, const std::vector<double>& grad,
                const std::vector<double>& hess)
        : cfg_(cfg), columns_(columns), grad_(grad), hess_(hess), goes_left_(grad.size(), 0) {}

    /// Returns the tree and, through `leaf_value_of`, the leaf score of every sample.
    RegressionTree build(const std::vector<std::vector<int>>& root_sorted, std::vector<double>& leaf_value_of) {
        RegressionTree tree;
        tree.nodes.emplace_back();
        std::vector<GrowingLeaf> leaves;
        GrowingLeaf root;
        root.sorted = root_sorted;
        summarize(root);
        leaves.push_back(std::move(root));

        while (static_cast<int>(leaves.size()) < cfg_.max_leaves) {
            int pick = -1;
            for (std::size_t i = 0; i < leaves.size(); ++i) {
                const auto& l = leaves[i];
                if (l.best.feature < 0) continue;
                if (pick < 0 || l.best.gain > leaves[static_cast<std::size_t>(pick)].best.gain) pick = static_cast<int>(i);
            }
            if (pick < 0) break;
            GrowingLeaf parent = std::move(leaves[static_cast<std::size_t>(pick)]);
            leaves.erase(leaves.begin() + pick);

            const int f = parent.best.feature;
            const double thr = parent.best.threshold;
            for (int id : parent.sorted[0]) goes_left_[static_cast<std::size_t>(id)] = columns_[static_cast<std::size_t>(f)][static_cast<std::size_t>(id)] <= thr;

            GrowingLeaf left, right;
            left.depth = right.depth = parent.depth + 1;
            left.sorted.resize(parent.sorted.size());
            right.sorted.resize(parent.sorted.size());
            for (std::size_t feat = 0; feat < parent.sorted.size(); ++feat) {
                for (int id : parent.sorted[feat])
                    (goes_left_[static_cast<std::size_t>(id)] ? left : right).sorted[feat].push_back(id);
            }
            TreeNode& pn = tree.nodes[static_cast<std::size_t>(parent.node)];
            pn.feature = f;
            pn.threshold = thr;
            pn.left = static_cast<int>(tree.nodes.size());
            pn.right = pn.left + 1;
            left.node = pn.left;
            right.node = pn.right;
            tree.nodes.emplace_back();
            tree.nodes.emplace_back();
            summarize(left);
            summarize(right);
            leaves.push_back(std::move(left));
            leaves.push_back(std::move(right));
        }

        for (const auto& l : leaves) {
            const double value = -l.grad_sum / (l.hess_sum + cfg_.l2_regularization);
            tree.nodes[static_cast<std::size_t>(l.node)].value = value;
            for (int id : l.sorted[0]) leaf_value_of[static_cast<std::size_t>(id)] = value;
        }
        return tree;
    }

private:
    double score(double g, double h) const { return g * g / (h + cfg_.l2_regularization); }

    void summarize(GrowingLeaf& leaf) const {
        leaf.grad_sum = leaf.hess_sum = 0.0;
        for (int id : leaf.sorted[0]) {
            leaf.grad_sum += grad_[static_cast<std::size_t>(id)];
            leaf.hess_sum += hess_[static_cast<std::size_t>(id)];
        }
        leaf.best = SplitCandidate{};
        const auto n = static_cast<int>(leaf.sorted[0].size());
        if (leaf.depth >= cfg_.max_depth || n < 2 * cfg_.min_samples_leaf) return;
        const double parent_score = score(leaf.grad_sum, leaf.hess_sum);
        for (std::size_t f = 0; f < leaf.sorted.size(); ++f) {
            const auto& ids = leaf.sorted[f];
            const auto& col = columns_[f];
            double gl = 0.0, hl = 0.0;
            for (int j = 0; j + 1 < n; ++j) {
                const auto id = static_cast<std::size_t>(ids[static_cast<std::size_t>(j)]);
                gl += grad_[id];
                hl += hess_[id];
                const int n_left = j + 1;
                if (n_left < cfg_.min_samples_leaf) continue;
                if (n - n_left < cfg_.min_samples_leaf) break;
                const double lo = col[id];
                const double hi = col[static_cast<std::size_t>(ids[static_cast<std::size_t>(j) + 1])];
                if (!(lo < hi)) continue;
                const double hr = leaf.hess_sum - hl;
                if (hl < cfg_.min_child_hessian || hr < cfg_.min_child_hessian) continue;
                const double gain = score(gl, hl) + score(leaf.grad_sum - gl, hr) - parent_score;
                if (gain > 1e-12 && gain > leaf.best.gain) {
                    double thr = lo + 0.5 * (hi - lo);
                    if (!(thr < hi)) thr = lo;
                    leaf.best = {gain, static_cast<int>(f), thr};
                }
            }
        }
    }

    const GbdtConfig& cfg_;
    const std::vector<std::vector<double>>& columns_;
    const std::vector<double>& grad_;
    const std::vector<double>& hess_;
    std::vector<std::uint8_t> goes_left_;
};

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

GbdtModel fit_gbdt(const GbdtConfig& cfg, const Eigen::MatrixXd& features, const std::vector<std::uint8_t>& labels) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(features.cols());
    const auto n_features = static_cast<int>(features.rows());
    if (n == 0) throw InsufficientDataError("classifier fit needs at least one observation");
    if (labels.size() != n) throw ShapeError("label count does not match feature columns");

    const double positives = static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
    const double prior = std::clamp(positives / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
    const double base = logit(prior);
    if (positives == 0.0 || positives == static_cast<double>(n))
        return GbdtModel(n_features, base, cfg.learning_rate, cfg.decision_threshold, {});

    std::vector<std::vector<double>> columns(static_cast<std::size_t>(n_features), std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (int f = 0; f < n_features; ++f)
            columns[static_cast<std::size_t>(f)][i] = features(f, static_cast<Eigen::Index>(i));
    std::vector<std::vector<int>> sorted(static_cast<std::size_t>(n_features), std::vector<int>(n));
    for (std::size_t f = 0; f < sorted.size(); ++f) {
        std::iota(sorted[f].begin(), sorted[f].end(), 0);
        const auto& col = columns[f];
        std::stable_sort(sorted[f].begin(), sorted[f].end(), [&](int a, int b) {
            return col[static_cast<std::size_t>(a)] < col[static_cast<std::size_t>(b)];
        });
    }

    std::vector<double> margin(n, base), grad(n), hess(n), leaf_value(n);
    std::vector<RegressionTree> trees;
    trees.reserve(static_cast<std::size_t>(cfg.n_estimators));
    for (int t = 0; t < cfg.n_estimators; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-margin[i]));
            grad[i] = p - static_cast<double>(labels[i]);
            hess[i] = std::max(p * (1.0 - p), 1e-16);
        }
        TreeBuilder builder(cfg, columns, grad, hess);
        trees.push_back(builder.build(sorted, leaf_value));
        for (std::size_t i = 0; i < n; ++i) margin[i] += cfg.learning_rate * leaf_value[i];
    }
    return GbdtModel(n_features, base, cfg.learning_rate, cfg.decision_threshold, std::move(trees));
}

DualBuffer::DualBuffer(double max_safe_ratio, std::size_t safe_capacity, std::size_t unsafe_capacity)
    : max_safe_ratio_(max_safe_ratio), safe_capacity_(safe_capacity), unsafe_capacity_(unsafe_capacity) {
    if (!(max_safe_ratio > 0.0)) throw ConfigError("max_safe_ratio must be positive");
}

void DualBuffer::ingest(const Observation& obs, int cost) {
    if (cost != 0 && cost != 1) throw ConfigError("cost label must be 0 or 1");
    auto& store = cost ? unsafe_ : safe_;
    const std::size_t cap = cost ? unsafe_capacity_ : safe_capacity_;
    store.push_back(obs);
    if (cap > 0 && store.size() > cap) store.pop_front();
}

DualBuffer::TrainingSet DualBuffer::draw(std::uint64_t seed) const {
    if (size() == 0) throw InsufficientDataError("classifier buffer is empty");
    std::vector<std::size_t> safe_ids(safe_.size());
    std::iota(safe_ids.begin(), safe_ids.end(), std::size_t{0});
    if (!unsafe_.empty()) {
        const auto cap = static_cast<std::size_t>(std::floor(max_safe_ratio_ * static_cast<double>(unsafe_.size())));
        if (cap < safe_ids.size()) {
            Rng rng(seed);
            std::shuffle(safe_ids.begin(), safe_ids.end(), rng);
            safe_ids.resize(cap);
            std::sort(safe_ids.begin(), safe_ids.end());
        }
    }
    const auto dim = static_cast<Eigen::Index>((unsafe_.empty() ? safe_.front() : unsafe_.front()).size());
    TrainingSet set;
    set.n_unsafe = unsafe_.size();
    set.n_safe = safe_ids.size();
    set.features.resize(dim, static_cast<Eigen::Index>(set.n_unsafe + set.n_safe));
    Eigen::Index c = 0;
    for (const auto& o : unsafe_) {
        set.features.col(c++) = o;
        set.labels.push_back(1);
    }
    for (std::size_t id : safe_ids) {
        set.features.col(c++) = safe_[id];
        set.labels.push_back(0);
    }
    return set;
}

GbdtModel fit_classifier(const GbdtConfig& cfg, const DualBuffer& buffer, std::uint64_t seed) {
    const auto set = buffer.draw(seed);
    return fit_gbdt(cfg, set.features, set.labels);
}

namespace {

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

}  // namespace

void GbdtModel::save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    os << "safe_mpc_gbdt 1\n";
    os << "features " << n_features_ << "\n";
    os << "base_score " << hex(base_score_) << "\n";
    os << "shrinkage " << hex(shrinkage_) << "\n";
    os << "threshold " << hex(threshold_) << "\n";
    os << "trees " << trees_.size() << "\n";
    for (const auto& t : trees_) {
        os << "tree " << t.nodes.size() << "\n";
        for (const auto& n : t.nodes)
            os << n.feature << " " << hex(n.threshold) << " " << n.left << " " << n.right << " " << hex(n.value)
               << "\n";
    }
    if (!os) throw Error("failed writing " + path.string());
}

GbdtModel GbdtModel::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path.string());
    const std::string file = path.string();
    std::size_t line_no = 0;
    std::string line;
    auto next_line = [&]() -> std::istringstream {
        if (!std::getline(is, line)) throw ParseError(file, line_no + 1, "unexpected end of file");
        ++line_no;
        return std::istringstream(line);
    };
    auto parse_double = [&](const std::string& tok) {
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (tok.empty() || *end != '\0') throw ParseError(file, line_no, "bad number '" + tok + "'");
        return v;
    };
    auto parse_count = [&](const std::string& tok) {
        std::size_t used = 0;
        long long v = -1;
        try {
            v = std::stoll(tok, &used);
        } catch (const std::exception&) {
        }
        if (used != tok.size() || v < 0) throw ParseError(file, line_no, "bad count '" + tok + "'");
        return static_cast<std::size_t>(v);
    };
    auto keyed = [&](const char* key) {
        auto ss = next_line();
        std::string k, v;
        if (!(ss >> k >> v) || k != key) throw ParseError(file, line_no, std::string("expected '") + key + "'");
        return v;
    };

    {
        auto ss = next_line();
        std::string magic;
        int version = 0;
        if (!(ss >> magic >> version) || magic != "safe_mpc_gbdt" || version != 1)
            throw ParseError(file, line_no, "unsupported classifier checkpoint header");
    }
    const auto n_features = static_cast<int>(parse_count(keyed("features")));
    const double base_score = parse_double(keyed("base_score"));
    const double shrinkage = parse_double(keyed("shrinkage"));
    const double threshold = parse_double(keyed("threshold"));
    const auto n_trees = parse_count(keyed("trees"));
    std::vector<RegressionTree> trees;
    for (std::size_t t = 0; t < n_trees; ++t) {
        RegressionTree tree;
        const auto n_nodes = parse_count(keyed("tree"));
        for (std::size_t k = 0; k < n_nodes; ++k) {
            auto ss = next_line();
            TreeNode node;
            std::string thr, val;
            if (!(ss >> node.feature >> thr >> node.left >> node.right >> val))
                throw ParseError(file, line_no, "malformed tree node");
            node.threshold = parse_double(thr);
            node.value = parse_double(val);
            if (node.feature >= 0 && (node.left <= static_cast<int>(k) || node.right <= static_cast<int>(k) ||
                                      node.left >= static_cast<int>(n_nodes) || node.right >= static_cast<int>(n_nodes)))
                throw ParseError(file, line_no, "tree node child index out of range");
            if (node.feature >= n_features) throw ParseError(file, line_no, "tree node feature out of range");
            tree.nodes.push_back(node);
        }
        trees.push_back(std::move(tree));
    }
    return GbdtModel(n_features, base_score, shrinkage, threshold, std::move(trees));
}

}  // namespace safe_mpc
