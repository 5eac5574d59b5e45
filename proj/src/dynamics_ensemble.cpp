#include "safe_mpc/dynamics_ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "safe_mpc/errors.hpp"

namespace safe_mpc {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
        throw ConfigError("subsample_fraction must lie in (0, 1]");
}

Normalizer Normalizer::identity(int input_dim, int target_dim) {
    return {Eigen::VectorXd::Zero(input_dim), Eigen::VectorXd::Ones(input_dim), Eigen::VectorXd::Zero(target_dim),
            Eigen::VectorXd::Ones(target_dim)};
}

Eigen::MatrixXd Normalizer::normalize_inputs(const Eigen::MatrixXd& x) const {
    return (x.colwise() - input_mean).array().colwise() / input_std.array();
}

Eigen::MatrixXd Normalizer::normalize_targets(const Eigen::MatrixXd& y) const {
    return (y.colwise() - target_mean).array().colwise() / target_std.array();
}

Eigen::MatrixXd Normalizer::denormalize_targets(const Eigen::MatrixXd& y) const {
    return (y.array().colwise() * target_std.array()).matrix().colwise() + target_mean;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> column_statistics(const Eigen::MatrixXd& samples) {
    const double n = static_cast<double>(samples.cols());
    Eigen::VectorXd mean = samples.rowwise().sum() / n;
    Eigen::VectorXd var = (samples.colwise() - mean).cwiseAbs2().rowwise().sum() / n;
    Eigen::VectorXd std = var.cwiseSqrt().cwiseMax(kNormalizerStdFloor);
    return {mean, std};
}

EnsembleDynamicsModel::EnsembleDynamicsModel(int observation_dim, int action_dim, int ensemble_size,
                                             const std::vector<int>& hidden, std::uint64_t seed)
    : obs_dim_(observation_dim), act_dim_(action_dim),
      normalizer_(Normalizer::identity(observation_dim + action_dim, observation_dim)) {
    if (ensemble_size < 1) throw ConfigError("ensemble size must be at least 1");
    for (int b = 0; b < ensemble_size; ++b) {
        Rng rng(derive_seed(seed, {0x1417, static_cast<std::uint64_t>(b)}));
        members_.emplace_back(observation_dim + action_dim, hidden, observation_dim, rng);
    }
}

void EnsembleDynamicsModel::check_shapes(Eigen::Index obs_rows, Eigen::Index act_rows) const {
    if (obs_rows != obs_dim_ || act_rows != act_dim_)
        throw ShapeError("dynamics model expects observation dim " + std::to_string(obs_dim_) + " and action dim " +
                         std::to_string(act_dim_));
}

FitReport EnsembleDynamicsModel::fit(const std::vector<Transition>& data, const TrainConfig& cfg,
                                     std::uint64_t seed) {
    cfg.validate();
    std::vector<const Transition*> usable;
    usable.reserve(data.size());
    for (const auto& t : data) {
        if (t.reset) continue;
        check_shapes(t.observation.size(), t.action.size());
        if (t.next_observation.size() != obs_dim_) throw ShapeError("next_observation has wrong dimension");
        usable.push_back(&t);
    }
    const auto n = static_cast<Eigen::Index>(usable.size());
    if (n < cfg.batch_size)
        throw InsufficientDataError("dynamics fit needs at least one mini-batch (" + std::to_string(cfg.batch_size) +
                                    " transitions), got " + std::to_string(n));

    Eigen::MatrixXd inputs(obs_dim_ + act_dim_, n);
    Eigen::MatrixXd targets(obs_dim_, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Transition& t = *usable[static_cast<std::size_t>(i)];
        inputs.col(i) << t.observation, t.action;
        targets.col(i) = t.next_observation - t.observation;
    }
    std::tie(normalizer_.input_mean, normalizer_.input_std) = column_statistics(inputs);
    std::tie(normalizer_.target_mean, normalizer_.target_std) = column_statistics(targets);
    const Eigen::MatrixXd x = normalizer_.normalize_inputs(inputs);
    const Eigen::MatrixXd y = normalizer_.normalize_targets(targets);

    const auto subset_size = static_cast<std::size_t>(std::ceil(cfg.subsample_fraction * static_cast<double>(n)));
    FitReport report;
    report.n_train = static_cast<std::size_t>(n);

    for (std::size_t b = 0; b < members_.size(); ++b) {
        Rng rng(derive_seed(seed, {0xf17, b}));
        std::vector<Eigen::Index> subset(static_cast<std::size_t>(n));
        std::iota(subset.begin(), subset.end(), Eigen::Index{0});
        std::shuffle(subset.begin(), subset.end(), rng);
        subset.resize(subset_size);
        std::sort(subset.begin(), subset.end());

        MlpRegressor& net = members_[b];
        AdamOptimizer adam(net, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
        std::vector<DenseLayer> grad;
        std::vector<double> losses;
        std::vector<Eigen::Index> order = subset;
        std::vector<Eigen::Index> batch;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            double total = 0.0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
                batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(stop));
                const Eigen::MatrixXd xb = x(Eigen::all, batch);
                const Eigen::MatrixXd yb = y(Eigen::all, batch);
                const double loss = net.loss_and_gradient(xb, yb, &grad);
                if (!std::isfinite(loss)) throw DivergenceError(static_cast<std::size_t>(epoch) + 1, b);
                total += loss * static_cast<double>(stop - start);
                adam.step(net, grad);
            }
            losses.push_back(total / static_cast<double>(order.size()));
        }
        report.epoch_loss.push_back(std::move(losses));
        report.subsets.emplace_back(subset.begin(), subset.end());
    }
    return report;
}

Eigen::MatrixXd EnsembleDynamicsModel::predict_member_batch(int member, const Eigen::MatrixXd& states,
                                                            const Eigen::MatrixXd& actions) const {
    if (member < 0 || member >= ensemble_size()) throw ShapeError("ensemble member index out of range");
    check_shapes(states.rows(), actions.rows());
    if (states.cols() != actions.cols()) throw ShapeError("state and action batches differ in size");
    Eigen::MatrixXd inputs(obs_dim_ + act_dim_, states.cols());
    inputs.topRows(obs_dim_) = states;
    inputs.bottomRows(act_dim_) = actions;
    const Eigen::MatrixXd out = members_[static_cast<std::size_t>(member)].forward(normalizer_.normalize_inputs(inputs));
    return states + normalizer_.denormalize_targets(out);
}

Observation EnsembleDynamicsModel::predict_member(int member, const Observation& obs, const Action& action) const {
    return predict_member_batch(member, Eigen::MatrixXd(obs), Eigen::MatrixXd(action)).col(0);
}

std::pair<Observation, Eigen::VectorXd> EnsembleDynamicsModel::predict_distribution(const Observation& obs,
                                                                                     const Action& action) const {
    const int n_members = ensemble_size();
    Eigen::MatrixXd preds(obs_dim_, n_members);
    for (int b = 0; b < n_members; ++b) preds.col(b) = predict_member(b, obs, action);
    Observation mean = preds.rowwise().sum() / static_cast<double>(n_members);
    // shifted by member 0 so that identical members give exactly zero
    const Eigen::MatrixXd dev = preds.colwise() - preds.col(0);
    const Eigen::VectorXd dev_mean = dev.rowwise().sum() / static_cast<double>(n_members);
    Eigen::VectorXd var = dev.cwiseAbs2().rowwise().sum() / static_cast<double>(n_members) - dev_mean.cwiseAbs2();
    return {mean, var.cwiseMax(0.0)};
}

namespace {

constexpr char kMagic[8] = {'S', 'M', 'P', 'C', 'D', 'Y', 'N', '1'};

template <typename T>
void put(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) throw Error("truncated dynamics checkpoint");
    return value;
}

void put_block(std::ostream& os, const double* data, Eigen::Index count) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

void get_block(std::istream& is, double* data, Eigen::Index count) {
    if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double))))
        throw Error("truncated dynamics checkpoint");
}

}  // namespace

// Layout: magic, int32 obs_dim, act_dim, members, n_hidden, hidden widths,
// normalizer vectors, then per member per layer: weight (column-major), bias.
void EnsembleDynamicsModel::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os.write(kMagic, sizeof kMagic);
    const auto hidden = members_.empty() ? std::vector<int>{} : members_.front().hidden_sizes();
    put<std::int32_t>(os, obs_dim_);
    put<std::int32_t>(os, act_dim_);
    put<std::int32_t>(os, ensemble_size());
    put<std::int32_t>(os, static_cast<std::int32_t>(hidden.size()));
    for (int h : hidden) put<std::int32_t>(os, h);
    for (const auto* v : {&normalizer_.input_mean, &normalizer_.input_std, &normalizer_.target_mean,
                          &normalizer_.target_std})
        put_block(os, v->data(), v->size());
    for (const auto& m : members_)
        for (const auto& l : m.layers()) {
            put_block(os, l.weight.data(), l.weight.size());
            put_block(os, l.bias.data(), l.bias.size());
        }
    if (!os) throw Error("failed writing " + path.string());
}

EnsembleDynamicsModel EnsembleDynamicsModel::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read " + path.string());
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw Error(path.string() + " is not a dynamics checkpoint");
    EnsembleDynamicsModel model;
    model.obs_dim_ = get<std::int32_t>(is);
    model.act_dim_ = get<std::int32_t>(is);
    const int members = get<std::int32_t>(is);
    const int n_hidden = get<std::int32_t>(is);
    if (model.obs_dim_ < 1 || model.act_dim_ < 1 || members < 1 || n_hidden < 0)
        throw Error("corrupt dynamics checkpoint header");
    std::vector<int> hidden(static_cast<std::size_t>(n_hidden));
    for (int& h : hidden) h = get<std::int32_t>(is);
    const int in = model.obs_dim_ + model.act_dim_;
    model.normalizer_ = Normalizer::identity(in, model.obs_dim_);
    for (auto* v : {&model.normalizer_.input_mean, &model.normalizer_.input_std, &model.normalizer_.target_mean,
                    &model.normalizer_.target_std})
        get_block(is, v->data(), v->size());
    Rng unused(0);
    for (int b = 0; b < members; ++b) {
        MlpRegressor net(in, hidden, model.obs_dim_, unused);
        for (auto& l : net.layers()) {
            get_block(is, l.weight.data(), l.weight.size());
            get_block(is, l.bias.data(), l.bias.size());
        }
        model.members_.push_back(std::move(net));
    }
    return model;
}

}  // namespace safe_mpc
