#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "safe_mpc/cost_classifier.hpp"
#include "safe_mpc/errors.hpp"
#include "safe_mpc/rng.hpp"

using namespace safe_mpc;

namespace {

struct Dataset {
    Eigen::MatrixXd x;
    std::vector<std::uint8_t> y;
};

Dataset checkerboard(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    Dataset d{Eigen::MatrixXd(2, n), {}};
    for (int i = 0; i < n; ++i) {
        d.x(0, i) = u(rng);
        d.x(1, i) = u(rng);
        const int cell = static_cast<int>(d.x(0, i)) + static_cast<int>(d.x(1, i));
        d.y.push_back(static_cast<std::uint8_t>(cell % 2));
    }
    return d;
}

// Unsafe iff inside a disc of radius 0.5 around (1, 1); samples drawn so
// that about 5% are unsafe.
Dataset rare_disc(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 3.0);
    std::uniform_real_distribution<double> in(-0.45, 0.45);
    std::bernoulli_distribution unsafe(0.05);
    Dataset d{Eigen::MatrixXd(2, n), {}};
    for (int i = 0; i < n; ++i) {
        Eigen::Vector2d p;
        if (unsafe(rng)) {
            do p << 1.0 + in(rng), 1.0 + in(rng);
            while ((p - Eigen::Vector2d(1, 1)).norm() > 0.45);
        } else {
            do p << u(rng), u(rng);
            while ((p - Eigen::Vector2d(1, 1)).norm() < 0.55);
        }
        d.x.col(i) = p;
        d.y.push_back(static_cast<std::uint8_t>((p - Eigen::Vector2d(1, 1)).norm() < 0.5));
    }
    return d;
}

}  // namespace

TEST_CASE("all-safe data yields a constant zero predictor") {
    DualBuffer buf;
    Rng rng(1);
    std::normal_distribution<double> n;
    for (int i = 0; i < 200; ++i) buf.ingest(Eigen::Vector3d(n(rng), n(rng), n(rng)), 0);
    const GbdtModel m = fit_classifier(GbdtConfig{}, buf, 2);
    CHECK(m.trees().empty());
    for (int i = 0; i < 100; ++i) CHECK(m.predict(Eigen::Vector3d(n(rng), n(rng), n(rng))) == 0);
}

TEST_CASE("checkerboard is fit to 100 percent training accuracy") {
    const Dataset d = checkerboard(1000, 3);
    const GbdtModel m = fit_gbdt(GbdtConfig{}, d.x, d.y);
    int correct = 0;
    for (int i = 0; i < 1000; ++i) correct += m.predict(d.x.col(i)) == d.y[i];
    CHECK(correct == 1000);
    for (const auto& t : m.trees()) {
        CHECK(t.leaf_count() <= GbdtConfig{}.max_leaves);
        CHECK(t.depth() <= GbdtConfig{}.max_depth);
    }
}

TEST_CASE("rare unsafe class is recalled with the ratio cap") {
    const Dataset train = rare_disc(4000, 4);
    const Dataset test = rare_disc(4000, 5);
    DualBuffer buf(3.0);
    for (int i = 0; i < train.x.cols(); ++i) buf.ingest(train.x.col(i), train.y[i]);
    const GbdtModel m = fit_classifier(GbdtConfig{}, buf, 6);
    int unsafe = 0, hit = 0;
    for (int i = 0; i < test.x.cols(); ++i) {
        if (!test.y[i]) continue;
        ++unsafe;
        hit += m.predict(test.x.col(i));
    }
    REQUIRE(unsafe > 100);
    CHECK(static_cast<double>(hit) / unsafe >= 0.9);
}

TEST_CASE("dual buffer routing, ratio cap and eviction") {
    DualBuffer buf(3.0, 5, 0);
    for (int i = 0; i < 100; ++i) buf.ingest(Eigen::VectorXd::Constant(2, i), 0);
    for (int i = 0; i < 10; ++i) buf.ingest(Eigen::VectorXd::Constant(2, -i), 1);
    CHECK(buf.safe().size() == 5);
    CHECK(buf.safe().front()[0] == 95.0);  // oldest evicted first
    CHECK(buf.unsafe().size() == 10);

    DualBuffer big(3.0);
    for (int i = 0; i < 1000; ++i) big.ingest(Eigen::VectorXd::Constant(2, i), 0);
    for (int i = 0; i < 10; ++i) big.ingest(Eigen::VectorXd::Constant(2, -1 - i), 1);
    const auto set = big.draw(7);
    CHECK(set.n_unsafe == 10);
    CHECK(set.n_safe == 30);
    CHECK(set.features.cols() == 40);
    int labelled_unsafe = 0;
    for (auto l : set.labels) labelled_unsafe += l;
    CHECK(labelled_unsafe == 10);

    DualBuffer empty;
    CHECK_THROWS_AS(empty.draw(0), InsufficientDataError);
}

TEST_CASE("remaining leaf bound shrinks monotonically") {
    const Dataset d = checkerboard(500, 8);
    GbdtConfig cfg;
    cfg.n_estimators = 50;
    const GbdtModel m = fit_gbdt(cfg, d.x, d.y);
    for (std::size_t t = 0; t < m.trees().size(); ++t) {
        CHECK(m.remaining_leaf_bound(t) >= m.remaining_leaf_bound(t + 1));
        // partial margins never stray further than the bound from the full one
        for (int i = 0; i < 20; ++i) {
            const Eigen::VectorXd x = d.x.col(i);
            CHECK(std::abs(m.margin(x) - m.margin(x, t)) <= m.remaining_leaf_bound(t) + 1e-9);
        }
    }
    CHECK(m.remaining_leaf_bound(m.trees().size()) == 0.0);
}

TEST_CASE("batched prediction with early exit matches per-sample prediction") {
    const Dataset d = checkerboard(800, 9);
    const GbdtModel m = fit_gbdt(GbdtConfig{}, d.x, d.y);
    const Dataset probe = checkerboard(2000, 10);
    std::vector<std::uint8_t> labels;
    m.predict_batch(probe.x, labels);
    for (int i = 0; i < probe.x.cols(); ++i) CHECK(labels[i] == m.predict(probe.x.col(i)));
}

TEST_CASE("save and load reproduce predictions") {
    const Dataset d = checkerboard(600, 11);
    GbdtConfig cfg;
    cfg.n_estimators = 40;
    const GbdtModel m = fit_gbdt(cfg, d.x, d.y);
    const auto path = std::filesystem::temp_directory_path() / "safe_mpc_gbdt_roundtrip.txt";
    m.save(path);
    const GbdtModel back = GbdtModel::load(path);
    std::filesystem::remove(path);
    const Dataset probe = checkerboard(1000, 12);
    for (int i = 0; i < 1000; ++i) {
        CHECK(back.margin(probe.x.col(i)) == m.margin(probe.x.col(i)));
        CHECK(back.predict(probe.x.col(i)) == m.predict(probe.x.col(i)));
    }
}

TEST_CASE("malformed model file is a parse error") {
    const auto path = std::filesystem::temp_directory_path() / "safe_mpc_gbdt_bad.txt";
    {
        std::ofstream os(path);
        os << "safe_mpc_gbdt 1\nfeatures two\n";
    }
    CHECK_THROWS_AS(GbdtModel::load(path), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("shape errors and config validation") {
    const Dataset d = checkerboard(100, 13);
    GbdtConfig cfg;
    cfg.n_estimators = 5;
    const GbdtModel m = fit_gbdt(cfg, d.x, d.y);
    CHECK_THROWS_AS(m.predict(Eigen::VectorXd::Zero(3)), ShapeError);
    CHECK_THROWS_AS(fit_gbdt(cfg, d.x, std::vector<std::uint8_t>(5, 0)), ShapeError);
    cfg.max_leaves = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("fitting is deterministic") {
    const Dataset d = checkerboard(300, 14);
    GbdtConfig cfg;
    cfg.n_estimators = 20;
    const GbdtModel a = fit_gbdt(cfg, d.x, d.y), b = fit_gbdt(cfg, d.x, d.y);
    const Dataset probe = checkerboard(200, 15);
    for (int i = 0; i < 200; ++i) CHECK(a.margin(probe.x.col(i)) == b.margin(probe.x.col(i)));
}
