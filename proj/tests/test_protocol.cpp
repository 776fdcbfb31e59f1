#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "replay/data.hpp"
#include "replay/protocol.hpp"

using namespace replay;

namespace {

AccuracyMatrix matrix_of(std::vector<std::vector<double>> rows) {
    AccuracyMatrix m;
    for (auto& r : rows) m.append_row(std::move(r));
    return m;
}

// Brute-force reimplementation of the metric definitions.
double naive_avg(const AccuracyMatrix& m, int T) {
    double s = 0.0;
    for (int j = 1; j <= T; ++j) s += m.at(T, j);
    return s / T;
}

double naive_forgetting(const AccuracyMatrix& m, int T) {
    double s = 0.0;
    for (int j = 1; j < T; ++j) {
        double best = -1.0;
        for (int l = j; l <= T - 1; ++l) best = std::max(best, m.at(l, j));
        s += best - m.at(T, j);
    }
    return s / (T - 1);
}

TaskData labeled_task(const Eigen::MatrixXd& x, const std::vector<int>& y, int task_id) {
    auto data = std::make_shared<Eigen::MatrixXd>(x);
    auto labels = std::make_shared<std::vector<int>>(y);
    std::vector<int> all(y.size());
    std::iota(all.begin(), all.end(), 0);
    TaskData t;
    t.task_id = task_id;
    t.train = {data, labels, all, {}};
    t.test = {data, labels, all, {}};
    return t;
}

}  // namespace

TEST_CASE("AccuracyMatrix validates rows and indexing") {
    AccuracyMatrix m;
    m.append_row({0.5});
    CHECK_THROWS_AS(m.append_row({0.1, 0.2, 0.3}), std::invalid_argument);  // wrong length
    CHECK_THROWS_AS(m.append_row({0.1, 1.2}), std::invalid_argument);       // outside [0,1]
    m.append_row({0.25, 1.0});
    CHECK(m.at(2, 1) == 0.25);
    CHECK_THROWS_AS(m.at(1, 2), std::out_of_range);  // upper triangle undefined
    CHECK_THROWS_AS(m.at(3, 1), std::out_of_range);
    CHECK(m.to_csv() == "0.5,\n0.25,1\n");
}

TEST_CASE("average_accuracy arithmetic examples") {
    CHECK(average_accuracy(matrix_of({{0.9}, {0.1, 0.2}, {0.8, 0.6, 0.7}}), 3) ==
          doctest::Approx(0.70).epsilon(1e-15));
    CHECK(average_accuracy(matrix_of({{0.9}}), 1) == 0.9);
    AccuracyMatrix c = matrix_of({{0.4}, {0.4, 0.4}, {0.4, 0.4, 0.4}});
    CHECK(average_accuracy(c, 3) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK_THROWS_AS(average_accuracy(c, 4), std::out_of_range);
}

TEST_CASE("forgetting arithmetic examples") {
    // Column 1: 0.9, 0.7, 0.8 -> best-ever 0.9, final 0.8, f = 0.1.
    AccuracyMatrix m = matrix_of({{0.9}, {0.7, 0.6}, {0.8, 0.6, 0.5}});
    CHECK(forgetting(m, 3) == doctest::Approx(0.05).epsilon(1e-15));  // (0.1 + 0.0) / 2

    // Monotone non-decreasing column: backward transfer, contribution <= 0.
    AccuracyMatrix up = matrix_of({{0.5}, {0.6, 0.3}, {0.7, 0.3, 0.3}});
    CHECK(forgetting(up, 3) <= 0.0);

    // Constant columns: exactly zero.
    AccuracyMatrix c = matrix_of({{0.4}, {0.4, 0.8}, {0.4, 0.8, 0.1}});
    CHECK(forgetting(c, 3) == 0.0);

    CHECK_THROWS_AS(forgetting(m, 1), std::invalid_argument);
    CHECK_THROWS_AS(forgetting(m, 4), std::out_of_range);
}

TEST_CASE("metrics match a brute-force oracle on 1000 random matrices") {
    std::mt19937_64 rng(31337);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> tasks(2, 8);
    for (int trial = 0; trial < 1000; ++trial) {
        int t = tasks(rng);
        AccuracyMatrix m;
        for (int i = 1; i <= t; ++i) {
            std::vector<double> row(i);
            for (double& v : row) v = u(rng);
            m.append_row(std::move(row));
        }
        for (int T = 1; T <= t; ++T)
            CHECK(average_accuracy(m, T) == doctest::Approx(naive_avg(m, T)).epsilon(1e-12));
        for (int T = 2; T <= t; ++T)
            CHECK(forgetting(m, T) == doctest::Approx(naive_forgetting(m, T)).epsilon(1e-12));
    }
}

TEST_CASE("metrics are equivariant under consistent task relabeling") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int t = 6;
    // Full accuracy grid: every column's contribution depends only on its own
    // values, so permuting columns leaves both metrics unchanged.
    std::vector<std::vector<double>> grid(t + 1, std::vector<double>(t + 1));
    for (int i = 1; i <= t; ++i)
        for (int j = 1; j <= t; ++j) grid[i][j] = u(rng);

    auto full_avg = [&](const std::vector<int>& sigma) {
        double s = 0.0;
        for (int j = 1; j <= t; ++j) s += grid[t][sigma[j]];
        return s / t;
    };
    auto full_fgt = [&](const std::vector<int>& sigma) {
        double s = 0.0;
        for (int j = 1; j < t; ++j) {
            double best = -1.0;
            for (int l = 1; l <= t - 1; ++l) best = std::max(best, grid[l][sigma[j]]);
            s += best - grid[t][sigma[j]];
        }
        return s / (t - 1);
    };

    std::vector<int> ident(t + 1);
    std::iota(ident.begin(), ident.end(), 0);
    std::vector<int> sigma = ident;
    std::shuffle(sigma.begin() + 1, sigma.end(), rng);
    CHECK(full_avg(sigma) == doctest::Approx(full_avg(ident)).epsilon(1e-12));
    // Forgetting averages over which columns survive: permuting within 1..t-1
    // leaves it unchanged.
    std::vector<int> sigma2 = ident;
    std::shuffle(sigma2.begin() + 1, sigma2.end() - 1, rng);
    CHECK(full_fgt(sigma2) == doctest::Approx(full_fgt(ident)).epsilon(1e-12));
}

TEST_CASE("evaluate: degenerate and statistical behavior") {
    SUBCASE("constant class-0 predictor on a class-0 test set scores 1.0") {
        MlpModel m(4, {3}, 10, 0);
        m.ensure_head(1);
        GradientVector p = m.parameters({1});
        p.values.setZero();
        p.head(1)(p.layout.head_size(1) - 10) = 5.0;  // bias toward class 0
        m.set_parameters(p);
        TaskData t = labeled_task(Eigen::MatrixXd::Random(20, 4),
                                  std::vector<int>(20, 0), 1);
        CHECK(evaluate(m, t) == 1.0);
    }
    SUBCASE("labels independent of a fixed model give chance accuracy") {
        MlpModel m(4, {8}, 10, 21);
        m.ensure_head(1);
        Rng rng = make_rng(22);
        std::uniform_int_distribution<int> label(0, 9);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(1000, 4, [&] { return gauss(rng); });
        std::vector<int> y(1000);
        for (int& v : y) v = label(rng);
        CHECK(evaluate(m, labeled_task(x, y, 1)) == doctest::Approx(0.10).epsilon(0.3));
    }
    SUBCASE("empty test set is a configuration error") {
        MlpModel m(4, {3}, 10, 0);
        m.ensure_head(1);
        TaskData t = labeled_task(Eigen::MatrixXd::Random(1, 4), {0}, 1);
        t.test.rows.clear();
        CHECK_THROWS_AS(evaluate(m, t), std::invalid_argument);
    }
}

TEST_CASE("run_single_pass: degenerate stream, accounting, determinism") {
    SyntheticGaussianRecipe recipe;
    recipe.tasks = 1;
    recipe.classes = 2;
    recipe.dim = 6;
    recipe.train_per_class = 40;
    recipe.test_per_class = 15;
    recipe.seed = 3;
    TaskStream stream = make_synthetic_stream(recipe);

    SUBCASE("T=1 yields a 1x1 matrix and one A_k entry") {
        MlpModel m(6, {8}, 2, 1);
        Learner ft({LearnerKind::Finetune}, std::nullopt);
        Rng rng = make_rng(2);
        SinglePassResult r = run_single_pass(stream.ev_tasks, m, ft, {10, 0.1}, rng);
        CHECK(r.matrix.tasks() == 1);
        CHECK(r.avg_accuracy_after_task.size() == 1);
        CHECK(r.avg_accuracy_after_task[0] == r.matrix.at(1, 1));
    }
    SUBCASE("every train example lands in exactly one current-task batch") {
        // 80 train examples, batch 10; shrink the split to 63 to force a
        // final short batch.
        TaskStream s = stream;
        s.ev_tasks[0].train.rows.resize(63);
        MlpModel m(6, {8}, 2, 1);
        Learner er({LearnerKind::ER, 10}, EpisodicMemory::reservoir(16));
        Rng rng = make_rng(2);
        run_single_pass(s.ev_tasks, m, er, {10, 0.1}, rng);
        CHECK(er.examples_seen() == 63);
        CHECK(er.memory().seen() == 63);
    }
    SUBCASE("same seed reproduces the matrix to the last bit") {
        auto run = [&] {
            MlpModel m(6, {8}, 2, 9);
            Learner er({LearnerKind::ER, 10}, EpisodicMemory::reservoir(16));
            Rng rng = make_rng(10);
            return run_single_pass(stream.ev_tasks, m, er, {10, 0.1}, rng).matrix;
        };
        CHECK(run() == run());
    }
}

TEST_CASE("finetune on two identical tasks does not forget") {
    SyntheticGaussianRecipe recipe;
    recipe.tasks = 1;
    recipe.classes = 2;
    recipe.dim = 6;
    recipe.train_per_class = 100;
    recipe.test_per_class = 40;
    for (std::uint64_t seed : {0, 1, 2}) {
        recipe.seed = 50 + seed;
        TaskStream stream = make_synthetic_stream(recipe);
        TaskData twin = stream.ev_tasks[0];
        twin.task_id = 2;
        stream.ev_tasks.push_back(twin);

        MlpModel m(6, {8}, 2, seed);
        Learner ft({LearnerKind::Finetune}, std::nullopt);
        Rng rng = make_rng(seed, 3);
        SinglePassResult r = run_single_pass(stream.ev_tasks, m, ft, {10, 0.1}, rng);
        CHECK(r.matrix.at(2, 1) >= r.matrix.at(1, 1) - 0.02);
    }
}
