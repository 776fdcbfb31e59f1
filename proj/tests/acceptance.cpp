// End-to-end acceptance gate. Slow: the permuted-MNIST reproductions train
// 20 tasks x 60k examples per seed on the CPU. Requires REPLAYLAB_DATA_DIR
// (or acceptance_data_dir below) pointing at the MNIST IDX files.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "replay/experiment.hpp"
#include "stat_util.hpp"

using namespace replay;

namespace {

int checks_failed = 0;

void expect(bool ok, const std::string& what) {
    std::printf("  %-66s %s\n", what.c_str(), ok ? "ok" : "FAILED");
    std::fflush(stdout);
    if (!ok) ++checks_failed;
}

bool within(double value, double target, double tol, const std::string& what) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s = %.4f (want %.4f +- %.3f)", what.c_str(), value, target,
                  tol);
    bool ok = std::fabs(value - target) <= tol;
    expect(ok, buf);
    return ok;
}

int section_start() { return checks_failed; }
bool section_pass(int start) { return checks_failed == start; }

// ---------------------------------------------------------------- criterion 1

ExperimentConfig permuted_base(const std::string& out) {
    ExperimentConfig c;
    c.recipe_kind = RecipeKind::PermutedMnist;
    c.seeds = {0, 1, 2, 3, 4};
    c.lr = 0.1;
    c.output_dir = out;
    return c;
}

bool criterion_permuted() {
    int start = section_start();
    std::map<std::string, RunResult> r;

    auto run = [&](const std::string& name, LearnerKind kind, const std::string& policy,
                   int spc) {
        ExperimentConfig c = permuted_base("acceptance_out/c1_" + name);
        c.learner = kind;
        c.policy = policy;
        c.samples_per_class = spc;
        std::printf("  running %s ...\n", name.c_str());
        std::fflush(stdout);
        r[name] = run_benchmark(c);
    };
    run("finetune", LearnerKind::Finetune, "none", 1);
    run("ewc", LearnerKind::EWC, "none", 1);
    run("agem_ring1", LearnerKind::AGEM, "ring", 1);
    run("er_ring1", LearnerKind::ER, "ring", 1);
    run("er_reservoir15", LearnerKind::ER, "reservoir", 15);

    within(r["finetune"].mean_accuracy, 0.535, 0.04, "finetune A_T");
    within(r["finetune"].mean_forgetting, 0.29, 0.05, "finetune F_T");
    within(r["ewc"].mean_accuracy, 0.631, 0.04, "EWC A_T");
    within(r["agem_ring1"].mean_accuracy, 0.621, 0.04, "A-GEM (1 spc) A_T");
    within(r["er_ring1"].mean_accuracy, 0.702, 0.03, "ER-ring (1 spc) A_T");
    within(r["er_ring1"].mean_forgetting, 0.12, 0.04, "ER-ring (1 spc) F_T");
    within(r["er_reservoir15"].mean_accuracy, 0.798, 0.03, "ER-reservoir (15 spc) A_T");

    for (const std::string& er : {"er_ring1", "er_reservoir15"})
        for (const std::string& base : {"finetune", "ewc", "agem_ring1"})
            expect(r[er].mean_accuracy > r[base].mean_accuracy, er + " > " + base);
    return section_pass(start);
}

// ---------------------------------------------------------------- criterion 2

std::map<std::string, RotationRegimeResult> rotation_run(double angle2, int samples,
                                                         const std::string& out) {
    ExperimentConfig c;
    c.recipe_kind = RecipeKind::RotatedMnistPair;
    c.rotation.angle_task1 = 0.0;
    c.rotation.angle_task2 = angle2;
    c.rotation.task2_train_count = samples;
    c.learner = LearnerKind::ER;
    c.policy = "ring";
    c.samples_per_class = 1;  // 10 slots, one per class of task 1
    c.seeds = {0, 1, 2};
    c.output_dir = out;
    std::printf("  running rotation %g deg / %d samples ...\n", angle2, samples);
    std::fflush(stdout);
    std::map<std::string, RotationRegimeResult> by_regime;
    for (const auto& reg : run_rotation_analysis(c)) by_regime[reg.regime] = reg;
    return by_regime;
}

bool criterion_rotation() {
    int start = section_start();

    auto deg10 = rotation_run(10.0, 1000, "acceptance_out/c2_deg10");
    expect(deg10.at("task2+memory").memory_accuracy >= 0.999, "10 deg ER memory accuracy = 100%");
    within(deg10.at("task2+memory").final_task1_test, 0.862, 0.04, "10 deg ER task-1 test");

    auto deg90 = rotation_run(90.0, 20000, "acceptance_out/c2_deg90");
    within(deg90.at("task2+memory").final_task1_test, 0.334, 0.05, "90 deg ER task-1 test");

    auto deg20 = rotation_run(20.0, 20000, "acceptance_out/c2_deg20");
    double m1 = deg20.at("memory").final_task1_test;
    double d2 = deg20.at("task2").final_task1_test;
    double both = deg20.at("task2+memory").final_task1_test;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "20 deg ordering D2+M1 (%.3f) >= D2 (%.3f) >= M1 (%.3f)",
                  both, d2, m1);
    expect(both >= d2 && d2 >= m1, buf);
    return section_pass(start);
}

// ---------------------------------------------------------------- criterion 3

Batch scalar_item(double v, int label = 0, int task = 1) {
    Batch b;
    b.inputs.resize(1, 1);
    b.inputs(0, 0) = v;
    b.labels = {label};
    b.task_ids = {task};
    return b;
}

bool criterion_properties() {
    int start = section_start();

    {  // reservoir uniformity, chi-square over 10^4 trials
        const int mem_sz = 10, n = 100, trials = 10000;
        std::vector<long long> kept(n, 0);
        for (int t = 0; t < trials; ++t) {
            EpisodicMemory m = EpisodicMemory::reservoir(mem_sz);
            Rng rng = make_rng(606, t);
            for (int i = 0; i < n; ++i) m.update(1, i, scalar_item(i), nullptr, rng);
            for (const MemorySlot* s : m.slots()) kept[static_cast<int>(s->input(0))]++;
        }
        const double expected = trials * static_cast<double>(mem_sz) / n;
        double stat = 0.0;
        for (int i = 0; i < n; ++i)
            stat += (kept[i] - expected) * (kept[i] - expected) / expected;
        double p = testutil::chi_square_p(stat, n - 1);
        char buf[128];
        std::snprintf(buf, sizeof(buf), "reservoir chi-square p = %.4f (want > 0.01)", p);
        expect(p > 0.01, buf);
    }

    {  // ring recency + balance on 10^3 random streams
        Rng meta = make_rng(515);
        bool ok = true;
        for (int stream = 0; stream < 1000 && ok; ++stream) {
            std::uniform_int_distribution<int> quota_d(1, 3), label_d(0, 2), len_d(1, 40);
            int quota = quota_d(meta);
            EpisodicMemory m = EpisodicMemory::ring(quota, 3);
            Rng rng = make_rng(2, stream);
            std::map<int, std::vector<double>> arrivals;
            int len = len_d(meta);
            for (int i = 0; i < len; ++i) {
                int label = label_d(meta);
                double v = stream * 100.0 + i;
                m.update(1, i, scalar_item(v, label), nullptr, rng);
                arrivals[label].push_back(v);
            }
            std::map<int, std::vector<double>> held;
            for (const MemorySlot* s : m.slots()) held[s->label].push_back(s->input(0));
            for (const auto& [label, arr] : arrivals) {
                int want_n = std::min<int>(quota, arr.size());
                auto it = held.find(label);
                const std::vector<double>& have =
                    it == held.end() ? std::vector<double>{} : it->second;
                std::vector<double> want(arr.end() - want_n, arr.end());
                if (have != want) ok = false;
            }
            if (m.size() > m.capacity()) ok = false;
        }
        expect(ok, "ring recency and balance over 1000 random streams");
    }

    {  // A-GEM projection over 10^4 random pairs
        std::mt19937_64 rng(99);
        std::normal_distribution<double> gauss(0.0, 1.0);
        bool ok = true;
        for (int trial = 0; trial < 10000 && ok; ++trial) {
            GradientVector g, ref;
            g.layout.trunk_size = ref.layout.trunk_size = 20;
            g.values = Eigen::VectorXd::NullaryExpr(20, [&] { return gauss(rng); });
            ref.values = Eigen::VectorXd::NullaryExpr(20, [&] { return gauss(rng); });
            GradientVector out = project_agem(g, ref);
            if (g.values.dot(ref.values) >= 0.0) {
                if (!(out.values == g.values)) ok = false;
            } else if (std::fabs(out.values.dot(ref.values)) >
                       1e-6 * out.values.norm() * ref.values.norm() + 1e-30) {
                ok = false;
            }
        }
        expect(ok, "project_agem orthogonality / identity over 10^4 pairs");
    }

    {  // finite-difference gradient check
        std::mt19937_64 rng(12345);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const double h = 1e-4;
        long long total = 0, good = 0;
        for (int trial = 0; trial < 5; ++trial) {
            MlpModel m(3, {5, 4}, 3, 9000 + trial);
            m.ensure_head(1);
            Batch b;
            b.inputs = Eigen::MatrixXd::NullaryExpr(4, 3, [&] { return gauss(rng); });
            b.labels = {0, 1, 2, 0};
            b.task_ids = {1, 1, 1, 1};
            {   // nudge zero-initialized biases off the exact ReLU kink
                GradientVector p0 = m.parameters({1});
                for (int i = 0; i < p0.values.size(); ++i) p0.values(i) += 0.01 * gauss(rng);
                m.set_parameters(p0);
            }
            GradientVector analytic;
            m.loss_and_grad(b, analytic);
            GradientVector params = m.parameters({1});
            for (int i = 0; i < params.values.size(); ++i) {
                GradientVector p = params, g;
                p.values(i) += h;
                m.set_parameters(p);
                double lp = m.loss_and_grad(b, g);
                p.values(i) = params.values(i) - h;
                m.set_parameters(p);
                double lm = m.loss_and_grad(b, g);
                m.set_parameters(params);
                double fd = (lp - lm) / (2 * h), an = analytic.values(i);
                double rel =
                    std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-6});
                ++total;
                if (rel < 1e-4) ++good;
            }
        }
        expect(static_cast<double>(good) / total >= 0.99,
               "gradient finite-difference check, rel err < 1e-4");
    }

    {  // metrics vs brute force on 10^3 random matrices
        std::mt19937_64 rng(31337);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::uniform_int_distribution<int> tasks(2, 8);
        bool ok = true;
        for (int trial = 0; trial < 1000 && ok; ++trial) {
            int t = tasks(rng);
            AccuracyMatrix m;
            for (int i = 1; i <= t; ++i) {
                std::vector<double> row(i);
                for (double& v : row) v = u(rng);
                m.append_row(std::move(row));
            }
            double s = 0.0;
            for (int j = 1; j <= t; ++j) s += m.at(t, j);
            if (std::fabs(average_accuracy(m, t) - s / t) > 1e-12) ok = false;
            double f = 0.0;
            for (int j = 1; j < t; ++j) {
                double best = -1.0;
                for (int l = j; l <= t - 1; ++l) best = std::max(best, m.at(l, j));
                f += best - m.at(t, j);
            }
            if (std::fabs(forgetting(m, t) - f / (t - 1)) > 1e-12) ok = false;
        }
        expect(ok, "metrics match the brute-force oracle on 10^3 matrices");
    }

    {  // determinism of a smoke run
        SyntheticGaussianRecipe recipe;
        recipe.tasks = 2;
        recipe.classes = 2;
        recipe.dim = 8;
        recipe.train_per_class = 50;
        recipe.test_per_class = 20;
        recipe.seed = 4;
        auto run = [&] {
            TaskStream s = make_synthetic_stream(recipe);
            MlpModel m(8, {16, 16}, 2, mix_seed(0, 11));
            Learner er({LearnerKind::ER, 10}, EpisodicMemory::reservoir(8));
            Rng rng = make_rng(0, 22);
            return run_single_pass(s.ev_tasks, m, er, {10, 0.1}, rng).matrix;
        };
        expect(run() == run(), "equal seeds give identical accuracy matrices");
    }
    return section_pass(start);
}

// ---------------------------------------------------------------- criterion 4

bool criterion_hybrid() {
    int start = section_start();
    std::map<std::string, RunResult> r;
    for (const std::string& policy : {"reservoir", "ring", "hybrid"}) {
        ExperimentConfig c = permuted_base("acceptance_out/c4_" + policy);
        c.learner = LearnerKind::ER;
        c.policy = policy;
        c.samples_per_class = 1;  // one slot per class on average
        c.seeds = {0, 1, 2};
        std::printf("  running hybrid-curve %s ...\n", policy.c_str());
        std::fflush(stdout);
        r[policy] = run_benchmark(c);
    }

    double best_base = std::max(r["reservoir"].mean_accuracy, r["ring"].mean_accuracy);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "hybrid final A_T %.4f >= max(reservoir, ring) %.4f - 0.02",
                  r["hybrid"].mean_accuracy, best_base);
    expect(r["hybrid"].mean_accuracy >= best_base - 0.02, buf);

    for (int k = 0; k < 3; ++k) {
        double hybrid_ak = 0.0, ring_ak = 0.0;
        for (const auto& s : r["hybrid"].per_seed) hybrid_ak += s.a_k[k] / 3.0;
        for (const auto& s : r["ring"].per_seed) ring_ak += s.a_k[k] / 3.0;
        std::snprintf(buf, sizeof(buf), "hybrid A_%d %.4f >= ring A_%d %.4f - 0.01", k + 1,
                      hybrid_ak, k + 1, ring_ak);
        expect(hybrid_ak >= ring_ak - 0.01, buf);
    }
    return section_pass(start);
}

}  // namespace

int main() {
    if (!std::getenv("REPLAYLAB_DATA_DIR")) {
        std::printf("REPLAYLAB_DATA_DIR is not set; the MNIST criteria cannot run\n");
        return 1;
    }

    std::printf("criterion 3: property suites\n");
    bool ok3 = criterion_properties();
    std::printf("criterion 2: rotation analysis\n");
    bool ok2 = criterion_rotation();
    std::printf("criterion 4: hybrid memory behavior\n");
    bool ok4 = criterion_hybrid();
    std::printf("criterion 1: permuted MNIST reproduction\n");
    bool ok1 = criterion_permuted();

    std::printf("criterion 1 (permuted MNIST reproduction): %s\n", ok1 ? "PASS" : "FAIL");
    std::printf("criterion 2 (rotation analysis):           %s\n", ok2 ? "PASS" : "FAIL");
    std::printf("criterion 3 (property suites):             %s\n", ok3 ? "PASS" : "FAIL");
    std::printf("criterion 4 (hybrid memory behavior):      %s\n", ok4 ? "PASS" : "FAIL");
    return (ok1 && ok2 && ok3 && ok4) ? 0 : 1;
}
