#include "replay/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

namespace replay {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string learner_name(LearnerKind k) {
    switch (k) {
        case LearnerKind::Finetune: return "finetune";
        case LearnerKind::ER: return "er";
        case LearnerKind::AGEM: return "agem";
        case LearnerKind::EWC: return "ewc";
    }
    return "?";
}

LearnerKind learner_from_name(const std::string& s) {
    if (s == "finetune") return LearnerKind::Finetune;
    if (s == "er") return LearnerKind::ER;
    if (s == "agem") return LearnerKind::AGEM;
    if (s == "ewc") return LearnerKind::EWC;
    throw std::invalid_argument("unknown learner: " + s);
}

std::string recipe_name(RecipeKind k) {
    switch (k) {
        case RecipeKind::PermutedMnist: return "permuted-mnist";
        case RecipeKind::RotatedMnistPair: return "rotated-pair";
        case RecipeKind::SyntheticGaussian: return "synthetic";
    }
    return "?";
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    const int n = static_cast<int>(xs.size());
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    if (n < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1))};
}

std::shared_ptr<const RawDataset> load_mnist_split(const std::string& dir, bool train) {
    const std::string prefix = train ? "train" : "t10k";
    auto ds = std::make_shared<RawDataset>(
        load_idx(dir + "/" + prefix + "-images-idx3-ubyte",
                 dir + "/" + prefix + "-labels-idx1-ubyte"));
    return ds;
}

std::string resolve_data_dir(const ExperimentConfig& config) {
    if (!config.data_dir.empty()) return config.data_dir;
    if (const char* env = std::getenv("REPLAYLAB_DATA_DIR")) return env;
    throw std::invalid_argument(
        "MNIST recipes need a data directory (config data_dir or REPLAYLAB_DATA_DIR)");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("recipe")) {
        const json& r = j.at("recipe");
        const std::string kind = r.value("kind", "permuted-mnist");
        if (kind == "permuted-mnist") {
            c.recipe_kind = RecipeKind::PermutedMnist;
            c.permuted.total_tasks = r.value("total_tasks", c.permuted.total_tasks);
            c.permuted.cv_tasks = r.value("cv_tasks", c.permuted.cv_tasks);
            c.permuted.per_task_train = r.value("per_task_train", c.permuted.per_task_train);
            c.permuted.per_task_test = r.value("per_task_test", c.permuted.per_task_test);
            c.permuted.seed = r.value("seed", c.permuted.seed);
        } else if (kind == "rotated-pair") {
            c.recipe_kind = RecipeKind::RotatedMnistPair;
            c.rotation.angle_task1 = r.value("angle_task1", c.rotation.angle_task1);
            c.rotation.angle_task2 = r.value("angle_task2", c.rotation.angle_task2);
            c.rotation.task2_train_count =
                r.value("task2_train_count", c.rotation.task2_train_count);
            c.rotation.seed = r.value("seed", c.rotation.seed);
        } else if (kind == "synthetic") {
            c.recipe_kind = RecipeKind::SyntheticGaussian;
            c.synthetic.tasks = r.value("tasks", c.synthetic.tasks);
            c.synthetic.classes = r.value("classes", c.synthetic.classes);
            c.synthetic.dim = r.value("dim", c.synthetic.dim);
            c.synthetic.train_per_class = r.value("train_per_class", c.synthetic.train_per_class);
            c.synthetic.test_per_class = r.value("test_per_class", c.synthetic.test_per_class);
            c.synthetic.noise = r.value("noise", c.synthetic.noise);
            c.synthetic.seed = r.value("seed", c.synthetic.seed);
        } else {
            throw std::invalid_argument("unknown recipe kind: " + kind);
        }
    }
    c.learner = learner_from_name(j.value("learner", "er"));
    c.policy = j.value("policy", c.policy);
    c.samples_per_class = j.value("samples_per_class", c.samples_per_class);
    c.lr = j.value("lr", c.lr);
    c.batch_sz = j.value("batch_sz", c.batch_sz);
    c.replay_batch = j.value("replay_batch", c.replay_batch);
    c.ewc_lambda = j.value("ewc_lambda", c.ewc_lambda);
    c.fisher_decay = j.value("fisher_decay", c.fisher_decay);
    c.mof_alpha = j.value("mof_alpha", c.mof_alpha);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.output_dir = j.value("output_dir", c.output_dir);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.curve_log_every = j.value("curve_log_every", c.curve_log_every);
    c.validate();
    return c;
}

ordered_json ExperimentConfig::to_json() const {
    ordered_json r;
    r["kind"] = recipe_name(recipe_kind);
    switch (recipe_kind) {
        case RecipeKind::PermutedMnist:
            r["total_tasks"] = permuted.total_tasks;
            r["cv_tasks"] = permuted.cv_tasks;
            r["per_task_train"] = permuted.per_task_train;
            r["per_task_test"] = permuted.per_task_test;
            r["seed"] = permuted.seed;
            break;
        case RecipeKind::RotatedMnistPair:
            r["angle_task1"] = rotation.angle_task1;
            r["angle_task2"] = rotation.angle_task2;
            r["task2_train_count"] = rotation.task2_train_count;
            r["seed"] = rotation.seed;
            break;
        case RecipeKind::SyntheticGaussian:
            r["tasks"] = synthetic.tasks;
            r["classes"] = synthetic.classes;
            r["dim"] = synthetic.dim;
            r["train_per_class"] = synthetic.train_per_class;
            r["test_per_class"] = synthetic.test_per_class;
            r["noise"] = synthetic.noise;
            r["seed"] = synthetic.seed;
            break;
    }
    ordered_json out;
    out["recipe"] = r;
    out["learner"] = learner_name(learner);
    out["policy"] = policy;
    out["samples_per_class"] = samples_per_class;
    out["lr"] = lr;
    out["batch_sz"] = batch_sz;
    out["replay_batch"] = replay_batch;
    out["ewc_lambda"] = ewc_lambda;
    out["fisher_decay"] = fisher_decay;
    out["mof_alpha"] = mof_alpha;
    out["seeds"] = seeds;
    out["output_dir"] = output_dir;
    out["curve_log_every"] = curve_log_every;
    return out;
}

void ExperimentConfig::validate() const {
    static const std::vector<std::string> policies = {"reservoir", "ring",   "kmeans",
                                                      "mof",       "hybrid", "ringfull",
                                                      "none"};
    if (std::find(policies.begin(), policies.end(), policy) == policies.end())
        throw std::invalid_argument("unknown memory policy: " + policy);
    const bool needs_memory = learner == LearnerKind::ER || learner == LearnerKind::AGEM;
    if (needs_memory && policy == "none")
        throw std::invalid_argument("ER/A-GEM require a memory policy");
    if (!needs_memory && policy != "none")
        throw std::invalid_argument("memory policy 'none' is required for " +
                                    learner_name(learner));
    if (policy != "none" && samples_per_class < 1)
        throw std::invalid_argument("samples_per_class must be >= 1 when a memory is present");
    if (lr <= 0.0 || batch_sz < 1 || replay_batch < 1)
        throw std::invalid_argument("invalid hyperparameters");
    if (seeds.empty()) throw std::invalid_argument("at least one seed required");
}

int ExperimentConfig::total_classes() const {
    switch (recipe_kind) {
        case RecipeKind::PermutedMnist:
            return 10 * (permuted.total_tasks - permuted.cv_tasks);
        case RecipeKind::RotatedMnistPair:
            return 10;  // one slot per class of task 1
        case RecipeKind::SyntheticGaussian:
            return synthetic.classes * synthetic.tasks;
    }
    return 0;
}

TaskStream build_stream(const ExperimentConfig& config) {
    switch (config.recipe_kind) {
        case RecipeKind::PermutedMnist: {
            const std::string dir = resolve_data_dir(config);
            return make_permuted_stream(load_mnist_split(dir, true), load_mnist_split(dir, false),
                                        config.permuted);
        }
        case RecipeKind::RotatedMnistPair: {
            const std::string dir = resolve_data_dir(config);
            return make_rotation_pair(load_mnist_split(dir, true), load_mnist_split(dir, false),
                                      config.rotation);
        }
        case RecipeKind::SyntheticGaussian:
            return make_synthetic_stream(config.synthetic);
    }
    throw std::logic_error("unreachable");
}

EpisodicMemory make_memory(const ExperimentConfig& config) {
    const int c = config.total_classes();
    const int spc = config.samples_per_class;
    if (config.policy == "reservoir") return EpisodicMemory::reservoir(spc * c);
    if (config.policy == "ring") return EpisodicMemory::ring(spc, c);
    if (config.policy == "kmeans") return EpisodicMemory::kmeans(spc, c);
    if (config.policy == "mof") return EpisodicMemory::mof(spc, c, config.mof_alpha);
    if (config.policy == "hybrid") return EpisodicMemory::hybrid(spc * c);
    if (config.policy == "ringfull") return EpisodicMemory::ring_full(spc * c);
    throw std::invalid_argument("policy has no memory: " + config.policy);
}

Learner make_learner(const ExperimentConfig& config) {
    LearnerConfig lc;
    lc.kind = config.learner;
    lc.replay_batch = config.replay_batch;
    lc.ewc_lambda = config.ewc_lambda;
    lc.fisher_decay = config.fisher_decay;
    std::optional<EpisodicMemory> memory;
    if (config.policy != "none") memory = make_memory(config);
    return Learner(lc, std::move(memory));
}

namespace {

SeedResult run_one_seed(const ExperimentConfig& config, const TaskStream& stream,
                        std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    MlpModel model(stream.input_dim, {256, 256}, stream.classes_per_task, mix_seed(seed, 11));
    Learner learner = make_learner(config);
    Rng rng = make_rng(seed, 22);
    RunConfig rc{config.batch_sz, config.lr};

    SinglePassResult sp = run_single_pass(stream.ev_tasks, model, learner, rc, rng);

    SeedResult r;
    r.seed = seed;
    r.matrix = sp.matrix;
    const int t = r.matrix.tasks();
    r.avg_accuracy = average_accuracy(r.matrix, t);
    r.fgt = t >= 2 ? forgetting(r.matrix, t) : 0.0;
    r.a_k = sp.avg_accuracy_after_task;
    if (learner.has_memory() && learner.memory().policy() == MemoryPolicy::Hybrid)
        r.hybrid_switch = learner.memory().hybrid_switch_index();
    r.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

RunResult aggregate(std::vector<SeedResult> per_seed) {
    RunResult out;
    std::vector<double> ats, fts;
    for (const auto& s : per_seed) {
        ats.push_back(s.avg_accuracy);
        fts.push_back(s.fgt);
    }
    std::tie(out.mean_accuracy, out.std_accuracy) = mean_std(ats);
    std::tie(out.mean_forgetting, out.std_forgetting) = mean_std(fts);
    out.per_seed = std::move(per_seed);
    return out;
}

ordered_json seed_json(const SeedResult& s) {
    ordered_json r;
    r["seed"] = s.seed;
    r["avg_accuracy"] = s.avg_accuracy;
    r["forgetting"] = s.fgt;
    r["a_k"] = s.a_k;
    ordered_json rows = ordered_json::array();
    for (int i = 1; i <= s.matrix.tasks(); ++i) rows.push_back(s.matrix.row(i));
    r["matrix"] = rows;
    if (s.hybrid_switch)
        r["hybrid_switch"] = *s.hybrid_switch;
    else
        r["hybrid_switch"] = nullptr;
    r["wall_seconds"] = s.wall_seconds;
    return r;
}

}  // namespace

RunResult run_benchmark(const ExperimentConfig& config) {
    config.validate();
    TaskStream stream = build_stream(config);
    std::vector<SeedResult> per_seed;
    for (std::uint64_t seed : config.seeds)
        per_seed.push_back(run_one_seed(config, stream, seed));
    RunResult result = aggregate(std::move(per_seed));

    fs::create_directories(config.output_dir);
    ordered_json out;
    out["config"] = config.to_json();
    out["per_seed"] = ordered_json::array();
    for (const auto& s : result.per_seed) out["per_seed"].push_back(seed_json(s));
    ordered_json agg;
    agg["mean_accuracy"] = result.mean_accuracy;
    agg["std_accuracy"] = result.std_accuracy;
    agg["mean_forgetting"] = result.mean_forgetting;
    agg["std_forgetting"] = result.std_forgetting;
    out["aggregate"] = agg;
    std::ofstream(config.output_dir + "/results.json") << out.dump(2) << "\n";

    for (const auto& s : result.per_seed)
        std::ofstream(config.output_dir + "/matrix_" + std::to_string(s.seed) + ".csv")
            << s.matrix.to_csv();

    std::ofstream summary(config.output_dir + "/summary.csv");
    summary << "learner,policy,samples_per_class,mean_accuracy,std_accuracy,"
               "mean_forgetting,std_forgetting\n";
    summary.precision(17);
    summary << learner_name(config.learner) << "," << config.policy << ","
            << config.samples_per_class << "," << result.mean_accuracy << ","
            << result.std_accuracy << "," << result.mean_forgetting << ","
            << result.std_forgetting << "\n";
    return result;
}

void run_hybrid_curve(const ExperimentConfig& config) {
    config.validate();
    TaskStream stream = build_stream(config);

    fs::create_directories(config.output_dir);
    std::ofstream curve(config.output_dir + "/hybrid_curve.csv");
    curve << "policy,seed,task,avg_accuracy\n";
    curve.precision(17);
    std::ofstream switches(config.output_dir + "/hybrid_switch.csv");
    switches << "seed,switch_index\n";

    for (const std::string& policy : {"reservoir", "ring", "hybrid"}) {
        ExperimentConfig c = config;
        c.learner = LearnerKind::ER;
        c.policy = policy;
        for (std::uint64_t seed : config.seeds) {
            SeedResult r = run_one_seed(c, stream, seed);
            for (int k = 0; k < static_cast<int>(r.a_k.size()); ++k)
                curve << policy << "," << seed << "," << (k + 1) << "," << r.a_k[k] << "\n";
            if (policy == "hybrid") {
                switches << seed << ",";
                if (r.hybrid_switch)
                    switches << *r.hybrid_switch << "\n";
                else
                    switches << "never\n";
            }
        }
    }
}

std::vector<RotationRegimeResult> run_rotation_analysis(const ExperimentConfig& config) {
    if (config.recipe_kind != RecipeKind::RotatedMnistPair)
        throw std::invalid_argument("rotation analysis requires the rotated-pair recipe");
    TaskStream stream = build_stream(config);
    const TaskData& task1 = stream.ev_tasks.at(0);
    const TaskData& task2 = stream.ev_tasks.at(1);

    fs::create_directories(config.output_dir);
    std::ofstream curves(config.output_dir + "/curves.csv");
    curves << "regime,iteration,accuracy,seed\n";
    curves.precision(17);
    std::ofstream summary(config.output_dir + "/rotation_summary.csv");
    summary << "seed,regime,final_task1_test,memory_accuracy\n";
    summary.precision(17);

    const std::vector<std::string> regimes = {"memory", "task2", "task2+memory"};
    std::map<std::string, std::vector<double>> finals;
    std::map<std::string, std::vector<double>> mem_accs;

    for (std::uint64_t seed : config.seeds) {
        // Task 1 training under ER with a 10-slot per-class ring memory.
        MlpModel base(stream.input_dim, {256, 256}, stream.classes_per_task, mix_seed(seed, 11));
        LearnerConfig lc;
        lc.kind = LearnerKind::ER;
        lc.replay_batch = config.replay_batch;
        Learner learner(lc, EpisodicMemory::ring(config.samples_per_class, 10));
        Rng rng = make_rng(seed, 22);
        RunConfig rc{config.batch_sz, config.lr};
        run_single_pass({task1}, base, learner, rc, rng);

        const EpisodicMemory memory = learner.memory();  // frozen M1 snapshot
        base.ensure_head(task2.task_id);

        const int n2 = task2.train.size();
        const int iters = (n2 + config.batch_sz - 1) / config.batch_sz;

        for (const std::string& regime : regimes) {
            MlpModel model = base;
            Rng data_rng = make_rng(seed, 33);  // same task-2 order across regimes
            Rng mem_rng = make_rng(seed, 44);

            std::vector<int> order(n2);
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), data_rng);

            auto log_point = [&](int iter) {
                curves << regime << "," << iter << "," << evaluate(model, task1) << "," << seed
                       << "\n";
            };
            log_point(0);
            for (int it = 0; it < iters; ++it) {
                Batch d2;
                if (regime != "memory") {
                    const int start = it * config.batch_sz;
                    const int m = std::min(config.batch_sz, n2 - start);
                    std::vector<int> subset(order.begin() + start, order.begin() + start + m);
                    d2 = task2.train.materialize(subset, task2.task_id);
                }
                Batch train_batch;
                if (regime == "memory") {
                    train_batch = memory.sample_batch(config.batch_sz, mem_rng);
                } else if (regime == "task2") {
                    train_batch = d2;
                } else {
                    Batch replay = memory.sample_batch(config.replay_batch, mem_rng);
                    train_batch = d2;
                    const int k0 = train_batch.size();
                    train_batch.inputs.conservativeResize(k0 + replay.size(), Eigen::NoChange);
                    train_batch.inputs.bottomRows(replay.size()) = replay.inputs;
                    train_batch.labels.insert(train_batch.labels.end(), replay.labels.begin(),
                                              replay.labels.end());
                    train_batch.task_ids.insert(train_batch.task_ids.end(),
                                                replay.task_ids.begin(), replay.task_ids.end());
                }
                GradientVector grad;
                model.loss_and_grad(train_batch, grad);
                model.sgd_step(grad, config.lr);
                if ((it + 1) % config.curve_log_every == 0 || it + 1 == iters) log_point(it + 1);
            }

            // Accuracy on the memory contents themselves.
            Batch mem_all;
            {
                auto slots = memory.slots();
                mem_all.inputs.resize(slots.size(), stream.input_dim);
                for (int i = 0; i < static_cast<int>(slots.size()); ++i) {
                    mem_all.inputs.row(i) = slots[i]->input.transpose();
                    mem_all.labels.push_back(slots[i]->label);
                    mem_all.task_ids.push_back(slots[i]->task_id);
                }
            }
            Eigen::MatrixXd logits, feats;
            model.forward(mem_all.inputs, mem_all.task_ids, logits, feats);
            int correct = 0;
            for (int i = 0; i < mem_all.size(); ++i) {
                int pred;
                logits.row(i).maxCoeff(&pred);
                if (pred == mem_all.labels[i]) ++correct;
            }
            const double mem_acc = static_cast<double>(correct) / mem_all.size();
            const double final_acc = evaluate(model, task1);
            summary << seed << "," << regime << "," << final_acc << "," << mem_acc << "\n";
            finals[regime].push_back(final_acc);
            mem_accs[regime].push_back(mem_acc);
        }
    }

    std::vector<RotationRegimeResult> out;
    for (const std::string& regime : regimes) {
        RotationRegimeResult r;
        r.regime = regime;
        r.final_task1_test = mean_std(finals[regime]).first;
        r.memory_accuracy = mean_std(mem_accs[regime]).first;
        out.push_back(r);
    }
    return out;
}

double tune(const ExperimentConfig& config, const std::vector<double>& lr_grid) {
    if (lr_grid.empty()) throw std::invalid_argument("tune: empty grid");
    TaskStream stream = build_stream(config);
    if (stream.cv_tasks.empty()) throw std::invalid_argument("tune: stream has no CV tasks");

    fs::create_directories(config.output_dir);
    std::ofstream out(config.output_dir + "/tune.csv");
    out << "lr,mean_accuracy\n";
    out.precision(17);

    double best_lr = lr_grid.front();
    double best_acc = -1.0;
    for (double lr : lr_grid) {
        std::vector<double> accs;
        for (std::uint64_t seed : config.seeds) {
            MlpModel model(stream.input_dim, {256, 256}, stream.classes_per_task,
                           mix_seed(seed, 11));
            ExperimentConfig c = config;
            c.lr = lr;
            Learner learner = make_learner(c);
            Rng rng = make_rng(seed, 22);
            RunConfig rc{config.batch_sz, lr};
            SinglePassResult sp = run_single_pass(stream.cv_tasks, model, learner, rc, rng);
            accs.push_back(average_accuracy(sp.matrix, sp.matrix.tasks()));
        }
        const double mean = mean_std(accs).first;
        out << lr << "," << mean << "\n";
        if (mean > best_acc) {
            best_acc = mean;
            best_lr = lr;
        }
    }
    return best_lr;
}

}  // namespace replay
