#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "replay/experiment.hpp"

namespace {

using replay::ExperimentConfig;

struct Overrides {
    std::string config_path;
    std::string recipe;
    std::string learner;
    std::string policy;
    std::string output_dir;
    std::string data_dir;
    std::vector<std::uint64_t> seeds;
    double lr = -1.0;
    int spc = -1;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "JSON config file");
    cmd->add_option("--recipe", o.recipe, "permuted-mnist|rotated-pair|synthetic");
    cmd->add_option("--learner", o.learner, "finetune|er|agem|ewc");
    cmd->add_option("--policy", o.policy,
                    "reservoir|ring|kmeans|mof|hybrid|ringfull|none");
    cmd->add_option("--spc", o.spc, "memory samples per class");
    cmd->add_option("--lr", o.lr, "learning rate");
    cmd->add_option("--seeds", o.seeds, "seed list");
    cmd->add_option("--output", o.output_dir, "output directory");
    cmd->add_option("--data-dir", o.data_dir,
                    "MNIST IDX directory (default: $REPLAYLAB_DATA_DIR)");
}

ExperimentConfig build_config(const Overrides& o) {
    nlohmann::json j = nlohmann::json::object();
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in) throw std::runtime_error("cannot open config " + o.config_path);
        in >> j;
    }
    if (!o.recipe.empty()) j["recipe"]["kind"] = o.recipe;
    if (!o.learner.empty()) j["learner"] = o.learner;
    if (!o.policy.empty()) j["policy"] = o.policy;
    if (o.spc >= 0) j["samples_per_class"] = o.spc;
    if (o.lr > 0.0) j["lr"] = o.lr;
    if (!o.seeds.empty()) j["seeds"] = o.seeds;
    if (!o.output_dir.empty()) j["output_dir"] = o.output_dir;
    if (!o.data_dir.empty()) j["data_dir"] = o.data_dir;
    return ExperimentConfig::from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual-learning benchmarks with tiny episodic memories"};
    app.require_subcommand(1);

    Overrides o;
    std::vector<double> lr_grid = {0.003, 0.01, 0.03, 0.1, 0.3, 1.0};

    CLI::App* bench = app.add_subcommand("benchmark", "single-pass task stream benchmark");
    add_common(bench, o);
    CLI::App* rot = app.add_subcommand("rotation-analysis",
                                       "task-1 accuracy curves while training task 2");
    add_common(rot, o);
    CLI::App* hyb =
        app.add_subcommand("hybrid-curve", "reservoir vs ring vs hybrid ER trajectories");
    add_common(hyb, o);
    CLI::App* tun = app.add_subcommand("tune", "learning-rate grid search on CV tasks");
    add_common(tun, o);
    tun->add_option("--grid", lr_grid, "learning rates to try");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig config = build_config(o);
        if (bench->parsed()) {
            replay::RunResult r = replay::run_benchmark(config);
            std::printf("avg_accuracy %.4f +- %.4f  forgetting %.4f +- %.4f  (%zu seeds)\n",
                        r.mean_accuracy, r.std_accuracy, r.mean_forgetting, r.std_forgetting,
                        r.per_seed.size());
        } else if (rot->parsed()) {
            if (o.recipe.empty() && o.config_path.empty())
                config.recipe_kind = replay::RecipeKind::RotatedMnistPair;
            for (const auto& r : replay::run_rotation_analysis(config))
                std::printf("%-13s task1_test %.4f  memory_acc %.4f\n", r.regime.c_str(),
                            r.final_task1_test, r.memory_accuracy);
        } else if (hyb->parsed()) {
            replay::run_hybrid_curve(config);
            std::printf("wrote %s/hybrid_curve.csv\n", config.output_dir.c_str());
        } else if (tun->parsed()) {
            double best = replay::tune(config, lr_grid);
            std::printf("best lr %g\n", best);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
