#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "replay/data.hpp"
#include "replay/learner.hpp"
#include "replay/protocol.hpp"

namespace replay {

enum class RecipeKind { PermutedMnist, RotatedMnistPair, SyntheticGaussian };

struct ExperimentConfig {
    RecipeKind recipe_kind = RecipeKind::PermutedMnist;
    PermutedMnistRecipe permuted;
    RotatedMnistPairRecipe rotation;
    SyntheticGaussianRecipe synthetic;

    LearnerKind learner = LearnerKind::ER;
    std::string policy = "ring";  // reservoir|ring|kmeans|mof|hybrid|ringfull|none
    int samples_per_class = 1;
    double lr = 0.1;
    int batch_sz = 10;
    int replay_batch = 10;
    double ewc_lambda = 10.0;
    double fisher_decay = 0.9;
    double mof_alpha = 0.9;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::string output_dir = "results";
    std::string data_dir;         // falls back to REPLAYLAB_DATA_DIR
    int curve_log_every = 50;     // rotation-analysis eval cadence (iterations)

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
    void validate() const;

    // Distinct (task, class) pairs across the EV stream.
    int total_classes() const;
};

struct SeedResult {
    std::uint64_t seed = 0;
    AccuracyMatrix matrix;
    double avg_accuracy = 0.0;  // A_T
    double fgt = 0.0;           // F_T (0 when T == 1)
    std::vector<double> a_k;
    std::optional<long long> hybrid_switch;
    double wall_seconds = 0.0;
};

struct RunResult {
    std::vector<SeedResult> per_seed;
    double mean_accuracy = 0.0, std_accuracy = 0.0;
    double mean_forgetting = 0.0, std_forgetting = 0.0;
};

TaskStream build_stream(const ExperimentConfig& config);
EpisodicMemory make_memory(const ExperimentConfig& config);
Learner make_learner(const ExperimentConfig& config);

// One run_single_pass per seed; writes results.json, matrix_<seed>.csv and
// summary.csv into output_dir.
RunResult run_benchmark(const ExperimentConfig& config);

// Same seeds per stream under ER for reservoir, ring and hybrid; writes
// per-task A_k trajectories plus the hybrid switch index per seed.
void run_hybrid_curve(const ExperimentConfig& config);

struct RotationRegimeResult {
    std::string regime;  // "memory", "task2", "task2+memory"
    double final_task1_test = 0.0;
    double memory_accuracy = 0.0;
};

// Trains task 1 under ER, then replays task 2 under three regimes
// (memory-only, task2-only, task2 plus frozen memory), logging task-1 test
// accuracy every curve_log_every iterations to curves.csv.
std::vector<RotationRegimeResult> run_rotation_analysis(const ExperimentConfig& config);

// Grid search over learning rates on the CV stream; returns the best lr and
// writes tune.csv.
double tune(const ExperimentConfig& config, const std::vector<double>& lr_grid);

}  // namespace replay
