#pragma once

#include <memory>
#include <string>
#include <vector>

#include "replay/learner.hpp"
#include "replay/model.hpp"

namespace replay {

// A view over shared source rows; batches are materialized on demand so a
// 20-task permuted stream never copies the base dataset per task.
struct TaskSplit {
    std::shared_ptr<const Eigen::MatrixXd> data;       // source rows, N x D
    std::shared_ptr<const std::vector<int>> labels;    // N
    std::vector<int> rows;                             // row indices into data
    std::vector<int> pixel_perm;                       // empty = identity

    int size() const { return static_cast<int>(rows.size()); }
    // `subset` indexes into `rows`.
    Batch materialize(const std::vector<int>& subset, int task_id) const;
    Batch materialize_all(int task_id) const;
};

struct TaskData {
    int task_id = 0;
    TaskSplit train;
    TaskSplit test;
    std::vector<int> classes;
};

struct TaskStream {
    std::vector<TaskData> cv_tasks;  // task ids -T_cv .. -1
    std::vector<TaskData> ev_tasks;  // task ids 1 .. T
    int input_dim = 0;
    int classes_per_task = 0;
};

// Lower-triangular record: entry(i, j) is test accuracy on task j after
// training task i (1-based, j <= i).
class AccuracyMatrix {
   public:
    void append_row(std::vector<double> row);
    int tasks() const { return static_cast<int>(rows_.size()); }
    double at(int i, int j) const;  // 1-based
    const std::vector<double>& row(int i) const { return rows_.at(i - 1); }
    std::string to_csv() const;
    bool operator==(const AccuracyMatrix&) const = default;

   private:
    std::vector<std::vector<double>> rows_;
};

// Eq. 1: mean of row T.
double average_accuracy(const AccuracyMatrix& m, int T);
// Eqs. 2-3: mean over past tasks of best-ever minus final accuracy.
double forgetting(const AccuracyMatrix& m, int T);

// Fraction of test examples whose argmax logit matches the label.
double evaluate(const MlpModel& model, const TaskData& task);

struct RunConfig {
    int batch_sz = 10;
    double lr = 0.1;
};

struct SinglePassResult {
    AccuracyMatrix matrix;
    std::vector<double> avg_accuracy_after_task;  // A_k trajectory
};

// One pass over the EV tasks in order: seeded shuffle per task, disjoint
// mini-batches (final short batch included), boundary hook, then a row of
// evaluations over all tasks seen so far.
SinglePassResult run_single_pass(const std::vector<TaskData>& ev_tasks, MlpModel& model,
                                 Learner& learner, const RunConfig& config, Rng& rng);

}  // namespace replay
