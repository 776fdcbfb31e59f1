#include "replay/protocol.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace replay {

Batch TaskSplit::materialize(const std::vector<int>& subset, int task_id) const {
    const int d = static_cast<int>(data->cols());
    Batch out;
    out.inputs.resize(subset.size(), d);
    out.labels.resize(subset.size());
    out.task_ids.assign(subset.size(), task_id);
    for (int r = 0; r < static_cast<int>(subset.size()); ++r) {
        const int src = rows.at(subset[r]);
        if (pixel_perm.empty()) {
            out.inputs.row(r) = data->row(src);
        } else {
            for (int c = 0; c < d; ++c) out.inputs(r, c) = (*data)(src, pixel_perm[c]);
        }
        out.labels[r] = (*labels)[src];
    }
    return out;
}

Batch TaskSplit::materialize_all(int task_id) const {
    std::vector<int> all(rows.size());
    std::iota(all.begin(), all.end(), 0);
    return materialize(all, task_id);
}

void AccuracyMatrix::append_row(std::vector<double> row) {
    if (static_cast<int>(row.size()) != tasks() + 1)
        throw std::invalid_argument("AccuracyMatrix: row length must equal its index");
    for (double a : row)
        if (a < 0.0 || a > 1.0) throw std::invalid_argument("AccuracyMatrix: entry outside [0,1]");
    rows_.push_back(std::move(row));
}

double AccuracyMatrix::at(int i, int j) const {
    if (i < 1 || i > tasks() || j < 1 || j > i)
        throw std::out_of_range("AccuracyMatrix: index outside lower triangle");
    return rows_[i - 1][j - 1];
}

std::string AccuracyMatrix::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    const int t = tasks();
    for (int i = 1; i <= t; ++i) {
        for (int j = 1; j <= t; ++j) {
            if (j > 1) out << ",";
            if (j <= i) out << at(i, j);
        }
        out << "\n";
    }
    return out.str();
}

double average_accuracy(const AccuracyMatrix& m, int T) {
    if (T < 1 || T > m.tasks()) throw std::out_of_range("average_accuracy: row not recorded");
    double s = 0.0;
    for (int j = 1; j <= T; ++j) s += m.at(T, j);
    return s / T;
}

double forgetting(const AccuracyMatrix& m, int T) {
    if (T < 2) throw std::invalid_argument("forgetting: undefined for T < 2");
    if (T > m.tasks()) throw std::out_of_range("forgetting: row not recorded");
    double s = 0.0;
    for (int j = 1; j <= T - 1; ++j) {
        double best = m.at(j, j);
        for (int l = j; l <= T - 1; ++l) best = std::max(best, m.at(l, j));
        s += best - m.at(T, j);
    }
    return s / (T - 1);
}

double evaluate(const MlpModel& model, const TaskData& task) {
    const int n = task.test.size();
    if (n == 0) throw std::invalid_argument("evaluate: empty test set");
    constexpr int kChunk = 2000;
    int correct = 0;
    for (int start = 0; start < n; start += kChunk) {
        const int m = std::min(kChunk, n - start);
        std::vector<int> subset(m);
        std::iota(subset.begin(), subset.end(), start);
        Batch b = task.test.materialize(subset, task.task_id);
        Eigen::MatrixXd logits, feats;
        model.forward(b.inputs, b.task_ids, logits, feats);
        for (int r = 0; r < m; ++r) {
            int pred;
            logits.row(r).maxCoeff(&pred);
            if (pred == b.labels[r]) ++correct;
        }
    }
    return static_cast<double>(correct) / n;
}

SinglePassResult run_single_pass(const std::vector<TaskData>& ev_tasks, MlpModel& model,
                                 Learner& learner, const RunConfig& config, Rng& rng) {
    if (config.batch_sz < 1) throw std::invalid_argument("run_single_pass: invalid batch size");
    SinglePassResult result;
    for (int i = 0; i < static_cast<int>(ev_tasks.size()); ++i) {
        const TaskData& task = ev_tasks[i];
        const int n = task.train.size();
        if (n == 0)
            throw std::invalid_argument("run_single_pass: empty train set for task " +
                                        std::to_string(task.task_id));
        model.ensure_head(task.task_id);

        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        for (int start = 0; start < n; start += config.batch_sz) {
            const int m = std::min(config.batch_sz, n - start);
            std::vector<int> subset(order.begin() + start, order.begin() + start + m);
            Batch batch = task.train.materialize(subset, task.task_id);
            learner.observe_batch(model, task.task_id, batch, config.lr, rng);
        }
        learner.on_task_boundary(model, task.task_id);

        std::vector<double> row;
        for (int j = 0; j <= i; ++j) row.push_back(evaluate(model, ev_tasks[j]));
        result.matrix.append_row(std::move(row));
        result.avg_accuracy_after_task.push_back(average_accuracy(result.matrix, i + 1));
    }
    return result;
}

}  // namespace replay
