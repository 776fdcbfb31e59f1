#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "replay/rng.hpp"

namespace replay {

// One labeled mini-batch. Rows of `inputs` pair with `labels` and
// `task_ids`; a batch may mix examples from several tasks.
struct Batch {
    Eigen::MatrixXd inputs;     // K x input_dim
    std::vector<int> labels;    // K
    std::vector<int> task_ids;  // K

    int size() const { return static_cast<int>(labels.size()); }
    bool empty() const { return labels.empty(); }
};

// Canonical flat parameter/gradient layout: trunk blocks in layer order,
// then one block per classifier head in ascending task-id order. A layout
// lists only the heads actually touched; missing head segments are treated
// as zero when two vectors are combined.
struct GradLayout {
    int trunk_size = 0;
    std::vector<std::pair<int, int>> heads;  // (task_id, segment length), ascending id

    int total() const;
    // Offset of the segment for `task` inside the flat vector, -1 if absent.
    int head_offset(int task) const;
    int head_size(int task) const;
    bool operator==(const GradLayout&) const = default;
};

// Flat gradient (or parameter snapshot) in canonical order.
struct GradientVector {
    Eigen::VectorXd values;
    GradLayout layout;

    Eigen::VectorBlock<Eigen::VectorXd> trunk() { return values.head(layout.trunk_size); }
    Eigen::VectorBlock<const Eigen::VectorXd> trunk() const {
        return values.head(layout.trunk_size);
    }
    bool has_head(int task) const { return layout.head_offset(task) >= 0; }
    Eigen::VectorBlock<Eigen::VectorXd> head(int task);
    Eigen::VectorBlock<const Eigen::VectorXd> head(int task) const;

    bool all_finite() const { return values.allFinite(); }
};

// Segment-aligned dot product; head segments present on one side only
// contribute nothing.
double dot_aligned(const GradientVector& a, const GradientVector& b);

// A-GEM projection: returns g untouched (bitwise) when dot(g, g_ref) >= 0,
// otherwise g - (g.g_ref / g_ref.g_ref) * g_ref over the union layout.
// A zero g_ref leaves g unchanged.
GradientVector project_agem(const GradientVector& g, const GradientVector& g_ref);

struct LinearLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
    int params() const { return static_cast<int>(weight.size() + bias.size()); }
};

// Fully-connected trunk (ReLU hidden layers) with one linear classifier
// head per task id. Heads are created lazily the first time a task is seen.
class MlpModel {
   public:
    MlpModel(int input_dim, std::vector<int> hidden_widths, int classes_per_head,
             std::uint64_t init_seed);

    int input_dim() const { return input_dim_; }
    int feature_dim() const { return hidden_widths_.back(); }
    int classes_per_head() const { return classes_per_head_; }
    int trunk_param_count() const;
    int head_param_count() const;

    bool has_head(int task) const { return heads_.count(task) > 0; }
    void ensure_head(int task);
    std::vector<int> head_ids() const;

    // Logits row k uses the head of task_ids[k]; features are the post-ReLU
    // activations of the last hidden layer.
    void forward(const Eigen::MatrixXd& inputs, const std::vector<int>& task_ids,
                 Eigen::MatrixXd& logits, Eigen::MatrixXd& features) const;

    // Mean softmax cross-entropy over the batch plus the mean gradient in
    // canonical layout (trunk + every head touched by the batch).
    double loss_and_grad(const Batch& batch, GradientVector& grad) const;
    double loss_and_grad(const Batch& batch, GradientVector& grad,
                         Eigen::MatrixXd* features_out) const;

    // p <- p - lr * g for every segment present in grad. Non-finite
    // gradients are refused and leave the model untouched.
    void sgd_step(const GradientVector& grad, double lr);

    // Parameter snapshot over trunk + the given heads (ascending id).
    GradientVector parameters(const std::vector<int>& head_tasks) const;
    void set_parameters(const GradientVector& params);

    const LinearLayer& trunk_layer(int i) const { return trunk_[i]; }
    const LinearLayer& head(int task) const { return heads_.at(task); }

   private:
    LinearLayer glorot_layer(int out, int in, Rng& rng) const;

    int input_dim_;
    std::vector<int> hidden_widths_;
    int classes_per_head_;
    std::vector<LinearLayer> trunk_;
    std::map<int, LinearLayer> heads_;
    mutable Rng head_init_rng_;
};

}  // namespace replay
