#include "replay/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace replay {

int GradLayout::total() const {
    int n = trunk_size;
    for (const auto& [id, sz] : heads) n += sz;
    return n;
}

int GradLayout::head_offset(int task) const {
    int off = trunk_size;
    for (const auto& [id, sz] : heads) {
        if (id == task) return off;
        off += sz;
    }
    return -1;
}

int GradLayout::head_size(int task) const {
    for (const auto& [id, sz] : heads)
        if (id == task) return sz;
    return 0;
}

Eigen::VectorBlock<Eigen::VectorXd> GradientVector::head(int task) {
    int off = layout.head_offset(task);
    if (off < 0) throw std::invalid_argument("GradientVector: no segment for task");
    return values.segment(off, layout.head_size(task));
}

Eigen::VectorBlock<const Eigen::VectorXd> GradientVector::head(int task) const {
    int off = layout.head_offset(task);
    if (off < 0) throw std::invalid_argument("GradientVector: no segment for task");
    return values.segment(off, layout.head_size(task));
}

double dot_aligned(const GradientVector& a, const GradientVector& b) {
    if (a.layout.trunk_size != b.layout.trunk_size)
        throw std::invalid_argument("dot_aligned: trunk size mismatch");
    double d = a.trunk().dot(b.trunk());
    for (const auto& [id, sz] : a.layout.heads) {
        int off_b = b.layout.head_offset(id);
        if (off_b < 0) continue;
        if (b.layout.head_size(id) != sz)
            throw std::invalid_argument("dot_aligned: head size mismatch");
        d += a.head(id).dot(b.head(id));
    }
    return d;
}

namespace {

GradientVector expand_to(const GradientVector& g, const GradLayout& layout) {
    GradientVector out;
    out.layout = layout;
    out.values = Eigen::VectorXd::Zero(layout.total());
    out.trunk() = g.trunk();
    for (const auto& [id, sz] : g.layout.heads) out.head(id) = g.head(id);
    return out;
}

}  // namespace

GradientVector project_agem(const GradientVector& g, const GradientVector& g_ref) {
    double dot = dot_aligned(g, g_ref);
    if (dot >= 0.0) return g;
    double den = dot_aligned(g_ref, g_ref);
    if (den == 0.0) return g;  // vacuous constraint

    GradLayout layout;
    layout.trunk_size = g.layout.trunk_size;
    std::set<std::pair<int, int>> ids(g.layout.heads.begin(), g.layout.heads.end());
    ids.insert(g_ref.layout.heads.begin(), g_ref.layout.heads.end());
    for (const auto& h : ids) layout.heads.push_back(h);

    GradientVector out = expand_to(g, layout);
    GradientVector ref = expand_to(g_ref, layout);
    out.values -= (dot / den) * ref.values;
    return out;
}

MlpModel::MlpModel(int input_dim, std::vector<int> hidden_widths, int classes_per_head,
                   std::uint64_t init_seed)
    : input_dim_(input_dim),
      hidden_widths_(std::move(hidden_widths)),
      classes_per_head_(classes_per_head),
      head_init_rng_(make_rng(init_seed, 1)) {
    if (input_dim <= 0 || hidden_widths_.empty() || classes_per_head <= 0)
        throw std::invalid_argument("MlpModel: invalid dimensions");
    Rng rng = make_rng(init_seed, 0);
    int in = input_dim_;
    for (int w : hidden_widths_) {
        trunk_.push_back(glorot_layer(w, in, rng));
        in = w;
    }
}

LinearLayer MlpModel::glorot_layer(int out, int in, Rng& rng) const {
    double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    LinearLayer layer;
    layer.weight.resize(out, in);
    for (int i = 0; i < out; ++i)
        for (int j = 0; j < in; ++j) layer.weight(i, j) = dist(rng);
    layer.bias = Eigen::VectorXd::Zero(out);
    return layer;
}

int MlpModel::trunk_param_count() const {
    int n = 0;
    for (const auto& l : trunk_) n += l.params();
    return n;
}

int MlpModel::head_param_count() const {
    return classes_per_head_ * (feature_dim() + 1);
}

void MlpModel::ensure_head(int task) {
    if (heads_.count(task)) return;
    heads_.emplace(task, glorot_layer(classes_per_head_, feature_dim(), head_init_rng_));
}

std::vector<int> MlpModel::head_ids() const {
    std::vector<int> ids;
    for (const auto& [id, h] : heads_) ids.push_back(id);
    return ids;
}

void MlpModel::forward(const Eigen::MatrixXd& inputs, const std::vector<int>& task_ids,
                       Eigen::MatrixXd& logits, Eigen::MatrixXd& features) const {
    const int k = static_cast<int>(inputs.rows());
    if (inputs.cols() != input_dim_)
        throw std::invalid_argument("forward: input width does not match input_dim");
    if (static_cast<int>(task_ids.size()) != k)
        throw std::invalid_argument("forward: task_ids size mismatch");

    Eigen::MatrixXd act = inputs;
    for (const auto& l : trunk_)
        act = ((act * l.weight.transpose()).rowwise() + l.bias.transpose()).cwiseMax(0.0);
    features = act;

    logits.resize(k, classes_per_head_);
    // Group rows by head to keep the per-head products batched.
    std::map<int, std::vector<int>> by_task;
    for (int i = 0; i < k; ++i) by_task[task_ids[i]].push_back(i);
    for (const auto& [task, rows] : by_task) {
        auto it = heads_.find(task);
        if (it == heads_.end())
            throw std::invalid_argument("forward: no head for task " + std::to_string(task));
        const LinearLayer& h = it->second;
        if (static_cast<int>(rows.size()) == k) {
            logits = (features * h.weight.transpose()).rowwise() + h.bias.transpose();
        } else {
            const int m = static_cast<int>(rows.size());
            Eigen::MatrixXd f(m, feature_dim());
            for (int r = 0; r < m; ++r) f.row(r) = features.row(rows[r]);
            Eigen::MatrixXd z = (f * h.weight.transpose()).rowwise() + h.bias.transpose();
            for (int r = 0; r < m; ++r) logits.row(rows[r]) = z.row(r);
        }
    }
}

double MlpModel::loss_and_grad(const Batch& batch, GradientVector& grad) const {
    return loss_and_grad(batch, grad, nullptr);
}

double MlpModel::loss_and_grad(const Batch& batch, GradientVector& grad,
                               Eigen::MatrixXd* features_out) const {
    const int k = batch.size();
    if (k < 1) throw std::invalid_argument("loss_and_grad: empty batch");
    if (batch.inputs.cols() != input_dim_)
        throw std::invalid_argument("loss_and_grad: input width mismatch");

    // Forward, keeping pre-activations for the backward pass.
    std::vector<Eigen::MatrixXd> acts;  // acts[0] = inputs, acts[i] = ReLU output of layer i
    std::vector<Eigen::MatrixXd> preacts;
    acts.push_back(batch.inputs);
    for (const auto& l : trunk_) {
        preacts.push_back((acts.back() * l.weight.transpose()).rowwise() + l.bias.transpose());
        acts.push_back(preacts.back().cwiseMax(0.0));
    }
    const Eigen::MatrixXd& feats = acts.back();
    if (features_out) *features_out = feats;

    std::map<int, std::vector<int>> by_task;
    for (int i = 0; i < k; ++i) {
        if (batch.labels[i] < 0 || batch.labels[i] >= classes_per_head_)
            throw std::out_of_range("loss_and_grad: label out of range for head");
        by_task[batch.task_ids[i]].push_back(i);
    }

    GradLayout layout;
    layout.trunk_size = trunk_param_count();
    for (const auto& [task, rows] : by_task) layout.heads.emplace_back(task, head_param_count());
    grad.layout = layout;
    grad.values = Eigen::VectorXd::Zero(layout.total());

    double loss = 0.0;
    Eigen::MatrixXd d_feats = Eigen::MatrixXd::Zero(k, feature_dim());
    for (const auto& [task, rows] : by_task) {
        auto it = heads_.find(task);
        if (it == heads_.end())
            throw std::invalid_argument("loss_and_grad: no head for task " + std::to_string(task));
        const LinearLayer& h = it->second;

        const int m = static_cast<int>(rows.size());
        Eigen::MatrixXd f(m, feature_dim());
        for (int r = 0; r < m; ++r) f.row(r) = feats.row(rows[r]);
        Eigen::MatrixXd z = (f * h.weight.transpose()).rowwise() + h.bias.transpose();

        // Softmax cross-entropy; d = (p - onehot) / K.
        Eigen::MatrixXd d(m, classes_per_head_);
        for (int r = 0; r < m; ++r) {
            Eigen::VectorXd row = z.row(r);
            double zmax = row.maxCoeff();
            Eigen::VectorXd e = (row.array() - zmax).exp();
            double denom = e.sum();
            loss += -(row(batch.labels[rows[r]]) - zmax - std::log(denom));
            d.row(r) = (e / denom).transpose();
            d(r, batch.labels[rows[r]]) -= 1.0;
        }
        d /= static_cast<double>(k);

        Eigen::MatrixXd g_w = d.transpose() * f;
        Eigen::VectorXd g_b = d.colwise().sum();
        auto seg = grad.head(task);
        seg.head(g_w.size()) = Eigen::Map<const Eigen::VectorXd>(g_w.data(), g_w.size());
        seg.tail(g_b.size()) = g_b;

        Eigen::MatrixXd df = d * h.weight;
        for (int r = 0; r < m; ++r) d_feats.row(rows[r]) = df.row(r);
    }
    loss /= static_cast<double>(k);

    // Backward through the trunk.
    Eigen::MatrixXd delta = d_feats;
    int offset = layout.trunk_size;
    for (int li = static_cast<int>(trunk_.size()) - 1; li >= 0; --li) {
        delta = delta.cwiseProduct((preacts[li].array() > 0.0).cast<double>().matrix());
        Eigen::MatrixXd g_w = delta.transpose() * acts[li];
        Eigen::VectorXd g_b = delta.colwise().sum();
        offset -= trunk_[li].params();
        grad.values.segment(offset, g_w.size()) =
            Eigen::Map<const Eigen::VectorXd>(g_w.data(), g_w.size());
        grad.values.segment(offset + g_w.size(), g_b.size()) = g_b;
        if (li > 0) delta = delta * trunk_[li].weight;
    }
    return loss;
}

void MlpModel::sgd_step(const GradientVector& grad, double lr) {
    if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be positive");
    if (grad.layout.trunk_size != trunk_param_count())
        throw std::invalid_argument("sgd_step: layout does not match model");
    if (!grad.all_finite()) throw std::runtime_error("sgd_step: non-finite gradient, step refused");

    int offset = 0;
    for (auto& l : trunk_) {
        Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) -=
            lr * grad.values.segment(offset, l.weight.size());
        offset += static_cast<int>(l.weight.size());
        l.bias -= lr * grad.values.segment(offset, l.bias.size());
        offset += static_cast<int>(l.bias.size());
    }
    for (const auto& [task, sz] : grad.layout.heads) {
        auto it = heads_.find(task);
        if (it == heads_.end())
            throw std::invalid_argument("sgd_step: no head for task " + std::to_string(task));
        LinearLayer& h = it->second;
        auto seg = grad.head(task);
        Eigen::Map<Eigen::VectorXd>(h.weight.data(), h.weight.size()) -=
            lr * seg.head(h.weight.size());
        h.bias -= lr * seg.tail(h.bias.size());
    }
}

GradientVector MlpModel::parameters(const std::vector<int>& head_tasks) const {
    GradLayout layout;
    layout.trunk_size = trunk_param_count();
    std::vector<int> sorted = head_tasks;
    std::sort(sorted.begin(), sorted.end());
    for (int t : sorted) layout.heads.emplace_back(t, head_param_count());

    GradientVector out;
    out.layout = layout;
    out.values.resize(layout.total());
    int offset = 0;
    for (const auto& l : trunk_) {
        out.values.segment(offset, l.weight.size()) =
            Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
        offset += static_cast<int>(l.weight.size());
        out.values.segment(offset, l.bias.size()) = l.bias;
        offset += static_cast<int>(l.bias.size());
    }
    for (int t : sorted) {
        const LinearLayer& h = heads_.at(t);
        auto seg = out.head(t);
        seg.head(h.weight.size()) =
            Eigen::Map<const Eigen::VectorXd>(h.weight.data(), h.weight.size());
        seg.tail(h.bias.size()) = h.bias;
    }
    return out;
}

void MlpModel::set_parameters(const GradientVector& params) {
    if (params.layout.trunk_size != trunk_param_count())
        throw std::invalid_argument("set_parameters: layout mismatch");
    int offset = 0;
    for (auto& l : trunk_) {
        Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) =
            params.values.segment(offset, l.weight.size());
        offset += static_cast<int>(l.weight.size());
        l.bias = params.values.segment(offset, l.bias.size());
        offset += static_cast<int>(l.bias.size());
    }
    for (const auto& [task, sz] : params.layout.heads) {
        ensure_head(task);
        LinearLayer& h = heads_.at(task);
        auto seg = params.head(task);
        Eigen::Map<Eigen::VectorXd>(h.weight.data(), h.weight.size()) = seg.head(h.weight.size());
        h.bias = seg.tail(h.bias.size());
    }
}

}  // namespace replay
