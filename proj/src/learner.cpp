#include "replay/learner.hpp"

#include <algorithm>
#include <stdexcept>

namespace replay {

namespace {

Batch concat(const Batch& a, const Batch& b) {
    Batch out;
    out.inputs.resize(a.size() + b.size(), a.inputs.cols());
    out.inputs.topRows(a.size()) = a.inputs;
    out.inputs.bottomRows(b.size()) = b.inputs;
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.task_ids = a.task_ids;
    out.task_ids.insert(out.task_ids.end(), b.task_ids.begin(), b.task_ids.end());
    return out;
}

// a += c * b over aligned segments; b segments absent from a are ignored
// (callers arrange the union layout first when that matters).
void add_scaled_aligned(GradientVector& a, const GradientVector& b, double c) {
    a.trunk() += c * b.trunk();
    for (const auto& [id, sz] : b.layout.heads)
        if (a.has_head(id)) a.head(id) += c * b.head(id);
}

}  // namespace

Learner::Learner(LearnerConfig config, std::optional<EpisodicMemory> memory)
    : config_(config), memory_(std::move(memory)) {
    if ((config_.kind == LearnerKind::ER || config_.kind == LearnerKind::AGEM) && !memory_)
        throw std::invalid_argument("ER/A-GEM require an episodic memory");
    if (config_.kind == LearnerKind::EWC && config_.ewc_lambda < 0.0)
        throw std::invalid_argument("EWC lambda must be non-negative");
}

double Learner::observe_batch(MlpModel& model, int task, const Batch& batch, double lr, Rng& rng) {
    if (batch.empty()) throw std::invalid_argument("observe_batch: empty batch");
    for (int t : batch.task_ids) model.ensure_head(t);

    double loss = 0.0;
    GradientVector grad;
    switch (config_.kind) {
        case LearnerKind::Finetune: {
            loss = model.loss_and_grad(batch, grad);
            model.sgd_step(grad, lr);
            break;
        }
        case LearnerKind::ER: {
            Batch replay = memory_->sample_batch(config_.replay_batch, rng);
            if (replay.empty()) {
                loss = model.loss_and_grad(batch, grad);
            } else {
                loss = model.loss_and_grad(concat(batch, replay), grad);
            }
            model.sgd_step(grad, lr);
            update_memory(model, task, batch, rng);
            n_seen_ += batch.size();
            break;
        }
        case LearnerKind::AGEM: {
            loss = model.loss_and_grad(batch, grad);
            Batch replay = memory_->sample_batch(config_.replay_batch, rng);
            if (replay.empty()) {
                model.sgd_step(grad, lr);
            } else {
                GradientVector g_ref;
                model.loss_and_grad(replay, g_ref);
                model.sgd_step(project_agem(grad, g_ref), lr);
            }
            update_memory(model, task, batch, rng);
            n_seen_ += batch.size();
            break;
        }
        case LearnerKind::EWC: {
            loss = model.loss_and_grad(batch, grad);

            GradientVector step = grad;
            GradientVector penalty = ewc_penalty(model, task);
            add_scaled_aligned(step, penalty, 1.0);
            model.sgd_step(step, lr);

            // Moving-average diagonal Fisher from the data gradient taken
            // at the pre-step parameters.
            if (!fisher_init_) {
                fisher_.layout = grad.layout;
                fisher_.values = Eigen::VectorXd::Zero(grad.values.size());
                fisher_init_ = true;
            } else {
                for (const auto& [id, sz] : grad.layout.heads) {
                    if (fisher_.has_head(id)) continue;
                    GradientVector old = fisher_;
                    fisher_.layout.heads.emplace_back(id, sz);
                    std::sort(fisher_.layout.heads.begin(), fisher_.layout.heads.end());
                    fisher_.values = Eigen::VectorXd::Zero(fisher_.layout.total());
                    fisher_.trunk() = old.trunk();
                    for (const auto& [hid, hsz] : old.layout.heads)
                        fisher_.head(hid) = old.head(hid);
                }
            }
            fisher_.values *= config_.fisher_decay;
            GradientVector sq = grad;
            sq.values = grad.values.array().square();
            add_scaled_aligned(fisher_, sq, 1.0 - config_.fisher_decay);
            break;
        }
    }
    return loss;
}

void Learner::on_task_boundary(const MlpModel& model, int task) {
    if (config_.kind != LearnerKind::EWC) return;
    anchor_ = model.parameters(model.head_ids());
    has_anchor_ = true;
}

GradientVector Learner::ewc_penalty(const MlpModel& model, int task) const {
    GradientVector pen;
    pen.layout.trunk_size = model.trunk_param_count();
    pen.layout.heads.emplace_back(task, model.head_param_count());
    pen.values = Eigen::VectorXd::Zero(pen.layout.total());
    if (!has_anchor_ || !fisher_init_ || config_.ewc_lambda == 0.0) return pen;

    GradientVector theta = model.parameters({task});
    pen.trunk() = config_.ewc_lambda *
                  fisher_.trunk().cwiseProduct(theta.trunk() - anchor_.trunk());
    if (fisher_.has_head(task) && anchor_.has_head(task))
        pen.head(task) = config_.ewc_lambda *
                         fisher_.head(task).cwiseProduct(theta.head(task) - anchor_.head(task));
    return pen;
}

void Learner::update_memory(MlpModel& model, int task, const Batch& batch, Rng& rng) {
    MemoryPolicy policy = memory_->policy();
    if (policy == MemoryPolicy::KMeans || policy == MemoryPolicy::MoF) {
        Eigen::MatrixXd logits, feats;
        model.forward(batch.inputs, batch.task_ids, logits, feats);
        memory_->update(task, n_seen_, batch, &feats, rng);
    } else {
        memory_->update(task, n_seen_, batch, nullptr, rng);
    }
}

}  // namespace replay
