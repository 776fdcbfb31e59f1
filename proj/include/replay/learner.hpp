#pragma once

#include <optional>

#include "replay/memory.hpp"
#include "replay/model.hpp"

namespace replay {

enum class LearnerKind { Finetune, ER, AGEM, EWC };

struct LearnerConfig {
    LearnerKind kind = LearnerKind::Finetune;
    int replay_batch = 10;       // |B_M|, fixed regardless of memory size
    double ewc_lambda = 10.0;
    double fisher_decay = 0.9;
};

// One training strategy over a shared model. ER and A-GEM own an episodic
// memory; EWC owns a running Fisher estimate and an anchor refreshed at
// task boundaries.
class Learner {
   public:
    Learner(LearnerConfig config, std::optional<EpisodicMemory> memory);

    const LearnerConfig& config() const { return config_; }
    bool has_memory() const { return memory_.has_value(); }
    const EpisodicMemory& memory() const { return *memory_; }
    EpisodicMemory& memory() { return *memory_; }
    long long examples_seen() const { return n_seen_; }
    bool has_anchor() const { return has_anchor_; }
    const GradientVector& fisher() const { return fisher_; }

    // Processes one current-task mini-batch: gradient step per the
    // strategy, then the memory/Fisher bookkeeping. Returns the data loss.
    double observe_batch(MlpModel& model, int task, const Batch& batch, double lr, Rng& rng);

    // EWC consolidates the anchor here; the other strategies are no-ops.
    void on_task_boundary(const MlpModel& model, int task);

    // EWC penalty gradient lambda * fisher (.) (theta - anchor) over trunk +
    // current head; zero before the first consolidation.
    GradientVector ewc_penalty(const MlpModel& model, int task) const;

   private:
    void update_memory(MlpModel& model, int task, const Batch& batch, Rng& rng);

    LearnerConfig config_;
    std::optional<EpisodicMemory> memory_;
    long long n_seen_ = 0;

    // EWC state: diagonal Fisher as a moving average, consolidated anchor.
    GradientVector fisher_;
    GradientVector anchor_;
    bool fisher_init_ = false;
    bool has_anchor_ = false;
};

}  // namespace replay
