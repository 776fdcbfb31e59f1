#pragma once

#include <Eigen/Dense>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "replay/model.hpp"
#include "replay/rng.hpp"

namespace replay {

enum class MemoryPolicy { Reservoir, Ring, KMeans, MoF, Hybrid, RingFull };

struct MemorySlot {
    Eigen::VectorXd input;
    int label = 0;
    int task_id = 0;
    double aux_distance = std::numeric_limits<double>::infinity();
};

// Bounded slot store with a pluggable write policy. All per-class
// bookkeeping is keyed by the (task, class) pair.
class EpisodicMemory {
   public:
    using ClassKey = std::pair<int, int>;  // (task_id, label)

    static EpisodicMemory reservoir(int mem_sz);
    // quota = samples kept per (task, class); capacity = quota * total_classes.
    static EpisodicMemory ring(int quota, int total_classes);
    static EpisodicMemory kmeans(int centroids_per_class, int total_classes);
    static EpisodicMemory mof(int quota, int total_classes, double alpha = 0.9);
    static EpisodicMemory hybrid(int mem_sz);
    // Ring-buffer variant that fills the whole budget from the start by
    // shrinking per-class quotas as new classes arrive (the hybrid
    // post-switch discipline applied from step one).
    static EpisodicMemory ring_full(int mem_sz);

    MemoryPolicy policy() const { return policy_; }
    int capacity() const { return capacity_; }
    int size() const;
    long long seen() const { return n_seen_; }
    bool empty() const { return size() == 0; }

    // Dispatches to the policy's writer. `n` is the stream count observed
    // before this batch; `features` (one row per batch item) is required
    // for the k-Means and MoF policies and ignored otherwise.
    void update(int task, long long n, const Batch& batch, const Eigen::MatrixXd* features,
                Rng& rng);

    void update_reservoir(int task, long long n, const Batch& batch, Rng& rng);
    void update_ring(int task, const Batch& batch);
    void update_kmeans(int task, const Batch& batch, const Eigen::MatrixXd& features);
    void update_mof(int task, const Batch& batch, const Eigen::MatrixXd& features);
    void update_hybrid(int task, long long n, const Batch& batch, Rng& rng);
    void update_ring_full(int task, const Batch& batch);

    // k distinct slots when |slots| >= k, k draws with replacement when
    // 0 < |slots| < k, empty batch when the memory is empty.
    Batch sample_batch(int k, Rng& rng) const;

    std::vector<const MemorySlot*> slots() const;
    // Slot count currently held for one (task, class).
    int class_count(int task, int label) const;

    // Index in the stream (count of update calls) at which the hybrid
    // policy switched to ring mode; empty while in reservoir mode.
    std::optional<long long> hybrid_switch_index() const { return switch_index_; }
    bool hybrid_in_ring_mode() const { return hybrid_ring_mode_; }

    // Introspection for debugging: j-th centroid of a (task, class) group,
    // and the MoF running feature mean.
    const Eigen::VectorXd& kmeans_centroid(int task, int label, int j) const;
    const Eigen::VectorXd& mof_mean(int task, int label) const;

    nlohmann::json to_json() const;

   private:
    EpisodicMemory() = default;
    void hybrid_check_switch(Rng& rng);
    void ring_full_insert(int task, int label, const Eigen::VectorXd& input);

    MemoryPolicy policy_ = MemoryPolicy::Reservoir;
    int capacity_ = 0;
    int quota_ = 0;  // per-class (ring/kmeans/mof)
    double mof_alpha_ = 0.9;
    long long n_seen_ = 0;
    long long update_calls_ = 0;

    // Reservoir / hybrid-reservoir storage.
    std::vector<MemorySlot> flat_;

    // Per-class FIFO storage (ring, hybrid post-switch, ring_full).
    std::map<ClassKey, std::deque<MemorySlot>> fifos_;

    struct KMeansClass {
        std::vector<Eigen::VectorXd> centroids;
        std::vector<long long> counts;
        std::vector<std::optional<MemorySlot>> stored;
    };
    std::map<ClassKey, KMeansClass> kmeans_;

    struct MofClass {
        Eigen::VectorXd mean;
        bool initialized = false;
        std::vector<MemorySlot> heap;  // max-heap on aux_distance
    };
    std::map<ClassKey, MofClass> mof_;

    // Hybrid bookkeeping.
    bool hybrid_ring_mode_ = false;
    std::optional<long long> switch_index_;
    std::map<ClassKey, bool> observed_before_;  // classes seen in past update calls
};

}  // namespace replay
