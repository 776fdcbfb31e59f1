#include "replay/memory.hpp"

#include <algorithm>
#include <stdexcept>

namespace replay {

EpisodicMemory EpisodicMemory::reservoir(int mem_sz) {
    if (mem_sz < 1) throw std::invalid_argument("memory capacity must be positive");
    EpisodicMemory m;
    m.policy_ = MemoryPolicy::Reservoir;
    m.capacity_ = mem_sz;
    return m;
}

EpisodicMemory EpisodicMemory::ring(int quota, int total_classes) {
    if (quota < 1 || total_classes < 1) throw std::invalid_argument("invalid ring configuration");
    EpisodicMemory m;
    m.policy_ = MemoryPolicy::Ring;
    m.quota_ = quota;
    m.capacity_ = quota * total_classes;
    return m;
}

EpisodicMemory EpisodicMemory::kmeans(int centroids_per_class, int total_classes) {
    if (centroids_per_class < 1 || total_classes < 1)
        throw std::invalid_argument("invalid k-means configuration");
    EpisodicMemory m;
    m.policy_ = MemoryPolicy::KMeans;
    m.quota_ = centroids_per_class;
    m.capacity_ = centroids_per_class * total_classes;
    return m;
}

EpisodicMemory EpisodicMemory::mof(int quota, int total_classes, double alpha) {
    if (quota < 1 || total_classes < 1) throw std::invalid_argument("invalid MoF configuration");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("MoF decay must be in (0,1)");
    EpisodicMemory m;
    m.policy_ = MemoryPolicy::MoF;
    m.quota_ = quota;
    m.capacity_ = quota * total_classes;
    m.mof_alpha_ = alpha;
    return m;
}

EpisodicMemory EpisodicMemory::hybrid(int mem_sz) {
    EpisodicMemory m = reservoir(mem_sz);
    m.policy_ = MemoryPolicy::Hybrid;
    return m;
}

EpisodicMemory EpisodicMemory::ring_full(int mem_sz) {
    EpisodicMemory m = reservoir(mem_sz);
    m.policy_ = MemoryPolicy::RingFull;
    return m;
}

int EpisodicMemory::size() const {
    switch (policy_) {
        case MemoryPolicy::Reservoir:
            return static_cast<int>(flat_.size());
        case MemoryPolicy::Hybrid:
            if (!hybrid_ring_mode_) return static_cast<int>(flat_.size());
            [[fallthrough]];
        case MemoryPolicy::Ring:
        case MemoryPolicy::RingFull: {
            int n = 0;
            for (const auto& [key, fifo] : fifos_) n += static_cast<int>(fifo.size());
            return n;
        }
        case MemoryPolicy::KMeans: {
            int n = 0;
            for (const auto& [key, st] : kmeans_)
                for (const auto& s : st.stored)
                    if (s) ++n;
            return n;
        }
        case MemoryPolicy::MoF: {
            int n = 0;
            for (const auto& [key, st] : mof_) n += static_cast<int>(st.heap.size());
            return n;
        }
    }
    return 0;
}

void EpisodicMemory::update(int task, long long n, const Batch& batch,
                            const Eigen::MatrixXd* features, Rng& rng) {
    switch (policy_) {
        case MemoryPolicy::Reservoir:
            update_reservoir(task, n, batch, rng);
            break;
        case MemoryPolicy::Ring:
            update_ring(task, batch);
            break;
        case MemoryPolicy::KMeans:
            if (!features) throw std::invalid_argument("k-means update requires features");
            update_kmeans(task, batch, *features);
            break;
        case MemoryPolicy::MoF:
            if (!features) throw std::invalid_argument("MoF update requires features");
            update_mof(task, batch, *features);
            break;
        case MemoryPolicy::Hybrid:
            update_hybrid(task, n, batch, rng);
            break;
        case MemoryPolicy::RingFull:
            update_ring_full(task, batch);
            break;
    }
}

void EpisodicMemory::update_reservoir(int task, long long n, const Batch& batch, Rng& rng) {
    for (int j = 0; j < batch.size(); ++j) {
        if (static_cast<int>(flat_.size()) < capacity_) {
            flat_.push_back({batch.inputs.row(j).transpose(), batch.labels[j], task,
                             std::numeric_limits<double>::infinity()});
        } else {
            // The j-th batch item is the (n+j+1)-th of the stream: uniform
            // over {0..n+j} keeps every item with probability mem_sz/(n+j+1).
            std::uniform_int_distribution<long long> dist(0, n + j);
            long long i = dist(rng);
            if (i < capacity_)
                flat_[static_cast<int>(i)] = {batch.inputs.row(j).transpose(), batch.labels[j],
                                              task,
                                              std::numeric_limits<double>::infinity()};
        }
    }
    n_seen_ += batch.size();
    ++update_calls_;
}

void EpisodicMemory::update_ring(int task, const Batch& batch) {
    for (int j = 0; j < batch.size(); ++j) {
        auto& fifo = fifos_[{task, batch.labels[j]}];
        fifo.push_back({batch.inputs.row(j).transpose(), batch.labels[j], task,
                        std::numeric_limits<double>::infinity()});
        if (static_cast<int>(fifo.size()) > quota_) fifo.pop_front();
    }
    n_seen_ += batch.size();
    ++update_calls_;
}

void EpisodicMemory::update_kmeans(int task, const Batch& batch,
                                   const Eigen::MatrixXd& features) {
    if (features.rows() != batch.size())
        throw std::invalid_argument("k-means update: feature row count mismatch");
    for (int j = 0; j < batch.size(); ++j) {
        auto& st = kmeans_[{task, batch.labels[j]}];
        Eigen::VectorXd phi = features.row(j).transpose();
        if (!st.centroids.empty() && st.centroids.front().size() != phi.size())
            throw std::invalid_argument("k-means update: feature width mismatch");
        if (static_cast<int>(st.centroids.size()) < quota_) {
            // First examples of a class seed the centroids.
            st.centroids.push_back(phi);
            st.counts.push_back(1);
            st.stored.push_back(
                MemorySlot{batch.inputs.row(j).transpose(), batch.labels[j], task, 0.0});
            continue;
        }
        int best = 0;
        double best_d = (phi - st.centroids[0]).norm();
        for (int c = 1; c < quota_; ++c) {
            double d = (phi - st.centroids[c]).norm();
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        st.counts[best] += 1;
        st.centroids[best] += (phi - st.centroids[best]) / static_cast<double>(st.counts[best]);
        double d = (phi - st.centroids[best]).norm();
        if (d < st.stored[best]->aux_distance)
            st.stored[best] =
                MemorySlot{batch.inputs.row(j).transpose(), batch.labels[j], task, d};
    }
    n_seen_ += batch.size();
    ++update_calls_;
}

void EpisodicMemory::update_mof(int task, const Batch& batch, const Eigen::MatrixXd& features) {
    if (features.rows() != batch.size())
        throw std::invalid_argument("MoF update: feature row count mismatch");
    auto by_dist = [](const MemorySlot& a, const MemorySlot& b) {
        return a.aux_distance < b.aux_distance;
    };
    for (int j = 0; j < batch.size(); ++j) {
        auto& st = mof_[{task, batch.labels[j]}];
        Eigen::VectorXd phi = features.row(j).transpose();
        if (st.initialized && st.mean.size() != phi.size())
            throw std::invalid_argument("MoF update: feature width mismatch");
        if (!st.initialized) {
            st.mean = phi;
            st.initialized = true;
        } else {
            st.mean = mof_alpha_ * st.mean + (1.0 - mof_alpha_) * phi;
        }
        double d = (phi - st.mean).norm();
        if (static_cast<int>(st.heap.size()) < quota_) {
            st.heap.push_back({batch.inputs.row(j).transpose(), batch.labels[j], task, d});
            std::push_heap(st.heap.begin(), st.heap.end(), by_dist);
        } else if (st.heap.front().aux_distance > d) {
            std::pop_heap(st.heap.begin(), st.heap.end(), by_dist);
            st.heap.back() = {batch.inputs.row(j).transpose(), batch.labels[j], task, d};
            std::push_heap(st.heap.begin(), st.heap.end(), by_dist);
        }
    }
    n_seen_ += batch.size();
    ++update_calls_;
}

void EpisodicMemory::update_hybrid(int task, long long n, const Batch& batch, Rng& rng) {
    if (hybrid_ring_mode_) {
        for (int j = 0; j < batch.size(); ++j) {
            observed_before_[{task, batch.labels[j]}] = true;
            ring_full_insert(task, batch.labels[j], batch.inputs.row(j).transpose());
        }
        n_seen_ += batch.size();
        ++update_calls_;
        return;
    }

    std::map<ClassKey, bool> observed_at_entry = observed_before_;
    for (int j = 0; j < batch.size(); ++j) {
        if (static_cast<int>(flat_.size()) < capacity_) {
            flat_.push_back({batch.inputs.row(j).transpose(), batch.labels[j], task,
                             std::numeric_limits<double>::infinity()});
        } else {
            std::uniform_int_distribution<long long> dist(0, n + j);
            long long i = dist(rng);
            if (i < capacity_)
                flat_[static_cast<int>(i)] = {batch.inputs.row(j).transpose(), batch.labels[j],
                                              task,
                                              std::numeric_limits<double>::infinity()};
        }
        observed_before_[{task, batch.labels[j]}] = true;
    }
    n_seen_ += batch.size();
    ++update_calls_;

    // Switch trigger: memory full and some class seen in earlier calls is
    // down to at most one slot.
    if (static_cast<int>(flat_.size()) < capacity_) return;
    std::map<ClassKey, int> counts;
    for (const auto& s : flat_) counts[{s.task_id, s.label}]++;
    bool fire = false;
    for (const auto& [key, seen] : observed_at_entry)
        if (counts[key] <= 1) {
            fire = true;
            break;
        }
    if (fire) hybrid_check_switch(rng);
}

void EpisodicMemory::hybrid_check_switch(Rng& rng) {
    hybrid_ring_mode_ = true;
    switch_index_ = update_calls_;

    int k_seen = static_cast<int>(observed_before_.size());
    int quota = std::max(1, capacity_ / std::max(1, k_seen));

    std::map<ClassKey, std::vector<int>> by_class;
    for (int i = 0; i < static_cast<int>(flat_.size()); ++i)
        by_class[{flat_[i].task_id, flat_[i].label}].push_back(i);
    for (auto& [key, idx] : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        int keep = std::min(static_cast<int>(idx.size()), quota);
        idx.resize(keep);
        std::sort(idx.begin(), idx.end());  // preserve arrival order in the FIFO
        auto& fifo = fifos_[key];
        for (int i : idx) fifo.push_back(flat_[i]);
    }
    flat_.clear();
}

void EpisodicMemory::update_ring_full(int task, const Batch& batch) {
    for (int j = 0; j < batch.size(); ++j) {
        observed_before_[{task, batch.labels[j]}] = true;
        ring_full_insert(task, batch.labels[j], batch.inputs.row(j).transpose());
    }
    n_seen_ += batch.size();
    ++update_calls_;
}

void EpisodicMemory::ring_full_insert(int task, int label, const Eigen::VectorXd& input) {
    int k_seen = static_cast<int>(observed_before_.size());
    int quota = std::max(1, capacity_ / std::max(1, k_seen));

    auto& fifo = fifos_[{task, label}];
    fifo.push_back({input, label, task, std::numeric_limits<double>::infinity()});
    while (static_cast<int>(fifo.size()) > quota) fifo.pop_front();

    // Over-budget: evict the oldest slot of the most over-represented class.
    while (size() > capacity_) {
        auto victim = fifos_.end();
        int worst = -1;
        for (auto it = fifos_.begin(); it != fifos_.end(); ++it) {
            if (static_cast<int>(it->second.size()) > worst && !it->second.empty()) {
                worst = static_cast<int>(it->second.size());
                victim = it;
            }
        }
        if (victim == fifos_.end()) break;
        victim->second.pop_front();
    }
}

Batch EpisodicMemory::sample_batch(int k, Rng& rng) const {
    if (k < 1) throw std::invalid_argument("sample_batch: k must be positive");
    std::vector<const MemorySlot*> all = slots();
    Batch out;
    if (all.empty()) {
        out.inputs.resize(0, 0);
        return out;
    }
    const int n = static_cast<int>(all.size());
    std::vector<int> pick;
    pick.reserve(k);
    if (n >= k) {
        // Partial Fisher-Yates: k distinct indices.
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = 0; i < k; ++i) {
            std::uniform_int_distribution<int> dist(i, n - 1);
            std::swap(idx[i], idx[dist(rng)]);
            pick.push_back(idx[i]);
        }
    } else {
        std::uniform_int_distribution<int> dist(0, n - 1);
        for (int i = 0; i < k; ++i) pick.push_back(dist(rng));
    }
    const int d = static_cast<int>(all.front()->input.size());
    out.inputs.resize(k, d);
    out.labels.resize(k);
    out.task_ids.resize(k);
    for (int i = 0; i < k; ++i) {
        out.inputs.row(i) = all[pick[i]]->input.transpose();
        out.labels[i] = all[pick[i]]->label;
        out.task_ids[i] = all[pick[i]]->task_id;
    }
    return out;
}

std::vector<const MemorySlot*> EpisodicMemory::slots() const {
    std::vector<const MemorySlot*> out;
    switch (policy_) {
        case MemoryPolicy::Reservoir:
            for (const auto& s : flat_) out.push_back(&s);
            break;
        case MemoryPolicy::Hybrid:
            if (!hybrid_ring_mode_) {
                for (const auto& s : flat_) out.push_back(&s);
                break;
            }
            [[fallthrough]];
        case MemoryPolicy::Ring:
        case MemoryPolicy::RingFull:
            for (const auto& [key, fifo] : fifos_)
                for (const auto& s : fifo) out.push_back(&s);
            break;
        case MemoryPolicy::KMeans:
            for (const auto& [key, st] : kmeans_)
                for (const auto& s : st.stored)
                    if (s) out.push_back(&*s);
            break;
        case MemoryPolicy::MoF:
            for (const auto& [key, st] : mof_)
                for (const auto& s : st.heap) out.push_back(&s);
            break;
    }
    return out;
}

int EpisodicMemory::class_count(int task, int label) const {
    int n = 0;
    for (const MemorySlot* s : slots())
        if (s->task_id == task && s->label == label) ++n;
    return n;
}

const Eigen::VectorXd& EpisodicMemory::kmeans_centroid(int task, int label, int j) const {
    return kmeans_.at({task, label}).centroids.at(j);
}

const Eigen::VectorXd& EpisodicMemory::mof_mean(int task, int label) const {
    return mof_.at({task, label}).mean;
}

nlohmann::json EpisodicMemory::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const MemorySlot* s : slots()) {
        nlohmann::json item;
        item["input"] = std::vector<double>(s->input.data(), s->input.data() + s->input.size());
        item["label"] = s->label;
        item["task_id"] = s->task_id;
        arr.push_back(item);
    }
    return arr;
}

}  // namespace replay
