#pragma once
// Per-class FIFO feature queues plus the inverse-score probabilistic sampler.
// Each foreground class owns a queue of capacity M holding (feature,
// regression-target) pairs; the sampler draws k classes with probability
// proportional to 1/s_y and pulls m stored features per drawn class to
// augment a training batch.

#include <Eigen/Core>
#include <cstddef>
#include <cstdio>
#include <deque>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <vector>

#include "loce/box_geometry.hpp"
#include "loce/score_tracker.hpp"

namespace loce {

struct MemoryEntry {
    Eigen::VectorXd feature;
    RegressionTarget target;
    std::size_t source_class = 0;
};

class FeatureMemory {
public:
    FeatureMemory(std::size_t num_foreground_classes, std::size_t capacity,
                  std::size_t feature_dim)
        : queues_(num_foreground_classes), capacity_(capacity), feature_dim_(feature_dim) {
        if (num_foreground_classes == 0 || capacity == 0 || feature_dim == 0)
            throw std::invalid_argument("feature memory: zero-sized configuration");
    }

    std::size_t num_classes() const { return queues_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t feature_dim() const { return feature_dim_; }

    const std::deque<MemoryEntry>& queue(std::size_t cls) const {
        if (cls >= queues_.size()) throw std::out_of_range("feature memory: class out of range");
        return queues_[cls];
    }

    std::size_t total_entries() const {
        std::size_t n = 0;
        for (const auto& q : queues_) n += q.size();
        return n;
    }

    bool empty() const { return total_entries() == 0; }

    // Appends in order; evicts from the front once a queue exceeds capacity.
    void enqueue(const MemoryEntry& entry) {
        if (entry.source_class >= queues_.size())
            throw std::invalid_argument("feature memory: background or out-of-range class");
        if (entry.feature.size() != static_cast<Eigen::Index>(feature_dim_))
            throw std::invalid_argument("feature memory: feature dimension mismatch");
        if (!entry.feature.allFinite())
            throw std::invalid_argument("feature memory: non-finite feature");
        auto& q = queues_[entry.source_class];
        q.push_back(entry);
        while (q.size() > capacity_) q.pop_front();
    }

    void enqueue(const std::vector<MemoryEntry>& entries) {
        for (const auto& e : entries) enqueue(e);
    }

    void clear() {
        for (auto& q : queues_) q.clear();
    }

    // Debug snapshot, oldest entry of each queue first.
    void dump_csv(std::ostream& os) const {
        os << "class,queue_pos";
        for (std::size_t i = 0; i < feature_dim_; ++i) os << ",f" << i;
        os << ",dx,dy,dw,dh\n";
        char buf[32];
        auto put = [&](double v) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << ',' << buf;
        };
        for (std::size_t c = 0; c < queues_.size(); ++c) {
            for (std::size_t i = 0; i < queues_[c].size(); ++i) {
                const MemoryEntry& e = queues_[c][i];
                os << c << ',' << i;
                for (Eigen::Index j = 0; j < e.feature.size(); ++j) put(e.feature[j]);
                put(e.target.dx);
                put(e.target.dy);
                put(e.target.dw);
                put(e.target.dh);
                os << '\n';
            }
        }
    }

private:
    std::vector<std::deque<MemoryEntry>> queues_;
    std::size_t capacity_;
    std::size_t feature_dim_;
};

struct SamplerConfig {
    std::size_t k = 8;  // classes drawn per access
    std::size_t m = 4;  // features per drawn class
    bool class_draws_with_replacement = true;

    bool valid() const { return k >= 1 && m >= 1; }
};

// p_y = (1/s_y) / sum_{y'} (1/s_{y'}) over foreground classes only.
inline std::vector<double> class_probabilities(const MeanScoreTracker& s) {
    std::vector<double> p(s.num_foreground());
    double total = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        p[c] = 1.0 / s.score(c);
        total += p[c];
    }
    for (double& v : p) v /= total;
    return p;
}

namespace detail {

inline std::size_t draw_from_cdf(const std::vector<double>& p, double mass, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double r = unit(rng) * mass;
    double acc = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        acc += p[c];
        if (r < acc) return c;
    }
    return p.size() - 1;  // guards against accumulated rounding at r ~ mass
}

}  // namespace detail

// Draws k classes from the inverse-score distribution, then m entries from
// each drawn class's queue: uniformly without replacement when the queue
// holds at least m entries, with replacement otherwise. Drawn classes with
// empty queues contribute nothing, so the result holds at most k*m entries.
inline std::vector<MemoryEntry> sample_memory(const FeatureMemory& memory,
                                              const MeanScoreTracker& s, const SamplerConfig& cfg,
                                              std::mt19937_64& rng) {
    if (!cfg.valid()) throw std::invalid_argument("sampler: k and m must be >= 1");
    if (memory.num_classes() != s.num_foreground())
        throw std::invalid_argument("sampler: memory/indicator class count mismatch");

    std::vector<double> p = class_probabilities(s);
    std::vector<std::size_t> drawn;
    drawn.reserve(cfg.k);
    if (cfg.class_draws_with_replacement) {
        for (std::size_t i = 0; i < cfg.k; ++i) drawn.push_back(detail::draw_from_cdf(p, 1.0, rng));
    } else {
        std::vector<double> remaining = p;
        double mass = 1.0;
        const std::size_t draws = std::min(cfg.k, memory.num_classes());
        for (std::size_t i = 0; i < draws; ++i) {
            const std::size_t c = detail::draw_from_cdf(remaining, mass, rng);
            drawn.push_back(c);
            mass -= remaining[c];
            remaining[c] = 0.0;
        }
    }

    std::vector<MemoryEntry> out;
    out.reserve(cfg.k * cfg.m);
    for (std::size_t cls : drawn) {
        const auto& q = memory.queue(cls);
        if (q.empty()) continue;
        if (q.size() >= cfg.m) {
            // partial Fisher-Yates for m distinct positions
            std::vector<std::size_t> idx(q.size());
            std::iota(idx.begin(), idx.end(), 0);
            for (std::size_t j = 0; j < cfg.m; ++j) {
                std::uniform_int_distribution<std::size_t> pick(j, idx.size() - 1);
                std::swap(idx[j], idx[pick(rng)]);
                out.push_back(q[idx[j]]);
            }
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, q.size() - 1);
            for (std::size_t j = 0; j < cfg.m; ++j) out.push_back(q[pick(rng)]);
        }
    }
    return out;
}

}  // namespace loce
