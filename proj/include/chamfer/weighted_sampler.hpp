#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <type_traits>
#include <unordered_map>
#include <vector>

namespace chamfer {

// Dynamic weighted sampling over keyed elements: insert, remove, reweight,
// and draw-proportional-to-weight, all in O(log n) tree-path work.
//
// Backed by an implicit complete binary tree whose internal nodes cache the
// sum of their children; leaves are slots handed out through a free list.
// The slot array doubles when full and halves at quarter occupancy, which
// keeps the capacity within 4x of the live count, so every root-to-leaf path
// stays within log2(n) + 3 node touches. Rebuilds are amortized and counted
// separately from path visits (see rebuilds()).
//
// Not safe for concurrent mutation; distinct samplers may live on distinct
// threads.
template <class Weight = std::uint64_t, class Key = std::uint64_t,
          class KeyHash = std::hash<Key>>
class WeightedSampler {
    static_assert(std::is_arithmetic_v<Weight>);

public:
    void insert(const Key& key, Weight weight) {
        check_weight(weight);
        if (index_.count(key))
            throw std::invalid_argument("WeightedSampler::insert: duplicate key");
        begin_op();
        const std::uint32_t slot = acquire_slot();
        index_.emplace(key, slot);
        keys_[slot] = key;
        ++count_;
        set_leaf(slot, weight);
    }

    void remove(const Key& key) {
        const auto it = index_.find(key);
        if (it == index_.end())
            throw std::out_of_range("WeightedSampler::remove: unknown key");
        begin_op();
        const std::uint32_t slot = it->second;
        set_leaf(slot, Weight{0});
        keys_[slot] = Key{};
        free_.push_back(slot);
        index_.erase(it);
        --count_;
        maybe_shrink();
    }

    void reweight(const Key& key, Weight weight) {
        check_weight(weight);
        const auto it = index_.find(key);
        if (it == index_.end())
            throw std::out_of_range("WeightedSampler::reweight: unknown key");
        begin_op();
        set_leaf(it->second, weight);
    }

    // Returns key k with probability w(k) / total_weight(). A draw landing
    // exactly on a subtree boundary descends right, so zero-weight elements
    // are never returned.
    template <class Rng>
    const Key& sample(Rng& rng) const {
        const Weight total = total_weight();
        if (!(total > Weight{0}))
            throw std::logic_error("WeightedSampler::sample: total weight is zero");
        begin_op();
        Weight x = draw_below(rng, total);
        std::size_t node = 1;
        touch();
        while (node < cap_) {
            const std::size_t left = node << 1;
            touch();
            if (x < sums_[left]) {
                node = left;
            } else {
                x -= sums_[left];
                node = left + 1;
            }
        }
        return keys_[node - cap_];
    }

    Weight total_weight() const { return cap_ ? sums_[1] : Weight{0}; }
    std::size_t size() const { return count_; }
    bool empty() const { return count_ == 0; }
    bool contains(const Key& key) const { return index_.count(key) != 0; }

    Weight weight_of(const Key& key) const {
        const auto it = index_.find(key);
        if (it == index_.end())
            throw std::out_of_range("WeightedSampler::weight_of: unknown key");
        return sums_[cap_ + it->second];
    }

    // Instrumentation: tree-path node touches of the most recent operation
    // and cumulatively, plus the number of amortized rebuilds.
    std::uint64_t last_op_visits() const { return last_op_visits_; }
    std::uint64_t total_visits() const { return visits_; }
    std::uint64_t rebuilds() const { return rebuilds_; }

    // Full-traversal check that every cached sum equals the sum of its
    // children (exact for integral weights, 1e-9 relative for reals).
    bool sums_consistent() const {
        for (std::size_t i = 1; i < cap_; ++i) {
            const Weight lhs = sums_[i];
            const Weight rhs = sums_[2 * i] + sums_[2 * i + 1];
            if constexpr (std::is_integral_v<Weight>) {
                if (lhs != rhs) return false;
            } else {
                const double denom = std::max<double>(1.0, std::abs(double(rhs)));
                if (std::abs(double(lhs) - double(rhs)) > 1e-9 * denom) return false;
            }
        }
        return true;
    }

private:
    void check_weight(Weight w) const {
        if constexpr (std::is_signed_v<Weight>) {
            if (w < Weight{0})
                throw std::invalid_argument("WeightedSampler: negative weight");
        }
    }

    void begin_op() const { last_op_visits_ = 0; }
    void touch() const {
        ++visits_;
        ++last_op_visits_;
    }

    std::uint32_t acquire_slot() {
        if (!free_.empty()) {
            const std::uint32_t s = free_.back();
            free_.pop_back();
            return s;
        }
        if (high_ == cap_) rebuild(cap_ ? cap_ * 2 : 4);
        return high_++;
    }

    void maybe_shrink() {
        if (cap_ > 4 && count_ * 4 <= cap_) rebuild(cap_ / 2);
    }

    void rebuild(std::size_t new_cap) {
        ++rebuilds_;
        std::vector<std::pair<Key, Weight>> live;
        live.reserve(count_);
        for (const auto& [key, slot] : index_) live.emplace_back(key, sums_[cap_ + slot]);
        cap_ = new_cap;
        sums_.assign(2 * cap_, Weight{0});
        keys_.assign(cap_, Key{});
        free_.clear();
        index_.clear();
        high_ = 0;
        for (const auto& [key, w] : live) {
            const std::uint32_t slot = high_++;
            index_.emplace(key, slot);
            keys_[slot] = key;
            sums_[cap_ + slot] = w;
        }
        for (std::size_t i = cap_ - 1; i >= 1; --i)
            sums_[i] = sums_[2 * i] + sums_[2 * i + 1];
    }

    // Write the leaf and refresh cached sums along the root path by
    // re-adding children (keeps real-weight caches drift-free).
    void set_leaf(std::uint32_t slot, Weight w) {
        std::size_t i = cap_ + slot;
        sums_[i] = w;
        touch();
        for (i >>= 1; i >= 1; i >>= 1) {
            sums_[i] = sums_[2 * i] + sums_[2 * i + 1];
            touch();
        }
    }

    template <class Rng>
    static Weight draw_below(Rng& rng, Weight total) {
        if constexpr (std::is_integral_v<Weight>) {
            return std::uniform_int_distribution<Weight>(Weight{0}, total - 1)(rng);
        } else {
            std::uniform_real_distribution<double> dist(0.0, static_cast<double>(total));
            double x = dist(rng);
            while (x >= static_cast<double>(total)) x = dist(rng);
            return static_cast<Weight>(x);
        }
    }

    std::size_t cap_ = 0;   // leaf capacity, power of two (0 until first insert)
    std::size_t high_ = 0;  // next fresh slot
    std::size_t count_ = 0;
    std::vector<Weight> sums_;  // [1, 2cap): implicit tree; leaves at [cap, 2cap)
    std::vector<Key> keys_;
    std::vector<std::uint32_t> free_;
    std::unordered_map<Key, std::uint32_t, KeyHash> index_;

    mutable std::uint64_t visits_ = 0;
    mutable std::uint64_t last_op_visits_ = 0;
    std::uint64_t rebuilds_ = 0;
};

}  // namespace chamfer
