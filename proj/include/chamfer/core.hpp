#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace chamfer {

using Coord = std::int32_t;

namespace detail {

// splitmix64 finalizer; used for point/cell hashing throughout
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace detail

// A point on the integer grid [0, U)^d. Multisets are allowed everywhere:
// quantization may map distinct inputs onto the same grid point.
struct Point {
    std::vector<Coord> coords;

    Point() = default;
    explicit Point(std::vector<Coord> c) : coords(std::move(c)) {}
    Point(std::initializer_list<Coord> c) : coords(c) {}

    std::size_t dim() const { return coords.size(); }
    Coord operator[](std::size_t i) const { return coords[i]; }
    bool operator==(const Point&) const = default;
};

struct PointHash {
    std::size_t operator()(const Point& p) const {
        std::uint64_t h = detail::mix64(0x5ca1ab1eull ^ p.coords.size());
        for (Coord c : p.coords)
            h = detail::mix64(h ^ static_cast<std::uint32_t>(c));
        return static_cast<std::size_t>(h);
    }
};

enum class Side { A, B };
enum class UpdateOp { Insert, Delete };

// The unit of dynamism: one insertion or deletion on one side.
struct UpdateEvent {
    Side side = Side::A;
    UpdateOp op = UpdateOp::Insert;
    Point point;
};

// Instance-wide geometry: dimension, grid extent U (power of two), RNG seed,
// and an optional fixed shift for deterministic tests. The grid has
// levels() + 1 nested grids; level 0 has cell side 2U and the last has side 1.
struct InstanceConfig {
    std::size_t dim = 2;
    std::uint64_t extent = std::uint64_t{1} << 20;  // U
    std::uint64_t seed = 0;
    std::optional<std::vector<Coord>> shift_override;

    int levels() const { return std::bit_width(extent); }  // log2(2U)

    void validate() const {
        if (dim == 0)
            throw std::invalid_argument("InstanceConfig: dimension must be >= 1");
        if (extent < 2 || !std::has_single_bit(extent) ||
            extent > (std::uint64_t{1} << 30))
            throw std::invalid_argument(
                "InstanceConfig: extent must be a power of two in [2, 2^30]");
        if (shift_override) {
            if (shift_override->size() != dim)
                throw std::invalid_argument("InstanceConfig: shift dimension mismatch");
            for (Coord z : *shift_override)
                if (z < 0 || static_cast<std::uint64_t>(z) >= extent)
                    throw std::invalid_argument(
                        "InstanceConfig: shift coordinates must lie in [0, U)");
        }
    }
};

// Knobs of the estimator: target relative error eps, NN-oracle slack alpha,
// optional explicit sample count, and median-boost repetitions (odd).
struct EstimatorParams {
    double eps = 0.2;
    double alpha = 0.0;
    std::optional<std::uint64_t> samples;  // override for the m formula
    std::uint32_t boost_reps = 1;

    void validate() const {
        if (!(eps > 0.0) || !(eps < 1.0))
            throw std::invalid_argument("EstimatorParams: eps must lie in (0, 1)");
        if (alpha < 0.0)
            throw std::invalid_argument("EstimatorParams: alpha must be >= 0");
        if (samples && *samples == 0)
            throw std::invalid_argument("EstimatorParams: sample count must be >= 1");
        if (boost_reps == 0 || boost_reps % 2 == 0)
            throw std::invalid_argument("EstimatorParams: boost_reps must be odd and >= 1");
    }
};

inline std::int64_t l1_dist(const Point& p, const Point& q) {
    if (p.dim() != q.dim())
        throw std::invalid_argument("l1_dist: dimension mismatch");
    std::int64_t s = 0;
    for (std::size_t i = 0; i < p.dim(); ++i)
        s += std::abs(static_cast<std::int64_t>(p[i]) - static_cast<std::int64_t>(q[i]));
    return s;
}

// Exact Chamfer distance by brute force, O(|A||B|d). Ground truth for every
// estimator in this library and for the tests.
inline std::int64_t chamfer_exact(const std::vector<Point>& a_set,
                                  const std::vector<Point>& b_set) {
    if (b_set.empty())
        throw std::invalid_argument("chamfer_exact: B must be nonempty");
    std::int64_t total = 0;
    for (const Point& a : a_set) {
        std::int64_t best = l1_dist(a, b_set.front());
        for (std::size_t j = 1; j < b_set.size(); ++j)
            best = std::min(best, l1_dist(a, b_set[j]));
        total += best;
    }
    return total;
}

// Affine map from raw real-valued vectors onto the integer grid [0, U-1]^d:
// translate the min corner to the origin, scale uniformly so the widest
// dimension spans [0, U-1], round to nearest. Fit once, apply to both sides.
class AffineQuantizer {
public:
    static AffineQuantizer fit(const std::vector<std::vector<double>>& raw,
                               std::uint64_t extent) {
        if (raw.empty())
            throw std::invalid_argument("AffineQuantizer: need at least one vector");
        const std::size_t d = raw.front().size();
        if (d == 0)
            throw std::invalid_argument("AffineQuantizer: zero-dimensional input");
        AffineQuantizer q;
        q.extent_ = extent;
        q.mins_.assign(d, std::numeric_limits<double>::infinity());
        std::vector<double> maxs(d, -std::numeric_limits<double>::infinity());
        for (const auto& v : raw) {
            if (v.size() != d)
                throw std::invalid_argument("AffineQuantizer: dimension mismatch");
            for (std::size_t i = 0; i < d; ++i) {
                q.mins_[i] = std::min(q.mins_[i], v[i]);
                maxs[i] = std::max(maxs[i], v[i]);
            }
        }
        double span = 0.0;
        for (std::size_t i = 0; i < d; ++i) span = std::max(span, maxs[i] - q.mins_[i]);
        q.scale_ = span > 0.0 ? static_cast<double>(extent - 1) / span : 0.0;
        return q;
    }

    Point apply(const std::vector<double>& v) const {
        if (v.size() != mins_.size())
            throw std::invalid_argument("AffineQuantizer: dimension mismatch");
        Point p;
        p.coords.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            long long c = std::llround((v[i] - mins_[i]) * scale_);
            c = std::clamp<long long>(c, 0, static_cast<long long>(extent_) - 1);
            p.coords[i] = static_cast<Coord>(c);
        }
        return p;
    }

    std::vector<Point> apply_all(const std::vector<std::vector<double>>& raw) const {
        std::vector<Point> out;
        out.reserve(raw.size());
        for (const auto& v : raw) out.push_back(apply(v));
        return out;
    }

    double scale() const { return scale_; }
    const std::vector<double>& mins() const { return mins_; }

private:
    std::vector<double> mins_;
    double scale_ = 0.0;
    std::uint64_t extent_ = 0;
};

inline std::vector<Point> quantize_dataset(const std::vector<std::vector<double>>& raw,
                                           const InstanceConfig& cfg) {
    cfg.validate();
    return AffineQuantizer::fit(raw, cfg.extent).apply_all(raw);
}

}  // namespace chamfer
