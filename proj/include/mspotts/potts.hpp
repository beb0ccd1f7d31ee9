#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "image.hpp"
#include "parallel.hpp"

namespace mspotts {

// Finite-difference directions d_s with weights omega_s defining the
// discrete Potts prior.
struct DirectionSet {
    std::vector<std::pair<int, int>> directions;
    std::vector<double> weights;

    std::size_t size() const { return directions.size(); }

    static DirectionSet axial() {
        return {{{1, 0}, {0, 1}}, {1.0, 1.0}};
    }

    // Axial plus diagonal directions; the weights reduce geometric
    // staircasing of boundaries that are not axis-parallel.
    static DirectionSet near_isotropic() {
        const double w_ax = std::sqrt(2.0) - 1.0;
        const double w_diag = 1.0 - std::sqrt(2.0) / 2.0;
        return {{{1, 0}, {0, 1}, {1, 1}, {1, -1}}, {w_ax, w_ax, w_diag, w_diag}};
    }
};

// Exact minimizer of the 1D multi-channel Potts functional
//   || u - g ||^2 + gamma * #{ i : u(i) != u(i+1) in any channel }
// by dynamic programming over the last-segment start. Channel data is given
// as C contiguous rows of length len; the result is piecewise channel-wise
// means on the optimal partition.
class Potts1D {
  public:
    // Workspace is reusable across calls of the same or smaller size.
    void solve(const double* data, int channels, int len, double gamma,
               double* out) {
        if (gamma < 0.0) throw std::invalid_argument("potts_1d: gamma < 0");
        if (len < 1 || channels < 1)
            throw std::invalid_argument("potts_1d: empty data");
        for (int i = 0; i < channels * len; ++i)
            if (!std::isfinite(data[i]))
                throw std::invalid_argument("potts_1d: non-finite data");

        if (gamma == 0.0) {
            std::copy(data, data + channels * len, out);
            return;
        }

        // Cumulative first and second moments per channel; E^{l:r} then
        // costs O(C) per query.
        cum1_.assign(static_cast<std::size_t>(channels) * (len + 1), 0.0);
        cum2_.assign(static_cast<std::size_t>(channels) * (len + 1), 0.0);
        for (int c = 0; c < channels; ++c) {
            const double* g = data + static_cast<std::size_t>(c) * len;
            double* s1 = cum1_.data() + static_cast<std::size_t>(c) * (len + 1);
            double* s2 = cum2_.data() + static_cast<std::size_t>(c) * (len + 1);
            for (int i = 0; i < len; ++i) {
                s1[i + 1] = s1[i] + g[i];
                s2[i + 1] = s2[i] + g[i] * g[i];
            }
        }

        auto deviation = [&](int l, int r) {  // 1-based inclusive segment [l, r]
            double e = 0.0;
            double inv_len = 1.0 / (r - l + 1);
            for (int c = 0; c < channels; ++c) {
                const double* s1 = cum1_.data() + static_cast<std::size_t>(c) * (len + 1);
                const double* s2 = cum2_.data() + static_cast<std::size_t>(c) * (len + 1);
                double sum = s1[r] - s1[l - 1];
                e += (s2[r] - s2[l - 1]) - sum * sum * inv_len;
            }
            return std::max(e, 0.0);  // absorb cancellation
        };

        best_.assign(len + 1, 0.0);
        jump_.assign(len + 1, 0);
        best_[0] = -gamma;
        for (int r = 1; r <= len; ++r) {
            double cur = std::numeric_limits<double>::infinity();
            int arg = r;
            // Scan candidate segment starts from the right; the deviation
            // grows as the segment extends left and best_ is non-decreasing,
            // so once the deviation alone reaches the incumbent no earlier
            // start can win.
            for (int l = r; l >= 1; --l) {
                double dev = deviation(l, r);
                if (dev >= cur) break;
                double cand = best_[l - 1] + gamma + dev;
                if (cand < cur) {  // strict: ties keep the larger l
                    cur = cand;
                    arg = l;
                }
            }
            best_[r] = cur;
            jump_[r] = arg;
        }

        int r = len;
        while (r >= 1) {
            int l = jump_[r];
            double inv_len = 1.0 / (r - l + 1);
            for (int c = 0; c < channels; ++c) {
                const double* s1 = cum1_.data() + static_cast<std::size_t>(c) * (len + 1);
                const double* g = data + static_cast<std::size_t>(c) * len;
                double mean = (s1[r] - s1[l - 1]) * inv_len;
                // A constant segment must stay bit-identical; the prefix-sum
                // mean can drift by an ulp, so detect that case exactly.
                bool constant = true;
                for (int i = l; i < r && constant; ++i)
                    constant = g[i] == g[l - 1];
                if (constant) mean = g[l - 1];
                double* u = out + static_cast<std::size_t>(c) * len;
                for (int i = l - 1; i < r; ++i) u[i] = mean;
            }
            r = l - 1;
        }
    }

    double min_energy() const { return best_.empty() ? 0.0 : best_.back(); }

  private:
    std::vector<double> cum1_, cum2_;
    std::vector<double> best_;
    std::vector<int> jump_;
};

inline std::vector<double> potts_1d(const std::vector<double>& data, int channels,
                                    int len, double gamma) {
    std::vector<double> out(data.size());
    Potts1D solver;
    solver.solve(data.data(), channels, len, gamma, out.data());
    return out;
}

namespace detail {

// One line of the family induced by direction d on an n x n grid, as pixel
// indices into the image plane.
using Line = std::vector<std::size_t>;

// Enumerates the lines of direction d = (dx, dy). A pixel starts a line iff
// stepping backwards leaves the grid; scanning start pixels in row-major
// order fixes a canonical line order. Every pixel lies on exactly one line.
inline std::vector<Line> line_family(int n, int dx, int dy) {
    if (dx == 0 && dy == 0)
        throw std::invalid_argument("line_family: zero direction");
    std::vector<Line> lines;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            int bx = x - dx, by = y - dy;
            if (bx >= 0 && bx < n && by >= 0 && by < n) continue;
            Line line;
            int cx = x, cy = y;
            while (cx >= 0 && cx < n && cy >= 0 && cy < n) {
                line.push_back(static_cast<std::size_t>(cy) * n + cx);
                cx += dx;
                cy += dy;
            }
            lines.push_back(std::move(line));
        }
    }
    return lines;
}

}  // namespace detail

// Solves the directional Potts subproblem
//   argmin_u ||u - data||^2 + gamma_eff * ||grad_d u||_0
// by running the exact 1D solver on every line of the direction's family.
inline MultiImage direction_subproblem(const MultiImage& data,
                                       std::pair<int, int> d, double gamma_eff) {
    const int n = data.side();
    const int C = data.channels();
    auto lines = detail::line_family(n, d.first, d.second);
    MultiImage out(n, C);
    parallel_for(lines.size(), [&](std::size_t li) {
        const auto& line = lines[li];
        const int len = static_cast<int>(line.size());
        if (len == 1) {
            for (int c = 0; c < C; ++c)
                out.channel(c)[line[0]] = data.channel(c)[line[0]];
            return;
        }
        thread_local Potts1D solver;
        thread_local std::vector<double> g, u;
        g.resize(static_cast<std::size_t>(C) * len);
        u.resize(g.size());
        for (int c = 0; c < C; ++c) {
            auto src = data.channel(c);
            for (int i = 0; i < len; ++i) g[static_cast<std::size_t>(c) * len + i] = src[line[i]];
        }
        solver.solve(g.data(), C, len, gamma_eff, u.data());
        for (int c = 0; c < C; ++c) {
            auto dst = out.channel(c);
            for (int i = 0; i < len; ++i) dst[line[i]] = u[static_cast<std::size_t>(c) * len + i];
        }
    });
    return out;
}

namespace detail {

inline bool differs_any_channel(const MultiImage& u, std::size_t a, std::size_t b) {
    for (int c = 0; c < u.channels(); ++c)
        if (u.channel(c)[a] != u.channel(c)[b]) return true;
    return false;
}

}  // namespace detail

// Unordered neighbor pairs {x, x + d} where the image differs in any channel.
struct JumpSet {
    std::set<std::pair<std::size_t, std::size_t>> pairs;

    bool subset_of(const JumpSet& other) const {
        return std::includes(other.pairs.begin(), other.pairs.end(),
                             pairs.begin(), pairs.end());
    }
};

inline JumpSet jump_set(const MultiImage& u, std::pair<int, int> d) {
    const int n = u.side();
    JumpSet js;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            int nx = x + d.first, ny = y + d.second;
            if (nx < 0 || nx >= n || ny < 0 || ny >= n) continue;
            std::size_t a = static_cast<std::size_t>(y) * n + x;
            std::size_t b = static_cast<std::size_t>(ny) * n + nx;
            if (detail::differs_any_channel(u, a, b))
                js.pairs.emplace(std::min(a, b), std::max(a, b));
        }
    }
    return js;
}

// Directional jump count ||grad_d u||_0 (a jump counts once if any channel
// differs).
inline std::size_t directional_jump_count(const MultiImage& u, std::pair<int, int> d) {
    const int n = u.side();
    std::size_t count = 0;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            int nx = x + d.first, ny = y + d.second;
            if (nx < 0 || nx >= n || ny < 0 || ny >= n) continue;
            std::size_t a = static_cast<std::size_t>(y) * n + x;
            std::size_t b = static_cast<std::size_t>(ny) * n + nx;
            if (detail::differs_any_channel(u, a, b)) ++count;
        }
    }
    return count;
}

// Multi-channel Potts prior: sum_s omega_s * ||grad_{d_s} u||_0.
inline double multichannel_potts_value(const MultiImage& u, const DirectionSet& dirs) {
    double value = 0.0;
    for (std::size_t s = 0; s < dirs.size(); ++s)
        value += dirs.weights[s] *
                 static_cast<double>(directional_jump_count(u, dirs.directions[s]));
    return value;
}

// Block-wise Potts prior F(u_1, ..., u_S): each split variable is charged
// only for jumps along its own direction.
inline double blockwise_potts_value(const std::vector<MultiImage>& blocks,
                                    const DirectionSet& dirs) {
    if (blocks.size() != dirs.size())
        throw std::invalid_argument("blockwise_potts_value: block/direction mismatch");
    double value = 0.0;
    for (std::size_t s = 0; s < dirs.size(); ++s) {
        if (!blocks[s].same_shape(blocks[0]))
            throw std::invalid_argument("blockwise_potts_value: shape mismatch");
        value += dirs.weights[s] *
                 static_cast<double>(directional_jump_count(blocks[s], dirs.directions[s]));
    }
    return value;
}

// prox_{beta F}: decomposes into an independent directional Potts problem
// per block with jump penalty 2 * beta * omega_s.
inline std::vector<MultiImage> prox_blockwise_potts(const std::vector<MultiImage>& blocks,
                                                    double beta,
                                                    const DirectionSet& dirs) {
    if (beta <= 0.0) throw std::invalid_argument("prox_blockwise_potts: beta <= 0");
    if (blocks.size() != dirs.size())
        throw std::invalid_argument("prox_blockwise_potts: block/direction mismatch");
    std::vector<MultiImage> out;
    out.reserve(blocks.size());
    for (std::size_t s = 0; s < blocks.size(); ++s)
        out.push_back(direction_subproblem(blocks[s], dirs.directions[s],
                                           2.0 * beta * dirs.weights[s]));
    return out;
}

// Unit-norm non-ascending direction for F at the given blocks, together with
// the prox displacement delta. Moving any distance t >= 0 along the returned
// direction does not increase F.
inline std::pair<std::vector<MultiImage>, double> nonascending_direction(
    const std::vector<MultiImage>& blocks, double beta, const DirectionSet& dirs) {
    auto prox = prox_blockwise_potts(blocks, beta, dirs);
    double norm_sq = 0.0;
    for (std::size_t s = 0; s < blocks.size(); ++s) {
        const auto& a = prox[s].data();
        const auto& b = blocks[s].data();
        for (std::size_t i = 0; i < a.size(); ++i) {
            double diff = a[i] - b[i];
            norm_sq += diff * diff;
        }
    }
    double delta = std::sqrt(norm_sq);
    std::vector<MultiImage> v;
    v.reserve(blocks.size());
    for (std::size_t s = 0; s < blocks.size(); ++s) {
        MultiImage dir(blocks[s].side(), blocks[s].channels());
        if (delta > 0.0) {
            const auto& a = prox[s].data();
            const auto& b = blocks[s].data();
            for (std::size_t i = 0; i < a.size(); ++i)
                dir.data()[i] = (a[i] - b[i]) / delta;
        }
        v.push_back(std::move(dir));
    }
    return {std::move(v), delta};
}

}  // namespace mspotts
