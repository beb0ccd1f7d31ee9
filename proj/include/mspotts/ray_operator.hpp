#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "geometry.hpp"
#include "image.hpp"
#include "parallel.hpp"

namespace mspotts {

// Sparse ray-incidence operator A. Entry A_ij is the exact Euclidean length
// of the intersection of ray i with pixel j. Stored in CSR for row products;
// a CSC copy backs the adjoint so that per-pixel sums have a fixed order and
// the adjoint parallelizes without shared accumulators.
class RayOperator {
  public:
    RayOperator() = default;

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t nnz() const { return vals_.size(); }

    std::span<const std::size_t> row_ptr() const { return row_ptr_; }
    std::span<const std::uint32_t> col_idx() const { return col_idx_; }
    std::span<const double> values() const { return vals_; }

    // y = A u
    void apply(std::span<const double> u, std::span<double> y) const {
        if (u.size() != cols_ || y.size() != rows_)
            throw std::invalid_argument("RayOperator::apply: shape mismatch");
        parallel_for(rows_, [&](std::size_t i) {
            double acc = 0.0;
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k)
                acc += vals_[k] * u[col_idx_[k]];
            y[i] = acc;
        });
    }

    // u = A^T y
    void apply_adjoint(std::span<const double> y, std::span<double> u) const {
        if (y.size() != rows_ || u.size() != cols_)
            throw std::invalid_argument("RayOperator::apply_adjoint: shape mismatch");
        parallel_for(cols_, [&](std::size_t j) {
            double acc = 0.0;
            for (std::size_t k = col_ptr_[j]; k < col_ptr_[j + 1]; ++k)
                acc += cvals_[k] * y[row_idx_[k]];
            u[j] = acc;
        });
    }

    std::vector<double> apply(std::span<const double> u) const {
        std::vector<double> y(rows_);
        apply(u, y);
        return y;
    }

    std::vector<double> apply_adjoint(std::span<const double> y) const {
        std::vector<double> u(cols_);
        apply_adjoint(y, u);
        return u;
    }

    // Power-iteration estimate of ||A||_2^2 from a fixed unit-constant start.
    double operator_norm_sq(int iters) const {
        if (iters < 1) throw std::invalid_argument("operator_norm_sq: iters >= 1");
        if (nnz() == 0 || cols_ == 0) return 0.0;
        std::vector<double> x(cols_, 1.0 / std::sqrt(static_cast<double>(cols_)));
        std::vector<double> y(rows_), z(cols_);
        double lambda = 0.0;
        for (int it = 0; it < iters; ++it) {
            apply(x, y);
            apply_adjoint(y, z);
            lambda = std::sqrt(std::inner_product(z.begin(), z.end(), z.begin(), 0.0));
            if (lambda == 0.0) return 0.0;
            for (std::size_t j = 0; j < cols_; ++j) x[j] = z[j] / lambda;
        }
        return lambda;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open for writing: " + path);
        os.write("RAYOP1", 6);
        detail::write_u64(os, rows_);
        detail::write_u64(os, cols_);
        detail::write_u64(os, nnz());
        for (std::size_t i = 0; i < rows_; ++i) {
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
                detail::write_u64(os, i);
                detail::write_u64(os, col_idx_[k]);
                detail::write_f64(os, vals_[k]);
            }
        }
    }

    static RayOperator load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot open: " + path);
        detail::expect_magic(is, "RAYOP1");
        std::size_t rows = detail::read_u64(is);
        std::size_t cols = detail::read_u64(is);
        std::size_t count = detail::read_u64(is);
        std::vector<std::size_t> ri(count);
        std::vector<std::uint32_t> ci(count);
        std::vector<double> v(count);
        std::size_t prev_row = 0;
        for (std::size_t k = 0; k < count; ++k) {
            ri[k] = detail::read_u64(is);
            ci[k] = static_cast<std::uint32_t>(detail::read_u64(is));
            v[k] = detail::read_f64(is);
            if (ri[k] < prev_row)
                throw std::runtime_error("operator file rows out of order: " + path);
            prev_row = ri[k];
        }
        if (!is) throw std::runtime_error("truncated operator file: " + path);
        RayOperator op;
        op.rows_ = rows;
        op.cols_ = cols;
        op.row_ptr_.assign(rows + 1, 0);
        for (std::size_t k = 0; k < count; ++k) op.row_ptr_[ri[k] + 1]++;
        for (std::size_t i = 0; i < rows; ++i) op.row_ptr_[i + 1] += op.row_ptr_[i];
        op.col_idx_ = std::move(ci);
        op.vals_ = std::move(v);
        op.build_csc();
        return op;
    }

    // Assembles from per-row (col, value) entries. Rows must be pushed in
    // order via RowBuilder below.
    friend class RowBuilder;

  private:
    void build_csc() {
        col_ptr_.assign(cols_ + 1, 0);
        row_idx_.resize(nnz());
        cvals_.resize(nnz());
        for (auto c : col_idx_) col_ptr_[c + 1]++;
        for (std::size_t j = 0; j < cols_; ++j) col_ptr_[j + 1] += col_ptr_[j];
        std::vector<std::size_t> cursor(col_ptr_.begin(), col_ptr_.end() - 1);
        for (std::size_t i = 0; i < rows_; ++i) {
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
                std::size_t slot = cursor[col_idx_[k]]++;
                row_idx_[slot] = static_cast<std::uint32_t>(i);
                cvals_[slot] = vals_[k];
            }
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::size_t> row_ptr_;
    std::vector<std::uint32_t> col_idx_;
    std::vector<double> vals_;
    std::vector<std::size_t> col_ptr_;
    std::vector<std::uint32_t> row_idx_;
    std::vector<double> cvals_;
};

class RowBuilder {
  public:
    RowBuilder(std::size_t rows, std::size_t cols) {
        op_.rows_ = rows;
        op_.cols_ = cols;
        op_.row_ptr_.reserve(rows + 1);
        op_.row_ptr_.push_back(0);
    }

    void push(std::uint32_t col, double value) {
        op_.col_idx_.push_back(col);
        op_.vals_.push_back(value);
    }

    void end_row() { op_.row_ptr_.push_back(op_.vals_.size()); }

    RayOperator finish() {
        if (op_.row_ptr_.size() != op_.rows_ + 1)
            throw std::logic_error("RowBuilder: row count mismatch");
        op_.build_csc();
        return std::move(op_);
    }

  private:
    RayOperator op_;
};

namespace detail {

struct Ray {
    double px, py;  // a point on the ray
    double dx, dy;  // unit direction
};

// Exact Siddon-style traversal of the pixel grid. Crossing parameters with
// the axis-aligned pixel boundaries are merged in order; each segment is
// attributed to the pixel containing its midpoint, which resolves rays lying
// exactly on a grid line to a single pixel (half-open intervals along the
// traversal direction).
inline void trace_ray(const Ray& ray, int grid_n, double width, RowBuilder& out) {
    const double half = width / 2.0;
    const double h = width / grid_n;
    const double inf = std::numeric_limits<double>::infinity();

    double tmin = -inf, tmax = inf;
    auto clip = [&](double p, double d) {
        if (std::abs(d) < 1e-300) {
            if (p < -half || p > half) tmax = -inf;  // parallel miss
            return;
        }
        double t1 = (-half - p) / d, t2 = (half - p) / d;
        if (t1 > t2) std::swap(t1, t2);
        tmin = std::max(tmin, t1);
        tmax = std::min(tmax, t2);
    };
    clip(ray.px, ray.dx);
    clip(ray.py, ray.dy);
    if (!(tmax - tmin > 1e-12)) {
        out.end_row();
        return;
    }

    // Crossing parameters per axis, already sorted along the ray.
    auto crossings = [&](double p, double d, std::vector<double>& ts) {
        ts.clear();
        if (std::abs(d) < 1e-300) return;
        for (int k = 0; k <= grid_n; ++k) {
            double t = ((-half + k * h) - p) / d;
            if (t > tmin && t < tmax) ts.push_back(t);
        }
        if (d < 0.0) std::reverse(ts.begin(), ts.end());
    };
    static thread_local std::vector<double> tx, ty, merged;
    crossings(ray.px, ray.dx, tx);
    crossings(ray.py, ray.dy, ty);
    merged.clear();
    merged.push_back(tmin);
    std::merge(tx.begin(), tx.end(), ty.begin(), ty.end(), std::back_inserter(merged));
    merged.push_back(tmax);

    std::uint32_t prev_pix = 0;
    double prev_len = 0.0;
    bool have_prev = false;
    for (std::size_t k = 0; k + 1 < merged.size(); ++k) {
        double len = merged[k + 1] - merged[k];
        if (len <= 1e-14) continue;
        double tm = 0.5 * (merged[k] + merged[k + 1]);
        double mx = ray.px + tm * ray.dx;
        double my = ray.py + tm * ray.dy;
        int ix = std::clamp(static_cast<int>(std::floor((mx + half) / h)), 0, grid_n - 1);
        int iy = std::clamp(static_cast<int>(std::floor((my + half) / h)), 0, grid_n - 1);
        auto pix = static_cast<std::uint32_t>(iy) * grid_n + ix;
        if (have_prev && pix == prev_pix) {
            prev_len += len;
            continue;
        }
        if (have_prev) out.push(prev_pix, prev_len);
        prev_pix = pix;
        prev_len = len;
        have_prev = true;
    }
    if (have_prev) out.push(prev_pix, prev_len);
    out.end_row();
}

inline Ray make_ray(const Geometry& geom, int view, int det) {
    const double pi = 3.14159265358979323846;
    double offset = (det + 0.5) * (geom.detector_width / geom.detectors) -
                    geom.detector_width / 2.0;
    if (geom.mode == ScanMode::parallel) {
        double theta = view * pi / geom.angles;
        double dx = std::cos(theta), dy = std::sin(theta);
        return {-dy * offset, dx * offset, dx, dy};
    }
    double phi = view * 2.0 * pi / geom.angles;
    double sx = geom.source_to_center * std::cos(phi);
    double sy = geom.source_to_center * std::sin(phi);
    // axis from source towards the rotation center, detector tangent left of it
    double ax = -std::cos(phi), ay = -std::sin(phi);
    double ex = sx + geom.source_to_detector * ax - ay * offset;
    double ey = sy + geom.source_to_detector * ay + ax * offset;
    double dx = ex - sx, dy = ey - sy;
    double norm = std::hypot(dx, dy);
    return {sx, sy, dx / norm, dy / norm};
}

}  // namespace detail

// Builds the ray operator on the geometry's own grid, or on an oversampled
// grid_n x grid_n grid covering the same physical domain (used to simulate
// measurements on a finer grid than the reconstruction).
inline RayOperator build_operator(const Geometry& geom, int grid_n = 0) {
    geom.validate();
    if (grid_n == 0) grid_n = geom.n;
    if (grid_n < 1) throw std::invalid_argument("build_operator: grid_n >= 1");
    RowBuilder builder(static_cast<std::size_t>(geom.ray_count()),
                       static_cast<std::size_t>(grid_n) * grid_n);
    for (int v = 0; v < geom.angles; ++v)
        for (int d = 0; d < geom.detectors; ++d)
            detail::trace_ray(detail::make_ray(geom, v, d), grid_n,
                              geom.domain_width, builder);
    return builder.finish();
}

}  // namespace mspotts
