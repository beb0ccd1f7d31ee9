#pragma once

// Independent reference implementations used only by the tests. These are
// deliberately written as direct transcriptions of the defining formulas,
// with no shared code paths with the library.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include <mspotts/ray_operator.hpp>

namespace oracle {

// Brute-force 1D multi-channel Potts: enumerate all 2^(L-1) partitions.
struct Potts1DResult {
    double energy = 0.0;
    std::vector<double> u;  // C x L
};

inline Potts1DResult brute_force_potts_1d(const std::vector<double>& g, int C, int L,
                                          double gamma) {
    Potts1DResult best;
    best.energy = std::numeric_limits<double>::infinity();
    for (unsigned long mask = 0; mask < (1UL << (L - 1)); ++mask) {
        double energy = 0.0;
        std::vector<double> u(g.size());
        int jumps = 0;
        int start = 0;
        for (int i = 0; i < L; ++i) {
            bool boundary = i == L - 1 || (mask >> i) & 1UL;
            if (!boundary) continue;
            if (i != L - 1) ++jumps;
            int len = i - start + 1;
            for (int c = 0; c < C; ++c) {
                double mean = 0.0;
                for (int j = start; j <= i; ++j) mean += g[c * L + j];
                mean /= len;
                for (int j = start; j <= i; ++j) {
                    u[c * L + j] = mean;
                    double d = g[c * L + j] - mean;
                    energy += d * d;
                }
            }
            start = i + 1;
        }
        energy += gamma * jumps;
        if (energy < best.energy - 1e-15) {
            best.energy = energy;
            best.u = u;
        }
    }
    return best;
}

// Dense copy of a sparse operator, read straight from the CSR arrays.
inline Eigen::MatrixXd densify(const mspotts::RayOperator& A) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<long>(A.rows()),
                                              static_cast<long>(A.cols()));
    auto rp = A.row_ptr();
    auto ci = A.col_idx();
    auto v = A.values();
    for (std::size_t i = 0; i < A.rows(); ++i)
        for (std::size_t k = rp[i]; k < rp[i + 1]; ++k)
            M(static_cast<long>(i), ci[k]) = v[k];
    return M;
}

// Sparse operator from a dense matrix (zeros dropped).
inline mspotts::RayOperator sparsify(const Eigen::MatrixXd& M) {
    mspotts::RowBuilder b(static_cast<std::size_t>(M.rows()),
                          static_cast<std::size_t>(M.cols()));
    for (long i = 0; i < M.rows(); ++i) {
        for (long j = 0; j < M.cols(); ++j)
            if (M(i, j) != 0.0) b.push(static_cast<std::uint32_t>(j), M(i, j));
        b.end_row();
    }
    return b.finish();
}

// Dense solve of the Tikhonov-regularized weighted normal equations
// (A^T W A + (mu/2) I) v = A^T W f + (mu/2) z.
inline Eigen::VectorXd dense_tikhonov(const Eigen::MatrixXd& A, const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& f, double mu,
                                      const Eigen::VectorXd& z) {
    Eigen::MatrixXd W = w.asDiagonal();
    Eigen::MatrixXd M = A.transpose() * W * A +
                        (mu / 2.0) * Eigen::MatrixXd::Identity(A.cols(), A.cols());
    Eigen::VectorXd rhs = A.transpose() * W * f + (mu / 2.0) * z;
    return M.ldlt().solve(rhs);
}

// Dense normal matrix of the augmented per-channel system over S stacked
// blocks: blockdiag(A^T W A) plus the mu^2 pairwise coupling.
inline Eigen::MatrixXd dense_augmented_normal(const Eigen::MatrixXd& A,
                                              const Eigen::VectorXd& w, double mu,
                                              int S) {
    const long n = A.cols();
    Eigen::MatrixXd G = A.transpose() * w.asDiagonal() * A;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(S * n, S * n);
    for (int s = 0; s < S; ++s) {
        M.block(s * n, s * n, n, n) =
            G + mu * mu * (S - 1) * Eigen::MatrixXd::Identity(n, n);
        for (int t = 0; t < S; ++t)
            if (t != s)
                M.block(s * n, t * n, n, n) = -mu * mu * Eigen::MatrixXd::Identity(n, n);
    }
    return M;
}

inline Eigen::VectorXd dense_augmented_rhs(const Eigen::MatrixXd& A,
                                           const Eigen::VectorXd& w,
                                           const Eigen::VectorXd& f, int S) {
    const long n = A.cols();
    Eigen::VectorXd atwf = A.transpose() * (w.asDiagonal() * f);
    Eigen::VectorXd rhs(S * n);
    for (int s = 0; s < S; ++s) rhs.segment(s * n, n) = atwf;
    return rhs;
}

// Direct sliding-window structural similarity with reflect-including-edge
// padding, computed window by window.
inline double ssim_direct(const std::vector<double>& a, const std::vector<double>& b,
                          int n) {
    auto reflect = [n](int i) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - i - 1;
        }
        return i;
    };
    std::vector<double> win(121);
    double wsum = 0.0;
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) {
            double dx = x - 5.0, dy = y - 5.0;
            win[y * 11 + x] = std::exp(-(dx * dx + dy * dy) / 4.5);
            wsum += win[y * 11 + x];
        }
    for (double& w : win) w /= wsum;

    double total = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double ma = 0, mb = 0, qa = 0, qb = 0, qab = 0;
            for (int wy = 0; wy < 11; ++wy)
                for (int wx = 0; wx < 11; ++wx) {
                    int py = reflect(y + wy - 5), px = reflect(x + wx - 5);
                    double wv = win[wy * 11 + wx];
                    double va = a[py * n + px], vb = b[py * n + px];
                    ma += wv * va;
                    mb += wv * vb;
                    qa += wv * va * va;
                    qb += wv * vb * vb;
                    qab += wv * va * vb;
                }
            double c1 = 1e-4, c2 = 9e-4;
            total += ((2 * ma * mb + c1) * (2 * (qab - ma * mb) + c2)) /
                     ((ma * ma + mb * mb + c1) *
                      ((qa - ma * ma) + (qb - mb * mb) + c2));
        }
    return total / (static_cast<double>(n) * n);
}

// Random dense matrix with entries in [-1, 1].
inline Eigen::MatrixXd random_matrix(std::mt19937& rng, int rows, int cols) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Eigen::MatrixXd M(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) M(i, j) = dist(rng);
    return M;
}

inline Eigen::VectorXd random_vector(std::mt19937& rng, int n, double lo = -1.0,
                                     double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = dist(rng);
    return v;
}

}  // namespace oracle
