#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "image.hpp"
#include "potts.hpp"
#include "ray_operator.hpp"

namespace mspotts {

struct SolverConfig {
    double gamma = 0.1;        // jump penalty (ADMM / penalty method)
    double rho_c0 = 1e-7;      // rho_k = rho_c0 * k^rho_exponent
    double rho_exponent = 2.01;
    double tol = 1e-5;         // outer stopping tolerance (sup norm)
    double cg_tol = 1e-6;      // inner CG relative residual
    int cg_maxiter = 2000;
    double beta0 = 1.0;        // initial perturbation size
    double annealing = 0.999;  // beta_{k+1} = annealing * beta_k
    double mu0 = 1e-4;         // initial coupling (S-CG family)
    double mu_fixed = 10.0;    // fixed coupling (basic superiorized CG)
    double epsilon = 0.0;      // proximity stopping value (basic superiorized CG)
    double sigma = 0.0;        // Landweber step size; 0 selects it automatically
    DirectionSet directions = DirectionSet::near_isotropic();
    int max_outer = 3000;

    void validate() const {
        if (gamma < 0.0 || rho_c0 <= 0.0 || rho_exponent <= 0.0 || tol <= 0.0 ||
            cg_tol <= 0.0 || cg_maxiter < 1 || beta0 < 0.0 || mu0 <= 0.0 ||
            mu_fixed < 0.0 || sigma < 0.0 || max_outer < 1)
            throw std::invalid_argument("solver config: field out of range");
        if (annealing <= 0.0 || annealing >= 1.0)
            throw std::invalid_argument("solver config: annealing must be in (0,1)");
        if (directions.size() == 0)
            throw std::invalid_argument("solver config: empty direction set");
    }
};

struct TraceRecord {
    int iter = 0;
    double data_dev = 0.0;        // (1/S) sum_{s,c} ||A u_{s,c} - f_c||^2
    double blockwise_potts = 0.0;
    double max_block_dist = 0.0;  // max pairwise ||u_s - u_t||_inf
    double wall_ms = 0.0;
    double v_dist = 0.0;  // max_s ||u_s - v||_inf (splitting methods; not serialized)
};

struct SolverTrace {
    std::vector<TraceRecord> records;
    bool converged = false;

    void save_csv(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open for writing: " + path);
        os << "iter,data_dev,blockwise_potts,max_block_dist,wall_ms\n";
        char buf[192];
        for (const auto& r : records) {
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.iter,
                          r.data_dev, r.blockwise_potts, r.max_block_dist, r.wall_ms);
            os << buf;
        }
    }
};

struct SolveResult {
    MultiImage u;
    SolverTrace trace;
};

struct BlocksResult {
    std::vector<MultiImage> blocks;
    SolverTrace trace;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double sup_dist(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline void check_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x))
            throw std::invalid_argument(std::string("non-finite value in ") + what);
}

class WallClock {
  public:
    WallClock() : start_(std::chrono::steady_clock::now()) {}
    double ms() const {
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

inline double max_pairwise_sup(const std::vector<MultiImage>& blocks) {
    double m = 0.0;
    for (std::size_t s = 0; s < blocks.size(); ++s)
        for (std::size_t t = s + 1; t < blocks.size(); ++t)
            m = std::max(m, sup_dist(blocks[s].data(), blocks[t].data()));
    return m;
}

inline double max_consecutive_sup(const std::vector<MultiImage>& blocks) {
    double m = 0.0;
    for (std::size_t s = 0; s + 1 < blocks.size(); ++s)
        m = std::max(m, sup_dist(blocks[s].data(), blocks[s + 1].data()));
    return m;
}

inline double data_deviation(const RayOperator& A, const std::vector<MultiImage>& blocks,
                             const std::vector<std::vector<double>>& f) {
    double acc = 0.0;
    std::vector<double> y(A.rows());
    for (const auto& u : blocks) {
        for (std::size_t c = 0; c < f.size(); ++c) {
            A.apply(u.channel(static_cast<int>(c)), y);
            for (std::size_t i = 0; i < y.size(); ++i) {
                double d = y[i] - f[c][i];
                acc += d * d;
            }
        }
    }
    return acc / static_cast<double>(blocks.size());
}

}  // namespace detail

// Splits flat m x C row-major data (e.g. Sinogram::logdata) into per-channel
// vectors of length m.
inline std::vector<std::vector<double>> split_channels(std::span<const double> flat,
                                                       int m, int channels) {
    if (flat.size() != static_cast<std::size_t>(m) * channels)
        throw std::invalid_argument("split_channels: size mismatch");
    std::vector<std::vector<double>> out(channels, std::vector<double>(m));
    for (int i = 0; i < m; ++i)
        for (int c = 0; c < channels; ++c)
            out[c][i] = flat[static_cast<std::size_t>(i) * channels + c];
    return out;
}

// ---------------------------------------------------------------------------
// Tikhonov-regularized PWLS, one channel:
//   min_v || W^(1/2)(A v - f) ||^2 + (mu/2) || v - z ||^2
// solved by CG on the normal equations
//   (A^T W A + (mu/2) I) v = A^T W f + (mu/2) z.

struct PwlsSolution {
    std::vector<double> v;
    double residual = 0.0;  // relative to the right-hand side norm
    int iterations = 0;
};

inline PwlsSolution solve_tikhonov_pwls(const RayOperator& A, std::span<const double> w,
                                        std::span<const double> f, double mu,
                                        std::span<const double> z,
                                        std::span<const double> warm_start,
                                        double cg_tol = 1e-6, int cg_maxiter = 2000) {
    if (mu <= 0.0) throw std::invalid_argument("solve_tikhonov_pwls: mu <= 0");
    const std::size_t m = A.rows(), npix = A.cols();
    if (w.size() != m || f.size() != m || z.size() != npix || warm_start.size() != npix)
        throw std::invalid_argument("solve_tikhonov_pwls: shape mismatch");
    detail::check_finite(w, "weights");
    detail::check_finite(f, "data");
    detail::check_finite(z, "target");
    detail::check_finite(warm_start, "warm start");

    const double half_mu = mu / 2.0;
    std::vector<double> tmp(m), gx(npix);
    auto gram = [&](std::span<const double> x, std::vector<double>& out) {
        A.apply(x, tmp);
        for (std::size_t i = 0; i < m; ++i) tmp[i] *= w[i];
        A.apply_adjoint(tmp, out);
        for (std::size_t j = 0; j < npix; ++j) out[j] += half_mu * x[j];
    };

    std::vector<double> rhs(npix);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = w[i] * f[i];
    A.apply_adjoint(tmp, rhs);
    for (std::size_t j = 0; j < npix; ++j) rhs[j] += half_mu * z[j];
    const double rhs_norm = detail::norm2(rhs);

    PwlsSolution sol;
    sol.v.assign(warm_start.begin(), warm_start.end());
    gram(sol.v, gx);
    std::vector<double> r(npix), p(npix), q(npix);
    for (std::size_t j = 0; j < npix; ++j) r[j] = rhs[j] - gx[j];
    p = r;
    double rs = detail::dot(r, r);
    const double stop = cg_tol * (rhs_norm > 0.0 ? rhs_norm : 1.0);
    while (std::sqrt(rs) > stop && sol.iterations < cg_maxiter) {
        gram(p, q);
        double pq = detail::dot(p, q);
        if (pq <= 0.0) break;  // loss of positivity; keep current iterate
        double a = rs / pq;
        for (std::size_t j = 0; j < npix; ++j) {
            sol.v[j] += a * p[j];
            r[j] -= a * q[j];
        }
        double rs_next = detail::dot(r, r);
        double b = rs_next / rs;
        for (std::size_t j = 0; j < npix; ++j) p[j] = r[j] + b * p[j];
        rs = rs_next;
        ++sol.iterations;
    }
    sol.residual = std::sqrt(rs) / (rhs_norm > 0.0 ? rhs_norm : 1.0);
    return sol;
}

// ---------------------------------------------------------------------------
// Single CG step on the normal equations Gram x = rhs of a least squares
// problem (Gram = B^T B, rhs = B^T b):
//   r <- Gram x - rhs
//   alpha = <r,h>/<p,h>;  p <- -r + alpha p;  h <- Gram p
//   kappa = -<r,p>/<p,h>;  x <- x + kappa p
// A fresh state starts with p = -r, h = Gram p and performs only the kappa
// update (a steepest-descent first step). On breakdown (<p,h> = 0 with a
// nonzero residual) the direction is reset to p = -r.

struct CgState {
    std::vector<double> x, p, h;
    bool initialized = false;
};

template <class Gram>
inline void cg_step_generic(const Gram& gram, const std::vector<double>& rhs,
                            CgState& st) {
    const std::size_t n = rhs.size();
    if (st.x.size() != n) throw std::invalid_argument("cg_step: state size mismatch");
    std::vector<double> r = gram(st.x);
    for (std::size_t i = 0; i < n; ++i) r[i] -= rhs[i];
    if (detail::dot(r, r) == 0.0) return;  // already exact

    if (!st.initialized) {
        st.p.resize(n);
        for (std::size_t i = 0; i < n; ++i) st.p[i] = -r[i];
        st.h = gram(st.p);
        st.initialized = true;
    } else {
        double ph = detail::dot(st.p, st.h);
        double alpha = ph != 0.0 ? detail::dot(r, st.h) / ph : 0.0;
        for (std::size_t i = 0; i < n; ++i) st.p[i] = -r[i] + alpha * st.p[i];
        st.h = gram(st.p);
    }

    double ph = detail::dot(st.p, st.h);
    if (ph == 0.0) {  // breakdown: restart from the steepest-descent direction
        for (std::size_t i = 0; i < n; ++i) st.p[i] = -r[i];
        st.h = gram(st.p);
        ph = detail::dot(st.p, st.h);
        if (ph == 0.0)
            throw std::runtime_error("cg_step: breakdown, operator singular along residual");
    }
    double kappa = -detail::dot(r, st.p) / ph;
    for (std::size_t i = 0; i < n; ++i) st.x[i] += kappa * st.p[i];
}

// ---------------------------------------------------------------------------
// Augmented per-channel system over S stacked blocks x = (x_1, ..., x_S):
//   (Gram x)_s = A^T W A x_s + mu^2 * sum_{t != s} (x_s - x_t)
// The coupling is applied directly; the block matrix is never formed.

class AugmentedGram {
  public:
    AugmentedGram(const RayOperator& A, std::span<const double> w, double mu, int S)
        : A_(&A), w_(w), mu_(mu), S_(S) {}

    void set_mu(double mu) { mu_ = mu; }

    std::vector<double> operator()(const std::vector<double>& x) const {
        const std::size_t npix = A_->cols(), m = A_->rows();
        if (x.size() != npix * static_cast<std::size_t>(S_))
            throw std::invalid_argument("augmented gram: size mismatch");
        std::vector<double> out(x.size());
        std::vector<double> tmp(m), block(npix);
        std::vector<double> sum(npix, 0.0);
        for (int s = 0; s < S_; ++s)
            for (std::size_t j = 0; j < npix; ++j) sum[j] += x[s * npix + j];
        const double mu2 = mu_ * mu_;
        for (int s = 0; s < S_; ++s) {
            std::span<const double> xs(x.data() + s * npix, npix);
            A_->apply(xs, tmp);
            for (std::size_t i = 0; i < m; ++i) tmp[i] *= w_[i];
            A_->apply_adjoint(tmp, block);
            for (std::size_t j = 0; j < npix; ++j)
                out[s * npix + j] =
                    block[j] + mu2 * (S_ * xs[j] - sum[j]);
        }
        return out;
    }

  private:
    const RayOperator* A_;
    std::span<const double> w_;
    double mu_;
    int S_;
};

// S stacked copies of A^T W f: the right-hand side of the augmented system.
inline std::vector<double> augmented_rhs(const RayOperator& A, std::span<const double> w,
                                         std::span<const double> f, int S) {
    const std::size_t m = A.rows(), npix = A.cols();
    std::vector<double> tmp(m);
    for (std::size_t i = 0; i < m; ++i) tmp[i] = w[i] * f[i];
    std::vector<double> atwf(npix);
    A.apply_adjoint(tmp, atwf);
    std::vector<double> rhs(npix * static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s)
        for (std::size_t j = 0; j < npix; ++j) rhs[s * npix + j] = atwf[j];
    return rhs;
}

// State initialization of the superiorized CG family: u = p = A^T W f per
// block, h = Gram p at the initial coupling.
inline CgState init_augmented_state(const AugmentedGram& gram,
                                    const std::vector<double>& rhs) {
    CgState st;
    st.x = rhs;
    st.p = rhs;
    st.h = gram(st.p);
    st.initialized = true;
    return st;
}

inline void cg_step_augmented(const AugmentedGram& gram, const std::vector<double>& rhs,
                              CgState& st) {
    cg_step_generic(gram, rhs, st);
}

// ---------------------------------------------------------------------------
// Potts ADMM and the multiplier-free penalty method.

namespace detail {

inline SolveResult potts_admm_impl(const RayOperator& A,
                                   const std::vector<std::vector<double>>& f,
                                   const std::vector<std::vector<double>>& w,
                                   const SolverConfig& cfg, bool use_multipliers) {
    cfg.validate();
    if (cfg.gamma <= 0.0) throw std::invalid_argument("potts_admm: gamma <= 0");
    const int C = static_cast<int>(f.size());
    if (C < 1 || w.size() != f.size())
        throw std::invalid_argument("potts_admm: channel mismatch");
    const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(A.cols()))));
    if (static_cast<std::size_t>(n) * n != A.cols())
        throw std::invalid_argument("potts_admm: operator is not over a square grid");
    const auto& dirs = cfg.directions;
    const int S = static_cast<int>(dirs.size());

    MultiImage v(n, C);
    std::vector<MultiImage> u(S, MultiImage(n, C));
    std::vector<MultiImage> tau(S, MultiImage(n, C));
    // lambda_{s,t} for s < t, stored at index s*S + t.
    std::vector<MultiImage> lambda(static_cast<std::size_t>(S) * S, MultiImage(0, 0));
    for (int s = 0; s < S; ++s)
        for (int t = s + 1; t < S; ++t) lambda[s * S + t] = MultiImage(n, C);

    SolveResult res;
    WallClock clock;
    std::vector<double> z(A.cols());
    // k starts at 1: the coupling schedule rho_k = c0 * k^e vanishes at k = 0,
    // which would leave the v-subproblem unregularized and tau/rho undefined.
    for (int k = 1; k <= cfg.max_outer; ++k) {
        const double rho = cfg.rho_c0 * std::pow(static_cast<double>(k), cfg.rho_exponent);
        const double mu = rho / S;

        for (int c = 0; c < C; ++c) {
            for (std::size_t j = 0; j < z.size(); ++j) {
                double acc = 0.0;
                for (int s = 0; s < S; ++s)
                    acc += u[s].channel(c)[j] - tau[s].channel(c)[j] / rho;
                z[j] = acc / S;
            }
            auto sol = solve_tikhonov_pwls(A, w[c], f[c], mu * S, z, v.channel(c),
                                           cfg.cg_tol, cfg.cg_maxiter);
            std::copy(sol.v.begin(), sol.v.end(), v.channel(c).begin());
        }

        const double denom = rho + mu * (S - 1);
        for (int s = 0; s < S; ++s) {
            MultiImage target(n, C);
            for (int c = 0; c < C; ++c) {
                auto dst = target.channel(c);
                auto vc = v.channel(c);
                auto tc = tau[s].channel(c);
                for (std::size_t j = 0; j < dst.size(); ++j)
                    dst[j] = rho * vc[j] + tc[j];
                for (int t = s + 1; t < S; ++t) {
                    auto ut = u[t].channel(c);
                    auto lst = lambda[s * S + t].channel(c);
                    for (std::size_t j = 0; j < dst.size(); ++j)
                        dst[j] += mu * ut[j] - lst[j];
                }
                for (int r = 0; r < s; ++r) {
                    auto ur = u[r].channel(c);  // already updated this sweep
                    auto lrs = lambda[r * S + s].channel(c);
                    for (std::size_t j = 0; j < dst.size(); ++j)
                        dst[j] += mu * ur[j] + lrs[j];
                }
                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] /= denom;
            }
            u[s] = direction_subproblem(target, dirs.directions[s],
                                        2.0 * cfg.gamma * dirs.weights[s] / denom);
        }

        if (use_multipliers) {
            for (int s = 0; s < S; ++s) {
                for (int t = s + 1; t < S; ++t) {
                    auto& l = lambda[s * S + t].data();
                    const auto& us = u[s].data();
                    const auto& ut = u[t].data();
                    for (std::size_t j = 0; j < l.size(); ++j)
                        l[j] += mu * (us[j] - ut[j]);
                }
                auto& t_ = tau[s].data();
                const auto& us = u[s].data();
                const auto& vd = v.data();
                for (std::size_t j = 0; j < t_.size(); ++j)
                    t_[j] += rho * (vd[j] - us[j]);
            }
        }

        double split_dist = max_consecutive_sup(u);
        double v_dist = 0.0;
        for (int s = 0; s < S; ++s)
            v_dist = std::max(v_dist, sup_dist(u[s].data(), v.data()));
        res.trace.records.push_back({k, data_deviation(A, u, f),
                                     blockwise_potts_value(u, dirs),
                                     max_pairwise_sup(u), clock.ms(), v_dist});
        if (split_dist < cfg.tol && v_dist < cfg.tol) {
            res.trace.converged = true;
            break;
        }
    }

    res.u = MultiImage(n, C);
    for (int s = 0; s < S; ++s)
        for (std::size_t j = 0; j < res.u.data().size(); ++j)
            res.u.data()[j] += u[s].data()[j] / S;
    return res;
}

}  // namespace detail

inline SolveResult potts_admm(const RayOperator& A,
                              const std::vector<std::vector<double>>& f,
                              const std::vector<std::vector<double>>& w,
                              const SolverConfig& cfg) {
    return detail::potts_admm_impl(A, f, w, cfg, true);
}

inline SolveResult penalty_method(const RayOperator& A,
                                  const std::vector<std::vector<double>>& f,
                                  const std::vector<std::vector<double>>& w,
                                  const SolverConfig& cfg) {
    return detail::potts_admm_impl(A, f, w, cfg, false);
}

// ---------------------------------------------------------------------------
// Superiorized CG family. The S blocks are full multi-channel images; the CG
// machinery operates per channel on the stacked block vector, while the Potts
// perturbation couples the channels.

enum class PerturbStrategy { nonascending, proximal };

namespace detail {

// Shared state bridge: block images <-> per-channel stacked vectors.
inline void blocks_to_states(const std::vector<MultiImage>& blocks,
                             std::vector<CgState>& st) {
    const int S = static_cast<int>(blocks.size());
    const int C = blocks[0].channels();
    const std::size_t npix = blocks[0].pixels();
    for (int c = 0; c < C; ++c)
        for (int s = 0; s < S; ++s) {
            auto src = blocks[s].channel(c);
            std::copy(src.begin(), src.end(), st[c].x.begin() + s * npix);
        }
}

inline void states_to_blocks(const std::vector<CgState>& st,
                             std::vector<MultiImage>& blocks) {
    const int S = static_cast<int>(blocks.size());
    const int C = blocks[0].channels();
    const std::size_t npix = blocks[0].pixels();
    for (int c = 0; c < C; ++c)
        for (int s = 0; s < S; ++s) {
            auto dst = blocks[s].channel(c);
            std::copy(st[c].x.begin() + s * npix, st[c].x.begin() + (s + 1) * npix,
                      dst.begin());
        }
}

// Proximity value of the stopping rule: per channel, the weighted residuals
// of every block plus the pairwise coupling deviations at the given mu.
inline double proximity_value(const RayOperator& A,
                              const std::vector<std::vector<double>>& f,
                              const std::vector<std::vector<double>>& w, double mu,
                              const std::vector<MultiImage>& blocks) {
    const int S = static_cast<int>(blocks.size());
    const int C = static_cast<int>(f.size());
    double acc = 0.0;
    std::vector<double> y(A.rows());
    for (int c = 0; c < C; ++c) {
        for (int s = 0; s < S; ++s) {
            A.apply(blocks[s].channel(c), y);
            for (std::size_t i = 0; i < y.size(); ++i) {
                double d = y[i] - f[c][i];
                acc += w[c][i] * d * d;
            }
        }
        for (int s = 0; s < S; ++s)
            for (int t = s + 1; t < S; ++t) {
                auto us = blocks[s].channel(c);
                auto ut = blocks[t].channel(c);
                for (std::size_t j = 0; j < us.size(); ++j) {
                    double d = mu * (us[j] - ut[j]);
                    acc += d * d;
                }
            }
    }
    return acc;
}

struct ScgSetup {
    int n = 0, C = 0, S = 0;
    std::vector<MultiImage> blocks;
    std::vector<CgState> st;              // one per channel
    std::vector<AugmentedGram> gram;      // one per channel
    std::vector<std::vector<double>> rhs; // one per channel
};

inline ScgSetup make_scg_setup(const RayOperator& A,
                               const std::vector<std::vector<double>>& f,
                               const std::vector<std::vector<double>>& w,
                               const SolverConfig& cfg, double mu_init) {
    const int C = static_cast<int>(f.size());
    if (C < 1 || w.size() != f.size())
        throw std::invalid_argument("superiorized cg: channel mismatch");
    const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(A.cols()))));
    if (static_cast<std::size_t>(n) * n != A.cols())
        throw std::invalid_argument("superiorized cg: operator is not over a square grid");
    ScgSetup s;
    s.n = n;
    s.C = C;
    s.S = static_cast<int>(cfg.directions.size());
    s.blocks.assign(s.S, MultiImage(n, C));
    for (int c = 0; c < C; ++c) {
        s.gram.emplace_back(A, std::span<const double>(w[c]), mu_init, s.S);
        s.rhs.push_back(augmented_rhs(A, w[c], f[c], s.S));
        s.st.push_back(init_augmented_state(s.gram.back(), s.rhs.back()));
    }
    states_to_blocks(s.st, s.blocks);
    return s;
}

inline MultiImage block_mean(const std::vector<MultiImage>& blocks) {
    MultiImage out(blocks[0].side(), blocks[0].channels());
    for (const auto& b : blocks)
        for (std::size_t j = 0; j < out.data().size(); ++j)
            out.data()[j] += b.data()[j] / static_cast<double>(blocks.size());
    return out;
}

}  // namespace detail

// Basic superiorized CG at fixed coupling mu_fixed: one augmented CG step per
// channel, then a Potts perturbation, until the proximity value drops below
// epsilon. The nonascending strategy steps along the unit prox direction with
// step beta_k scaled by ||A^T f|| / ||A||^2; the proximal strategy replaces
// the blocks by the prox itself (unscaled).
inline BlocksResult superiorized_cg_basic(const RayOperator& A,
                                          const std::vector<std::vector<double>>& f,
                                          const std::vector<std::vector<double>>& w,
                                          const SolverConfig& cfg,
                                          PerturbStrategy strategy) {
    cfg.validate();
    if (cfg.epsilon <= 0.0)
        throw std::invalid_argument("superiorized_cg_basic: epsilon must be positive");
    const double mu = cfg.mu_fixed;
    auto s = detail::make_scg_setup(A, f, w, cfg, mu);
    const auto& dirs = cfg.directions;

    double scale = 1.0;
    if (strategy == PerturbStrategy::nonascending) {
        double atf_sq = 0.0;
        for (const auto& fc : f) {
            auto atf = A.apply_adjoint(fc);
            atf_sq += detail::dot(atf, atf);
        }
        double norm_sq = A.operator_norm_sq(50);
        if (norm_sq > 0.0) scale = std::sqrt(atf_sq) / norm_sq;
    }

    BlocksResult res;
    detail::WallClock clock;
    double beta = cfg.beta0;
    for (int k = 0; k < cfg.max_outer; ++k) {
        for (int c = 0; c < s.C; ++c) cg_step_augmented(s.gram[c], s.rhs[c], s.st[c]);
        detail::states_to_blocks(s.st, s.blocks);

        double beta_k = strategy == PerturbStrategy::nonascending ? scale * beta : beta;
        if (beta_k > 0.0) {
            if (strategy == PerturbStrategy::proximal) {
                s.blocks = prox_blockwise_potts(s.blocks, beta_k, dirs);
            } else {
                auto [v, delta] = nonascending_direction(s.blocks, beta_k, dirs);
                if (delta > 0.0)
                    for (int b = 0; b < s.S; ++b)
                        for (std::size_t j = 0; j < s.blocks[b].data().size(); ++j)
                            s.blocks[b].data()[j] += beta_k * v[b].data()[j];
            }
            detail::blocks_to_states(s.blocks, s.st);
        }

        double prox_val = detail::proximity_value(A, f, w, mu, s.blocks);
        res.trace.records.push_back({k, prox_val, blockwise_potts_value(s.blocks, dirs),
                                     detail::max_pairwise_sup(s.blocks), clock.ms()});
        beta *= cfg.annealing;
        if (prox_val < cfg.epsilon) {
            res.trace.converged = true;
            break;
        }
    }
    res.blocks = std::move(s.blocks);
    return res;
}

namespace detail {

// Shared loop of Potts S-CG and Potts S-Landweber. The inner step is either a
// CG step or an explicit gradient step on the augmented system at mu_k.
inline SolveResult potts_scg_impl(const RayOperator& A,
                                  const std::vector<std::vector<double>>& f,
                                  const std::vector<std::vector<double>>& w,
                                  const SolverConfig& cfg, bool landweber) {
    cfg.validate();
    if (cfg.beta0 <= 0.0)
        throw std::invalid_argument("potts_scg: beta0 must be positive");
    auto s = make_scg_setup(A, f, w, cfg, cfg.mu0);
    const auto& dirs = cfg.directions;

    double wa_norm_sq = 0.0;
    if (landweber) {
        // ||W^(1/2) A||^2 bound shared by all channels: use the largest
        // channel weight as a diagonal bound.
        double wmax = 0.0;
        for (const auto& wc : w)
            for (double x : wc) wmax = std::max(wmax, x);
        wa_norm_sq = wmax * A.operator_norm_sq(30);
    }

    SolveResult res;
    WallClock clock;
    double beta = cfg.beta0;
    std::vector<MultiImage> post_prox = s.blocks;
    std::vector<MultiImage> prev = s.blocks;
    for (int k = 0; k < cfg.max_outer; ++k) {
        const double mu_k = (cfg.mu0 * cfg.beta0) / beta;

        // Perturb first, then step: the S-CG listing applies the prox to u^k
        // and runs the CG step on the perturbed iterate.
        prev = s.blocks;
        s.blocks = prox_blockwise_potts(s.blocks, beta, dirs);
        post_prox = s.blocks;
        blocks_to_states(s.blocks, s.st);

        for (int c = 0; c < s.C; ++c) {
            s.gram[c].set_mu(mu_k);
            if (!landweber) {
                cg_step_augmented(s.gram[c], s.rhs[c], s.st[c]);
            } else {
                double bound = wa_norm_sq + mu_k * mu_k * s.S;
                double sigma = cfg.sigma > 0.0 ? cfg.sigma : 1.0 / bound;
                if (sigma >= 2.0 / bound)
                    throw std::invalid_argument(
                        "potts_s_landweber: step size too large, iteration would diverge");
                auto g = s.gram[c](s.st[c].x);
                for (std::size_t j = 0; j < g.size(); ++j)
                    s.st[c].x[j] -= sigma * (g[j] - s.rhs[c][j]);
            }
        }
        states_to_blocks(s.st, s.blocks);

        double split_dist = max_consecutive_sup(s.blocks);
        // The blocks start out identical (same initialization), so near-equal
        // blocks alone do not mean convergence; additionally require the
        // outer iterate to have become stationary.
        double change = 0.0;
        for (int b = 0; b < s.S; ++b)
            change = std::max(change, sup_dist(s.blocks[b].data(), prev[b].data()));
        // Trace the perturbed iterate: it is the piecewise-constant estimate
        // the method ultimately returns, so its prior value is meaningful
        // (the raw CG iterate jumps at essentially every pixel pair).
        res.trace.records.push_back({k, data_deviation(A, post_prox, f),
                                     blockwise_potts_value(post_prox, dirs),
                                     max_pairwise_sup(s.blocks), clock.ms()});
        beta *= cfg.annealing;
        if (split_dist < cfg.tol && change < cfg.tol) {
            res.trace.converged = true;
            break;
        }
    }
    // Averaging the post-perturbation blocks mixes the blocks' line-wise
    // partitions, so follow it with one sequential sweep of the direction
    // subproblems at the final perturbation size. Within a homogeneous
    // region the sweep sees identical data line after line and therefore
    // reproduces bit-identical segment values, making the returned image
    // exactly piecewise constant; with a vanishing perturbation the sweep
    // collapses nothing and the average is returned unchanged.
    res.u = block_mean(post_prox);
    if (beta > 0.0)
        for (std::size_t sdir = dirs.size(); sdir-- > 0;)
            res.u = direction_subproblem(res.u, dirs.directions[sdir],
                                         2.0 * beta * dirs.weights[sdir]);
    return res;
}

}  // namespace detail

inline SolveResult potts_scg(const RayOperator& A,
                             const std::vector<std::vector<double>>& f,
                             const std::vector<std::vector<double>>& w,
                             const SolverConfig& cfg) {
    return detail::potts_scg_impl(A, f, w, cfg, false);
}

inline SolveResult potts_s_landweber(const RayOperator& A,
                                     const std::vector<std::vector<double>>& f,
                                     const std::vector<std::vector<double>>& w,
                                     const SolverConfig& cfg) {
    return detail::potts_scg_impl(A, f, w, cfg, true);
}

// Plain channel-wise PWLS by CG on A^T W A u_c = A^T W f_c from zero, stopped
// by relative residual. The unregularized baseline.
inline SolveResult pwls_cg_plain(const RayOperator& A,
                                 const std::vector<std::vector<double>>& f,
                                 const std::vector<std::vector<double>>& w,
                                 const SolverConfig& cfg) {
    cfg.validate();
    const int C = static_cast<int>(f.size());
    const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(A.cols()))));
    if (static_cast<std::size_t>(n) * n != A.cols())
        throw std::invalid_argument("pwls_cg_plain: operator is not over a square grid");
    SolveResult res;
    res.u = MultiImage(n, C);
    res.trace.converged = true;
    detail::WallClock clock;
    std::vector<double> tmp(A.rows());
    double worst_rel = 0.0;
    int worst_it = 0;
    for (int c = 0; c < C; ++c) {
        AugmentedGram gram(A, w[c], 0.0, 1);
        for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = w[c][i] * f[c][i];
        std::vector<double> rhs(A.cols());
        A.apply_adjoint(tmp, rhs);
        double rhs_norm = detail::norm2(rhs);
        CgState st;
        st.x.assign(A.cols(), 0.0);
        int it = 0;
        double rel = 1.0;
        for (; it < cfg.cg_maxiter; ++it) {
            auto g = gram(st.x);
            for (std::size_t j = 0; j < g.size(); ++j) g[j] -= rhs[j];
            rel = detail::norm2(g) / (rhs_norm > 0.0 ? rhs_norm : 1.0);
            if (rel <= cfg.cg_tol) break;
            cg_step_generic(gram, rhs, st);
        }
        worst_rel = std::max(worst_rel, rel);
        worst_it = std::max(worst_it, it);
        if (rel > cfg.cg_tol) res.trace.converged = false;
        std::copy(st.x.begin(), st.x.end(), res.u.channel(c).begin());
    }
    res.trace.records.push_back({worst_it, worst_rel, 0.0, 0.0, clock.ms()});
    return res;
}

}  // namespace mspotts
