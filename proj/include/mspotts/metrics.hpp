#pragma once

#include <cmath>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "image.hpp"

namespace mspotts {

// Root mean square error in percent.
inline double rmse(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("rmse: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.size())) * 100.0;
}

// Mean absolute error in percent.
inline double mae(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("mae: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size()) * 100.0;
}

namespace detail {

// 11x11 Gaussian window, sigma 1.5, normalized to unit sum.
inline const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> win(11 * 11);
        double sum = 0.0;
        for (int y = 0; y < 11; ++y) {
            for (int x = 0; x < 11; ++x) {
                double dx = x - 5, dy = y - 5;
                double v = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
                win[y * 11 + x] = v;
                sum += v;
            }
        }
        for (double& v : win) v /= sum;
        return win;
    }();
    return w;
}

// Symmetric (reflect-including-edge) index into [0, n).
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

}  // namespace detail

// Mean structural similarity over all pixels, one window per pixel with
// symmetric boundary padding. Both inputs are evaluated by the same code
// path, so mssim(u, u) is exactly 1.
inline double mssim(std::span<const double> a, std::span<const double> b, int n) {
    if (a.size() != b.size() || a.size() != static_cast<std::size_t>(n) * n)
        throw std::invalid_argument("mssim: shape mismatch");
    if (n < 11)
        throw std::invalid_argument("mssim: image smaller than the 11x11 window");
    const double c1 = 1e-4, c2 = 9e-4;
    const auto& win = detail::ssim_window();
    double total = 0.0;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
            for (int wy = 0; wy < 11; ++wy) {
                int py = detail::reflect_index(y + wy - 5, n);
                for (int wx = 0; wx < 11; ++wx) {
                    int px = detail::reflect_index(x + wx - 5, n);
                    double w = win[wy * 11 + wx];
                    double va = a[static_cast<std::size_t>(py) * n + px];
                    double vb = b[static_cast<std::size_t>(py) * n + px];
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            double vara = saa - ma * ma;
            double varb = sbb - mb * mb;
            double cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (vara + varb + c2));
        }
    }
    return total / static_cast<double>(static_cast<std::size_t>(n) * n);
}

struct ChannelMetrics {
    double rmse = 0.0;
    double mae = 0.0;
    double mssim = 0.0;
};

struct MetricReport {
    std::vector<ChannelMetrics> channels;

    double mean_rmse() const {
        double s = 0.0;
        for (const auto& c : channels) s += c.rmse;
        return s / static_cast<double>(channels.size());
    }
    double mean_mae() const {
        double s = 0.0;
        for (const auto& c : channels) s += c.mae;
        return s / static_cast<double>(channels.size());
    }
    double mean_mssim() const {
        double s = 0.0;
        for (const auto& c : channels) s += c.mssim;
        return s / static_cast<double>(channels.size());
    }

    void save_csv(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open for writing: " + path);
        os << "channel,rmse,mae,mssim\n";
        char buf[128];
        for (std::size_t c = 0; c < channels.size(); ++c) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", c,
                          channels[c].rmse, channels[c].mae, channels[c].mssim);
            os << buf;
        }
    }
};

inline MetricReport evaluate(const MultiImage& recon, const MultiImage& truth) {
    if (!recon.same_shape(truth))
        throw std::invalid_argument("evaluate: image shapes differ");
    MetricReport report;
    for (int c = 0; c < recon.channels(); ++c) {
        report.channels.push_back({rmse(recon.channel(c), truth.channel(c)),
                                   mae(recon.channel(c), truth.channel(c)),
                                   mssim(recon.channel(c), truth.channel(c),
                                         recon.side())});
    }
    return report;
}

}  // namespace mspotts
